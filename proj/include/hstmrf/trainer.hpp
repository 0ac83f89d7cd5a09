#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "hstmrf/config.hpp"
#include "hstmrf/dataset.hpp"
#include "hstmrf/metrics.hpp"
#include "hstmrf/model.hpp"

namespace hstmrf {

/// Raised when a step produces a non-finite value. The last good checkpoint
/// on disk is left untouched.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::string resume;       // checkpoint to continue from
  bool write_outputs = true;
  int64_t stop_after = 0;   // stop (with a checkpoint) after this step; 0 = run to the end
  std::ostream* echo = nullptr;  // receives a copy of each log line
};

struct TrainResult {
  int64_t steps = 0;
  std::vector<double> losses;  // total loss of each step run in this call
  double final_loss = 0.0;
  std::map<std::string, EvalResult> eval;  // per evaluation split
  std::string last_log_line;
};

/// Sets the OpenMP thread count from `requested`, else HSTMRF_THREADS, else
/// leaves the runtime default. Returns the count in effect.
int configure_threads(int64_t requested);

/// Eval-mode logits for `samples`, one N x 1 x H x W tensor per image.
std::vector<Tensor> predict_logits(HstMrf& model, const std::vector<SegSample>& samples,
                                   int64_t batch_size);
EvalResult evaluate_model(HstMrf& model, const std::vector<SegSample>& samples, int64_t batch_size);

/// Dataset indices used at a 1-based training step.
std::vector<size_t> batch_indices(int64_t step, size_t dataset_size, int64_t batch_size, bool shuffle,
                                  uint64_t seed);

/// Runs the training loop. Under `write_outputs`, writes log.txt,
/// metrics.txt and checkpoints/ below cfg.output_dir.
TrainResult train(const RunConfig& cfg, const std::vector<SegSample>& train_data,
                  const std::map<std::string, std::vector<SegSample>>& eval_sets,
                  const TrainOptions& opts = {});

/// Aligned table plus one JSON record per split.
std::string format_metrics(const std::map<std::string, EvalResult>& eval);

}  // namespace hstmrf
