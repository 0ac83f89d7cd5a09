#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "hstmrf/config.hpp"
#include "hstmrf/gradcheck_suite.hpp"
#include "hstmrf/metrics.hpp"

namespace hstmrf {

// Each command returns the process exit code: 0 on success, 1 when an error
// record was printed to `err`.

struct GenDataArgs {
  int64_t n = 8;
  int64_t size = 64;
  uint64_t seed = 1;
  std::string out;
};
int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err);

struct TrainArgs {
  std::string config;
  std::string resume;
  std::string out;  // overrides output_dir when set
  int64_t stop_after = 0;
};
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::string split = "train";
};
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

struct PredictArgs {
  std::string checkpoint;
  std::string image;
  std::string mask;  // optional ground truth for the overlay
  std::string out;
};
int cmd_predict(const PredictArgs& args, std::ostream& out, std::ostream& err);

struct AblateArgs {
  std::string config;
  std::string states = "all";
  std::string out;  // overrides output_dir when set
};
int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err);

struct GradcheckArgs {
  std::string scope = "op";
  uint64_t seed = 1;
  int seeds = 5;
};
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);

/// "all" or a comma-separated list of state names.
std::vector<AblationState> parse_state_list(const std::string& list);

struct AblationRow {
  AblationState state;
  std::map<std::string, EvalResult> eval;
  std::set<std::string> param_names;
  int64_t param_count = 0;
};

/// Trains and evaluates each state from the same base config and seed. Runs
/// write under <output_dir>/ablation/<state>/.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<AblationState>& states,
                                      std::ostream* echo = nullptr);
std::string format_ablation(const std::vector<AblationRow>& rows);

/// Parameter names of a freshly built model for `cfg`.
std::set<std::string> model_param_names(const ModelConfig& cfg);

}  // namespace hstmrf
