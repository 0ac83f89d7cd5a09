#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hstmrf {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The seven model variants compared in the ablation harness.
enum class AblationState { full, no_ape, no_hst, no_mbp, no_sca, maxavg_ca, one_rf };

const std::array<AblationState, 7>& all_ablation_states();
std::string_view ablation_state_name(AblationState state);
/// Throws ConfigError listing the valid names.
AblationState parse_ablation_state(std::string_view name);

struct AblationFlags {
  bool no_ape = false;     // flatten patches instead of SoftPool embedding
  bool no_hst = false;     // independent per-branch Swin blocks
  bool no_mbp = false;     // plain concatenation skip instead of Hadamard fusion
  bool no_sca = false;     // no channel attention
  bool maxavg_ca = false;  // max + average pooled channel attention
  bool one_rf = false;     // single receptive field (branch 1 only)
};

AblationFlags flags_for(AblationState state);

struct ModelConfig {
  int64_t channels = 8;     // C
  int64_t heads = 4;        // n_h
  int64_t hidden_dim = 16;  // d, attention width per branch
  int64_t patch_size = 2;   // S
  int64_t window = 4;
  int64_t blocks_per_stage = 2;
  int64_t mlp_ratio = 4;
  double dropout = 0.5;
  bool relative_position_bias = false;
  AblationFlags ablation;

  void validate() const;
  /// Checks H, W against stage divisibility and window tiling.
  void validate_input(int64_t height, int64_t width) const;
  int64_t head_dim() const { return hidden_dim / heads; }
};

struct LossWeights {
  double a = 0.6;  // final head
  double b = 0.2;  // decoder stage 1 head
  double c = 0.2;  // decoder stage 3 head
  double eta = 0.7;    // Tversky false-positive weight
  double gamma = 0.3;  // Tversky false-negative weight
  double boundary_gain = 5.0;
  int64_t pool_k = 7;

  void validate() const;
};

struct Schedule {
  int64_t warmup_steps = 15;
  int64_t total_steps = 300;
  double lr_max = 1e-4;
  double lr_min = 1e-6;

  void validate() const;
};

struct OptimConfig {
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
};

struct DataConfig {
  std::string manifest;
  std::string train_split = "train";
  std::vector<std::string> eval_splits{"train"};
  int64_t image_size = 64;
  int64_t batch_size = 8;
  bool shuffle = false;
  bool augment_flip = false;
  bool augment_rotate = false;
};

struct RunConfig {
  ModelConfig model;
  std::string ablation = "full";
  LossWeights loss;
  Schedule schedule;
  OptimConfig optim;
  DataConfig data;
  uint64_t seed = 1;
  std::string output_dir = "run";
  int64_t log_every = 1;
  int64_t eval_every = 0;        // 0 = only at the end
  int64_t checkpoint_every = 0;  // 0 = only at the end
  int64_t threads = 0;           // 0 = HSTMRF_THREADS or runtime default

  void validate() const;
};

/// Parses the JSON run configuration. Unknown keys and type errors are
/// rejected with the offending key and its line number.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::string& path);
/// Canonical JSON text; parse_run_config(to_json_text(c)) == c.
std::string to_json_text(const RunConfig& config);
/// Returns `base` rewritten to the given ablation state.
RunConfig apply_ablation(const RunConfig& base, AblationState state);

}  // namespace hstmrf
