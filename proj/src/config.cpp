#include "hstmrf/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace hstmrf {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::array<AblationState, 7> kStates = {
    AblationState::no_ape, AblationState::no_hst,    AblationState::no_mbp, AblationState::no_sca,
    AblationState::maxavg_ca, AblationState::one_rf, AblationState::full};

}  // namespace

const std::array<AblationState, 7>& all_ablation_states() { return kStates; }

std::string_view ablation_state_name(AblationState state) {
  switch (state) {
    case AblationState::full: return "full";
    case AblationState::no_ape: return "no_ape";
    case AblationState::no_hst: return "no_hst";
    case AblationState::no_mbp: return "no_mbp";
    case AblationState::no_sca: return "no_sca";
    case AblationState::maxavg_ca: return "maxavg_ca";
    case AblationState::one_rf: return "one_rf";
  }
  return "?";
}

AblationState parse_ablation_state(std::string_view name) {
  for (AblationState s : kStates)
    if (ablation_state_name(s) == name) return s;
  std::string valid;
  for (AblationState s : kStates) valid += (valid.empty() ? "" : ", ") + std::string(ablation_state_name(s));
  throw ConfigError("unknown ablation state '" + std::string(name) + "'; valid states: " + valid);
}

AblationFlags flags_for(AblationState state) {
  AblationFlags f;
  switch (state) {
    case AblationState::full: break;
    case AblationState::no_ape: f.no_ape = true; break;
    case AblationState::no_hst: f.no_hst = true; break;
    case AblationState::no_mbp: f.no_mbp = true; break;
    case AblationState::no_sca: f.no_sca = true; break;
    case AblationState::maxavg_ca: f.maxavg_ca = true; break;
    case AblationState::one_rf: f.one_rf = true; break;
  }
  return f;
}

void ModelConfig::validate() const {
  if (channels < 1) throw ConfigError("model.channels must be >= 1");
  if (heads < 1 || hidden_dim < 1) throw ConfigError("model.heads and model.hidden_dim must be >= 1");
  if (hidden_dim % heads != 0)
    throw ConfigError("model.hidden_dim (" + std::to_string(hidden_dim) +
                      ") must be divisible by model.heads (" + std::to_string(heads) + ")");
  if (patch_size != 2) throw ConfigError("model.patch_size is fixed at 2");
  if (window < 1) throw ConfigError("model.window must be >= 1");
  if (blocks_per_stage < 1) throw ConfigError("model.blocks_per_stage must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("model.mlp_ratio must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model.dropout must lie in [0, 1)");
  if (ablation.no_sca && ablation.maxavg_ca)
    throw ConfigError("ablation flags no_sca and maxavg_ca both redefine channel attention");
  if (ablation.no_hst && ablation.one_rf)
    throw ConfigError("ablation flags no_hst and one_rf both redefine the encoder branches");
}

void ModelConfig::validate_input(int64_t height, int64_t width) const {
  if (height % 16 != 0 || width % 16 != 0)
    throw ConfigError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be divisible by 16");
  // Attended grids are H/4, H/8, H/16; the deepest must tile into windows.
  for (int stage = 3; stage <= 5; ++stage) {
    const int64_t f = int64_t{1} << (stage - 1);
    if ((height / f) % window != 0 || (width / f) % window != 0)
      throw ConfigError("stage " + std::to_string(stage) + ": window " + std::to_string(window) +
                        " does not divide the " + std::to_string(height / f) + "x" +
                        std::to_string(width / f) + " token grid");
  }
}

void LossWeights::validate() const {
  if (a < 0 || b < 0 || c < 0 || eta < 0 || gamma < 0 || boundary_gain < 0)
    throw ConfigError("loss weights must be nonnegative");
  if (std::abs(a + b + c - 1.0) > 1e-9) throw ConfigError("loss weights a + b + c must equal 1");
  if (std::abs(eta + gamma - 1.0) > 1e-9) throw ConfigError("loss eta + gamma must equal 1");
  if (pool_k < 1 || pool_k % 2 == 0) throw ConfigError("loss.pool_k must be a positive odd size");
}

void Schedule::validate() const {
  if (total_steps < 1) throw ConfigError("schedule.total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps >= total_steps)
    throw ConfigError("schedule.warmup_steps must satisfy 0 <= warmup < total_steps");
  if (lr_max < 0 || lr_min < 0) throw ConfigError("learning rates must be nonnegative");
}

void RunConfig::validate() const {
  model.validate();
  parse_ablation_state(ablation);
  loss.validate();
  schedule.validate();
  model.validate_input(data.image_size, data.image_size);
  if (data.batch_size < 1) throw ConfigError("data.batch_size must be >= 1");
  if (optim.grad_clip < 0) throw ConfigError("optim.grad_clip must be >= 0");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (eval_every < 0 || checkpoint_every < 0 || threads < 0)
    throw ConfigError("eval_every, checkpoint_every and threads must be >= 0");
}

namespace {

int line_of(const std::string& text, const std::string& key) {
  const auto pos = text.find("\"" + key + "\"");
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

// Typed field access over one JSON object that remembers which keys were read.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path, const std::string& text,
               const std::string& source)
      : obj_(obj), path_(std::move(path)), text_(text), source_(source) {
    if (!obj_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    const std::string name = qualified(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) fail(key, name + " must be a boolean");
      out = it->template get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) fail(key, name + " must be a string");
      out = it->template get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      if (!it->is_array()) fail(key, name + " must be an array of strings");
      out.clear();
      for (const auto& v : *it) {
        if (!v.is_string()) fail(key, name + " must be an array of strings");
        out.push_back(v.template get<std::string>());
      }
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) fail(key, name + " must be an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (it->is_number_unsigned())
          out = it->template get<T>();
        else if (it->template get<int64_t>() < 0)
          fail(key, name + " must be nonnegative");
        else
          out = static_cast<T>(it->template get<int64_t>());
      } else {
        out = it->template get<T>();
      }
    } else {
      if (!it->is_number()) fail(key, name + " must be a number");
      out = it->template get<T>();
    }
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  ObjectReader child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    auto it = obj_.find(key);
    return ObjectReader(it == obj_.end() ? empty : *it, qualified(key), text_, source_);
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) fail(it.key(), "unknown key '" + qualified(it.key()) + "'");
  }

 private:
  std::string qualified(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const int line = line_of(text_, key);
    throw ConfigError(source_ + (line > 0 ? ":" + std::to_string(line) : "") + ": " + msg);
  }

  const json& obj_;
  std::string path_;
  const std::string& text_;
  const std::string& source_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  RunConfig c;
  ObjectReader r(root, "", text, source);

  {
    ObjectReader m = r.child("model");
    m.read("channels", c.model.channels);
    m.read("heads", c.model.heads);
    m.read("hidden_dim", c.model.hidden_dim);
    m.read("patch_size", c.model.patch_size);
    m.read("window", c.model.window);
    m.read("blocks_per_stage", c.model.blocks_per_stage);
    m.read("mlp_ratio", c.model.mlp_ratio);
    m.read("dropout", c.model.dropout);
    m.read("relative_position_bias", c.model.relative_position_bias);
    m.finish();
  }
  r.read("ablation", c.ablation);
  {
    ObjectReader l = r.child("loss");
    l.read("a", c.loss.a);
    l.read("b", c.loss.b);
    l.read("c", c.loss.c);
    l.read("eta", c.loss.eta);
    l.read("gamma", c.loss.gamma);
    l.read("boundary_gain", c.loss.boundary_gain);
    l.read("pool_k", c.loss.pool_k);
    l.finish();
  }
  {
    ObjectReader s = r.child("schedule");
    s.read("total_steps", c.schedule.total_steps);
    c.schedule.warmup_steps = c.schedule.total_steps * 5 / 100;
    s.read("warmup_steps", c.schedule.warmup_steps);
    s.read("lr_max", c.schedule.lr_max);
    s.read("lr_min", c.schedule.lr_min);
    s.finish();
  }
  {
    ObjectReader o = r.child("optim");
    o.read("weight_decay", c.optim.weight_decay);
    o.read("beta1", c.optim.beta1);
    o.read("beta2", c.optim.beta2);
    o.read("eps", c.optim.eps);
    o.read("grad_clip", c.optim.grad_clip);
    o.finish();
  }
  {
    ObjectReader d = r.child("data");
    d.read("manifest", c.data.manifest);
    d.read("train_split", c.data.train_split);
    d.read("eval_splits", c.data.eval_splits);
    d.read("image_size", c.data.image_size);
    d.read("batch_size", c.data.batch_size);
    d.read("shuffle", c.data.shuffle);
    d.read("augment_flip", c.data.augment_flip);
    d.read("augment_rotate", c.data.augment_rotate);
    d.finish();
  }
  r.read("seed", c.seed);
  r.read("output_dir", c.output_dir);
  r.read("log_every", c.log_every);
  r.read("eval_every", c.eval_every);
  r.read("checkpoint_every", c.checkpoint_every);
  r.read("threads", c.threads);
  r.finish();

  try {
    c.model.ablation = flags_for(parse_ablation_state(c.ablation));
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

std::string to_json_text(const RunConfig& c) {
  ordered_json j;
  j["model"] = {{"channels", c.model.channels},
                {"heads", c.model.heads},
                {"hidden_dim", c.model.hidden_dim},
                {"patch_size", c.model.patch_size},
                {"window", c.model.window},
                {"blocks_per_stage", c.model.blocks_per_stage},
                {"mlp_ratio", c.model.mlp_ratio},
                {"dropout", c.model.dropout},
                {"relative_position_bias", c.model.relative_position_bias}};
  j["ablation"] = c.ablation;
  j["loss"] = {{"a", c.loss.a},         {"b", c.loss.b},
               {"c", c.loss.c},         {"eta", c.loss.eta},
               {"gamma", c.loss.gamma}, {"boundary_gain", c.loss.boundary_gain},
               {"pool_k", c.loss.pool_k}};
  j["schedule"] = {{"total_steps", c.schedule.total_steps},
                   {"warmup_steps", c.schedule.warmup_steps},
                   {"lr_max", c.schedule.lr_max},
                   {"lr_min", c.schedule.lr_min}};
  j["optim"] = {{"weight_decay", c.optim.weight_decay},
                {"beta1", c.optim.beta1},
                {"beta2", c.optim.beta2},
                {"eps", c.optim.eps},
                {"grad_clip", c.optim.grad_clip}};
  j["data"] = {{"manifest", c.data.manifest},
               {"train_split", c.data.train_split},
               {"eval_splits", c.data.eval_splits},
               {"image_size", c.data.image_size},
               {"batch_size", c.data.batch_size},
               {"shuffle", c.data.shuffle},
               {"augment_flip", c.data.augment_flip},
               {"augment_rotate", c.data.augment_rotate}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["log_every"] = c.log_every;
  j["eval_every"] = c.eval_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["threads"] = c.threads;
  return j.dump(2) + "\n";
}

RunConfig apply_ablation(const RunConfig& base, AblationState state) {
  RunConfig c = base;
  c.ablation = std::string(ablation_state_name(state));
  c.model.ablation = flags_for(state);
  return c;
}

}  // namespace hstmrf
