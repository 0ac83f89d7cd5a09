#include "hstmrf/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hstmrf/checkpoint.hpp"
#include "hstmrf/dataset.hpp"
#include "hstmrf/model.hpp"
#include "hstmrf/pnm.hpp"
#include "hstmrf/trainer.hpp"
#include "json.hpp"

namespace hstmrf {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

std::map<std::string, std::vector<SegSample>> load_eval_sets(const RunConfig& cfg) {
  std::map<std::string, std::vector<SegSample>> sets;
  for (const std::string& split : cfg.data.eval_splits)
    sets[split] = load_split(cfg.data.manifest, split, cfg.data.image_size);
  return sets;
}

}  // namespace

int cmd_gen_data(const GenDataArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (a.out.empty()) throw std::invalid_argument("--out is required");
    if (a.size < 16 || a.size % 16 != 0)
      throw std::invalid_argument("size must be divisible by 16 (got " + std::to_string(a.size) + ")");
    write_synthetic_dataset(a.out, a.n, a.size, a.seed);
    out << "wrote " << a.n << " samples (" << a.size << "x" << a.size << ") and "
        << (fs::path(a.out) / "manifest.txt").string() << "\n";
    return 0;
  });
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = load_run_config(a.config);
    if (!a.out.empty()) cfg.output_dir = a.out;
    const auto train_data = load_split(cfg.data.manifest, cfg.data.train_split, cfg.data.image_size);
    const auto eval_sets = load_eval_sets(cfg);
    TrainOptions opts;
    opts.resume = a.resume;
    opts.stop_after = a.stop_after;
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult r = train(cfg, train_data, eval_sets, opts);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "trained to step " << r.steps << " in " << secs << " s; final loss " << r.final_loss << "\n";
    if (!r.eval.empty()) out << format_metrics(r.eval);
    return 0;
  });
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_run_config(a.config);
    HstMrf model(cfg.model, cfg.seed);
    restore(load_checkpoint(a.checkpoint), model.params(), nullptr);
    const auto samples = load_split(cfg.data.manifest, a.split, cfg.data.image_size);
    std::map<std::string, EvalResult> ev;
    ev[a.split] = evaluate_model(model, samples, cfg.data.batch_size);
    out << format_metrics(ev);
    return 0;
  });
}

int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (a.out.empty()) throw std::invalid_argument("--out is required");
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const RunConfig cfg = parse_run_config(ck.config_text, a.checkpoint + " (embedded config)");
    HstMrf model(cfg.model, cfg.seed);
    restore(ck, model.params(), nullptr);

    SegSample s;
    s.id = fs::path(a.image).stem().string();
    s.image = read_pnm(a.image);
    if (s.image.channels == 1) {
      Image rgb(3, s.image.height, s.image.width);
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < s.image.height; ++y)
          for (int64_t x = 0; x < s.image.width; ++x) rgb.at(c, y, x) = s.image.at(0, y, x);
      s.image = rgb;
    }
    s.mask = Image(1, s.image.height, s.image.width);
    if (!a.mask.empty()) {
      ManifestEntry e{a.image, a.mask, "", s.id};
      s.mask = load_sample(e).mask;
    }
    s = resize_sample(s, cfg.data.image_size);
    const Tensor logits = predict_logits(model, {s}, 1)[0];
    const auto lv = logits.to_vector();
    const int64_t n = cfg.data.image_size;
    Image pred(1, n, n);
    std::vector<uint8_t> pm(lv.size()), gm(lv.size());
    int64_t positive = 0;
    for (size_t i = 0; i < lv.size(); ++i) {
      pm[i] = lv[i] >= 0.0 ? 1 : 0;
      gm[i] = s.mask.data[i] > 0.5f ? 1 : 0;
      pred.data[i] = pm[i];
      positive += pm[i];
    }
    const fs::path dir(a.out);
    fs::create_directories(dir / "overlays");
    const fs::path mask_path = dir / (s.id + "_mask.pgm");
    const fs::path overlay_path = dir / "overlays" / (s.id + ".ppm");
    write_pnm(pred, mask_path.string());
    write_pnm(make_overlay(s.image, gm, pm), overlay_path.string());
    ordered_json rec;
    rec["image"] = a.image;
    rec["mask"] = mask_path.string();
    rec["overlay"] = overlay_path.string();
    rec["positive_fraction"] = static_cast<double>(positive) / static_cast<double>(lv.size());
    out << rec.dump() << "\n";
    return 0;
  });
}

std::vector<AblationState> parse_state_list(const std::string& list) {
  if (list == "all") return {all_ablation_states().begin(), all_ablation_states().end()};
  std::vector<AblationState> out;
  std::stringstream ss(list);
  for (std::string name; std::getline(ss, name, ',');) {
    if (name.empty()) continue;
    const AblationState s = parse_ablation_state(name);
    for (AblationState prev : out)
      if (prev == s) throw ConfigError("ablation state '" + name + "' listed twice");
    out.push_back(s);
  }
  if (out.empty()) throw ConfigError("no ablation states given");
  return out;
}

std::set<std::string> model_param_names(const ModelConfig& cfg) {
  HstMrf model(cfg, 0);
  const auto names = model.params().names();
  return {names.begin(), names.end()};
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<AblationState>& states,
                                      std::ostream* echo) {
  const auto train_data = load_split(base.data.manifest, base.data.train_split, base.data.image_size);
  const auto eval_sets = load_eval_sets(base);
  std::vector<AblationRow> rows;
  for (AblationState s : states) {
    RunConfig cfg = apply_ablation(base, s);
    cfg.output_dir = (fs::path(base.output_dir) / "ablation" / std::string(ablation_state_name(s))).string();
    if (echo) *echo << "== " << ablation_state_name(s) << "\n" << std::flush;
    const TrainResult r = train(cfg, train_data, eval_sets);
    AblationRow row;
    row.state = s;
    row.eval = r.eval;
    row.param_names = model_param_names(cfg.model);
    row.param_count = HstMrf(cfg.model, 0).params().count();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  std::vector<std::string> splits;
  if (!rows.empty())
    for (const auto& [split, r] : rows[0].eval) splits.push_back(split);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-10s %10s", "state", "params");
  os << buf;
  for (const auto& sp : splits) {
    std::snprintf(buf, sizeof buf, " %14s %14s", (sp + ":mDice").c_str(), (sp + ":mIoU").c_str());
    os << buf;
  }
  os << "\n";
  for (const AblationRow& row : rows) {
    std::snprintf(buf, sizeof buf, "%-10s %10lld", std::string(ablation_state_name(row.state)).c_str(),
                  static_cast<long long>(row.param_count));
    os << buf;
    for (const auto& sp : splits) {
      const EvalResult& r = row.eval.at(sp);
      std::snprintf(buf, sizeof buf, " %14.4f %14.4f", r.mdice, r.miou);
      os << buf;
    }
    os << "\n";
  }
  for (const AblationRow& row : rows) {
    ordered_json j;
    j["state"] = std::string(ablation_state_name(row.state));
    j["params"] = row.param_count;
    for (const auto& [sp, r] : row.eval)
      j[sp] = {{"mDice", r.mdice}, {"mIoU", r.miou}, {"recall", r.recall}, {"precision", r.precision}};
    os << j.dump() << "\n";
  }
  return os.str();
}

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const std::vector<AblationState> states = parse_state_list(a.states);
    RunConfig base = load_run_config(a.config);
    if (!a.out.empty()) base.output_dir = a.out;
    const auto rows = run_ablation(base, states, &out);
    const std::string table = format_ablation(rows);
    fs::create_directories(base.output_dir);
    std::ofstream f(fs::path(base.output_dir) / "ablation.txt", std::ios::trunc);
    f << table;
    out << table;
    return 0;
  });
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const GradcheckScope scope = parse_gradcheck_scope(a.scope);
    const auto reports = run_gradcheck_suite(scope, a.seed, a.seeds);
    bool ok = true;
    char buf[256];
    for (const GradcheckReport& r : reports) {
      std::snprintf(buf, sizeof buf, "%-4s %-60s max_rel_err=%.3e coords=%zu kinks=%zu\n",
                    r.passed ? "ok" : "FAIL", r.target.c_str(), r.max_rel_error, r.coords_checked,
                    r.kinks_skipped);
      out << buf;
      ok = ok && r.passed;
    }
    out << (ok ? "all " : "FAILED: ") << reports.size() << " targets, tolerance "
        << scope_tolerance(scope) << "\n";
    if (!ok) err << "error: gradient check failed\n";
    return ok ? 0 : 1;
  });
}

}  // namespace hstmrf
