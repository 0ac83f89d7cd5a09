#include "hstmrf/trainer.hpp"

#include <omp.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hstmrf/checkpoint.hpp"
#include "hstmrf/losses.hpp"
#include "hstmrf/optim.hpp"
#include "hstmrf/pnm.hpp"
#include "json.hpp"

namespace hstmrf {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

int configure_threads(int64_t requested) {
  int64_t n = requested;
  if (n <= 0)
    if (const char* env = std::getenv("HSTMRF_THREADS")) n = std::atoll(env);
  if (n > 0) omp_set_num_threads(static_cast<int>(n));
  return omp_get_max_threads();
}

std::vector<Tensor> predict_logits(HstMrf& model, const std::vector<SegSample>& samples,
                                   int64_t batch_size) {
  TapeScope no_tape(nullptr);
  const ForwardContext ctx{.training = false};
  std::vector<Tensor> out;
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx;
    for (size_t i = start; i < std::min(samples.size(), start + static_cast<size_t>(batch_size)); ++i)
      idx.push_back(i);
    const Batch b = make_batch(samples, idx, model.params().dtype());
    const Tensor logits = model.forward(b.images, ctx).dec.logits;
    for (size_t k = 0; k < idx.size(); ++k)
      out.push_back(index_select(logits, 0, {static_cast<int64_t>(k)}));
  }
  return out;
}

EvalResult evaluate_model(HstMrf& model, const std::vector<SegSample>& samples, int64_t batch_size) {
  const std::vector<Tensor> logits = predict_logits(model, samples, batch_size);
  std::vector<Confusion> counts;
  for (size_t i = 0; i < samples.size(); ++i)
    counts.push_back(confusion_counts(logits[i], image_to_tensor(samples[i].mask, logits[i].dtype())));
  return evaluate(counts);
}

std::vector<size_t> batch_indices(int64_t step, size_t n, int64_t batch_size, bool shuffle, uint64_t seed) {
  const auto b = static_cast<size_t>(batch_size);
  const size_t per_epoch = (n + b - 1) / b;
  const auto epoch = static_cast<uint64_t>(step - 1) / per_epoch;
  const size_t k = static_cast<size_t>(step - 1) % per_epoch;
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), size_t{0});
  if (shuffle) {
    Rng rng = Rng(seed).split("epoch").split(epoch);
    for (size_t i = n; i-- > 1;)
      std::swap(perm[i], perm[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)))]);
  }
  return {perm.begin() + static_cast<long>(k * b), perm.begin() + static_cast<long>(std::min(n, (k + 1) * b))};
}

std::string format_metrics(const std::map<std::string, EvalResult>& eval) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %8s %8s %8s %8s\n", "split", "mDice", "mIoU", "Rec.", "Pre.");
  os << line;
  for (const auto& [split, r] : eval) {
    std::snprintf(line, sizeof line, "%-12s %8.4f %8.4f %8.4f %8.4f\n", split.c_str(), r.mdice, r.miou,
                  r.recall, r.precision);
    os << line;
  }
  for (const auto& [split, r] : eval) {
    ordered_json j;
    j["split"] = split;
    j["mDice"] = r.mdice;
    j["mIoU"] = r.miou;
    j["recall"] = r.recall;
    j["precision"] = r.precision;
    j["images"] = r.dice.size();
    os << j.dump() << "\n";
  }
  return os.str();
}

namespace {

ordered_json metrics_json(const std::map<std::string, EvalResult>& eval) {
  ordered_json j = ordered_json::object();
  for (const auto& [split, r] : eval)
    j[split] = {{"mDice", r.mdice}, {"mIoU", r.miou}, {"recall", r.recall}, {"precision", r.precision}};
  return j;
}

void write_overlays(HstMrf& model, const std::map<std::string, std::vector<SegSample>>& eval_sets,
                    int64_t batch_size, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [split, samples] : eval_sets) {
    const std::vector<Tensor> logits = predict_logits(model, samples, batch_size);
    for (size_t i = 0; i < samples.size(); ++i) {
      const auto lv = logits[i].to_vector();
      std::vector<uint8_t> gt(lv.size()), pred(lv.size());
      for (size_t k = 0; k < lv.size(); ++k) {
        pred[k] = lv[k] >= 0.0 ? 1 : 0;
        gt[k] = samples[i].mask.data[k] > 0.5f ? 1 : 0;
      }
      write_pnm(make_overlay(samples[i].image, gt, pred), (dir / (split + "_" + samples[i].id + ".ppm")).string());
    }
  }
}

}  // namespace

TrainResult train(const RunConfig& cfg, const std::vector<SegSample>& train_data,
                  const std::map<std::string, std::vector<SegSample>>& eval_sets, const TrainOptions& opts) {
  cfg.validate();
  if (train_data.empty()) throw DataError("train: empty training set");
  configure_threads(cfg.threads);
  HstMrf model(cfg.model, cfg.seed);
  ParamStore& params = model.params();
  AdamW opt(params.parameters(), cfg.optim);
  const std::string config_text = to_json_text(cfg);

  const fs::path out_dir(cfg.output_dir);
  const fs::path ckpt_dir = out_dir / "checkpoints";
  if (opts.write_outputs) {
    std::error_code ec;
    fs::create_directories(ckpt_dir, ec);
    if (ec) throw DataError("cannot create output directory '" + ckpt_dir.string() + "': " + ec.message());
  }

  int64_t start = 0;
  if (!opts.resume.empty()) {
    const Checkpoint ck = load_checkpoint(opts.resume);
    restore(ck, params, &opt);
    start = static_cast<int64_t>(ck.step);
    if (start > cfg.schedule.total_steps)
      throw CheckpointError("checkpoint step " + std::to_string(start) + " exceeds total_steps");
  }

  std::ofstream log;
  if (opts.write_outputs) {
    log.open(out_dir / "log.txt", opts.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw DataError("cannot write '" + (out_dir / "log.txt").string() + "'");
  }
  TrainResult result;
  const auto emit = [&](const ordered_json& rec) {
    result.last_log_line = rec.dump();
    if (log.is_open()) log << result.last_log_line << "\n" << std::flush;
    if (opts.echo) *opts.echo << result.last_log_line << "\n" << std::flush;
  };
  const auto save = [&](int64_t step, bool final_ckpt) {
    if (!opts.write_outputs) return;
    const Checkpoint ck = capture(params, &opt, static_cast<uint64_t>(step), cfg.seed, config_text);
    char name[32];
    std::snprintf(name, sizeof name, "step_%06lld.bin", static_cast<long long>(step));
    save_checkpoint((ckpt_dir / name).string(), ck);
    save_checkpoint((ckpt_dir / "last.bin").string(), ck);
    if (final_ckpt) save_checkpoint((ckpt_dir / "final.bin").string(), ck);
  };
  const auto run_eval = [&]() {
    std::map<std::string, EvalResult> ev;
    for (const auto& [split, samples] : eval_sets) ev[split] = evaluate_model(model, samples, cfg.data.batch_size);
    return ev;
  };

  const int64_t total = cfg.schedule.total_steps;
  int64_t step = start;
  bool stopped_early = false;
  while (step < total) {
    ++step;
    std::vector<size_t> idx =
        batch_indices(step, train_data.size(), cfg.data.batch_size, cfg.data.shuffle, cfg.seed);
    Batch batch;
    if (cfg.data.augment_flip || cfg.data.augment_rotate) {
      std::vector<SegSample> aug;
      for (size_t i : idx) {
        Rng rng = Rng(cfg.seed).split("augment").split(static_cast<uint64_t>(step)).split(i);
        aug.push_back(augment(train_data[i], rng, cfg.data.augment_flip, cfg.data.augment_rotate));
      }
      std::vector<size_t> all(aug.size());
      std::iota(all.begin(), all.end(), size_t{0});
      batch = make_batch(aug, all);
    } else {
      batch = make_batch(train_data, idx);
    }

    const double lr = lr_at(step, cfg.schedule);
    TotalLoss tl;
    try {
      params.zero_grad();
      Tape tape;
      TapeScope scope(&tape);
      const ForwardContext ctx{.training = true, .seed = cfg.seed, .step = step};
      const ModelOutput out = model.forward(batch.images, ctx);
      tl = total_loss(out.dec.logits, out.dec.aux1, out.dec.aux3, batch.masks, cfg.loss);
      tape.backward(tl.total);
      if (cfg.optim.grad_clip > 0) opt.clip_grad_norm(cfg.optim.grad_clip);
      opt.step(lr);
    } catch (const NumericError& e) {
      ordered_json rec;
      rec["event"] = "abort";
      rec["step"] = step;
      rec["error"] = e.what();
      emit(rec);
      throw TrainingAborted("training aborted at step " + std::to_string(step) + ": " + e.what() +
                            " (last good checkpoint kept)");
    }
    const double loss = tl.total.item();
    result.losses.push_back(loss);
    result.final_loss = loss;

    if (step % cfg.log_every == 0 || step == total) {
      ordered_json rec;
      rec["step"] = step;
      rec["lr"] = lr;
      rec["loss"] = loss;
      rec["final"] = tl.final_head.total.item();
      rec["aux1"] = tl.aux1.total.item();
      rec["aux3"] = tl.aux3.total.item();
      rec["wiou"] = tl.final_head.wiou.item();
      rec["wbce"] = tl.final_head.wbce.item();
      rec["tversky"] = tl.final_head.tversky.item();
      emit(rec);
    }
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != total) {
      ordered_json rec;
      rec["step"] = step;
      rec["eval"] = metrics_json(run_eval());
      emit(rec);
    }
    if (opts.stop_after > 0 && step == opts.stop_after && step != total) {
      save(step, false);
      stopped_early = true;
      break;
    }
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != total) save(step, false);
  }
  result.steps = step;
  if (stopped_early) return result;

  save(step, true);
  result.eval = run_eval();
  ordered_json rec;
  rec["event"] = "final";
  rec["step"] = step;
  rec["loss"] = result.final_loss;
  rec["eval"] = metrics_json(result.eval);
  emit(rec);
  if (opts.write_outputs) {
    std::ofstream m(out_dir / "metrics.txt", std::ios::trunc);
    m << format_metrics(result.eval);
    write_overlays(model, eval_sets, cfg.data.batch_size, out_dir / "overlays");
  }
  return result;
}

}  // namespace hstmrf
