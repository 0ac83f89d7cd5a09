#include <iostream>

#include "CLI11.hpp"
#include "hstmrf/cli.hpp"

int main(int argc, char** argv) {
  using namespace hstmrf;
  CLI::App app{"hstmrf: dual-receptive-field segmentation network"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "write a synthetic ellipse dataset and manifest");
  g->add_option("--n", gen.n, "number of samples")->check(CLI::PositiveNumber);
  g->add_option("--size", gen.size, "image side length");
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--out", gen.out, "output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model from a config file");
  t->add_option("--config", tr.config)->required();
  t->add_option("--resume", tr.resume, "checkpoint to resume from");
  t->add_option("--out", tr.out, "output directory (overrides the config)");
  t->add_option("--stop-after", tr.stop_after, "save a checkpoint and stop after this step");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
  e->add_option("--config", ev.config)->required();
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--split", ev.split);

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "write a predicted mask and overlay for one image");
  p->add_option("--checkpoint", pr.checkpoint)->required();
  p->add_option("--image", pr.image)->required();
  p->add_option("--mask", pr.mask, "ground-truth mask drawn in the overlay");
  p->add_option("--out", pr.out)->required();

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "train and evaluate ablation states");
  a->add_option("--config", ab.config)->required();
  a->add_option("--states", ab.states, "'all' or a comma-separated list");
  a->add_option("--out", ab.out, "output directory (overrides the config)");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  c->add_option("--scope", gc.scope, "op, block or model");
  c->add_option("--seed", gc.seed);
  c->add_option("--seeds", gc.seeds, "number of seeds for the op scope")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  if (g->parsed()) return cmd_gen_data(gen, std::cout, std::cerr);
  if (t->parsed()) return cmd_train(tr, std::cout, std::cerr);
  if (e->parsed()) return cmd_eval(ev, std::cout, std::cerr);
  if (p->parsed()) return cmd_predict(pr, std::cout, std::cerr);
  if (a->parsed()) return cmd_ablate(ab, std::cout, std::cerr);
  return cmd_gradcheck(gc, std::cout, std::cerr);
}
