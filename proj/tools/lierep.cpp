#include <iostream>

#include "CLI11.hpp"
#include "lierep/cli.hpp"

int main(int argc, char** argv) {
  using namespace lierep::cli;
  CLI::App app{"Learn Lie algebra representations, verify them and train SpacetimeNet"};
  app.require_subcommand(1);

  LearnOptions learn;
  auto* l = app.add_subcommand("learn", "find generators satisfying an algebra's brackets");
  l->add_option("--algebra", learn.algebra, "so3, so21, so31 or a JSON file")->capture_default_str();
  l->add_option("--dim", learn.dim, "representation dimension")->capture_default_str();
  l->add_option("--seed", learn.seed)->capture_default_str();
  l->add_option("--max-restarts", learn.max_restarts, "number of random starts")->capture_default_str();
  l->add_option("--max-iterations", learn.max_iterations, "Adam steps per start")->capture_default_str();
  l->add_option("--field", learn.field, "real or complex")->capture_default_str();
  l->add_option("--out", learn.out, "rep JSON")->capture_default_str();
  l->add_option("--trace-out", learn.trace_out, "loss trace JSON (default <out>.trace.json)");
  l->add_option("--trace-stride", learn.trace_stride, "keep every n-th iteration")->capture_default_str();
  l->add_flag("!--no-verify", learn.verify, "accept reducible results");
  l->add_option("--threads", learn.threads, "parallel starts (0 = all cores)")->capture_default_str();
  l->add_flag("--serial", learn.serial, "force one thread");

  VerifyCliOptions verify;
  auto* v = app.add_subcommand("verify", "tensor-product structure and Schur test of a rep");
  v->add_option("--rep", verify.rep, "rep JSON")->required();
  v->add_option("--against", verify.against, "'analytic' or candidate rep files")->capture_default_str();
  v->add_option("--out", verify.out, "report JSON")->capture_default_str();
  v->add_option("--seed", verify.seed)->capture_default_str();
  v->add_option("--samples", verify.samples, "group elements per CG system")->capture_default_str();

  GenDataOptions gen;
  auto* g = app.add_subcommand("gen-data", "sample MNIST-Live point clouds");
  g->add_option("--images", gen.images, "IDX image file")->required();
  g->add_option("--labels", gen.labels, "IDX label file")->required();
  g->add_option("--train-out", gen.train_out)->capture_default_str();
  g->add_option("--dev-out", gen.dev_out)->capture_default_str();
  g->add_option("--spatial-dims", gen.spatial_dims)->check(CLI::IsMember({2, 3}))->capture_default_str();
  g->add_option("--train-count", gen.train_count)->capture_default_str();
  g->add_option("--dev-count", gen.dev_count)->capture_default_str();
  g->add_option("--classes", gen.classes, "digits, label = position")->delimiter(',')->capture_default_str();
  g->add_option("--eval-velocity-max", gen.eval_velocity_max)->capture_default_str();
  g->add_option("--reuse", gen.reuse, "train clouds per source image")->capture_default_str();
  g->add_flag("!--no-jitter", gen.jitter, "pixel centers without sub-pixel offsets");
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--threads", gen.threads)->capture_default_str();
  g->add_flag("--serial", gen.serial);

  TrainCliOptions tr;
  auto* t = app.add_subcommand("train", "train SpacetimeNet on .stc clouds");
  t->add_option("--train", tr.train, "train .stc")->required();
  t->add_option("--dev", tr.dev, "dev .stc");
  t->add_option("--out", tr.out, "checkpoint JSON")->capture_default_str();
  t->add_option("--metrics-out", tr.metrics_out, "CSV step,train_loss,train_acc,dev_acc")->capture_default_str();
  t->add_option("--rep", tr.rep, "learned rep JSON to embed coordinates in");
  t->add_option("--spatial-dims", tr.spatial_dims, "must match the data when given");
  t->add_option("--layers", tr.layers)->capture_default_str();
  t->add_option("--channels", tr.channels)->capture_default_str();
  t->add_option("--batch", tr.batch)->capture_default_str();
  t->add_option("--lr", tr.lr)->capture_default_str();
  t->add_option("--epochs", tr.epochs)->capture_default_str();
  t->add_option("--max-steps", tr.max_steps, "-1 for no cap")->capture_default_str();
  t->add_option("--eval-every", tr.eval_every, "0 = once per epoch")->capture_default_str();
  t->add_option("--seed", tr.seed)->capture_default_str();
  t->add_flag("!--no-calibrate", tr.calibrate, "skip the data-dependent weight rescaling");
  t->add_option("--calibration-clouds", tr.calibration_clouds)->capture_default_str();
  t->add_option("--threads", tr.threads)->capture_default_str();
  t->add_flag("--serial", tr.serial);

  EvalCliOptions ev;
  auto* e = app.add_subcommand("eval", "accuracy of a checkpoint on .stc clouds");
  e->add_option("--weights", ev.weights, "checkpoint JSON")->required();
  e->add_option("--data", ev.data, ".stc clouds")->required();
  e->add_option("--predictions-out", ev.predictions_out, "per-cloud CSV");
  e->add_option("--boost", ev.boost, "velocity, e.g. 0.3,0")->delimiter(',');
  e->add_option("--drift-tolerance", ev.drift_tolerance)->capture_default_str();
  e->add_option("--threads", ev.threads)->capture_default_str();
  e->add_flag("--serial", ev.serial);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  if (l->parsed()) return cmd_learn(learn, std::cerr);
  if (v->parsed()) return cmd_verify(verify, std::cerr);
  if (g->parsed()) return cmd_gen_data(gen, std::cerr);
  if (t->parsed()) return cmd_train(tr, std::cerr);
  if (e->parsed()) return cmd_eval(ev, std::cout, std::cerr);
  return kUsage;
}
