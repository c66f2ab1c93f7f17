// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any hard criterion fails; the MNIST criterion only reports.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "lierep/cli.hpp"
#include "test_util.hpp"

using namespace lierep;
using lierep::testing::random_coefficients;
using lierep::testing::random_matrix;
using lierep::testing::rel_diff;
using lierep::testing::TempDir;

namespace {

struct Result {
  bool pass = true;
  std::ostringstream detail;

  void fail(const std::string& why) {
    pass = false;
    detail << " FAIL[" << why << "]";
  }
};

const std::uint64_t kSeeds[] = {0, 1000, 2000};

struct LearnCase {
  const char* algebra;
  int dim;
  const char* expected_match;
};
const LearnCase kLearnCases[] = {{"so3", 3, "1"}, {"so21", 3, "1"}, {"so31", 4, "(1/2,1/2)"}};

Json without_volatile(Json j) {
  if (j.is_object()) {
    j.erase("timestamp");
    j.erase("wall_clock_seconds");
    for (auto& [k, v] : j.items()) v = without_volatile(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = without_volatile(v);
  }
  return j;
}

double as_number(const Json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------- 1 and 2

void learn_and_verify(const TempDir& dir, Result& c1, Result& c2) {
  for (const auto& lc : kLearnCases)
    for (auto seed : kSeeds) {
      const std::string tag = std::string(lc.algebra) + "/" + std::to_string(seed);
      cli::LearnOptions lo;
      lo.algebra = lc.algebra;
      lo.dim = lc.dim;
      lo.seed = seed;
      lo.max_restarts = 10;
      lo.max_iterations = 50000;
      lo.out = dir.file(std::string(lc.algebra) + "_" + std::to_string(seed) + ".json");
      std::ostringstream log;
      const auto t0 = std::chrono::steady_clock::now();
      const int code = cli::cmd_learn(lo, log);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const Json trace = read_json_file(cli::default_trace_path(lo.out));
      const double loss = as_number(trace["final_loss"]);
      c1.detail << " " << tag << ": loss " << std::setprecision(3) << loss << " starts " << trace["restarts"] << " ("
                << std::fixed << std::setprecision(1) << secs << "s)" << std::defaultfloat;
      if (code != cli::kOk || !(loss < 1e-9)) {
        c1.fail(tag);
        c2.fail(tag + " not converged");
        continue;
      }

      cli::VerifyCliOptions vo;
      vo.rep = lo.out;
      vo.out = dir.file(std::string(lc.algebra) + "_" + std::to_string(seed) + ".report.json");
      vo.seed = seed;
      const int vcode = cli::cmd_verify(vo, log);
      const Json rep = read_json_file(vo.out);
      const Json& t = rep["table"];
      // Recheck the thresholds from the raw grid rather than trusting the verdicts.
      bool pattern = !t.is_null();
      double min_div = std::numeric_limits<double>::infinity(), max_rest = 0.0;
      if (pattern)
        for (std::size_t i = 0; i < t["r_values"].size(); ++i)
          for (std::size_t j = 0; j < t["r_values"][i].size(); ++j) {
            const double r = as_number(t["r_values"][i][j]);
            if (t["expected_divergent"][i][j].get<bool>()) {
              min_div = std::min(min_div, r);
              pattern = pattern && r >= 1e4;
            } else {
              max_rest = std::max(max_rest, r);
              pattern = pattern && r <= 1e2;
            }
          }
      const Json& schur = rep["schur"];
      const bool label_ok = schur["match"].is_string() && schur["match"] == lc.expected_match &&
                            read_json_file(lo.out)["label"] == cli::primed(lc.expected_match);
      const double cond = label_ok ? as_number(schur["condition_number"]) : 0.0;
      c2.detail << " " << tag << ": " << (label_ok ? cli::primed(lc.expected_match) + "~" + lc.expected_match : "no match")
                << " cond " << std::setprecision(3) << cond << " min r(div) " << min_div << " max r(rest) " << max_rest;
      if (vcode != cli::kOk || !pattern || !label_ok || !(cond <= 1e6)) c2.fail(tag);
    }
}

// ---------------------------------------------------------------- 3

void cg_correctness(Result& c3) {
  const auto one = spin_rep_so3(1);
  for (double j : {0.0, 1.0, 2.0}) {
    CGOptions opt;
    opt.seed = derive_seed(7, "acceptance-cg", static_cast<std::uint64_t>(j));
    const auto sol = cg_solve(one, one, spin_rep_so3(j), opt);
    // Independent held-out check on three fresh elements.
    double worst = 0.0;
    const auto coeffs = sample_coefficients(3, 3, 0.5, derive_seed(7, "acceptance-heldout"));
    const auto g1 = exponentiate(one, coeffs);
    const auto g3 = exponentiate(spin_rep_so3(j), coeffs);
    for (const auto& c : sol.basis)
      for (std::size_t k = 0; k < coeffs.size(); ++k)
        worst = std::max(worst, (c * kron(g1[k].matrix, g1[k].matrix) - g3[k].matrix * c).norm() / c.norm());
    c3.detail << " 1x1->" << j << ": null " << sol.nullspace_dim << " residual " << std::setprecision(2)
              << std::max(worst, sol.heldout_residual);
    if (sol.nullspace_dim != 1 || sol.heldout_residual > 1e-6 || worst > 1e-6) c3.fail(std::to_string(j));
  }
}

// ---------------------------------------------------------------- 4

Matrix act_on_channels(const Matrix& v, const Matrix& rho, Eigen::Index nq) {
  Matrix out(v.rows(), v.cols());
  for (Eigen::Index c = 0; c < v.cols() / nq; ++c) out.middleCols(c * nq, nq) = v.middleCols(c * nq, nq) * rho.transpose();
  return out;
}

void equivariance(Result& c4) {
  const auto one = rep_so21(1);
  const RepCatalog rich = build_catalog({rep_so21(0), rep_so21(0.5), one}, 2, 0, coordinate_embedding(one, 2));
  const RepCatalog lorentz = default_catalog(3);
  std::mt19937_64 rng(derive_seed(0, "acceptance-equivariance"));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_act = 0.0, worst_logit = 0.0;
  for (int pair = 0; pair < 20; ++pair) {
    const RepCatalog& cat = pair % 2 ? lorentz : rich;
    NetworkConfig cfg;
    cfg.num_classes = 3;
    cfg.seed = static_cast<std::uint64_t>(pair);
    const auto w = init_weights(cfg, cat);
    const int sd = cat.spatial_dims();
    RealMatrix x(16, sd + 1);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = u(rng);
    const AlgebraRep coords = coordinate_rep(sd);
    const RealVector b = random_coefficients(coords.algebra().dim(), rng, 0.5);
    RealMatrix y = x * expm(coords.combination(b)).real().transpose();
    for (Eigen::Index k = 0; k <= sd; ++k) y.col(k).array() += u(rng);
    const auto a = forward_trace(x, w, cfg, cat);
    const auto t = forward_trace(y, w, cfg, cat);
    for (int q = 0; q < cat.size(); ++q) {
      const Matrix rho = expm(cat.reps[q].combination(b));
      for (std::size_t k = 0; k < a.activations.size(); ++k)
        worst_act =
            std::max(worst_act, rel_diff(t.activations[k][q], act_on_channels(a.activations[k][q], rho, cat.dim(q))));
    }
    worst_logit = std::max(worst_logit, (a.logits - t.logits).norm() / std::max(1.0, a.logits.norm()));
  }
  c4.detail << " 20 pairs, max activation rel err " << std::setprecision(2) << worst_act << ", max logit err "
            << worst_logit;
  if (!(worst_act <= 1e-8)) c4.fail("activations");
  if (!(worst_logit <= 1e-8)) c4.fail("logits");
}

// ---------------------------------------------------------------- 5

double learnrep_loss_oracle(const std::vector<Matrix>& t, const StructureConstants& a) {
  double violation = 0.0, inv = 1.0;
  for (int i = 0; i < a.dim(); ++i)
    for (int j = i + 1; j < a.dim(); ++j) {
      Matrix r = t[i] * t[j] - t[j] * t[i];
      for (int k = 0; k < a.dim(); ++k) r -= a(i, j, k) * t[k];
      violation += r.cwiseAbs().sum();
    }
  for (const auto& g : t) inv = std::max(inv, 1.0 / g.squaredNorm());
  return inv * violation;
}

double learnrep_grad_error(const StructureConstants& a, int n, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Matrix> t;
  for (int i = 0; i < a.dim(); ++i) t.push_back(random_matrix(n, n, rng, scale));
  const auto g = loss_grad(t, a);
  const double h = 1e-6;
  double err = 0.0, mag = 0.0;
  for (std::size_t m = 0; m < t.size(); ++m)
    for (Eigen::Index e = 0; e < t[m].size(); ++e)
      for (const Complex step : {Complex(h, 0.0), Complex(0.0, h)}) {
        const Complex orig = t[m](e);
        t[m](e) = orig + step;
        const double up = learnrep_loss_oracle(t, a);
        t[m](e) = orig - step;
        const double down = learnrep_loss_oracle(t, a);
        t[m](e) = orig;
        const double fd = (up - down) / (2.0 * h);
        const double an = step.real() != 0.0 ? g[m](e).real() : g[m](e).imag();
        err = std::max(err, std::abs(fd - an));
        mag = std::max(mag, std::abs(fd));
      }
  return err / mag;
}

double network_grad_error(const RepCatalog& cat, std::uint64_t seed) {
  NetworkConfig cfg;
  cfg.num_layers = 2;
  cfg.num_channels = 2;
  cfg.num_classes = 3;
  cfg.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<RealMatrix> batch;
  for (int b = 0; b < 3; ++b) {
    RealMatrix x(5, cat.spatial_dims() + 1);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = u(rng);
    batch.push_back(x);
  }
  const std::vector<int> labels{0, 2, 1};
  const auto w = calibrate_weights(init_weights(cfg, cat), cfg, cat, batch);
  const auto grad = backward(batch, labels, w, cfg, cat).grad.to_params();
  auto loss_at = [&](const NetworkWeights& v) {
    double s = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) s += softmax_cross_entropy(logits(batch[b], v, cfg, cat), labels[b]).first;
    return s / static_cast<double>(batch.size());
  };
  auto params = w.to_params();
  NetworkWeights probe = w;
  const double h = 1e-5;
  double err = 0.0, mag = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + h;
    probe.from_params(params);
    const double up = loss_at(probe);
    params[i] = orig - h;
    probe.from_params(params);
    const double down = loss_at(probe);
    params[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    err = std::max(err, std::abs(fd - grad[i]));
    mag = std::max(mag, std::abs(fd));
  }
  return err / mag;
}

void gradients(Result& c5) {
  double lr_err = 0.0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    lr_err = std::max(lr_err, learnrep_grad_error(so3_constants(), 3, 1.0, s));
    lr_err = std::max(lr_err, learnrep_grad_error(so21_constants(), 3, 1.0, s));
    lr_err = std::max(lr_err, learnrep_grad_error(so31_constants(), 4, 0.3, s));
  }
  const auto one = rep_so21(1);
  const RepCatalog rich = build_catalog({rep_so21(0), rep_so21(0.5), one}, 2, 0, coordinate_embedding(one, 2));
  double net_err = 0.0;
  for (std::uint64_t s = 0; s < 2; ++s) {
    net_err = std::max(net_err, network_grad_error(rich, s));
    net_err = std::max(net_err, network_grad_error(default_catalog(3), s));
  }
  c5.detail << " loss_grad rel err " << std::setprecision(2) << lr_err << " (<= 1e-5), backward rel err " << net_err
            << " (<= 1e-4)";
  if (!(lr_err <= 1e-5)) c5.fail("loss_grad");
  if (!(net_err <= 1e-4)) c5.fail("backward");
}

// ---------------------------------------------------------------- 6

TrainResult synthetic_training(double& initial_loss, double& final_loss) {
  const RepCatalog cat = default_catalog(2);
  const NetworkConfig cfg;
  const auto data = synthetic_spread_task(512, 2, kCloudPoints, 0);
  const auto init = calibrate_weights(init_weights(cfg, cat), cfg, cat, std::span(data.points).first(64));
  TrainConfig tc;
  tc.epochs = 100;
  tc.max_steps = 200;
  tc.eval_every = 50;
  tc.threads = cli::resolve_threads(0, false);
  initial_loss = dataset_loss(data, init, cfg, cat);
  auto res = train(data, {}, cfg, cat, tc, init);
  final_loss = dataset_loss(data, res.weights, cfg, cat);
  return res;
}

void training_sanity(Result& c6, TrainResult& out) {
  double l0 = 0.0, l1 = 0.0;
  out = synthetic_training(l0, l1);
  c6.detail << " train loss " << std::setprecision(3) << l0 << " -> " << l1 << " after " << out.step_losses.size()
            << " steps";
  if (!(l1 <= 0.5 * l0)) c6.fail("loss did not halve");
}

// ---------------------------------------------------------------- 7

// Returns false when skipped.
bool mnist(const TempDir& dir, Result& c7) {
  const char* root = std::getenv("LIEREP_MNIST_DIR");
  if (!root || !*root) return false;
  const std::string images = std::string(root) + "/images.idx3", labels = std::string(root) + "/labels.idx1";
  if (!std::filesystem::exists(images) || !std::filesystem::exists(labels)) return false;

  std::ostringstream log;
  cli::GenDataOptions g;
  g.images = images;
  g.labels = labels;
  g.train_out = dir.file("mnist_train.stc");
  g.dev_out = dir.file("mnist_dev.stc");
  // Reuse covers image pools with fewer than 4096 + 124 zeros and nines.
  g.reuse = 8;
  if (cli::cmd_gen_data(g, log) != cli::kOk) {
    c7.fail("gen-data: " + log.str());
    return true;
  }
  cli::TrainCliOptions t;
  t.train = g.train_out;
  t.dev = g.dev_out;
  t.out = dir.file("mnist_weights.json");
  t.metrics_out = dir.file("mnist_metrics.csv");
  t.epochs = 2;
  t.eval_every = 64;
  const auto t0 = std::chrono::steady_clock::now();
  if (cli::cmd_train(t, log) != cli::kOk) {
    c7.fail("train: " + log.str());
    return true;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::ifstream csv(t.metrics_out);
  std::string line;
  std::getline(csv, line);
  std::vector<std::string> rows;
  while (std::getline(csv, line)) rows.push_back(line);
  double dev = 0.0;
  if (!rows.empty()) dev = std::stod(rows.back().substr(rows.back().rfind(',') + 1));

  cli::EvalCliOptions e;
  e.weights = t.out;
  e.data = g.dev_out;
  e.boost = {0.3, 0.0};
  std::ostringstream eval_out;
  const int ecode = cli::cmd_eval(e, eval_out, log);

  c7.detail << " dev accuracy " << std::setprecision(4) << dev << " (target 0.70), " << std::fixed
            << std::setprecision(0) << secs << "s training" << std::defaultfloat;
  if (!(dev >= 0.70)) {
    c7.fail("below target");
    // Diagnostic report: train-accuracy curve and the boost drift of the logits.
    c7.detail << "\n    metrics (step,train_loss,train_acc,dev_acc):";
    for (const auto& r : rows) c7.detail << "\n      " << r;
    c7.detail << "\n    " << eval_out.str() << "    eval exit " << ecode;
  } else if (ecode != cli::kOk) {
    c7.detail << ", boost drift check failed: " << eval_out.str();
  }
  return true;
}

// ---------------------------------------------------------------- 8

void determinism(const TempDir& dir, const TrainResult& first_training, Result& c8) {
  // LearnRep artifacts from the convergence run against a fresh repeat.
  for (const char* alg : {"so3", "so31"}) {
    cli::LearnOptions lo;
    lo.algebra = alg;
    lo.dim = std::string(alg) == "so31" ? 4 : 3;
    lo.out = dir.file(std::string(alg) + "_repeat.json");
    std::ostringstream log;
    cli::cmd_learn(lo, log);
    const std::string orig = dir.file(std::string(alg) + "_0.json");
    if (without_volatile(read_json_file(orig)) != without_volatile(read_json_file(lo.out)))
      c8.fail(std::string(alg) + " rep differs");
    if (without_volatile(read_json_file(cli::default_trace_path(orig))) !=
        without_volatile(read_json_file(cli::default_trace_path(lo.out))))
      c8.fail(std::string(alg) + " trace differs");
  }
  double l0 = 0.0, l1 = 0.0;
  const auto again = synthetic_training(l0, l1);
  if (again.step_losses != first_training.step_losses) c8.fail("training loss trace differs");
  if (cli::weights_hash(again.weights) != cli::weights_hash(first_training.weights)) c8.fail("weights differ");
  c8.detail << " learn reps and traces (so3, so31) and 200-step training trace/weights "
            << cli::weights_hash(again.weights).substr(0, 12) << " repeated";
}

void report(int n, const char* name, const Result& r, bool& ok, bool hard = true) {
  std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << name << "):" << r.detail.str() << std::endl;
  if (hard && !r.pass) ok = false;
}

}  // namespace

int main() {
  TempDir dir("acceptance");
  bool ok = true;
  try {
    Result c1, c2, c3, c4, c5, c6, c7, c8;
    learn_and_verify(dir, c1, c2);
    report(1, "LearnRep convergence", c1, ok);
    report(2, "irreducibility verification", c2, ok);
    cg_correctness(c3);
    report(3, "Clebsch-Gordan residuals", c3, ok);
    equivariance(c4);
    report(4, "SpacetimeNet equivariance", c4, ok);
    gradients(c5);
    report(5, "gradient correctness", c5, ok);
    TrainResult trained;
    training_sanity(c6, trained);
    report(6, "training sanity", c6, ok);
    if (mnist(dir, c7))
      report(7, "MNIST-Live dev accuracy, soft", c7, ok, false);
    else
      std::cout << "SKIP criterion 7 (MNIST-Live dev accuracy, soft): set LIEREP_MNIST_DIR to a directory with "
                   "images.idx3 and labels.idx1"
                << std::endl;
    determinism(dir, trained, c8);
    report(8, "determinism", c8, ok);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  return ok ? 0 : 1;
}
