#pragma once

// Command implementations behind the `lierep` tool. Each returns a process
// exit code:
//   0 success, 1 usage or I/O error, 2 LearnRep did not converge,
//   3 verification failed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lierep/clebsch.hpp"
#include "lierep/dataset.hpp"
#include "lierep/io.hpp"
#include "lierep/learnrep.hpp"
#include "lierep/manifest.hpp"
#include "lierep/spacetimenet.hpp"

namespace lierep::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNotConverged = 2, kVerifyFailed = 3 };

/// `requested` <= 0 means all hardware threads; LIEREP_THREADS caps the result.
inline int resolve_threads(int requested, bool serial) {
  if (serial) return 1;
  int n = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("LIEREP_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return std::max(1, n);
}

/// JSON numbers cannot hold inf/nan; those become strings.
inline Json number(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

inline Json number_grid(const std::vector<std::vector<double>>& g) {
  Json out = Json::array();
  for (const auto& row : g) {
    Json r = Json::array();
    for (double x : row) r.push_back(number(x));
    out.push_back(std::move(r));
  }
  return out;
}

/// "1" -> "1'", "(1/2,1/2)" -> "(1/2',1/2')".
inline std::string primed(const std::string& label) {
  if (label.empty() || label.front() != '(') return label + "'";
  std::string out;
  for (char c : label) {
    if (c == ',' || c == ')') out.push_back('\'');
    out.push_back(c);
  }
  return out;
}

inline StructureConstants load_algebra(const std::string& name_or_file) {
  if (auto sc = builtin_algebra(name_or_file)) return *sc;
  return algebra_from_json(read_json_file(name_or_file));
}

// -------------------------------------------------------------------------
// learn

struct LearnOptions {
  std::string algebra = "so3";
  int dim = 3;
  std::uint64_t seed = 0;
  int max_restarts = 10;
  int max_iterations = 50000;
  std::string field = "real";
  std::string out = "rep.json";
  /// Defaults to <out without .json>.trace.json.
  std::string trace_out;
  /// Restart when the converged rep fails the irreducibility check
  /// (built-in algebras with an analytic rep of this dimension only).
  bool verify = true;
  int threads = 1;
  bool serial = false;
  /// Keep every n-th trace point (the last point is always kept).
  int trace_stride = 10;
};

inline std::string default_trace_path(const std::string& out) {
  const std::string stem = out.size() > 5 && out.ends_with(".json") ? out.substr(0, out.size() - 5) : out;
  return stem + ".trace.json";
}

inline Json learn_config_json(const LearnOptions& o) {
  return Json{{"algebra", o.algebra},        {"dim", o.dim},       {"seed", o.seed},
              {"max_restarts", o.max_restarts}, {"max_iterations", o.max_iterations},
              {"field", o.field},            {"verify", o.verify}, {"trace_stride", o.trace_stride}};
}

inline int cmd_learn(const LearnOptions& o, std::ostream& log) {
  if (o.dim < 1) {
    log << "learn: --dim must be a positive integer\n";
    return kUsage;
  }
  if (o.field != "real" && o.field != "complex") {
    log << "learn: --field must be real or complex\n";
    return kUsage;
  }
  if (o.max_restarts < 0 || o.max_iterations < 1 || o.trace_stride < 1) {
    log << "learn: restart, iteration and stride counts must be non-negative\n";
    return kUsage;
  }
  RunManifest manifest("learn", learn_config_json(o), o.seed);
  LearnRepConfig cfg;
  try {
    cfg.algebra = load_algebra(o.algebra);
    if (!builtin_algebra(o.algebra)) manifest.add_input(o.algebra);
  } catch (const std::exception& e) {
    log << "learn: " << e.what() << "\n";
    return kUsage;
  }
  if (!validate(cfg.algebra).ok()) {
    log << "learn: structure constants violate antisymmetry or the Jacobi identity\n";
    return kUsage;
  }
  cfg.rep_dim = o.dim;
  cfg.field = o.field == "real" ? Field::real : Field::complex;
  cfg.max_restarts = o.max_restarts;
  cfg.max_iterations = o.max_iterations;
  cfg.seed = o.seed;
  cfg.threads = resolve_threads(o.threads, o.serial);

  std::optional<IrreducibilityCheck> check;
  const auto reference = analytic_reference(cfg.algebra, o.dim);
  if (o.verify && reference) {
    VerifyOptions vo;
    vo.stop_early = true;
    vo.cg.seed = derive_seed(o.seed, "learn-verify");
    check.emplace(*reference, default_probes(cfg.algebra), vo);
    cfg.accept = [&check](const AlgebraRep& rep) { return (*check)(rep).passed; };
  } else if (o.verify) {
    log << "learn: no analytic reference for this algebra and dimension; accepting any converged run\n";
  }

  const LearnRepRun run = lierep::run(cfg);

  Json reasons = Json::array();
  for (auto r : run.attempt_reasons) reasons.push_back(to_string(r));
  Json trace = Json::array();
  for (std::size_t i = 0; i < run.trace.size(); ++i)
    if (i % static_cast<std::size_t>(o.trace_stride) == 0 || i + 1 == run.trace.size())
      trace.push_back({run.trace[i].iteration, number(run.trace[i].loss), number(run.trace[i].penalty)});

  std::string label = "learned";
  if (run.converged && check) label = primed(check->reference().label());

  Json gens = Json::array();
  for (const auto& g : run.generators) gens.push_back(matrix_to_json(g));
  const Json man = manifest.to_json();
  Json rep{{"algebra", algebra_to_json(cfg.algebra)},
           {"field", o.field},
           {"label", label},
           {"tolerance", std::max(run.final_loss.violation * (1.0 + 1e-9), 1e-15)},
           {"generators", std::move(gens)},
           {"converged", run.converged},
           {"manifest", man}};
  Json tr{{"converged", run.converged},
          {"restarts", run.restarts},
          {"attempt_reasons", std::move(reasons)},
          {"final_loss", number(run.final_loss.total)},
          {"final_violation", number(run.final_loss.violation)},
          {"columns", {"iteration", "loss", "penalty"}},
          {"trace", std::move(trace)},
          {"manifest", man}};
  try {
    write_json_file(o.out, rep);
    write_json_file(o.trace_out.empty() ? default_trace_path(o.out) : o.trace_out, tr);
  } catch (const std::exception& e) {
    log << "learn: " << e.what() << "\n";
    return kUsage;
  }
  log << "learn: " << (run.converged ? "converged" : "did not converge") << " after " << run.restarts
      << " start(s), final loss " << run.final_loss.total << "\n";
  return run.converged ? kOk : kNotConverged;
}

// -------------------------------------------------------------------------
// verify

struct VerifyCliOptions {
  std::string rep;
  /// "analytic", or paths of candidate rep files.
  std::vector<std::string> against{"analytic"};
  std::string out = "report.json";
  std::uint64_t seed = 0;
  int samples = 8;
};

inline Json cg_cell_json(const CGSolution& s, const std::string& label) {
  return Json{{"label", label},
              {"ratio", number(s.ratio)},
              {"nullspace_dim", s.nullspace_dim},
              {"verdict", to_string(s.verdict)},
              {"heldout_residual", number(s.heldout_residual)}};
}

inline Json verification_json(const Verification& v, const IrreducibilityCheck& check) {
  Json cells = Json::array();
  for (std::size_t i = 0; i < v.schur.cells.size(); ++i)
    cells.push_back(cg_cell_json(v.schur.cells[i], check.probes().rho2s[i].label()));
  Json schur{{"cells", std::move(cells)}, {"multiplicity", v.schur.multiplicity}, {"ambiguous", v.schur.ambiguous}};
  if (v.schur.match) {
    schur["match"] = v.schur.match->label;
    schur["condition_number"] = number(v.schur.match->condition_number);
  } else {
    schur["match"] = nullptr;
  }
  Json out{{"reference", check.reference().label()}, {"schur", std::move(schur)}, {"passed", v.passed}};
  if (v.table) {
    const auto& t = *v.table;
    Json verdicts = Json::array();
    for (const auto& row : t.verdicts) {
      Json r = Json::array();
      for (auto d : row) r.push_back(to_string(d));
      verdicts.push_back(std::move(r));
    }
    out["table"] = Json{{"rows", t.rows},
                        {"cols", t.cols},
                        {"r_values", number_grid(t.r_values)},
                        {"expected_r_values", number_grid(t.expected_r_values)},
                        {"expected_divergent", t.expected_divergent},
                        {"verdicts", std::move(verdicts)},
                        {"nullspace_dims", t.nullspace_dims},
                        {"heldout_residuals", number_grid(t.heldout_residuals)},
                        {"match", t.match}};
  }
  std::string verdict = "irreducible";
  if (!v.passed) verdict = (v.schur.multiplicity || v.schur.ambiguous) ? "reducible" : "mismatch";
  out["verdict"] = verdict;
  return out;
}

inline int cmd_verify(const VerifyCliOptions& o, std::ostream& log) {
  if (o.samples < 1) {
    log << "verify: --samples must be positive\n";
    return kUsage;
  }
  Json config{{"rep", o.rep}, {"against", o.against}, {"seed", o.seed}, {"samples", o.samples}};
  RunManifest manifest("verify", config, o.seed);
  std::optional<AlgebraRep> learned;
  std::optional<AlgebraRep> reference;
  ProbeReps probes;
  try {
    learned.emplace(rep_from_json(read_json_file(o.rep)));
    manifest.add_input(o.rep);
    const auto& alg = learned->algebra();
    if (o.against.size() == 1 && o.against.front() == "analytic") {
      reference = analytic_reference(alg, static_cast<int>(learned->dim()));
      if (!reference) {
        log << "verify: no analytic reference for this algebra and dimension; pass candidate files\n";
        return kUsage;
      }
      probes = default_probes(alg);
    } else {
      if (builtin_name(alg)) probes.rho1s = default_probes(alg).rho1s;
      else probes.rho1s.push_back(trivial_rep(alg));
      for (const auto& path : o.against) {
        probes.rho2s.push_back(rep_from_json(read_json_file(path)));
        manifest.add_input(path);
        require_same_algebra(*learned, probes.rho2s.back());
        if (!reference && probes.rho2s.back().dim() == learned->dim()) reference = probes.rho2s.back();
      }
      if (!reference) {
        log << "verify: no candidate has the learned rep's dimension\n";
        return kUsage;
      }
    }
  } catch (const std::exception& e) {
    log << "verify: " << e.what() << "\n";
    return kUsage;
  }

  VerifyOptions vo;
  vo.cg.seed = derive_seed(o.seed, "verify");
  vo.cg.samples = o.samples;
  const IrreducibilityCheck check(*reference, probes, vo);
  const Verification v = check(*learned);
  Json report = verification_json(v, check);
  report["manifest"] = manifest.to_json();
  try {
    write_json_file(o.out, report);
  } catch (const std::exception& e) {
    log << "verify: " << e.what() << "\n";
    return kUsage;
  }
  log << "verify: " << report["verdict"].get<std::string>();
  if (v.schur.match) log << ", Schur match " << v.schur.match->label << " (cond " << v.schur.match->condition_number << ")";
  log << "\n";
  return v.passed ? kOk : kVerifyFailed;
}

// -------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
  std::string images;
  std::string labels;
  std::string train_out = "train.stc";
  std::string dev_out = "dev.stc";
  int spatial_dims = 2;
  int train_count = 4096;
  int dev_count = 124;
  std::vector<int> classes{0, 9};
  double eval_velocity_max = 0.3;
  std::uint64_t seed = 0;
  int reuse = 1;
  bool jitter = true;
  int threads = 0;
  bool serial = false;
};

inline Json split_config_json(const GenDataOptions& o) {
  return Json{{"spatial_dims", o.spatial_dims}, {"train_count", o.train_count},
              {"dev_count", o.dev_count},       {"classes", o.classes},
              {"eval_velocity_max", o.eval_velocity_max}, {"seed", o.seed},
              {"reuse", o.reuse},               {"jitter", o.jitter},
              {"points", kCloudPoints},         {"time_window", {-0.5, 0.5}}};
}

inline int cmd_gen_data(const GenDataOptions& o, std::ostream& log) {
  RunManifest manifest("gen-data", split_config_json(o), o.seed);
  try {
    const auto images = read_idx_files(o.images, o.labels);
    manifest.add_input(o.images);
    manifest.add_input(o.labels);
    SplitConfig cfg;
    cfg.classes = o.classes;
    cfg.train_count = o.train_count;
    cfg.dev_count = o.dev_count;
    cfg.spatial_dims = o.spatial_dims;
    cfg.eval_velocity_max = o.eval_velocity_max;
    cfg.seed = o.seed;
    cfg.max_reuse = o.reuse;
    cfg.jitter = o.jitter;
    cfg.threads = resolve_threads(o.threads, o.serial);
    const Split split = make_split(images, cfg);
    write_stc(o.train_out, split.train, o.spatial_dims);
    write_stc(o.dev_out, split.dev, o.spatial_dims);
    Json sidecar{{"train", o.train_out},
                 {"dev", o.dev_out},
                 {"train_count", split.train.size()},
                 {"dev_count", split.dev.size()},
                 {"format", "STC1 little-endian, see dataset.hpp"},
                 {"manifest", manifest.to_json()}};
    write_json_file(o.train_out + ".json", sidecar);
    write_json_file(o.dev_out + ".json", sidecar);
    log << "gen-data: wrote " << split.train.size() << " train and " << split.dev.size() << " dev clouds\n";
  } catch (const std::exception& e) {
    log << "gen-data: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}

// -------------------------------------------------------------------------
// train / eval

struct TrainCliOptions {
  std::string train;
  std::string dev;
  std::string out = "weights.json";
  std::string metrics_out = "metrics.csv";
  /// Optional learned rep replacing the analytic coordinate rep.
  std::string rep;
  int spatial_dims = 0;  // 0: take it from the data
  int layers = 3;
  int channels = 3;
  int batch = 16;
  double lr = 0.01;
  int epochs = 1;
  int max_steps = -1;
  int eval_every = 0;
  std::uint64_t seed = 0;
  /// Data-dependent rescaling of the initial weights on the first clouds.
  bool calibrate = true;
  int calibration_clouds = 64;
  int threads = 0;
  bool serial = false;
};

inline std::string weights_hash(const NetworkWeights& w) { return git_blob_hash(weights_to_json(w).dump()); }

inline void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "step,train_loss,train_acc,dev_acc\n" << std::setprecision(17);
  for (const auto& r : rows) out << r.step << ',' << r.train_loss << ',' << r.train_acc << ',' << r.dev_acc << '\n';
}

inline RepCatalog catalog_for(int spatial_dims, const std::string& rep_path) {
  if (rep_path.empty()) return default_catalog(spatial_dims);
  const AlgebraRep learned = rep_from_json(read_json_file(rep_path));
  const Matrix e = coordinate_embedding(learned, spatial_dims);
  return build_catalog({trivial_rep(learned.algebra()), learned}, 1, 0, e);
}

inline int cmd_train(const TrainCliOptions& o, std::ostream& log) {
  Json config{{"train", o.train},   {"dev", o.dev},       {"rep", o.rep},       {"layers", o.layers},
              {"channels", o.channels}, {"batch", o.batch}, {"lr", o.lr},       {"epochs", o.epochs},
              {"max_steps", o.max_steps}, {"eval_every", o.eval_every}, {"seed", o.seed},
              {"calibrate", o.calibrate}, {"calibration_clouds", o.calibration_clouds}};
  RunManifest manifest("train", config, o.seed);
  try {
    if (o.layers < 1 || o.channels < 1 || o.batch < 1 || o.epochs < 0 || o.lr < 0.0)
      throw DomainError("layers, channels and batch must be positive; epochs and lr non-negative");
    const auto train_clouds = read_stc(o.train);
    manifest.add_input(o.train);
    std::vector<SpacetimeCloud> dev_clouds;
    if (!o.dev.empty()) {
      dev_clouds = read_stc(o.dev);
      manifest.add_input(o.dev);
    }
    if (train_clouds.empty()) throw DomainError("training set is empty");
    const int sd = static_cast<int>(train_clouds.front().points.cols()) - 1;
    if (o.spatial_dims != 0 && o.spatial_dims != sd)
      throw DomainError("--spatial-dims " + std::to_string(o.spatial_dims) + " does not match the data (" +
                        std::to_string(sd) + ")");
    if (!o.rep.empty()) manifest.add_input(o.rep);
    const RepCatalog cat = catalog_for(sd, o.rep);

    NetworkConfig cfg;
    cfg.num_layers = o.layers;
    cfg.num_channels = o.channels;
    cfg.batch_size = o.batch;
    cfg.seed = o.seed;
    int classes = 0;
    for (const auto& c : train_clouds) classes = std::max(classes, c.label + 1);
    cfg.num_classes = std::max(2, classes);

    TrainConfig tc;
    tc.learning_rate = o.lr;
    tc.epochs = o.epochs;
    tc.max_steps = o.max_steps;
    tc.eval_every = o.eval_every;
    tc.threads = resolve_threads(o.threads, o.serial);

    const LabeledClouds train_set = to_labeled(train_clouds);
    NetworkWeights init = init_weights(cfg, cat);
    if (o.calibrate) {
      const auto n = std::min<std::size_t>(train_set.size(), static_cast<std::size_t>(std::max(1, o.calibration_clouds)));
      init = calibrate_weights(std::move(init), cfg, cat, std::span(train_set.points).first(n));
    }
    const std::string init_hash = weights_hash(init);
    auto result = train(train_set, to_labeled(dev_clouds), cfg, cat, tc, init);
    const std::string final_hash = weights_hash(result.weights);

    Json ckpt = checkpoint_to_json(cfg, cat, result.weights);
    ckpt["initial_weights_hash"] = init_hash;
    ckpt["final_weights_hash"] = final_hash;
    ckpt["steps"] = result.step_losses.size();
    ckpt["manifest"] = manifest.to_json();
    write_json_file(o.out, ckpt);
    write_metrics_csv(o.metrics_out, result.metrics);
    log << "train: " << result.step_losses.size() << " steps";
    if (!result.metrics.empty()) log << ", last dev accuracy " << result.metrics.back().dev_acc;
    log << ", weights " << final_hash << "\n";
  } catch (const std::exception& e) {
    log << "train: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}

struct EvalCliOptions {
  std::string weights;
  std::string data;
  /// Per-cloud predictions, "index,label,predicted,logit_0,...".
  std::string predictions_out;
  /// Boost velocity applied to every cloud for the invariance check.
  std::vector<double> boost;
  double drift_tolerance = 1e-6;
  int threads = 0;
  bool serial = false;
};

inline int cmd_eval(const EvalCliOptions& o, std::ostream& out, std::ostream& log) {
  try {
    const Checkpoint ck = checkpoint_from_json(read_json_file(o.weights));
    const auto clouds = read_stc(o.data);
    const LabeledClouds data = to_labeled(clouds);
    const int threads = resolve_threads(o.threads, o.serial);
    const double acc = accuracy(data, ck.weights, ck.config, ck.catalog, threads);
    out << "accuracy " << std::setprecision(6) << acc << "\n";

    if (!o.predictions_out.empty()) {
      std::ofstream csv(o.predictions_out);
      if (!csv) throw std::runtime_error("cannot write '" + o.predictions_out + "'");
      csv << "index,label,predicted";
      for (int c = 0; c < ck.config.num_classes; ++c) csv << ",logit_" << c;
      csv << '\n' << std::setprecision(17);
      for (std::size_t i = 0; i < data.size(); ++i) {
        const RealVector z = logits(data.points[i], ck.weights, ck.config, ck.catalog);
        Eigen::Index arg = 0;
        z.maxCoeff(&arg);
        csv << i << ',' << data.labels[i] << ',' << arg;
        for (Eigen::Index c = 0; c < z.size(); ++c) csv << ',' << z[c];
        csv << '\n';
      }
    }

    if (!o.boost.empty()) {
      const int sd = ck.catalog.spatial_dims();
      if (static_cast<int>(o.boost.size()) != sd)
        throw DomainError("--boost needs " + std::to_string(sd) + " components");
      PoincareTransform tf = PoincareTransform::identity(sd);
      for (int k = 0; k < sd; ++k) tf.velocity[k] = o.boost[k];
      double drift = 0.0;
      for (const auto& c : clouds) {
        const RealVector a = logits(c.points, ck.weights, ck.config, ck.catalog);
        const RealVector b = logits(lorentz_boost(c, tf).points, ck.weights, ck.config, ck.catalog);
        drift = std::max(drift, (a - b).cwiseAbs().maxCoeff());
      }
      out << "boost logit drift " << std::setprecision(3) << drift << "\n";
      if (!(drift <= o.drift_tolerance)) {
        log << "eval: logit drift " << drift << " exceeds " << o.drift_tolerance << "\n";
        return kVerifyFailed;
      }
    }
  } catch (const std::exception& e) {
    log << "eval: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}

}  // namespace lierep::cli
