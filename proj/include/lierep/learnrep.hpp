#pragma once

// LearnRep: gradient descent on candidate generators T_1..T_t minimizing
//
//   N^-1 * sum_{i<j} |[T_i, T_j] - sum_k A_ijk T_k|_1,
//   N^-1 = max(1, max_i 1/|T_i|_F^2),
//
// with Adam, a plateau-triggered exponential learning-rate schedule and
// random restarts.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "lierep/algebra.hpp"
#include "lierep/numerics.hpp"
#include "lierep/reps.hpp"

namespace lierep {

/// Upper bound on 1/|T_i|_F^2 so the penalty stays finite at T_i = 0.
inline constexpr double kPenaltyCeiling = 1e12;

struct LossValue {
  double total = 0.0;
  double penalty = 1.0;
  double violation = 0.0;
};

namespace detail {

inline void check_generators(std::span<const Matrix> gens, const StructureConstants& sc) {
  if (gens.size() != static_cast<std::size_t>(sc.dim()))
    throw DomainError("loss: expected " + std::to_string(sc.dim()) + " generators, got " + std::to_string(gens.size()));
  const Eigen::Index n = gens.front().rows();
  for (const auto& g : gens)
    if (g.rows() != n || g.cols() != n) throw DomainError("loss: generators must share one square shape");
}

// Penalty factor and the generator that attains it (-1 when the clamp at 1
// is active or the ceiling is hit, i.e. the factor is locally constant).
inline std::pair<double, int> penalty_factor(std::span<const Matrix> gens) {
  double worst = 0.0;
  int arg = -1;
  for (std::size_t i = 0; i < gens.size(); ++i) {
    const double sq = gens[i].squaredNorm();
    const double inv = sq > 0.0 ? std::min(1.0 / sq, kPenaltyCeiling) : kPenaltyCeiling;
    if (inv > worst) {
      worst = inv;
      arg = static_cast<int>(i);
    }
  }
  if (worst <= 1.0) return {1.0, -1};
  if (worst >= kPenaltyCeiling) return {kPenaltyCeiling, -1};
  return {worst, arg};
}

inline Matrix residual(std::span<const Matrix> gens, const StructureConstants& sc, int i, int j) {
  Matrix r = gens[i] * gens[j] - gens[j] * gens[i];
  for (int k = 0; k < sc.dim(); ++k)
    if (sc(i, j, k) != 0.0) r -= sc(i, j, k) * gens[k];
  return r;
}

}  // namespace detail

inline LossValue loss(std::span<const Matrix> gens, const StructureConstants& sc) {
  detail::check_generators(gens, sc);
  LossValue out;
  for (int i = 0; i < sc.dim(); ++i)
    for (int j = i + 1; j < sc.dim(); ++j) out.violation += l1_norm(detail::residual(gens, sc, i, j));
  out.penalty = detail::penalty_factor(gens).first;
  out.total = out.penalty * out.violation;
  return out;
}

/// Loss and its gradient. Entry (a,b) of gradient i is dL/dRe + i dL/dIm of
/// T_i(a,b); for real parameterizations only the real part is meaningful.
///
/// L1 terms use z/|z|, taken as zero for entries at roundoff level. The
/// penalty factor is differentiated only when it is strictly between the
/// clamp at 1 and the ceiling.
inline std::pair<LossValue, std::vector<Matrix>> loss_and_grad(std::span<const Matrix> gens,
                                                               const StructureConstants& sc) {
  detail::check_generators(gens, sc);
  const int t = sc.dim();
  const Eigen::Index n = gens.front().rows();
  std::vector<Matrix> grad(t, Matrix::Zero(n, n));

  LossValue out;
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) {
      const Matrix r = detail::residual(gens, sc, i, j);
      out.violation += l1_norm(r);
      // Entries at roundoff level of the bracket terms count as exact zeros.
      double scale = static_cast<double>(n) * gens[i].cwiseAbs().maxCoeff() * gens[j].cwiseAbs().maxCoeff();
      for (int k = 0; k < t; ++k) scale += std::abs(sc(i, j, k)) * gens[k].cwiseAbs().maxCoeff();
      const double floor = 16.0 * std::numeric_limits<double>::epsilon() * scale;
      const Matrix sign = r.unaryExpr([floor](const Complex& z) {
        const double a = std::abs(z);
        return a > floor ? z / a : Complex(0.0);
      });
      const Matrix ti_h = gens[i].adjoint();
      const Matrix tj_h = gens[j].adjoint();
      grad[i] += sign * tj_h - tj_h * sign;
      grad[j] += ti_h * sign - sign * ti_h;
      for (int k = 0; k < t; ++k)
        if (sc(i, j, k) != 0.0) grad[k] -= sc(i, j, k) * sign;
    }

  const auto [penalty, arg] = detail::penalty_factor(gens);
  out.penalty = penalty;
  out.total = penalty * out.violation;
  for (auto& g : grad) g *= penalty;
  if (arg >= 0) {
    // d(1/|T|^2) = -2 T / |T|^4
    const double sq = gens[arg].squaredNorm();
    grad[arg] += out.violation * (-2.0 / (sq * sq)) * gens[arg];
  }
  return {out, std::move(grad)};
}

inline std::vector<Matrix> loss_grad(std::span<const Matrix> gens, const StructureConstants& sc) {
  return loss_and_grad(gens, sc).second;
}

// -------------------------------------------------------------------------
// Optimizer loop

struct LearnRepConfig {
  StructureConstants algebra = so3_constants();
  int rep_dim = 3;
  Field field = Field::real;
  double initial_lr = 0.1;
  double loss_target = 1e-9;
  double restart_lr_loss_ratio = 1e-4;
  /// Number of random starts; 0 runs nothing.
  int max_restarts = 10;
  int max_iterations = 50000;
  int plateau_window = 200;
  /// Plateau when the best loss improves by less than this fraction over a window.
  double plateau_improvement = 0.01;
  double decay_factor = 0.5;
  std::uint64_t seed = 0;
  /// Worker threads for independent restarts. Results do not depend on it.
  int threads = 1;
  /// Optional acceptance check on converged generators (e.g. irreducibility);
  /// a rejected run counts as a failed start.
  std::function<bool(const AlgebraRep&)> accept;
};

struct TracePoint {
  int iteration;
  double loss;
  double penalty;
};

enum class StopReason { converged, rejected, plateau, iteration_limit, non_finite, cancelled };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::converged: return "converged";
    case StopReason::rejected: return "rejected";
    case StopReason::plateau: return "plateau";
    case StopReason::iteration_limit: return "iteration_limit";
    case StopReason::non_finite: return "non_finite";
    case StopReason::cancelled: return "cancelled";
  }
  return "unknown";
}

struct LearnRepAttempt {
  int index = 0;
  std::uint64_t seed = 0;
  std::vector<Matrix> generators;
  std::vector<TracePoint> trace;
  LossValue final_loss;
  StopReason reason = StopReason::iteration_limit;
};

struct LearnRepRun {
  bool converged = false;
  std::vector<Matrix> generators;
  std::vector<TracePoint> trace;
  LossValue final_loss;
  /// Starts consumed, including the returned one.
  int restarts = 0;
  std::vector<StopReason> attempt_reasons;
  std::optional<AlgebraRep> rep;
};

namespace detail {

inline std::vector<double> pack(std::span<const Matrix> gens, Field field) {
  std::vector<double> out;
  for (const auto& g : gens)
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        out.push_back(g(r, c).real());
        if (field == Field::complex) out.push_back(g(r, c).imag());
      }
  return out;
}

inline void unpack(std::span<const double> flat, Field field, std::vector<Matrix>& gens) {
  std::size_t p = 0;
  for (auto& g : gens)
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        const double re = flat[p++];
        const double im = field == Field::complex ? flat[p++] : 0.0;
        g(r, c) = Complex(re, im);
      }
}

inline LearnRepAttempt run_attempt(const LearnRepConfig& cfg, int index, const std::atomic<int>* winner) {
  LearnRepAttempt a;
  a.index = index;
  a.seed = cfg.seed + static_cast<std::uint64_t>(index);
  const int t = cfg.algebra.dim();
  const Eigen::Index n = cfg.rep_dim;

  std::mt19937_64 rng(a.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Matrix> gens(t, Matrix::Zero(n, n));
  for (auto& g : gens)
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < n; ++c) {
        const double re = normal(rng);
        const double im = cfg.field == Field::complex ? normal(rng) : 0.0;
        g(r, c) = Complex(re, im);
      }

  std::vector<double> params = pack(gens, cfg.field);
  std::vector<double> grads(params.size());
  AdamState adam(params.size(), cfg.initial_lr);

  double best = std::numeric_limits<double>::infinity();
  double window_start_best = best;
  int since_check = 0;
  a.reason = StopReason::iteration_limit;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    auto [value, grad] = loss_and_grad(gens, cfg.algebra);
    a.trace.push_back({it, value.total, value.penalty});
    a.final_loss = value;
    if (!std::isfinite(value.total)) {
      a.reason = StopReason::non_finite;
      break;
    }
    if (value.total < cfg.loss_target) {
      a.reason = StopReason::converged;
      break;
    }
    best = std::min(best, value.total);
    if (++since_check >= cfg.plateau_window) {
      if (best > window_start_best * (1.0 - cfg.plateau_improvement)) {
        if (adam.learning_rate < best * cfg.restart_lr_loss_ratio) {
          a.reason = StopReason::plateau;
          break;
        }
        adam.learning_rate *= cfg.decay_factor;
      }
      window_start_best = best;
      since_check = 0;
    }
    if (winner && (it & 63) == 0 && winner->load(std::memory_order_relaxed) < index) {
      a.reason = StopReason::cancelled;
      break;
    }

    std::size_t p = 0;
    for (const auto& g : grad)
      for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < n; ++c) {
          grads[p++] = g(r, c).real();
          if (cfg.field == Field::complex) grads[p++] = g(r, c).imag();
        }
    adam_step(adam, params, grads);
    unpack(params, cfg.field, gens);
  }
  a.generators = std::move(gens);

  if (a.reason == StopReason::converged) {
    // Each pair residual is bounded by the violation, itself below the loss.
    const double tol = std::max(a.final_loss.violation * (1.0 + 1e-9), 1e-15);
    if (cfg.accept) {
      AlgebraRep candidate(cfg.algebra, a.generators, cfg.field, "learned", tol);
      if (!cfg.accept(candidate)) a.reason = StopReason::rejected;
    }
  }
  return a;
}

}  // namespace detail

/// Runs up to `max_restarts` independent starts with seeds seed, seed+1, ...
/// and returns the first that converges (and passes `accept`), else the start
/// with the lowest final loss.
inline LearnRepRun run(const LearnRepConfig& cfg) {
  if (cfg.rep_dim < 1) throw DomainError("learnrep: rep_dim must be positive");
  if (!(cfg.loss_target > 0.0)) throw DomainError("learnrep: loss_target must be positive");
  if (!validate(cfg.algebra).ok()) throw DomainError("learnrep: structure constants fail validation");

  std::vector<LearnRepAttempt> attempts;
  std::optional<std::size_t> winner_pos;
  const int workers = std::max(1, cfg.threads);

  for (int first = 0; first < cfg.max_restarts && !winner_pos; first += workers) {
    const int last = std::min(cfg.max_restarts, first + workers);
    std::vector<LearnRepAttempt> batch(static_cast<std::size_t>(last - first));
    if (workers == 1) {
      batch[0] = detail::run_attempt(cfg, first, nullptr);
    } else {
      std::atomic<int> winner{std::numeric_limits<int>::max()};
      std::vector<std::thread> pool;
      for (int idx = first; idx < last; ++idx)
        pool.emplace_back([&, idx] {
          auto a = detail::run_attempt(cfg, idx, &winner);
          if (a.reason == StopReason::converged) {
            int cur = winner.load();
            while (idx < cur && !winner.compare_exchange_weak(cur, idx)) {
            }
          }
          batch[static_cast<std::size_t>(idx - first)] = std::move(a);
        });
      for (auto& th : pool) th.join();
    }
    for (auto& a : batch) {
      attempts.push_back(std::move(a));
      if (attempts.back().reason == StopReason::converged) {
        winner_pos = attempts.size() - 1;
        break;
      }
    }
  }

  LearnRepRun out;
  for (const auto& a : attempts) out.attempt_reasons.push_back(a.reason);
  if (attempts.empty()) return out;

  std::size_t pick = 0;
  if (winner_pos) {
    pick = *winner_pos;
  } else {
    for (std::size_t i = 1; i < attempts.size(); ++i)
      if (attempts[i].final_loss.total < attempts[pick].final_loss.total) pick = i;
  }
  auto& a = attempts[pick];
  out.converged = a.reason == StopReason::converged;
  out.generators = std::move(a.generators);
  out.trace = std::move(a.trace);
  out.final_loss = a.final_loss;
  out.restarts = static_cast<int>(attempts.size());
  if (out.converged) {
    const double tol = std::max(out.final_loss.violation * (1.0 + 1e-9), 1e-15);
    out.rep.emplace(cfg.algebra, out.generators, cfg.field, "learned", tol);
  }
  return out;
}

}  // namespace lierep
