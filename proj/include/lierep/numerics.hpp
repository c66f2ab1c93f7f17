#pragma once

// Dense complex kernels shared by the rest of the library: matrix exponential,
// SVD summaries, Kronecker products and the Adam optimizer.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "lierep/errors.hpp"

namespace lierep {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Entrywise L1 norm, sum of complex moduli.
inline double l1_norm(const Matrix& m) { return m.cwiseAbs().sum(); }

/// Induced 1-norm (max column sum).
inline double norm_1(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().colwise().sum().maxCoeff();
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline Matrix identity(Eigen::Index n) { return Matrix::Identity(n, n); }

/// Matrix exponential by scaling and squaring a truncated Taylor series.
///
/// The input is scaled by 2^-s so that its 1-norm is at most 1/2; the series
/// is then summed until the next term is below machine precision relative to
/// the partial sum, and the result squared s times.
inline Matrix expm(const Matrix& m) {
  if (m.rows() != m.cols()) throw DomainError("expm: matrix must be square");
  const Eigen::Index n = m.rows();
  if (n == 0) return m;

  const double norm = norm_1(m);
  if (!std::isfinite(norm)) throw NumericalError("expm: non-finite input");

  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Matrix a = m / std::ldexp(1.0, squarings);

  Matrix result = identity(n);
  Matrix term = identity(n);
  constexpr double eps = std::numeric_limits<double>::epsilon();
  for (int k = 1; k <= 40; ++k) {
    term = (term * a) / static_cast<double>(k);
    result += term;
    if (norm_1(term) <= eps * norm_1(result)) break;
  }
  for (int s = 0; s < squarings; ++s) result = result * result;

  if (!result.allFinite()) throw NumericalError("expm: overflow");
  return result;
}

/// Ascending singular values and the right-singular vectors of the smallest ones.
struct SvdSummary {
  /// One value per column, ascending. Columns beyond the row count get an
  /// exact zero (their right-singular vectors span the trivial kernel).
  RealVector singular_values;
  /// Column i pairs with singular_values[i].
  Matrix smallest_vectors;
};

inline SvdSummary svd_values_and_nullspace(const Matrix& m, Eigen::Index k) {
  if (m.size() == 0) throw DomainError("svd: empty matrix");
  if (k < 0 || k > m.cols()) throw DomainError("svd: k exceeds column count");
  if (!m.allFinite()) throw NumericalError("svd: non-finite input");

  Eigen::JacobiSVD<Matrix, Eigen::ColPivHouseholderQRPreconditioner> svd(m, Eigen::ComputeFullV);
  const RealVector& descending = svd.singularValues();
  const Eigen::Index cols = m.cols();

  // Full V has `cols` columns; the first `descending.size()` pair with the
  // singular values, the rest are zero-singular-value directions.
  RealVector all = RealVector::Zero(cols);
  all.head(descending.size()) = descending;

  SvdSummary out;
  out.singular_values.resize(cols);
  out.smallest_vectors.resize(cols, k);
  for (Eigen::Index i = 0; i < cols; ++i) {
    const Eigen::Index src = cols - 1 - i;
    out.singular_values[i] = all[src];
    if (i < k) out.smallest_vectors.col(i) = svd.matrixV().col(src);
  }
  return out;
}

/// Ratio of the largest to the smallest singular value.
inline double condition_number(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const RealVector& s = svd.singularValues();
  if (s.size() == 0) return std::numeric_limits<double>::infinity();
  const double smallest = s[s.size() - 1];
  if (smallest == 0.0) return std::numeric_limits<double>::infinity();
  return s[0] / smallest;
}

// -------------------------------------------------------------------------
// Adam

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  AdamState() = default;
  AdamState(std::size_t size, double lr) : learning_rate(lr), first_moment(size, 0.0), second_moment(size, 0.0) {}
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size()) throw DomainError("adam_step: params and grads differ in length");
  if (!(state.beta1 >= 0.0 && state.beta1 < 1.0 && state.beta2 >= 0.0 && state.beta2 < 1.0))
    throw DomainError("adam_step: betas must lie in [0, 1)");
  if (state.first_moment.size() != params.size()) {
    state.first_moment.assign(params.size(), 0.0);
    state.second_moment.assign(params.size(), 0.0);
  }

  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

// -------------------------------------------------------------------------
// Seeds

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named sub-stream of a master seed, stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(seed ^ h) + index);
}

}  // namespace lierep
