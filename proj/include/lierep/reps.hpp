#pragma once

// Explicit algebra representations: analytic references, direct sums and
// tensor products. Generators are always stored complex.

#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "lierep/algebra.hpp"
#include "lierep/numerics.hpp"

namespace lierep {

enum class Field { real, complex };

inline const char* to_string(Field f) { return f == Field::real ? "real" : "complex"; }

/// Max over i<j of |[T_i,T_j] - sum_k A_ijk T_k|_1.
inline double closure_residual(const std::vector<Matrix>& gens, const StructureConstants& sc) {
  double worst = 0.0;
  const int t = sc.dim();
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) {
      Matrix r = gens[i] * gens[j] - gens[j] * gens[i];
      for (int k = 0; k < t; ++k)
        if (sc(i, j, k) != 0.0) r -= sc(i, j, k) * gens[k];
      worst = std::max(worst, l1_norm(r));
    }
  return worst;
}

/// Labels analytic irreducibles by their spins; primed when learned.
struct RepLabel {
  std::vector<int> twice_spins;
  bool learned = false;

  std::string to_string() const {
    auto spin = [&](int twice) {
      std::string s = twice % 2 == 0 ? std::to_string(twice / 2) : std::to_string(twice) + "/2";
      return learned ? s + "'" : s;
    };
    if (twice_spins.size() == 1) return spin(twice_spins[0]);
    std::string out = "(";
    for (std::size_t i = 0; i < twice_spins.size(); ++i) out += (i ? "," : "") + spin(twice_spins[i]);
    return out + ")";
  }
};

/// A list of generator matrices satisfying the brackets of `algebra()`.
class AlgebraRep {
 public:
  AlgebraRep(StructureConstants algebra, std::vector<Matrix> generators, Field field, std::string label,
             double tolerance = 1e-12)
      : algebra_(std::move(algebra)),
        generators_(std::move(generators)),
        field_(field),
        label_(std::move(label)),
        tolerance_(tolerance) {
    if (generators_.size() != static_cast<std::size_t>(algebra_.dim()))
      throw DomainError("representation: expected " + std::to_string(algebra_.dim()) + " generators");
    const Eigen::Index n = generators_.front().rows();
    if (n < 1) throw DomainError("representation: empty generators");
    for (const auto& g : generators_) {
      if (g.rows() != n || g.cols() != n) throw DomainError("representation: generators must share one square shape");
      if (!g.allFinite()) throw NumericalError("representation: non-finite generator");
      if (field_ == Field::real && g.imag().cwiseAbs().maxCoeff() != 0.0)
        throw DomainError("representation: real field but generator has imaginary part");
    }
    const double residual = closure_residual(generators_, algebra_);
    if (residual > tolerance_)
      throw DomainError("representation '" + label_ + "': commutator residual " + std::to_string(residual) +
                        " exceeds tolerance " + std::to_string(tolerance_));
  }

  const StructureConstants& algebra() const noexcept { return algebra_; }
  const std::vector<Matrix>& generators() const noexcept { return generators_; }
  const Matrix& generator(int i) const { return generators_.at(i); }
  Field field() const noexcept { return field_; }
  const std::string& label() const noexcept { return label_; }
  double tolerance() const noexcept { return tolerance_; }
  Eigen::Index dim() const noexcept { return generators_.front().rows(); }

  double residual() const { return closure_residual(generators_, algebra_); }

  /// sum_i b_i T_i
  Matrix combination(const RealVector& b) const {
    if (b.size() != algebra_.dim()) throw DomainError("combination: coefficient count mismatch");
    Matrix out = Matrix::Zero(dim(), dim());
    for (int i = 0; i < algebra_.dim(); ++i) out += b[i] * generators_[i];
    return out;
  }

  bool is_trivial() const {
    if (dim() != 1) return false;
    for (const auto& g : generators_)
      if (g(0, 0) != Complex(0.0)) return false;
    return true;
  }

 private:
  StructureConstants algebra_;
  std::vector<Matrix> generators_;
  Field field_;
  std::string label_;
  double tolerance_;
};

namespace detail {

inline int twice_spin(double j) {
  const double twice = 2.0 * j;
  const long rounded = std::lround(twice);
  if (!(j >= 0.0) || std::abs(twice - static_cast<double>(rounded)) > 1e-12)
    throw DomainError("spin must be a nonnegative half-integer, got " + std::to_string(j));
  return static_cast<int>(rounded);
}

// Hermitian angular-momentum matrices (J_x, J_y, J_z) with [J_x, J_y] = i J_z
// in the basis m = j, j-1, ..., -j.
inline std::vector<Matrix> hermitian_spin_matrices(int twice_j) {
  const int n = twice_j + 1;
  const double j = 0.5 * twice_j;
  Matrix raise = Matrix::Zero(n, n);
  Matrix jz = Matrix::Zero(n, n);
  for (int a = 0; a < n; ++a) {
    const double m = j - a;
    jz(a, a) = m;
    if (a > 0) raise(a - 1, a) = std::sqrt(j * (j + 1.0) - m * (m + 1.0));
  }
  const Matrix lower = raise.adjoint();
  const Complex i(0.0, 1.0);
  return {(raise + lower) / 2.0, (raise - lower) / (2.0 * i), jz};
}

}  // namespace detail

/// Trivial representation of any algebra: zero generators of size `dim`.
inline AlgebraRep trivial_rep(const StructureConstants& algebra, Eigen::Index dim = 1) {
  std::vector<Matrix> gens(algebra.dim(), Matrix::Zero(dim, dim));
  const bool two_spins = builtin_name(algebra) == std::optional<std::string>("so31");
  RepLabel label{std::vector<int>(two_spins ? 2 : 1, 0)};
  return AlgebraRep(algebra, std::move(gens), Field::real, dim == 1 ? label.to_string() : "trivial^" + std::to_string(dim));
}

/// Spin-j representation of so(3), dimension 2j+1.
///
/// The Hermitian ladder matrices satisfy [J_x, J_y] = i J_z; the generators
/// L_k = -i J_k are anti-Hermitian and satisfy [L_i, L_j] = eps_ijk L_k with no
/// factor of i.
inline AlgebraRep spin_rep_so3(double j) {
  const int twice = detail::twice_spin(j);
  auto herm = detail::hermitian_spin_matrices(twice);
  const Complex minus_i(0.0, -1.0);
  std::vector<Matrix> gens;
  for (auto& h : herm) gens.push_back(minus_i * h);
  return AlgebraRep(so3_constants(), std::move(gens), Field::complex, RepLabel{{twice}}.to_string());
}

/// so(2,1) from so(3): K_x = -i L_x, K_y = -i L_y, J_z = L_z.
inline AlgebraRep rep_so21(double j) {
  const auto base = spin_rep_so3(j);
  const Complex minus_i(0.0, -1.0);
  std::vector<Matrix> gens{minus_i * base.generator(0), minus_i * base.generator(1), base.generator(2)};
  return AlgebraRep(so21_constants(), std::move(gens), Field::complex, base.label());
}

/// (j1, j2) representation of so(3,1), dimension (2j1+1)(2j2+1).
///
/// A_i acts as spin-j1 on the left tensor factor and B_i as spin-j2 on the
/// right; J_i = A_i + B_i and K_i = -i (A_i - B_i).
inline AlgebraRep rep_so31(double j1, double j2) {
  const auto left = spin_rep_so3(j1);
  const auto right = spin_rep_so3(j2);
  const Matrix id_left = identity(left.dim());
  const Matrix id_right = identity(right.dim());
  const Complex minus_i(0.0, -1.0);
  std::vector<Matrix> rotations, boosts;
  for (int i = 0; i < 3; ++i) {
    const Matrix a = kron(left.generator(i), id_right);
    const Matrix b = kron(id_left, right.generator(i));
    rotations.push_back(a + b);
    boosts.push_back(minus_i * (a - b));
  }
  std::vector<Matrix> gens = rotations;
  gens.insert(gens.end(), boosts.begin(), boosts.end());
  RepLabel label{{detail::twice_spin(j1), detail::twice_spin(j2)}};
  return AlgebraRep(so31_constants(), std::move(gens), Field::complex, label.to_string());
}

namespace detail {

// Rotation about spatial `axis`, (J_i)_{ab} = -eps_iab, with spatial indices starting at `offset`.
inline Matrix rotation_generator(int axis, int size, int offset) {
  Matrix m = Matrix::Zero(size, size);
  const int b = (axis + 1) % 3, c = (axis + 2) % 3;
  m(offset + c, offset + b) = 1.0;
  m(offset + b, offset + c) = -1.0;
  return m;
}

// Boost generator mixing time (index 0) with spatial axis `axis`.
inline Matrix boost_generator(int axis, int size) {
  Matrix m = Matrix::Zero(size, size);
  m(0, 1 + axis) = 1.0;
  m(1 + axis, 0) = 1.0;
  return m;
}

}  // namespace detail

/// Defining rotation representation of so(3) on (x, y, z).
inline AlgebraRep vector_rep_so3() {
  std::vector<Matrix> gens;
  for (int i = 0; i < 3; ++i) gens.push_back(detail::rotation_generator(i, 3, 0));
  return AlgebraRep(so3_constants(), std::move(gens), Field::real, "vector");
}

/// Defining representation of so(2,1) on spacetime coordinates (t, x, y).
inline AlgebraRep vector_rep_so21() {
  // The z-rotation touches spatial axes 0 and 1, i.e. indices 1 and 2 here.
  std::vector<Matrix> gens{detail::boost_generator(0, 3), detail::boost_generator(1, 3),
                           detail::rotation_generator(2, 3, 1)};
  return AlgebraRep(so21_constants(), std::move(gens), Field::real, "vector");
}

/// Defining representation of so(3,1) on spacetime coordinates (t, x, y, z).
inline AlgebraRep vector_rep_so31() {
  std::vector<Matrix> gens;
  for (int i = 0; i < 3; ++i) gens.push_back(detail::rotation_generator(i, 4, 1));
  for (int i = 0; i < 3; ++i) gens.push_back(detail::boost_generator(i, 4));
  return AlgebraRep(so31_constants(), std::move(gens), Field::real, "vector");
}

inline void require_same_algebra(const AlgebraRep& a, const AlgebraRep& b) {
  if (!(a.algebra() == b.algebra())) throw DomainError("representations belong to different algebras");
}

inline AlgebraRep direct_sum(const AlgebraRep& r1, const AlgebraRep& r2) {
  require_same_algebra(r1, r2);
  const Eigen::Index n1 = r1.dim(), n2 = r2.dim();
  std::vector<Matrix> gens;
  for (int i = 0; i < r1.algebra().dim(); ++i) {
    Matrix m = Matrix::Zero(n1 + n2, n1 + n2);
    m.topLeftCorner(n1, n1) = r1.generator(i);
    m.bottomRightCorner(n2, n2) = r2.generator(i);
    gens.push_back(std::move(m));
  }
  const Field field = (r1.field() == Field::real && r2.field() == Field::real) ? Field::real : Field::complex;
  return AlgebraRep(r1.algebra(), std::move(gens), field, r1.label() + "+" + r2.label(),
                    std::max(r1.tolerance(), r2.tolerance()));
}

/// Algebra-level tensor product T_i = T1_i (x) I + I (x) T2_i, which
/// exponentiates to the Kronecker product of the group matrices.
inline AlgebraRep tensor_product(const AlgebraRep& r1, const AlgebraRep& r2) {
  require_same_algebra(r1, r2);
  const Matrix id1 = identity(r1.dim()), id2 = identity(r2.dim());
  std::vector<Matrix> gens;
  for (int i = 0; i < r1.algebra().dim(); ++i) gens.push_back(kron(r1.generator(i), id2) + kron(id1, r2.generator(i)));
  const Field field = (r1.field() == Field::real && r2.field() == Field::real) ? Field::real : Field::complex;
  // |R1 (x) I|_1 = n2 |R1|_1, plus roundoff of the larger products.
  const double tol = static_cast<double>(r2.dim()) * r1.tolerance() + static_cast<double>(r1.dim()) * r2.tolerance() + 1e-12;
  return AlgebraRep(r1.algebra(), std::move(gens), field, r1.label() + "x" + r2.label(), tol);
}

/// S T_i S^-1 for every generator.
inline AlgebraRep conjugate(const AlgebraRep& rep, const Matrix& s, std::string label = {}, double tolerance = -1.0) {
  if (s.rows() != rep.dim() || s.cols() != rep.dim()) throw DomainError("conjugate: basis change has wrong shape");
  const Matrix s_inv = s.fullPivLu().inverse();
  std::vector<Matrix> gens;
  for (const auto& g : rep.generators()) gens.push_back(s * g * s_inv);
  if (tolerance < 0.0) tolerance = std::max(rep.tolerance(), 1e-12) * condition_number(s) * 10.0;
  return AlgebraRep(rep.algebra(), std::move(gens), Field::complex, label.empty() ? rep.label() : std::move(label),
                    tolerance);
}

}  // namespace lierep
