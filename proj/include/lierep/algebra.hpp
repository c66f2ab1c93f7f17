#pragma once

// Lie algebras given by structure constants [T_i, T_j] = sum_k A_ijk T_k.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lierep/errors.hpp"

namespace lierep {

/// Dense t x t x t structure-constant tensor, immutable once built.
class StructureConstants {
 public:
  struct Entry {
    int i, j, k;
    double value;
  };

  StructureConstants(int dim, std::vector<double> values) : dim_(dim), a_(std::move(values)) {
    if (dim <= 0) throw StructuralError("structure constants: dim must be positive");
    const auto expected = static_cast<std::size_t>(dim) * dim * dim;
    if (a_.size() != expected)
      throw StructuralError("structure constants: expected " + std::to_string(expected) + " entries, got " +
                            std::to_string(a_.size()));
  }

  /// Builds from brackets [T_i, T_j] = value * T_k, filling the antisymmetric partner.
  static StructureConstants from_brackets(int dim, const std::vector<Entry>& brackets) {
    std::vector<double> a(static_cast<std::size_t>(dim) * dim * dim, 0.0);
    auto at = [&](int i, int j, int k) -> double& { return a[(static_cast<std::size_t>(i) * dim + j) * dim + k]; };
    for (const auto& e : brackets) {
      at(e.i, e.j, e.k) = e.value;
      at(e.j, e.i, e.k) = -e.value;
    }
    return StructureConstants(dim, std::move(a));
  }

  int dim() const noexcept { return dim_; }

  double operator()(int i, int j, int k) const { return a_[(static_cast<std::size_t>(i) * dim_ + j) * dim_ + k]; }

  const std::vector<double>& values() const noexcept { return a_; }

  /// Relabels generators: result(i,j,k) = this(p[i], p[j], p[k]).
  StructureConstants permuted(const std::vector<int>& p) const {
    if (p.size() != static_cast<std::size_t>(dim_)) throw StructuralError("permutation size mismatch");
    std::vector<double> out(a_.size());
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j)
        for (int k = 0; k < dim_; ++k)
          out[(static_cast<std::size_t>(i) * dim_ + j) * dim_ + k] = (*this)(p[i], p[j], p[k]);
    return StructureConstants(dim_, std::move(out));
  }

  friend bool operator==(const StructureConstants&, const StructureConstants&) = default;

 private:
  int dim_;
  std::vector<double> a_;
};

// so(3): [J_i, J_j] = eps_ijk J_k
inline StructureConstants so3_constants() {
  return StructureConstants::from_brackets(3, {{0, 1, 2, 1.0}, {1, 2, 0, 1.0}, {2, 0, 1, 1.0}});
}

// so(2,1), generators ordered (K_x, K_y, J_z).
inline StructureConstants so21_constants() {
  return StructureConstants::from_brackets(3, {
                                                  {2, 0, 1, 1.0},   // [J_z, K_x] = K_y
                                                  {2, 1, 0, -1.0},  // [J_z, K_y] = -K_x
                                                  {0, 1, 2, -1.0},  // [K_x, K_y] = -J_z
                                              });
}

// so(3,1), generators ordered (J_1, J_2, J_3, K_1, K_2, K_3).
inline StructureConstants so31_constants() {
  std::vector<StructureConstants::Entry> brackets;
  const int cyclic[3][3] = {{0, 1, 2}, {1, 2, 0}, {2, 0, 1}};
  for (const auto& c : cyclic) {
    const int i = c[0], j = c[1], k = c[2];
    brackets.push_back({i, j, k, 1.0});            // [J_i, J_j] = J_k
    brackets.push_back({i, 3 + j, 3 + k, 1.0});    // [J_i, K_j] = K_k
    brackets.push_back({j, 3 + i, 3 + k, -1.0});   // [J_j, K_i] = -K_k
    brackets.push_back({3 + i, 3 + j, k, -1.0});   // [K_i, K_j] = -J_k
  }
  return StructureConstants::from_brackets(6, brackets);
}

inline std::optional<StructureConstants> builtin_algebra(std::string_view name) {
  if (name == "so3") return so3_constants();
  if (name == "so21") return so21_constants();
  if (name == "so31") return so31_constants();
  return std::nullopt;
}

/// Name of a built-in algebra equal to `sc`, if any.
inline std::optional<std::string> builtin_name(const StructureConstants& sc) {
  for (const char* name : {"so3", "so21", "so31"})
    if (*builtin_algebra(name) == sc) return std::string(name);
  return std::nullopt;
}

// -------------------------------------------------------------------------
// Validation

struct Violation {
  std::string identity;  // "antisymmetry" or "jacobi"
  double max_residual;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
};

inline double antisymmetry_residual(const StructureConstants& sc) {
  double worst = 0.0;
  const int t = sc.dim();
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j)
      for (int k = 0; k < t; ++k) worst = std::max(worst, std::abs(sc(i, j, k) + sc(j, i, k)));
  return worst;
}

/// Max over (i,j,k,l) of |sum_m A_ijm A_mkl + A_jkm A_mil + A_kim A_mjl|.
inline double jacobi_residual(const StructureConstants& sc) {
  double worst = 0.0;
  const int t = sc.dim();
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j)
      for (int k = 0; k < t; ++k)
        for (int l = 0; l < t; ++l) {
          double s = 0.0;
          for (int m = 0; m < t; ++m)
            s += sc(i, j, m) * sc(m, k, l) + sc(j, k, m) * sc(m, i, l) + sc(k, i, m) * sc(m, j, l);
          worst = std::max(worst, std::abs(s));
        }
  return worst;
}

inline ValidationReport validate(const StructureConstants& sc, double tolerance = 1e-12) {
  ValidationReport report;
  if (const double r = antisymmetry_residual(sc); r > tolerance) report.violations.push_back({"antisymmetry", r});
  if (const double r = jacobi_residual(sc); r > tolerance) report.violations.push_back({"jacobi", r});
  return report;
}

}  // namespace lierep
