#pragma once

// Clebsch-Gordan coefficients as the nullspace of stacked intertwiner
// constraints C (rho1(a) (x) rho2(a)) = rho3(a) C over sampled group elements,
// the diagnostic ratio r = SV_2 / SV_1, Schur-lemma isomorphism tests and
// tensor-product structure tables.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lierep/numerics.hpp"
#include "lierep/reps.hpp"

namespace lierep {

struct GroupElement {
  RealVector coefficients;
  Matrix matrix;  // expm(sum_i b_i T_i)
};

/// b_i ~ N(0, scale^2), `count` vectors of length `t`.
inline std::vector<RealVector> sample_coefficients(int t, int count, double scale, std::uint64_t seed) {
  if (!(scale > 0.0)) throw DomainError("sample_coefficients: scale must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<RealVector> out;
  for (int c = 0; c < count; ++c) {
    RealVector b(t);
    for (int i = 0; i < t; ++i) b[i] = normal(rng);
    out.push_back(std::move(b));
  }
  return out;
}

inline GroupElement exponentiate(const AlgebraRep& rep, const RealVector& b) {
  return {b, expm(rep.combination(b))};
}

inline std::vector<GroupElement> exponentiate(const AlgebraRep& rep, std::span<const RealVector> coeffs) {
  std::vector<GroupElement> out;
  out.reserve(coeffs.size());
  for (const auto& b : coeffs) out.push_back(exponentiate(rep, b));
  return out;
}

inline std::vector<GroupElement> sample_group_elements(const AlgebraRep& rep, int count, double scale,
                                                       std::uint64_t seed) {
  const auto coeffs = sample_coefficients(rep.algebra().dim(), count, scale, seed);
  return exponentiate(rep, coeffs);
}

/// (rho1 (x) rho2)(a) = rho1(a) (x) rho2(a), requiring the same a.
inline GroupElement tensor_element(const GroupElement& a, const GroupElement& b) {
  if (a.coefficients.size() != b.coefficients.size() || a.coefficients != b.coefficients)
    throw DomainError("tensor_element: elements were sampled at different group points");
  return {a.coefficients, kron(a.matrix, b.matrix)};
}

/// Stacks vec(C P(a) - Q(a) C) = M vec(C) for each sampled a.
///
/// C is n3 x N with N = n1 n2 and vec(C) is row-major: C(a, c) sits at column
/// a * N + c. Rows of block k are ordered the same way over (a, b) of the
/// n3 x N residual.
inline Matrix build_cg_constraints(std::span<const GroupElement> product, std::span<const GroupElement> target) {
  if (product.size() != target.size()) throw DomainError("build_cg_constraints: element lists differ in length");
  if (product.empty()) throw DomainError("build_cg_constraints: no group elements");
  const Eigen::Index big = product.front().matrix.rows();
  const Eigen::Index n3 = target.front().matrix.rows();
  const Eigen::Index block = n3 * big;
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(product.size()) * block, block);
  for (std::size_t k = 0; k < product.size(); ++k) {
    const auto& p = product[k];
    const auto& q = target[k];
    if (p.coefficients.size() != q.coefficients.size() || p.coefficients != q.coefficients)
      throw DomainError("build_cg_constraints: element " + std::to_string(k) + " is misaligned");
    if (p.matrix.rows() != big || q.matrix.rows() != n3) throw DomainError("build_cg_constraints: inconsistent sizes");
    const Eigen::Index base = static_cast<Eigen::Index>(k) * block;
    for (Eigen::Index a = 0; a < n3; ++a)
      for (Eigen::Index b = 0; b < big; ++b) {
        const Eigen::Index row = base + a * big + b;
        for (Eigen::Index c = 0; c < big; ++c) m(row, a * big + c) += p.matrix(c, b);
        for (Eigen::Index d = 0; d < n3; ++d) m(row, d * big + b) -= q.matrix(a, d);
      }
  }
  return m;
}

enum class Divergence { divergent, non_divergent, inconclusive };

inline const char* to_string(Divergence d) {
  switch (d) {
    case Divergence::divergent: return "divergent";
    case Divergence::non_divergent: return "non_divergent";
    case Divergence::inconclusive: return "inconclusive";
  }
  return "unknown";
}

struct CGOptions {
  int samples = 8;
  double scale = 0.5;
  std::uint64_t seed = 0;
  double divergent_threshold = 1e4;
  double non_divergent_threshold = 1e2;
  /// Extra draws with fresh seeds when r lands between the thresholds.
  int max_resamples = 3;
  /// Singular values below this fraction of the largest count as null.
  double null_tolerance = 1e-6;
  int heldout = 3;
};

struct CGSolution {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  RealVector singular_values;  // ascending
  double ratio = 1.0;
  Divergence verdict = Divergence::non_divergent;
  int nullspace_dim = 0;
  /// Each element is an n3 x (n1 n2) coefficient matrix with |C|_F = 1.
  std::vector<Matrix> basis;
  int samples = 0;
  /// Largest |C (rho1 (x) rho2)(a) - rho3(a) C|_F / |C|_F over held-out a.
  double heldout_residual = 0.0;
  int attempts = 1;
};

/// SV_2 / SV_1 with 0/0 read as 1 and x/0 as infinity.
inline double diagnostic_ratio(const RealVector& ascending) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (ascending.size() == 0) return 1.0;
  if (ascending.size() == 1) return ascending[0] == 0.0 ? inf : 1.0;
  if (ascending[0] == 0.0) return ascending[1] == 0.0 ? 1.0 : inf;
  return ascending[1] / ascending[0];
}

inline Divergence classify_ratio(double r, const CGOptions& opt) {
  if (r >= opt.divergent_threshold) return Divergence::divergent;
  if (r < opt.non_divergent_threshold) return Divergence::non_divergent;
  return Divergence::inconclusive;
}

inline double intertwiner_residual(const Matrix& c, const AlgebraRep& rep1, const AlgebraRep& rep2,
                                   const AlgebraRep& rep3, std::span<const RealVector> coeffs) {
  double worst = 0.0;
  const double norm = c.norm();
  for (const auto& b : coeffs) {
    const Matrix p = kron(expm(rep1.combination(b)), expm(rep2.combination(b)));
    const Matrix q = expm(rep3.combination(b));
    worst = std::max(worst, (c * p - q * c).norm() / (norm > 0.0 ? norm : 1.0));
  }
  return worst;
}

namespace detail {

inline CGSolution cg_solve_once(const AlgebraRep& rep1, const AlgebraRep& rep2, const AlgebraRep& rep3,
                                const CGOptions& opt, std::uint64_t seed) {
  const int t = rep1.algebra().dim();
  const auto coeffs = sample_coefficients(t, opt.samples, opt.scale, derive_seed(seed, "cg-samples"));
  const auto g1 = exponentiate(rep1, coeffs);
  const auto g2 = exponentiate(rep2, coeffs);
  const auto g3 = exponentiate(rep3, coeffs);
  std::vector<GroupElement> product;
  for (std::size_t k = 0; k < coeffs.size(); ++k) product.push_back(tensor_element(g1[k], g2[k]));
  const Matrix constraints = build_cg_constraints(product, g3);

  CGSolution sol;
  sol.rows = constraints.rows();
  sol.cols = constraints.cols();
  sol.samples = opt.samples;
  auto svd = svd_values_and_nullspace(constraints, constraints.cols());
  sol.singular_values = svd.singular_values;
  sol.ratio = diagnostic_ratio(sol.singular_values);
  sol.verdict = classify_ratio(sol.ratio, opt);

  const double largest = sol.singular_values.maxCoeff();
  for (Eigen::Index i = 0; i < sol.singular_values.size(); ++i)
    if (sol.singular_values[i] <= opt.null_tolerance * largest) ++sol.nullspace_dim;

  const Eigen::Index n3 = rep3.dim();
  const Eigen::Index big = rep1.dim() * rep2.dim();
  const auto heldout = sample_coefficients(t, opt.heldout, opt.scale, derive_seed(seed, "cg-heldout"));
  for (int d = 0; d < sol.nullspace_dim; ++d) {
    Matrix c(n3, big);
    for (Eigen::Index a = 0; a < n3; ++a)
      for (Eigen::Index b = 0; b < big; ++b) c(a, b) = svd.smallest_vectors(a * big + b, d);
    sol.heldout_residual = std::max(sol.heldout_residual, intertwiner_residual(c, rep1, rep2, rep3, heldout));
    sol.basis.push_back(std::move(c));
  }
  return sol;
}

}  // namespace detail

/// Samples shared group elements, solves for every C with
/// C (rho1 (x) rho2) = rho3 C and reports singular values, r and the
/// nullspace basis. Resamples with fresh seeds while r is inconclusive.
inline CGSolution cg_solve(const AlgebraRep& rep1, const AlgebraRep& rep2, const AlgebraRep& rep3,
                           const CGOptions& opt = {}) {
  require_same_algebra(rep1, rep2);
  require_same_algebra(rep1, rep3);
  if (opt.samples < 1) throw DomainError("cg_solve: need at least one sample");
  CGSolution sol = detail::cg_solve_once(rep1, rep2, rep3, opt, opt.seed);
  for (int attempt = 1; attempt <= opt.max_resamples && sol.verdict == Divergence::inconclusive; ++attempt) {
    sol = detail::cg_solve_once(rep1, rep2, rep3, opt, derive_seed(opt.seed, "cg-resample", attempt));
    sol.attempts = attempt + 1;
  }
  return sol;
}

// -------------------------------------------------------------------------
// Schur's lemma

struct SchurMatch {
  std::size_t index;
  std::string label;
  /// Maps the learned space onto the candidate's: C rho(a) = rho_candidate(a) C.
  Matrix intertwiner;
  double condition_number;
  double ratio;
};

struct SchurResult {
  std::optional<SchurMatch> match;
  /// One cell per candidate: cg_solve(trivial, learned, candidate).
  std::vector<CGSolution> cells;
  /// Some candidate admits two or more independent intertwiners.
  bool multiplicity = false;
  /// More than one candidate diverged.
  bool ambiguous = false;
};

inline SchurResult schur_isomorphism_test(const AlgebraRep& learned, const std::vector<AlgebraRep>& candidates,
                                          const CGOptions& opt = {}) {
  const AlgebraRep one = trivial_rep(learned.algebra());
  SchurResult out;
  std::vector<std::size_t> divergent;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    CGOptions cell = opt;
    cell.seed = derive_seed(opt.seed, "schur", i);
    out.cells.push_back(cg_solve(one, learned, candidates[i], cell));
    const auto& sol = out.cells.back();
    if (sol.nullspace_dim >= 2) out.multiplicity = true;
    if (sol.verdict == Divergence::divergent && sol.nullspace_dim == 1) divergent.push_back(i);
  }
  out.ambiguous = divergent.size() > 1;
  if (divergent.size() == 1) {
    const std::size_t i = divergent.front();
    const auto& sol = out.cells[i];
    const Matrix& c = sol.basis.front();
    const double cond = c.rows() == c.cols() ? condition_number(c) : std::numeric_limits<double>::infinity();
    if (std::isfinite(cond)) out.match = SchurMatch{i, candidates[i].label(), c, cond, sol.ratio};
  }
  return out;
}

// -------------------------------------------------------------------------
// Tensor-product structure

struct TensorStructureReport {
  std::vector<std::string> rows;  // rho1 labels
  std::vector<std::string> cols;  // rho2 labels
  std::vector<std::vector<double>> r_values;
  std::vector<std::vector<int>> nullspace_dims;
  std::vector<std::vector<Divergence>> verdicts;
  std::vector<std::vector<double>> expected_r_values;
  std::vector<std::vector<bool>> expected_divergent;
  std::vector<std::vector<double>> heldout_residuals;
  bool match = false;
};

/// Reference verdicts for one tensor-structure grid, reusable across
/// candidate reps of the same algebra.
struct ExpectedStructure {
  std::vector<std::vector<double>> r_values;
  std::vector<std::vector<Divergence>> verdicts;
};

inline std::uint64_t tensor_cell_seed(const CGOptions& opt, std::size_t i, std::size_t j, std::size_t ncols) {
  return derive_seed(opt.seed, "tensor-structure", i * ncols + j);
}

inline ExpectedStructure expected_structure(const AlgebraRep& reference, const std::vector<AlgebraRep>& rho1s,
                                            const std::vector<AlgebraRep>& rho2s, const CGOptions& opt = {}) {
  ExpectedStructure out;
  for (std::size_t i = 0; i < rho1s.size(); ++i) {
    out.r_values.emplace_back();
    out.verdicts.emplace_back();
    for (std::size_t j = 0; j < rho2s.size(); ++j) {
      CGOptions cell = opt;
      cell.seed = tensor_cell_seed(opt, i, j, rho2s.size());
      const auto sol = cg_solve(reference, rho1s[i], rho2s[j], cell);
      out.r_values.back().push_back(sol.ratio);
      out.verdicts.back().push_back(sol.verdict);
    }
  }
  return out;
}

/// Grid of cg_solve(learned, rho1, rho2) next to precomputed reference
/// verdicts. `match` holds when every cell is conclusive and the learned rep
/// diverges exactly where the reference does.
inline TensorStructureReport tensor_structure_report(const AlgebraRep& learned, const ExpectedStructure& expected,
                                                     const std::vector<AlgebraRep>& rho1s,
                                                     const std::vector<AlgebraRep>& rho2s, const CGOptions& opt = {}) {
  if (expected.verdicts.size() != rho1s.size()) throw DomainError("tensor_structure_report: expected grid shape mismatch");
  TensorStructureReport rep;
  for (const auto& r : rho1s) rep.rows.push_back(r.label());
  for (const auto& r : rho2s) rep.cols.push_back(r.label());
  bool match = true;
  for (std::size_t i = 0; i < rho1s.size(); ++i) {
    if (expected.verdicts[i].size() != rho2s.size())
      throw DomainError("tensor_structure_report: expected grid shape mismatch");
    rep.r_values.emplace_back();
    rep.nullspace_dims.emplace_back();
    rep.verdicts.emplace_back();
    rep.expected_r_values.emplace_back();
    rep.expected_divergent.emplace_back();
    rep.heldout_residuals.emplace_back();
    for (std::size_t j = 0; j < rho2s.size(); ++j) {
      CGOptions cell = opt;
      cell.seed = tensor_cell_seed(opt, i, j, rho2s.size());
      const auto got = cg_solve(learned, rho1s[i], rho2s[j], cell);
      const Divergence want = expected.verdicts[i][j];
      const bool expected_div = want == Divergence::divergent;
      rep.r_values.back().push_back(got.ratio);
      rep.nullspace_dims.back().push_back(got.nullspace_dim);
      rep.verdicts.back().push_back(got.verdict);
      rep.expected_r_values.back().push_back(expected.r_values[i][j]);
      rep.expected_divergent.back().push_back(expected_div);
      rep.heldout_residuals.back().push_back(got.heldout_residual);
      if (got.verdict == Divergence::inconclusive || want == Divergence::inconclusive ||
          (got.verdict == Divergence::divergent) != expected_div)
        match = false;
    }
  }
  rep.match = match;
  return rep;
}

inline TensorStructureReport tensor_structure_report(const AlgebraRep& learned, const AlgebraRep& reference,
                                                     const std::vector<AlgebraRep>& rho1s,
                                                     const std::vector<AlgebraRep>& rho2s, const CGOptions& opt = {}) {
  require_same_algebra(learned, reference);
  return tensor_structure_report(learned, expected_structure(reference, rho1s, rho2s, opt), rho1s, rho2s, opt);
}

// -------------------------------------------------------------------------
// Irreducibility verification against analytic reps

/// The analytic irreducible rep a learned rep of `dim` is compared against:
/// spin (dim-1)/2 for so3 and so21, (j, j) with (2j+1)^2 = dim for so31.
inline std::optional<AlgebraRep> analytic_reference(const StructureConstants& algebra, int dim) {
  const auto name = builtin_name(algebra);
  if (!name || dim < 1) return std::nullopt;
  if (*name == "so3") return spin_rep_so3((dim - 1) / 2.0);
  if (*name == "so21") return rep_so21((dim - 1) / 2.0);
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(dim))));
  if (side * side != dim) return std::nullopt;
  return rep_so31((side - 1) / 2.0, (side - 1) / 2.0);
}

struct ProbeReps {
  std::vector<AlgebraRep> rho1s;
  std::vector<AlgebraRep> rho2s;
};

/// Known reps tensored with the learned one. The first rho1 is trivial, so
/// row 0 of the grid is the Schur row.
inline ProbeReps default_probes(const StructureConstants& algebra) {
  const auto name = builtin_name(algebra);
  if (!name) throw DomainError("default_probes: no analytic reps for a custom algebra");
  ProbeReps p;
  if (*name == "so31") {
    for (auto [a, b] : std::vector<std::pair<double, double>>{{0, 0}, {0.5, 0}, {0, 0.5}, {0.5, 0.5}})
      p.rho1s.push_back(rep_so31(a, b));
    for (auto [a, b] : std::vector<std::pair<double, double>>{
             {0, 0}, {0.5, 0}, {0, 0.5}, {0.5, 0.5}, {1, 0}, {0, 1}, {1, 0.5}, {0.5, 1}, {1, 1}})
      p.rho2s.push_back(rep_so31(a, b));
    return p;
  }
  auto make = [&](double j) { return *name == "so3" ? spin_rep_so3(j) : rep_so21(j); };
  for (double j : {0.0, 0.5, 1.0, 2.0}) p.rho1s.push_back(make(j));
  for (double j : {0.0, 0.5, 1.0, 1.5, 2.0, 3.0}) p.rho2s.push_back(make(j));
  return p;
}

struct VerifyOptions {
  CGOptions cg;
  /// Largest accepted condition number of the Schur intertwiner.
  double max_condition = 1e6;
  /// Skip the tensor grid once the Schur row has failed.
  bool stop_early = false;
};

struct Verification {
  SchurResult schur;
  std::optional<TensorStructureReport> table;
  bool schur_ok = false;
  bool passed = false;
};

/// Checks a learned rep against `reference`: the Schur test over the rho2
/// candidates must single out the reference with a well-conditioned
/// intertwiner, and the tensor-structure grid must match.
class IrreducibilityCheck {
 public:
  IrreducibilityCheck(AlgebraRep reference, ProbeReps probes, VerifyOptions opt = {})
      : reference_(std::move(reference)), probes_(std::move(probes)), opt_(opt) {
    expected_ = expected_structure(reference_, probes_.rho1s, probes_.rho2s, opt_.cg);
  }

  const AlgebraRep& reference() const noexcept { return reference_; }
  const ProbeReps& probes() const noexcept { return probes_; }
  const ExpectedStructure& expected() const noexcept { return expected_; }

  Verification operator()(const AlgebraRep& learned) const {
    require_same_algebra(learned, reference_);
    Verification v;
    CGOptions schur_opt = opt_.cg;
    schur_opt.seed = derive_seed(opt_.cg.seed, "schur-row");
    v.schur = schur_isomorphism_test(learned, probes_.rho2s, schur_opt);
    v.schur_ok = v.schur.match && v.schur.match->label == reference_.label() &&
                 v.schur.match->condition_number <= opt_.max_condition;
    if (!v.schur_ok && opt_.stop_early) return v;
    v.table = tensor_structure_report(learned, expected_, probes_.rho1s, probes_.rho2s, opt_.cg);
    v.passed = v.schur_ok && v.table->match;
    return v;
  }

 private:
  AlgebraRep reference_;
  ProbeReps probes_;
  VerifyOptions opt_;
  ExpectedStructure expected_;
};

}  // namespace lierep
