#include <gtest/gtest.h>

#include <random>

#include "lierep/clebsch.hpp"
#include "test_util.hpp"

using namespace lierep;
using lierep::testing::random_coefficients;
using lierep::testing::random_matrix;

namespace {

CGOptions seeded(std::uint64_t seed) {
  CGOptions o;
  o.seed = seed;
  return o;
}

// Sum over a complete irreducible list of (multiplicity x dimension).
Eigen::Index decomposed_dim(const AlgebraRep& a, const AlgebraRep& b, const std::vector<AlgebraRep>& irreps) {
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < irreps.size(); ++i) {
    const auto sol = cg_solve(a, b, irreps[i], seeded(100 + i));
    EXPECT_LE(sol.heldout_residual, 1e-6);
    total += sol.nullspace_dim * irreps[i].dim();
  }
  return total;
}

}  // namespace

TEST(Sampling, CountSeedAndIdentity) {
  const auto r = spin_rep_so3(1);
  EXPECT_TRUE(sample_group_elements(r, 0, 0.5, 1).empty());
  const auto a = sample_group_elements(r, 4, 0.5, 7);
  const auto b = sample_group_elements(r, 4, 0.5, 7);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(a[k].coefficients, b[k].coefficients);
    EXPECT_EQ(a[k].matrix, b[k].matrix);
    EXPECT_GT(std::abs(a[k].matrix.determinant()), 0.0);
  }
  EXPECT_EQ(exponentiate(r, RealVector::Zero(3)).matrix, identity(3));
  EXPECT_THROW(sample_coefficients(3, 2, 0.0, 1), DomainError);
}

TEST(Sampling, SharedCoefficientsAcrossReps) {
  const auto coeffs = sample_coefficients(3, 5, 0.5, 3);
  const auto v = exponentiate(vector_rep_so3(), coeffs);
  const auto s = exponentiate(spin_rep_so3(1), coeffs);
  for (std::size_t k = 0; k < coeffs.size(); ++k) {
    EXPECT_EQ(v[k].coefficients, s[k].coefficients);
    // The real rotation rep stays orthogonal.
    EXPECT_LE((v[k].matrix.transpose() * v[k].matrix - identity(3)).norm(), 1e-10);
  }
  EXPECT_NO_THROW(tensor_element(v[0], s[0]));
  EXPECT_THROW(tensor_element(v[0], s[1]), DomainError);
}

TEST(Constraints, MatchDirectResidual) {
  std::mt19937_64 rng(1);
  const auto r1 = spin_rep_so3(0.5), r2 = spin_rep_so3(1), r3 = spin_rep_so3(1.5);
  const auto coeffs = sample_coefficients(3, 3, 0.5, 2);
  const auto g1 = exponentiate(r1, coeffs), g2 = exponentiate(r2, coeffs), g3 = exponentiate(r3, coeffs);
  std::vector<GroupElement> prod;
  for (int k = 0; k < 3; ++k) prod.push_back(tensor_element(g1[k], g2[k]));
  const Matrix m = build_cg_constraints(prod, g3);
  ASSERT_EQ(m.rows(), 3 * 4 * 6);
  ASSERT_EQ(m.cols(), 4 * 6);

  const Matrix c = random_matrix(4, 6, rng);
  Vector vec(24);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 6; ++b) vec[a * 6 + b] = c(a, b);
  const Vector got = m * vec;
  for (int k = 0; k < 3; ++k) {
    const Matrix res = c * prod[k].matrix - g3[k].matrix * c;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 6; ++b) EXPECT_LE(std::abs(got[k * 24 + a * 6 + b] - res(a, b)), 1e-13);
  }
}

TEST(Constraints, TrivialTripleIsZero) {
  const auto one = spin_rep_so3(0);
  const auto g = sample_group_elements(one, 3, 0.5, 1);
  std::vector<GroupElement> prod;
  for (const auto& e : g) prod.push_back(tensor_element(e, e));
  const Matrix m = build_cg_constraints(prod, g);
  EXPECT_EQ(m.norm(), 0.0);
  const auto sol = cg_solve(one, one, one);
  EXPECT_EQ(sol.nullspace_dim, 1);
}

TEST(Constraints, MisalignedElements) {
  const auto r = spin_rep_so3(1);
  const auto a = sample_group_elements(r, 2, 0.5, 1);
  const auto b = sample_group_elements(r, 2, 0.5, 2);
  EXPECT_THROW(build_cg_constraints(a, b), DomainError);
  EXPECT_THROW(build_cg_constraints(a, std::span(b).first(1)), DomainError);
  EXPECT_THROW(build_cg_constraints(std::span<const GroupElement>(), std::span<const GroupElement>()), DomainError);
}

TEST(DiagnosticRatio, Conventions) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  EXPECT_EQ(diagnostic_ratio(RealVector::Zero(0)), 1.0);
  EXPECT_EQ(diagnostic_ratio((RealVector(2) << 0.0, 0.0).finished()), 1.0);
  EXPECT_EQ(diagnostic_ratio((RealVector(2) << 0.0, 2.0).finished()), inf);
  EXPECT_EQ(diagnostic_ratio((RealVector(3) << 0.5, 2.0, 3.0).finished()), 4.0);
  const CGOptions o;
  EXPECT_EQ(classify_ratio(1e4, o), Divergence::divergent);
  EXPECT_EQ(classify_ratio(99.0, o), Divergence::non_divergent);
  EXPECT_EQ(classify_ratio(1e3, o), Divergence::inconclusive);
}

TEST(CG, SpinOneSquaredDecomposes) {
  const auto one = spin_rep_so3(1);
  for (double j : {0.0, 1.0, 2.0}) {
    const auto sol = cg_solve(one, one, spin_rep_so3(j), seeded(static_cast<std::uint64_t>(j)));
    EXPECT_EQ(sol.nullspace_dim, 1) << j;
    EXPECT_EQ(sol.verdict, Divergence::divergent) << j;
    EXPECT_GE(sol.ratio, 1e4);
    EXPECT_LE(sol.heldout_residual, 1e-6);
    ASSERT_EQ(sol.basis.size(), 1u);
    EXPECT_NEAR(sol.basis[0].norm(), 1.0, 1e-12);
  }
  const auto absent = cg_solve(one, one, spin_rep_so3(3));
  EXPECT_EQ(absent.nullspace_dim, 0);
  EXPECT_EQ(absent.verdict, Divergence::non_divergent);
  EXPECT_LT(absent.ratio, 1e2);
  EXPECT_TRUE(absent.basis.empty());
}

TEST(CG, RealVectorPairingIsDotProduct) {
  const auto v = vector_rep_so3();
  const auto sol = cg_solve(v, v, spin_rep_so3(0));
  ASSERT_EQ(sol.nullspace_dim, 1);
  const Matrix& c = sol.basis[0];
  const Complex diag = c(0, 0);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      EXPECT_LE(std::abs(c(0, a * 3 + b) - (a == b ? diag : Complex(0.0))), 1e-10);
}

TEST(CG, LorentzVectorSelfIntertwiner) {
  const auto r = rep_so31(0.5, 0.5);
  const auto sol = cg_solve(rep_so31(0, 0), r, r);
  EXPECT_EQ(sol.nullspace_dim, 1);
  EXPECT_GE(sol.ratio, 1e4);
  EXPECT_LE(sol.heldout_residual, 1e-6);
}

TEST(CGProperty, SchurOnIrreduciblesIsWellConditioned) {
  std::vector<AlgebraRep> irreps{spin_rep_so3(0.5), spin_rep_so3(2), rep_so21(1), rep_so21(1.5),
                                 rep_so31(0.5, 0), rep_so31(1, 0.5), rep_so31(0.5, 0.5)};
  for (const auto& r : irreps) {
    const auto one = trivial_rep(r.algebra());
    const auto sol = cg_solve(one, r, r);
    ASSERT_EQ(sol.nullspace_dim, 1) << r.label();
    EXPECT_LE(condition_number(sol.basis[0]), 1e6) << r.label();
  }
}

TEST(CGProperty, CompleteReducibilityAccountsForEveryDimension) {
  std::vector<AlgebraRep> so3;
  for (int twice = 0; twice <= 6; ++twice) so3.push_back(spin_rep_so3(twice / 2.0));
  EXPECT_EQ(decomposed_dim(spin_rep_so3(1), spin_rep_so3(1), so3), 9);
  EXPECT_EQ(decomposed_dim(spin_rep_so3(1), spin_rep_so3(0.5), so3), 6);
  EXPECT_EQ(decomposed_dim(spin_rep_so3(1.5), spin_rep_so3(1), so3), 12);

  std::vector<AlgebraRep> so31;
  for (int a = 0; a <= 2; ++a)
    for (int b = 0; b <= 2; ++b) so31.push_back(rep_so31(a / 2.0, b / 2.0));
  EXPECT_EQ(decomposed_dim(rep_so31(0.5, 0), rep_so31(0, 0.5), so31), 4);
  EXPECT_EQ(decomposed_dim(rep_so31(0.5, 0), rep_so31(0.5, 0), so31), 4);
  EXPECT_EQ(decomposed_dim(rep_so31(0.5, 0.5), rep_so31(0.5, 0), so31), 8);
}

TEST(CGProperty, RatiosStableUnderMoreSamples) {
  const auto one = spin_rep_so3(1);
  for (double j : {0.0, 0.5, 1.0, 2.0, 3.0}) {
    const auto target = spin_rep_so3(j);
    for (double j1 : {0.5, 1.0}) {
      CGOptions k8 = seeded(4), k16 = seeded(4);
      k16.samples = 16;
      const auto a = cg_solve(one, spin_rep_so3(j1), target, k8);
      const auto b = cg_solve(one, spin_rep_so3(j1), target, k16);
      EXPECT_EQ(a.verdict, b.verdict);
      EXPECT_EQ(a.nullspace_dim, b.nullspace_dim);
      if (a.verdict == Divergence::non_divergent) {
        EXPECT_LE(a.ratio, 10.0 * b.ratio);
        EXPECT_LE(b.ratio, 10.0 * a.ratio);
      }
    }
  }
}

TEST(CG, Errors) {
  EXPECT_THROW(cg_solve(spin_rep_so3(1), rep_so21(1), spin_rep_so3(1)), DomainError);
  CGOptions o;
  o.samples = 0;
  EXPECT_THROW(cg_solve(spin_rep_so3(1), spin_rep_so3(1), spin_rep_so3(1), o), DomainError);
}

TEST(Schur, RecoversConjugatedSpinOne) {
  std::mt19937_64 rng(5);
  const Matrix s = identity(3) + 0.3 * random_matrix(3, 3, rng);
  const auto learned = conjugate(spin_rep_so3(1), s, "learned");
  const std::vector<AlgebraRep> candidates{spin_rep_so3(0), spin_rep_so3(0.5), spin_rep_so3(1), spin_rep_so3(2)};
  const auto res = schur_isomorphism_test(learned, candidates);
  ASSERT_TRUE(res.match.has_value());
  EXPECT_EQ(res.match->label, "1");
  EXPECT_EQ(res.match->index, 2u);
  EXPECT_LE(res.match->condition_number, 1e3);
  EXPECT_FALSE(res.multiplicity);
  EXPECT_FALSE(res.ambiguous);
  // The intertwiner carries the learned generators onto the candidate's.
  const Matrix& c = res.match->intertwiner;
  for (int i = 0; i < 3; ++i)
    EXPECT_LE((c * learned.generator(i) - candidates[2].generator(i) * c).norm(), 1e-8 * c.norm());
}

TEST(Schur, DoubledSpinHalfFlagsMultiplicity) {
  const auto doubled = direct_sum(spin_rep_so3(0.5), spin_rep_so3(0.5));
  const auto res = schur_isomorphism_test(doubled, {spin_rep_so3(0.5)});
  EXPECT_FALSE(res.match.has_value());
  EXPECT_TRUE(res.multiplicity);
  // Hom(1/2 + 1/2, 1/2) over the complex numbers is two-dimensional.
  EXPECT_EQ(res.cells[0].nullspace_dim, 2);
}

TEST(Schur, NonIsomorphicIrreducibleHasNoMatch) {
  const auto res = schur_isomorphism_test(spin_rep_so3(2), {spin_rep_so3(0), spin_rep_so3(1)});
  EXPECT_FALSE(res.match.has_value());
  EXPECT_FALSE(res.multiplicity);
  for (const auto& c : res.cells) EXPECT_EQ(c.nullspace_dim, 0);
}

TEST(Schur, ZeroRepIsReducible) {
  const auto zero = trivial_rep(so3_constants(), 3);
  const auto res = schur_isomorphism_test(zero, default_probes(so3_constants()).rho2s);
  EXPECT_FALSE(res.match.has_value());
  EXPECT_TRUE(res.multiplicity);
}

TEST(TensorStructure, SelfComparisonMatches) {
  for (const char* name : {"so3", "so21"}) {
    const auto alg = *builtin_algebra(name);
    const auto ref = *analytic_reference(alg, 3);
    const auto probes = default_probes(alg);
    const auto rep = tensor_structure_report(ref, ref, probes.rho1s, probes.rho2s);
    EXPECT_TRUE(rep.match) << name;
    ASSERT_EQ(rep.r_values.size(), probes.rho1s.size());
    for (const auto& row : rep.r_values) EXPECT_EQ(row.size(), probes.rho2s.size());
    EXPECT_EQ(rep.rows.front(), "0");
    // 1 x 1 contains 0, 1, 2 and nothing else.
    const auto& one_row = rep.expected_divergent[2];
    EXPECT_EQ(one_row, (std::vector<bool>{true, false, true, false, true, false}));
  }
}

TEST(TensorStructure, ConjugatedLorentzVectorMatches) {
  std::mt19937_64 rng(6);
  const auto ref = rep_so31(0.5, 0.5);
  const auto learned = conjugate(ref, identity(4) + 0.3 * random_matrix(4, 4, rng), "learned");
  const auto probes = default_probes(so31_constants());
  const auto rep = tensor_structure_report(learned, ref, probes.rho1s, probes.rho2s);
  EXPECT_TRUE(rep.match);
  for (const auto& row : rep.heldout_residuals)
    for (double r : row) EXPECT_LE(r, 1e-6);
}

TEST(TensorStructure, WrongRepDoesNotMatch) {
  const auto probes = default_probes(so21_constants());
  const auto rep = tensor_structure_report(direct_sum(rep_so21(0), rep_so21(0.5)), rep_so21(1), probes.rho1s,
                                           probes.rho2s);
  EXPECT_FALSE(rep.match);
}

TEST(Verification, AnalyticReferenceAndProbes) {
  EXPECT_EQ(analytic_reference(so3_constants(), 3)->label(), "1");
  EXPECT_EQ(analytic_reference(so21_constants(), 4)->label(), "3/2");
  EXPECT_EQ(analytic_reference(so31_constants(), 4)->label(), "(1/2,1/2)");
  EXPECT_FALSE(analytic_reference(so31_constants(), 3).has_value());
  EXPECT_FALSE(analytic_reference(so3_constants(), 0).has_value());
  std::vector<double> custom(27, 0.0);
  EXPECT_FALSE(analytic_reference(StructureConstants(3, custom), 3).has_value());
  EXPECT_THROW(default_probes(StructureConstants(3, custom)), DomainError);
  const auto p = default_probes(so31_constants());
  EXPECT_EQ(p.rho1s.size(), 4u);
  EXPECT_EQ(p.rho2s.size(), 9u);
  EXPECT_TRUE(p.rho1s.front().is_trivial());
}

TEST(Verification, CheckAcceptsIsomorphicAndRejectsReducible) {
  std::mt19937_64 rng(7);
  const IrreducibilityCheck check(rep_so21(1), default_probes(so21_constants()));
  const auto good = check(conjugate(rep_so21(1), identity(3) + 0.3 * random_matrix(3, 3, rng), "x"));
  EXPECT_TRUE(good.schur_ok);
  EXPECT_TRUE(good.passed);
  ASSERT_TRUE(good.table.has_value());

  const auto bad = check(direct_sum(rep_so21(0), rep_so21(0.5)));
  EXPECT_FALSE(bad.passed);
  EXPECT_FALSE(bad.schur_ok);

  VerifyOptions early;
  early.stop_early = true;
  const IrreducibilityCheck quick(rep_so21(1), default_probes(so21_constants()), early);
  const auto v = quick(trivial_rep(so21_constants(), 3));
  EXPECT_FALSE(v.passed);
  EXPECT_FALSE(v.table.has_value());
}
