#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "lierep/algebra.hpp"
#include "lierep/io.hpp"

using namespace lierep;

namespace {

// Independent Jacobi oracle: the Jacobi identity holds iff the adjoint
// matrices (ad_i)_{kj} = A_ijk close under the same brackets.
double adjoint_closure(const StructureConstants& sc) {
  const int t = sc.dim();
  std::vector<Eigen::MatrixXd> ad(t, Eigen::MatrixXd::Zero(t, t));
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j)
      for (int k = 0; k < t; ++k) ad[i](k, j) = sc(i, j, k);
  double worst = 0.0;
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j) {
      Eigen::MatrixXd r = ad[i] * ad[j] - ad[j] * ad[i];
      for (int k = 0; k < t; ++k) r -= sc(i, j, k) * ad[k];
      worst = std::max(worst, r.cwiseAbs().maxCoeff());
    }
  return worst;
}

}  // namespace

TEST(Algebra, So3Entries) {
  const auto a = so3_constants();
  EXPECT_EQ(a.dim(), 3);
  EXPECT_EQ(a(0, 1, 2), 1.0);
  EXPECT_EQ(a(1, 0, 2), -1.0);
  EXPECT_EQ(a(2, 0, 1), 1.0);
  EXPECT_EQ(a(1, 2, 0), 1.0);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(a(i, i, k), 0.0);
  EXPECT_EQ(jacobi_residual(a), 0.0);
}

TEST(Algebra, So21Entries) {
  const auto a = so21_constants();
  EXPECT_EQ(a(0, 1, 2), -1.0);  // [K_x, K_y] = -J_z
  EXPECT_EQ(a(2, 0, 1), 1.0);   // [J_z, K_x] = K_y
  EXPECT_EQ(a(2, 1, 0), -1.0);  // [J_z, K_y] = -K_x
  EXPECT_LE(jacobi_residual(a), 1e-12);
  EXPECT_EQ(antisymmetry_residual(a), 0.0);
}

TEST(Algebra, So31Entries) {
  const auto a = so31_constants();
  EXPECT_EQ(a.dim(), 6);
  EXPECT_EQ(a(3, 4, 2), -1.0);  // [K_1, K_2] = -J_3
  EXPECT_EQ(a(0, 4, 5), 1.0);   // [J_1, K_2] = K_3
  EXPECT_EQ(a(1, 3, 5), -1.0);  // [J_2, K_1] = -K_3
  EXPECT_EQ(a(0, 1, 2), 1.0);
  EXPECT_LE(jacobi_residual(a), 1e-12);
}

TEST(Algebra, BuiltinsValidateAgainstAdjointOracle) {
  for (const char* name : {"so3", "so21", "so31"}) {
    const auto a = *builtin_algebra(name);
    EXPECT_TRUE(validate(a).ok()) << name;
    EXPECT_LE(adjoint_closure(a), 1e-12) << name;
    EXPECT_EQ(builtin_name(a), std::optional<std::string>(name));
  }
  EXPECT_FALSE(builtin_algebra("so4").has_value());
}

TEST(Algebra, AntisymmetryViolation) {
  std::vector<double> v(27, 0.0);
  v[(0 * 3 + 0) * 3 + 1] = 1.0;  // A[0][0][1]
  const auto report = validate(StructureConstants(3, v));
  ASSERT_FALSE(report.ok());
  EXPECT_EQ(report.violations.front().identity, "antisymmetry");
  EXPECT_DOUBLE_EQ(report.violations.front().max_residual, 2.0);
}

TEST(Algebra, RandomTensorBreaksJacobi) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<StructureConstants::Entry> br;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      for (int k = 0; k < 4; ++k) br.push_back({i, j, k, n(rng)});
  const auto sc = StructureConstants::from_brackets(4, br);
  EXPECT_EQ(antisymmetry_residual(sc), 0.0);
  const auto report = validate(sc);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_EQ(report.violations[0].identity, "jacobi");
  EXPECT_GT(report.violations[0].max_residual, 0.0);
  EXPECT_NEAR(report.violations[0].max_residual, jacobi_residual(sc), 0.0);
  EXPECT_GT(adjoint_closure(sc), 1e-6);
}

TEST(Algebra, ShapeMismatchIsStructural) {
  EXPECT_THROW(StructureConstants(3, std::vector<double>(26)), StructuralError);
  EXPECT_THROW(StructureConstants(0, {}), StructuralError);
  EXPECT_THROW(so3_constants().permuted({0, 1}), StructuralError);
}

TEST(AlgebraProperty, RelabelingKeepsValidity) {
  for (const char* name : {"so3", "so21", "so31"}) {
    const auto a = *builtin_algebra(name);
    std::vector<int> p(a.dim());
    std::iota(p.begin(), p.end(), 0);
    int count = 0;
    do {
      const auto b = a.permuted(p);
      EXPECT_TRUE(validate(b).ok()) << name;
      EXPECT_LE(adjoint_closure(b), 1e-12);
      ++count;
    } while (std::next_permutation(p.begin(), p.end()) && count < 60);
  }
}

TEST(AlgebraIo, JsonRoundTrip) {
  const auto a = so31_constants();
  EXPECT_EQ(algebra_to_json(a), Json("so31"));
  const auto back = algebra_from_json(algebra_to_json(a, false));
  EXPECT_EQ(back, a);
  EXPECT_EQ(algebra_from_json(Json("so21")), so21_constants());
  EXPECT_THROW(algebra_from_json(Json("sl2")), std::exception);
  EXPECT_THROW(algebra_from_json(Json{{"dim", 2}, {"structure_constants", {{{0, 1}}}}}), StructuralError);
}
