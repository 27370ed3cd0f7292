#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "common/error.hpp"
#include "numkernel/linalg.hpp"
#include "numkernel/matrix.hpp"
#include "numkernel/rng.hpp"

using namespace aotmem;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

// Plain Gaussian elimination on the normal equations, kept separate from the
// SVD route on purpose.
std::vector<double> normal_equations(const Matrix& a, std::span<const double> y) {
  const std::size_t n = a.cols();
  std::vector<std::vector<double>> g(n, std::vector<double>(n + 1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t r = 0; r < a.rows(); ++r) g[i][j] += a(r, i) * a(r, j);
    for (std::size_t r = 0; r < a.rows(); ++r) g[i][n] += a(r, i) * y[r];
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(g[r][c]) > std::abs(g[p][c])) p = r;
    std::swap(g[c], g[p]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = g[r][c] / g[c][c];
      for (std::size_t k = c; k <= n; ++k) g[r][k] -= f * g[c][k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = g[i][n] / g[i][i];
  return x;
}

}  // namespace

TEST(Svd, IdentityHasUnitSpectrum) {
  const SvdResult s = svd(Matrix::identity(3));
  ASSERT_EQ(s.singular_values.size(), 3u);
  for (double v : s.singular_values) EXPECT_NEAR(v, 1.0, 1e-14);
  EXPECT_EQ(s.numeric_rank, 3u);
}

TEST(Svd, DiagonalSortedDescending) {
  const SvdResult s = svd(Matrix{{2, 0}, {0, 3}});
  EXPECT_NEAR(s.singular_values[0], 3.0, 1e-14);
  EXPECT_NEAR(s.singular_values[1], 2.0, 1e-14);
}

TEST(Svd, OuterProductHasRankOne) {
  Rng rng(3);
  std::vector<double> u(5), v(5);
  for (auto& x : u) x = rng.normal();
  for (auto& x : v) x = rng.normal();
  Matrix m(5, 5);
  add_outer(m, u, v);
  EXPECT_EQ(numeric_rank(m), 1u);
}

TEST(Svd, ReconstructsInput) {
  const Matrix a = random_matrix(7, 4, 11);
  const SvdResult s = svd(a);
  const Matrix back = s.U * Matrix::diagonal(s.singular_values) * s.Vt;
  EXPECT_LT((back - a).max_abs(), 1e-12);
}

TEST(Svd, EmptyMatrixIsRankZero) {
  EXPECT_EQ(numeric_rank(Matrix(3, 0)), 0u);
}

TEST(Lstsq, IdentitySystemReturnsRightHandSide) {
  const Matrix b = random_matrix(3, 2, 5);
  EXPECT_LT((lstsq_min_norm(Matrix::identity(3), b) - b).max_abs(), 1e-14);
}

TEST(Lstsq, OverdeterminedAveragesTargets) {
  const Matrix x = lstsq_min_norm(Matrix{{1}, {1}}, Matrix{{0}, {2}});
  EXPECT_NEAR(x(0, 0), 1.0, 1e-14);
}

TEST(Lstsq, ConsistentSquareSystem) {
  const Matrix a = random_matrix(6, 6, 21);
  const Matrix b = random_matrix(6, 3, 22);
  const Matrix x = lstsq_min_norm(a, b);
  EXPECT_LE((a * x - b).frobenius_norm(), 1e-10);
}

TEST(Lstsq, MinimumNormOnUnderdeterminedSystem) {
  // x1 + x2 = 2 has minimum-norm solution (1, 1).
  const Matrix x = lstsq_min_norm(Matrix{{1, 1}}, Matrix{{2}});
  EXPECT_NEAR(x(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(x(1, 0), 1.0, 1e-14);
}

TEST(Lstsq, AgreesWithNormalEquations) {
  const Matrix a = random_matrix(12, 4, 31);
  const Matrix b = random_matrix(12, 1, 32);
  const Matrix x = lstsq_min_norm(a, b);
  const auto ref = normal_equations(a, b.col(0));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x(i, 0), ref[i], 1e-10);
}

TEST(Lstsq, ShapeMismatchIsInvalid) {
  EXPECT_THROW(lstsq_min_norm(Matrix(3, 2), Matrix(4, 1)), InvalidArgument);
}

TEST(PseudoInverse, MoorePenroseConditions) {
  Matrix a = random_matrix(5, 3, 41);
  for (std::size_t r = 0; r < 5; ++r) a(r, 2) = a(r, 0) + a(r, 1);  // rank 2
  const Matrix p = pseudo_inverse(a);
  EXPECT_LT((a * p * a - a).max_abs(), 1e-10);
  EXPECT_LT((p * a * p - p).max_abs(), 1e-10);
}

TEST(Inverse, RoundTrip) {
  const Matrix a = random_matrix(5, 5, 51) + 5.0 * Matrix::identity(5);
  EXPECT_LT((inverse(a) * a - Matrix::identity(5)).max_abs(), 1e-12);
}

TEST(Inverse, SingularThrows) {
  EXPECT_THROW(inverse(Matrix{{1, 2}, {2, 4}}), ComputationError);
}

TEST(ConditionNumber, Diagonal) {
  EXPECT_NEAR(condition_number(Matrix{{4, 0}, {0, 0.5}}), 8.0, 1e-12);
  EXPECT_TRUE(std::isinf(condition_number(Matrix{{1, 0}, {0, 0}})));
}

TEST(Softmax, ConstantInputIsUniform) {
  const Vector p = softmax(std::vector<double>{0, 0, 0});
  for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, TwoLogits) {
  const Vector p = softmax(std::vector<double>{0, 1});
  EXPECT_NEAR(p[0], 0.26894, 1e-5);
  EXPECT_NEAR(p[1], 0.73106, 1e-5);
  // Oracle: 1/(1+e).
  EXPECT_NEAR(p[0], 0.2689414213699951, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Vector p = softmax(std::vector<double>{1000, 0});
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_GE(p[1], 0.0);
  EXPECT_TRUE(std::isfinite(logsumexp(std::vector<double>{1000, 1000})));
  EXPECT_NEAR(logsumexp(std::vector<double>{1000, 1000}), 1000 + std::log(2.0), 1e-12);
}

TEST(Softmax, LogSoftmaxConsistent) {
  const std::vector<double> z{0.3, -1.2, 2.5, 0.0};
  const Vector p = softmax(z), lp = log_softmax(z);
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    EXPECT_NEAR(std::log(p[i]), lp[i], 1e-14);
    sum += p[i];
  }
  EXPECT_NEAR(sum, 1.0, 1e-15);
}

TEST(Polyfit, ExactLine) {
  const std::vector<double> xs{0, 1, 2, 3}, ys{1, 3, 5, 7};
  const FitResult f = polyfit_ls(xs, ys, FitForm::linear);
  EXPECT_NEAR(f.coefficients[0], 1.0, 1e-12);
  EXPECT_NEAR(f.coefficients[1], 2.0, 1e-12);
  EXPECT_NEAR(f.residual_norm, 0.0, 1e-12);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
}

TEST(Polyfit, AffineQuadratic) {
  const std::vector<double> xs{1, 2, 3, 4}, ys{3, 12, 27, 48};
  const FitResult f = polyfit_ls(xs, ys, FitForm::affine_quadratic);
  EXPECT_NEAR(f.coefficients[0], 0.0, 1e-10);
  EXPECT_NEAR(f.coefficients[1], 3.0, 1e-12);
  EXPECT_NEAR(f.evaluate(5.0), 75.0, 1e-9);
}

TEST(Polyfit, NoisyLinearMatchesNormalEquations) {
  Rng rng(61);
  std::vector<double> xs, ys;
  for (int i = 0; i < 20; ++i) {
    xs.push_back(i);
    ys.push_back(0.5 * i - 2.0 + 0.3 * rng.normal());
  }
  for (FitForm form : {FitForm::linear, FitForm::quadratic, FitForm::cubic}) {
    const FitResult f = polyfit_ls(xs, ys, form);
    const Matrix a = fit_design_matrix(xs, form);
    const auto ref = normal_equations(a, ys);
    double res = 0.0;
    for (std::size_t r = 0; r < xs.size(); ++r) {
      double pred = 0.0;
      for (std::size_t j = 0; j < ref.size(); ++j) pred += a(r, j) * ref[j];
      res += (pred - ys[r]) * (pred - ys[r]);
    }
    EXPECT_NEAR(f.residual_norm, std::sqrt(res), 1e-8);
    EXPECT_GT(f.r_squared, 0.9);
  }
}

TEST(Polyfit, DegenerateDesignFails) {
  const std::vector<double> xs{2, 2, 2}, ys{1, 2, 3};
  EXPECT_THROW(polyfit_ls(xs, ys, FitForm::linear), ComputationError);
}

TEST(Polyfit, FormNames) {
  EXPECT_EQ(parse_fit_form("cubic"), FitForm::cubic);
  EXPECT_EQ(to_string(FitForm::affine_quadratic), "affine_quadratic");
  EXPECT_THROW(parse_fit_form("quartic"), InvalidArgument);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SplitIsIndependentOfParentProgress) {
  Rng a(9);
  const Rng child_before = a.split(4);
  a.next_u64();
  Rng c1 = child_before, c2 = a.split(4);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(c1.next_u64(), c2.next_u64());
  Rng other = a.split(5);
  Rng c3 = a.split(4);
  EXPECT_NE(other.next_u64(), c3.next_u64());
}

TEST(Rng, UniformAndLogUniformRanges) {
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    const double w = rng.log_uniform(1.0, 300.0);
    EXPECT_GE(w, 1.0);
    EXPECT_LE(w, 300.0);
    EXPECT_LT(rng.index(7), 7u);
  }
}

TEST(Rng, NormalMoments) {
  Rng rng(8);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Matrix, StackingAndBlocks) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{5, 6}};
  const std::vector<Matrix> vs{a, b};
  const Matrix v = vstack(vs);
  EXPECT_EQ(v.rows(), 3u);
  EXPECT_EQ(v(2, 1), 6.0);
  const std::vector<Matrix> hs{a, a};
  const Matrix h = hstack(hs);
  EXPECT_EQ(h.cols(), 4u);
  EXPECT_EQ(h.block(0, 2, 2, 2), a);
  EXPECT_EQ(a.transposed()(0, 1), 3.0);
}
