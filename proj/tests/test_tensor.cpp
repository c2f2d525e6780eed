#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace idgnn {
namespace {

using testing::dense;

SparseMatrix random_sparse(Index n, double density, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> val(0.0, 1.0);
  std::vector<Triplet> t;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (u(rng) < density) t.push_back({i, j, val(rng)});
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

TEST(SparseMatrix, TripletsAreSortedAndDuplicatesSummed) {
  auto m = SparseMatrix::from_triplets(2, 3, {{1, 2, 1.0}, {0, 1, 2.0}, {1, 2, 0.5}, {1, 0, -1.0}});
  EXPECT_EQ(m.nnz(), 3u);
  EXPECT_DOUBLE_EQ(m.at(1, 2), 1.5);
  EXPECT_DOUBLE_EQ(m.at(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(m.at(0, 0), 0.0);
  EXPECT_EQ(std::vector<Index>(m.columns().begin(), m.columns().end()), (std::vector<Index>{1, 0, 2}));
}

TEST(SparseMatrix, RejectsBrokenInvariants) {
  EXPECT_THROW(SparseMatrix::from_triplets(2, 2, {{2, 0, 1.0}}), DimensionError);
  EXPECT_THROW(SparseMatrix(2, 2, {0, 2, 2}, {1, 0}, {1.0, 1.0}), InvalidArgument);
  EXPECT_THROW(SparseMatrix(2, 2, {0, 1, 1}, {0}, {std::nan("")}), InvalidArgument);
  EXPECT_THROW(SparseMatrix(2, 2, {0, 1}, {0}, {1.0}), DimensionError);
}

TEST(SparseMatrix, TransposeAndDenseRoundTrip) {
  std::mt19937_64 rng(3);
  auto a = random_sparse(6, 0.4, rng);
  EXPECT_EQ(SparseMatrix::from_dense(a.to_dense()), a);
  EXPECT_TRUE(dense(a.transposed()).isApprox(dense(a).transpose(), 0.0));
}

TEST(Spmm, IdentityAndZero) {
  std::mt19937_64 rng(1);
  DenseMatrix z = testing::random_dense(3, 4, rng);
  EXPECT_EQ(spmm(z, SparseMatrix::identity(4)), z);
  EXPECT_EQ(spmm(DenseMatrix(3, 4), random_sparse(4, 0.5, rng)), DenseMatrix(3, 4));
}

TEST(Spmm, MatchesDenseProduct) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    DenseMatrix z = testing::random_dense(3, 4, rng);
    SparseMatrix a = random_sparse(4, 0.5, rng);
    EXPECT_TRUE(dense(spmm(z, a)).isApprox(dense(z) * dense(a), 1e-14));
    EXPECT_TRUE(dense(spmm_transposed(z, a)).isApprox(dense(z) * dense(a).transpose(), 1e-14));
  }
  EXPECT_THROW(spmm(DenseMatrix(2, 3), SparseMatrix::identity(4)), DimensionError);
}

TEST(DenseOps, ProductsAgreeWithEigen) {
  std::mt19937_64 rng(4);
  DenseMatrix a = testing::random_dense(3, 5, rng), b = testing::random_dense(5, 2, rng), c = testing::random_dense(4, 5, rng);
  EXPECT_TRUE(dense(matmul(a, b)).isApprox(dense(a) * dense(b), 1e-14));
  EXPECT_TRUE(dense(matmul_nt(a, c)).isApprox(dense(a) * dense(c).transpose(), 1e-14));
  EXPECT_TRUE(dense(matmul_tn(a, a)).isApprox(dense(a).transpose() * dense(a), 1e-14));
  EXPECT_THROW(matmul(a, a), DimensionError);
  EXPECT_EQ(transpose(transpose(a)), a);
}

TEST(Vec, ColumnMajorLayoutAndInverse) {
  DenseMatrix m{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(vec(m), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  const auto v = vec(m);
  EXPECT_EQ(unvec(v, 2, 3), m);
  EXPECT_THROW(unvec(v, 4, 2), DimensionError);
}

TEST(KronApply, IdentityAndZero) {
  std::mt19937_64 rng(5);
  DenseMatrix z = testing::random_dense(2, 3, rng);
  const auto eye_w = DenseMatrix::identity(2);
  const auto eye_a = SparseMatrix::identity(3);
  EXPECT_EQ(kron_apply({eye_w, eye_a}, z), z);
  const DenseMatrix w = testing::random_dense(2, 2, rng);
  EXPECT_EQ(kron_apply({w, eye_a}, DenseMatrix(2, 3)), DenseMatrix(2, 3));
}

TEST(KronApply, MatchesMaterializedKroneckerProduct) {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    const DenseMatrix w = testing::random_dense(2, 2, rng);
    const SparseMatrix a = random_sparse(3, 0.6, rng);
    const DenseMatrix z = testing::random_dense(2, 3, rng);
    const Eigen::VectorXd expect = testing::kron(dense(a).transpose(), dense(w)) * testing::vec_of(dense(z));
    const Eigen::VectorXd got = testing::vec_of(dense(kron_apply({w, a}, z)));
    EXPECT_LE((expect - got).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(InfinityNorm, HandExamples) {
  EXPECT_DOUBLE_EQ(infinity_norm(DenseMatrix::identity(3)), 1.0);
  EXPECT_DOUBLE_EQ(infinity_norm(DenseMatrix{{1, -2}, {0.5, 0.5}}), 3.0);
  EXPECT_DOUBLE_EQ(infinity_norm(DenseMatrix(3, 3)), 0.0);
}

TEST(OperatorNorm, HandExamples) {
  EXPECT_NEAR(operator_norm(SparseMatrix::identity(5)), 1.0, 1e-12);
  EXPECT_NEAR(operator_norm(SparseMatrix::from_dense(DenseMatrix{{0, 2}, {0, 0}})), 2.0, 1e-9);
  EXPECT_NEAR(operator_norm(clique(10)), 9.0, 1e-6);
  EXPECT_DOUBLE_EQ(operator_norm(SparseMatrix::from_triplets(3, 3, {})), 0.0);
  EXPECT_THROW(operator_norm(SparseMatrix::from_triplets(2, 3, {})), DimensionError);
  EXPECT_THROW(operator_norm(SparseMatrix::identity(2), {0.0, 10}), InvalidArgument);
}

TEST(OperatorNorm, AgreesWithSvdOnRandomMatrices) {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const SparseMatrix a = random_sparse(12, 0.3, rng);
    const double ref = testing::svd_norm(a);
    EXPECT_NEAR(operator_norm(a, {1e-13, 100000}), ref, 1e-9 * ref);
  }
}

TEST(OperatorNorm, ReportsNonConvergence) {
  // Nearly equal singular values cannot be separated in two iterations.
  const auto a = SparseMatrix::from_dense(DenseMatrix{{1.0, 0.0}, {0.0, 0.999}});
  try {
    operator_norm(a, {1e-15, 2});
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.residuals().size(), 2u);
    EXPECT_GT(e.last_estimate(), 0.99);
  }
}

TEST(ProjectL1, HandExamples) {
  std::vector<double> feasible{0.2, -0.3};
  project_l1_ball(feasible, 1.0);
  EXPECT_EQ(feasible, (std::vector<double>{0.2, -0.3}));

  std::vector<double> x{3.0, 0.0};
  project_l1_ball(x, 1.0);
  EXPECT_DOUBLE_EQ(x[0], 1.0);
  EXPECT_DOUBLE_EQ(x[1], 0.0);

  std::vector<double> y{2.0, 2.0};
  project_l1_ball(y, 2.0);
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);

  std::vector<double> z{1.0};
  EXPECT_THROW(project_l1_ball(z, 0.0), InvalidArgument);
}

// Brute-force check of the KKT conditions: the projection p of x satisfies
// p = sign(x) max(|x| - theta, 0) for a single theta >= 0 and ||p||_1 = r.
TEST(ProjectL1, SatisfiesOptimalityConditions) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> dist(0.0, 2.0);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> x(7);
    for (double& v : x) v = dist(rng);
    const double r = 0.5 + std::abs(dist(rng));
    std::vector<double> p = x;
    project_l1_ball(p, r);
    double l1x = 0.0, l1p = 0.0;
    for (Index i = 0; i < x.size(); ++i) {
      l1x += std::abs(x[i]);
      l1p += std::abs(p[i]);
    }
    if (l1x <= r) {
      EXPECT_EQ(p, x);
      continue;
    }
    EXPECT_NEAR(l1p, r, 1e-12);
    double theta = -1.0;
    for (Index i = 0; i < x.size(); ++i) {
      if (p[i] != 0.0) {
        EXPECT_GT(p[i] * x[i], 0.0);
        const double t = std::abs(x[i]) - std::abs(p[i]);
        if (theta < 0.0) theta = t;
        EXPECT_NEAR(t, theta, 1e-12);
      }
    }
    for (Index i = 0; i < x.size(); ++i)
      if (p[i] == 0.0) EXPECT_LE(std::abs(x[i]), theta + 1e-12);
  }
}

TEST(ProjectLinf, RowsProjectedIndependently) {
  DenseMatrix w{{3.0, 0.0}, {0.25, -0.25}, {-2.0, 2.0}};
  const DenseMatrix p = project_linf_ball(w, 1.0);
  EXPECT_EQ(p, (DenseMatrix{{1.0, 0.0}, {0.25, -0.25}, {-0.5, 0.5}}));
  EXPECT_LE(infinity_norm(p), 1.0);
  EXPECT_EQ(project_linf_ball(p, 1.0), p);
}

}  // namespace
}  // namespace idgnn
