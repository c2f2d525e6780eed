#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

namespace idgnn {
namespace {

TEST(Auc, HandExamples) {
  EXPECT_DOUBLE_EQ(binary_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(binary_auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}), 0.0);
  // Pairs (pos, neg): (0.8 > 0.1), (0.8 > 0.4), (0.35 > 0.1), (0.35 < 0.4) -> 3 / 4.
  EXPECT_DOUBLE_EQ(binary_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75);
  EXPECT_DOUBLE_EQ(binary_auc({0.5, 0.5}, {0, 1}), 0.5);
  EXPECT_THROW(binary_auc({0.1, 0.2}, {1, 1}), UndefinedMetric);
}

TEST(Auc, MatchesPairCountingAndIsRankInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> coarse(0, 5);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> s(20);
    std::vector<std::uint8_t> y(20);
    for (Index i = 0; i < 20; ++i) {
      s[i] = coarse(rng);
      y[i] = i % 3 == 0;
    }
    double wins = 0.0, pairs = 0.0;
    for (Index i = 0; i < 20; ++i)
      for (Index j = 0; j < 20; ++j)
        if (y[i] && !y[j]) {
          pairs += 1.0;
          wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    EXPECT_NEAR(binary_auc(s, y), wins / pairs, 1e-14);
    std::vector<double> t(s);
    for (double& v : t) v = std::exp(3.0 * v) - 7.0;
    EXPECT_NEAR(binary_auc(t, y), binary_auc(s, y), 1e-14);
  }
}

TEST(Auc, MacroOneVsRest) {
  const DenseMatrix scores{{0.9, 0.1, 0.2}, {0.05, 0.8, 0.3}, {0.05, 0.1, 0.5}};
  const auto r = roc_auc_macro(scores, {0, 1, 2});
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.per_class.size(), 3u);
  EXPECT_THROW(roc_auc_macro(scores, {1, 1, 1}), UndefinedMetric);
  const auto two = roc_auc_macro(scores, {0, 0, 1});
  EXPECT_EQ(two.per_class.size(), 2u);
}

TEST(Mape, HandExamples) {
  EXPECT_DOUBLE_EQ(mape(DenseMatrix{{3.0}}, DenseMatrix{{3.0}}).value, 0.0);
  EXPECT_DOUBLE_EQ(mape(DenseMatrix{{1.0}}, DenseMatrix{{2.0}}).value, 50.0);
  EXPECT_NEAR(mape(DenseMatrix{{1.1, 1.8}}, DenseMatrix{{1.0, 2.0}}).value, 10.0, 1e-12);
  const auto r = mape(DenseMatrix{{1.0, 5.0}}, DenseMatrix{{2.0, 0.0}});
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_EQ(r.samples, 1u);
  EXPECT_THROW(mape(DenseMatrix{{1.0}}, DenseMatrix{{0.0}}), UndefinedMetric);
}

TEST(DirichletEnergy, HandExamples) {
  const auto edge = SparseMatrix::from_triplets(2, 2, {{0, 1, 1.0}, {1, 0, 1.0}});
  EXPECT_DOUBLE_EQ(dirichlet_energy(DenseMatrix{{0.0, 1.0}}, edge), 1.0);
  EXPECT_DOUBLE_EQ(dirichlet_energy(DenseMatrix(3, 10, 0.7), clique(10)), 0.0);
  EXPECT_NEAR(dirichlet_energy(DenseMatrix::identity(10), clique(10)), std::sqrt(18.0), 1e-12);
}

TEST(DirichletEnergy, ShiftInvariantAndHomogeneous) {
  std::mt19937_64 rng(2);
  const auto a = random_graph(12, 3.0, rng);
  const DenseMatrix z = testing::random_dense(4, 12, rng);
  DenseMatrix shifted = z;
  for (Index k = 0; k < 4; ++k)
    for (Index j = 0; j < 12; ++j) shifted(k, j) += 0.3 * static_cast<double>(k + 1);
  EXPECT_NEAR(dirichlet_energy(shifted, a), dirichlet_energy(z, a), 1e-12);
  EXPECT_NEAR(dirichlet_energy(2.5 * z, a), 2.5 * dirichlet_energy(z, a), 1e-12);
}

TEST(Mad, HandExamples) {
  const auto edge = SparseMatrix::from_triplets(2, 2, {{0, 1, 1.0}, {1, 0, 1.0}});
  EXPECT_NEAR(mad(DenseMatrix{{1.0, 1.0}, {0.0, 1.0}}, edge), 1.0 - 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(mad(DenseMatrix(3, 10, 0.7), clique(10)), 0.0, 1e-12);
  EXPECT_NEAR(mad(DenseMatrix::identity(10), clique(10)), 1.0, 1e-12);
  EXPECT_THROW(mad(DenseMatrix(2, 2), edge), UndefinedMetric);
}

TEST(Mad, ColumnScaleInvariant) {
  std::mt19937_64 rng(3);
  const auto a = random_graph(12, 3.0, rng);
  DenseMatrix z = testing::random_dense(4, 12, rng);
  const double before = mad(z, a);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (Index j = 0; j < 12; ++j) {
    const double s = u(rng);
    for (Index k = 0; k < 4; ++k) z(k, j) *= s;
  }
  EXPECT_NEAR(mad(z, a), before, 1e-12);
}

TEST(Loss, CrossEntropyHandExamples) {
  const auto r = cross_entropy(DenseMatrix{{0.0}, {0.0}}, {0}, {1});
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
  const double h = 1e-5;
  for (Index c = 0; c < 2; ++c) {
    const double fd = testing::central_difference(
        [&](double v) {
          DenseMatrix l{{0.0}, {0.0}};
          l(c, 0) = v;
          return cross_entropy(l, {0}, {1}).loss;
        },
        0.0, h);
    EXPECT_NEAR(r.grad(c, 0), fd, 1e-9);
  }
  const auto sharp = cross_entropy(DenseMatrix{{200.0}, {-200.0}}, {0}, {1});
  EXPECT_LT(sharp.loss, 1e-12);
  EXPECT_LT(sharp.grad.max_abs(), 1e-12);
  EXPECT_THROW(cross_entropy(DenseMatrix{{0.0}, {0.0}}, {0}, {0}), InvalidArgument);
}

TEST(Loss, MaskedNodesDoNotContribute) {
  const DenseMatrix logits{{1.0, 5.0}, {0.0, -5.0}};
  const auto a = cross_entropy(logits, {0, 1}, {1, 0});
  const auto b = cross_entropy(DenseMatrix{{1.0}, {0.0}}, {0}, {1});
  EXPECT_DOUBLE_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad(0, 1), 0.0);
}

TEST(Loss, MeanSquaredError) {
  const DenseMatrix y{{1.0, 2.0}};
  const auto same = mean_squared_error(y, y, {1, 1});
  EXPECT_EQ(same.loss, 0.0);
  EXPECT_EQ(same.grad.max_abs(), 0.0);
  const auto r = mean_squared_error(DenseMatrix{{2.0, 2.0}}, y, {1, 1});
  EXPECT_DOUBLE_EQ(r.loss, 0.5);
  EXPECT_DOUBLE_EQ(r.grad(0, 0), 1.0);
  EXPECT_THROW(mean_squared_error(y, DenseMatrix{{1.0}}, {1}), DimensionError);

  DynamicGraph g;
  g.task = Task::kRegression;
  g.targets = y;
  EXPECT_DOUBLE_EQ(losses(Task::kRegression)(DenseMatrix{{2.0, 2.0}}, g, {1, 1}).loss, 0.5);
}

TEST(Accuracy, ArgmaxPerColumn) {
  EXPECT_DOUBLE_EQ(accuracy(DenseMatrix{{0.9, 0.1, 0.6}, {0.1, 0.9, 0.4}}, {0, 1, 1}), 2.0 / 3.0);
  EXPECT_THROW(accuracy(DenseMatrix(2, 0), {}), UndefinedMetric);
}

TEST(Reports, SerializeToJsonAndCsv) {
  MetricReport r{"roc_auc", 0.75, 4, 0, {{"0", 0.5}}};
  const auto j = to_json(r);
  EXPECT_EQ(j.at("name"), "roc_auc");
  EXPECT_EQ(j.at("per_class").at("0"), 0.5);
  const std::string csv = metrics_csv({r});
  EXPECT_EQ(csv, "name,value,samples,excluded\nroc_auc,0.75,4,0\n");
}

}  // namespace
}  // namespace idgnn
