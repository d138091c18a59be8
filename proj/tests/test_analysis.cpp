#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "gridsense/analysis.hpp"
#include "gridsense/selection.hpp"

using namespace gridsense;

namespace {

// Linear model whose logits are the first K input rows.
NetworkModel identity_model(int d, int k) {
  NetworkModel m({d, k});
  for (int i = 0; i < k; ++i) m.weight(0)(i, i) = 1.0;
  return m;
}

Eigen::MatrixXd random_orthogonal(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  const Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return normal(rng); });
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ();
}

}  // namespace

TEST(Evaluate, CountsMatchDirectRanking) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  const int k = 5, n = 400;
  const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(k, n, [&] { return normal(rng); });
  std::vector<int> y;
  for (int i = 0; i < n; ++i) y.push_back(1 + static_cast<int>(rng() % k));
  const auto r = evaluate(identity_model(k, k), x, y, "test", {1, 2, 3, 5, 9});
  for (std::size_t j = 0; j < r.ks.size(); ++j) {
    long long miss = 0;
    for (int i = 0; i < n; ++i) {
      int above = 0;
      for (int c = 0; c < k; ++c)
        if (x(c, i) > x(y[static_cast<std::size_t>(i)] - 1, i)) ++above;
      if (above >= std::min(r.ks[j], k)) ++miss;
    }
    EXPECT_EQ(r.misses[j], miss) << "k=" << r.ks[j];
  }
  EXPECT_EQ(r.error(5), 0.0);
  EXPECT_EQ(r.error(9), 0.0);
}

// Logits independent of the label: top-k error is Binomial(n, 1 - k/K) / n.
TEST(Evaluate, RandomScoresFollowBinomial) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unif;
  const int k = 8, n = 20000;
  const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(k, n, [&] { return unif(rng); });
  std::vector<int> y;
  for (int i = 0; i < n; ++i) y.push_back(1 + static_cast<int>(rng() % k));
  const auto r = evaluate(identity_model(k, k), x, y);
  for (int kk : {1, 2}) {
    const double p = 1.0 - static_cast<double>(kk) / k;
    const double sd = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(r.error(kk), p, 5 * sd);
  }
  EXPECT_LE(r.top2_error(), r.top1_error());
}

TEST(Evaluate, PerClassTotalsAndJson) {
  const Eigen::MatrixXd x = (Eigen::MatrixXd(3, 4) << 1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 1, 0).finished();
  const auto r = evaluate(identity_model(3, 3), x, {1, 2, 3, 2});
  EXPECT_EQ(r.class_samples, (std::vector<long long>{1, 2, 1}));
  EXPECT_EQ(r.class_top1_misses, (std::vector<long long>{0, 1, 0}));
  EXPECT_DOUBLE_EQ(r.top1_error(), 0.25);
  const auto j = to_json(r);
  EXPECT_DOUBLE_EQ(j.at("errors").at("top1").get<double>(), 0.25);
  std::ostringstream csv;
  write_eval_csv(csv, r);
  EXPECT_EQ(csv.str(), "class_id,samples,top1_misses\n1,1,0\n2,2,1\n3,1,0\n");
  EXPECT_THROW(r.error(3), ConfigError);
  EXPECT_THROW(evaluate(identity_model(3, 3), x, {1, 2, 3, 2}, "t", {0}), ConfigError);
}

TEST(Clusters, HandComputedExample) {
  const Eigen::MatrixXd x = (Eigen::MatrixXd(2, 4) << 0, 2, 10, 10, 0, 0, 0, 4).finished();
  const auto s = cluster_statistics(x, {1, 1, 2, 2}, 2);
  EXPECT_DOUBLE_EQ(s.within_mean, 1.5);
  EXPECT_DOUBLE_EQ(s.within_std, 0.5);
  EXPECT_DOUBLE_EQ(s.between_mean, std::hypot(9.0, 2.0));
  EXPECT_DOUBLE_EQ(s.between_std, 0.0);
  EXPECT_EQ(s.centroid_pairs, 1);
  EXPECT_THROW(cluster_statistics(x, {1, 1, 1, 1}, 2), DataError);
  EXPECT_THROW(cluster_statistics(x, {1, 1, 3, 2}, 2), DimensionError);
}

TEST(Clusters, InvariantUnderRotationsAndTranslations) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  const int d = 6, n = 60, k = 4;
  const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(d, n, [&] { return normal(rng); });
  std::vector<int> y;
  for (int i = 0; i < n; ++i) y.push_back(1 + i % k);
  const auto base = cluster_statistics(x, y, k);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd q = random_orthogonal(d, rng);
    const Eigen::VectorXd t = Eigen::VectorXd::NullaryExpr(d, [&] { return 10 * normal(rng); });
    const Eigen::MatrixXd z = (q * x).colwise() + t;
    const auto s = cluster_statistics(z, y, k);
    EXPECT_NEAR(s.within_mean, base.within_mean, 1e-10);
    EXPECT_NEAR(s.within_std, base.within_std, 1e-10);
    EXPECT_NEAR(s.between_mean, base.between_mean, 1e-10);
    EXPECT_NEAR(s.between_std, base.between_std, 1e-10);
  }
}

TEST(Clusters, StageRepresentations) {
  const auto ds = fixtures::synthetic_dataset(4, 3, {1}, 5, 7);
  EXPECT_EQ(stage_representation(ds, ds.test.features, ClusterStage::raw, {}), ds.test.features);
  const auto sel = stage_representation(ds, ds.test.features, ClusterStage::selected, {1});
  EXPECT_TRUE(sel.row(3).isZero());
  EXPECT_THROW(stage_representation(ds, ds.test.features, ClusterStage::hidden, {1}), ConfigError);
  const auto m = init_weights({ds.feature_count(), 7, 3}, 0.0, 2);
  EXPECT_EQ(stage_representation(ds, ds.test.features, ClusterStage::hidden, {1}, &m).rows(), 7);
  EXPECT_EQ(parse_cluster_stage("hidden"), ClusterStage::hidden);
  EXPECT_THROW(parse_cluster_stage("deep"), ConfigError);
}

// Projecting on every component preserves all centred inner products, and the
// explained variance ratios sum to one.
TEST(Pca, CompleteBasisPreservesGeometry) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(5, 40, [&] { return normal(rng); });
  const auto p = pca_fit(x);
  ASSERT_EQ(p.components.cols(), 5);
  EXPECT_LT((p.components.transpose() * p.components - Eigen::MatrixXd::Identity(5, 5)).norm(), 1e-12);
  const Eigen::MatrixXd centered = x.colwise() - p.mean;
  const Eigen::MatrixXd coords = p.components.transpose() * centered;
  EXPECT_LT((coords.transpose() * coords - centered.transpose() * centered).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(p.explained_variance_ratio().sum(), 1.0, 1e-12);
  for (Eigen::Index i = 1; i < p.singular_values.size(); ++i) EXPECT_LE(p.singular_values[i], p.singular_values[i - 1]);
  const auto xy = pca_project(p, x, {1, 5});
  EXPECT_LT((xy.col(0) - coords.row(0).transpose()).norm(), 1e-12);
  EXPECT_LT((xy.col(1) - coords.row(4).transpose()).norm(), 1e-12);
  EXPECT_THROW(pca_project(p, x, {0, 1}), ConfigError);
  EXPECT_THROW(pca_project(p, x, {1, 6}), ConfigError);
}

TEST(Pca, SignConventionIsDeterministic) {
  Eigen::MatrixXd x(2, 4);
  x << 1, -1, 2, -2, 0.1, -0.1, 0.0, 0.0;
  const auto a = pca_fit(x);
  const auto b = pca_fit(-x);
  EXPECT_LT((a.components - b.components).norm(), 1e-12);
  for (Eigen::Index c = 0; c < a.components.cols(); ++c) {
    Eigen::Index arg = 0;
    a.components.col(c).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(a.components(arg, c), 0.0);
  }
  EXPECT_THROW(pca_fit(Eigen::MatrixXd::Zero(3, 1)), DataError);
}

TEST(Activations, SaturatedNodesAreFlagged) {
  NetworkModel m({2, 3, 2});
  m.bias(0) << 10.0, 0.0, -10.0;  // nodes 1 and 3 pinned at +-1
  m.weight(0)(1, 0) = 1.0;
  Eigen::MatrixXd x(2, 50);
  x.row(0) = Eigen::RowVectorXd::LinSpaced(50, -2.0, 2.0);
  x.row(1).setZero();
  const auto a = hidden_activation_map(m, x);
  EXPECT_EQ(a.activations.rows(), 50);
  EXPECT_EQ(a.activations.cols(), 3);
  EXPECT_EQ(a.saturated, (std::vector<bool>{true, false, true}));
  EXPECT_EQ(a.saturated_count(), 2);
  EXPECT_THROW(hidden_activation_map(NetworkModel({2, 2}), x), ConfigError);
}
