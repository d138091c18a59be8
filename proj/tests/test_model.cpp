#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <sstream>

#include "gridsense/model.hpp"
#include "gridsense/model_io.hpp"

using namespace gridsense;

namespace {

struct Problem {
  NetworkModel m;
  Eigen::MatrixXd x;
  std::vector<int> y;
};

Problem random_problem(std::vector<int> dims, int n, std::uint64_t seed, double scale = 1.0) {
  Problem p{init_weights(dims, 0.0, seed), {}, {}};
  std::mt19937_64 rng(seed ^ 0x5eed);
  std::normal_distribution<double> normal(0.0, 1.0);
  p.m.params = p.m.params.unaryExpr([&](double) { return scale * normal(rng); });
  p.x.resize(dims.front(), n);
  for (Eigen::Index i = 0; i < p.x.size(); ++i) p.x.data()[i] = normal(rng);
  for (int i = 0; i < n; ++i) p.y.push_back(1 + static_cast<int>(rng() % static_cast<unsigned>(dims.back())));
  return p;
}

// Independent forward pass with per-sample loops and std::exp / std::log.
double naive_loss(const NetworkModel& m, const Eigen::MatrixXd& x, const std::vector<int>& y, double eps) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    std::vector<double> a(x.col(i).data(), x.col(i).data() + x.rows());
    for (int l = 0; l < m.layer_count(); ++l) {
      std::vector<double> z(static_cast<std::size_t>(m.dims[l + 1]));
      for (int r = 0; r < m.dims[l + 1]; ++r) {
        double s = m.bias(l)[r];
        for (int c = 0; c < m.dims[l]; ++c) s += m.weight(l)(r, c) * a[static_cast<std::size_t>(c)];
        z[static_cast<std::size_t>(r)] = l + 1 < m.layer_count() ? std::tanh(s) : s;
      }
      a = std::move(z);
    }
    double mx = a[0];
    for (double v : a) mx = std::max(mx, v);
    double se = 0.0;
    for (double v : a) se += std::exp(v - mx);
    total += -(a[static_cast<std::size_t>(y[static_cast<std::size_t>(i)] - 1)] - mx - std::log(se));
  }
  double w2 = 0.0;
  for (int l = 0; l < m.layer_count(); ++l) w2 += m.weight(l).squaredNorm();
  return total + 0.5 * eps * w2;
}

}  // namespace

TEST(Model, ParameterLayout) {
  NetworkModel m({3, 4, 2});
  EXPECT_EQ(m.params.size(), 4 * 3 + 4 + 2 * 4 + 2);
  EXPECT_EQ(m.weight_offset(1), 16);
  EXPECT_EQ(m.bias_offset(0), 12);
  m.weight(0)(1, 2) = 7.0;
  EXPECT_EQ(m.params[2 * 4 + 1], 7.0);  // column major
  m.bias(1)[1] = 3.0;
  EXPECT_EQ(m.params[m.params.size() - 1], 3.0);
  EXPECT_EQ(m.hidden_layers(), 1);
  EXPECT_THROW(NetworkModel({3}), DimensionError);
  EXPECT_THROW(NetworkModel({3, 0, 2}), DimensionError);
}

TEST(Model, InitWeightsWithinBoundsAndBiasesZero) {
  for (double t : {0.0, 1.0, 2.5}) {
    const auto m = init_weights({20, 10, 5}, t, 3);
    for (int l = 0; l < m.layer_count(); ++l) {
      const double bound = std::pow(10.0, -t) * std::sqrt(6.0) / std::sqrt(m.dims[l] + m.dims[l + 1]);
      EXPECT_LE(m.weight(l).cwiseAbs().maxCoeff(), bound);
      EXPECT_GT(m.weight(l).cwiseAbs().maxCoeff(), 0.5 * bound);
      EXPECT_TRUE(m.bias(l).isZero());
    }
  }
  EXPECT_EQ(init_weights({4, 3}, 0, 1), init_weights({4, 3}, 0, 1));
  EXPECT_FALSE(init_weights({4, 3}, 0, 1) == init_weights({4, 3}, 0, 2));
  EXPECT_THROW(init_weights({4, 3}, -1.0, 1), ConfigError);
}

TEST(Model, LossMatchesNaiveOracle) {
  for (const auto& dims : std::vector<std::vector<int>>{{5, 3}, {6, 4, 3}, {7, 5, 4, 3}, {4, 3, 3, 3, 3, 2}}) {
    const auto p = random_problem(dims, 9, static_cast<std::uint64_t>(dims.size()));
    EXPECT_NEAR(loss(p.m, p.x, p.y, 0.3), naive_loss(p.m, p.x, p.y, 0.3), 1e-10);
    Eigen::VectorXd g;
    EXPECT_NEAR(loss_and_gradient(p.m, p.x, p.y, 0.3, g), naive_loss(p.m, p.x, p.y, 0.3), 1e-10);
  }
}

// All-zero parameters give uniform class probabilities: the loss is n log K.
TEST(Model, ZeroModelLossIsLogK) {
  NetworkModel m({6, 5, 4});
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(6, 11);
  const std::vector<int> y(11, 2);
  EXPECT_NEAR(loss(m, x, y), 11.0 * std::log(4.0), 1e-12);
}

// Along a straight line in parameter space the directional derivative of the
// loss equals g'd, checked against a fine central difference of the 1-D slice.
TEST(Model, StraightLineDerivative) {
  const auto p = random_problem({5, 4, 3}, 8, 17);
  Eigen::VectorXd g;
  loss_and_gradient(p.m, p.x, p.y, 0.1, g);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  const Eigen::VectorXd d = Eigen::VectorXd::NullaryExpr(g.size(), [&] { return normal(rng); });
  auto slice = [&](double t) {
    NetworkModel q = p.m;
    q.params += t * d;
    return loss(q, p.x, p.y, 0.1);
  };
  const double h = 1e-5;
  EXPECT_NEAR((slice(h) - slice(-h)) / (2 * h), g.dot(d), 1e-6 * std::max(1.0, std::abs(g.dot(d))));
}

// Linear model: the gradient of the cross-entropy is (softmax(z) - e_y) [x; 1]'.
TEST(Model, LinearGradientClosedForm) {
  const auto p = random_problem({4, 3}, 6, 23);
  Eigen::VectorXd g;
  loss_and_gradient(p.m, p.x, p.y, 0.0, g);
  const Eigen::MatrixXd prob = softmax(logits(p.m, p.x));
  Eigen::MatrixXd resid = prob;
  for (std::size_t i = 0; i < p.y.size(); ++i) resid(p.y[i] - 1, static_cast<Eigen::Index>(i)) -= 1.0;
  const Eigen::MatrixXd gw = resid * p.x.transpose();
  const Eigen::VectorXd gb = resid.rowwise().sum();
  NetworkModel grad_view = p.m;
  grad_view.params = g;
  EXPECT_LT((grad_view.weight(0) - gw).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((grad_view.bias(0) - gb).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const int depth = trial % 4;
    std::vector<int> dims{2 + static_cast<int>(rng() % 8)};
    for (int l = 0; l < depth; ++l) dims.push_back(2 + static_cast<int>(rng() % 6));
    dims.push_back(2 + static_cast<int>(rng() % 4));
    const auto p = random_problem(dims, 5, rng(), 0.7);
    Eigen::VectorXd g;
    loss_and_gradient(p.m, p.x, p.y, 0.05, g);
    NetworkModel q = p.m;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const double keep = q.params[i];
      q.params[i] = keep + 1e-5;
      const double fp = loss(q, p.x, p.y, 0.05);
      q.params[i] = keep - 1e-5;
      const double fm = loss(q, p.x, p.y, 0.05);
      q.params[i] = keep;
      const double fd = (fp - fm) / 2e-5;
      EXPECT_NEAR(g[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "trial " << trial << " coord " << i;
    }
  }
}

TEST(Model, WeightDecaySkipsBiases) {
  NetworkModel m({2, 2});
  m.bias(0).setConstant(100.0);
  EXPECT_EQ(weight_decay(m, 1.0), 0.0);
  m.weight(0).setConstant(1.0);
  EXPECT_EQ(weight_decay(m, 1.0), 2.0);
}

TEST(Model, ExtremeLogitsStayFinite) {
  NetworkModel m({1, 3});
  m.weight(0) << 1e4, -1e4, 0.0;
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 2, 1.0);
  Eigen::VectorXd g;
  const double f = loss_and_gradient(m, x, {1, 2}, 0.0, g);
  EXPECT_TRUE(std::isfinite(f));
  EXPECT_TRUE(g.allFinite());
  EXPECT_NEAR(f, 2e4, 1e-9);  // exact cross-entropy; the clamp only touches exp()
}

TEST(Model, LabelAndInputChecks) {
  NetworkModel m({3, 2});
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 2);
  EXPECT_THROW(loss(m, x, {1, 3}), DimensionError);
  EXPECT_THROW(loss(m, x, {1}), DimensionError);
  EXPECT_THROW(loss(m, Eigen::MatrixXd::Zero(4, 2), {1, 1}), DimensionError);
}

TEST(Model, TopKOrderingAndTies) {
  Eigen::VectorXd z(5);
  z << 0.1, 0.9, 0.5, 0.9, -1.0;
  EXPECT_EQ(topk_of(z, 1), std::vector<int>{2});
  EXPECT_EQ(topk_of(z, 3), (std::vector<int>{2, 4, 3}));
  EXPECT_THROW(topk_of(z, 0), DimensionError);
  EXPECT_THROW(topk_of(z, 6), DimensionError);
}

TEST(Model, WeightGroupsAddressFirstLayerColumns) {
  auto m = init_weights({6, 4, 3}, 0.0, 9);
  const auto groups = weight_groups(m, {{0, 1}, {4, 5}});
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].size(), 8u);
  double direct = 0.0;
  for (auto i : groups[1]) direct += m.params[i] * m.params[i];
  const auto pen = group_penalty(m, {{0, 1}, {4, 5}}, {1});
  EXPECT_NEAR(pen.norms[1], std::sqrt(direct), 1e-14);
  EXPECT_NEAR(pen.value, pen.norms[1], 0.0);
  EXPECT_NEAR(pen.norms[1], std::hypot(m.weight(0).col(4).norm(), m.weight(0).col(5).norm()), 1e-14);
  EXPECT_THROW(weight_groups(m, {{6}}), DimensionError);
}

TEST(ModelIo, CheckpointRoundTripIsBitExact) {
  ModelCheckpoint c{init_weights({7, 5, 3}, 1.0, 4), 1e-8, {2, 5}, "case14"};
  c.model.params[3] = -0.0;
  c.model.params[4] = std::numeric_limits<double>::denorm_min();
  std::stringstream buf;
  write_checkpoint(buf, c);
  const auto back = read_checkpoint(buf);
  EXPECT_EQ(back.model.dims, c.model.dims);
  EXPECT_EQ(0, std::memcmp(back.model.params.data(), c.model.params.data(),
                           sizeof(double) * static_cast<std::size_t>(c.model.params.size())));
  EXPECT_EQ(back.selected_buses, c.selected_buses);
  EXPECT_EQ(back.grid, "case14");
  EXPECT_EQ(back.epsilon, 1e-8);
}

TEST(ModelIo, TruncatedCheckpointIsDataError) {
  ModelCheckpoint c{init_weights({3, 2}, 0.0, 4), 1e-8, {}, "x"};
  std::stringstream buf;
  write_checkpoint(buf, c);
  std::string text = buf.str();
  text.resize(text.size() - 5);
  std::stringstream cut(text);
  EXPECT_THROW(read_checkpoint(cut), DataError);
  std::stringstream junk("not a model");
  EXPECT_THROW(read_checkpoint(junk), DataError);
}
