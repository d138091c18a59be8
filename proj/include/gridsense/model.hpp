#pragma once

// Feed-forward tanh classifier with a softmax (multinomial logistic) loss.
// Parameters live in one flat vector: for each layer l, the weight matrix
// W_l (dims[l+1] x dims[l], column-major) followed by its bias w_l.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gridsense/error.hpp"

namespace gridsense {

struct NetworkModel {
  std::vector<int> dims;  // [d_0, d_1, ..., d_{N+1}]; d_0 = features, d_{N+1} = classes
  Eigen::VectorXd params;

  NetworkModel() = default;
  explicit NetworkModel(std::vector<int> layer_dims) : dims(std::move(layer_dims)) {
    if (dims.size() < 2) throw DimensionError("a network needs at least input and output dimensions");
    for (int d : dims)
      if (d <= 0) throw DimensionError("layer dimensions must be positive");
    params = Eigen::VectorXd::Zero(parameter_count(dims));
  }

  static Eigen::Index parameter_count(const std::vector<int>& dims) {
    Eigen::Index total = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) total += static_cast<Eigen::Index>(dims[l + 1]) * (dims[l] + 1);
    return total;
  }

  int layer_count() const { return static_cast<int>(dims.size()) - 1; }  // N + 1
  int hidden_layers() const { return layer_count() - 1; }
  int input_dim() const { return dims.front(); }
  int class_count() const { return dims.back(); }

  Eigen::Index weight_offset(int l) const {
    Eigen::Index off = 0;
    for (int i = 0; i < l; ++i) off += static_cast<Eigen::Index>(dims[i + 1]) * (dims[i] + 1);
    return off;
  }
  Eigen::Index bias_offset(int l) const { return weight_offset(l) + static_cast<Eigen::Index>(dims[l + 1]) * dims[l]; }

  Eigen::Map<Eigen::MatrixXd> weight(int l) { return {params.data() + weight_offset(l), dims[l + 1], dims[l]}; }
  Eigen::Map<const Eigen::MatrixXd> weight(int l) const {
    return {params.data() + weight_offset(l), dims[l + 1], dims[l]};
  }
  Eigen::Map<Eigen::VectorXd> bias(int l) { return {params.data() + bias_offset(l), dims[l + 1]}; }
  Eigen::Map<const Eigen::VectorXd> bias(int l) const { return {params.data() + bias_offset(l), dims[l + 1]}; }

  bool operator==(const NetworkModel& o) const { return dims == o.dims && params == o.params; }
};

/// Weights uniform on +-a*sqrt(6)/sqrt(d_in + d_out) with a = 10^-t; biases zero.
inline NetworkModel init_weights(const std::vector<int>& dims, double t, std::uint64_t seed) {
  if (t < 0.0) throw ConfigError("initialization exponent must be nonnegative");
  NetworkModel m(dims);
  std::mt19937_64 rng(seed);
  const double a = std::pow(10.0, -t);
  for (int l = 0; l < m.layer_count(); ++l) {
    const double r = a * std::sqrt(6.0) / std::sqrt(static_cast<double>(dims[l] + dims[l + 1]));
    std::uniform_real_distribution<double> u(-r, r);
    auto w = m.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
  }
  return m;
}

/// Layer values for a batch (one sample per column). activations[0] is the
/// input, activations[l] for 0 < l <= N the hidden tanh outputs, and
/// activations[N+1] the logits. pre_activations[l-1] is W_l x^{l-1} + w_l for
/// the hidden layers l = 1..N.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> pre_activations;
  std::vector<Eigen::MatrixXd> activations;

  const Eigen::MatrixXd& logits() const { return activations.back(); }
};

inline void check_input(const NetworkModel& m, const Eigen::MatrixXd& x) {
  if (x.rows() != m.input_dim())
    throw DimensionError("input has " + std::to_string(x.rows()) + " features, model expects " +
                         std::to_string(m.input_dim()));
}

inline ForwardTrace forward(const NetworkModel& m, const Eigen::MatrixXd& x) {
  check_input(m, x);
  ForwardTrace tr;
  tr.activations.reserve(static_cast<std::size_t>(m.layer_count()) + 1);
  tr.activations.push_back(x);
  for (int l = 0; l < m.layer_count(); ++l) {
    Eigen::MatrixXd z = m.weight(l) * tr.activations.back();
    z.colwise() += m.bias(l);
    if (l + 1 < m.layer_count()) {
      tr.activations.push_back(z.array().tanh().matrix());
      tr.pre_activations.push_back(std::move(z));
    } else {
      tr.activations.push_back(std::move(z));
    }
  }
  return tr;
}

inline Eigen::MatrixXd logits(const NetworkModel& m, const Eigen::MatrixXd& x) { return forward(m, x).logits(); }

/// Column-wise softmax with max subtraction.
inline Eigen::MatrixXd softmax(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p = z;
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    auto c = p.col(i);
    c.array() -= c.maxCoeff();
    c = c.array().exp().matrix();
    c /= c.sum();
  }
  return p;
}

inline void check_labels(const NetworkModel& m, const Eigen::MatrixXd& x, const std::vector<int>& labels) {
  check_input(m, x);
  if (static_cast<Eigen::Index>(labels.size()) != x.cols())
    throw DimensionError("label count does not match sample count");
  for (int y : labels)
    if (y < 1 || y > m.class_count()) throw DimensionError("label " + std::to_string(y) + " out of range");
}

/// (eps/2) * sum of squared weight entries; biases are not regularized.
inline double weight_decay(const NetworkModel& m, double eps) {
  double s = 0.0;
  for (int l = 0; l < m.layer_count(); ++l) s += m.weight(l).squaredNorm();
  return 0.5 * eps * s;
}

/// Reusable buffers for loss_and_gradient, so repeated evaluations on the same
/// batch do not reallocate.
struct Workspace {
  std::vector<Eigen::MatrixXd> layers;  // hidden activations, then logits
  Eigen::MatrixXd delta, back;
};

namespace detail {

// Shifted logits are clamped at -600 before exponentiation: the dropped mass
// is below 1e-250 and no subnormal values reach the matrix products.
inline constexpr double min_shifted_logit = -600.0;

// Overwrites each column of z with its softmax; returns the summed
// cross-entropy of the labels.
inline double softmax_in_place(Eigen::MatrixXd& z, const std::vector<int>& labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    auto c = z.col(i);
    const double mx = c.maxCoeff();
    const int y = labels[static_cast<std::size_t>(i)] - 1;
    const double zy = c[y] - mx;
    c.array() = (c.array() - mx).max(min_shifted_logit).exp();
    const double sum = c.sum();
    total += std::log(sum) - zy;
    c /= sum;
  }
  return total;
}

inline void forward_into(const NetworkModel& m, const Eigen::MatrixXd& x, std::vector<Eigen::MatrixXd>& layers) {
  layers.resize(static_cast<std::size_t>(m.layer_count()));
  for (int l = 0; l < m.layer_count(); ++l) {
    const Eigen::MatrixXd& in = l == 0 ? x : layers[static_cast<std::size_t>(l - 1)];
    auto& z = layers[static_cast<std::size_t>(l)];
    z.resize(m.dims[static_cast<std::size_t>(l) + 1], x.cols());
    z.noalias() = m.weight(l) * in;
    z.colwise() += m.bias(l);
    if (l + 1 < m.layer_count()) z = z.array().tanh().matrix();
  }
}

}  // namespace detail

/// Summed cross-entropy over the batch plus the weight-decay term.
inline double loss(const NetworkModel& m, const Eigen::MatrixXd& x, const std::vector<int>& labels,
                   double eps = 1e-8) {
  check_labels(m, x, labels);
  std::vector<Eigen::MatrixXd> layers;
  detail::forward_into(m, x, layers);
  return detail::softmax_in_place(layers.back(), labels) + weight_decay(m, eps);
}

/// Loss value with its gradient by reverse accumulation; `grad` is resized to
/// the parameter count.
inline double loss_and_gradient(const NetworkModel& m, const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                double eps, Eigen::VectorXd& grad, Workspace& ws) {
  check_labels(m, x, labels);
  detail::forward_into(m, x, ws.layers);
  auto& delta = ws.layers.back();
  const double total = detail::softmax_in_place(delta, labels);
  for (Eigen::Index i = 0; i < delta.cols(); ++i) delta(labels[static_cast<std::size_t>(i)] - 1, i) -= 1.0;

  grad.resize(m.params.size());
  for (int l = m.layer_count() - 1; l >= 0; --l) {
    const Eigen::MatrixXd& cur = l == m.layer_count() - 1 ? delta : ws.delta;
    const Eigen::MatrixXd& in = l == 0 ? x : ws.layers[static_cast<std::size_t>(l - 1)];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + m.weight_offset(l), m.dims[l + 1], m.dims[l]);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + m.bias_offset(l), m.dims[l + 1]);
    gw.noalias() = cur * in.transpose();
    gw += eps * m.weight(l);
    gb = cur.rowwise().sum();
    if (l > 0) {
      ws.back.resize(m.dims[l], x.cols());
      ws.back.noalias() = m.weight(l).transpose() * cur;
      ws.delta.resize(ws.back.rows(), ws.back.cols());
      ws.delta = ws.back.cwiseProduct((1.0 - in.array().square()).matrix());
    }
  }
  return total + weight_decay(m, eps);
}

inline double loss_and_gradient(const NetworkModel& m, const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                double eps, Eigen::VectorXd& grad) {
  Workspace ws;
  return loss_and_gradient(m, x, labels, eps, grad, ws);
}

/// Indices (1-based) of the k largest entries, largest first; ties go to the
/// lower index.
inline std::vector<int> topk_of(const Eigen::Ref<const Eigen::VectorXd>& z, int k) {
  if (k < 1 || k > z.size()) throw DimensionError("k must lie in [1, class count]");
  std::vector<int> idx(static_cast<std::size_t>(z.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (z[a] != z[b]) return z[a] > z[b];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  for (auto& i : idx) ++i;
  return idx;
}

inline std::vector<int> predict_topk(const NetworkModel& m, const Eigen::VectorXd& x, int k) {
  return topk_of(logits(m, x), k);
}

/// Flat-parameter index sets of W_1 columns, one per feature group.
inline std::vector<std::vector<Eigen::Index>> weight_groups(const NetworkModel& m,
                                                            const std::vector<std::vector<int>>& feature_groups) {
  std::vector<std::vector<Eigen::Index>> out;
  const Eigen::Index rows = m.dims[1];
  for (const auto& g : feature_groups) {
    std::vector<Eigen::Index> idx;
    for (int f : g) {
      if (f < 0 || f >= m.input_dim()) throw DimensionError("group references feature " + std::to_string(f));
      for (Eigen::Index r = 0; r < rows; ++r) idx.push_back(static_cast<Eigen::Index>(f) * rows + r);
    }
    out.push_back(std::move(idx));
  }
  return out;
}

struct GroupPenalty {
  double value = 0.0;          // sum of norms over the active groups
  std::vector<double> norms;   // Frobenius norm of every group's W_1 columns
};

/// Group norms of W_1 column blocks; `active` lists the penalized group indices.
inline GroupPenalty group_penalty(const NetworkModel& m, const std::vector<std::vector<int>>& feature_groups,
                                  const std::vector<int>& active) {
  GroupPenalty out;
  const auto w = m.weight(0);
  for (const auto& g : feature_groups) {
    double s = 0.0;
    for (int f : g) {
      if (f < 0 || f >= m.input_dim()) throw DimensionError("group references feature " + std::to_string(f));
      s += w.col(f).squaredNorm();
    }
    out.norms.push_back(std::sqrt(s));
  }
  for (int a : active) out.value += out.norms.at(static_cast<std::size_t>(a));
  return out;
}

}  // namespace gridsense
