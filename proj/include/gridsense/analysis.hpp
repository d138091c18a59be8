#pragma once

// Evaluation and diagnostics on trained models: top-k error, cluster
// separation statistics, PCA projections and hidden-unit saturation.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "gridsense/datagen.hpp"
#include "gridsense/model.hpp"

namespace gridsense {

struct EvalReport {
  std::string split;
  long long samples = 0;
  std::vector<int> ks;
  std::vector<long long> misses;  // per k: samples whose label is outside the top k
  std::vector<long long> class_samples;  // per class (index 0 = class 1)
  std::vector<long long> class_top1_misses;

  double error(int k) const {
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (ks[i] == k) return samples ? static_cast<double>(misses[i]) / static_cast<double>(samples) : 0.0;
    throw ConfigError("top-" + std::to_string(k) + " error was not evaluated");
  }
  double top1_error() const { return error(1); }
  double top2_error() const { return error(2); }
};

/// Top-k error for each requested k (k larger than the class count is
/// clamped, so its error is zero).
inline EvalReport evaluate(const NetworkModel& m, const Eigen::MatrixXd& x, const std::vector<int>& labels,
                           const std::string& split = "test", std::vector<int> ks = {1, 2}) {
  check_labels(m, x, labels);
  if (ks.empty()) throw ConfigError("at least one k is required");
  for (int k : ks)
    if (k < 1) throw ConfigError("k must be positive");
  EvalReport r;
  r.split = split;
  r.samples = x.cols();
  r.ks = ks;
  r.misses.assign(ks.size(), 0);
  r.class_samples.assign(static_cast<std::size_t>(m.class_count()), 0);
  r.class_top1_misses.assign(static_cast<std::size_t>(m.class_count()), 0);
  const int kmax = std::min(*std::max_element(ks.begin(), ks.end()), m.class_count());
  const Eigen::MatrixXd z = logits(m, x);
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    const auto top = topk_of(z.col(i), kmax);
    const auto rank = static_cast<int>(std::find(top.begin(), top.end(), y) - top.begin());  // kmax if absent
    for (std::size_t j = 0; j < ks.size(); ++j)
      if (rank >= std::min(ks[j], m.class_count())) ++r.misses[j];
    ++r.class_samples[static_cast<std::size_t>(y - 1)];
    if (rank != 0) ++r.class_top1_misses[static_cast<std::size_t>(y - 1)];
  }
  return r;
}

inline EvalReport evaluate(const NetworkModel& m, const Split& s, const std::string& split = "test",
                           std::vector<int> ks = {1, 2}) {
  return evaluate(m, s.features, s.labels, split, std::move(ks));
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json errors = nlohmann::json::object();
  for (std::size_t i = 0; i < r.ks.size(); ++i)
    errors["top" + std::to_string(r.ks[i])] = r.samples ? static_cast<double>(r.misses[i]) / static_cast<double>(r.samples) : 0.0;
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < r.class_samples.size(); ++c)
    per_class.push_back({{"class_id", c + 1}, {"samples", r.class_samples[c]}, {"top1_misses", r.class_top1_misses[c]}});
  return {{"split", r.split}, {"samples", r.samples}, {"errors", errors}, {"misses", r.misses}, {"ks", r.ks},
          {"per_class", per_class}};
}

inline void write_eval_csv(std::ostream& os, const EvalReport& r) {
  os << "class_id,samples,top1_misses\n";
  for (std::size_t c = 0; c < r.class_samples.size(); ++c)
    os << c + 1 << ',' << r.class_samples[c] << ',' << r.class_top1_misses[c] << '\n';
}

// ---------------------------------------------------------------------------

struct ClusterStats {
  double within_mean = 0.0;   // distance of each sample to its class centroid
  double within_std = 0.0;
  double between_mean = 0.0;  // distance between every pair of centroids
  double between_std = 0.0;
  long long centroid_pairs = 0;
};

enum class ClusterStage { raw, selected, hidden };

inline const char* to_string(ClusterStage s) {
  switch (s) {
    case ClusterStage::raw: return "raw";
    case ClusterStage::selected: return "selected";
    case ClusterStage::hidden: return "hidden";
  }
  return "?";
}

inline ClusterStage parse_cluster_stage(const std::string& s) {
  if (s == "raw") return ClusterStage::raw;
  if (s == "selected") return ClusterStage::selected;
  if (s == "hidden") return ClusterStage::hidden;
  throw ConfigError("cluster stage must be raw, selected or hidden, got '" + s + "'");
}

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

}  // namespace detail

/// Within-cluster and between-centroid Euclidean distances (population
/// standard deviations). Labels must cover every class 1..class_count.
inline ClusterStats cluster_statistics(const Eigen::MatrixXd& x, const std::vector<int>& labels, int class_count) {
  if (static_cast<Eigen::Index>(labels.size()) != x.cols()) throw DimensionError("label count does not match sample count");
  if (class_count < 1) throw DataError("cluster statistics need at least one class");
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(x.rows(), class_count);
  std::vector<long long> count(static_cast<std::size_t>(class_count), 0);
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 1 || y > class_count) throw DimensionError("label " + std::to_string(y) + " out of range");
    centroids.col(y - 1) += x.col(i);
    ++count[static_cast<std::size_t>(y - 1)];
  }
  for (int c = 0; c < class_count; ++c) {
    if (count[static_cast<std::size_t>(c)] == 0) throw DataError("class " + std::to_string(c + 1) + " has no samples");
    centroids.col(c) /= static_cast<double>(count[static_cast<std::size_t>(c)]);
  }
  std::vector<double> within, between;
  within.reserve(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.cols(); ++i) within.push_back((x.col(i) - centroids.col(labels[static_cast<std::size_t>(i)] - 1)).norm());
  for (int a = 0; a < class_count; ++a)
    for (int b = a + 1; b < class_count; ++b) between.push_back((centroids.col(a) - centroids.col(b)).norm());
  ClusterStats st;
  std::tie(st.within_mean, st.within_std) = detail::mean_std(within);
  std::tie(st.between_mean, st.between_std) = detail::mean_std(between);
  st.centroid_pairs = static_cast<long long>(between.size());
  return st;
}

/// First hidden layer output tanh(W_1 x + w_1) for every column of x.
inline Eigen::MatrixXd hidden_representation(const NetworkModel& m, const Eigen::MatrixXd& x) {
  if (m.hidden_layers() < 1) throw ConfigError("model has no hidden layer");
  check_input(m, x);
  Eigen::MatrixXd z = m.weight(0) * x;
  z.colwise() += m.bias(0);
  return z.array().tanh().matrix();
}

/// Representation of a split at a given stage: raw features, features of the
/// selected buses only (gen_level and bias rows kept), or the first hidden
/// layer of `model` applied to the selected features.
inline Eigen::MatrixXd stage_representation(const Dataset& ds, const Eigen::MatrixXd& x, ClusterStage stage,
                                            const std::vector<int>& buses, const NetworkModel* model = nullptr) {
  switch (stage) {
    case ClusterStage::raw: return x;
    case ClusterStage::selected: return restrict_to_buses(ds, x, buses.empty() ? ds.bus_ids : buses);
    case ClusterStage::hidden:
      if (!model) throw ConfigError("the hidden stage needs a model");
      return hidden_representation(*model, restrict_to_buses(ds, x, buses.empty() ? ds.bus_ids : buses));
  }
  return x;
}

inline nlohmann::json to_json(const ClusterStats& s) {
  return {{"within_mean", s.within_mean}, {"within_std", s.within_std}, {"between_mean", s.between_mean},
          {"between_std", s.between_std}, {"centroid_pairs", s.centroid_pairs}};
}

// ---------------------------------------------------------------------------

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // one unit component per column, by decreasing singular value
  Eigen::VectorXd singular_values;

  Eigen::VectorXd explained_variance_ratio() const {
    const Eigen::VectorXd v = singular_values.array().square();
    const double total = v.sum();
    return total > 0.0 ? Eigen::VectorXd(v / total) : Eigen::VectorXd(Eigen::VectorXd::Zero(v.size()));
  }
};

/// Principal components of the columns of x (samples as columns). Each
/// component's sign makes its largest-magnitude loading positive.
inline PcaModel pca_fit(const Eigen::MatrixXd& x) {
  if (x.cols() < 2) throw DataError("PCA needs at least two samples");
  PcaModel p;
  p.mean = x.rowwise().mean();
  const Eigen::MatrixXd centered = x.colwise() - p.mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU);
  p.components = svd.matrixU();
  p.singular_values = svd.singularValues();
  for (Eigen::Index c = 0; c < p.components.cols(); ++c) {
    Eigen::Index arg = 0;
    p.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (p.components(arg, c) < 0.0) p.components.col(c) *= -1.0;
  }
  return p;
}

/// Coordinates (n x 2) of x on components `axes` (1-based).
inline Eigen::MatrixXd pca_project(const PcaModel& p, const Eigen::MatrixXd& x, std::pair<int, int> axes) {
  const auto r = static_cast<int>(p.components.cols());
  for (int a : {axes.first, axes.second})
    if (a < 1 || a > r)
      throw ConfigError("PCA axis " + std::to_string(a) + " out of range [1, " + std::to_string(r) + "]");
  if (x.rows() != p.mean.size()) throw DimensionError("PCA input width does not match the fitted model");
  const Eigen::MatrixXd centered = x.colwise() - p.mean;
  Eigen::MatrixXd out(x.cols(), 2);
  out.col(0) = centered.transpose() * p.components.col(axes.first - 1);
  out.col(1) = centered.transpose() * p.components.col(axes.second - 1);
  return out;
}

inline Eigen::MatrixXd pca_project(const Eigen::MatrixXd& x, std::pair<int, int> axes) {
  return pca_project(pca_fit(x), x, axes);
}

// ---------------------------------------------------------------------------

struct SaturationThresholds {
  double max_range = 0.02;
  double min_abs_mean = 0.95;
};

struct ActivationMap {
  Eigen::MatrixXd activations;  // samples x hidden nodes
  Eigen::VectorXd node_mean, node_range;
  std::vector<bool> saturated;

  int saturated_count() const { return static_cast<int>(std::count(saturated.begin(), saturated.end(), true)); }
};

/// First-hidden-layer activations per sample; a node is saturated when its
/// range over the samples is small and its mean sits near +-1.
inline ActivationMap hidden_activation_map(const NetworkModel& m, const Eigen::MatrixXd& x,
                                           const SaturationThresholds& th = {}) {
  ActivationMap a;
  a.activations = hidden_representation(m, x).transpose();
  const Eigen::Index h = a.activations.cols();
  a.node_mean.resize(h);
  a.node_range.resize(h);
  a.saturated.assign(static_cast<std::size_t>(h), false);
  for (Eigen::Index j = 0; j < h; ++j) {
    const auto col = a.activations.col(j);
    a.node_mean[j] = col.size() ? col.mean() : 0.0;
    a.node_range[j] = col.size() ? col.maxCoeff() - col.minCoeff() : 0.0;
    a.saturated[static_cast<std::size_t>(j)] = col.size() > 0 && a.node_range[j] < th.max_range &&
                                               std::abs(a.node_mean[j]) > th.min_abs_mean;
  }
  return a;
}

}  // namespace gridsense
