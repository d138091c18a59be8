#pragma once

// Smooth and composite solvers over a flat parameter vector: L-BFGS with
// cautious pair skipping, and SpaRSA with a group soft-threshold prox.

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gridsense/error.hpp"

namespace gridsense {

/// Returns f(x) and writes the gradient into the second argument.
using SmoothFunction = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

enum class TerminationReason { max_iter, grad_tol, rel_decrease, line_search_fail };

inline const char* to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::max_iter: return "max_iter";
    case TerminationReason::grad_tol: return "grad_tol";
    case TerminationReason::rel_decrease: return "rel_decrease";
    case TerminationReason::line_search_fail: return "line_search_fail";
  }
  return "?";
}

struct TerminationReport {
  TerminationReason reason = TerminationReason::max_iter;
  int iterations = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  long long evaluations = 0;
  int skipped_pairs = 0;
};

struct IterationRecord {
  int iter = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
  bool skipped = false;
  double directional_derivative = 0.0;  // g^T d before the step (L-BFGS only)
};

inline void write_trace_csv(std::ostream& os, const std::vector<IterationRecord>& trace) {
  os << "iter,f,grad_norm,step,skipped\n";
  os.precision(17);
  for (const auto& r : trace)
    os << r.iter << ',' << r.objective << ',' << r.grad_norm << ',' << r.step << ',' << (r.skipped ? 1 : 0) << '\n';
}

struct LbfgsConfig {
  int memory = 10;
  int max_iter = 1000;
  double grad_tol = 1e-5;   // on the Euclidean gradient norm
  double rel_tol = 0.0;     // relative objective decrease; 0 disables
  double skip_eps = 1e-6;   // pair kept only if s'y >= skip_eps * s's
  double armijo = 1e-4;
  double backtrack = 0.5;
  double min_step = 1e-20;  // smaller trial steps count as a line-search failure
  std::vector<Eigen::Index> fixed_zero;  // coordinates held at zero
};

/// Curvature pairs of the limited-memory inverse Hessian approximation.
class LbfgsState {
 public:
  struct Pair {
    Eigen::VectorXd s, y;
    double rho;
  };

  LbfgsState(int memory, double skip_eps) : memory_(memory), skip_eps_(skip_eps) {
    if (memory < 1) throw ConfigError("L-BFGS memory must be positive");
  }

  /// Stores (s, y) when s'y >= skip_eps * s's; returns false if skipped.
  bool update(const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
    const double sy = s.dot(y);
    const double ss = s.squaredNorm();
    if (!(sy >= skip_eps_ * ss) || !(sy > 0.0)) return false;
    if (static_cast<int>(pairs_.size()) == memory_) pairs_.pop_front();
    pairs_.push_back({s, y, 1.0 / sy});
    return true;
  }

  /// -H g by the two-loop recursion; H0 = (s'y / y'y) I from the newest pair,
  /// or the identity when no pair is stored.
  Eigen::VectorXd direction(const Eigen::VectorXd& g) const {
    Eigen::VectorXd q = g;
    std::vector<double> alpha(pairs_.size());
    for (std::size_t k = pairs_.size(); k-- > 0;) {
      alpha[k] = pairs_[k].rho * pairs_[k].s.dot(q);
      q -= alpha[k] * pairs_[k].y;
    }
    if (!pairs_.empty()) {
      const auto& last = pairs_.back();
      q *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (std::size_t k = 0; k < pairs_.size(); ++k) {
      const double beta = pairs_[k].rho * pairs_[k].y.dot(q);
      q += (alpha[k] - beta) * pairs_[k].s;
    }
    return -q;
  }

  /// Every stored pair satisfies the skip test.
  bool store_invariant_holds() const {
    for (const auto& p : pairs_)
      if (!(p.s.dot(p.y) >= skip_eps_ * p.s.squaredNorm())) return false;
    return static_cast<int>(pairs_.size()) <= memory_;
  }

  void clear() { pairs_.clear(); }
  const std::deque<Pair>& pairs() const { return pairs_; }
  int memory() const { return memory_; }
  double skip_eps() const { return skip_eps_; }

 private:
  int memory_;
  double skip_eps_;
  std::deque<Pair> pairs_;
};

using LbfgsObserver = std::function<void(const IterationRecord&, const LbfgsState&)>;

struct SolverResult {
  Eigen::VectorXd x;
  TerminationReport report;
  std::vector<double> group_norms;  // SpaRSA only
};

namespace detail {

inline void zero_coordinates(Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
  for (auto i : idx) v[i] = 0.0;
}

}  // namespace detail

inline SolverResult lbfgs_minimize(const SmoothFunction& f, const Eigen::VectorXd& x0, const LbfgsConfig& cfg = {},
                                   const LbfgsObserver& observer = {}) {
  if (!(cfg.backtrack > 0.0 && cfg.backtrack < 1.0) || !(cfg.armijo > 0.0 && cfg.armijo < 1.0))
    throw ConfigError("line-search constants must lie in (0, 1)");
  LbfgsState state(cfg.memory, cfg.skip_eps);
  SolverResult out;
  auto& rep = out.report;
  Eigen::VectorXd x = x0, g, xn, gn;
  detail::zero_coordinates(x, cfg.fixed_zero);
  double fx = f(x, g);
  ++rep.evaluations;
  detail::zero_coordinates(g, cfg.fixed_zero);
  if (!std::isfinite(fx)) throw SolverError("objective is not finite at the initial point");

  auto finish = [&](TerminationReason why) {
    rep.reason = why;
    rep.objective = fx;
    rep.grad_norm = g.norm();
    out.x = std::move(x);
    return out;
  };

  for (int it = 0; it < cfg.max_iter; ++it) {
    if (g.norm() <= cfg.grad_tol) return finish(TerminationReason::grad_tol);
    Eigen::VectorXd d = state.direction(g);
    double gd = g.dot(d);
    if (!(gd < 0.0)) {
      state.clear();
      d = -g;
      gd = -g.squaredNorm();
    }
    double step = 1.0;
    double fn = 0.0;
    for (;;) {
      xn = x + step * d;
      detail::zero_coordinates(xn, cfg.fixed_zero);
      fn = f(xn, gn);
      ++rep.evaluations;
      if (std::isfinite(fn) && fn <= fx + cfg.armijo * step * gd) break;
      step *= cfg.backtrack;
      if (step < cfg.min_step) return finish(TerminationReason::line_search_fail);
    }
    // At the rounding floor the Armijo test passes without any decrease.
    if (!(fn < fx)) return finish(TerminationReason::line_search_fail);
    detail::zero_coordinates(gn, cfg.fixed_zero);
    const bool stored = state.update(xn - x, gn - g);
    if (!stored) ++rep.skipped_pairs;
    const double decrease = fx - fn;
    const double prev = fx;
    x.swap(xn);
    g.swap(gn);
    fx = fn;
    rep.iterations = it + 1;
    if (observer) observer({it + 1, fx, g.norm(), step, !stored, gd}, state);
    if (cfg.rel_tol > 0.0 && decrease <= cfg.rel_tol * std::abs(prev)) return finish(TerminationReason::rel_decrease);
  }
  return finish(g.norm() <= cfg.grad_tol ? TerminationReason::grad_tol : TerminationReason::max_iter);
}

/// Penalized groups as flat-parameter index sets; only groups listed in
/// `active` carry the penalty.
struct GroupStructure {
  std::vector<std::vector<Eigen::Index>> groups;
  std::vector<int> active;
};

inline double group_norm(const Eigen::VectorXd& x, const std::vector<Eigen::Index>& idx) {
  double s = 0.0;
  for (auto i : idx) s += x[i] * x[i];
  return std::sqrt(s);
}

inline std::vector<double> group_norms(const Eigen::VectorXd& x, const GroupStructure& gs) {
  std::vector<double> out;
  out.reserve(gs.groups.size());
  for (const auto& g : gs.groups) out.push_back(group_norm(x, g));
  return out;
}

inline double group_term(const Eigen::VectorXd& x, const GroupStructure& gs) {
  double c = 0.0;
  for (int a : gs.active) c += group_norm(x, gs.groups.at(static_cast<std::size_t>(a)));
  return c;
}

/// Minimizer of 0.5*||z - u||^2 + (tau/alpha) * sum_{s active} ||z_{G_s}||.
inline Eigen::VectorXd group_prox(const Eigen::VectorXd& u, double alpha, double tau, const GroupStructure& gs) {
  if (!(alpha > 0.0)) throw ConfigError("prox step must be positive");
  if (tau < 0.0) throw ConfigError("tau must be nonnegative");
  Eigen::VectorXd z = u;
  const double thresh = tau / alpha;
  if (thresh == 0.0) return z;
  for (int a : gs.active) {
    const auto& idx = gs.groups.at(static_cast<std::size_t>(a));
    const double nrm = group_norm(u, idx);
    const double shrink = nrm > thresh ? 1.0 - thresh / nrm : 0.0;
    for (auto i : idx) z[i] = shrink * u[i];
  }
  return z;
}

struct SparsaConfig {
  double tau = 0.0;
  double alpha_min = 1e-30;
  double alpha_max = 1e30;
  double sigma = 1e-3;
  double rel_tol = 1e-5;
  int max_iter = 1000;
  std::vector<Eigen::Index> fixed_zero;
};

using SparsaObserver = std::function<void(const IterationRecord&)>;

/// Minimizes f(x) + tau * sum_{s active} ||x_{G_s}||. The first step length
/// parameter is alpha_min, later ones the clipped Barzilai-Borwein ratio;
/// alpha doubles until the sufficient-decrease test passes.
inline SolverResult sparsa_minimize(const SmoothFunction& f, const Eigen::VectorXd& x0, const GroupStructure& gs,
                                    const SparsaConfig& cfg = {}, const SparsaObserver& observer = {}) {
  if (!(cfg.alpha_min > 0.0) || cfg.alpha_min > cfg.alpha_max) throw ConfigError("invalid alpha bounds");
  if (!(cfg.sigma > 0.0 && cfg.sigma < 1.0)) throw ConfigError("sigma must lie in (0, 1)");
  SolverResult out;
  auto& rep = out.report;
  Eigen::VectorXd x = x0, g, xn, gn, s, y;
  detail::zero_coordinates(x, cfg.fixed_zero);
  double fx = f(x, g);
  ++rep.evaluations;
  detail::zero_coordinates(g, cfg.fixed_zero);
  if (!std::isfinite(fx)) throw SolverError("objective is not finite at the initial point");
  double obj = fx + cfg.tau * group_term(x, gs);

  auto finish = [&](TerminationReason why) {
    rep.reason = why;
    rep.objective = obj;
    rep.grad_norm = g.norm();
    out.group_norms = group_norms(x, gs);
    out.x = std::move(x);
    return out;
  };

  for (int it = 0; it < cfg.max_iter; ++it) {
    double alpha = cfg.alpha_min;
    if (it > 0) {
      const double ss = s.squaredNorm();
      const double bb = ss > 0.0 ? s.dot(y) / ss : cfg.alpha_min;
      alpha = std::min(cfg.alpha_max, std::max(cfg.alpha_min, bb));
    }
    double fn = 0.0, objn = 0.0;
    for (;;) {
      xn = group_prox(x - g / alpha, alpha, cfg.tau, gs);
      detail::zero_coordinates(xn, cfg.fixed_zero);
      const double dist2 = (xn - x).squaredNorm();
      if (dist2 == 0.0) return finish(TerminationReason::rel_decrease);
      fn = f(xn, gn);
      ++rep.evaluations;
      objn = fn + cfg.tau * group_term(xn, gs);
      if (std::isfinite(objn) && objn < obj - 0.5 * cfg.sigma * alpha * dist2) break;
      alpha *= 2.0;
      if (alpha > cfg.alpha_max) return finish(TerminationReason::line_search_fail);
    }
    detail::zero_coordinates(gn, cfg.fixed_zero);
    s = xn - x;
    y = gn - g;
    const double rel = std::abs(obj - objn) / std::max(std::abs(obj), std::numeric_limits<double>::min());
    x.swap(xn);
    g.swap(gn);
    fx = fn;
    obj = objn;
    rep.iterations = it + 1;
    if (observer) observer({it + 1, obj, g.norm(), 1.0 / alpha, false, 0.0});
    if (rel < cfg.rel_tol) return finish(TerminationReason::rel_decrease);
  }
  return finish(TerminationReason::max_iter);
}

}  // namespace gridsense
