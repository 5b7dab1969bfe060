#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/optim/history.hpp"
#include "hesspcl/optim/line_search.hpp"
#include "hesspcl/optim/objective.hpp"

namespace hesspcl::optim {

struct QuasiNewtonConfig {
  StopTolerances stop;
  WolfeConfig wolfe;
  Index memory = 10;          ///< L-BFGS only
  double curvature_guard = 1e-10;
  IterationObserver observer;
};

namespace detail {

/// Shared driver: `direction` maps the gradient to a search direction and
/// `update` absorbs an (s, y) pair, returning false when it was skipped.
template <class Direction, class Update>
MinimizeResult line_search_minimize(const Objective& f, const Vector& theta0, const QuasiNewtonConfig& cfg,
                                    Direction&& direction, Update&& update) {
  if (theta0.size() != f.dim()) throw ShapeError("line search: starting point has the wrong dimension");
  const WallClock clock;
  MinimizeResult res;
  res.theta = theta0;
  try {
    res.loss = f.value_gradient(res.theta, res.gradient);
  } catch (const NumericalError& e) {
    res.stop = StopReason::initial_point_failure;
    res.message = e.what();
    res.loss = std::numeric_limits<double>::quiet_NaN();
    return res;
  }
  ++res.evaluations;
  res.history.push_back({0, res.loss, res.gradient.norm(), 0.0, 0.0, true, false, StopReason::none, clock.elapsed_ms()});

  for (Index k = 1;; ++k) {
    if (cfg.stop.gradient_converged(res.gradient.norm(), res.loss)) {
      res.stop = StopReason::gradient_tolerance;
      break;
    }
    if (k > cfg.stop.max_iters) {
      res.stop = StopReason::max_iterations;
      break;
    }
    const Vector p = direction(res.gradient, k);
    // The very first step is scaled so that it has unit length.
    const double alpha0 = k == 1 ? std::min(1.0, 1.0 / p.norm()) : 1.0;
    LineSearchResult ls = strong_wolfe(f, res.theta, res.loss, res.gradient, p, alpha0, cfg.wolfe);
    res.evaluations += ls.evaluations;
    if (!ls.ok) {
      res.stop = StopReason::line_search_failure;
      res.message = res.gradient.dot(p) < 0.0 ? "no strong-Wolfe point found" : "not a descent direction";
      break;
    }
    const Vector s = ls.alpha * p;
    const Vector y = ls.gradient - res.gradient;
    const Vector before = cfg.observer ? res.theta : Vector();
    const Vector before_gradient = cfg.observer ? res.gradient : Vector();
    res.theta += s;
    res.loss = ls.loss;
    res.gradient = std::move(ls.gradient);
    const bool skipped = !update(s, y);
    if (skipped) ++res.skipped_updates;
    res.history.push_back({k, res.loss, res.gradient.norm(), s.norm(), ls.alpha, true, skipped, StopReason::none,
                           clock.elapsed_ms()});
    if (cfg.observer) cfg.observer(res.history.back(), before, before_gradient, s);
  }
  res.history.back().stop = res.stop;
  return res;
}

inline bool curvature_ok(const Vector& s, const Vector& y, double guard) {
  return s.dot(y) > guard * s.norm() * y.norm();
}

}  // namespace detail

/// Dense inverse-Hessian BFGS. H₀ = I; after the first accepted pair it is
/// rescaled by sᵀy/yᵀy before the update.
inline MinimizeResult bfgs_minimize(const Objective& f, const Vector& theta0, const QuasiNewtonConfig& cfg = {}) {
  const Index n = f.dim();
  DenseMatrix h = DenseMatrix::Identity(n, n);
  bool scaled = false;
  auto direction = [&](const Vector& g, Index) -> Vector { return -(h * g); };
  auto update = [&](const Vector& s, const Vector& y) {
    if (!detail::curvature_ok(s, y, cfg.curvature_guard)) return false;
    const double sy = s.dot(y);
    if (!scaled) {
      h *= sy / y.squaredNorm();
      scaled = true;
    }
    const double rho = 1.0 / sy;
    const Vector hy = h * y;
    const double yhy = y.dot(hy);
    // H⁺ = H − ρ(Hy sᵀ + s yᵀH) + (ρ² yᵀHy + ρ) s sᵀ
    h.noalias() -= rho * (hy * s.transpose() + s * hy.transpose());
    h.noalias() += (rho * rho * yhy + rho) * (s * s.transpose());
    return true;
  };
  return detail::line_search_minimize(f, theta0, cfg, direction, update);
}

/// Limited-memory BFGS with the two-loop recursion.
inline MinimizeResult lbfgs_minimize(const Objective& f, const Vector& theta0, const QuasiNewtonConfig& cfg = {}) {
  if (cfg.memory < 1) throw ConfigError("memory", "L-BFGS memory must be at least 1");
  struct Pair {
    Vector s, y;
    double rho;
  };
  std::deque<Pair> mem;
  auto direction = [&](const Vector& g, Index) -> Vector {
    Vector q = g;
    std::vector<double> a(mem.size());
    for (std::size_t i = mem.size(); i-- > 0;) {
      a[i] = mem[i].rho * mem[i].s.dot(q);
      q -= a[i] * mem[i].y;
    }
    if (!mem.empty()) q *= 1.0 / (mem.back().rho * mem.back().y.squaredNorm());
    for (std::size_t i = 0; i < mem.size(); ++i) {
      const double b = mem[i].rho * mem[i].y.dot(q);
      q += (a[i] - b) * mem[i].s;
    }
    return -q;
  };
  auto update = [&](const Vector& s, const Vector& y) {
    if (!detail::curvature_ok(s, y, cfg.curvature_guard)) return false;
    mem.push_back({s, y, 1.0 / s.dot(y)});
    if (static_cast<Index>(mem.size()) > cfg.memory) mem.pop_front();
    return true;
  };
  return detail::line_search_minimize(f, theta0, cfg, direction, update);
}

}  // namespace hesspcl::optim
