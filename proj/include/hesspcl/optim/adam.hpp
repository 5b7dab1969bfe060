#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/optim/history.hpp"
#include "hesspcl/optim/objective.hpp"

namespace hesspcl::optim {

struct AdamConfig {
  StopTolerances stop;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  IterationObserver observer;
};

/// Full-batch ADAM with bias correction. The recorded loss is f(θ_k).
inline MinimizeResult adam_minimize(const Objective& f, const Vector& theta0, const AdamConfig& cfg = {}) {
  if (theta0.size() != f.dim()) throw ShapeError("adam: starting point has the wrong dimension");
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
  res.history.push_back({0, res.loss, res.gradient.norm(), 0.0, cfg.learning_rate, true, false, StopReason::none,
                         clock.elapsed_ms()});
  Vector m = Vector::Zero(f.dim()), v = Vector::Zero(f.dim());
  double b1t = 1.0, b2t = 1.0;
  for (Index k = 1;; ++k) {
    if (cfg.stop.gradient_converged(res.gradient.norm(), res.loss)) {
      res.stop = StopReason::gradient_tolerance;
      break;
    }
    if (k > cfg.stop.max_iters) {
      res.stop = StopReason::max_iterations;
      break;
    }
    const Vector& g = res.gradient;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    const Vector step = -cfg.learning_rate * (m / (1.0 - b1t)).cwiseQuotient(
                                                 ((v / (1.0 - b2t)).cwiseSqrt().array() + cfg.epsilon).matrix());
    Vector grad;
    double loss;
    try {
      loss = f.value_gradient(res.theta + step, grad);
      ++res.evaluations;
    } catch (const NumericalError& e) {
      // ADAM has no globalization; a failed oracle ends the run.
      res.stop = StopReason::oracle_failure;
      res.message = std::string("oracle failed at the next iterate: ") + e.what();
      break;
    }
    const Vector before = cfg.observer ? res.theta : Vector();
    const Vector before_gradient = cfg.observer ? res.gradient : Vector();
    res.theta += step;
    res.loss = loss;
    res.gradient = std::move(grad);
    res.history.push_back({k, res.loss, res.gradient.norm(), step.norm(), cfg.learning_rate, true, false,
                           StopReason::none, clock.elapsed_ms()});
    if (cfg.observer) cfg.observer(res.history.back(), before, before_gradient, step);
  }
  res.history.back().stop = res.stop;
  return res;
}

}  // namespace hesspcl::optim
