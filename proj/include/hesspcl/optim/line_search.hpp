#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/optim/objective.hpp"

namespace hesspcl::optim {

struct WolfeConfig {
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_evaluations = 40;
  double alpha_max = 1e10;
};

struct LineSearchResult {
  bool ok = false;
  double alpha = 0.0;
  double loss = 0.0;
  Vector gradient;
  int evaluations = 0;
};

namespace detail {

/// Minimizer of the cubic through (a, fa, da), (b, fb, db), kept well inside
/// the bracket; falls back to bisection.
inline double cubic_step(double a, double fa, double da, double b, double fb, double db) {
  const double lo = std::min(a, b), hi = std::max(a, b), width = hi - lo;
  const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - da * db;
  double x = 0.5 * (a + b);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    if (std::isfinite(t)) x = t;
  }
  return std::clamp(x, lo + 0.1 * width, hi - 0.1 * width);
}

}  // namespace detail

/// Strong-Wolfe line search along descent direction p (bracketing + zoom).
inline LineSearchResult strong_wolfe(const Objective& f, const Vector& theta, double f0, const Vector& g0,
                                     const Vector& p, double alpha0, const WolfeConfig& cfg = {}) {
  LineSearchResult out;
  const double d0 = g0.dot(p);
  if (!(d0 < 0.0)) return out;

  struct Point {
    double a, f, d;
    Vector g;
  };
  auto probe = [&](double a) {
    Point pt{a, std::numeric_limits<double>::infinity(), 0.0, Vector()};
    ++out.evaluations;
    try {
      pt.f = f.value_gradient(theta + a * p, pt.g);
      pt.d = pt.g.dot(p);
      if (!std::isfinite(pt.f) || !std::isfinite(pt.d)) pt.f = std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      pt.f = std::numeric_limits<double>::infinity();
    }
    return pt;
  };
  auto sufficient = [&](const Point& pt) { return pt.f <= f0 + cfg.c1 * pt.a * d0; };
  auto curvature = [&](const Point& pt) { return std::abs(pt.d) <= -cfg.c2 * d0; };
  auto take = [&](Point& pt) {
    out.ok = true;
    out.alpha = pt.a;
    out.loss = pt.f;
    out.gradient = std::move(pt.g);
    return out;
  };

  auto zoom = [&](Point lo, Point hi) {
    while (out.evaluations < cfg.max_evaluations) {
      double a;
      if (std::isfinite(hi.f) && hi.g.size() > 0) {
        a = detail::cubic_step(lo.a, lo.f, lo.d, hi.a, hi.f, hi.d);
      } else {
        a = 0.5 * (lo.a + hi.a);
      }
      if (std::abs(hi.a - lo.a) <= 1e-16 * std::max(1.0, std::abs(lo.a))) break;
      Point pt = probe(a);
      if (!sufficient(pt) || pt.f >= lo.f) {
        hi = std::move(pt);
      } else {
        if (curvature(pt)) return take(pt);
        if (pt.d * (hi.a - lo.a) >= 0.0) hi = lo;
        lo = std::move(pt);
      }
    }
    return out;
  };

  Point prev{0.0, f0, d0, g0};
  double a = std::min(alpha0, cfg.alpha_max);
  for (int i = 0; out.evaluations < cfg.max_evaluations; ++i) {
    Point pt = probe(a);
    if (!sufficient(pt) || (i > 0 && pt.f >= prev.f)) return zoom(std::move(prev), std::move(pt));
    if (curvature(pt)) return take(pt);
    if (pt.d >= 0.0) return zoom(std::move(pt), std::move(prev));
    if (a >= cfg.alpha_max) break;
    prev = std::move(pt);
    a = std::min(2.0 * a, cfg.alpha_max);
  }
  return out;
}

}  // namespace hesspcl::optim
