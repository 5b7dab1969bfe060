#pragma once

// Nearly exact trust-region method. The subproblem
//   min m(p) = gᵀp + ½pᵀBp  s.t. ‖p‖ ≤ Δ
// is solved by safeguarded Newton iteration on 1/‖p(λ)‖ = 1/Δ with
// (B + λI)p(λ) = −g, using a shifted Cholesky factor per trial λ.
//
// Every iterate with B + λI ⪰ 0 yields the dual bound
//   m* ≥ −½(pᵀ(B + λI)p + λΔ²),
// and any boundary point p̂ = p + τz has m(p̂) minus that bound equal to
// ½(p̂ − p)ᵀ(B + λI)(p̂ − p). The iteration stops once this gap is below
// tolerance, which covers the interior, boundary and hard cases alike.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/optim/history.hpp"
#include "hesspcl/optim/objective.hpp"

namespace hesspcl::optim {

struct SubproblemOptions {
  double gap_tolerance = 1e-12;  ///< relative to 1 + |dual bound|
  int max_factorizations = 100;
  double lambda_hint = 0.0;      ///< warm start, typically the previous λ
};

struct SubproblemResult {
  Vector p;
  double predicted = 0.0;  ///< −m(p) ≥ 0
  double lambda = 0.0;
  bool on_boundary = false;
  bool hard_case = false;
  bool used_eigensolver = false;
  int factorizations = 0;
};

inline double model_value(const SymmetricMatrix& b, const Vector& g, const Vector& p) {
  return g.dot(p) + 0.5 * p.dot(b.dense() * p);
}

namespace detail {

inline void finish_subproblem(const SymmetricMatrix& b, const Vector& g, double radius, SubproblemResult& r) {
  const double pn = r.p.norm();
  if (pn > radius) r.p *= radius / pn;
  r.predicted = -model_value(b, g, r.p);
  if (!(r.predicted >= 0.0)) {
    // Roundoff on a flat model; the zero step is never worse.
    r.p.setZero();
    r.predicted = 0.0;
  }
}

/// Exact solution from a full eigendecomposition.
inline SubproblemResult eigen_subproblem(const SymmetricMatrix& b, const Vector& g, double radius) {
  SubproblemResult r;
  r.used_eigensolver = true;
  const EigenDecomposition eig = sym_eigen(b);
  const Vector& ev = eig.eigenvalues;
  const Vector gt = eig.eigenvectors.transpose() * g;
  const Index n = ev.size();
  const double lambda1 = ev[0];
  const double scale = std::max({std::abs(ev[0]), std::abs(ev[n - 1]), 1.0});
  const double gnorm = g.norm();

  auto norm_at = [&](double lam, bool skip_bottom) {
    double s = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double d = ev[i] + lam;
      if (skip_bottom && ev[i] - lambda1 <= 1e-12 * scale) continue;
      s += (gt[i] / d) * (gt[i] / d);
    }
    return std::sqrt(s);
  };
  auto step_at = [&](double lam, bool skip_bottom) {
    Vector c = Vector::Zero(n);
    for (Index i = 0; i < n; ++i) {
      if (skip_bottom && ev[i] - lambda1 <= 1e-12 * scale) continue;
      c[i] = -gt[i] / (ev[i] + lam);
    }
    return Vector(eig.eigenvectors * c);
  };

  const double lo = std::max(0.0, -lambda1);
  if (lambda1 > 1e-14 * scale && norm_at(0.0, false) <= radius) {
    r.p = step_at(0.0, false);
    r.lambda = 0.0;
    finish_subproblem(b, g, radius, r);
    return r;
  }

  double bottom = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (ev[i] - lambda1 <= 1e-12 * scale) bottom += gt[i] * gt[i];
  }
  bottom = std::sqrt(bottom);
  if (lambda1 <= 1e-14 * scale && bottom <= 1e-12 * std::max(gnorm, 1.0)) {
    const double pn = norm_at(lo, true);
    if (pn <= radius) {
      // Hard case: fill up to the boundary along the bottom eigenvector.
      Vector p = step_at(lo, true);
      const Vector v = eig.eigenvectors.col(0);
      const double pv = p.dot(v);
      const double disc = std::sqrt(std::max(0.0, pv * pv + radius * radius - p.squaredNorm()));
      const double t1 = -pv + disc, t2 = -pv - disc;
      const Vector a = p + t1 * v, c = p + t2 * v;
      r.p = model_value(b, g, a) <= model_value(b, g, c) ? a : c;
      r.lambda = lo;
      r.on_boundary = true;
      r.hard_case = true;
      finish_subproblem(b, g, radius, r);
      return r;
    }
  }

  // ‖p(λ)‖ decreases on (lo, ∞) and is ≤ Δ at lo + ‖g‖/Δ.
  double left = lo, right = lo + gnorm / radius + 1e-300;
  double lam = right;
  for (int it = 0; it < 200; ++it) {
    const double pn = norm_at(lam, false);
    if (std::abs(pn - radius) <= 1e-15 * radius) break;
    if (pn > radius) left = lam; else right = lam;
    // Newton on 1/‖p‖; derivative of ‖p‖² is −2 Σ g̃ᵢ²/(λᵢ+λ)³.
    double d2 = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double d = ev[i] + lam;
      d2 += gt[i] * gt[i] / (d * d * d);
    }
    double next = lam + (pn * pn * pn / d2) * (pn - radius) / (radius * pn);
    if (!(next > left && next < right)) next = 0.5 * (left + right);
    if (next == lam || right - left <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, right)) {
      lam = next;
      break;
    }
    lam = next;
  }
  r.p = step_at(lam, false);
  r.lambda = lam;
  r.on_boundary = true;
  finish_subproblem(b, g, radius, r);
  return r;
}

}  // namespace detail

/// Globally optimal step of the trust-region model (to the gap tolerance).
inline SubproblemResult tr_subproblem(const SymmetricMatrix& b, const Vector& g, double radius,
                                      const SubproblemOptions& opt = {}) {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw ShapeError("tr_subproblem: radius must be positive and finite");
  if (b.dim() != g.size()) throw ShapeError("tr_subproblem: B and g dimensions differ");
  if (!b.all_finite() || !g.allFinite()) throw NumericalError("tr_subproblem: non-finite model");
  const Index n = g.size();
  SubproblemResult r;
  r.p = Vector::Zero(n);
  if (n == 0) return r;

  const DenseMatrix& m = b.dense();
  const double gnorm = g.norm();
  double row_min = std::numeric_limits<double>::infinity();
  double row_max = -row_min, diag_neg = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double off = m.col(i).cwiseAbs().sum() - std::abs(m(i, i));
    row_min = std::min(row_min, m(i, i) - off);
    row_max = std::max(row_max, m(i, i) + off);
    diag_neg = std::max(diag_neg, -m(i, i));
  }
  const double fro = m.norm();
  double lower = std::max({0.0, diag_neg, gnorm / radius - std::min(row_max, fro)});
  double upper = std::max(0.0, gnorm / radius + std::min(-row_min, fro));

  if (gnorm == 0.0) {
    // Stationary model: only negative curvature can help.
    if (row_min >= 0.0) return r;
    return detail::eigen_subproblem(b, g, radius);
  }

  bool tried_zero = false;
  double lam = (opt.lambda_hint > lower && opt.lambda_hint < upper) ? opt.lambda_hint : lower;
  auto safeguard = [&] {
    if (lower == 0.0 && !tried_zero) return 0.0;
    return std::max(std::sqrt(lower * upper), lower + 0.01 * (upper - lower));
  };

  for (int it = 0; it < opt.max_factorizations; ++it) {
    if (lam == 0.0) tried_zero = true;
    const CholeskyResult chol = cholesky_shifted(b, lam);
    ++r.factorizations;
    if (!chol.ok()) {
      lower = std::max(lower, lam);
      lam = safeguard();
      if (upper - lower <= 1e-15 * std::max(1.0, upper)) break;
      continue;
    }
    const Vector p = -chol.solve(g);
    const double pn = p.norm();
    const double curv = -g.dot(p);  // pᵀ(B + λI)p
    const double dual = -0.5 * (curv + lam * radius * radius);
    const double tol = opt.gap_tolerance * (1.0 + std::abs(dual));

    if (pn <= radius) {
      const double gap = 0.5 * lam * (radius * radius - pn * pn);
      if (gap <= tol) {
        r.p = p;
        r.lambda = lam;
        r.on_boundary = lam > 0.0;
        detail::finish_subproblem(b, g, radius, r);
        return r;
      }
      upper = std::min(upper, lam);
      // Approximate bottom eigenvector of B + λI by inverse iteration.
      Vector z(n);
      for (Index i = 0; i < n; ++i) z[i] = 1.0 + 0.5 * std::sin(static_cast<double>(i + 1));
      double zcurv = 0.0;
      for (int k = 0; k < 3; ++k) {
        z = chol.solve(z);
        const double zn = z.norm();
        if (!(zn > 0.0) || !std::isfinite(zn)) break;
        z /= zn;
      }
      if (z.allFinite()) {
        zcurv = (chol.factor.transpose() * z).squaredNorm();
        lower = std::max(lower, lam - zcurv);
        const double pz = p.dot(z);
        const double disc = std::sqrt(std::max(0.0, pz * pz + radius * radius - pn * pn));
        const double tau = std::abs(-pz + disc) <= std::abs(-pz - disc) ? -pz + disc : -pz - disc;
        if (0.5 * tau * tau * zcurv <= tol) {
          r.p = p + tau * z;
          r.lambda = lam;
          r.on_boundary = true;
          r.hard_case = true;
          detail::finish_subproblem(b, g, radius, r);
          return r;
        }
      }
    } else {
      const double shrink = 1.0 - radius / pn;
      if (0.5 * shrink * shrink * curv <= tol) {
        r.p = p;
        r.lambda = lam;
        r.on_boundary = true;
        detail::finish_subproblem(b, g, radius, r);
        return r;
      }
      lower = std::max(lower, lam);
    }

    const double wn2 = chol.solve_lower(p).squaredNorm();
    double next = lam + (pn * pn / wn2) * (pn - radius) / radius;
    if (!(next > lower && next < upper)) next = safeguard();
    if (upper - lower <= 1e-15 * std::max(1.0, upper)) break;
    lam = next;
  }
  SubproblemResult e = detail::eigen_subproblem(b, g, radius);
  e.factorizations = r.factorizations;
  return e;
}

struct TrustRegionConfig {
  StopTolerances stop;
  double eta1 = 0.1;
  double shrink = 0.25;
  double grow = 2.0;
  double radius0 = 1.0;
  double radius_max = 100.0;
  double radius_min = 1e-12;
  IterationObserver observer;
};

inline MinimizeResult trust_region_minimize(const Objective& f, const Vector& theta0, const TrustRegionConfig& cfg = {}) {
  if (!f.has_hessian()) throw UnsupportedPrimitive("trust region needs a Hessian oracle");
  if (theta0.size() != f.dim()) throw ShapeError("trust region: starting point has the wrong dimension");
  const WallClock clock;
  MinimizeResult res;
  res.theta = theta0;

  SecondOrder cur;
  try {
    cur = f.second_order(res.theta);
  } catch (const NumericalError& e) {
    res.stop = StopReason::initial_point_failure;
    res.message = e.what();
    res.loss = std::numeric_limits<double>::quiet_NaN();
    return res;
  }
  ++res.evaluations;
  double radius = cfg.radius0;
  double lambda_hint = 0.0;
  res.history.push_back({0, cur.value, cur.gradient.norm(), 0.0, radius, true, false, StopReason::none, clock.elapsed_ms()});

  for (Index k = 1;; ++k) {
    const double gnorm = cur.gradient.norm();
    if (cfg.stop.gradient_converged(gnorm, cur.value)) {
      res.stop = StopReason::gradient_tolerance;
      break;
    }
    if (radius <= cfg.radius_min) {
      res.stop = StopReason::radius_too_small;
      break;
    }
    if (k > cfg.stop.max_iters) {
      res.stop = StopReason::max_iterations;
      break;
    }

    SubproblemOptions so;
    so.lambda_hint = lambda_hint;
    const SubproblemResult sub = tr_subproblem(cur.hessian, cur.gradient, radius, so);
    lambda_hint = sub.lambda;
    const Vector trial = res.theta + sub.p;
    const Vector before_gradient = cfg.observer ? cur.gradient : Vector();
    const double step = sub.p.norm();

    double trial_loss = std::numeric_limits<double>::infinity();
    double rho = -std::numeric_limits<double>::infinity();
    try {
      trial_loss = f.value(trial);
      ++res.evaluations;
      if (std::isfinite(trial_loss) && sub.predicted > 0.0) rho = (cur.value - trial_loss) / sub.predicted;
    } catch (const NumericalError&) {
      trial_loss = std::numeric_limits<double>::infinity();
    }

    const double used_radius = radius;
    if (rho < 0.25) {
      radius *= cfg.shrink;
    } else if (rho > 0.75 && step >= 0.99 * radius) {
      radius = std::min(cfg.grow * radius, cfg.radius_max);
    }

    bool accepted = false;
    if (rho > cfg.eta1) {
      try {
        SecondOrder next = f.second_order(trial);
        ++res.evaluations;
        cur = std::move(next);
        res.theta = trial;
        accepted = true;
      } catch (const NumericalError&) {
        radius = cfg.shrink * used_radius;
      }
    }
    IterationRecord rec{k, trial_loss, cur.gradient.norm(), step, used_radius, accepted, false, StopReason::none,
                        clock.elapsed_ms()};
    res.history.push_back(rec);
    if (cfg.observer) cfg.observer(rec, trial - sub.p, before_gradient, sub.p);
  }
  res.history.back().stop = res.stop;
  res.loss = cur.value;
  res.gradient = cur.gradient;
  return res;
}

}  // namespace hesspcl::optim
