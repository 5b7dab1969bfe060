#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "hesspcl/experiment.hpp"
#include "hesspcl/optim.hpp"
#include "support/oracles.hpp"

using namespace hesspcl;
using namespace hesspcl::optim;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

SymmetricMatrix diag(std::initializer_list<double> d) {
  const std::vector<double> v(d);
  return SymmetricMatrix::diagonal(v);
}

/// ½θᵀAθ with a fixed symmetric A.
FunctionObjective quadratic(const DenseMatrix& a) {
  return FunctionObjective(
      a.rows(), [a](const Vector& t) { return 0.5 * t.dot(a * t); }, [a](const Vector& t) { return Vector(a * t); },
      [a](const Vector&) { return SymmetricMatrix::from_lower(a); });
}

FunctionObjective rosenbrock() {
  auto f = [](const Vector& t) { return 100.0 * std::pow(t[1] - t[0] * t[0], 2) + std::pow(1.0 - t[0], 2); };
  auto g = [](const Vector& t) {
    return vec({-400.0 * t[0] * (t[1] - t[0] * t[0]) - 2.0 * (1.0 - t[0]), 200.0 * (t[1] - t[0] * t[0])});
  };
  auto h = [](const Vector& t) {
    DenseMatrix m(2, 2);
    m << 1200.0 * t[0] * t[0] - 400.0 * t[1] + 2.0, -400.0 * t[0], -400.0 * t[0], 200.0;
    return SymmetricMatrix::from_lower(m);
  };
  return FunctionObjective(2, f, g, h);
}

// Brute-force minimum over a uniform sample of the ball plus its sphere.
double sampled_minimum(const SymmetricMatrix& b, const Vector& g, double radius, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double best = 0.0;
  for (int k = 0; k < 10000; ++k) {
    Vector d(g.size());
    for (Index i = 0; i < d.size(); ++i) d[i] = normal(rng);
    const double r = k % 2 ? 1.0 : std::pow(u(rng), 1.0 / static_cast<double>(g.size()));
    best = std::min(best, model_value(b, g, radius * r * d / d.norm()));
  }
  return best;
}

}  // namespace

TEST(Subproblem, InteriorNewtonStep) {
  const SubproblemResult r = tr_subproblem(diag({1.0, 2.0}), vec({1.0, 1.0}), 10.0);
  EXPECT_NEAR(r.p[0], -1.0, 1e-12);
  EXPECT_NEAR(r.p[1], -0.5, 1e-12);
  EXPECT_FALSE(r.on_boundary);
  EXPECT_NEAR(r.predicted, -model_value(diag({1.0, 2.0}), vec({1.0, 1.0}), r.p), 1e-15);
}

TEST(Subproblem, BoundaryStepAlongGradient) {
  const SubproblemResult r = tr_subproblem(SymmetricMatrix::identity(2), vec({2.0, 0.0}), 0.5);
  EXPECT_NEAR(r.p[0], -0.5, 1e-12);
  EXPECT_NEAR(r.p[1], 0.0, 1e-12);
  EXPECT_TRUE(r.on_boundary);
}

TEST(Subproblem, HardCase) {
  const SymmetricMatrix b = diag({-1.0, 1.0});
  const Vector g = vec({0.0, 1.0});
  const SubproblemResult r = tr_subproblem(b, g, 1.0);
  EXPECT_NEAR(std::abs(r.p[0]), std::sqrt(3.0) / 2.0, 1e-6);
  EXPECT_NEAR(r.p[1], -0.5, 1e-8);
  EXPECT_NEAR(model_value(b, g, r.p), -0.75, 1e-10);
  EXPECT_TRUE(r.hard_case);
  EXPECT_GE(oracle::polar_grid_minimum(b.dense(), g, 1.0), model_value(b, g, r.p) - 1e-12);
  EXPECT_NEAR(oracle::polar_grid_minimum(b.dense(), g, 1.0), -0.75, 1e-4);
}

TEST(Subproblem, ZeroGradientIndefinite) {
  const SubproblemResult r = tr_subproblem(diag({-2.0, 1.0}), Vector::Zero(2), 0.5);
  EXPECT_NEAR(r.p.norm(), 0.5, 1e-10);
  EXPECT_NEAR(model_value(diag({-2.0, 1.0}), Vector::Zero(2), r.p), -0.25, 1e-10);
}

TEST(Subproblem, ZeroGradientPositiveDefiniteStaysPut) {
  const SubproblemResult r = tr_subproblem(diag({2.0, 1.0}), Vector::Zero(2), 0.5);
  EXPECT_EQ(r.p.norm(), 0.0);
}

TEST(Subproblem, RejectsNonpositiveRadius) {
  EXPECT_THROW(tr_subproblem(diag({1.0}), vec({1.0}), 0.0), ShapeError);
}

TEST(Subproblem, RandomInstancesMatchBallSample) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> dims(1, 4);
  for (int k = 0; k < 60; ++k) {
    const Index n = dims(rng);
    const SymmetricMatrix b = SymmetricMatrix::symmetrized(oracle::uniform(rng, n * n, -2.0, 2.0).reshaped(n, n));
    Vector g = oracle::uniform(rng, n);
    if (k % 3 == 0) {
      // g ⊥ lowest eigenvector, radius large enough for the hard case.
      const auto e = sym_eigen(b);
      g -= e.eigenvectors.col(0) * e.eigenvectors.col(0).dot(g);
      g *= 0.1;
    }
    const double radius = 0.2 + 2.0 * std::abs(oracle::uniform(rng, 1)[0]);
    const SubproblemResult r = tr_subproblem(b, g, radius);
    EXPECT_LE(r.p.norm(), radius * (1.0 + 1e-8));
    EXPECT_LE(model_value(b, g, r.p), sampled_minimum(b, g, radius, rng) + 1e-8) << "instance " << k;
  }
}

TEST(TrustRegion, QuadraticBowl) {
  const auto f = quadratic(2.0 * DenseMatrix::Identity(2, 2));
  const MinimizeResult r = trust_region_minimize(f, vec({1.0, 1.0}));
  EXPECT_EQ(r.stop, StopReason::gradient_tolerance);
  EXPECT_LE(r.iterations(), 3);
  EXPECT_LE(r.theta.norm(), 1e-12);
}

TEST(TrustRegion, Rosenbrock) {
  const MinimizeResult r = trust_region_minimize(rosenbrock(), vec({-1.2, 1.0}));
  EXPECT_LE(r.iterations(), 50);
  EXPECT_LE(r.gradient.norm(), 1e-8);
  EXPECT_NEAR(r.theta[0], 1.0, 1e-8);
  EXPECT_NEAR(r.theta[1], 1.0, 1e-8);
}

TEST(TrustRegion, NeedsHessianOracle) {
  const FunctionObjective f(1, [](const Vector& t) { return t.squaredNorm(); }, [](const Vector& t) { return Vector(2 * t); });
  EXPECT_THROW(trust_region_minimize(f, vec({1.0})), UnsupportedPrimitive);
}

TEST(TrustRegion, OracleFailureShrinksRadius) {
  // The loss is undefined beyond |θ| = 1.5; the first boundary step from 0.2 lands there.
  auto guard = [](const Vector& t) {
    if (std::abs(t[0]) > 1.5) throw NumericalError("outside domain");
  };
  const FunctionObjective f(
      1, [&](const Vector& t) { guard(t); return -t[0] + 0.25 * std::pow(t[0], 4); },
      [&](const Vector& t) { guard(t); return vec({-1.0 + std::pow(t[0], 3)}); },
      [&](const Vector& t) { guard(t); return diag({3.0 * t[0] * t[0]}); });
  TrustRegionConfig cfg;
  cfg.radius0 = 4.0;
  const MinimizeResult r = trust_region_minimize(f, vec({0.2}), cfg);
  EXPECT_EQ(r.stop, StopReason::gradient_tolerance);
  EXPECT_NEAR(r.theta[0], 1.0, 1e-9);
  bool saw_rejection = false;
  for (const auto& h : r.history) saw_rejection |= !h.accepted;
  EXPECT_TRUE(saw_rejection);
}

TEST(TrustRegion, InitialPointFailureIsReported) {
  const FunctionObjective f(
      1, [](const Vector&) -> double { throw NumericalError("bad start"); },
      [](const Vector&) -> Vector { throw NumericalError("bad start"); },
      [](const Vector&) -> SymmetricMatrix { throw NumericalError("bad start"); });
  const MinimizeResult r = trust_region_minimize(f, vec({0.0}));
  EXPECT_EQ(r.stop, StopReason::initial_point_failure);
  EXPECT_EQ(r.message, "bad start");
}

TEST(TrustRegion, AcceptedLossesNeverIncrease) {
  NetworkSpec spec;
  spec.hidden = {4, 4};
  const pde::Grid2D grid(5);
  const TapeObjective f(pde::build_poisson_fd_loss(grid, pde::manufactured_poisson_nonlinear(grid), spec));
  TrustRegionConfig cfg;
  cfg.stop.max_iters = 60;
  const MinimizeResult r = trust_region_minimize(f, init_params(spec, 2), cfg);
  double last = r.history.front().loss;
  for (const auto& h : r.history) {
    if (!h.accepted) continue;
    EXPECT_LE(h.loss, last);
    last = h.loss;
  }
  EXPECT_LT(r.loss, r.history.front().loss);
}

TEST(TrustRegion, StopsAtIterationCap) {
  TrustRegionConfig cfg;
  cfg.stop.max_iters = 3;
  const MinimizeResult r = trust_region_minimize(rosenbrock(), vec({-1.2, 1.0}), cfg);
  EXPECT_EQ(r.stop, StopReason::max_iterations);
  EXPECT_EQ(r.iterations(), 3);
  EXPECT_EQ(r.history.back().stop, StopReason::max_iterations);
}

TEST(LineSearch, StrongWolfeConditionsHold) {
  const auto f = rosenbrock();
  const Vector x = vec({-1.2, 1.0});
  Vector g0;
  const double f0 = f.value_gradient(x, g0);
  const Vector p = -g0 / g0.norm();
  const LineSearchResult ls = strong_wolfe(f, x, f0, g0, p, 1.0, {});
  ASSERT_TRUE(ls.ok);
  EXPECT_LE(ls.loss, f0 + 1e-4 * ls.alpha * g0.dot(p));
  EXPECT_LE(std::abs(ls.gradient.dot(p)), 0.9 * std::abs(g0.dot(p)));
}

TEST(LineSearch, RejectsAscentDirection) {
  const auto f = rosenbrock();
  const Vector x = vec({-1.2, 1.0});
  Vector g0;
  const double f0 = f.value_gradient(x, g0);
  EXPECT_FALSE(strong_wolfe(f, x, f0, g0, g0, 1.0, {}).ok);
}

TEST(Bfgs, FirstStepFollowsNegativeGradient) {
  DenseMatrix a(2, 2);
  a << 3.0, 1.0, 1.0, 2.0;
  QuasiNewtonConfig cfg;
  cfg.stop.max_iters = 1;
  for (bool limited : {false, true}) {
    Vector first_step, first_gradient;
    cfg.observer = [&](const IterationRecord& rec, const Vector&, const Vector& g, const Vector& s) {
      if (rec.iter == 1) first_step = s, first_gradient = g;
    };
    limited ? lbfgs_minimize(quadratic(a), vec({1.0, -2.0}), cfg) : bfgs_minimize(quadratic(a), vec({1.0, -2.0}), cfg);
    ASSERT_EQ(first_step.size(), 2);
    EXPECT_NEAR(first_step.dot(-first_gradient) / (first_step.norm() * first_gradient.norm()), 1.0, 1e-14);
  }
}

TEST(Bfgs, IllConditionedQuadraticWithinTenIterations) {
  const DenseMatrix a = vec({1.0, 10.0}).asDiagonal();
  const MinimizeResult r = bfgs_minimize(quadratic(a), vec({1.0, 1.0}));
  EXPECT_EQ(r.stop, StopReason::gradient_tolerance);
  EXPECT_LE(r.iterations(), 10);
}

TEST(Bfgs, Rosenbrock) {
  const MinimizeResult r = bfgs_minimize(rosenbrock(), vec({-1.2, 1.0}));
  EXPECT_EQ(r.stop, StopReason::gradient_tolerance);
  EXPECT_NEAR(r.theta[0], 1.0, 1e-6);
}

TEST(Lbfgs, Rosenbrock) {
  const MinimizeResult r = lbfgs_minimize(rosenbrock(), vec({-1.2, 1.0}));
  EXPECT_EQ(r.stop, StopReason::gradient_tolerance);
  EXPECT_NEAR(r.theta[0], 1.0, 1e-6);
}

TEST(Lbfgs, MatchesBfgsOnQuadraticWithFullMemory) {
  std::mt19937_64 rng(4);
  DenseMatrix m = oracle::uniform(rng, 16).reshaped(4, 4);
  const DenseMatrix a = m * m.transpose() + DenseMatrix::Identity(4, 4);
  const Vector x0 = oracle::uniform(rng, 4);
  const MinimizeResult b = bfgs_minimize(quadratic(a), x0), l = lbfgs_minimize(quadratic(a), x0);
  EXPECT_LE(b.theta.norm(), 1e-8);
  EXPECT_LE(l.theta.norm(), 1e-8);
}

TEST(QuasiNewton, CurvatureGuard) {
  EXPECT_FALSE(optim::detail::curvature_ok(vec({1.0, 0.0}), vec({0.0, 1.0}), 1e-10));
  EXPECT_FALSE(optim::detail::curvature_ok(vec({1.0, 0.0}), vec({-1.0, 0.0}), 1e-10));
  EXPECT_TRUE(optim::detail::curvature_ok(vec({1.0, 0.0}), vec({1.0, 0.5}), 1e-10));
}

TEST(Adam, FirstUpdateIsSignStep) {
  const FunctionObjective f(
      2, [](const Vector& t) { return t[0] - 2.0 * t[1]; }, [](const Vector&) { return vec({1.0, -2.0}); });
  AdamConfig cfg;
  cfg.stop.max_iters = 1;
  const MinimizeResult r = adam_minimize(f, Vector::Zero(2), cfg);
  EXPECT_NEAR(r.theta[0], -1e-3, 1e-10);
  EXPECT_NEAR(r.theta[1], 1e-3, 1e-10);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  const FunctionObjective f(2, [](const Vector&) { return 1.0; }, [](const Vector&) { return Vector(Vector::Zero(2)); });
  const Vector x0 = vec({0.3, -0.4});
  const MinimizeResult r = adam_minimize(f, x0);
  EXPECT_EQ(r.theta, x0);
  EXPECT_EQ(r.stop, StopReason::gradient_tolerance);
}

TEST(Adam, Deterministic) {
  AdamConfig cfg;
  cfg.stop.max_iters = 200;
  const MinimizeResult a = adam_minimize(rosenbrock(), vec({-1.2, 1.0}), cfg);
  const MinimizeResult b = adam_minimize(rosenbrock(), vec({-1.2, 1.0}), cfg);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_LT(a.loss, a.history.front().loss);
}

TEST(History, CsvHeaderAndTimingPlaceholder) {
  std::vector<IterationRecord> rows{{0, 1.5, 2.0, 0.0, 1.0, true, false, StopReason::none, 12.0},
                                    {1, 0.5, 0.1, 0.3, 1.0, false, false, StopReason::max_iterations, 13.0}};
  std::ostringstream plain, timed;
  write_history_csv(plain, rows, false);
  write_history_csv(timed, rows, true);
  EXPECT_EQ(plain.str(),
            "iter,loss,grad_norm,step_norm,radius,accepted,stop_reason,wall_ms\n"
            "0,1.5,2,0,1,1,,NA\n"
            "1,0.5,0.10000000000000001,0.29999999999999999,1,0,max_iterations,NA\n");
  EXPECT_NE(timed.str().find(",13\n"), std::string::npos);
}
