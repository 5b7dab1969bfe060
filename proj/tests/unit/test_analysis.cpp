#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

#include "hesspcl/analysis.hpp"
#include "hesspcl/experiment.hpp"
#include "hesspcl/optim.hpp"
#include "support/oracles.hpp"

using namespace hesspcl;
using namespace hesspcl::analysis;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

struct ToyMinimum {
  optim::TapeObjective objective;
  optim::MinimizeResult result;
  SymmetricMatrix hessian;
};

ToyMinimum toy_minimum() {
  NetworkSpec spec;
  spec.hidden = {1};
  optim::TapeObjective f(experiment::build_toy_loss(spec, 0.5, std::sin(std::numbers::pi / 2)));
  auto r = optim::trust_region_minimize(f, init_params(spec, 1));
  const auto h = f.second_order(r.theta).hessian;
  return {std::move(f), std::move(r), h};
}

}  // namespace

TEST(Classify, ThresholdExample) {
  const SpectrumReport r = classify_eigenvalues(vec({10.0, 1e-4, 1e-7, -1e-7, -0.5}));
  EXPECT_EQ(r.positive, 2);
  EXPECT_EQ(r.zero, 2);
  EXPECT_EQ(r.negative, 1);
  EXPECT_DOUBLE_EQ(r.threshold, 1e-5);
  EXPECT_DOUBLE_EQ(zero_ratio(r), 40.0);
  EXPECT_EQ(r.effective_dof(), 2);
}

TEST(Classify, ZeroMatrix) {
  const SpectrumReport r = classify_spectrum(SymmetricMatrix(4));
  EXPECT_EQ(r.zero, 4);
  EXPECT_DOUBLE_EQ(zero_ratio(r), 100.0);
}

TEST(Classify, NonpositiveSpectrumUsesMagnitude) {
  const SpectrumReport r = classify_eigenvalues(vec({-2.0, -1e-9, 0.0}));
  EXPECT_TRUE(r.threshold_from_abs);
  EXPECT_EQ(r.negative, 1);
  EXPECT_EQ(r.zero, 2);
}

TEST(Classify, EigenvaluesComeBackSorted) {
  const SpectrumReport r = classify_eigenvalues(vec({3.0, -1.0, 2.0}));
  EXPECT_EQ(r.eigenvalues, vec({-1.0, 2.0, 3.0}));
}

TEST(Classify, ToyMinimumHasThreeFlatDirections) {
  const ToyMinimum t = toy_minimum();
  EXPECT_EQ(t.result.stop, optim::StopReason::gradient_tolerance);
  const SpectrumReport r = classify_spectrum(t.hessian, 1e-10);
  EXPECT_EQ(r.zero, 3);
  EXPECT_EQ(r.positive, 1);
  EXPECT_EQ(classify_spectrum(t.hessian).zero, 3);
}

TEST(Profile, AlphaZeroIsLossAtMinimum) {
  const ToyMinimum t = toy_minimum();
  const double alphas[] = {0.0};
  EXPECT_EQ(perturbed_loss_profile(t.objective, t.result.theta, vec({1.0, 0.0, 0.0, 0.0}), alphas)[0],
            t.objective.value(t.result.theta));
}

TEST(Profile, QuadraticAlongEigenvector) {
  const DenseMatrix a = vec({2.0, 5.0}).asDiagonal();
  const optim::FunctionObjective f(2, [a](const Vector& x) { return 0.5 * x.dot(a * x) + 1.0; },
                                   [a](const Vector& x) { return Vector(a * x); });
  const auto alphas = linspace(-0.5, 0.5, 11);
  const auto curve = perturbed_loss_profile(f, Vector::Zero(2), vec({0.0, 1.0}), alphas);
  for (std::size_t k = 0; k < alphas.size(); ++k) EXPECT_NEAR(curve[k], 1.0 + 2.5 * alphas[k] * alphas[k], 1e-15);
}

TEST(Profile, FlatDirectionOnToy) {
  const ToyMinimum t = toy_minimum();
  const auto e = sym_eigen(t.hessian);
  const double loss = t.objective.value(t.result.theta);
  auto spread = [&](Index c) {
    double worst = 0.0;
    for (double l : perturbed_loss_profile(t.objective, t.result.theta, e.eigenvectors.col(c), linspace(-0.01, 0.01, 21))) {
      worst = std::max(worst, std::abs(l - loss));
    }
    return worst;
  };
  for (Index c = 0; c < 3; ++c) EXPECT_LE(spread(c), 1e-6 * (1.0 + loss)) << "direction " << c;
  EXPECT_GE(spread(3), 0.4 * e.eigenvalues[3] * 1e-4);
}

TEST(Profile, RejectsNonUnitDirection) {
  const optim::FunctionObjective f(1, [](const Vector& x) { return x[0]; }, [](const Vector&) { return vec({1.0}); });
  const double alphas[] = {0.0};
  EXPECT_THROW(perturbed_loss_profile(f, vec({0.0}), vec({2.0}), alphas), ShapeError);
}

TEST(Angles, SteepestDescentDirection) {
  const Vector g = vec({1.0, -2.0});
  const AngleReport r = angle_diagnostics(-g, g, SymmetricMatrix::identity(2));
  EXPECT_NEAR(r.cos_gradient, 1.0, 1e-15);
  ASSERT_TRUE(r.cos_newton.has_value());
  EXPECT_NEAR(*r.cos_newton, r.cos_gradient, 1e-15);
}

TEST(Angles, IdentityHessianNewtonEqualsGradientAngle) {
  const AngleReport r = angle_diagnostics(vec({0.3, -0.1}), vec({-1.0, 0.5}), SymmetricMatrix::identity(2));
  ASSERT_TRUE(r.cos_newton.has_value());
  EXPECT_NEAR(*r.cos_newton, r.cos_gradient, 1e-15);
}

TEST(Angles, SingularHessianHasNoNewtonAngle) {
  const double d[] = {1.0, 0.0};
  const AngleReport r = angle_diagnostics(vec({1.0, 1.0}), vec({-1.0, 0.0}), SymmetricMatrix::diagonal(d));
  EXPECT_FALSE(r.cos_newton.has_value());
  EXPECT_FALSE(r.newton_absent_reason.empty());
}

TEST(Angles, IllConditionedHessianHasNoNewtonAngle) {
  const double d[] = {1.0, 1e-14};
  const AngleReport r = angle_diagnostics(vec({1.0, 1.0}), vec({-1.0, -1.0}), SymmetricMatrix::diagonal(d));
  EXPECT_FALSE(r.cos_newton.has_value());
}

TEST(WeightCdf, StepAtOne) {
  const auto cdf = weight_magnitude_cdf(vec({1.0, -1.0, 1.0}));
  ASSERT_EQ(cdf.size(), 1u);
  EXPECT_EQ(cdf[0].magnitude, 1.0);
  EXPECT_EQ(cdf[0].fraction, 1.0);
}

TEST(WeightCdf, MonotoneFractions) {
  const auto cdf = weight_magnitude_cdf(vec({0.5, -2.0, 0.1, 0.5}));
  ASSERT_EQ(cdf.size(), 3u);
  EXPECT_DOUBLE_EQ(cdf[0].fraction, 0.25);
  EXPECT_DOUBLE_EQ(cdf[1].fraction, 0.75);
  EXPECT_DOUBLE_EQ(cdf[2].fraction, 1.0);
}

TEST(Activations, ZeroParametersFillCenterBin) {
  const NetworkSpec spec;
  const double probe = 0.4;
  const ActivationHistogram h = activation_histogram(spec, Vector::Zero(spec.param_count()), {&probe, 1});
  EXPECT_EQ(h.total, 60);
  EXPECT_EQ(h.counts[ActivationHistogram::kBins / 2], 60);
  EXPECT_EQ(h.saturation_fraction, 0.0);
}

TEST(Activations, SaturationFraction) {
  const double a[] = {0.995, -0.999, 0.2, 0.98};
  const ActivationHistogram h = histogram_of(a);
  EXPECT_DOUBLE_EQ(h.saturation_fraction, 0.5);
  EXPECT_EQ(h.counts.front() + h.counts.back(), 3);
}

TEST(Output, SpectrumCsvIsFullPrecision) {
  std::ostringstream os;
  write_spectrum_csv(os, classify_eigenvalues(vec({0.1, 2.0})));
  EXPECT_EQ(os.str(), "index,eigenvalue\n0,0.10000000000000001\n1,2\n");
}

TEST(Output, SpectrumJsonCounts) {
  const auto j = spectrum_json(classify_eigenvalues(vec({10.0, 1e-4, 1e-7, -1e-7, -0.5})));
  EXPECT_EQ(j["positive"], 2);
  EXPECT_EQ(j["zero"], 2);
  EXPECT_EQ(j["negative"], 1);
  EXPECT_DOUBLE_EQ(j["zero_ratio"].get<double>(), 40.0);
}
