#pragma once

// Hessian-spectrum and optimizer diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/nn.hpp"
#include "hesspcl/optim/objective.hpp"

namespace hesspcl::analysis {

struct SpectrumReport {
  Vector eigenvalues;  ///< ascending
  Index positive = 0;
  Index zero = 0;
  Index negative = 0;
  double epsilon = 1e-6;
  double threshold = 0.0;
  /// True when λ_max ≤ 0 and the threshold is taken from max |λ| instead.
  bool threshold_from_abs = false;

  Index dim() const { return eigenvalues.size(); }
  Index effective_dof() const { return positive; }
};

/// λ > ε·λ_max is positive, λ < −ε·λ_max negative, the rest zero.
inline SpectrumReport classify_eigenvalues(Vector eigenvalues, double epsilon = 1e-6) {
  if (eigenvalues.size() < 1) throw ShapeError("classify_spectrum: empty spectrum");
  if (!(epsilon >= 0.0)) throw ShapeError("classify_spectrum: epsilon must be nonnegative");
  std::sort(eigenvalues.data(), eigenvalues.data() + eigenvalues.size());
  SpectrumReport r;
  r.epsilon = epsilon;
  const double top = eigenvalues[eigenvalues.size() - 1];
  if (top > 0.0) {
    r.threshold = epsilon * top;
  } else {
    r.threshold = epsilon * eigenvalues.cwiseAbs().maxCoeff();
    r.threshold_from_abs = true;
  }
  for (Index i = 0; i < eigenvalues.size(); ++i) {
    const double l = eigenvalues[i];
    if (l > r.threshold) ++r.positive;
    else if (l < -r.threshold) ++r.negative;
    else ++r.zero;
  }
  r.eigenvalues = std::move(eigenvalues);
  return r;
}

inline SpectrumReport classify_spectrum(const SymmetricMatrix& h, double epsilon = 1e-6) {
  return classify_eigenvalues(sym_eigen(h).eigenvalues, epsilon);
}

inline double zero_ratio(const SpectrumReport& r) {
  return 100.0 * static_cast<double>(r.zero) / static_cast<double>(r.dim());
}

/// L(θ* + αv) for each α.
inline std::vector<double> perturbed_loss_profile(const optim::Objective& f, const Vector& theta, const Vector& v,
                                                  std::span<const double> alphas) {
  if (v.size() != theta.size()) throw ShapeError("loss profile: direction has the wrong dimension");
  if (std::abs(v.norm() - 1.0) > 1e-8) throw ShapeError("loss profile: direction must have unit norm");
  std::vector<double> out;
  out.reserve(alphas.size());
  for (double a : alphas) out.push_back(f.value(theta + a * v));
  return out;
}

/// n evenly spaced values on [lo, hi].
inline std::vector<double> linspace(double lo, double hi, Index n) {
  std::vector<double> out;
  for (Index i = 0; i < n; ++i) {
    out.push_back(n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return out;
}

struct AngleReport {
  double cos_gradient = 0.0;           ///< −pᵀg / (‖p‖‖g‖)
  std::optional<double> cos_newton;    ///< pᵀq / (‖p‖‖q‖), q = −H⁻¹g
  std::string newton_absent_reason;
};

inline constexpr double kNewtonConditionCutoff = 1e12;

inline AngleReport angle_diagnostics(const Vector& p, const Vector& g, const SymmetricMatrix& h) {
  if (p.size() != g.size() || h.dim() != g.size()) throw ShapeError("angle diagnostics: dimension mismatch");
  const double pn = p.norm(), gn = g.norm();
  if (!(pn > 0.0) || !(gn > 0.0)) throw ShapeError("angle diagnostics: p and g must be nonzero");
  AngleReport r;
  r.cos_gradient = -p.dot(g) / (pn * gn);
  try {
    const LuFactorization lu(h.dense());
    if (lu.condition_estimate() > kNewtonConditionCutoff) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "Hessian condition estimate %.3g exceeds %.0e", lu.condition_estimate(),
                    kNewtonConditionCutoff);
      r.newton_absent_reason = buf;
      return r;
    }
    const Vector q = -lu.solve(g);
    r.cos_newton = p.dot(q) / (pn * q.norm());
  } catch (const NumericalError& e) {
    r.newton_absent_reason = std::string("Hessian is singular: ") + e.what();
  }
  return r;
}

struct CdfPoint {
  double magnitude;
  double fraction;  ///< share of parameters with |θᵢ| ≤ magnitude
};

/// Empirical CDF of |θᵢ|, one point per distinct magnitude.
inline std::vector<CdfPoint> weight_magnitude_cdf(const Vector& theta) {
  std::vector<double> mag(static_cast<std::size_t>(theta.size()));
  for (Index i = 0; i < theta.size(); ++i) mag[static_cast<std::size_t>(i)] = std::abs(theta[i]);
  std::sort(mag.begin(), mag.end());
  std::vector<CdfPoint> out;
  const double n = static_cast<double>(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i) {
    if (i + 1 < mag.size() && mag[i + 1] == mag[i]) continue;
    out.push_back({mag[i], static_cast<double>(i + 1) / n});
  }
  return out;
}

struct ActivationHistogram {
  static constexpr int kBins = 40;
  std::vector<double> edges;  ///< kBins + 1 edges on [−1, 1]
  std::vector<Index> counts;
  Index total = 0;
  double saturation_fraction = 0.0;  ///< share with |a| > 0.99
};

inline ActivationHistogram histogram_of(std::span<const double> values) {
  ActivationHistogram h;
  h.edges = linspace(-1.0, 1.0, ActivationHistogram::kBins + 1);
  h.counts.assign(ActivationHistogram::kBins, 0);
  Index saturated = 0;
  for (double a : values) {
    int bin = static_cast<int>(std::floor((a + 1.0) / 2.0 * ActivationHistogram::kBins));
    bin = std::clamp(bin, 0, ActivationHistogram::kBins - 1);
    ++h.counts[static_cast<std::size_t>(bin)];
    if (std::abs(a) > 0.99) ++saturated;
  }
  h.total = static_cast<Index>(values.size());
  h.saturation_fraction = h.total ? static_cast<double>(saturated) / static_cast<double>(h.total) : 0.0;
  return h;
}

/// Every hidden tanh output of one forward pass at `probe`.
inline ActivationHistogram activation_histogram(const NetworkSpec& spec, const Vector& theta,
                                                std::span<const double> probe) {
  std::vector<double> acts;
  evaluate_network(spec, theta, probe, &acts);
  return histogram_of(acts);
}

inline std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_spectrum_csv(std::ostream& os, const SpectrumReport& r) {
  os << "index,eigenvalue\n";
  for (Index i = 0; i < r.dim(); ++i) os << i << ',' << real_text(r.eigenvalues[i]) << '\n';
}

inline nlohmann::ordered_json spectrum_json(const SpectrumReport& r) {
  nlohmann::ordered_json j;
  j["dim"] = r.dim();
  j["positive"] = r.positive;
  j["zero"] = r.zero;
  j["negative"] = r.negative;
  j["epsilon"] = r.epsilon;
  j["threshold"] = r.threshold;
  j["threshold_from_abs"] = r.threshold_from_abs;
  j["zero_ratio"] = zero_ratio(r);
  j["effective_dof"] = r.effective_dof();
  j["lambda_min"] = r.eigenvalues[0];
  j["lambda_max"] = r.eigenvalues[r.dim() - 1];
  return j;
}

inline void write_cdf_csv(std::ostream& os, const std::vector<CdfPoint>& cdf) {
  os << "magnitude,fraction\n";
  for (const auto& p : cdf) os << real_text(p.magnitude) << ',' << real_text(p.fraction) << '\n';
}

inline void write_histogram_csv(std::ostream& os, const ActivationHistogram& h) {
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    os << real_text(h.edges[b]) << ',' << real_text(h.edges[b + 1]) << ',' << h.counts[b] << '\n';
  }
}

}  // namespace hesspcl::analysis
