#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "hesspcl/linalg.hpp"

namespace hesspcl::optim {

enum class StopReason {
  none,
  gradient_tolerance,
  radius_too_small,
  max_iterations,
  line_search_failure,
  initial_point_failure,
  oracle_failure,
};

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::none: return "";
    case StopReason::gradient_tolerance: return "gradient_tolerance";
    case StopReason::radius_too_small: return "radius_too_small";
    case StopReason::max_iterations: return "max_iterations";
    case StopReason::line_search_failure: return "line_search_failure";
    case StopReason::initial_point_failure: return "initial_point_failure";
    case StopReason::oracle_failure: return "oracle_failure";
  }
  return "";
}

/// One row of optimizer telemetry. `radius` holds Δ for trust region, the
/// accepted step length for line-search methods and the learning rate for
/// ADAM. `loss` is the trial loss, so rejected rows may show increases.
struct IterationRecord {
  Index iter = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double step_norm = 0.0;
  double radius = 0.0;
  bool accepted = true;
  bool update_skipped = false;
  StopReason stop = StopReason::none;
  double wall_ms = 0.0;
};

struct MinimizeResult {
  Vector theta;
  double loss = 0.0;
  Vector gradient;
  StopReason stop = StopReason::none;
  std::string message;
  std::vector<IterationRecord> history;
  Index skipped_updates = 0;
  Index evaluations = 0;

  /// Iterations performed (row 0 is the starting point).
  Index iterations() const { return history.empty() ? 0 : history.back().iter; }
};

struct StopTolerances {
  Index max_iters = 5000;
  double grad_rel_tol = 1e-10;

  bool gradient_converged(double grad_norm, double loss) const {
    return grad_norm <= grad_rel_tol * (1.0 + std::abs(loss));
  }
};

/// Sees each recorded iteration with the iterate the step was computed at,
/// the gradient there and the step itself.
using IterationObserver =
    std::function<void(const IterationRecord&, const Vector& theta, const Vector& gradient, const Vector& step)>;

class WallClock {
 public:
  WallClock() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline std::string history_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Wall times vary between runs, so they print as NA unless requested.
inline void write_history_csv(std::ostream& os, const std::vector<IterationRecord>& rows, bool with_timing) {
  os << "iter,loss,grad_norm,step_norm,radius,accepted,stop_reason,wall_ms\n";
  for (const auto& r : rows) {
    os << r.iter << ',' << history_real(r.loss) << ',' << history_real(r.grad_norm) << ','
       << history_real(r.step_norm) << ',' << history_real(r.radius) << ',' << (r.accepted ? 1 : 0) << ','
       << to_string(r.stop) << ',' << (with_timing ? history_real(r.wall_ms) : std::string("NA")) << '\n';
  }
}

}  // namespace hesspcl::optim
