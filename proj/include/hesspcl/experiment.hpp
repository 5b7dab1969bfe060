#pragma once

// Benchmark configuration, problem construction and the run/sweep drivers
// behind the command-line tool. A run directory holds
//   history.csv  params.txt  spectrum.csv  report.json
//   weights_cdf.csv  activations.csv  profile.csv  [track.csv]
// and every file opens with a "# hesspcl <version> config <digest>" line.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hesspcl/analysis.hpp"
#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/nn.hpp"
#include "hesspcl/optim.hpp"
#include "hesspcl/pde/finite_difference.hpp"
#include "hesspcl/pde/finite_element.hpp"
#include "hesspcl/pde/manufactured.hpp"
#include "hesspcl/version.hpp"

namespace hesspcl::experiment {

using json = nlohmann::ordered_json;

inline const std::vector<std::string> kProblems{"poisson-fd", "heat", "poisson-fem", "toy-one-layer"};
inline const std::vector<std::string> kOptimizers{"adam", "bfgs", "lbfgs", "trust-region"};

struct ExperimentConfig {
  std::string problem = "poisson-fd";
  std::string optimizer = "trust-region";
  std::uint64_t seed = 1;
  Index grid = 10;  ///< cells per side (FD grid and FEM mesh)
  double dt = 0.01;
  Index steps = 10;
  std::vector<Index> hidden{20, 20, 20};
  std::optional<double> noise;  ///< unset: 0.1 for poisson-fd, 0 otherwise
  std::string noise_distribution = "uniform01";
  std::uint64_t noise_seed = 0;
  Index max_iters = 5000;
  std::string out = "runs/default";
  bool record_timing = false;
  Index track_every = 0;  ///< spectrum/angle tracking stride, 0 = off

  double effective_noise() const { return noise.value_or(problem == "poisson-fd" ? 0.1 : 0.0); }
  /// The toy problem always uses one hidden unit.
  std::vector<Index> effective_hidden() const { return problem == "toy-one-layer" ? std::vector<Index>{1} : hidden; }

  void validate() const {
    auto one_of = [](const std::string& field, const std::string& v, const std::vector<std::string>& allowed) {
      for (const auto& a : allowed) {
        if (a == v) return;
      }
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError(field, "unknown value '" + v + "' (expected one of: " + list + ")");
    };
    one_of("problem", problem, kProblems);
    one_of("optimizer", optimizer, kOptimizers);
    if (grid < 2) throw ConfigError("grid", "need at least 2 cells per side");
    if (!(dt > 0.0)) throw ConfigError("dt", "must be positive");
    if (steps < 1) throw ConfigError("steps", "must be at least 1");
    if (hidden.empty()) throw ConfigError("hidden", "need at least one hidden layer");
    for (Index h : hidden) {
      if (h < 1) throw ConfigError("hidden", "layer widths must be positive");
    }
    if (!(effective_noise() >= 0.0)) throw ConfigError("noise", "must be nonnegative");
    pde::parse_noise_distribution(noise_distribution);
    if (max_iters < 0) throw ConfigError("max_iters", "must be nonnegative");
    if (track_every < 0) throw ConfigError("track_every", "must be nonnegative");
  }

  /// Everything that influences results (not `out`, not `record_timing`).
  json to_json() const {
    json j;
    j["problem"] = problem;
    j["optimizer"] = optimizer;
    j["seed"] = seed;
    j["grid"] = grid;
    j["dt"] = dt;
    j["steps"] = steps;
    j["hidden"] = effective_hidden();
    j["noise"] = effective_noise();
    j["noise_distribution"] = noise_distribution;
    j["noise_seed"] = noise_seed;
    j["max_iters"] = max_iters;
    j["track_every"] = track_every;
    return j;
  }
};

/// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_digest(const ExperimentConfig& c) { return fnv1a_hex(c.to_json().dump()); }

namespace detail {

template <class T>
T json_get(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(key, std::string("invalid value: ") + e.what());
  }
}

}  // namespace detail

/// Applies the keys present in a flat JSON object; unknown keys are errors.
inline void apply_json(ExperimentConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config", "expected a flat JSON object");
  std::optional<Index> depth, width;
  for (const auto& [key, value] : j.items()) {
    if (key == "problem") c.problem = detail::json_get<std::string>(j, key);
    else if (key == "optimizer") c.optimizer = detail::json_get<std::string>(j, key);
    else if (key == "seed") c.seed = detail::json_get<std::uint64_t>(j, key);
    else if (key == "grid") c.grid = detail::json_get<Index>(j, key);
    else if (key == "dt") c.dt = detail::json_get<double>(j, key);
    else if (key == "steps") c.steps = detail::json_get<Index>(j, key);
    else if (key == "hidden") c.hidden = detail::json_get<std::vector<Index>>(j, key);
    else if (key == "depth") depth = detail::json_get<Index>(j, key);
    else if (key == "width") width = detail::json_get<Index>(j, key);
    else if (key == "noise") c.noise = detail::json_get<double>(j, key);
    else if (key == "noise_distribution") c.noise_distribution = detail::json_get<std::string>(j, key);
    else if (key == "noise_seed") c.noise_seed = detail::json_get<std::uint64_t>(j, key);
    else if (key == "max_iters") c.max_iters = detail::json_get<Index>(j, key);
    else if (key == "out") c.out = detail::json_get<std::string>(j, key);
    else if (key == "record_timing") c.record_timing = detail::json_get<bool>(j, key);
    else if (key == "track_every") c.track_every = detail::json_get<Index>(j, key);
    else throw ConfigError(key, "unknown configuration key");
    (void)value;
  }
  if (depth || width) {
    const Index d = depth.value_or(static_cast<Index>(c.hidden.size()));
    const Index w = width.value_or(c.hidden.empty() ? 20 : c.hidden.front());
    if (d < 1) throw ConfigError("depth", "must be at least 1");
    c.hidden.assign(static_cast<std::size_t>(d), w);
  }
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config", "cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("'") + path + "' is not valid JSON: " + e.what());
  }
  ExperimentConfig c;
  apply_json(c, j);
  return c;
}

/// A benchmark loss together with its no-PDE comparison loss.
struct Problem {
  NetworkSpec spec;
  std::shared_ptr<const Tape> loss;
  std::shared_ptr<const Tape> dnn_only;  ///< null for the toy problem
  std::vector<double> probe;             ///< activation-histogram input
};

inline Tape build_toy_loss(const NetworkSpec& spec, double x0, double y0) {
  TapeBuilder b;
  const auto theta = b.add_inputs(spec.param_count());
  DenseMatrix pt(1, 1);
  pt(0, 0) = x0;
  const auto y = register_network_batch(b, spec, theta, pt);
  return pde::finish_with_residual(std::move(b), y, make_sparse(1, 1, {Triplet(0, 0, 1.0)}),
                                   Vector::Constant(1, -y0), "toy_misfit");
}

/// Σ (κ_θ(p) − target(p))² over the rows of `points`.
template <class Target>
Tape build_kappa_fit_loss(const NetworkSpec& spec, const DenseMatrix& points, Target&& target) {
  TapeBuilder b;
  const auto theta = b.add_inputs(spec.param_count());
  const auto kappa = pde::register_kappa(b, spec, theta, points);
  const Index n = points.rows();
  Vector offset(n);
  std::vector<Triplet> eye;
  for (Index k = 0; k < n; ++k) {
    offset[k] = -target(points.row(k));
    eye.emplace_back(k, k, 1.0);
  }
  return pde::finish_with_residual(std::move(b), kappa, make_sparse(n, n, eye), offset, "kappa_misfit");
}

inline Problem build_problem(const ExperimentConfig& c) {
  c.validate();
  Problem p;
  p.spec.hidden = c.effective_hidden();
  const double noise = c.effective_noise();
  const auto dist = pde::parse_noise_distribution(c.noise_distribution);
  if (c.problem == "poisson-fd") {
    p.spec.input_dim = 1;
    const pde::Grid2D grid(c.grid);
    const auto obs = pde::add_noise(pde::manufactured_poisson_nonlinear(grid), noise, c.noise_seed, dist);
    p.loss = std::make_shared<const Tape>(pde::build_poisson_fd_loss(grid, obs, p.spec));
    p.dnn_only = std::make_shared<const Tape>(pde::build_poisson_dnn_loss(grid, obs, p.spec));
    p.probe = {0.5};
  } else if (c.problem == "heat") {
    p.spec.input_dim = 2;
    const pde::Grid2D grid(c.grid);
    const auto obs = pde::add_noise(pde::manufactured_heat(grid, c.dt, c.steps), noise, c.noise_seed, dist);
    p.loss = std::make_shared<const Tape>(pde::build_heat_loss(grid, obs, c.dt, p.spec));
    p.dnn_only = std::make_shared<const Tape>(pde::build_heat_dnn_loss(grid, p.spec));
    p.probe = {0.5, 0.5};
  } else if (c.problem == "poisson-fem") {
    p.spec.input_dim = 2;
    const pde::TriMesh mesh = pde::structured_mesh(c.grid);
    const auto obs = pde::add_noise(pde::manufactured_fem(mesh), noise, c.noise_seed, dist);
    p.loss = std::make_shared<const Tape>(pde::build_fem_poisson_loss(mesh, obs, p.spec));
    p.dnn_only = std::make_shared<const Tape>(build_kappa_fit_loss(
        p.spec, pde::centroids(mesh), [](const auto& row) { return pde::fem_kappa(row[0], row[1]); }));
    p.probe = {0.5, 0.5};
  } else {
    // y = w₂ tanh(w₁x + b₁) + b₂ fitted to (0.5, sin(π/2)).
    p.spec.input_dim = 1;
    p.loss = std::make_shared<const Tape>(build_toy_loss(p.spec, 0.5, std::sin(0.5 * std::numbers::pi)));
    p.probe = {0.5};
  }
  return p;
}

/// Calls the configured optimizer; `observer` sees (record, θ before the
/// step, gradient there, step).
using Observer = std::function<void(const optim::IterationRecord&, const Vector&, const Vector&, const Vector&)>;

inline optim::MinimizeResult minimize(const ExperimentConfig& c, const optim::Objective& f, const Vector& theta0,
                                      const Observer& observer = nullptr) {
  optim::StopTolerances stop;
  stop.max_iters = c.max_iters;
  if (c.optimizer == "trust-region") {
    optim::TrustRegionConfig tc;
    tc.stop = stop;
    tc.observer = observer;
    return optim::trust_region_minimize(f, theta0, tc);
  }
  if (c.optimizer == "adam") {
    optim::AdamConfig ac;
    ac.stop = stop;
    ac.observer = observer;
    return optim::adam_minimize(f, theta0, ac);
  }
  optim::QuasiNewtonConfig qc;
  qc.stop = stop;
  qc.observer = observer;
  return c.optimizer == "bfgs" ? optim::bfgs_minimize(f, theta0, qc) : optim::lbfgs_minimize(f, theta0, qc);
}

struct RunOutcome {
  ExperimentConfig config;
  std::string digest;
  optim::MinimizeResult result;
  std::optional<analysis::SpectrumReport> spectrum;
  std::optional<analysis::SpectrumReport> dnn_only_spectrum;
  std::string spectrum_error;
};

inline std::string header_line(const std::string& digest) {
  return std::string("# hesspcl ") + kVersion + " config " + digest + "\n";
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("out", "cannot write '" + path.string() + "'");
  return os;
}

inline json spectrum_or_null(const std::optional<analysis::SpectrumReport>& s) {
  return s ? analysis::spectrum_json(*s) : json(nullptr);
}

}  // namespace detail

/// Runs one configuration end to end and writes its artifact directory.
inline RunOutcome run(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  config.validate();
  RunOutcome out;
  out.config = config;
  out.digest = config_digest(config);
  const Problem problem = build_problem(config);
  const optim::TapeObjective objective(problem.loss);
  const Vector theta0 = init_params(problem.spec, config.seed);

  const fs::path dir(config.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("out", "cannot create '" + dir.string() + "': " + ec.message());
  const std::string head = header_line(out.digest);

  std::ostringstream track;
  Observer observer;
  if (config.track_every > 0) {
    track << head << "iter,positive,zero,negative,cos_gradient,cos_newton\n";
    observer = [&](const optim::IterationRecord& r, const Vector& theta, const Vector& grad, const Vector& step) {
      if (r.iter % config.track_every != 0) return;
      const SecondOrder so = objective.second_order(theta);
      const auto rep = analysis::classify_spectrum(so.hessian);
      track << r.iter << ',' << rep.positive << ',' << rep.zero << ',' << rep.negative << ',';
      if (step.norm() > 0.0 && grad.norm() > 0.0) {
        const auto ang = analysis::angle_diagnostics(step, grad, so.hessian);
        track << analysis::real_text(ang.cos_gradient) << ','
              << (ang.cos_newton ? analysis::real_text(*ang.cos_newton) : std::string("NA"));
      } else {
        track << "NA,NA";
      }
      track << '\n';
    };
  }
  out.result = minimize(config, objective, theta0, observer);
  const optim::MinimizeResult& res = out.result;

  {
    auto os = detail::open_output(dir / "history.csv");
    os << head;
    optim::write_history_csv(os, res.history, config.record_timing);
  }
  {
    auto os = detail::open_output(dir / "params.txt");
    os << head;
    write_params(os, res.theta, config.seed);
  }

  Vector v_min, v_max;
  if (std::isfinite(res.loss)) {
    try {
      const SecondOrder so = objective.second_order(res.theta);
      const EigenDecomposition eig = sym_eigen(so.hessian);
      out.spectrum = analysis::classify_eigenvalues(eig.eigenvalues);
      v_min = eig.eigenvectors.col(0);
      v_max = eig.eigenvectors.col(eig.eigenvectors.cols() - 1);
      if (problem.dnn_only) {
        out.dnn_only_spectrum = analysis::classify_spectrum(hessian(*problem.dnn_only,
            std::span<const double>(res.theta.data(), static_cast<std::size_t>(res.theta.size()))));
      }
    } catch (const NumericalError& e) {
      out.spectrum_error = e.what();
    }
  } else {
    out.spectrum_error = "final loss is not finite";
  }

  {
    auto os = detail::open_output(dir / "spectrum.csv");
    os << head;
    if (out.spectrum) analysis::write_spectrum_csv(os, *out.spectrum);
    else os << "index,eigenvalue\n";
  }
  {
    auto os = detail::open_output(dir / "weights_cdf.csv");
    os << head;
    analysis::write_cdf_csv(os, analysis::weight_magnitude_cdf(res.theta));
  }
  const analysis::ActivationHistogram hist = analysis::activation_histogram(problem.spec, res.theta, problem.probe);
  {
    auto os = detail::open_output(dir / "activations.csv");
    os << head;
    analysis::write_histogram_csv(os, hist);
  }
  {
    auto os = detail::open_output(dir / "profile.csv");
    os << head << "alpha,loss_along_min,loss_along_max\n";
    if (v_min.size() > 0) {
      const auto alphas = analysis::linspace(-0.1, 0.1, 41);
      const auto lo = analysis::perturbed_loss_profile(objective, res.theta, v_min, alphas);
      const auto hi = analysis::perturbed_loss_profile(objective, res.theta, v_max, alphas);
      for (std::size_t k = 0; k < alphas.size(); ++k) {
        os << analysis::real_text(alphas[k]) << ',' << analysis::real_text(lo[k]) << ','
           << analysis::real_text(hi[k]) << '\n';
      }
    }
  }
  if (config.track_every > 0) {
    auto os = detail::open_output(dir / "track.csv");
    os << track.str();
  }

  json report;
  report["tool"] = std::string("hesspcl ") + kVersion;
  report["digest"] = out.digest;
  report["config"] = config.to_json();
  report["parameters"] = problem.spec.param_count();
  report["stop_reason"] = std::string(optim::to_string(res.stop));
  report["message"] = res.message;
  report["iterations"] = res.iterations();
  report["evaluations"] = res.evaluations;
  report["skipped_updates"] = res.skipped_updates;
  report["initial_loss"] = res.history.empty() ? json(nullptr) : json(res.history.front().loss);
  report["final_loss"] = std::isfinite(res.loss) ? json(res.loss) : json(nullptr);
  report["final_grad_norm"] = res.gradient.size() ? json(res.gradient.norm()) : json(nullptr);
  report["spectrum"] = detail::spectrum_or_null(out.spectrum);
  report["dnn_only_spectrum"] = detail::spectrum_or_null(out.dnn_only_spectrum);
  if (!out.spectrum_error.empty()) report["spectrum_error"] = out.spectrum_error;
  report["saturation_fraction"] = hist.saturation_fraction;
  {
    auto os = detail::open_output(dir / "report.json");
    os << head << report.dump(2) << '\n';
  }
  return out;
}

struct SweepRow {
  std::string value;
  std::string digest;
  std::optional<RunOutcome> outcome;
  std::string error;
};

inline const std::vector<std::string> kSweepAxes{"seed", "depth", "width", "optimizer"};

/// Copy of `base` with one axis set to `value`; results go to out/<axis>-<value>.
inline ExperimentConfig sweep_point(const ExperimentConfig& base, const std::string& axis, const std::string& value) {
  ExperimentConfig c = base;
  auto as_int = [&](const std::string& s) -> long long {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw ConfigError("values", "'" + s + "' is not an integer");
    return v;
  };
  if (axis == "seed") {
    const long long v = as_int(value);
    if (v < 0) throw ConfigError("values", "seeds must be nonnegative");
    c.seed = static_cast<std::uint64_t>(v);
  } else if (axis == "depth") {
    const long long v = as_int(value);
    if (v < 1) throw ConfigError("values", "depth must be at least 1");
    c.hidden.assign(static_cast<std::size_t>(v), c.hidden.empty() ? 20 : c.hidden.front());
  } else if (axis == "width") {
    const long long v = as_int(value);
    if (v < 1) throw ConfigError("values", "width must be at least 1");
    for (auto& h : c.hidden) h = static_cast<Index>(v);
  } else if (axis == "optimizer") {
    c.optimizer = value;
  } else {
    throw ConfigError("axis", "unknown sweep axis '" + axis + "' (expected seed, depth, width or optimizer)");
  }
  c.out = (std::filesystem::path(base.out) / (axis + "-" + value)).string();
  return c;
}

/// Runs every point; failures are recorded per row and the sweep continues.
/// Writes out/summary.csv.
inline std::vector<SweepRow> sweep(const ExperimentConfig& base, const std::string& axis,
                                   const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("values", "sweep needs at least one value");
  bool known = false;
  for (const auto& a : kSweepAxes) known |= a == axis;
  if (!known) throw ConfigError("axis", "unknown sweep axis '" + axis + "' (expected seed, depth, width or optimizer)");
  std::vector<SweepRow> rows;
  for (const auto& v : values) {
    SweepRow row;
    row.value = v;
    try {
      const ExperimentConfig c = sweep_point(base, axis, v);
      row.digest = config_digest(c);
      row.outcome = run(c);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }

  std::filesystem::create_directories(base.out);
  auto os = detail::open_output(std::filesystem::path(base.out) / "summary.csv");
  os << header_line(config_digest(base));
  os << "axis,value,digest,final_loss,stop_reason,effective_dof,zero_ratio,status\n";
  for (const auto& r : rows) {
    os << axis << ',' << r.value << ',' << r.digest << ',';
    if (r.outcome) {
      const auto& o = *r.outcome;
      os << (std::isfinite(o.result.loss) ? analysis::real_text(o.result.loss) : std::string("NA")) << ','
         << optim::to_string(o.result.stop) << ',';
      if (o.spectrum) {
        os << o.spectrum->effective_dof() << ',' << analysis::real_text(analysis::zero_ratio(*o.spectrum));
      } else {
        os << "NA,NA";
      }
      os << ",ok\n";
    } else {
      std::string msg = r.error;
      for (char& ch : msg) {
        if (ch == ',' || ch == '\n') ch = ';';
      }
      os << "NA,NA,NA,NA,error: " << msg << '\n';
    }
  }
  return rows;
}

}  // namespace hesspcl::experiment
