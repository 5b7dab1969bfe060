// Acceptance checks, one criterion per invocation:
//   acceptance <criterion 1-9 | all> <work dir>
// Prints one PASS/FAIL line per criterion and exits nonzero on failure.
// Long trust-region runs are stored under <work dir>/<config digest> so that
// later criteria can reuse them within one ctest invocation.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hesspcl/experiment.hpp"
#include "support/oracles.hpp"

using namespace hesspcl;
namespace fs = std::filesystem;
using experiment::ExperimentConfig;
using experiment::json;

namespace {

fs::path g_work;
int g_fresh_runs = 0;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Runs with a digest-keyed cache.

struct RunSummary {
  double final_loss = NAN;
  std::string stop;
  Index iterations = 0;
  Index positive = 0, zero = 0, negative = 0, dim = 0;
  double zero_ratio = NAN;
  bool has_spectrum = false;
};

RunSummary read_report(const fs::path& dir) {
  std::ifstream is(dir / "report.json");
  std::string header;
  std::getline(is, header);
  const json r = json::parse(is);
  RunSummary s;
  s.final_loss = r["final_loss"].is_null() ? NAN : r["final_loss"].get<double>();
  s.stop = r["stop_reason"].get<std::string>();
  s.iterations = r["iterations"].get<Index>();
  if (!r["spectrum"].is_null()) {
    const auto& sp = r["spectrum"];
    s.has_spectrum = true;
    s.positive = sp["positive"].get<Index>();
    s.zero = sp["zero"].get<Index>();
    s.negative = sp["negative"].get<Index>();
    s.dim = sp["dim"].get<Index>();
    s.zero_ratio = sp["zero_ratio"].get<double>();
  }
  return s;
}

RunSummary cached_run(ExperimentConfig c) {
  const fs::path dir = g_work / experiment::config_digest(c);
  c.out = dir.string();
  if (!fs::exists(dir / "report.json")) {
    experiment::run(c);
    ++g_fresh_runs;
  }
  return read_report(dir);
}

ExperimentConfig benchmark(const std::string& optimizer, std::uint64_t seed) {
  ExperimentConfig c;
  c.problem = "poisson-fd";
  c.optimizer = optimizer;
  c.seed = seed;
  c.grid = 10;
  c.hidden = {20, 20, 20};
  c.max_iters = 1000;
  return c;
}

// ---------------------------------------------------------------------------
// 1. Derivative correctness on the three benchmark tapes.

Verdict criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_g = 0.0, worst_h = 0.0;
  int cases = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    NetworkSpec s1;
    s1.hidden = {3};
    NetworkSpec s2 = s1;
    s2.input_dim = 2;
    const pde::Grid2D grid(4);
    const pde::TriMesh mesh = pde::structured_mesh(2);
    Vector fem_theta = 0.5 * oracle::uniform(rng, s2.param_count());
    fem_theta[s2.param_count() - 1] = 2.0;  // κ_θ > 0 keeps the stiffness matrix regular
    const std::vector<std::pair<Tape, Vector>> tapes{
        {pde::build_poisson_fd_loss(grid, pde::manufactured_poisson_nonlinear(grid), s1),
         oracle::uniform(rng, s1.param_count())},
        {pde::build_heat_loss(grid, pde::manufactured_heat(grid, 0.01, 2), 0.01, s2),
         oracle::uniform(rng, s2.param_count())},
        {pde::build_fem_poisson_loss(mesh, pde::manufactured_fem(mesh), s2), fem_theta}};
    for (const auto& [tape, theta] : tapes) {
      const Vector g = gradient(tape, oracle::view(theta));
      worst_g = std::max(worst_g, oracle::rel_error(g, oracle::tape_fd_gradient(tape, theta)));
      const SymmetricMatrix h = hessian(tape, oracle::view(theta));
      worst_h = std::max(worst_h, oracle::rel_error(h.dense(), oracle::tape_fd_hessian(tape, theta)));
      ++cases;
    }
  }
  const double secs = seconds_since(t0);
  return {worst_g <= 1e-6 && worst_h <= 1e-5 && secs <= 60.0,
          fmt("%d tapes, gradient rel err %.2e (tol 1e-6), Hessian rel err %.2e (tol 1e-5), %.1f s (budget 60 s)",
              cases, worst_g, worst_h, secs)};
}

// ---------------------------------------------------------------------------
// 2. Sparse solver Jacobian and weighted Hessian.

Verdict criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::bernoulli_distribution keep(0.35);
  double worst_j = 0.0, worst_h = 0.0;
  bool symmetric = true;
  for (int k = 0; k < 50; ++k) {
    SolvePattern p;
    p.dim = 5;
    for (Index i = 0; i < 5; ++i) {
      for (Index j = 0; j < 5; ++j) {
        if (i == j || keep(rng)) p.entries.emplace_back(i, j);
      }
    }
    p.rhs = oracle::uniform(rng, 5);
    Vector a = oracle::uniform(rng, p.nnz());
    for (Index l = 0; l < p.nnz(); ++l) {
      if (p.entries[static_cast<std::size_t>(l)].first == p.entries[static_cast<std::size_t>(l)].second) a[l] += 6.0;
    }
    const Vector y = oracle::uniform(rng, 5);
    auto u = [&](const Vector& v) { return solve_forward(oracle::view(v), p).u; };
    const DenseMatrix jac = DenseMatrix(solve_jacobian(oracle::view(a), p));
    worst_j = std::max(worst_j, oracle::rel_error(jac, oracle::central_jacobian(u, a)));

    const DenseMatrix h = solve_weighted_hessian(oracle::view(a), y, p).dense();
    symmetric = symmetric && (h.array() == h.transpose().array()).all();
    const Index d = p.nnz();
    DenseMatrix fd(d, d);
    auto phi = [&](const Vector& v) { return y.dot(u(v)); };
    for (Index i = 0; i < d; ++i) {
      for (Index j = 0; j < d; ++j) {
        const double hi = 1e-4 * (1.0 + std::abs(a[i])), hj = 1e-4 * (1.0 + std::abs(a[j]));
        Vector pp = a, pm = a, mp = a, mm = a;
        pp[i] += hi, pp[j] += hj;
        pm[i] += hi, pm[j] -= hj;
        mp[i] -= hi, mp[j] += hj;
        mm[i] -= hi, mm[j] -= hj;
        fd(i, j) = (phi(pp) - phi(pm) - phi(mp) + phi(mm)) / (4.0 * hi * hj);
      }
    }
    worst_h = std::max(worst_h, oracle::rel_error(h, fd));
  }
  const double secs = seconds_since(t0);
  return {worst_j <= 1e-6 && worst_h <= 1e-5 && symmetric && secs <= 10.0,
          fmt("50 systems, Jacobian rel err %.2e (tol 1e-6), Hessian rel err %.2e (tol 1e-5), symmetry %s, "
              "%.1f s (budget 10 s)",
              worst_j, worst_h, symmetric ? "exact" : "BROKEN", secs)};
}

// ---------------------------------------------------------------------------
// 3. Trust-region subproblem against a ball sample.

Verdict criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> dims(1, 4);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> normal;
  double worst_excess = 0.0, worst_norm = 0.0;
  int hard = 0;
  for (int k = 0; k < 200; ++k) {
    const Index n = dims(rng);
    const DenseMatrix q = Eigen::HouseholderQR<DenseMatrix>(DenseMatrix(oracle::uniform(rng, n * n).reshaped(n, n)))
                              .householderQ();
    Vector lam = oracle::uniform(rng, n, -2.0, 2.0);
    Vector gt = oracle::uniform(rng, n);
    double radius = 0.1 + 2.0 * u01(rng);
    if (k % 4 == 3) {
      // Hard case: g has no component along the lowest eigenvector and the
      // shifted Newton step stays strictly inside the region.
      lam[0] = -1.0 - u01(rng);
      for (Index i = 1; i < n; ++i) lam[i] = std::max(lam[i], lam[0] + 0.5);
      gt = 0.2 * oracle::uniform(rng, n);
      gt[0] = 0.0;
      radius = 1.0 + 2.0 * u01(rng);
      ++hard;
    }
    const SymmetricMatrix b = SymmetricMatrix::symmetrized(q * lam.asDiagonal() * q.transpose());
    const Vector g = q * gt;
    const optim::SubproblemResult r = optim::tr_subproblem(b, g, radius);
    const double m = optim::model_value(b, g, r.p);
    double best = 0.0;
    for (int s = 0; s < 10000; ++s) {
      Vector d(n);
      for (Index i = 0; i < n; ++i) d[i] = normal(rng);
      const double rho = s % 2 ? 1.0 : std::pow(u01(rng), 1.0 / static_cast<double>(n));
      const Vector p = radius * rho * d / d.norm();
      best = std::min(best, 0.5 * p.dot(b.dense() * p) + g.dot(p));
    }
    worst_excess = std::max(worst_excess, m - best);
    worst_norm = std::max(worst_norm, r.p.norm() / radius - 1.0);
  }
  const double secs = seconds_since(t0);
  return {worst_excess <= 1e-8 && worst_norm <= 1e-8 && secs <= 30.0,
          fmt("200 instances (%d hard), max m(p) - sampled min %.2e (tol 1e-8), max ||p||/radius - 1 %.2e "
              "(tol 1e-8), %.1f s (budget 30 s)",
              hard, worst_excess, worst_norm, secs)};
}

// ---------------------------------------------------------------------------
// 4. One-layer toy: three flat directions at the trust-region minimum.

Verdict criterion4() {
  const auto t0 = std::chrono::steady_clock::now();
  NetworkSpec spec;
  spec.hidden = {1};
  const optim::TapeObjective f(experiment::build_toy_loss(spec, 0.5, std::sin(std::numbers::pi / 2)));
  const optim::MinimizeResult r = optim::trust_region_minimize(f, init_params(spec, 1));
  const Vector ev = sym_eigen(f.second_order(r.theta).hessian).eigenvalues;
  const double top = ev.cwiseAbs().maxCoeff();
  int small = 0;
  for (Index i = 0; i < ev.size(); ++i) small += std::abs(ev[i]) <= 1e-10 * top;
  const double secs = seconds_since(t0);
  return {small == 3 && secs <= 5.0,
          fmt("stop %s after %lld iterations, loss %.2e, eigenvalues [%.2e %.2e %.2e %.3g], %d with "
              "|l| <= 1e-10 l_max (want 3), %.2f s (budget 5 s)",
              std::string(optim::to_string(r.stop)).c_str(), static_cast<long long>(r.iterations()), r.loss, ev[0],
              ev[1], ev[2], ev[3], small, secs)};
}

// ---------------------------------------------------------------------------
// 5 and 6. Optimizer comparison on Poisson-FD and the spectrum at the
// trust-region endpoints.

Verdict criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  std::string rows;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    std::map<std::string, double> loss;
    for (const char* opt : {"trust-region", "bfgs", "lbfgs", "adam"}) loss[opt] = cached_run(benchmark(opt, seed)).final_loss;
    const double tr = loss["trust-region"];
    const bool win = tr <= loss["bfgs"] && tr <= loss["lbfgs"] && tr <= loss["adam"];
    wins += win;
    rows += fmt(" seed %llu: TR %.4g BFGS %.4g L-BFGS %.4g ADAM %.4g%s;", static_cast<unsigned long long>(seed), tr,
                loss["bfgs"], loss["lbfgs"], loss["adam"], win ? "" : " (TR not best)");
  }
  const double secs = seconds_since(t0);
  return {wins >= 3 && secs <= 900.0,
          fmt("TR best on %d/4 seeds (need 3),", wins) + rows +
              fmt(" %.0f s for %d fresh runs (budget 900 s)", secs, g_fresh_runs)};
}

Verdict criterion6() {
  int clean = 0;
  std::string rows;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const RunSummary s = cached_run(benchmark("trust-region", seed));
    clean += s.has_spectrum && s.negative == 0;
    rows += fmt(" seed %llu: %lld positive, %lld zero, %lld negative;", static_cast<unsigned long long>(seed),
                static_cast<long long>(s.positive), static_cast<long long>(s.zero), static_cast<long long>(s.negative));
  }
  return {clean == 4, fmt("no negative eigenvalues on %d/4 trust-region endpoints (need 4),", clean) + rows};
}

// ---------------------------------------------------------------------------
// 7. Zero-eigenvalue ratio grows with depth and width, averaged over the
// criterion 5 seeds.

Verdict criterion7() {
  const auto t0 = std::chrono::steady_clock::now();
  std::string per_seed;
  auto ratio = [&](Index depth, Index width) {
    double sum = 0.0;
    per_seed += fmt(" %lldx%lld:", static_cast<long long>(depth), static_cast<long long>(width));
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      ExperimentConfig c = benchmark("trust-region", seed);
      c.hidden.assign(static_cast<std::size_t>(depth), width);
      const double r = cached_run(c).zero_ratio;
      per_seed += fmt(" %.1f", r);
      sum += r;
    }
    per_seed += ";";
    return sum / 4.0;
  };
  const double d1 = ratio(1, 20), d2 = ratio(2, 20), d3 = ratio(3, 20);
  const double w5 = ratio(3, 5), w10 = ratio(3, 10), w20 = d3;
  const bool depth_ok = d1 < d2 && d2 < d3, width_ok = w5 < w10 && w10 < w20;
  const double secs = seconds_since(t0);
  return {depth_ok && width_ok && secs <= 1200.0,
          fmt("mean zero ratio %% over seeds 1-4 by depth 1/2/3: %.2f %.2f %.2f (%s), by width 5/10/20: "
              "%.2f %.2f %.2f (%s), %.0f s for %d fresh runs (budget 1200 s); per seed",
              d1, d2, d3, depth_ok ? "increasing" : "NOT increasing", w5, w10, w20,
              width_ok ? "increasing" : "NOT increasing", secs, g_fresh_runs) +
              per_seed};
}

// ---------------------------------------------------------------------------
// 8. Observed order of the finite difference forward solve.

Verdict criterion8() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> err;
  for (Index n : {5, 10, 20}) {
    const pde::Grid2D grid(n);
    const Vector u = pde::solve_poisson_forward(grid);
    double e = 0.0;
    for (Index j = 0; j <= n; ++j) {
      for (Index i = 0; i <= n; ++i) e = std::max(e, std::abs(u[grid.node(i, j)] - pde::poisson_u(grid.x(i), grid.y(j))));
    }
    err.push_back(e);
  }
  const double p1 = std::log2(err[0] / err[1]), p2 = std::log2(err[1] / err[2]);
  // Least-squares slope of log e against log h; the three h are equally spaced in log.
  const double fitted = std::log2(err[0] / err[2]) / 2.0;
  const double secs = seconds_since(t0);
  return {fitted >= 1.8 && secs <= 30.0,
          fmt("max errors %.3e %.3e %.3e at h = 1/5, 1/10, 1/20, fitted order %.3f (need >= 1.8), "
              "pairwise %.3f %.3f, %.2f s (budget 30 s)",
              err[0], err[1], err[2], fitted, p1, p2, secs)};
}

// ---------------------------------------------------------------------------
// 9. Byte-identical artifacts on reruns.

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Verdict criterion9() {
  std::vector<ExperimentConfig> configs;
  for (const char* problem : {"poisson-fd", "heat", "poisson-fem", "toy-one-layer"}) {
    for (const char* opt : {"trust-region", "bfgs", "lbfgs", "adam"}) {
      ExperimentConfig c;
      c.problem = problem;
      c.optimizer = opt;
      c.grid = 4;
      c.steps = 2;
      c.hidden = {5, 5};
      c.max_iters = 25;
      c.track_every = 10;
      configs.push_back(c);
    }
  }
  ExperimentConfig full = benchmark("trust-region", 3);
  full.max_iters = 10;
  configs.push_back(full);

  int files = 0, mismatched = 0;
  std::string first_bad;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    fs::path dirs[2];
    for (int rep = 0; rep < 2; ++rep) {
      ExperimentConfig c = configs[k];
      dirs[rep] = g_work / "determinism" / (std::to_string(k) + (rep ? "b" : "a"));
      fs::remove_all(dirs[rep]);
      c.out = dirs[rep].string();
      experiment::run(c);
    }
    for (const auto& entry : fs::directory_iterator(dirs[0])) {
      ++files;
      if (slurp(entry.path()) != slurp(dirs[1] / entry.path().filename())) {
        ++mismatched;
        if (first_bad.empty()) first_bad = entry.path().string();
      }
    }
  }
  // A sweep reruns as well.
  for (int rep = 0; rep < 2; ++rep) {
    ExperimentConfig c = configs[1];
    c.out = (g_work / "determinism" / (rep ? "sweep-b" : "sweep-a")).string();
    fs::remove_all(c.out);
    experiment::sweep(c, "seed", {"1", "2", "3"});
  }
  ++files;
  if (slurp(g_work / "determinism" / "sweep-a" / "summary.csv") != slurp(g_work / "determinism" / "sweep-b" / "summary.csv")) {
    ++mismatched;
    if (first_bad.empty()) first_bad = "sweep summary.csv";
  }
  return {mismatched == 0, fmt("%zu runs plus one sweep, %d files compared, %d differ%s%s", configs.size(), files,
                               mismatched, first_bad.empty() ? "" : ", first: ", first_bad.c_str())};
}

const std::vector<std::pair<std::string, std::function<Verdict()>>> kCriteria{
    {"derivative correctness", criterion1}, {"sparse solver second order", criterion2},
    {"trust-region subproblem", criterion3}, {"one-layer toy spectrum", criterion4},
    {"optimizer comparison", criterion5},    {"semi-definite endpoints", criterion6},
    {"overparametrization trend", criterion7}, {"forward solve order", criterion8},
    {"determinism", criterion9}};

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <1-9|all> [work dir]\n", argv[0]);
    return 2;
  }
  const std::string which = argv[1];
  g_work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "hesspcl-acceptance";
  fs::create_directories(g_work);

  bool all_pass = true;
  for (std::size_t k = 0; k < kCriteria.size(); ++k) {
    if (which != "all" && which != std::to_string(k + 1)) continue;
    Verdict v;
    try {
      v = kCriteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("criterion %zu %s: %s: %s\n", k + 1, v.pass ? "PASS" : "FAIL", kCriteria[k].first.c_str(),
                v.detail.c_str());
    std::fflush(stdout);
    all_pass = all_pass && v.pass;
  }
  return all_pass ? 0 : 1;
}
