#pragma once

// Exact coefficients, manufactured solutions and their source terms on the
// unit square, plus the uniform grid they are sampled on.
//
// Sources were derived by hand from the flux form ∇·(κ∇u):
//   state-dependent κ(u):  f = κ'(u)|∇u|² + κ(u)Δu
//   spatial κ(x, y):       f = ∇κ·∇u + κΔu
// and are checked against finite differences in the unit tests.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"

namespace hesspcl::pde {

/// Uniform (n+1)×(n+1) node grid on [0,1]²; node (i, j) sits at (i h, j h)
/// and has flat index j (n+1) + i.
struct Grid2D {
  Index n = 10;

  explicit Grid2D(Index cells = 10) : n(cells) {
    if (n < 2) throw ShapeError("grid: need at least 2 cells per side");
  }

  double h() const { return 1.0 / static_cast<double>(n); }
  Index side() const { return n + 1; }
  Index node_count() const { return side() * side(); }
  Index node(Index i, Index j) const { return j * side() + i; }
  double x(Index i) const { return static_cast<double>(i) * h(); }
  double y(Index j) const { return static_cast<double>(j) * h(); }
  bool interior(Index i, Index j) const { return i > 0 && j > 0 && i < n && j < n; }

  /// Interior nodes in flat-index order.
  std::vector<Index> interior_nodes() const {
    std::vector<Index> out;
    for (Index j = 1; j < n; ++j) {
      for (Index i = 1; i < n; ++i) out.push_back(node(i, j));
    }
    return out;
  }
};

// Nonlinear Poisson problem, κ depends on the state.

inline double poisson_u(double x, double y) {
  return x * (1.0 - x) * (1.0 - y) * (1.0 - y) * std::sin(y);
}

inline double poisson_kappa(double u) { return 2.0 - (1.4 - 3.0 * u) * std::sin(18.0 * u); }

inline double poisson_kappa_prime(double u) {
  return 3.0 * std::sin(18.0 * u) - 18.0 * (1.4 - 3.0 * u) * std::cos(18.0 * u);
}

inline double poisson_f(double x, double y) {
  const double gx = x * (1.0 - x), gx1 = 1.0 - 2.0 * x, gx2 = -2.0;
  const double s = std::sin(y), c = std::cos(y), w = 1.0 - y;
  const double gy = w * w * s;
  const double gy1 = -2.0 * w * s + w * w * c;
  const double gy2 = 2.0 * s - 4.0 * w * c - w * w * s;
  const double u = gx * gy;
  const double ux = gx1 * gy, uy = gx * gy1;
  const double lap = gx2 * gy + gx * gy2;
  return poisson_kappa_prime(u) * (ux * ux + uy * uy) + poisson_kappa(u) * lap;
}

// Heat equation u_t = ∇·(κ∇u) + f with spatial κ.

inline double heat_u(double x, double y, double t) {
  return x * (1.0 - x) * y * y * (1.0 - y) * (1.0 - y) * std::exp(-t);
}

inline double heat_kappa(double x, double y) {
  const double x2 = x * x;
  return 2.0 * x2 - 1.05 * x2 * x2 + x2 * x2 * x2 + x * y + y * y;
}

inline double heat_f(double x, double y, double t) {
  const double gx = x * (1.0 - x), gx1 = 1.0 - 2.0 * x, gx2 = -2.0;
  const double gy = y * y * (1.0 - y) * (1.0 - y);
  const double gy1 = 2.0 * y * (1.0 - y) * (1.0 - 2.0 * y);
  const double gy2 = 2.0 - 12.0 * y + 12.0 * y * y;
  const double e = std::exp(-t);
  const double u = gx * gy * e;
  const double ux = gx1 * gy * e, uy = gx * gy1 * e;
  const double lap = (gx2 * gy + gx * gy2) * e;
  const double kx = 4.0 * x - 4.2 * x * x * x + 6.0 * std::pow(x, 5) + y;
  const double ky = x + 2.0 * y;
  const double div = kx * ux + ky * uy + heat_kappa(x, y) * lap;
  return -u - div;
}

// Linear Poisson problem solved with P1 finite elements.

inline double fem_kappa(double x, double y) { return 1.0 / (1.0 + x * x + y * y) + 1.0; }

/// Constant source of ∇·(κ∇u) = f for the finite element benchmark.
inline constexpr double kFemSource = -1.0;

/// Sampled fields. FD problems fill `u` and `f` on every grid node; the heat
/// problem fills `snapshots`/`sources` per time level; the FEM problem
/// fills `u` on free nodes.
struct Observations {
  Vector u;
  Vector f;
  std::vector<Vector> snapshots;
  std::vector<Vector> sources;
};

inline Observations manufactured_poisson_nonlinear(const Grid2D& grid) {
  Observations obs;
  obs.u.resize(grid.node_count());
  obs.f.resize(grid.node_count());
  for (Index j = 0; j <= grid.n; ++j) {
    for (Index i = 0; i <= grid.n; ++i) {
      obs.u[grid.node(i, j)] = poisson_u(grid.x(i), grid.y(j));
      obs.f[grid.node(i, j)] = poisson_f(grid.x(i), grid.y(j));
    }
  }
  return obs;
}

inline Observations manufactured_heat(const Grid2D& grid, double dt, Index steps) {
  if (!(dt > 0.0)) throw ShapeError("heat: time step must be positive");
  if (steps < 1) throw ShapeError("heat: need at least one step");
  Observations obs;
  for (Index s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) * dt;
    Vector u(grid.node_count()), f(grid.node_count());
    for (Index j = 0; j <= grid.n; ++j) {
      for (Index i = 0; i <= grid.n; ++i) {
        u[grid.node(i, j)] = heat_u(grid.x(i), grid.y(j), t);
        f[grid.node(i, j)] = heat_f(grid.x(i), grid.y(j), t);
      }
    }
    obs.snapshots.push_back(std::move(u));
    obs.sources.push_back(std::move(f));
  }
  return obs;
}

enum class NoiseDistribution {
  unit_interval,  ///< z ~ U(0, 1)
  symmetric,      ///< z ~ U(-1, 1)
};

inline NoiseDistribution parse_noise_distribution(const std::string& s) {
  if (s == "uniform01") return NoiseDistribution::unit_interval;
  if (s == "uniform11") return NoiseDistribution::symmetric;
  throw ConfigError("noise_distribution", "expected 'uniform01' or 'uniform11', got '" + s + "'");
}

inline std::string to_string(NoiseDistribution d) {
  return d == NoiseDistribution::unit_interval ? "uniform01" : "uniform11";
}

/// Multiplicative noise v ← v (1 + level·z) applied independently to every
/// observed field. Deterministic per seed.
inline Observations add_noise(const Observations& obs, double level, std::uint64_t seed,
                              NoiseDistribution dist = NoiseDistribution::unit_interval) {
  if (!(level >= 0.0)) throw ShapeError("noise level must be nonnegative");
  Observations out = obs;
  if (level == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> z(dist == NoiseDistribution::unit_interval ? 0.0 : -1.0, 1.0);
  auto perturb = [&](Vector& v) {
    for (Index i = 0; i < v.size(); ++i) v[i] *= 1.0 + level * z(rng);
  };
  perturb(out.u);
  perturb(out.f);
  for (auto& s : out.snapshots) perturb(s);
  for (auto& s : out.sources) perturb(s);
  return out;
}

}  // namespace hesspcl::pde
