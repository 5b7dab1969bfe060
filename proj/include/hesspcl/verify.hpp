#pragma once

// Self-check behind `hesspcl verify`: every derivative rule is compared with
// central finite differences and the trust-region subproblem with a dense
// sample of the ball.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/nn.hpp"
#include "hesspcl/optim/trust_region.hpp"
#include "hesspcl/pde/finite_difference.hpp"
#include "hesspcl/pde/finite_element.hpp"
#include "hesspcl/primitives.hpp"
#include "hesspcl/sparse_solver.hpp"
#include "hesspcl/tape.hpp"

namespace hesspcl::verify {

struct SuiteResult {
  std::string name;
  bool passed = true;
  int cases = 0;
  double worst = 0.0;  ///< largest relative error (or model excess) seen
  std::string detail;  ///< first failure, if any
};

struct Tolerances {
  double gradient = 1e-6;
  double hessian = 1e-5;
  double model = 1e-8;
};

namespace detail {

using VecFn = std::function<Vector(const Vector&)>;

inline Vector as_vector(std::span<const double> s) {
  return Eigen::Map<const Vector>(s.data(), static_cast<Index>(s.size()));
}
inline std::span<const double> view(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

/// Central-difference Jacobian of f at x, one column per coordinate.
inline DenseMatrix fd_jacobian(const VecFn& f, const Vector& x) {
  const Vector f0 = f(x);
  DenseMatrix j(f0.size(), x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    j.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

inline double rel_error(const DenseMatrix& got, const DenseMatrix& want) {
  const double scale = std::max(want.cwiseAbs().maxCoeff(), 1e-8);
  return (got - want).cwiseAbs().maxCoeff() / scale;
}

inline void record(SuiteResult& s, const std::string& what, double err, double tol) {
  ++s.cases;
  s.worst = std::max(s.worst, err);
  if (!(err <= tol) && s.passed) {
    s.passed = false;
    std::ostringstream os;
    os << what << ": relative error " << err << " > " << tol;
    s.detail = os.str();
  }
}

inline void check_tape(SuiteResult& s, const std::string& label, const Tape& tape, const Vector& theta,
                       const Tolerances& tol) {
  const Vector g = gradient(tape, view(theta));
  const DenseMatrix g_fd =
      fd_jacobian([&](const Vector& t) { return Vector::Constant(1, evaluate(tape, view(t))); }, theta);
  record(s, label + " gradient", rel_error(g.transpose(), g_fd), tol.gradient);
  const SymmetricMatrix h = hessian(tape, view(theta));
  const DenseMatrix h_fd = fd_jacobian([&](const Vector& t) { return gradient(tape, view(t)); }, theta);
  record(s, label + " hessian", rel_error(h.dense(), h_fd), tol.hessian);
  const SymmetricMatrix full = hessian(tape, view(theta), HessianMode::full);
  ++s.cases;
  if (!(full.dense().array() == h.dense().array()).all() && s.passed) {
    s.passed = false;
    s.detail = label + ": condensed and full Hessians differ";
  }
}

/// Jacobian and weighted Hessian of one stage against differences of eval/vjp.
inline void check_stage(SuiteResult& s, const Stage& stage, const Vector& x, const Vector& ybar,
                        const Tolerances& tol) {
  auto eval = [&](const Vector& at) {
    Vector y(stage.output_size());
    stage.eval(view(at), {y.data(), static_cast<std::size_t>(y.size())});
    return y;
  };
  Vector y(stage.output_size());
  const auto cache = stage.eval(view(x), {y.data(), static_cast<std::size_t>(y.size())});
  const DenseMatrix jac = stage.jacobian(view(x), cache.get());
  record(s, stage.kind() + " jacobian", rel_error(jac, fd_jacobian(eval, x)), tol.gradient);

  auto pullback = [&](const Vector& at) {
    Vector out = Vector::Zero(at.size());
    Vector yy(stage.output_size());
    const auto c = stage.eval(view(at), {yy.data(), static_cast<std::size_t>(yy.size())});
    stage.vjp(view(at), c.get(), view(ybar), {out.data(), static_cast<std::size_t>(out.size())});
    return out;
  };
  DenseMatrix z = DenseMatrix::Zero(x.size(), x.size());
  for (const Triplet& t : stage.weighted_hessian(view(x), cache.get(), view(ybar))) {
    z(t.row(), t.col()) += t.value();
    if (t.row() != t.col()) z(t.col(), t.row()) += t.value();
  }
  record(s, stage.kind() + " weighted hessian", rel_error(z, fd_jacobian(pullback, x)), tol.hessian);
}

inline Vector random_vector(std::mt19937_64& rng, Index n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

inline std::vector<Index> iota(Index n, Index from = 0) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = from + i;
  return v;
}

}  // namespace detail

/// Random well-conditioned n×n pattern: full diagonal plus random off-diagonals.
inline SolvePattern random_solve_pattern(std::mt19937_64& rng, Index n, double density = 0.4) {
  SolvePattern p;
  p.dim = n;
  std::bernoulli_distribution keep(density);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j || keep(rng)) p.entries.emplace_back(i, j);
    }
  }
  p.rhs = detail::random_vector(rng, n);
  return p;
}

/// Values for `p`: diagonal entries dominate so the system stays regular.
inline Vector random_solve_values(std::mt19937_64& rng, const SolvePattern& p) {
  Vector v = detail::random_vector(rng, p.nnz());
  for (Index l = 0; l < p.nnz(); ++l) {
    const auto [i, j] = p.entries[static_cast<std::size_t>(l)];
    if (i == j) v[l] = static_cast<double>(p.dim) + 1.0 + std::abs(v[l]);
  }
  return v;
}

inline SuiteResult verify_tape(const Tolerances& tol = {}) {
  SuiteResult s;
  s.name = "tape";
  NetworkSpec spec;
  spec.hidden = {3};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const std::string tag = " seed " + std::to_string(seed);
    {
      spec.input_dim = 1;
      const pde::Grid2D grid(4);
      const Tape t = pde::build_poisson_fd_loss(grid, pde::manufactured_poisson_nonlinear(grid), spec);
      detail::check_tape(s, "poisson-fd" + tag, t, detail::random_vector(rng, spec.param_count()), tol);
    }
    {
      spec.input_dim = 2;
      const pde::Grid2D grid(4);
      const Tape t = pde::build_heat_loss(grid, pde::manufactured_heat(grid, 0.01, 2), 0.01, spec);
      detail::check_tape(s, "heat" + tag, t, detail::random_vector(rng, spec.param_count()), tol);
    }
    {
      spec.input_dim = 2;
      const pde::TriMesh mesh = pde::structured_mesh(2);
      const Tape t = pde::build_fem_poisson_loss(mesh, pde::manufactured_fem(mesh), spec);
      // Positive output bias keeps every element conductivity away from zero.
      Vector theta = 0.5 * detail::random_vector(rng, spec.param_count());
      theta[spec.param_count() - 1] = 2.0;
      detail::check_tape(s, "poisson-fem" + tag, t, theta, tol);
    }
  }
  return s;
}

inline SuiteResult verify_primitives(const Tolerances& tol = {}) {
  SuiteResult s;
  s.name = "primitives";
  std::mt19937_64 rng(7);
  const Index n = 4;
  const Vector ybar4 = detail::random_vector(rng, n);
  const Vector ybar1 = detail::random_vector(rng, 1);
  for (const UnaryRule* r : {&unary::tanh, &unary::square, &unary::sin, &unary::cos, &unary::exp}) {
    detail::check_stage(s, ElementwiseStage(*r, detail::iota(n)), detail::random_vector(rng, n), ybar4, tol);
  }
  {
    const Index rows = 3, cols = 2;
    const AffineStage a(detail::iota(cols), detail::iota(rows * cols, cols), detail::iota(rows, cols + rows * cols));
    detail::check_stage(s, a, detail::random_vector(rng, a.input_size()), detail::random_vector(rng, rows), tol);
  }
  detail::check_stage(s, SumOfSquaresStage(detail::iota(n)), detail::random_vector(rng, n), ybar1, tol);
  detail::check_stage(s, InnerProductStage(detail::iota(n), detail::iota(n, n)), detail::random_vector(rng, 2 * n),
                      ybar1, tol);
  {
    std::vector<Triplet> t{{0, 0, 1.5}, {1, 2, -0.5}, {2, 1, 2.0}, {2, 3, 1.0}};
    const LinearMapStage m(detail::iota(n), make_sparse(3, n, t), detail::random_vector(rng, 3));
    detail::check_stage(s, m, detail::random_vector(rng, n), detail::random_vector(rng, 3), tol);
  }
  {
    NetworkSpec spec;
    spec.input_dim = 2;
    spec.hidden = {3, 2};
    DenseMatrix pts(3, 2);
    pts << 0.1, 0.2, 0.5, 0.5, 0.9, 0.3;
    const NetworkBatchStage net(spec, detail::iota(spec.param_count()), pts);
    detail::check_stage(s, net, detail::random_vector(rng, spec.param_count()), detail::random_vector(rng, 3), tol);
  }
  {
    const SolvePattern p = random_solve_pattern(rng, 4);
    const SparseSolveStage solve(detail::iota(p.nnz()), p);
    detail::check_stage(s, solve, random_solve_values(rng, p), detail::random_vector(rng, 4), tol);
  }
  return s;
}

inline SuiteResult verify_sparse_solver(const Tolerances& tol = {}, int systems = 50) {
  SuiteResult s;
  s.name = "sparse_solver";
  std::mt19937_64 rng(11);
  for (int k = 0; k < systems; ++k) {
    const SolvePattern p = random_solve_pattern(rng, 5);
    const Vector a = random_solve_values(rng, p);
    const Vector y = detail::random_vector(rng, 5);
    const DenseMatrix jac = solve_jacobian(detail::view(a), p);
    const DenseMatrix jac_fd =
        detail::fd_jacobian([&](const Vector& v) { return solve_forward(detail::view(v), p).u; }, a);
    detail::record(s, "solve_jacobian #" + std::to_string(k), detail::rel_error(jac, jac_fd), tol.gradient);
    const SymmetricMatrix h = solve_weighted_hessian(detail::view(a), y, p);
    const DenseMatrix h_fd = detail::fd_jacobian(
        [&](const Vector& v) { return Vector(DenseMatrix(solve_jacobian(detail::view(v), p)).transpose() * y); }, a);
    detail::record(s, "solve_weighted_hessian #" + std::to_string(k), detail::rel_error(h.dense(), h_fd),
                   tol.hessian);
    ++s.cases;
    if (!(h.dense().array() == h.dense().transpose().array()).all() && s.passed) {
      s.passed = false;
      s.detail = "solve_weighted_hessian #" + std::to_string(k) + " is not exactly symmetric";
    }
  }
  return s;
}

/// One random subproblem instance; every fourth one is a constructed hard case.
struct SubproblemInstance {
  SymmetricMatrix b;
  Vector g;
  double radius = 1.0;
};

inline SubproblemInstance random_subproblem(std::mt19937_64& rng, int k) {
  std::uniform_int_distribution<int> dims(1, 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Index n = dims(rng);
  SubproblemInstance inst;
  const DenseMatrix q = Eigen::HouseholderQR<DenseMatrix>(DenseMatrix(detail::random_vector(rng, n * n).reshaped(n, n)))
                            .householderQ();
  Vector lambda = detail::random_vector(rng, n, -2.0, 2.0);
  inst.radius = 0.1 + 2.0 * u(rng);
  if (k % 4 == 3) {
    // Hard case: g orthogonal to the eigenvector of the smallest eigenvalue.
    const Index lo = 0;
    lambda[lo] = -1.0 - u(rng);
    for (Index i = 1; i < n; ++i) lambda[i] = std::max(lambda[i], lambda[lo] + 0.5);
    Vector gt = detail::random_vector(rng, n, -0.2, 0.2);
    gt[lo] = 0.0;
    inst.g = q * gt;
    inst.radius = 1.0 + 2.0 * u(rng);
  } else {
    inst.g = detail::random_vector(rng, n);
  }
  inst.b = SymmetricMatrix::symmetrized(q * lambda.asDiagonal() * q.transpose());
  return inst;
}

/// Smallest model value over 10⁴ points: half uniform in the ball, half on
/// the sphere.
inline double ball_sample_minimum(const SubproblemInstance& inst, std::mt19937_64& rng, int samples = 10000) {
  const Index n = inst.g.size();
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double best = 0.0;  // q = 0
  for (int k = 0; k < samples; ++k) {
    Vector d(n);
    for (Index i = 0; i < n; ++i) d[i] = normal(rng);
    const double r = k % 2 ? 1.0 : std::pow(u(rng), 1.0 / static_cast<double>(n));
    const Vector q = inst.radius * r * d / d.norm();
    best = std::min(best, optim::model_value(inst.b, inst.g, q));
  }
  return best;
}

inline SuiteResult verify_tr_subproblem(const Tolerances& tol = {}, int instances = 200) {
  SuiteResult s;
  s.name = "tr_subproblem";
  std::mt19937_64 rng(3);
  for (int k = 0; k < instances; ++k) {
    const SubproblemInstance inst = random_subproblem(rng, k);
    const optim::SubproblemResult r = optim::tr_subproblem(inst.b, inst.g, inst.radius);
    const double m = optim::model_value(inst.b, inst.g, r.p);
    const double excess = std::max(0.0, m - ball_sample_minimum(inst, rng));
    ++s.cases;
    s.worst = std::max(s.worst, excess);
    const bool feasible = r.p.norm() <= inst.radius * (1.0 + 1e-8);
    if ((!(excess <= tol.model) || !feasible) && s.passed) {
      s.passed = false;
      std::ostringstream os;
      os << "instance " << k << ": m(p) exceeds the sampled minimum by " << excess
         << (feasible ? "" : " and the step leaves the region");
      s.detail = os.str();
    }
  }
  return s;
}

inline std::vector<SuiteResult> verify_all(const Tolerances& tol = {}) {
  std::vector<SuiteResult> out;
  auto guarded = [&](const char* name, auto&& fn) {
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      SuiteResult failed;
      failed.name = name;
      failed.passed = false;
      failed.detail = std::string("threw: ") + e.what();
      out.push_back(std::move(failed));
    }
  };
  guarded("tape", [&] { return verify_tape(tol); });
  guarded("primitives", [&] { return verify_primitives(tol); });
  guarded("sparse_solver", [&] { return verify_sparse_solver(tol); });
  guarded("tr_subproblem", [&] { return verify_tr_subproblem(tol); });
  return out;
}

}  // namespace hesspcl::verify
