#pragma once

// Second-order rules for u = A⁻¹ f, differentiated with respect to the
// nonzero entries a_l of A on a fixed sparsity pattern (f is constant).
//
//   u_{,l}        = -A⁻¹ A_{,l} u           (A_{,l} has a single unit entry)
//   (yᵀu)_{,rl}   = -zᵀ (A_{,l} u_{,r} + A_{,r} u_{,l}),   z = A⁻ᵀ y
//
// With l = (i_l, j_l): column l of ∇u is -A⁻¹[:, i_l] u_{j_l}, and each
// Hessian entry touches two components of z, so the weighted Hessian costs
// O(d²) once A⁻¹ and z are known.

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/tape.hpp"

namespace hesspcl {

/// Fixed pattern (row, col) of the d stage inputs, the right-hand side and
/// the system size. The Hessian over entries follows the pattern order.
struct SolvePattern {
  Index dim = 0;
  std::vector<std::pair<Index, Index>> entries;
  Vector rhs;

  Index nnz() const noexcept { return static_cast<Index>(entries.size()); }

  void validate() const {
    if (dim < 1) throw ShapeError("solve pattern: dimension must be positive");
    if (rhs.size() != dim) throw ShapeError("solve pattern: rhs length != dimension");
    std::set<std::pair<Index, Index>> seen;
    for (const auto& [r, c] : entries) {
      if (r < 0 || r >= dim || c < 0 || c >= dim) {
        throw ShapeError("solve pattern: entry (" + std::to_string(r) + "," + std::to_string(c) +
                         ") outside " + std::to_string(dim) + "x" + std::to_string(dim));
      }
      if (!seen.insert({r, c}).second) {
        throw ShapeError("solve pattern: duplicate entry (" + std::to_string(r) + "," +
                         std::to_string(c) + ")");
      }
    }
  }

  DenseMatrix assemble(std::span<const double> values) const {
    if (static_cast<Index>(values.size()) != nnz()) {
      throw ShapeError("solve pattern: expected " + std::to_string(nnz()) + " values, got " +
                       std::to_string(values.size()));
    }
    DenseMatrix a = DenseMatrix::Zero(dim, dim);
    for (std::size_t l = 0; l < entries.size(); ++l) a(entries[l].first, entries[l].second) = values[l];
    return a;
  }
};

/// State saved by the forward solve and reused by the derivative rules.
struct SolveCache : StageCache {
  LuFactorization lu;
  DenseMatrix inverse;
  Vector u;
};

inline SolveCache solve_forward(std::span<const double> values, const SolvePattern& pattern) {
  const DenseMatrix a = pattern.assemble(values);
  SolveCache c;
  c.lu = LuFactorization(a);
  c.u = c.lu.solve(pattern.rhs);
  c.inverse = c.lu.inverse();
  const double res = (a * c.u - pattern.rhs).norm();
  const double scale = a.norm() * c.u.norm() + pattern.rhs.norm();
  if (!(res <= 1e-10 * std::max(scale, kScaleFloor))) {
    std::ostringstream msg;
    msg << "sparse solve residual " << res << " exceeds tolerance (condition estimate "
        << c.lu.condition_estimate() << ")";
    throw NumericalError(msg.str());
  }
  return c;
}

/// ∂u_k/∂a_l, n × d.
inline SparseMatrix solve_jacobian(const SolveCache& c, const SolvePattern& pattern) {
  const Index n = pattern.dim;
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(n * pattern.nnz()));
  for (Index l = 0; l < pattern.nnz(); ++l) {
    const auto [i, j] = pattern.entries[static_cast<std::size_t>(l)];
    const double uj = c.u[j];
    if (uj == 0.0) continue;
    for (Index k = 0; k < n; ++k) t.emplace_back(k, l, -c.inverse(k, i) * uj);
  }
  return make_sparse(n, pattern.nnz(), t);
}

inline SparseMatrix solve_jacobian(std::span<const double> values, const SolvePattern& pattern) {
  return solve_jacobian(solve_forward(values, pattern), pattern);
}

/// ∂²(yᵀu)/∂a_r∂a_l over pattern entries, d × d.
inline SymmetricMatrix solve_weighted_hessian(const SolveCache& c, const Vector& y,
                                              const SolvePattern& pattern) {
  if (y.size() != pattern.dim) throw ShapeError("solve_weighted_hessian: adjoint length mismatch");
  const Vector z = c.lu.solve_transposed(y);
  const Index d = pattern.nnz();
  DenseMatrix h = DenseMatrix::Zero(d, d);
  for (Index l = 0; l < d; ++l) {
    const auto [il, jl] = pattern.entries[static_cast<std::size_t>(l)];
    for (Index r = 0; r <= l; ++r) {
      const auto [ir, jr] = pattern.entries[static_cast<std::size_t>(r)];
      // (u_{,r})_{j_l} = -A⁻¹[j_l, i_r] u_{j_r}
      h(l, r) = z[il] * c.inverse(jl, ir) * c.u[jr] + z[ir] * c.inverse(jr, il) * c.u[jl];
    }
  }
  return SymmetricMatrix::from_lower(h);
}

inline SymmetricMatrix solve_weighted_hessian(std::span<const double> values, const Vector& y,
                                              const SolvePattern& pattern) {
  return solve_weighted_hessian(solve_forward(values, pattern), y, pattern);
}

/// Stage u = A(values)⁻¹ f.
class SparseSolveStage final : public Stage {
 public:
  SparseSolveStage(std::vector<Index> values, SolvePattern pattern)
      : Stage(std::move(values)), pattern_(std::move(pattern)) {
    pattern_.validate();
    if (input_size() != pattern_.nnz()) {
      throw ShapeError("sparse_solve: one input per pattern entry required");
    }
  }

  std::string kind() const override { return "sparse_solve"; }
  Index output_size() const override { return pattern_.dim; }
  const SolvePattern& pattern() const noexcept { return pattern_; }

  std::unique_ptr<StageCache> eval(std::span<const double> x, std::span<double> y) const override {
    auto c = std::make_unique<SolveCache>(solve_forward(x, pattern_));
    std::copy(c->u.data(), c->u.data() + c->u.size(), y.begin());
    return c;
  }

  SparseMatrix jacobian(std::span<const double>, const StageCache* cache) const override {
    return solve_jacobian(as_solve(cache), pattern_);
  }

  void vjp(std::span<const double>, const StageCache* cache, std::span<const double> ybar,
           std::span<double> xbar) const override {
    const SolveCache& c = as_solve(cache);
    const Vector z = c.lu.solve_transposed(Eigen::Map<const Vector>(ybar.data(), pattern_.dim));
    for (Index l = 0; l < pattern_.nnz(); ++l) {
      const auto [i, j] = pattern_.entries[static_cast<std::size_t>(l)];
      xbar[static_cast<std::size_t>(l)] -= z[i] * c.u[j];
    }
  }

  std::vector<Triplet> weighted_hessian(std::span<const double>, const StageCache* cache,
                                        std::span<const double> ybar) const override {
    const SymmetricMatrix h = solve_weighted_hessian(
        as_solve(cache), Eigen::Map<const Vector>(ybar.data(), pattern_.dim), pattern_);
    std::vector<Triplet> t;
    const Index d = pattern_.nnz();
    t.reserve(static_cast<std::size_t>(d * (d + 1) / 2));
    for (Index l = 0; l < d; ++l) {
      for (Index r = 0; r <= l; ++r) {
        if (h(l, r) != 0.0) t.emplace_back(l, r, h(l, r));
      }
    }
    return t;
  }

 private:
  static const SolveCache& as_solve(const StageCache* cache) {
    const auto* c = dynamic_cast<const SolveCache*>(cache);
    if (!c) throw NumericalError("sparse_solve: derivative rule called without a forward solve");
    return *c;
  }

  SolvePattern pattern_;
};

}  // namespace hesspcl
