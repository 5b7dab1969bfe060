#pragma once

// Residual-minimization losses on the uniform grid. Both finite difference
// benchmarks use the averaged-κ five-point flux stencil
//
//   F_ij = h⁻² Σ_nb (κ_nb + κ_ij)/2 · (u_nb − u_ij),   nb ∈ {E, W, N, S},
//
// which is linear in the nodal κ values once u is fixed by data. The tapes
// therefore read: θ → κ_θ at the needed nodes → linear residual map → Σ r².

#include <map>
#include <memory>
#include <vector>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/nn.hpp"
#include "hesspcl/pde/manufactured.hpp"
#include "hesspcl/primitives.hpp"
#include "hesspcl/tape.hpp"

namespace hesspcl::pde {

inline constexpr Index kNeighbours[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};

/// Nodes whose κ enters some interior stencil: all nodes but the corners.
inline std::vector<Index> stencil_kappa_nodes(const Grid2D& grid) {
  std::vector<Index> out;
  for (Index j = 0; j <= grid.n; ++j) {
    for (Index i = 0; i <= grid.n; ++i) {
      const bool corner = (i == 0 || i == grid.n) && (j == 0 || j == grid.n);
      if (!corner) out.push_back(grid.node(i, j));
    }
  }
  return out;
}

/// M with F(u; κ) = M κ on interior nodes. Column c of M corresponds to node
/// `column_node[c]`; every stencil node must appear there.
inline SparseMatrix flux_stencil(const Grid2D& grid, const Vector& u,
                                 const std::vector<Index>& column_node) {
  if (u.size() != grid.node_count()) throw ShapeError("flux_stencil: field length mismatch");
  std::vector<Index> col_of(static_cast<std::size_t>(grid.node_count()), -1);
  for (std::size_t c = 0; c < column_node.size(); ++c) {
    col_of[static_cast<std::size_t>(column_node[c])] = static_cast<Index>(c);
  }
  const double w = 0.5 / (grid.h() * grid.h());
  std::vector<Triplet> t;
  Index row = 0;
  for (Index j = 1; j < grid.n; ++j) {
    for (Index i = 1; i < grid.n; ++i, ++row) {
      const Index c = grid.node(i, j);
      for (const auto& d : kNeighbours) {
        const Index nb = grid.node(i + d[0], j + d[1]);
        const double du = w * (u[nb] - u[c]);
        const Index cc = col_of[static_cast<std::size_t>(c)];
        const Index cn = col_of[static_cast<std::size_t>(nb)];
        if (cc < 0 || cn < 0) throw ShapeError("flux_stencil: stencil node missing from columns");
        t.emplace_back(row, cc, du);
        t.emplace_back(row, cn, du);
      }
    }
  }
  return make_sparse(row, static_cast<Index>(column_node.size()), t);
}

/// Direct stencil evaluation F(u; κ) on interior nodes, κ given on all nodes.
inline Vector apply_flux_stencil(const Grid2D& grid, const Vector& u, const Vector& kappa) {
  const double inv_h2 = 1.0 / (grid.h() * grid.h());
  Vector f((grid.n - 1) * (grid.n - 1));
  Index row = 0;
  for (Index j = 1; j < grid.n; ++j) {
    for (Index i = 1; i < grid.n; ++i, ++row) {
      const Index c = grid.node(i, j);
      double acc = 0.0;
      for (const auto& d : kNeighbours) {
        const Index nb = grid.node(i + d[0], j + d[1]);
        acc += 0.5 * (kappa[nb] + kappa[c]) * (u[nb] - u[c]);
      }
      f[row] = inv_h2 * acc;
    }
  }
  return f;
}

/// Distinct rows of `points` (exact comparison) and, per original row, the
/// index of its distinct representative. Order of first appearance.
struct DistinctPoints {
  DenseMatrix points;
  std::vector<Index> representative;
};

inline DistinctPoints distinct_rows(const DenseMatrix& points) {
  std::map<std::vector<double>, Index> seen;
  DistinctPoints d;
  std::vector<Index> keep;
  for (Index r = 0; r < points.rows(); ++r) {
    std::vector<double> key(static_cast<std::size_t>(points.cols()));
    for (Index c = 0; c < points.cols(); ++c) key[static_cast<std::size_t>(c)] = points(r, c);
    auto [it, inserted] = seen.emplace(std::move(key), static_cast<Index>(keep.size()));
    if (inserted) keep.push_back(r);
    d.representative.push_back(it->second);
  }
  d.points.resize(static_cast<Index>(keep.size()), points.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) d.points.row(static_cast<Index>(k)) = points.row(keep[k]);
  return d;
}

/// Registers κ_θ once per distinct input point; returns, per input row, the
/// live index of its κ value.
inline std::vector<Index> register_kappa(TapeBuilder& builder, const NetworkSpec& spec,
                                         const std::vector<Index>& theta, const DenseMatrix& points) {
  const DistinctPoints d = distinct_rows(points);
  const std::vector<Index> kappa = register_network_batch(builder, spec, theta, d.points);
  std::vector<Index> out;
  out.reserve(d.representative.size());
  for (Index r : d.representative) out.push_back(kappa[static_cast<std::size_t>(r)]);
  return out;
}

/// Column-compresses M (columns = per-row κ indices, possibly repeated) onto
/// the distinct live variables. Returns the live indices and the new matrix.
inline std::pair<std::vector<Index>, SparseMatrix> merge_columns(const SparseMatrix& m,
                                                                const std::vector<Index>& live) {
  std::map<Index, Index> col_of;
  for (Index v : live) col_of.emplace(v, 0);
  std::vector<Index> unique;
  for (auto& [v, c] : col_of) {
    c = static_cast<Index>(unique.size());
    unique.push_back(v);
  }
  std::vector<Triplet> t;
  for (Index r = 0; r < m.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) {
      t.emplace_back(r, col_of.at(live[static_cast<std::size_t>(it.col())]), it.value());
    }
  }
  return {unique, make_sparse(m.rows(), static_cast<Index>(unique.size()), t)};
}

inline Tape finish_with_residual(TapeBuilder&& builder, const std::vector<Index>& live,
                                 const SparseMatrix& m, const Vector& offset, const char* label) {
  auto [inputs, merged] = merge_columns(m, live);
  const auto r = builder.add(std::make_unique<LinearMapStage>(inputs, merged, offset, label));
  const auto loss = builder.add(std::make_unique<SumOfSquaresStage>(r));
  return std::move(builder).finish(loss.front());
}

/// Σ_ij (F_ij(û; θ) − f̂_ij)² over interior nodes with κ_θ(û) state-dependent.
inline Tape build_poisson_fd_loss(const Grid2D& grid, const Observations& obs,
                                  const NetworkSpec& spec) {
  if (obs.u.size() != grid.node_count() || obs.f.size() != grid.node_count()) {
    throw ShapeError("poisson loss: observations do not match the grid");
  }
  if (spec.input_dim != 1) throw ShapeError("poisson loss: κ(u) network needs input_dim 1");
  TapeBuilder b;
  const auto theta = b.add_inputs(spec.param_count());
  const std::vector<Index> nodes = stencil_kappa_nodes(grid);
  DenseMatrix pts(static_cast<Index>(nodes.size()), 1);
  for (std::size_t k = 0; k < nodes.size(); ++k) pts(static_cast<Index>(k), 0) = obs.u[nodes[k]];
  const std::vector<Index> kappa = register_kappa(b, spec, theta, pts);

  const SparseMatrix m = flux_stencil(grid, obs.u, nodes);
  Vector offset(m.rows());
  Index row = 0;
  for (Index node : grid.interior_nodes()) offset[row++] = -obs.f[node];
  return finish_with_residual(std::move(b), kappa, m, offset, "flux_residual");
}

/// Σ_ij (κ_θ(û_ij) − κ(û_ij))² over all grid nodes (no PDE in the loss).
inline Tape build_poisson_dnn_loss(const Grid2D& grid, const Observations& obs,
                                   const NetworkSpec& spec) {
  if (obs.u.size() != grid.node_count()) throw ShapeError("dnn loss: observations do not match the grid");
  TapeBuilder b;
  const auto theta = b.add_inputs(spec.param_count());
  DenseMatrix pts(grid.node_count(), 1);
  Vector offset(grid.node_count());
  for (Index k = 0; k < grid.node_count(); ++k) {
    pts(k, 0) = obs.u[k];
    offset[k] = -poisson_kappa(obs.u[k]);
  }
  const std::vector<Index> kappa = register_kappa(b, spec, theta, pts);
  std::vector<Triplet> t;
  for (Index k = 0; k < grid.node_count(); ++k) t.emplace_back(k, k, 1.0);
  return finish_with_residual(std::move(b), kappa, make_sparse(grid.node_count(), grid.node_count(), t),
                              offset, "kappa_misfit");
}

inline DenseMatrix node_coordinates(const Grid2D& grid, const std::vector<Index>& nodes) {
  DenseMatrix pts(static_cast<Index>(nodes.size()), 2);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const Index v = nodes[k];
    pts(static_cast<Index>(k), 0) = grid.x(v % grid.side());
    pts(static_cast<Index>(k), 1) = grid.y(v / grid.side());
  }
  return pts;
}

/// Σ_n Σ_ij ((u^{n+1} − u^n)/Δt − F_ij(u^{n+1}; θ) − f^{n+1})² with κ_θ(x, y).
inline Tape build_heat_loss(const Grid2D& grid, const Observations& obs, double dt,
                            const NetworkSpec& spec) {
  if (obs.snapshots.size() < 2 || obs.sources.size() != obs.snapshots.size()) {
    throw ShapeError("heat loss: need steps+1 snapshots and sources");
  }
  if (!(dt > 0.0)) throw ShapeError("heat loss: time step must be positive");
  if (spec.input_dim != 2) throw ShapeError("heat loss: κ(x, y) network needs input_dim 2");
  TapeBuilder b;
  const auto theta = b.add_inputs(spec.param_count());
  const std::vector<Index> nodes = stencil_kappa_nodes(grid);
  const std::vector<Index> kappa = register_kappa(b, spec, theta, node_coordinates(grid, nodes));

  const Index steps = static_cast<Index>(obs.snapshots.size()) - 1;
  const std::vector<Index> interior = grid.interior_nodes();
  const Index per_step = static_cast<Index>(interior.size());
  std::vector<Triplet> t;
  Vector offset(per_step * steps);
  for (Index s = 0; s < steps; ++s) {
    const Vector& next = obs.snapshots[static_cast<std::size_t>(s + 1)];
    const Vector& prev = obs.snapshots[static_cast<std::size_t>(s)];
    if (next.size() != grid.node_count()) throw ShapeError("heat loss: snapshot length mismatch");
    const SparseMatrix m = flux_stencil(grid, next, nodes);
    for (Index r = 0; r < m.outerSize(); ++r) {
      for (SparseMatrix::InnerIterator it(m, r); it; ++it) {
        t.emplace_back(s * per_step + r, it.col(), -it.value());
      }
    }
    for (Index r = 0; r < per_step; ++r) {
      const Index v = interior[static_cast<std::size_t>(r)];
      offset[s * per_step + r] =
          (next[v] - prev[v]) / dt - obs.sources[static_cast<std::size_t>(s + 1)][v];
    }
  }
  const SparseMatrix m = make_sparse(per_step * steps, static_cast<Index>(nodes.size()), t);
  return finish_with_residual(std::move(b), kappa, m, offset, "heat_residual");
}

/// Σ_ij (κ_θ(x_ij, y_ij) − κ(x_ij, y_ij))² over all grid nodes.
inline Tape build_heat_dnn_loss(const Grid2D& grid, const NetworkSpec& spec) {
  TapeBuilder b;
  const auto theta = b.add_inputs(spec.param_count());
  std::vector<Index> nodes(static_cast<std::size_t>(grid.node_count()));
  for (Index k = 0; k < grid.node_count(); ++k) nodes[static_cast<std::size_t>(k)] = k;
  const DenseMatrix pts = node_coordinates(grid, nodes);
  const std::vector<Index> kappa = register_kappa(b, spec, theta, pts);
  Vector offset(grid.node_count());
  std::vector<Triplet> t;
  for (Index k = 0; k < grid.node_count(); ++k) {
    offset[k] = -heat_kappa(pts(k, 0), pts(k, 1));
    t.emplace_back(k, k, 1.0);
  }
  return finish_with_residual(std::move(b), kappa, make_sparse(grid.node_count(), grid.node_count(), t),
                              offset, "kappa_misfit");
}

/// Discrete forward solve of ∇·(κ(u)∇u) = f, u = 0 on the boundary, with the
/// exact κ(u), by Newton's method on the flux stencil.
inline Vector solve_poisson_forward(const Grid2D& grid, double tol = 1e-12, int max_iter = 50) {
  const Observations exact = manufactured_poisson_nonlinear(grid);
  const std::vector<Index> interior = grid.interior_nodes();
  const Index m = static_cast<Index>(interior.size());
  std::vector<Index> row_of(static_cast<std::size_t>(grid.node_count()), -1);
  for (Index r = 0; r < m; ++r) row_of[static_cast<std::size_t>(interior[static_cast<std::size_t>(r)])] = r;

  Vector u = Vector::Zero(grid.node_count());
  for (Index v : interior) u[v] = exact.u[v];
  const double inv_h2 = 1.0 / (grid.h() * grid.h());

  for (int it = 0; it < max_iter; ++it) {
    Vector kappa(grid.node_count());
    for (Index k = 0; k < grid.node_count(); ++k) kappa[k] = poisson_kappa(u[k]);
    const Vector f_h = apply_flux_stencil(grid, u, kappa);
    Vector res(m);
    for (Index r = 0; r < m; ++r) res[r] = f_h[r] - exact.f[interior[static_cast<std::size_t>(r)]];
    if (res.lpNorm<Eigen::Infinity>() <= tol * (1.0 + exact.f.lpNorm<Eigen::Infinity>())) return u;

    DenseMatrix jac = DenseMatrix::Zero(m, m);
    for (Index r = 0; r < m; ++r) {
      const Index c = interior[static_cast<std::size_t>(r)];
      const Index i = c % grid.side(), j = c / grid.side();
      for (const auto& d : kNeighbours) {
        const Index nb = grid.node(i + d[0], j + d[1]);
        const double avg = 0.5 * (kappa[nb] + kappa[c]);
        const double du = u[nb] - u[c];
        jac(r, r) += inv_h2 * (0.5 * poisson_kappa_prime(u[c]) * du - avg);
        const Index rn = row_of[static_cast<std::size_t>(nb)];
        if (rn >= 0) jac(r, rn) += inv_h2 * (0.5 * poisson_kappa_prime(u[nb]) * du + avg);
      }
    }
    const Vector step = dense_solve(jac, res);
    for (Index r = 0; r < m; ++r) u[interior[static_cast<std::size_t>(r)]] -= step[r];
  }
  throw NumericalError("poisson forward solve: Newton did not converge");
}

}  // namespace hesspcl::pde
