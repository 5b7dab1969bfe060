#pragma once

// P1 finite elements for ∇·(κ∇u) = f on [0,1]², u = 0 on the boundary.
// With κ constant per element (centroid quadrature) the reduced stiffness
// entries are linear in the element values, so the loss tape is
//   θ → κ_θ(centroids) → A entries (linear map) → u = A⁻¹b → Σ (u − û)².

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/nn.hpp"
#include "hesspcl/pde/manufactured.hpp"
#include "hesspcl/primitives.hpp"
#include "hesspcl/sparse_solver.hpp"
#include "hesspcl/tape.hpp"

namespace hesspcl::pde {

struct TriMesh {
  std::vector<std::array<double, 2>> vertices;
  std::vector<std::array<Index, 3>> triangles;
  std::vector<bool> boundary;

  Index vertex_count() const { return static_cast<Index>(vertices.size()); }
  Index triangle_count() const { return static_cast<Index>(triangles.size()); }

  /// Signed area; positive for counter-clockwise vertex order.
  double area(Index t) const {
    const auto& [a, b, c] = triangles[static_cast<std::size_t>(t)];
    const auto& p = vertices[static_cast<std::size_t>(a)];
    const auto& q = vertices[static_cast<std::size_t>(b)];
    const auto& r = vertices[static_cast<std::size_t>(c)];
    return 0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]));
  }

  std::array<double, 2> centroid(Index t) const {
    std::array<double, 2> c{0.0, 0.0};
    for (Index v : triangles[static_cast<std::size_t>(t)]) {
      c[0] += vertices[static_cast<std::size_t>(v)][0] / 3.0;
      c[1] += vertices[static_cast<std::size_t>(v)][1] / 3.0;
    }
    return c;
  }

  /// Free (non-boundary) vertices in index order.
  std::vector<Index> free_vertices() const {
    std::vector<Index> out;
    for (Index v = 0; v < vertex_count(); ++v) {
      if (!boundary[static_cast<std::size_t>(v)]) out.push_back(v);
    }
    return out;
  }

  void validate() const {
    if (boundary.size() != vertices.size()) throw ShapeError("mesh: boundary flags do not match vertices");
    std::map<std::pair<Index, Index>, int> edge_use;
    for (Index t = 0; t < triangle_count(); ++t) {
      const auto& tri = triangles[static_cast<std::size_t>(t)];
      for (Index v : tri) {
        if (v < 0 || v >= vertex_count()) throw ShapeError("mesh: triangle " + std::to_string(t) + " has a bad vertex");
      }
      if (!(area(t) > 0.0)) throw ShapeError("mesh: triangle " + std::to_string(t) + " has nonpositive area");
      for (int k = 0; k < 3; ++k) {
        Index a = tri[static_cast<std::size_t>(k)], b = tri[static_cast<std::size_t>((k + 1) % 3)];
        if (a > b) std::swap(a, b);
        ++edge_use[{a, b}];
      }
    }
    auto on_square_edge = [](const std::array<double, 2>& p, const std::array<double, 2>& q) {
      for (int d = 0; d < 2; ++d) {
        for (double side : {0.0, 1.0}) {
          if (p[static_cast<std::size_t>(d)] == side && q[static_cast<std::size_t>(d)] == side) return true;
        }
      }
      return false;
    };
    for (const auto& [e, uses] : edge_use) {
      if (uses > 2) throw ShapeError("mesh: edge shared by more than two triangles");
      if (uses == 1 && !on_square_edge(vertices[static_cast<std::size_t>(e.first)],
                                       vertices[static_cast<std::size_t>(e.second)])) {
        throw ShapeError("mesh: boundary edge (" + std::to_string(e.first) + "," +
                         std::to_string(e.second) + ") is not on the unit square boundary");
      }
    }
  }
};

/// m×m squares, each split along its (i,j)–(i+1,j+1) diagonal.
inline TriMesh structured_mesh(Index m) {
  if (m < 1) throw ShapeError("mesh: need at least one cell per side");
  TriMesh mesh;
  const double h = 1.0 / static_cast<double>(m);
  for (Index j = 0; j <= m; ++j) {
    for (Index i = 0; i <= m; ++i) {
      mesh.vertices.push_back({static_cast<double>(i) * h, static_cast<double>(j) * h});
      mesh.boundary.push_back(i == 0 || j == 0 || i == m || j == m);
    }
  }
  auto v = [m](Index i, Index j) { return j * (m + 1) + i; };
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < m; ++i) {
      mesh.triangles.push_back({v(i, j), v(i + 1, j), v(i + 1, j + 1)});
      mesh.triangles.push_back({v(i, j), v(i + 1, j + 1), v(i, j + 1)});
    }
  }
  return mesh;
}

/// ∫_T ∇φ_a·∇φ_b for the three hat functions of triangle t.
inline std::array<std::array<double, 3>, 3> local_stiffness(const TriMesh& mesh, Index t) {
  const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
  const double area = mesh.area(t);
  std::array<std::array<double, 2>, 3> grad;
  for (int k = 0; k < 3; ++k) {
    const auto& q = mesh.vertices[static_cast<std::size_t>(tri[static_cast<std::size_t>((k + 1) % 3)])];
    const auto& r = mesh.vertices[static_cast<std::size_t>(tri[static_cast<std::size_t>((k + 2) % 3)])];
    grad[static_cast<std::size_t>(k)] = {(q[1] - r[1]) / (2.0 * area), (r[0] - q[0]) / (2.0 * area)};
  }
  std::array<std::array<double, 3>, 3> k{};
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      k[a][b] = area * (grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1]);
    }
  }
  return k;
}

/// Reduced stiffness structure: the solve pattern over free vertices and the
/// matrix mapping per-element κ to pattern values.
struct P1System {
  std::vector<Index> free;
  SolvePattern pattern;
  SparseMatrix assembly;  ///< pattern.nnz() × triangle_count
};

inline P1System p1_system(const TriMesh& mesh, double source = kFemSource) {
  mesh.validate();
  P1System sys;
  sys.free = mesh.free_vertices();
  if (sys.free.empty()) throw ShapeError("mesh: no free vertices");
  std::vector<Index> dof(static_cast<std::size_t>(mesh.vertex_count()), -1);
  for (std::size_t k = 0; k < sys.free.size(); ++k) dof[static_cast<std::size_t>(sys.free[k])] = static_cast<Index>(k);

  const Index n = static_cast<Index>(sys.free.size());
  sys.pattern.dim = n;
  sys.pattern.rhs = Vector::Zero(n);
  std::map<std::pair<Index, Index>, Index> slot;
  std::vector<Triplet> t;
  for (Index e = 0; e < mesh.triangle_count(); ++e) {
    const auto& tri = mesh.triangles[static_cast<std::size_t>(e)];
    const auto k = local_stiffness(mesh, e);
    for (std::size_t a = 0; a < 3; ++a) {
      const Index ia = dof[static_cast<std::size_t>(tri[a])];
      if (ia < 0) continue;
      // weak form of ∇·(κ∇u) = f:  ∫κ∇u·∇φ = −∫fφ
      sys.pattern.rhs[ia] += -source * mesh.area(e) / 3.0;
      for (std::size_t b = 0; b < 3; ++b) {
        const Index ib = dof[static_cast<std::size_t>(tri[b])];
        if (ib < 0) continue;
        auto [it, inserted] = slot.emplace(std::make_pair(ia, ib), static_cast<Index>(sys.pattern.entries.size()));
        if (inserted) sys.pattern.entries.emplace_back(ia, ib);
        t.emplace_back(it->second, e, k[a][b]);
      }
    }
  }
  sys.assembly = make_sparse(sys.pattern.nnz(), mesh.triangle_count(), t);
  return sys;
}

inline DenseMatrix centroids(const TriMesh& mesh) {
  DenseMatrix c(mesh.triangle_count(), 2);
  for (Index e = 0; e < mesh.triangle_count(); ++e) {
    const auto p = mesh.centroid(e);
    c(e, 0) = p[0];
    c(e, 1) = p[1];
  }
  return c;
}

/// Solves with κ(x, y) evaluated at centroids; returns u on free vertices.
template <class Kappa>
Vector fem_solve(const TriMesh& mesh, Kappa&& kappa, double source = kFemSource) {
  const P1System sys = p1_system(mesh, source);
  Vector k(mesh.triangle_count());
  for (Index e = 0; e < mesh.triangle_count(); ++e) {
    const auto c = mesh.centroid(e);
    k[e] = kappa(c[0], c[1]);
  }
  const Vector values = sys.assembly * k;
  return solve_forward(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())),
                       sys.pattern)
      .u;
}

/// Observations on free vertices from the forward solve with exact κ.
inline Observations manufactured_fem(const TriMesh& mesh) {
  Observations obs;
  obs.u = fem_solve(mesh, fem_kappa);
  return obs;
}

/// Σ_i (u_i(θ) − û_i)² over free vertices, u(θ) = A(κ_θ)⁻¹ b.
inline Tape build_fem_poisson_loss(const TriMesh& mesh, const Observations& obs, const NetworkSpec& spec) {
  if (spec.input_dim != 2) throw ShapeError("fem loss: κ(x, y) network needs input_dim 2");
  const P1System sys = p1_system(mesh);
  if (obs.u.size() != static_cast<Index>(sys.free.size())) {
    throw ShapeError("fem loss: expected " + std::to_string(sys.free.size()) + " free-vertex observations");
  }
  TapeBuilder b;
  const auto theta = b.add_inputs(spec.param_count());
  const std::vector<Index> kappa = register_network_batch(b, spec, theta, centroids(mesh));
  const auto values = b.add(std::make_unique<LinearMapStage>(kappa, sys.assembly,
                                                             Vector::Zero(sys.pattern.nnz()), "p1_assembly"));
  const auto u = b.add(std::make_unique<SparseSolveStage>(values, sys.pattern));
  const Index n = static_cast<Index>(u.size());
  std::vector<Triplet> eye;
  for (Index i = 0; i < n; ++i) eye.emplace_back(i, i, 1.0);
  const auto r = b.add(std::make_unique<LinearMapStage>(u, make_sparse(n, n, eye), -obs.u, "state_misfit"));
  const auto loss = b.add(std::make_unique<SumOfSquaresStage>(r));
  return std::move(b).finish(loss.front());
}

/// Elements where κ_θ(centroid) ≤ 0, for explaining a failed stiffness solve.
inline std::string describe_nonpositive_kappa(const TriMesh& mesh, const NetworkSpec& spec,
                                              const Vector& theta, std::size_t limit = 5) {
  std::ostringstream os;
  std::size_t count = 0;
  for (Index e = 0; e < mesh.triangle_count(); ++e) {
    const auto c = mesh.centroid(e);
    const double k = evaluate_network(spec, theta, std::span<const double>(c.data(), 2))[0];
    if (k <= 0.0) {
      if (count < limit) os << (count ? ", " : "") << "element " << e << " κ=" << k;
      ++count;
    }
  }
  if (count == 0) return "all element κ values positive";
  if (count > limit) os << " (+" << count - limit << " more)";
  return std::to_string(count) + " element(s) with κ ≤ 0: " + os.str();
}

}  // namespace hesspcl::pde
