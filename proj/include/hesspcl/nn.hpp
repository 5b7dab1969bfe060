#pragma once

// Fully connected tanh network κ_θ and its registration onto a tape.
// Parameters are flattened layer-major: W₁ (row-major, fan_out × fan_in),
// b₁, W₂, b₂, ...

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/primitives.hpp"
#include "hesspcl/tape.hpp"

namespace hesspcl {

struct NetworkSpec {
  Index input_dim = 1;
  Index output_dim = 1;
  std::vector<Index> hidden{20, 20, 20};
  std::string activation = "tanh";

  /// Layer widths including input and output.
  std::vector<Index> widths() const {
    std::vector<Index> w{input_dim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(output_dim);
    return w;
  }

  Index layer_count() const { return static_cast<Index>(hidden.size()) + 1; }

  Index param_count() const {
    const auto w = widths();
    Index n = 0;
    for (std::size_t k = 0; k + 1 < w.size(); ++k) n += (w[k] + 1) * w[k + 1];
    return n;
  }

  void validate() const {
    if (input_dim < 1 || output_dim < 1) throw ShapeError("network: dimensions must be positive");
    for (Index h : hidden) {
      if (h < 1) throw ShapeError("network: hidden layer widths must be positive");
    }
    if (activation != "tanh") throw ShapeError("network: unsupported activation '" + activation + "'");
  }
};

/// Offsets of one layer's weights and biases inside θ.
struct LayerSlice {
  Index fan_in;
  Index fan_out;
  Index weight_offset;
  Index bias_offset;
};

inline std::vector<LayerSlice> layer_slices(const NetworkSpec& spec) {
  const auto w = spec.widths();
  std::vector<LayerSlice> out;
  Index off = 0;
  for (std::size_t k = 0; k + 1 < w.size(); ++k) {
    LayerSlice s{w[k], w[k + 1], off, off + w[k] * w[k + 1]};
    off = s.bias_offset + s.fan_out;
    out.push_back(s);
  }
  return out;
}

/// Glorot-uniform weights, zero biases; deterministic for a given seed.
inline Vector init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Vector theta = Vector::Zero(spec.param_count());
  for (const LayerSlice& s : layer_slices(spec)) {
    const double limit = std::sqrt(6.0 / static_cast<double>(s.fan_in + s.fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Index i = 0; i < s.fan_in * s.fan_out; ++i) theta[s.weight_offset + i] = dist(rng);
  }
  return theta;
}

/// Straight-line evaluation of κ_θ(x); `activations`, when given, receives
/// every tanh output in layer order.
inline Vector evaluate_network(const NetworkSpec& spec, const Vector& theta,
                               std::span<const double> x,
                               std::vector<double>* activations = nullptr) {
  if (theta.size() != spec.param_count()) throw ShapeError("network: parameter length mismatch");
  if (static_cast<Index>(x.size()) != spec.input_dim) throw ShapeError("network: input length mismatch");
  const auto slices = layer_slices(spec);
  Vector a = Eigen::Map<const Vector>(x.data(), static_cast<Index>(x.size()));
  for (std::size_t k = 0; k < slices.size(); ++k) {
    const LayerSlice& s = slices[k];
    Vector z(s.fan_out);
    for (Index i = 0; i < s.fan_out; ++i) {
      double acc = theta[s.bias_offset + i];
      for (Index j = 0; j < s.fan_in; ++j) acc += theta[s.weight_offset + i * s.fan_in + j] * a[j];
      z[i] = acc;
    }
    if (k + 1 < slices.size()) {
      for (Index i = 0; i < z.size(); ++i) {
        z[i] = std::tanh(z[i]);
        if (activations) activations->push_back(z[i]);
      }
    }
    a = std::move(z);
  }
  return a;
}

/// Appends κ_θ evaluated at each point (rows of `points`, input_dim columns)
/// as one affine/tanh chain per point, so the backward sweep only keeps one
/// point's activations active at a time. Returns, per point, the live
/// indices of the network outputs (points × output_dim, row-major).
inline std::vector<Index> register_network(TapeBuilder& builder, const NetworkSpec& spec,
                                           const std::vector<Index>& params,
                                           const DenseMatrix& points) {
  spec.validate();
  if (static_cast<Index>(params.size()) != spec.param_count()) {
    throw ShapeError("register_network: expected " + std::to_string(spec.param_count()) +
                     " parameter indices, got " + std::to_string(params.size()));
  }
  if (points.cols() != spec.input_dim) {
    throw ShapeError("register_network: points have " + std::to_string(points.cols()) +
                     " columns, network expects " + std::to_string(spec.input_dim));
  }
  const auto slices = layer_slices(spec);
  std::vector<std::vector<Index>> w_idx, b_idx;
  for (const LayerSlice& s : slices) {
    w_idx.emplace_back(params.begin() + s.weight_offset,
                       params.begin() + s.weight_offset + s.fan_in * s.fan_out);
    b_idx.emplace_back(params.begin() + s.bias_offset, params.begin() + s.bias_offset + s.fan_out);
  }

  std::vector<Index> outputs;
  outputs.reserve(static_cast<std::size_t>(points.rows() * spec.output_dim));
  for (Index p = 0; p < points.rows(); ++p) {
    std::vector<double> x(static_cast<std::size_t>(spec.input_dim));
    for (Index j = 0; j < spec.input_dim; ++j) x[static_cast<std::size_t>(j)] = points(p, j);
    std::vector<Index> a = builder.add(std::make_unique<ConstantStage>(std::move(x)));
    for (std::size_t k = 0; k < slices.size(); ++k) {
      a = builder.add(std::make_unique<AffineStage>(a, w_idx[k], b_idx[k]));
      if (k + 1 < slices.size()) a = builder.add(std::make_unique<ElementwiseStage>(unary::tanh, a));
    }
    outputs.insert(outputs.end(), a.begin(), a.end());
  }
  return outputs;
}

/// θ̄ += (∂κ_θ(x)/∂θ)ᵀ ybar by straight-line backpropagation.
inline void network_vjp(const NetworkSpec& spec, const Vector& theta, std::span<const double> x,
                        std::span<const double> ybar, std::span<double> theta_bar) {
  const auto slices = layer_slices(spec);
  std::vector<Vector> acts{Eigen::Map<const Vector>(x.data(), static_cast<Index>(x.size()))};
  for (std::size_t k = 0; k + 1 < slices.size(); ++k) {
    const LayerSlice& s = slices[k];
    Vector z(s.fan_out);
    for (Index i = 0; i < s.fan_out; ++i) {
      double acc = theta[s.bias_offset + i];
      for (Index j = 0; j < s.fan_in; ++j) acc += theta[s.weight_offset + i * s.fan_in + j] * acts.back()[j];
      z[i] = std::tanh(acc);
    }
    acts.push_back(std::move(z));
  }
  Vector delta = Eigen::Map<const Vector>(ybar.data(), static_cast<Index>(ybar.size()));
  for (std::size_t k = slices.size(); k-- > 0;) {
    const LayerSlice& s = slices[k];
    const Vector& a = acts[k];
    Vector back = Vector::Zero(s.fan_in);
    for (Index i = 0; i < s.fan_out; ++i) {
      const double d = delta[i];
      theta_bar[static_cast<std::size_t>(s.bias_offset + i)] += d;
      for (Index j = 0; j < s.fan_in; ++j) {
        theta_bar[static_cast<std::size_t>(s.weight_offset + i * s.fan_in + j)] += d * a[j];
        back[j] += d * theta[s.weight_offset + i * s.fan_in + j];
      }
    }
    if (k > 0) {
      for (Index j = 0; j < s.fan_in; ++j) back[j] *= 1.0 - a[j] * a[j];
    }
    delta = std::move(back);
  }
}

/// Σ_p ∇²_θ (ȳ_pᵀ κ_θ(x_p)), dense and exactly symmetric. `points` is
/// row-major (points × input_dim), `ybar` is points × output_dim.
///
/// With layer parameters V_l = [W_l b_l], ā = [a; 1], g_l = ∂φ/∂z_l and
/// H_l = ∂²φ/∂z_l², the block between V_l[i,j] and V_m[k,n] (l ≤ m) is
///   ā_{l-1}[j] (ā_{m-1}[n] (J_{l→m}ᵀ H_m)[i,k] + g_m[k] (∂a_{m-1}/∂z_l)[n,i]),
/// where the second term only exists for l < m and weight columns n. Each
/// term is a sum over points of outer products, evaluated as one GEMM.
inline DenseMatrix network_weighted_hessian(const NetworkSpec& spec, const Vector& theta,
                                            std::span<const double> points,
                                            std::span<const double> ybar) {
  const auto slices = layer_slices(spec);
  const std::size_t L = slices.size();
  const Index n_pts = static_cast<Index>(points.size()) / spec.input_dim;
  if (static_cast<Index>(ybar.size()) != n_pts * spec.output_dim) {
    throw ShapeError("network hessian: adjoint length mismatch");
  }
  std::vector<DenseMatrix> w(L);
  for (std::size_t l = 0; l < L; ++l) {
    const LayerSlice& s = slices[l];
    w[l] = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        theta.data() + s.weight_offset, s.fan_out, s.fan_in);
  }

  // Per-point factors; layer l in code is layer l+1 in the formula.
  struct PointData {
    std::vector<Vector> abar;           // ā_{l-1}, length fan_in + 1
    std::vector<Vector> g;              // g_l
    std::vector<std::vector<DenseMatrix>> m;  // m[l][q] = J_{l→q}ᵀ H_q, q ≥ l
    std::vector<std::vector<DenseMatrix>> da;  // da[l][q] = ∂a_q/∂z_l, q ≥ l, q < L-1
  };
  std::vector<PointData> pd(static_cast<std::size_t>(n_pts));
  for (Index p = 0; p < n_pts; ++p) {
    PointData& d = pd[static_cast<std::size_t>(p)];
    std::vector<Vector> act(L);  // tanh outputs of hidden layers
    Vector a = Eigen::Map<const Vector>(points.data() + p * spec.input_dim, spec.input_dim);
    for (std::size_t l = 0; l < L; ++l) {
      Vector ab(a.size() + 1);
      ab << a, 1.0;
      d.abar.push_back(ab);
      Vector z = w[l] * a + theta.segment(slices[l].bias_offset, slices[l].fan_out);
      if (l + 1 < L) a = z.array().tanh().matrix(), act[l] = a;
    }
    std::vector<Vector> s1(L), u(L);
    d.g.assign(L, Vector());
    d.g[L - 1] = Eigen::Map<const Vector>(ybar.data() + p * spec.output_dim, spec.output_dim);
    for (std::size_t l = L - 1; l-- > 0;) {
      s1[l] = (1.0 - act[l].array().square()).matrix();
      u[l] = w[l + 1].transpose() * d.g[l + 1];
      d.g[l] = s1[l].cwiseProduct(u[l]);
    }
    std::vector<DenseMatrix> h(L);
    h[L - 1] = DenseMatrix::Zero(slices[L - 1].fan_out, slices[L - 1].fan_out);
    for (std::size_t l = L - 1; l-- > 0;) {
      const DenseMatrix wd = w[l + 1] * s1[l].asDiagonal();
      h[l] = wd.transpose() * h[l + 1] * wd;
      const Vector s2 = (-2.0 * act[l].array() * s1[l].array()).matrix();
      h[l].diagonal() += s2.cwiseProduct(u[l]);
    }
    d.m.assign(L, std::vector<DenseMatrix>(L));
    for (std::size_t q = 0; q < L; ++q) {
      d.m[q][q] = h[q];
      for (std::size_t l = q; l-- > 0;) d.m[l][q] = s1[l].asDiagonal() * (w[l + 1].transpose() * d.m[l + 1][q]);
    }
    d.da.assign(L, std::vector<DenseMatrix>(L));
    for (std::size_t l = 0; l + 1 < L; ++l) {
      d.da[l][l] = s1[l].asDiagonal();
      for (std::size_t q = l + 1; q + 1 < L; ++q) d.da[l][q] = s1[q].asDiagonal() * (w[q] * d.da[l][q - 1]);
    }
  }

  const Index P = spec.param_count();
  DenseMatrix z = DenseMatrix::Zero(P, P);
  auto param = [&](std::size_t l, Index i, Index j) {
    const LayerSlice& s = slices[l];
    return j < s.fan_in ? s.weight_offset + i * s.fan_in + j : s.bias_offset + i;
  };
  for (std::size_t l = 0; l < L; ++l) {
    const Index nl = slices[l].fan_out, rl = slices[l].fan_in + 1;
    for (std::size_t q = l; q < L; ++q) {
      const Index nq = slices[q].fan_out, rq = slices[q].fan_in + 1;
      DenseMatrix x(n_pts, nl * nq), y(n_pts, rl * rq);
      for (Index p = 0; p < n_pts; ++p) {
        const PointData& d = pd[static_cast<std::size_t>(p)];
        const DenseMatrix& m = d.m[l][q];
        for (Index i = 0; i < nl; ++i) {
          for (Index k = 0; k < nq; ++k) x(p, i * nq + k) = m(i, k);
        }
        for (Index j = 0; j < rl; ++j) {
          for (Index n = 0; n < rq; ++n) y(p, j * rq + n) = d.abar[l][j] * d.abar[q][n];
        }
      }
      DenseMatrix s1m = x.transpose() * y;
      DenseMatrix s2m;
      const Index fq = rq - 1;
      if (q > l) {
        DenseMatrix uu(n_pts, rl * nq), vv(n_pts, fq * nl);
        for (Index p = 0; p < n_pts; ++p) {
          const PointData& d = pd[static_cast<std::size_t>(p)];
          for (Index j = 0; j < rl; ++j) {
            for (Index k = 0; k < nq; ++k) uu(p, j * nq + k) = d.abar[l][j] * d.g[q][k];
          }
          const DenseMatrix& da = d.da[l][q - 1];
          for (Index n = 0; n < fq; ++n) {
            for (Index i = 0; i < nl; ++i) vv(p, n * nl + i) = da(n, i);
          }
        }
        s2m = uu.transpose() * vv;
      }
      for (Index i = 0; i < nl; ++i) {
        for (Index j = 0; j < rl; ++j) {
          const Index a = param(l, i, j);
          for (Index k = 0; k < nq; ++k) {
            for (Index n = 0; n < rq; ++n) {
              const Index b = param(q, k, n);
              double v = s1m(i * nq + k, j * rq + n);
              if (q > l && n < fq) v += s2m(j * nq + k, n * nl + i);
              if (a >= b) z(a, b) += v;
              if (q != l && b > a) z(b, a) += v;
            }
          }
        }
      }
    }
  }
  z.triangularView<Eigen::StrictlyUpper>() = z.transpose();
  return z;
}

/// κ_θ at a fixed point set as a single stage over θ. The Jacobian is dense
/// (points × params) and the curvature term comes from
/// network_weighted_hessian, so outer tapes couple the points only through
/// one Jᵀ H J product instead of per-layer cross terms.
class NetworkBatchStage final : public Stage {
 public:
  NetworkBatchStage(NetworkSpec spec, std::vector<Index> params, DenseMatrix points)
      : Stage(std::move(params)), spec_(std::move(spec)), points_(std::move(points)) {
    spec_.validate();
    if (input_size() != spec_.param_count()) {
      throw ShapeError("network: expected " + std::to_string(spec_.param_count()) +
                       " parameter indices, got " + std::to_string(input_size()));
    }
    if (points_.cols() != spec_.input_dim) {
      throw ShapeError("network: points have " + std::to_string(points_.cols()) +
                       " columns, network expects " + std::to_string(spec_.input_dim));
    }
    for (Index p = 0; p < points_.rows(); ++p) {
      for (Index j = 0; j < points_.cols(); ++j) rows_.push_back(points_(p, j));
    }
  }

  std::string kind() const override { return "network"; }
  Index output_size() const override { return points_.rows() * spec_.output_dim; }
  const DenseMatrix& points() const noexcept { return points_; }

  std::unique_ptr<StageCache> eval(std::span<const double> theta, std::span<double> y) const override {
    const Vector th = as_vector(theta);
    for (Index p = 0; p < points_.rows(); ++p) {
      const Vector k = evaluate_network(spec_, th, point(p));
      for (Index o = 0; o < spec_.output_dim; ++o) y[static_cast<std::size_t>(p * spec_.output_dim + o)] = k[o];
    }
    return nullptr;
  }

  SparseMatrix jacobian(std::span<const double> theta, const StageCache*) const override {
    const Vector th = as_vector(theta);
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(output_size() * input_size()));
    std::vector<double> row(static_cast<std::size_t>(input_size()));
    std::vector<double> seed(static_cast<std::size_t>(spec_.output_dim));
    for (Index p = 0; p < points_.rows(); ++p) {
      for (Index o = 0; o < spec_.output_dim; ++o) {
        std::fill(row.begin(), row.end(), 0.0);
        std::fill(seed.begin(), seed.end(), 0.0);
        seed[static_cast<std::size_t>(o)] = 1.0;
        network_vjp(spec_, th, point(p), seed, row);
        for (Index i = 0; i < input_size(); ++i) {
          if (row[static_cast<std::size_t>(i)] != 0.0) {
            t.emplace_back(p * spec_.output_dim + o, i, row[static_cast<std::size_t>(i)]);
          }
        }
      }
    }
    return make_sparse(output_size(), input_size(), t);
  }

  void vjp(std::span<const double> theta, const StageCache*, std::span<const double> ybar,
           std::span<double> xbar) const override {
    const Vector th = as_vector(theta);
    for (Index p = 0; p < points_.rows(); ++p) {
      network_vjp(spec_, th, point(p),
                  ybar.subspan(static_cast<std::size_t>(p * spec_.output_dim),
                               static_cast<std::size_t>(spec_.output_dim)),
                  xbar);
    }
  }

  std::vector<Triplet> weighted_hessian(std::span<const double> theta, const StageCache*,
                                        std::span<const double> ybar) const override {
    const DenseMatrix h = network_weighted_hessian(spec_, as_vector(theta), rows_, ybar);
    std::vector<Triplet> z;
    for (Index i = 0; i < input_size(); ++i) {
      for (Index j = 0; j <= i; ++j) {
        if (h(i, j) != 0.0) z.emplace_back(i, j, h(i, j));
      }
    }
    return z;
  }

 private:
  static Vector as_vector(std::span<const double> v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
  }

  std::span<const double> point(Index p) const {
    return std::span<const double>(rows_).subspan(static_cast<std::size_t>(p * points_.cols()),
                                                  static_cast<std::size_t>(points_.cols()));
  }

  NetworkSpec spec_;
  DenseMatrix points_;
  std::vector<double> rows_;  ///< points_, row-major
};

/// Appends κ_θ at every point as one NetworkBatchStage; same return layout
/// as register_network.
inline std::vector<Index> register_network_batch(TapeBuilder& builder, const NetworkSpec& spec,
                                                 const std::vector<Index>& params,
                                                 const DenseMatrix& points) {
  return builder.add(std::make_unique<NetworkBatchStage>(spec, params, points));
}

// Parameter files: optional "#" comment lines, a header line
// "hesspcl-params v1 <length> <seed>", then
// one value per line.

inline void write_params(std::ostream& os, const Vector& theta, std::uint64_t seed) {
  os << "hesspcl-params v1 " << theta.size() << ' ' << seed << '\n';
  char buf[64];
  for (Index i = 0; i < theta.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g\n", theta[i]);
    os << buf;
  }
}

struct ParamFile {
  Vector theta;
  std::uint64_t seed = 0;
};

inline ParamFile read_params(std::istream& is) {
  std::string magic, version;
  Index length = -1;
  ParamFile pf;
  while (is >> std::ws && is.peek() == '#') {
    std::string comment;
    std::getline(is, comment);
  }
  if (!(is >> magic >> version >> length >> pf.seed) || magic != "hesspcl-params" ||
      version != "v1" || length < 0) {
    throw ShapeError("params: malformed header");
  }
  pf.theta.resize(length);
  for (Index i = 0; i < length; ++i) {
    if (!(is >> pf.theta[i])) throw ShapeError("params: expected " + std::to_string(length) + " values");
  }
  return pf;
}

}  // namespace hesspcl
