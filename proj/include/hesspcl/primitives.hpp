#pragma once

// Stage implementations: forward map, sparse Jacobian, and the weighted
// second-order term Z = ∇²(ȳᵀ G) for each primitive the benchmarks use.

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/tape.hpp"

namespace hesspcl {

/// Scalar function with its first two derivatives.
struct UnaryRule {
  const char* name;
  double (*f)(double);
  double (*df)(double);
  double (*d2f)(double);
};

namespace unary {

inline double sech2(double x) {
  const double t = std::tanh(x);
  return 1.0 - t * t;
}

inline const UnaryRule tanh{
    "tanh", [](double x) { return std::tanh(x); }, [](double x) { return sech2(x); },
    [](double x) { return -2.0 * std::tanh(x) * sech2(x); }};
inline const UnaryRule square{
    "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; },
    [](double) { return 2.0; }};
inline const UnaryRule sin{
    "sin", [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); },
    [](double x) { return -std::sin(x); }};
inline const UnaryRule cos{
    "cos", [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); },
    [](double x) { return -std::cos(x); }};
inline const UnaryRule exp{
    "exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); },
    [](double x) { return std::exp(x); }};

}  // namespace unary

/// y_i = f(x_i).
class ElementwiseStage final : public Stage {
 public:
  ElementwiseStage(const UnaryRule& rule, std::vector<Index> inputs)
      : Stage(std::move(inputs)), rule_(rule) {}

  std::string kind() const override { return rule_.name; }
  Index output_size() const override { return input_size(); }

  std::unique_ptr<StageCache> eval(std::span<const double> x, std::span<double> y) const override {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = rule_.f(x[i]);
    return nullptr;
  }

  SparseMatrix jacobian(std::span<const double> x, const StageCache*) const override {
    const Index n = input_size();
    SparseMatrix j(n, n);
    j.reserve(Eigen::VectorXi::Constant(n, 1));
    for (Index i = 0; i < n; ++i) j.insert(i, i) = rule_.df(x[static_cast<std::size_t>(i)]);
    j.makeCompressed();
    return j;
  }

  void vjp(std::span<const double> x, const StageCache*, std::span<const double> ybar,
           std::span<double> xbar) const override {
    for (std::size_t i = 0; i < x.size(); ++i) xbar[i] += ybar[i] * rule_.df(x[i]);
  }

  std::vector<Triplet> weighted_hessian(std::span<const double> x, const StageCache*,
                                        std::span<const double> ybar) const override {
    std::vector<Triplet> z;
    z.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto ii = static_cast<Index>(i);
      z.emplace_back(ii, ii, ybar[i] * rule_.d2f(x[i]));
    }
    return z;
  }

 private:
  UnaryRule rule_;
};

/// y = W x + b with W (rows × cols, row-major), b and x all live variables.
/// Local input layout: x[0..cols), W[cols..cols+rows·cols), b[...+rows).
class AffineStage final : public Stage {
 public:
  AffineStage(const std::vector<Index>& x, const std::vector<Index>& w,
              const std::vector<Index>& b)
      : Stage(concat(x, w, b)), rows_(static_cast<Index>(b.size())),
        cols_(static_cast<Index>(x.size())) {
    if (static_cast<Index>(w.size()) != rows_ * cols_) {
      throw ShapeError("affine: weight count " + std::to_string(w.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::string kind() const override { return "affine"; }
  Index output_size() const override { return rows_; }
  Index rows() const noexcept { return rows_; }
  Index cols() const noexcept { return cols_; }

  std::unique_ptr<StageCache> eval(std::span<const double> in, std::span<double> y) const override {
    for (Index i = 0; i < rows_; ++i) {
      double acc = in[static_cast<std::size_t>(b_pos(i))];
      for (Index j = 0; j < cols_; ++j) {
        acc += in[static_cast<std::size_t>(w_pos(i, j))] * in[static_cast<std::size_t>(j)];
      }
      y[static_cast<std::size_t>(i)] = acc;
    }
    return nullptr;
  }

  SparseMatrix jacobian(std::span<const double> in, const StageCache*) const override {
    SparseMatrix jac(rows_, input_size());
    jac.reserve(Eigen::VectorXi::Constant(rows_, static_cast<int>(2 * cols_ + 1)));
    for (Index i = 0; i < rows_; ++i) {
      for (Index j = 0; j < cols_; ++j) jac.insert(i, j) = in[static_cast<std::size_t>(w_pos(i, j))];
      for (Index j = 0; j < cols_; ++j) jac.insert(i, w_pos(i, j)) = in[static_cast<std::size_t>(j)];
      jac.insert(i, b_pos(i)) = 1.0;
    }
    jac.makeCompressed();
    return jac;
  }

  void vjp(std::span<const double> in, const StageCache*, std::span<const double> ybar,
           std::span<double> xbar) const override {
    for (Index i = 0; i < rows_; ++i) {
      const double w = ybar[static_cast<std::size_t>(i)];
      if (w == 0.0) continue;
      for (Index j = 0; j < cols_; ++j) {
        xbar[static_cast<std::size_t>(j)] += w * in[static_cast<std::size_t>(w_pos(i, j))];
        xbar[static_cast<std::size_t>(w_pos(i, j))] += w * in[static_cast<std::size_t>(j)];
      }
      xbar[static_cast<std::size_t>(b_pos(i))] += w;
    }
  }

  /// Only the mixed block survives: ∂²(ȳᵀy)/∂W_ij∂x_j = ȳ_i.
  std::vector<Triplet> weighted_hessian(std::span<const double>, const StageCache*,
                                        std::span<const double> ybar) const override {
    std::vector<Triplet> z;
    z.reserve(static_cast<std::size_t>(rows_ * cols_));
    for (Index i = 0; i < rows_; ++i) {
      for (Index j = 0; j < cols_; ++j) z.emplace_back(w_pos(i, j), j, ybar[static_cast<std::size_t>(i)]);
    }
    return z;
  }

 private:
  static std::vector<Index> concat(const std::vector<Index>& a, const std::vector<Index>& b,
                                   const std::vector<Index>& c) {
    std::vector<Index> out;
    out.reserve(a.size() + b.size() + c.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    out.insert(out.end(), c.begin(), c.end());
    return out;
  }
  Index w_pos(Index i, Index j) const { return cols_ + i * cols_ + j; }
  Index b_pos(Index i) const { return cols_ + rows_ * cols_ + i; }

  Index rows_;
  Index cols_;
};

/// v = Σ r_i².
class SumOfSquaresStage final : public Stage {
 public:
  explicit SumOfSquaresStage(std::vector<Index> inputs) : Stage(std::move(inputs)) {}

  std::string kind() const override { return "sum_of_squares"; }
  Index output_size() const override { return 1; }

  std::unique_ptr<StageCache> eval(std::span<const double> r, std::span<double> y) const override {
    double acc = 0.0;
    for (double v : r) acc += v * v;
    y[0] = acc;
    return nullptr;
  }

  SparseMatrix jacobian(std::span<const double> r, const StageCache*) const override {
    SparseMatrix j(1, input_size());
    j.reserve(Eigen::VectorXi::Constant(1, static_cast<int>(r.size())));
    for (std::size_t i = 0; i < r.size(); ++i) j.insert(0, static_cast<Index>(i)) = 2.0 * r[i];
    j.makeCompressed();
    return j;
  }

  void vjp(std::span<const double> r, const StageCache*, std::span<const double> ybar,
           std::span<double> xbar) const override {
    for (std::size_t i = 0; i < r.size(); ++i) xbar[i] += 2.0 * ybar[0] * r[i];
  }

  std::vector<Triplet> weighted_hessian(std::span<const double> r, const StageCache*,
                                        std::span<const double> ybar) const override {
    std::vector<Triplet> z;
    z.reserve(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      z.emplace_back(static_cast<Index>(i), static_cast<Index>(i), 2.0 * ybar[0]);
    }
    return z;
  }
};

/// v = Σ a_i b_i over inputs (a_1..a_n, b_1..b_n).
class InnerProductStage final : public Stage {
 public:
  InnerProductStage(const std::vector<Index>& a, const std::vector<Index>& b)
      : Stage(concat(a, b)), n_(static_cast<Index>(a.size())) {
    if (a.size() != b.size()) throw ShapeError("inner_product: operand lengths differ");
  }

  std::string kind() const override { return "inner_product"; }
  Index output_size() const override { return 1; }

  std::unique_ptr<StageCache> eval(std::span<const double> x, std::span<double> y) const override {
    double acc = 0.0;
    for (Index i = 0; i < n_; ++i) acc += x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(n_ + i)];
    y[0] = acc;
    return nullptr;
  }

  SparseMatrix jacobian(std::span<const double> x, const StageCache*) const override {
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(2 * n_));
    for (Index i = 0; i < n_; ++i) {
      t.emplace_back(0, i, x[static_cast<std::size_t>(n_ + i)]);
      t.emplace_back(0, n_ + i, x[static_cast<std::size_t>(i)]);
    }
    return make_sparse(1, 2 * n_, t);
  }

  std::vector<Triplet> weighted_hessian(std::span<const double>, const StageCache*,
                                        std::span<const double> ybar) const override {
    std::vector<Triplet> z;
    z.reserve(static_cast<std::size_t>(n_));
    for (Index i = 0; i < n_; ++i) z.emplace_back(n_ + i, i, ybar[0]);
    return z;
  }

 private:
  static std::vector<Index> concat(const std::vector<Index>& a, const std::vector<Index>& b) {
    std::vector<Index> v(a);
    v.insert(v.end(), b.begin(), b.end());
    return v;
  }

  Index n_;
};

/// Base for stages that are affine in their inputs: Z is identically zero.
class LinearStage : public Stage {
 public:
  using Stage::Stage;
  bool is_linear() const override { return true; }
  std::vector<Triplet> weighted_hessian(std::span<const double>, const StageCache*,
                                        std::span<const double>) const override {
    return {};
  }
};

/// y_k = x[selection_k]; the selection may repeat variables.
class GatherStage final : public LinearStage {
 public:
  explicit GatherStage(const std::vector<Index>& selection)
      : LinearStage(unique_of(selection)), map_(selection.size()) {
    std::unordered_map<Index, Index> local;
    for (Index i = 0; i < input_size(); ++i) local.emplace(inputs()[static_cast<std::size_t>(i)], i);
    for (std::size_t k = 0; k < selection.size(); ++k) map_[k] = local.at(selection[k]);
  }

  std::string kind() const override { return "gather"; }
  Index output_size() const override { return static_cast<Index>(map_.size()); }

  std::unique_ptr<StageCache> eval(std::span<const double> x, std::span<double> y) const override {
    for (std::size_t k = 0; k < map_.size(); ++k) y[k] = x[static_cast<std::size_t>(map_[k])];
    return nullptr;
  }

  SparseMatrix jacobian(std::span<const double>, const StageCache*) const override {
    std::vector<Triplet> t;
    t.reserve(map_.size());
    for (std::size_t k = 0; k < map_.size(); ++k) t.emplace_back(static_cast<Index>(k), map_[k], 1.0);
    return make_sparse(output_size(), input_size(), t);
  }

 private:
  static std::vector<Index> unique_of(std::vector<Index> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  }

  std::vector<Index> map_;
};

/// y[target_i] += x_i over an output of length `size`.
class ScatterAddStage final : public LinearStage {
 public:
  ScatterAddStage(std::vector<Index> inputs, std::vector<Index> targets, Index size)
      : LinearStage(std::move(inputs)), targets_(std::move(targets)), size_(size) {
    if (static_cast<Index>(targets_.size()) != input_size()) {
      throw ShapeError("scatter_add: one target per input required");
    }
    for (Index t : targets_) {
      if (t < 0 || t >= size_) {
        throw ShapeError("scatter_add: target " + std::to_string(t) + " out of bounds for size " +
                         std::to_string(size_));
      }
    }
  }

  std::string kind() const override { return "scatter_add"; }
  Index output_size() const override { return size_; }

  std::unique_ptr<StageCache> eval(std::span<const double> x, std::span<double> y) const override {
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) y[static_cast<std::size_t>(targets_[i])] += x[i];
    return nullptr;
  }

  SparseMatrix jacobian(std::span<const double>, const StageCache*) const override {
    std::vector<Triplet> t;
    t.reserve(targets_.size());
    for (std::size_t i = 0; i < targets_.size(); ++i) {
      t.emplace_back(targets_[i], static_cast<Index>(i), 1.0);
    }
    return make_sparse(size_, input_size(), t);
  }

 private:
  std::vector<Index> targets_;
  Index size_;
};

/// y = M x + c with a constant sparse M and offset c.
class LinearMapStage final : public LinearStage {
 public:
  LinearMapStage(std::vector<Index> inputs, SparseMatrix m, Vector offset, std::string label = "linear_map")
      : LinearStage(std::move(inputs)), m_(std::move(m)), offset_(std::move(offset)),
        label_(std::move(label)) {
    if (m_.cols() != input_size() || offset_.size() != m_.rows()) {
      throw ShapeError("linear_map: matrix " + std::to_string(m_.rows()) + "x" +
                       std::to_string(m_.cols()) + " incompatible with " +
                       std::to_string(input_size()) + " inputs / offset " +
                       std::to_string(offset_.size()));
    }
    m_.makeCompressed();
  }

  std::string kind() const override { return label_; }
  Index output_size() const override { return m_.rows(); }
  const SparseMatrix& matrix() const noexcept { return m_; }

  std::unique_ptr<StageCache> eval(std::span<const double> x, std::span<double> y) const override {
    for (Index k = 0; k < m_.outerSize(); ++k) {
      double acc = offset_[k];
      for (SparseMatrix::InnerIterator it(m_, k); it; ++it) {
        acc += it.value() * x[static_cast<std::size_t>(it.col())];
      }
      y[static_cast<std::size_t>(k)] = acc;
    }
    return nullptr;
  }

  SparseMatrix jacobian(std::span<const double>, const StageCache*) const override { return m_; }

 private:
  SparseMatrix m_;
  Vector offset_;
  std::string label_;
};

/// Writes fixed values; reads nothing.
class ConstantStage final : public LinearStage {
 public:
  explicit ConstantStage(std::vector<double> values)
      : LinearStage({}), values_(std::move(values)) {}

  std::string kind() const override { return "constant"; }
  Index output_size() const override { return static_cast<Index>(values_.size()); }

  std::unique_ptr<StageCache> eval(std::span<const double>, std::span<double> y) const override {
    std::copy(values_.begin(), values_.end(), y.begin());
    return nullptr;
  }

  SparseMatrix jacobian(std::span<const double>, const StageCache*) const override {
    return SparseMatrix(output_size(), 0);
  }

 private:
  std::vector<double> values_;
};

}  // namespace hesspcl
