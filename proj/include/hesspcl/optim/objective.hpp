#pragma once

#include <functional>
#include <memory>
#include <span>
#include <utility>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/tape.hpp"

namespace hesspcl::optim {

/// Loss oracle. Implementations must be deterministic per θ and safe to
/// call concurrently on distinct θ.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual Index dim() const = 0;
  virtual double value(const Vector& theta) const = 0;
  /// Value and gradient together (one forward, one reverse sweep).
  virtual double value_gradient(const Vector& theta, Vector& grad) const = 0;
  virtual bool has_hessian() const { return false; }
  virtual SecondOrder second_order(const Vector&) const {
    throw UnsupportedPrimitive("hessian");
  }
};

class TapeObjective final : public Objective {
 public:
  explicit TapeObjective(std::shared_ptr<const Tape> tape) : tape_(std::move(tape)) {}
  explicit TapeObjective(Tape tape) : tape_(std::make_shared<const Tape>(std::move(tape))) {}

  Index dim() const override { return tape_->input_size(); }
  const Tape& tape() const noexcept { return *tape_; }

  double value(const Vector& theta) const override { return evaluate(*tape_, view(theta)); }

  double value_gradient(const Vector& theta, Vector& grad) const override {
    double v = 0.0;
    grad = gradient(*tape_, view(theta), &v);
    return v;
  }

  bool has_hessian() const override { return true; }
  SecondOrder second_order(const Vector& theta) const override {
    return hesspcl::second_order(*tape_, view(theta));
  }

 private:
  static std::span<const double> view(const Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
  }
  std::shared_ptr<const Tape> tape_;
};

/// Objective from plain callables; the Hessian callable is optional.
class FunctionObjective final : public Objective {
 public:
  using Value = std::function<double(const Vector&)>;
  using Gradient = std::function<Vector(const Vector&)>;
  using Hessian = std::function<SymmetricMatrix(const Vector&)>;

  FunctionObjective(Index dim, Value f, Gradient g, Hessian h = nullptr)
      : dim_(dim), f_(std::move(f)), g_(std::move(g)), h_(std::move(h)) {}

  Index dim() const override { return dim_; }
  double value(const Vector& theta) const override { return f_(theta); }
  double value_gradient(const Vector& theta, Vector& grad) const override {
    grad = g_(theta);
    return f_(theta);
  }
  bool has_hessian() const override { return static_cast<bool>(h_); }
  SecondOrder second_order(const Vector& theta) const override {
    if (!h_) throw UnsupportedPrimitive("hessian");
    SecondOrder s;
    s.value = f_(theta);
    s.gradient = g_(theta);
    s.hessian = h_(theta);
    return s;
  }

 private:
  Index dim_;
  Value f_;
  Gradient g_;
  Hessian h_;
};

}  // namespace hesspcl::optim
