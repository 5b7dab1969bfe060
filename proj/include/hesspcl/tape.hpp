#pragma once

// Staged computational program over a live-variable vector.
//
// A tape is an ordered list of stages. Each stage reads a set of live
// variables and writes a fresh, contiguous block of live variables; every
// other live variable passes through unchanged. The scalar loss is one
// designated live variable written by the last stage.
//
// Second derivatives are accumulated in a single reverse sweep with the
// edge-pushing update
//
//     H <- Jᵀ H J + Z,    Z = ∇²(ȳᵀ G(x)),
//
// where J is the stage Jacobian and ȳ the adjoint of the stage outputs.
// H is kept dense over the active set only: a live variable enters the
// active set when the sweep first reaches a stage that reads it and leaves
// once the stage that wrote it has been processed.

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"

namespace hesspcl {

/// Per-call state a stage may save during forward evaluation for use by its
/// derivative rules (for example a matrix factorization).
struct StageCache {
  virtual ~StageCache() = default;
};

class TapeBuilder;

/// One primitive step Φ of a tape. Local input position i refers to live
/// variable inputs()[i]; local output position k to outputs()[k].
class Stage {
 public:
  explicit Stage(std::vector<Index> inputs) : inputs_(std::move(inputs)) {}
  virtual ~Stage() = default;

  Stage(const Stage&) = delete;
  Stage& operator=(const Stage&) = delete;

  virtual std::string kind() const = 0;
  virtual Index output_size() const = 0;

  /// Writes G(x) into y and optionally returns state for the derivative rules.
  virtual std::unique_ptr<StageCache> eval(std::span<const double> x,
                                           std::span<double> y) const = 0;

  /// ∇G as an output_size × input_size CSR matrix.
  virtual SparseMatrix jacobian(std::span<const double> x, const StageCache* cache) const = 0;

  /// Accumulates xbar += Jᵀ ybar.
  virtual void vjp(std::span<const double> x, const StageCache* cache,
                   std::span<const double> ybar, std::span<double> xbar) const {
    const SparseMatrix jac = jacobian(x, cache);
    for (Index k = 0; k < jac.outerSize(); ++k) {
      const double w = ybar[static_cast<std::size_t>(k)];
      if (w == 0.0) continue;
      for (SparseMatrix::InnerIterator it(jac, k); it; ++it) {
        xbar[static_cast<std::size_t>(it.col())] += w * it.value();
      }
    }
  }

  /// Z = ∇²(ȳᵀ G(x)) as triplets over local input positions. Each unordered
  /// pair appears with row >= col; repeated pairs are summed.
  virtual std::vector<Triplet> weighted_hessian(std::span<const double> /*x*/,
                                                const StageCache* /*cache*/,
                                                std::span<const double> /*ybar*/) const {
    throw UnsupportedPrimitive(kind());
  }

  /// True when G is affine in its inputs, so Z vanishes identically.
  virtual bool is_linear() const { return false; }

  const std::vector<Index>& inputs() const noexcept { return inputs_; }
  const std::vector<Index>& outputs() const noexcept { return outputs_; }
  Index input_size() const noexcept { return static_cast<Index>(inputs_.size()); }

 private:
  friend class TapeBuilder;
  std::vector<Index> inputs_;
  std::vector<Index> outputs_;
};

/// Immutable staged program; safe to share across threads.
class Tape {
 public:
  const std::vector<std::shared_ptr<const Stage>>& stages() const noexcept { return stages_; }
  Index live_size() const noexcept { return live_size_; }
  const std::vector<Index>& input_indices() const noexcept { return inputs_; }
  Index input_size() const noexcept { return static_cast<Index>(inputs_.size()); }
  Index output_index() const noexcept { return output_; }
  /// Largest active set reached by the condensed Hessian sweep.
  Index max_active() const noexcept { return max_active_; }

 private:
  friend class TapeBuilder;
  std::vector<std::shared_ptr<const Stage>> stages_;
  Index live_size_ = 0;
  std::vector<Index> inputs_;
  Index output_ = -1;
  Index max_active_ = 0;
};

class TapeBuilder {
 public:
  /// Allocates `n` independent variables; returns their live indices.
  std::vector<Index> add_inputs(Index n) {
    if (!stages_.empty()) throw ShapeError("TapeBuilder: inputs must precede stages");
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (auto& i : idx) {
      i = live_size_++;
      inputs_.push_back(i);
      written_.push_back(true);
    }
    return idx;
  }

  /// Appends a stage; returns the live indices of its outputs.
  std::vector<Index> add(std::unique_ptr<Stage> stage) {
    if (!stage) throw ShapeError("TapeBuilder: null stage");
    std::vector<Index> sorted = stage->inputs_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ShapeError("TapeBuilder: stage '" + stage->kind() + "' lists an input twice");
    }
    for (Index i : sorted) {
      if (i < 0 || i >= live_size_ || !written_[static_cast<std::size_t>(i)]) {
        throw ShapeError("TapeBuilder: stage '" + stage->kind() + "' reads unwritten variable " +
                         std::to_string(i));
      }
    }
    const Index n_out = stage->output_size();
    stage->outputs_.resize(static_cast<std::size_t>(n_out));
    for (auto& o : stage->outputs_) {
      o = live_size_++;
      written_.push_back(true);
    }
    std::vector<Index> out = stage->outputs_;
    stages_.push_back(std::move(stage));
    return out;
  }

  /// Seals the program with `output` (written by the last stage) as the loss.
  Tape finish(Index output) && {
    if (stages_.empty()) throw ShapeError("TapeBuilder: tape has no stages");
    const auto& last = stages_.back()->outputs_;
    if (std::find(last.begin(), last.end(), output) == last.end()) {
      throw ShapeError("TapeBuilder: output index must be written by the final stage");
    }
    Tape tape;
    tape.live_size_ = live_size_;
    tape.inputs_ = std::move(inputs_);
    tape.output_ = output;
    tape.stages_.reserve(stages_.size());
    for (auto& s : stages_) tape.stages_.push_back(std::shared_ptr<const Stage>(std::move(s)));
    tape.max_active_ = symbolic_max_active(tape);
    return tape;
  }

 private:
  static Index symbolic_max_active(const Tape& tape) {
    std::vector<char> active(static_cast<std::size_t>(tape.live_size_), 0);
    active[static_cast<std::size_t>(tape.output_)] = 1;
    Index count = 1;
    Index peak = 1;
    for (auto it = tape.stages_.rbegin(); it != tape.stages_.rend(); ++it) {
      const Stage& s = **it;
      bool any_out = false;
      for (Index o : s.outputs()) any_out |= active[static_cast<std::size_t>(o)] != 0;
      if (!any_out && s.is_linear()) continue;
      for (Index i : s.inputs()) {
        if (!active[static_cast<std::size_t>(i)]) {
          active[static_cast<std::size_t>(i)] = 1;
          ++count;
        }
      }
      peak = std::max(peak, count);
      for (Index o : s.outputs()) {
        if (active[static_cast<std::size_t>(o)]) {
          active[static_cast<std::size_t>(o)] = 0;
          --count;
        }
      }
    }
    return peak;
  }

  std::vector<std::unique_ptr<Stage>> stages_;
  std::vector<Index> inputs_;
  std::vector<bool> written_;
  Index live_size_ = 0;
};

/// Values saved by a forward pass: the full live vector (single assignment
/// makes it a record of every stage's inputs) plus per-stage caches.
struct Trace {
  std::vector<double> live;
  std::vector<std::unique_ptr<StageCache>> caches;

  std::vector<double> gather(const std::vector<Index>& idx) const {
    std::vector<double> v(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) v[i] = live[static_cast<std::size_t>(idx[i])];
    return v;
  }
};

struct ForwardResult {
  double value = 0.0;
  Trace trace;
};

inline ForwardResult forward(const Tape& tape, std::span<const double> inputs) {
  if (static_cast<Index>(inputs.size()) != tape.input_size()) {
    throw ShapeError("forward: expected " + std::to_string(tape.input_size()) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  ForwardResult r;
  r.trace.live.assign(static_cast<std::size_t>(tape.live_size()), 0.0);
  r.trace.caches.resize(tape.stages().size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    r.trace.live[static_cast<std::size_t>(tape.input_indices()[i])] = inputs[i];
  }
  for (std::size_t s = 0; s < tape.stages().size(); ++s) {
    const Stage& stage = *tape.stages()[s];
    const std::vector<double> x = r.trace.gather(stage.inputs());
    std::span<double> y(r.trace.live.data() + stage.outputs().front(),
                        static_cast<std::size_t>(stage.output_size()));
    try {
      r.trace.caches[s] = stage.eval(x, y);
    } catch (const NumericalError& e) {
      throw NumericalError("stage " + std::to_string(s) + " (" + stage.kind() + "): " + e.what());
    }
    for (double v : y) {
      if (!std::isfinite(v)) {
        throw NumericalError("stage " + std::to_string(s) + " (" + stage.kind() +
                             "): non-finite output");
      }
    }
  }
  r.value = r.trace.live[static_cast<std::size_t>(tape.output_index())];
  return r;
}

inline double evaluate(const Tape& tape, std::span<const double> inputs) {
  return forward(tape, inputs).value;
}

namespace detail {

inline std::vector<double> reverse_sweep(const Tape& tape, const Trace& trace) {
  std::vector<double> adj(static_cast<std::size_t>(tape.live_size()), 0.0);
  adj[static_cast<std::size_t>(tape.output_index())] = 1.0;
  std::vector<double> xbar;
  for (std::size_t s = tape.stages().size(); s-- > 0;) {
    const Stage& stage = *tape.stages()[s];
    std::span<const double> ybar(adj.data() + stage.outputs().front(),
                                 static_cast<std::size_t>(stage.output_size()));
    if (std::all_of(ybar.begin(), ybar.end(), [](double v) { return v == 0.0; })) continue;
    const std::vector<double> x = trace.gather(stage.inputs());
    xbar.assign(x.size(), 0.0);
    stage.vjp(x, trace.caches[s].get(), ybar, xbar);
    for (std::size_t i = 0; i < x.size(); ++i) {
      adj[static_cast<std::size_t>(stage.inputs()[i])] += xbar[i];
    }
  }
  return adj;
}

}  // namespace detail

inline Vector gradient(const Tape& tape, std::span<const double> inputs, double* value = nullptr) {
  const ForwardResult fwd = forward(tape, inputs);
  const std::vector<double> adj = detail::reverse_sweep(tape, fwd.trace);
  Vector g(tape.input_size());
  for (Index i = 0; i < tape.input_size(); ++i) {
    g[i] = adj[static_cast<std::size_t>(tape.input_indices()[static_cast<std::size_t>(i)])];
  }
  if (value) *value = fwd.value;
  return g;
}

/// How the backward Hessian sweep stores H.
enum class HessianMode {
  condensed,  ///< dense over the current active set only
  full,       ///< dense over every live variable (reference path)
};

struct SecondOrder {
  double value = 0.0;
  Vector gradient;
  SymmetricMatrix hessian;
};

namespace detail {

/// Dense symmetric accumulator addressed by slots; live variables are mapped
/// to slots while active.
class HessianAccumulator {
 public:
  HessianAccumulator(Index live_size, Index capacity, HessianMode mode)
      : cap_(capacity), h_(static_cast<std::size_t>(capacity * capacity), 0.0),
        slot_of_(static_cast<std::size_t>(live_size), -1),
        pos_of_(static_cast<std::size_t>(capacity), -1) {
    if (mode == HessianMode::full) {
      for (Index v = 0; v < live_size; ++v) assign(v, v);
      pinned_ = true;
    } else {
      for (Index s = capacity; s-- > 0;) free_.push_back(s);
    }
  }

  double& at(Index a, Index b) { return h_[static_cast<std::size_t>(a * cap_ + b)]; }
  double at(Index a, Index b) const { return h_[static_cast<std::size_t>(a * cap_ + b)]; }
  double* row(Index a) { return h_.data() + a * cap_; }

  Index slot(Index live) const { return slot_of_[static_cast<std::size_t>(live)]; }

  Index activate(Index live) {
    Index s = slot(live);
    if (s >= 0) return s;
    if (free_.empty()) throw NumericalError("hessian: active-set capacity exceeded");
    s = free_.back();
    free_.pop_back();
    assign(live, s);
    return s;
  }

  /// Clears the row and column of `live` and releases its slot.
  void retire(Index live) {
    const Index s = slot(live);
    if (s < 0) return;
    double* hrow = row(s);
    for (Index t : active_) {
      if (hrow[t] == 0.0) continue;
      hrow[t] = 0.0;
      at(t, s) = 0.0;
    }
    if (pinned_) return;
    const Index p = pos_of_[static_cast<std::size_t>(s)];
    const Index last = active_.back();
    active_[static_cast<std::size_t>(p)] = last;
    pos_of_[static_cast<std::size_t>(last)] = p;
    active_.pop_back();
    pos_of_[static_cast<std::size_t>(s)] = -1;
    slot_of_[static_cast<std::size_t>(live)] = -1;
    free_.push_back(s);
  }

  const std::vector<Index>& active() const noexcept { return active_; }
  Index position(Index slot) const { return pos_of_[static_cast<std::size_t>(slot)]; }

 private:
  void assign(Index live, Index s) {
    slot_of_[static_cast<std::size_t>(live)] = s;
    pos_of_[static_cast<std::size_t>(s)] = static_cast<Index>(active_.size());
    active_.push_back(s);
  }

  Index cap_;
  std::vector<double> h_;
  std::vector<Index> slot_of_;
  std::vector<Index> pos_of_;
  std::vector<Index> active_;
  std::vector<Index> free_;
  bool pinned_ = false;
};

/// One application of H <- Jᵀ H J + Z for `stage`. Only active rows whose
/// entries against the stage outputs are nonzero take part in the update.
inline void push_stage(HessianAccumulator& acc, const Stage& stage, std::span<const double> x,
                       const StageCache* cache, std::span<const double> ybar,
                       std::vector<double>& scratch) {
  const auto& outs = stage.outputs();
  const auto& ins = stage.inputs();
  const Index n_in = stage.input_size();
  const Index n_out = stage.output_size();

  std::vector<std::pair<Index, Index>> live_out;  // (output position, slot)
  for (Index k = 0; k < n_out; ++k) {
    const Index o = acc.slot(outs[static_cast<std::size_t>(k)]);
    if (o >= 0) live_out.emplace_back(k, o);
  }
  if (live_out.empty() && stage.is_linear()) return;

  std::vector<Index> in_slot(static_cast<std::size_t>(n_in));
  for (Index i = 0; i < n_in; ++i) {
    in_slot[static_cast<std::size_t>(i)] = acc.activate(ins[static_cast<std::size_t>(i)]);
  }

  if (!live_out.empty()) {
    const SparseMatrix jac = stage.jacobian(x, cache);
    const std::vector<Index>& active = acc.active();
    const Index n_act = static_cast<Index>(active.size());

    // Active positions with a nonzero entry against some output.
    std::vector<char> hit(static_cast<std::size_t>(n_act), 0);
    std::vector<std::pair<Index, Index>> used_out;  // outputs with a nonzero row
    for (const auto& [k, o] : live_out) {
      const double* hrow = acc.row(o);
      bool any = false;
      for (Index p = 0; p < n_act; ++p) {
        if (hrow[active[static_cast<std::size_t>(p)]] != 0.0) hit[static_cast<std::size_t>(p)] = 1, any = true;
      }
      if (any) used_out.emplace_back(k, o);
    }
    // Dense Jacobians (e.g. a whole network over a point set) go through GEMM.
    const bool dense = n_in >= 64 && 4 * jac.nonZeros() >= jac.rows() * jac.cols();
    DenseMatrix j_used;
    if (dense) {
      j_used = DenseMatrix::Zero(static_cast<Index>(used_out.size()), n_in);
      for (std::size_t u = 0; u < used_out.size(); ++u) {
        for (SparseMatrix::InnerIterator it(jac, used_out[u].first); it; ++it) {
          j_used(static_cast<Index>(u), it.col()) = it.value();
        }
      }
    }
    std::vector<Index> rows;
    std::vector<Index> row_of(static_cast<std::size_t>(n_act), -1);
    for (Index p = 0; p < n_act; ++p) {
      if (!hit[static_cast<std::size_t>(p)]) continue;
      row_of[static_cast<std::size_t>(p)] = static_cast<Index>(rows.size());
      rows.push_back(p);
    }

    // T = H[rows, O] J.
    const Index n_rows = static_cast<Index>(rows.size());
    scratch.assign(static_cast<std::size_t>(n_rows * n_in), 0.0);
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    if (dense) {
      DenseMatrix h_ro(n_rows, static_cast<Index>(used_out.size()));
      for (Index r = 0; r < n_rows; ++r) {
        const Index s = active[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
        for (std::size_t u = 0; u < used_out.size(); ++u) h_ro(r, static_cast<Index>(u)) = acc.at(s, used_out[u].second);
      }
      Eigen::Map<RowMajor>(scratch.data(), n_rows, n_in).noalias() = h_ro * j_used;
    }
    for (Index r = 0; r < n_rows && !dense; ++r) {
      const Index s = active[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
      double* trow = scratch.data() + r * n_in;
      for (const auto& [k, o] : live_out) {
        const double h = acc.at(s, o);
        if (h == 0.0) continue;
        for (SparseMatrix::InnerIterator it(jac, k); it; ++it) trow[it.col()] += h * it.value();
      }
    }
    auto t_row = [&](Index slot) -> const double* {
      const Index r = row_of[static_cast<std::size_t>(acc.position(slot))];
      return r < 0 ? nullptr : scratch.data() + r * n_in;
    };

    std::vector<char> is_io(static_cast<std::size_t>(n_act), 0);
    for (const auto& [k, o] : live_out) is_io[static_cast<std::size_t>(acc.position(o))] = 1;
    for (Index si : in_slot) is_io[static_cast<std::size_t>(acc.position(si))] = 1;

    // Cross terms between pass-through variables and the stage inputs: rows
    // first, then the mirrored column entries in tiles of pass-through rows.
    std::vector<Index> cross;
    for (Index r = 0; r < n_rows; ++r) {
      if (!is_io[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])]) cross.push_back(r);
    }
    for (Index r : cross) {
      double* hrow = acc.row(active[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])]);
      const double* trow = scratch.data() + r * n_in;
      for (Index i = 0; i < n_in; ++i) {
        if (trow[i] != 0.0) hrow[in_slot[static_cast<std::size_t>(i)]] += trow[i];
      }
    }
    constexpr std::size_t kTile = 16;
    for (std::size_t r0 = 0; r0 < cross.size(); r0 += kTile) {
      const std::size_t r1 = std::min(cross.size(), r0 + kTile);
      for (Index i = 0; i < n_in; ++i) {
        double* hrow = acc.row(in_slot[static_cast<std::size_t>(i)]);
        for (std::size_t q = r0; q < r1; ++q) {
          const double t = scratch[static_cast<std::size_t>(cross[q] * n_in + i)];
          if (t != 0.0) hrow[active[static_cast<std::size_t>(rows[static_cast<std::size_t>(cross[q])])]] += t;
        }
      }
    }

    // Input block: T[I, I] + T[I, I]ᵀ + J_Oᵀ H_OO J_O, lower triangle then mirrored.
    std::vector<double> d(static_cast<std::size_t>(n_in * n_in), 0.0);
    if (dense && !used_out.empty()) {
      DenseMatrix t_o(static_cast<Index>(used_out.size()), n_in);
      for (std::size_t u = 0; u < used_out.size(); ++u) {
        const double* to = t_row(used_out[u].second);
        if (to) {
          t_o.row(static_cast<Index>(u)) = Eigen::Map<const Vector>(to, n_in).transpose();
        } else {
          t_o.row(static_cast<Index>(u)).setZero();
        }
      }
      const DenseMatrix jhj = j_used.transpose() * t_o;
      for (Index i = 0; i < n_in; ++i) {
        for (Index c = 0; c <= i; ++c) d[static_cast<std::size_t>(i * n_in + c)] = jhj(i, c);
      }
    }
    for (const auto& [k, o] : live_out) {
      if (dense) break;
      const double* to = t_row(o);
      if (!to) continue;
      for (SparseMatrix::InnerIterator it(jac, k); it; ++it) {
        double* drow = d.data() + it.col() * n_in;
        const double j = it.value();
        for (Index c = 0; c <= it.col(); ++c) drow[c] += j * to[c];
      }
    }
    std::vector<const double*> t_in(static_cast<std::size_t>(n_in));
    for (Index i = 0; i < n_in; ++i) t_in[static_cast<std::size_t>(i)] = t_row(in_slot[static_cast<std::size_t>(i)]);
    for (Index i = 0; i < n_in; ++i) {
      const double* ti = t_in[static_cast<std::size_t>(i)];
      double* drow = d.data() + i * n_in;
      for (Index c = 0; c <= i; ++c) {
        const double* tc = t_in[static_cast<std::size_t>(c)];
        drow[c] = ((ti ? ti[c] : 0.0) + (tc ? tc[i] : 0.0)) + drow[c];
      }
    }
    for (Index i = 0; i < n_in; ++i) {
      for (Index c = 0; c < i; ++c) d[static_cast<std::size_t>(c * n_in + i)] = d[static_cast<std::size_t>(i * n_in + c)];
    }
    for (Index i = 0; i < n_in; ++i) {
      double* hrow = acc.row(in_slot[static_cast<std::size_t>(i)]);
      const double* drow = d.data() + i * n_in;
      for (Index c = 0; c < n_in; ++c) {
        if (drow[c] != 0.0) hrow[in_slot[static_cast<std::size_t>(c)]] += drow[c];
      }
    }
  }

  if (!stage.is_linear() &&
      std::any_of(ybar.begin(), ybar.end(), [](double v) { return v != 0.0; })) {
    for (const Triplet& z : stage.weighted_hessian(x, cache, ybar)) {
      Index r = z.row();
      Index c = z.col();
      if (r < c) std::swap(r, c);
      const Index sr = in_slot[static_cast<std::size_t>(r)];
      const Index sc = in_slot[static_cast<std::size_t>(c)];
      acc.at(sr, sc) += z.value();
      if (sr != sc) acc.at(sc, sr) = acc.at(sr, sc);
    }
  }

  for (Index o : outs) acc.retire(o);
}

}  // namespace detail

/// Value, gradient and exact Hessian with respect to the tape inputs from
/// one forward pass and one reverse sweep.
inline SecondOrder second_order(const Tape& tape, std::span<const double> inputs,
                                HessianMode mode = HessianMode::condensed) {
  const ForwardResult fwd = forward(tape, inputs);
  const Trace& trace = fwd.trace;

  std::vector<double> adj(static_cast<std::size_t>(tape.live_size()), 0.0);
  adj[static_cast<std::size_t>(tape.output_index())] = 1.0;

  const Index capacity = mode == HessianMode::full ? tape.live_size() : tape.max_active();
  detail::HessianAccumulator acc(tape.live_size(), capacity, mode);
  acc.activate(tape.output_index());

  std::vector<double> xbar;
  std::vector<double> scratch;
  for (std::size_t s = tape.stages().size(); s-- > 0;) {
    const Stage& stage = *tape.stages()[s];
    const std::vector<double> x = trace.gather(stage.inputs());
    std::vector<double> ybar(adj.begin() + stage.outputs().front(),
                             adj.begin() + stage.outputs().front() + stage.output_size());
    if (std::any_of(ybar.begin(), ybar.end(), [](double v) { return v != 0.0; })) {
      xbar.assign(x.size(), 0.0);
      stage.vjp(x, trace.caches[s].get(), ybar, xbar);
      for (std::size_t i = 0; i < x.size(); ++i) {
        adj[static_cast<std::size_t>(stage.inputs()[i])] += xbar[i];
      }
    }
    try {
      detail::push_stage(acc, stage, x, trace.caches[s].get(), ybar, scratch);
    } catch (const NumericalError& e) {
      throw NumericalError("stage " + std::to_string(s) + " (" + stage.kind() + "): " + e.what());
    }
  }

  const Index n = tape.input_size();
  SecondOrder out;
  out.value = fwd.value;
  out.gradient.resize(n);
  DenseMatrix h = DenseMatrix::Zero(n, n);
  for (Index a = 0; a < n; ++a) {
    const Index va = tape.input_indices()[static_cast<std::size_t>(a)];
    out.gradient[a] = adj[static_cast<std::size_t>(va)];
    const Index sa = acc.slot(va);
    if (sa < 0) continue;
    for (Index b = 0; b <= a; ++b) {
      const Index sb = acc.slot(tape.input_indices()[static_cast<std::size_t>(b)]);
      if (sb >= 0) h(a, b) = acc.at(sa, sb);
    }
  }
  out.hessian = SymmetricMatrix::from_lower(h);
  return out;
}

inline SymmetricMatrix hessian(const Tape& tape, std::span<const double> inputs,
                               HessianMode mode = HessianMode::condensed) {
  return second_order(tape, inputs, mode).hessian;
}

}  // namespace hesspcl
