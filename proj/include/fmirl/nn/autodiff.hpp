#pragma once

// Reverse-mode automatic differentiation over batched rank-2 tensors.
//
// A Tape records every operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep. Parameters
// enter the tape as leaves bound to a ParamStore slot; at the end of a sweep
// their gradients are added (not assigned) into that slot.

#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fmirl/core/error.hpp"
#include "fmirl/nn/param_store.hpp"
#include "fmirl/nn/tensor.hpp"

namespace fmirl::nn {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), {}, nullptr); }

  Var param(Parameter& p) {
    Node n;
    n.value = p.value;
    n.needs_grad = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  /// Appends a node whose gradient flows to `parents` via `fn`.
  Var push(Tensor value, std::initializer_list<Var> parents, Backward fn) {
    return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
  }

  Var push(Tensor value, std::span<const Var> parents, Backward fn) {
    Node n;
    n.value = std::move(value);
    for (const Var& p : parents) {
      if (p.tape != this) throw UsageError("autodiff: operands live on different tapes");
      n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient of node `id` (no-op for constants).
  template <class Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every parameter leaf.
  void backward(Var loss) {
    if (loss.tape != this) throw UsageError("backward: loss belongs to another tape");
    const Tensor& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1)
      throw UsageError("backward: loss must be scalar, got " + shape_str(lv));
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id].grad = Tensor::Ones(1, 1);
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, k);
      if (n.param != nullptr) n.param->grad += n.grad;
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline Tensor expand(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  if (t.rows() == rows && t.cols() == cols) return t;
  return t.replicate(rows / t.rows(), cols / t.cols());
}

// Sums a broadcast gradient back down to the operand's shape.
inline Tensor reduce_to(const Tensor& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Tensor r = g;
  if (rows == 1 && r.rows() != 1) r = Tensor(r.colwise().sum());
  if (cols == 1 && r.cols() != 1) r = Tensor(r.rowwise().sum());
  return r;
}

inline std::pair<Eigen::Index, Eigen::Index> broadcast_shape(const Tensor& a, const Tensor& b,
                                                             const char* op) {
  auto dim = [&](Eigen::Index x, Eigen::Index y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ConfigError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
  };
  return {dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
}

template <class F, class DF>
Var unary(Var x, F f, DF df) {
  Tensor out = f(x.value());
  return x.tape->push(std::move(out), {x}, [x, df](Tape& tp, std::size_t self) {
    tp.accumulate(x.id, df(tp.value(x.id), tp.value(self), tp.grad(self)));
  });
}

}  // namespace detail

// ---- elementwise binary ops (with row/column/scalar broadcasting) ----

inline Var add(Var a, Var b) {
  auto [r, c] = detail::broadcast_shape(a.value(), b.value(), "add");
  Tensor out = detail::expand(a.value(), r, c) + detail::expand(b.value(), r, c);
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(a.id)) tp.accumulate(a.id, detail::reduce_to(g, a.rows(), a.cols()));
    if (tp.needs_grad(b.id)) tp.accumulate(b.id, detail::reduce_to(g, b.rows(), b.cols()));
  });
}

inline Var sub(Var a, Var b) {
  auto [r, c] = detail::broadcast_shape(a.value(), b.value(), "sub");
  Tensor out = detail::expand(a.value(), r, c) - detail::expand(b.value(), r, c);
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(a.id)) tp.accumulate(a.id, detail::reduce_to(g, a.rows(), a.cols()));
    if (tp.needs_grad(b.id)) tp.accumulate(b.id, Tensor(-detail::reduce_to(g, b.rows(), b.cols())));
  });
}

inline Var mul(Var a, Var b) {
  auto [r, c] = detail::broadcast_shape(a.value(), b.value(), "mul");
  Tensor out = (detail::expand(a.value(), r, c).array() * detail::expand(b.value(), r, c).array()).matrix();
  return a.tape->push(std::move(out), {a, b}, [a, b, r = r, c = c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(a.id)) {
      Tensor ga = (g.array() * detail::expand(tp.value(b.id), r, c).array()).matrix();
      tp.accumulate(a.id, detail::reduce_to(ga, a.rows(), a.cols()));
    }
    if (tp.needs_grad(b.id)) {
      Tensor gb = (g.array() * detail::expand(tp.value(a.id), r, c).array()).matrix();
      tp.accumulate(b.id, detail::reduce_to(gb, b.rows(), b.cols()));
    }
  });
}

/// Elementwise minimum; ties route the gradient to `a`.
inline Var minimum(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError("minimum: shapes " + shape_str(a.value()) + " and " + shape_str(b.value()));
  Tensor out = a.value().cwiseMin(b.value());
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const auto mask = (tp.value(a.id).array() <= tp.value(b.id).array()).cast<double>();
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(a.id)) tp.accumulate(a.id, Tensor((g.array() * mask).matrix()));
    if (tp.needs_grad(b.id)) tp.accumulate(b.id, Tensor((g.array() * (1.0 - mask)).matrix()));
  });
}

// ---- unary ops ----

inline Var scale(Var x, double s) {
  return detail::unary(
      x, [s](const Tensor& v) { return Tensor(v * s); },
      [s](const Tensor&, const Tensor&, const Tensor& g) { return Tensor(g * s); });
}

inline Var add_scalar(Var x, double s) {
  return detail::unary(
      x, [s](const Tensor& v) { return Tensor(v.array() + s); },
      [](const Tensor&, const Tensor&, const Tensor& g) { return g; });
}

inline Var neg(Var x) { return scale(x, -1.0); }

inline Var square(Var x) {
  return detail::unary(
      x, [](const Tensor& v) { return Tensor(v.array().square()); },
      [](const Tensor& in, const Tensor&, const Tensor& g) { return Tensor(2.0 * g.array() * in.array()); });
}

inline Var exp(Var x) {
  return detail::unary(
      x, [](const Tensor& v) { return Tensor(v.array().exp()); },
      [](const Tensor&, const Tensor& out, const Tensor& g) { return Tensor(g.array() * out.array()); });
}

inline Var log(Var x) {
  return detail::unary(
      x, [](const Tensor& v) { return Tensor(v.array().log()); },
      [](const Tensor& in, const Tensor&, const Tensor& g) { return Tensor(g.array() / in.array()); });
}

inline Tensor softplus_value(const Tensor& v) {
  // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
  return Tensor(v.array().max(0.0) + (-v.array().abs()).exp().log1p());
}

inline Tensor sigmoid_value(const Tensor& v) {
  Tensor out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double z = v.data()[i];
    out.data()[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return out;
}

inline Var softplus(Var x) {
  return detail::unary(
      x, [](const Tensor& v) { return softplus_value(v); },
      [](const Tensor& in, const Tensor&, const Tensor& g) {
        return Tensor(g.array() * sigmoid_value(in).array());
      });
}

inline Var tanh(Var x) {
  return detail::unary(
      x, [](const Tensor& v) { return Tensor(v.array().tanh()); },
      [](const Tensor&, const Tensor& out, const Tensor& g) {
        return Tensor(g.array() * (1.0 - out.array().square()));
      });
}

inline Var relu(Var x) {
  return detail::unary(
      x, [](const Tensor& v) { return Tensor(v.array().max(0.0)); },
      [](const Tensor& in, const Tensor&, const Tensor& g) {
        return Tensor(g.array() * (in.array() > 0.0).cast<double>());
      });
}

inline Tensor silu_value(const Tensor& v) { return Tensor(v.array() / (1.0 + (-v.array()).exp())); }

inline Var silu(Var x) {
  return detail::unary(
      x, [](const Tensor& v) { return silu_value(v); },
      [](const Tensor& in, const Tensor&, const Tensor& g) {
        const Eigen::ArrayXXd s = 1.0 / (1.0 + (-in.array()).exp());
        return Tensor(g.array() * s * (1.0 + in.array() * (1.0 - s)));
      });
}

/// Clamps to [lo, hi]; gradient is zero where the clamp is active.
inline Var clamp(Var x, double lo, double hi) {
  return detail::unary(
      x, [lo, hi](const Tensor& v) { return Tensor(v.array().max(lo).min(hi)); },
      [lo, hi](const Tensor& in, const Tensor&, const Tensor& g) {
        return Tensor(g.array() * ((in.array() >= lo) && (in.array() <= hi)).cast<double>());
      });
}

// ---- reductions ----

inline Var sum(Var x) {
  Tensor out = scalar(x.value().sum());
  return x.tape->push(std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)(0, 0);
    tp.accumulate(x.id, Tensor::Constant(x.rows(), x.cols(), g));
  });
}

inline Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw UsageError("mean: empty tensor");
  Tensor out = scalar(x.value().sum() / n);
  return x.tape->push(std::move(out), {x}, [x, n](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)(0, 0) / n;
    tp.accumulate(x.id, Tensor::Constant(x.rows(), x.cols(), g));
  });
}

/// Per-row sum over features: [B x C] -> [B x 1].
inline Var sum_cols(Var x) {
  Tensor out = x.value().rowwise().sum();
  return x.tape->push(std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    tp.accumulate(x.id, Tensor(tp.grad(self).replicate(1, x.cols())));
  });
}

/// Averages consecutive groups of `group` rows: [B*group x C] -> [B x C].
inline Var group_mean_rows(Var x, Eigen::Index group) {
  if (group <= 0 || x.rows() % group != 0)
    throw ConfigError("group_mean_rows: " + std::to_string(x.rows()) + " rows not divisible by " +
                      std::to_string(group));
  const Eigen::Index b = x.rows() / group;
  Tensor out = Tensor::Zero(b, x.cols());
  const Tensor& v = x.value();
  for (Eigen::Index i = 0; i < b; ++i) out.row(i) = v.middleRows(i * group, group).colwise().mean();
  return x.tape->push(std::move(out), {x}, [x, group, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor gx(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < b; ++i)
      gx.middleRows(i * group, group) = g.row(i).replicate(group, 1) / static_cast<double>(group);
    tp.accumulate(x.id, gx);
  });
}

// ---- structural ops ----

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ConfigError("concat_cols: row mismatch " + shape_str(p.value()));
    cols += p.cols();
  }
  Tensor out(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return parts.front().tape->push(std::move(out), std::span<const Var>(parts),
                                  [parts](Tape& tp, std::size_t self) {
                                    const Tensor& g = tp.grad(self);
                                    Eigen::Index o = 0;
                                    for (const Var& p : parts) {
                                      if (tp.needs_grad(p.id)) tp.accumulate(p.id, Tensor(g.middleCols(o, p.cols())));
                                      o += p.cols();
                                    }
                                  });
}

/// Contiguous row block [start, start + count).
inline Var slice_rows(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ConfigError("slice_rows: range out of bounds");
  Tensor out = x.value().middleRows(start, count);
  return x.tape->push(std::move(out), {x}, [x, start, count](Tape& tp, std::size_t self) {
    Tensor g = Tensor::Zero(x.rows(), x.cols());
    g.middleRows(start, count) = tp.grad(self);
    tp.accumulate(x.id, g);
  });
}

/// Row lookup: out[i] = table[index[i]] (embedding).
inline Var gather_rows(Var table, std::vector<int> index) {
  const Tensor& t = table.value();
  Tensor out(static_cast<Eigen::Index>(index.size()), t.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= t.rows()) throw ConfigError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = t.row(index[i]);
  }
  return table.tape->push(std::move(out), {table}, [table, index = std::move(index)](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor gt = Tensor::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < index.size(); ++i) gt.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(table.id, gt);
  });
}

/// x W + b with b broadcast over rows.
inline Var affine(Var x, Var w, Var b) {
  if (x.cols() != w.rows())
    throw ConfigError("affine: input " + shape_str(x.value()) + " vs weight " + shape_str(w.value()));
  Tensor out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return x.tape->push(std::move(out), {x, w, b}, [x, w, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(x.id)) tp.accumulate(x.id, Tensor(g * tp.value(w.id).transpose()));
    if (tp.needs_grad(w.id)) tp.accumulate(w.id, Tensor(tp.value(x.id).transpose() * g));
    if (tp.needs_grad(b.id)) tp.accumulate(b.id, Tensor(g.colwise().sum()));
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return neg(a); }

}  // namespace fmirl::nn
