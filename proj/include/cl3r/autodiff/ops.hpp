#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "cl3r/autodiff/tensor.hpp"

// Differentiable operations. Every op validates shapes, computes its value eagerly and records a
// backward rule on the owning graph. Tensors are row-major; `axis` accepts negative values.

namespace cl3r::ad {

namespace detail {

template <typename S>
using ArrayMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

inline Index normalize_axis(Index axis, std::size_t rank, const char* op) {
  const Index r = static_cast<Index>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw InvalidArgument(std::string(op) + ": axis out of range");
  return axis;
}

// A tensor viewed as [outer, len, inner] around one axis.
struct AxisView {
  Index outer = 1, len = 1, inner = 1;
  Index at(Index o, Index l, Index i) const { return (o * len + l) * inner + i; }
};

inline AxisView axis_view(const Shape& shape, Index axis) {
  AxisView v;
  for (Index d = 0; d < axis; ++d) v.outer *= shape[static_cast<std::size_t>(d)];
  v.len = shape[static_cast<std::size_t>(axis)];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < shape.size(); ++d) v.inner *= shape[d];
  return v;
}

inline Shape reduced_shape(const Shape& shape, Index axis, bool keepdims) {
  Shape out = shape;
  if (keepdims) out[static_cast<std::size_t>(axis)] = 1;
  else out.erase(out.begin() + axis);
  return out;
}

template <typename S>
void same_graph(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (&a.graph() != &b.graph()) throw InvalidArgument(std::string(op) + ": operands belong to different graphs");
}

enum class Broadcast { same, scalar, row, col };

inline Broadcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::same;
  if (numel(b) == 1) return Broadcast::scalar;
  if (!a.empty()) {
    const Index cols = a.back();
    if ((b.size() == 1 && b[0] == cols) || (b.size() == 2 && b[0] == 1 && b[1] == cols)) return Broadcast::row;
    Shape col_shape = a;
    col_shape.back() = 1;
    if (b == col_shape) return Broadcast::col;
  }
  throw InvalidArgument(std::string(op) + ": cannot broadcast " + to_string(b) + " onto " + to_string(a));
}

template <typename S>
Vec<S> expand(const Vec<S>& b, Broadcast kind, Index rows, Index cols) {
  switch (kind) {
    case Broadcast::same: return b;
    case Broadcast::scalar: return Vec<S>::Constant(rows * cols, b[0]);
    case Broadcast::row: {
      Vec<S> out(rows * cols);
      ArrayMap<S>(out.data(), rows, cols).rowwise() = b.transpose();
      return out;
    }
    case Broadcast::col: {
      Vec<S> out(rows * cols);
      ArrayMap<S>(out.data(), rows, cols).colwise() = b;
      return out;
    }
  }
  return b;
}

template <typename S>
void accumulate_reduced(Vec<S>& dst, const Vec<S>& full, Broadcast kind, Index rows, Index cols) {
  switch (kind) {
    case Broadcast::same: dst += full; break;
    case Broadcast::scalar: dst[0] += full.sum(); break;
    case Broadcast::row: dst += ConstArrayMap<S>(full.data(), rows, cols).colwise().sum().transpose(); break;
    case Broadcast::col: dst += ConstArrayMap<S>(full.data(), rows, cols).rowwise().sum(); break;
  }
}

template <typename S, typename Forward, typename GradA, typename GradB>
Tensor<S> binary(const char* op, const Tensor<S>& a, const Tensor<S>& b, Forward f, GradA ga, GradB gb) {
  same_graph(a, b, op);
  const Broadcast kind = broadcast_kind(a.shape(), b.shape(), op);
  const Index cols = a.rank() == 0 ? 1 : a.shape().back();
  const Index rows = cols == 0 ? 0 : a.size() / cols;
  Vec<S> bx = expand(b.value(), kind, rows, cols);
  Vec<S> out = f(a.value(), bx);
  auto* an = a.node();
  auto* bn = b.node();
  const bool rg = an->requires_grad || bn->requires_grad;
  return a.graph().record(op, a.shape(), std::move(out), rg,
                          [an, bn, bx = std::move(bx), kind, rows, cols, ga, gb](const Vec<S>& g) {
                            if (an->requires_grad) an->grad_buffer() += ga(g, an->value, bx);
                            if (bn->requires_grad) accumulate_reduced(bn->grad_buffer(), Vec<S>(gb(g, an->value, bx)), kind, rows, cols);
                          });
}

template <typename S, typename Forward, typename Derivative>
Tensor<S> unary(const char* op, const Tensor<S>& a, Forward f, Derivative df) {
  Vec<S> out = f(a.value());
  auto* an = a.node();
  Vec<S> y = out;
  return a.graph().record(op, a.shape(), std::move(out), an->requires_grad,
                          [an, y = std::move(y), df](const Vec<S>& g) { an->grad_buffer() += g * df(an->value, y); });
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// Elementwise arithmetic. The right operand may broadcast: same shape, scalar, a row over the
// last axis ([C] or [1, C]) or a column (same shape with last extent 1).

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.size() < b.size()) return add(b, a);
  return detail::binary<S>(
      "add", a, b, [](const Vec<S>& x, const Vec<S>& y) -> Vec<S> { return x + y; },
      [](const Vec<S>& g, const Vec<S>&, const Vec<S>&) -> Vec<S> { return g; },
      [](const Vec<S>& g, const Vec<S>&, const Vec<S>&) -> Vec<S> { return g; });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary<S>(
      "sub", a, b, [](const Vec<S>& x, const Vec<S>& y) -> Vec<S> { return x - y; },
      [](const Vec<S>& g, const Vec<S>&, const Vec<S>&) -> Vec<S> { return g; },
      [](const Vec<S>& g, const Vec<S>&, const Vec<S>&) -> Vec<S> { return -g; });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.size() < b.size()) return mul(b, a);
  return detail::binary<S>(
      "mul", a, b, [](const Vec<S>& x, const Vec<S>& y) -> Vec<S> { return x * y; },
      [](const Vec<S>& g, const Vec<S>&, const Vec<S>& y) -> Vec<S> { return g * y; },
      [](const Vec<S>& g, const Vec<S>& x, const Vec<S>&) -> Vec<S> { return g * x; });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary<S>(
      "div", a, b, [](const Vec<S>& x, const Vec<S>& y) -> Vec<S> { return x / y; },
      [](const Vec<S>& g, const Vec<S>&, const Vec<S>& y) -> Vec<S> { return g / y; },
      [](const Vec<S>& g, const Vec<S>& x, const Vec<S>& y) -> Vec<S> { return -g * x / (y * y); });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  return detail::unary<S>(
      "scale", a, [factor](const Vec<S>& x) -> Vec<S> { return x * factor; },
      [factor](const Vec<S>& x, const Vec<S>&) -> Vec<S> { return Vec<S>::Constant(x.size(), factor); });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S offset) {
  return detail::unary<S>(
      "add_scalar", a, [offset](const Vec<S>& x) -> Vec<S> { return x + offset; },
      [](const Vec<S>& x, const Vec<S>&) -> Vec<S> { return Vec<S>::Ones(x.size()); });
}

template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S> Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) { return div(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, S s) { return scale(a, s); }
template <typename S> Tensor<S> operator*(S s, const Tensor<S>& a) { return scale(a, s); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a) { return scale(a, S(-1)); }

// ---------------------------------------------------------------------------------------------
// Pointwise nonlinearities.

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  return detail::unary<S>(
      "exp", a, [](const Vec<S>& x) -> Vec<S> { return x.exp(); },
      [](const Vec<S>&, const Vec<S>& y) -> Vec<S> { return y; });
}

// Natural log with the argument floored at 1e-12; below the floor the gradient is zero.
template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  static constexpr S floor = S(1e-12);
  return detail::unary<S>(
      "log", a, [](const Vec<S>& x) -> Vec<S> { return x.max(floor).log(); },
      [](const Vec<S>& x, const Vec<S>&) -> Vec<S> { return (x > floor).select(x.inverse(), Vec<S>::Zero(x.size())); });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& a) {
  return detail::unary<S>(
      "sqrt", a, [](const Vec<S>& x) -> Vec<S> { return x.sqrt(); },
      [](const Vec<S>&, const Vec<S>& y) -> Vec<S> { return S(0.5) / y; });
}

// Exact (erf) GELU.
template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
  static constexpr S inv_sqrt2 = S(0.70710678118654752440);
  static constexpr S inv_sqrt2pi = S(0.39894228040143267794);
  return detail::unary<S>(
      "gelu", a,
      [](const Vec<S>& x) -> Vec<S> { return S(0.5) * x * (S(1) + (x * inv_sqrt2).unaryExpr([](S v) { return std::erf(v); })); },
      [](const Vec<S>& x, const Vec<S>&) -> Vec<S> {
        const Vec<S> cdf = S(0.5) * (S(1) + (x * inv_sqrt2).unaryExpr([](S v) { return std::erf(v); }));
        const Vec<S> pdf = inv_sqrt2pi * (S(-0.5) * x * x).exp();
        return cdf + x * pdf;
      });
}

// ---------------------------------------------------------------------------------------------
// Linear algebra and layout.

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::same_graph(a, b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw InvalidArgument("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Vec<S> out(m * n);
  detail::MatMap<S>(out.data(), m, n).noalias() =
      detail::ConstMatMap<S>(a.value().data(), m, k) * detail::ConstMatMap<S>(b.value().data(), k, n);
  auto* an = a.node();
  auto* bn = b.node();
  return a.graph().record("matmul", {m, n}, std::move(out), an->requires_grad || bn->requires_grad,
                          [an, bn, m, k, n](const Vec<S>& g) {
                            detail::ConstMatMap<S> gm(g.data(), m, n);
                            if (an->requires_grad) {
                              detail::MatMap<S>(an->grad_buffer().data(), m, k).noalias() +=
                                  gm * detail::ConstMatMap<S>(bn->value.data(), k, n).transpose();
                            }
                            if (bn->requires_grad) {
                              detail::MatMap<S>(bn->grad_buffer().data(), k, n).noalias() +=
                                  detail::ConstMatMap<S>(an->value.data(), m, k).transpose() * gm;
                            }
                          });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2) throw InvalidArgument("transpose: expected rank 2, got " + to_string(a.shape()));
  const Index m = a.dim(0), n = a.dim(1);
  Vec<S> out(m * n);
  detail::MatMap<S>(out.data(), n, m) = detail::ConstMatMap<S>(a.value().data(), m, n).transpose();
  auto* an = a.node();
  return a.graph().record("transpose", {n, m}, std::move(out), an->requires_grad, [an, m, n](const Vec<S>& g) {
    detail::MatMap<S>(an->grad_buffer().data(), m, n) += detail::ConstMatMap<S>(g.data(), n, m).transpose();
  });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, const Shape& shape) {
  if (numel(shape) != a.size()) {
    throw InvalidArgument("reshape: cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  auto* an = a.node();
  return a.graph().record("reshape", shape, a.value(), an->requires_grad,
                          [an](const Vec<S>& g) { an->grad_buffer() += g; });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, Index axis) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  const Shape& first = parts.front().shape();
  axis = detail::normalize_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    detail::same_graph(parts.front(), p, "concat");
    Shape probe = p.shape();
    if (probe.size() != first.size()) throw InvalidArgument("concat: rank mismatch " + to_string(first) + " vs " + to_string(probe));
    for (std::size_t d = 0; d < probe.size(); ++d) {
      if (static_cast<Index>(d) != axis && probe[d] != first[d]) {
        throw InvalidArgument("concat: shape mismatch " + to_string(first) + " vs " + to_string(probe));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += probe[static_cast<std::size_t>(axis)];
  }
  const detail::AxisView ov = detail::axis_view(out_shape, axis);
  Vec<S> out(numel(out_shape));
  std::vector<Node<S>*> nodes;
  std::vector<Index> lens;
  bool rg = false;
  Index offset = 0;
  for (const auto& p : parts) {
    const Index len = p.dim(axis);
    for (Index o = 0; o < ov.outer; ++o) {
      out.segment(ov.at(o, offset, 0), len * ov.inner) = p.value().segment(o * len * ov.inner, len * ov.inner);
    }
    offset += len;
    nodes.push_back(p.node());
    lens.push_back(len);
    rg = rg || p.requires_grad();
  }
  return parts.front().graph().record("concat", out_shape, std::move(out), rg, [nodes, lens, ov](const Vec<S>& g) {
    Index off = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const Index len = lens[i];
      if (nodes[i]->requires_grad) {
        Vec<S>& gb = nodes[i]->grad_buffer();
        for (Index o = 0; o < ov.outer; ++o) gb.segment(o * len * ov.inner, len * ov.inner) += g.segment(ov.at(o, off, 0), len * ov.inner);
      }
      off += len;
    }
  });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& a, Index axis, Index start, Index length) {
  axis = detail::normalize_axis(axis, a.shape().size(), "slice");
  const detail::AxisView iv = detail::axis_view(a.shape(), axis);
  if (start < 0 || length < 1 || start + length > iv.len) {
    throw InvalidArgument("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                          ") outside axis of " + to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  Vec<S> out(numel(out_shape));
  for (Index o = 0; o < iv.outer; ++o) out.segment(o * length * iv.inner, length * iv.inner) = a.value().segment(iv.at(o, start, 0), length * iv.inner);
  auto* an = a.node();
  return a.graph().record("slice", out_shape, std::move(out), an->requires_grad, [an, iv, start, length](const Vec<S>& g) {
    Vec<S>& ga = an->grad_buffer();
    for (Index o = 0; o < iv.outer; ++o) ga.segment(iv.at(o, start, 0), length * iv.inner) += g.segment(o * length * iv.inner, length * iv.inner);
  });
}

// Selects entries along axis 0 in the given order (repeats allowed).
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& a, const std::vector<Index>& rows) {
  if (a.rank() < 1) throw InvalidArgument("gather_rows: scalar input");
  const Index n = a.dim(0);
  const Index chunk = n == 0 ? 0 : a.size() / n;
  for (Index r : rows) {
    if (r < 0 || r >= n) throw InvalidArgument("gather_rows: row " + std::to_string(r) + " outside " + to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[0] = static_cast<Index>(rows.size());
  Vec<S> out(numel(out_shape));
  for (std::size_t i = 0; i < rows.size(); ++i) out.segment(static_cast<Index>(i) * chunk, chunk) = a.value().segment(rows[i] * chunk, chunk);
  auto* an = a.node();
  return a.graph().record("gather_rows", out_shape, std::move(out), an->requires_grad, [an, rows, chunk](const Vec<S>& g) {
    Vec<S>& ga = an->grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i) ga.segment(rows[i] * chunk, chunk) += g.segment(static_cast<Index>(i) * chunk, chunk);
  });
}

template <typename S>
Tensor<S> diagonal(const Tensor<S>& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw InvalidArgument("diagonal: expected square matrix, got " + to_string(a.shape()));
  const Index n = a.dim(0);
  Vec<S> out(n);
  for (Index i = 0; i < n; ++i) out[i] = a.value()[i * n + i];
  auto* an = a.node();
  return a.graph().record("diagonal", {n}, std::move(out), an->requires_grad, [an, n](const Vec<S>& g) {
    Vec<S>& ga = an->grad_buffer();
    for (Index i = 0; i < n; ++i) ga[i * n + i] += g[i];
  });
}

// ---------------------------------------------------------------------------------------------
// Reductions along one axis. Max/min send the gradient to the first extremal entry.

enum class Reduction { sum, mean, max, min };

template <typename S>
Tensor<S> reduce(const Tensor<S>& a, Index axis, Reduction kind, bool keepdims = false) {
  axis = detail::normalize_axis(axis, a.shape().size(), "reduce");
  const detail::AxisView v = detail::axis_view(a.shape(), axis);
  Vec<S> out(v.outer * v.inner);
  std::vector<Index> arg;
  if (kind == Reduction::max || kind == Reduction::min) arg.resize(static_cast<std::size_t>(out.size()));
  const S* x = a.value().data();
  for (Index o = 0; o < v.outer; ++o) {
    for (Index i = 0; i < v.inner; ++i) {
      const Index slot = o * v.inner + i;
      if (kind == Reduction::sum || kind == Reduction::mean) {
        S acc = 0;
        for (Index l = 0; l < v.len; ++l) acc += x[v.at(o, l, i)];
        out[slot] = kind == Reduction::mean ? acc / S(v.len) : acc;
      } else {
        Index best = 0;
        S best_v = x[v.at(o, 0, i)];
        for (Index l = 1; l < v.len; ++l) {
          const S val = x[v.at(o, l, i)];
          if (kind == Reduction::max ? val > best_v : val < best_v) {
            best_v = val;
            best = l;
          }
        }
        out[slot] = best_v;
        arg[static_cast<std::size_t>(slot)] = best;
      }
    }
  }
  auto* an = a.node();
  static constexpr const char* names[] = {"reduce_sum", "reduce_mean", "reduce_max", "reduce_min"};
  return a.graph().record(names[static_cast<int>(kind)], detail::reduced_shape(a.shape(), axis, keepdims), std::move(out),
                          an->requires_grad, [an, v, kind, arg = std::move(arg)](const Vec<S>& g) {
                            Vec<S>& ga = an->grad_buffer();
                            for (Index o = 0; o < v.outer; ++o) {
                              for (Index i = 0; i < v.inner; ++i) {
                                const Index slot = o * v.inner + i;
                                if (kind == Reduction::sum || kind == Reduction::mean) {
                                  const S gs = kind == Reduction::mean ? g[slot] / S(v.len) : g[slot];
                                  for (Index l = 0; l < v.len; ++l) ga[v.at(o, l, i)] += gs;
                                } else {
                                  ga[v.at(o, arg[static_cast<std::size_t>(slot)], i)] += g[slot];
                                }
                              }
                            }
                          });
}

template <typename S> Tensor<S> reduce_sum(const Tensor<S>& a, Index axis, bool keepdims = false) { return reduce(a, axis, Reduction::sum, keepdims); }
template <typename S> Tensor<S> reduce_mean(const Tensor<S>& a, Index axis, bool keepdims = false) { return reduce(a, axis, Reduction::mean, keepdims); }
template <typename S> Tensor<S> reduce_max(const Tensor<S>& a, Index axis, bool keepdims = false) { return reduce(a, axis, Reduction::max, keepdims); }
template <typename S> Tensor<S> reduce_min(const Tensor<S>& a, Index axis, bool keepdims = false) { return reduce(a, axis, Reduction::min, keepdims); }

// Sum / mean of all entries as a scalar.
template <typename S> Tensor<S> sum(const Tensor<S>& a) { return reduce_sum(reshape(a, {a.size()}), 0); }
template <typename S> Tensor<S> mean(const Tensor<S>& a) { return reduce_mean(reshape(a, {a.size()}), 0); }

// ---------------------------------------------------------------------------------------------
// Normalizations.

// Max-subtracted softmax.
template <typename S>
Tensor<S> softmax(const Tensor<S>& a, Index axis) {
  axis = detail::normalize_axis(axis, a.shape().size(), "softmax");
  const detail::AxisView v = detail::axis_view(a.shape(), axis);
  Vec<S> out(a.size());
  const S* x = a.value().data();
  for (Index o = 0; o < v.outer; ++o) {
    for (Index i = 0; i < v.inner; ++i) {
      S m = -std::numeric_limits<S>::infinity();
      for (Index l = 0; l < v.len; ++l) m = std::max(m, x[v.at(o, l, i)]);
      S z = 0;
      for (Index l = 0; l < v.len; ++l) z += (out[v.at(o, l, i)] = std::exp(x[v.at(o, l, i)] - m));
      for (Index l = 0; l < v.len; ++l) out[v.at(o, l, i)] /= z;
    }
  }
  auto* an = a.node();
  Vec<S> y = out;
  return a.graph().record("softmax", a.shape(), std::move(out), an->requires_grad, [an, v, y = std::move(y)](const Vec<S>& g) {
    Vec<S>& ga = an->grad_buffer();
    for (Index o = 0; o < v.outer; ++o) {
      for (Index i = 0; i < v.inner; ++i) {
        S dot = 0;
        for (Index l = 0; l < v.len; ++l) dot += g[v.at(o, l, i)] * y[v.at(o, l, i)];
        for (Index l = 0; l < v.len; ++l) ga[v.at(o, l, i)] += y[v.at(o, l, i)] * (g[v.at(o, l, i)] - dot);
      }
    }
  });
}

// Stable log-sum-exp; -inf entries contribute nothing.
template <typename S>
Tensor<S> logsumexp(const Tensor<S>& a, Index axis, bool keepdims = false) {
  axis = detail::normalize_axis(axis, a.shape().size(), "logsumexp");
  const detail::AxisView v = detail::axis_view(a.shape(), axis);
  Vec<S> out(v.outer * v.inner);
  Vec<S> weights(a.size());
  const S* x = a.value().data();
  for (Index o = 0; o < v.outer; ++o) {
    for (Index i = 0; i < v.inner; ++i) {
      S m = -std::numeric_limits<S>::infinity();
      for (Index l = 0; l < v.len; ++l) m = std::max(m, x[v.at(o, l, i)]);
      if (!std::isfinite(m)) throw InvalidArgument("logsumexp: slice has no finite entry");
      S z = 0;
      for (Index l = 0; l < v.len; ++l) z += (weights[v.at(o, l, i)] = std::exp(x[v.at(o, l, i)] - m));
      for (Index l = 0; l < v.len; ++l) weights[v.at(o, l, i)] /= z;
      out[o * v.inner + i] = m + std::log(z);
    }
  }
  auto* an = a.node();
  return a.graph().record("logsumexp", detail::reduced_shape(a.shape(), axis, keepdims), std::move(out), an->requires_grad,
                          [an, v, weights = std::move(weights)](const Vec<S>& g) {
                            Vec<S>& ga = an->grad_buffer();
                            for (Index o = 0; o < v.outer; ++o)
                              for (Index i = 0; i < v.inner; ++i)
                                for (Index l = 0; l < v.len; ++l) ga[v.at(o, l, i)] += g[o * v.inner + i] * weights[v.at(o, l, i)];
                          });
}

constexpr double kLayerNormEps = 1e-5;

// (x - mean) / sqrt(var + eps) along `axis`, biased variance, no affine part.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& a, Index axis = -1, S eps = S(kLayerNormEps)) {
  axis = detail::normalize_axis(axis, a.shape().size(), "layer_norm");
  const detail::AxisView v = detail::axis_view(a.shape(), axis);
  Vec<S> out(a.size());
  Vec<S> inv_std(v.outer * v.inner);
  const S* x = a.value().data();
  for (Index o = 0; o < v.outer; ++o) {
    for (Index i = 0; i < v.inner; ++i) {
      S mu = 0;
      for (Index l = 0; l < v.len; ++l) mu += x[v.at(o, l, i)];
      mu /= S(v.len);
      S var = 0;
      for (Index l = 0; l < v.len; ++l) {
        const S d = x[v.at(o, l, i)] - mu;
        var += d * d;
      }
      var /= S(v.len);
      const S is = S(1) / std::sqrt(var + eps);
      inv_std[o * v.inner + i] = is;
      for (Index l = 0; l < v.len; ++l) out[v.at(o, l, i)] = (x[v.at(o, l, i)] - mu) * is;
    }
  }
  auto* an = a.node();
  Vec<S> y = out;
  return a.graph().record("layer_norm", a.shape(), std::move(out), an->requires_grad,
                          [an, v, y = std::move(y), inv_std = std::move(inv_std)](const Vec<S>& g) {
                            Vec<S>& ga = an->grad_buffer();
                            for (Index o = 0; o < v.outer; ++o) {
                              for (Index i = 0; i < v.inner; ++i) {
                                S mg = 0, mgy = 0;
                                for (Index l = 0; l < v.len; ++l) {
                                  mg += g[v.at(o, l, i)];
                                  mgy += g[v.at(o, l, i)] * y[v.at(o, l, i)];
                                }
                                mg /= S(v.len);
                                mgy /= S(v.len);
                                const S is = inv_std[o * v.inner + i];
                                for (Index l = 0; l < v.len; ++l) {
                                  const Index at = v.at(o, l, i);
                                  ga[at] += is * (g[at] - mg - y[at] * mgy);
                                }
                              }
                            }
                          });
}

// Rows scaled to unit l2 norm over the last axis.
template <typename S>
Tensor<S> normalize_rows(const Tensor<S>& a, S eps = S(1e-12)) {
  const Tensor<S> sq = reduce_sum(mul(a, a), -1, true);
  return div(a, sqrt(add_scalar(sq, eps)));
}

// ---------------------------------------------------------------------------------------------
// Point-set geometry.

// Squared Euclidean distances between all point pairs: [B, P, D] x [B, Q, D] -> [B, P, Q]
// (rank-2 inputs give [P, Q]).
template <typename S>
Tensor<S> pairwise_sq_dist(const Tensor<S>& a, const Tensor<S>& b) {
  detail::same_graph(a, b, "pairwise_sq_dist");
  const bool batched = a.rank() == 3;
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3) || a.dim(-1) != b.dim(-1) ||
      (batched && a.dim(0) != b.dim(0))) {
    throw InvalidArgument("pairwise_sq_dist: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index nb = batched ? a.dim(0) : 1;
  const Index p = a.dim(-2), q = b.dim(-2), d = a.dim(-1);
  Vec<S> out(nb * p * q);
  const S* x = a.value().data();
  const S* y = b.value().data();
  for (Index bi = 0; bi < nb; ++bi)
    for (Index i = 0; i < p; ++i)
      for (Index j = 0; j < q; ++j) {
        S acc = 0;
        for (Index c = 0; c < d; ++c) {
          const S diff = x[(bi * p + i) * d + c] - y[(bi * q + j) * d + c];
          acc += diff * diff;
        }
        out[(bi * p + i) * q + j] = acc;
      }
  auto* an = a.node();
  auto* bn = b.node();
  Shape shape = batched ? Shape{nb, p, q} : Shape{p, q};
  return a.graph().record("pairwise_sq_dist", shape, std::move(out), an->requires_grad || bn->requires_grad,
                          [an, bn, nb, p, q, d](const Vec<S>& g) {
                            const S* x = an->value.data();
                            const S* y = bn->value.data();
                            S* gx = an->requires_grad ? an->grad_buffer().data() : nullptr;
                            S* gy = bn->requires_grad ? bn->grad_buffer().data() : nullptr;
                            for (Index bi = 0; bi < nb; ++bi)
                              for (Index i = 0; i < p; ++i)
                                for (Index j = 0; j < q; ++j) {
                                  const S gij = g[(bi * p + i) * q + j];
                                  if (gij == S(0)) continue;
                                  for (Index c = 0; c < d; ++c) {
                                    const S diff = S(2) * gij * (x[(bi * p + i) * d + c] - y[(bi * q + j) * d + c]);
                                    if (gx) gx[(bi * p + i) * d + c] += diff;
                                    if (gy) gy[(bi * q + j) * d + c] -= diff;
                                  }
                                }
                          });
}

}  // namespace cl3r::ad
