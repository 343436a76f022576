#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bayescal/diff/array.hpp"
#include "bayescal/diff/var.hpp"

// Primitive operations. Each backward is expressed with these same operations,
// so gradients stay on the graph and can be differentiated again.

namespace bayescal::diff {

inline constexpr double kGuardEps = 1e-12;

/// Guarded mode adds kGuardEps to denominators / log arguments; unguarded
/// mode throws on a zero denominator or a non-positive log argument.
enum class Guard { none, eps };

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw StructuralError(std::string(op) + ": cannot broadcast shapes " + a.str() + " and " +
                          b.str());
  };
  return Shape{dim(a.rows, b.rows), dim(a.cols, b.cols)};
}

template <typename F>
Array elementwise(const Array& a, const Array& b, Shape out_shape, F f) {
  Array out(out_shape);
  const std::size_t ar = a.rows() == 1 ? 0 : 1, ac = a.cols() == 1 ? 0 : 1;
  const std::size_t br = b.rows() == 1 ? 0 : 1, bc = b.cols() == 1 ? 0 : 1;
  for (std::size_t r = 0; r < out_shape.rows; ++r) {
    for (std::size_t c = 0; c < out_shape.cols; ++c) {
      out(r, c) = f(a(r * ar, c * ac), b(r * br, c * bc));
    }
  }
  return out;
}

template <typename F>
Array map(const Array& a, F f) {
  Array out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

inline double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace detail

Var sum_to(const Var& a, Shape shape);
Var broadcast_to(const Var& a, Shape shape);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b, Guard guard = Guard::none);
Var scale(const Var& a, double k);
Var exp(const Var& a);
Var log_softmax_rows(const Var& a);

/// Sums `a` down to `shape` (every target dim must be 1 or equal to a's dim).
inline Var sum_to(const Var& a, Shape shape) {
  const Shape from = a.shape();
  if ((shape.rows != 1 && shape.rows != from.rows) || (shape.cols != 1 && shape.cols != from.cols)) {
    throw StructuralError("sum_to: cannot reduce " + from.str() + " to " + shape.str());
  }
  if (from == shape) return a;
  return make_node(
      "sum_to", {a},
      [shape](std::span<const Array* const> in) {
        const Array& x = *in[0];
        Array out(shape);
        const std::size_t rr = shape.rows == 1 ? 0 : 1, cc = shape.cols == 1 ? 0 : 1;
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = 0; c < x.cols(); ++c) out(r * rr, c * cc) += x(r, c);
        }
        return out;
      },
      [from](std::span<const Var>, const Var&, const Var& g) {
        return std::vector<Var>{broadcast_to(g, from)};
      });
}

inline Var broadcast_to(const Var& a, Shape shape) {
  const Shape from = a.shape();
  if ((from.rows != 1 && from.rows != shape.rows) || (from.cols != 1 && from.cols != shape.cols)) {
    throw StructuralError("broadcast_to: cannot broadcast " + from.str() + " to " + shape.str());
  }
  if (from == shape) return a;
  return make_node(
      "broadcast_to", {a},
      [shape](std::span<const Array* const> in) {
        return detail::elementwise(*in[0], Array(Shape{1, 1}), shape, [](double x, double) { return x; });
      },
      [from](std::span<const Var>, const Var&, const Var& g) {
        return std::vector<Var>{sum_to(g, from)};
      });
}

inline Var add(const Var& a, const Var& b) {
  const Shape s = detail::broadcast_shape(a.shape(), b.shape(), "add");
  const Shape sa = a.shape(), sb = b.shape();
  return make_node(
      "add", {a, b},
      [s](std::span<const Array* const> in) {
        return detail::elementwise(*in[0], *in[1], s, [](double x, double y) { return x + y; });
      },
      [sa, sb](std::span<const Var>, const Var&, const Var& g) {
        return std::vector<Var>{sum_to(g, sa), sum_to(g, sb)};
      });
}

inline Var sub(const Var& a, const Var& b) {
  const Shape s = detail::broadcast_shape(a.shape(), b.shape(), "sub");
  const Shape sa = a.shape(), sb = b.shape();
  return make_node(
      "sub", {a, b},
      [s](std::span<const Array* const> in) {
        return detail::elementwise(*in[0], *in[1], s, [](double x, double y) { return x - y; });
      },
      [sa, sb](std::span<const Var>, const Var&, const Var& g) {
        return std::vector<Var>{sum_to(g, sa), scale(sum_to(g, sb), -1.0)};
      });
}

inline Var mul(const Var& a, const Var& b) {
  const Shape s = detail::broadcast_shape(a.shape(), b.shape(), "mul");
  const Shape sa = a.shape(), sb = b.shape();
  return make_node(
      "mul", {a, b},
      [s](std::span<const Array* const> in) {
        return detail::elementwise(*in[0], *in[1], s, [](double x, double y) { return x * y; });
      },
      [sa, sb](std::span<const Var> in, const Var&, const Var& g) {
        std::vector<Var> out(2);
        if (in[0].requires_grad()) out[0] = sum_to(mul(g, in[1]), sa);
        if (in[1].requires_grad()) out[1] = sum_to(mul(g, in[0]), sb);
        return out;
      });
}

inline Var div(const Var& a, const Var& b, Guard guard) {
  const Shape s = detail::broadcast_shape(a.shape(), b.shape(), "div");
  const Shape sa = a.shape(), sb = b.shape();
  const double eps = guard == Guard::eps ? kGuardEps : 0.0;
  if (guard == Guard::none) {
    for (double v : b.value().data()) {
      if (v == 0.0) throw NumericError("div: zero denominator in unguarded mode");
    }
  }
  return make_node(
      "div", {a, b},
      [s, eps](std::span<const Array* const> in) {
        return detail::elementwise(*in[0], *in[1], s, [eps](double x, double y) { return x / (y + eps); });
      },
      [sa, sb, guard](std::span<const Var> in, const Var& out, const Var& g) {
        std::vector<Var> grads(2);
        if (in[0].requires_grad()) grads[0] = sum_to(div(g, in[1], guard), sa);
        if (in[1].requires_grad()) grads[1] = scale(sum_to(div(mul(g, out), in[1], guard), sb), -1.0);
        return grads;
      });
}

/// Multiplication by a fixed real.
inline Var scale(const Var& a, double k) {
  return make_node(
      "scale", {a},
      [k](std::span<const Array* const> in) { return detail::map(*in[0], [k](double x) { return k * x; }); },
      [k](std::span<const Var>, const Var&, const Var& g) { return std::vector<Var>{scale(g, k)}; });
}

/// Addition of a fixed real.
inline Var shift(const Var& a, double k) {
  return make_node(
      "shift", {a},
      [k](std::span<const Array* const> in) { return detail::map(*in[0], [k](double x) { return x + k; }); },
      [](std::span<const Var>, const Var&, const Var& g) { return std::vector<Var>{g}; });
}

inline Var transpose(const Var& a) {
  return make_node(
      "transpose", {a},
      [](std::span<const Array* const> in) {
        const Array& x = *in[0];
        Array out(Shape{x.cols(), x.rows()});
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = 0; c < x.cols(); ++c) out(c, r) = x(r, c);
        }
        return out;
      },
      [](std::span<const Var>, const Var&, const Var& g) { return std::vector<Var>{transpose(g)}; });
}

inline Var matmul(const Var& a, const Var& b) {
  if (a.shape().cols != b.shape().rows) {
    throw StructuralError("matmul: inner dimensions differ for shapes " + a.shape().str() + " and " +
                          b.shape().str());
  }
  return make_node(
      "matmul", {a, b},
      [](std::span<const Array* const> in) {
        const Array& x = *in[0];
        const Array& y = *in[1];
        const std::size_t n = x.rows(), k = x.cols(), m = y.cols();
        Array out(Shape{n, m});
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double xv = x(i, p);
            if (xv == 0.0) continue;
            const double* yr = &y.data()[p * m];
            double* orow = &out.data()[i * m];
            for (std::size_t j = 0; j < m; ++j) orow[j] += xv * yr[j];
          }
        }
        return out;
      },
      [](std::span<const Var> in, const Var&, const Var& g) {
        std::vector<Var> out(2);
        if (in[0].requires_grad()) out[0] = matmul(g, transpose(in[1]));
        if (in[1].requires_grad()) out[1] = matmul(transpose(in[0]), g);
        return out;
      });
}

inline Var exp(const Var& a) {
  return make_node(
      "exp", {a},
      [](std::span<const Array* const> in) { return detail::map(*in[0], [](double x) { return std::exp(x); }); },
      [](std::span<const Var>, const Var& out, const Var& g) { return std::vector<Var>{mul(g, out)}; });
}

inline Var log(const Var& a, Guard guard = Guard::none) {
  if (guard == Guard::none) {
    for (double v : a.value().data()) {
      if (v <= 0.0) throw NumericError("log: non-positive argument in unguarded mode");
    }
  }
  const double eps = guard == Guard::eps ? kGuardEps : 0.0;
  return make_node(
      "log", {a},
      [eps](std::span<const Array* const> in) {
        return detail::map(*in[0], [eps](double x) { return std::log(x + eps); });
      },
      [guard](std::span<const Var> in, const Var&, const Var& g) {
        return std::vector<Var>{div(g, in[0], guard)};
      });
}

Var softplus(const Var& a);

/// sigmoid(x) = exp(x - softplus(x)); composed so that it differentiates further.
inline Var sigmoid(const Var& a) { return exp(sub(a, softplus(a))); }

inline Var softplus(const Var& a) {
  return make_node(
      "softplus", {a},
      [](std::span<const Array* const> in) { return detail::map(*in[0], detail::softplus_value); },
      [](std::span<const Var> in, const Var&, const Var& g) { return std::vector<Var>{mul(g, sigmoid(in[0]))}; });
}

inline Var sum(const Var& a) { return sum_to(a, Shape{1, 1}); }

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.shape().size())); }

inline Var reshape(const Var& a, Shape shape) {
  const Shape from = a.shape();
  if (from.size() != shape.size()) {
    throw StructuralError("reshape: " + from.str() + " has a different size than " + shape.str());
  }
  return make_node(
      "reshape", {a},
      [shape](std::span<const Array* const> in) { return Array(shape, in[0]->vec()); },
      [from](std::span<const Var>, const Var&, const Var& g) { return std::vector<Var>{reshape(g, from)}; });
}

/// Row-wise L2 norm: (N x d) -> (N x 1).
inline Var norm_rows(const Var& a) {
  return make_node(
      "norm_rows", {a},
      [](std::span<const Array* const> in) {
        const Array& x = *in[0];
        Array out(Shape{x.rows(), 1});
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double s = 0.0;
          for (std::size_t c = 0; c < x.cols(); ++c) s += x(r, c) * x(r, c);
          out[r] = std::sqrt(s);
        }
        return out;
      },
      [](std::span<const Var> in, const Var& out, const Var& g) {
        return std::vector<Var>{mul(g, div(in[0], out, Guard::eps))};
      });
}

/// L2 norm over all elements.
inline Var norm(const Var& a) { return norm_rows(reshape(a, Shape{1, a.shape().size()})); }

inline Var log_softmax_rows(const Var& a) {
  return make_node(
      "log_softmax", {a},
      [](std::span<const Array* const> in) {
        const Array& x = *in[0];
        Array out(x.shape());
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double mx = x(r, 0);
          for (std::size_t c = 1; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
          double s = 0.0;
          for (std::size_t c = 0; c < x.cols(); ++c) s += std::exp(x(r, c) - mx);
          const double lse = mx + std::log(s);
          for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) - lse;
        }
        return out;
      },
      [](std::span<const Var>, const Var& out, const Var& g) {
        const Shape s = g.shape();
        return std::vector<Var>{sub(g, mul(exp(out), sum_to(g, Shape{s.rows, 1})))};
      });
}

inline Var softmax_rows(const Var& a) { return exp(log_softmax_rows(a)); }

Var scatter_cols(const Var& g, std::vector<std::size_t> index, std::size_t cols);

/// out[i] = a(i, index[i]); (N x n) -> (N x 1).
inline Var gather_cols(const Var& a, std::vector<std::size_t> index) {
  const Shape s = a.shape();
  if (index.size() != s.rows) {
    throw StructuralError("gather_cols: " + std::to_string(index.size()) + " indices for shape " + s.str());
  }
  for (std::size_t i : index) {
    if (i >= s.cols) throw StructuralError("gather_cols: index " + std::to_string(i) + " out of range for " + s.str());
  }
  return make_node(
      "gather", {a},
      [index](std::span<const Array* const> in) {
        const Array& x = *in[0];
        Array out(Shape{x.rows(), 1});
        for (std::size_t r = 0; r < x.rows(); ++r) out[r] = x(r, index[r]);
        return out;
      },
      [index, cols = s.cols](std::span<const Var>, const Var&, const Var& g) {
        return std::vector<Var>{scatter_cols(g, index, cols)};
      });
}

/// Adjoint of gather_cols: (N x 1) -> (N x cols) with g[i] at (i, index[i]).
inline Var scatter_cols(const Var& g, std::vector<std::size_t> index, std::size_t cols) {
  return make_node(
      "scatter", {g},
      [index, cols](std::span<const Array* const> in) {
        const Array& x = *in[0];
        Array out(Shape{x.rows(), cols});
        for (std::size_t r = 0; r < x.rows(); ++r) out(r, index[r]) = x[r];
        return out;
      },
      [index](std::span<const Var>, const Var&, const Var& gg) {
        return std::vector<Var>{gather_cols(gg, index)};
      });
}

enum class Axis { rows, cols };

Var pad(const Var& a, Axis axis, std::size_t begin, std::size_t total);

/// Half-open slice [begin, end) along `axis`.
inline Var slice(const Var& a, Axis axis, std::size_t begin, std::size_t end) {
  const Shape s = a.shape();
  const std::size_t extent = axis == Axis::rows ? s.rows : s.cols;
  if (begin > end || end > extent) {
    throw StructuralError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                          s.str());
  }
  const Shape out_shape = axis == Axis::rows ? Shape{end - begin, s.cols} : Shape{s.rows, end - begin};
  return make_node(
      "slice", {a},
      [axis, begin, out_shape](std::span<const Array* const> in) {
        const Array& x = *in[0];
        Array out(out_shape);
        for (std::size_t r = 0; r < out_shape.rows; ++r) {
          for (std::size_t c = 0; c < out_shape.cols; ++c) {
            out(r, c) = axis == Axis::rows ? x(r + begin, c) : x(r, c + begin);
          }
        }
        return out;
      },
      [axis, begin, extent](std::span<const Var>, const Var&, const Var& g) {
        return std::vector<Var>{pad(g, axis, begin, extent)};
      });
}

/// Adjoint of slice: embeds `a` at offset `begin` of a zero array of extent `total`.
inline Var pad(const Var& a, Axis axis, std::size_t begin, std::size_t total) {
  const Shape s = a.shape();
  const std::size_t len = axis == Axis::rows ? s.rows : s.cols;
  if (begin + len > total) throw StructuralError("pad: block does not fit");
  const Shape out_shape = axis == Axis::rows ? Shape{total, s.cols} : Shape{s.rows, total};
  return make_node(
      "pad", {a},
      [axis, begin, out_shape](std::span<const Array* const> in) {
        const Array& x = *in[0];
        Array out(out_shape);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = 0; c < x.cols(); ++c) {
            if (axis == Axis::rows) {
              out(r + begin, c) = x(r, c);
            } else {
              out(r, c + begin) = x(r, c);
            }
          }
        }
        return out;
      },
      [axis, begin, len](std::span<const Var>, const Var&, const Var& g) {
        return std::vector<Var>{slice(g, axis, begin, begin + len)};
      });
}

inline Var concat(const std::vector<Var>& parts, Axis axis) {
  if (parts.empty()) throw StructuralError("concat of zero arrays");
  const Shape first = parts.front().shape();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if ((axis == Axis::rows && s.cols != first.cols) || (axis == Axis::cols && s.rows != first.rows)) {
      throw StructuralError("concat: incompatible shapes " + first.str() + " and " + s.str());
    }
    offsets.push_back(total);
    total += axis == Axis::rows ? s.rows : s.cols;
  }
  const Shape out_shape = axis == Axis::rows ? Shape{total, first.cols} : Shape{first.rows, total};
  return make_node(
      "concat", parts,
      [axis, offsets, out_shape](std::span<const Array* const> in) {
        Array out(out_shape);
        for (std::size_t k = 0; k < in.size(); ++k) {
          const Array& x = *in[k];
          for (std::size_t r = 0; r < x.rows(); ++r) {
            for (std::size_t c = 0; c < x.cols(); ++c) {
              if (axis == Axis::rows) {
                out(r + offsets[k], c) = x(r, c);
              } else {
                out(r, c + offsets[k]) = x(r, c);
              }
            }
          }
        }
        return out;
      },
      [axis, offsets](std::span<const Var> in, const Var&, const Var& g) {
        std::vector<Var> grads(in.size());
        for (std::size_t k = 0; k < in.size(); ++k) {
          if (!in[k].requires_grad()) continue;
          const Shape s = in[k].shape();
          const std::size_t len = axis == Axis::rows ? s.rows : s.cols;
          grads[k] = slice(g, axis, offsets[k], offsets[k] + len);
        }
        return grads;
      });
}

// Composites.

inline Var square(const Var& a) { return mul(a, a); }

inline Var dot(const Var& x, const Var& y) {
  if (x.shape().size() != y.shape().size()) {
    throw StructuralError("dot: shapes " + x.shape().str() + " and " + y.shape().str() + " differ in size");
  }
  return sum(mul(reshape(x, Shape{1, x.shape().size()}), reshape(y, Shape{1, y.shape().size()})));
}

/// Rows scaled to unit length. Only rows whose norm is below kGuardEps get the
/// guard added to their norm, so nonzero rows are normalized exactly and zero
/// rows stay zero.
inline Var normalize_rows(const Var& a) {
  const Var n = norm_rows(a);
  Array guard(n.shape());
  for (std::size_t i = 0; i < guard.size(); ++i) guard[i] = n.value()[i] < kGuardEps ? kGuardEps : 0.0;
  return div(a, add(n, Var::constant(std::move(guard))));
}

/// Cosine of two arrays viewed as flat vectors, norms guarded by kGuardEps.
inline Var cosine(const Var& x, const Var& y) {
  const auto flat = [](const Var& v) { return reshape(v, Shape{1, v.shape().size()}); };
  return dot(normalize_rows(flat(x)), normalize_rows(flat(y)));
}

/// Row-wise cosine of two N x d matrices -> N x 1.
inline Var cosine_rows(const Var& a, const Var& b) {
  return sum_to(mul(normalize_rows(a), normalize_rows(b)), Shape{a.shape().rows, 1});
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }
inline Var operator*(double k, const Var& a) { return scale(a, k); }
inline Var operator*(const Var& a, double k) { return scale(a, k); }
inline Var operator+(const Var& a, double k) { return shift(a, k); }
inline Var operator-(const Var& a, double k) { return shift(a, -k); }

}  // namespace bayescal::diff
