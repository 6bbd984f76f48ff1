#pragma once

// Minimal reverse-mode automatic differentiation over dense 3-D tensors
// (batch x rows x cols). Only the primitives the permutation-learning
// pipeline needs are provided. Broadcasting is explicit: binary ops may
// broadcast a batch of 1, and the *_along ops broadcast one reduced axis.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "permtour/error.hpp"
#include "permtour/rng.hpp"

namespace permtour::ad {

struct Shape {
  std::size_t b = 1;
  std::size_t r = 1;
  std::size_t c = 1;

  std::size_t size() const noexcept { return b * r * c; }
  std::size_t dim(int axis) const { return axis == 0 ? b : axis == 1 ? r : c; }
  std::string str() const {
    return "(" + std::to_string(b) + "," + std::to_string(r) + "," + std::to_string(c) + ")";
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(s), data(s.size(), fill) {}
  Tensor(Shape s, std::vector<double> d) : shape(s), data(std::move(d)) {
    require(data.size() == shape.size(), ErrorCode::ShapeMismatch,
            "Tensor: data length " + std::to_string(data.size()) + " != shape " + shape.str());
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> d) {
    return Tensor(Shape{1, rows, cols}, std::move(d));
  }

  std::size_t size() const noexcept { return data.size(); }
  double& at(std::size_t b, std::size_t i, std::size_t j) {
    return data[(b * shape.r + i) * shape.c + j];
  }
  double at(std::size_t b, std::size_t i, std::size_t j) const {
    return data[(b * shape.r + i) * shape.c + j];
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Forward-pass regime. Dropout masks are drawn in Train and McDropout only.
enum class Mode { Train, Deterministic, McDropout };

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  double item() const;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(512); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor t, bool requires_grad = true) {
    return push(std::move(t), requires_grad, nullptr);
  }
  Var constant(Tensor t) { return push(std::move(t), false, nullptr); }

  Var push(Tensor t, bool requires_grad, Backward bw) {
    nodes_.push_back(Node{std::move(t), {}, requires_grad, std::move(bw)});
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node; zero-filled on first access.
  std::vector<double>& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }
  const std::vector<double>& grad(Var v) { return grad(v.id); }

  /// Reverse sweep from a scalar root. Node ids are a topological order, so a
  /// single descending pass visits each node once.
  void backward(Var root) {
    require(root.tape == this, ErrorCode::Validation, "backward: foreign variable");
    require(nodes_[root.id].value.size() == 1, ErrorCode::ShapeMismatch,
            "backward: root must be scalar, got " + nodes_[root.id].value.shape.str());
    grad(root.id)[0] = 1.0;
    for (std::size_t k = root.id + 1; k-- > 0;) {
      auto& n = nodes_[k];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, k);
    }
  }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline double Var::item() const {
  const auto& v = value();
  require(v.size() == 1, ErrorCode::ShapeMismatch, "item(): tensor is not scalar");
  return v.data[0];
}

namespace detail {

inline void check_same_tape(Var a, Var b, const char* op) {
  require(a.tape != nullptr && a.tape == b.tape, ErrorCode::Validation,
          std::string(op) + ": operands live on different tapes");
}

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorCode::ShapeMismatch,
       std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

inline std::size_t broadcast_batch(const char* op, const Shape& a, const Shape& b) {
  if (a.b == b.b) return a.b;
  if (a.b == 1) return b.b;
  if (b.b == 1) return a.b;
  shape_error(op, a, b);
}

inline void check_axis(int axis, const char* op) {
  require(axis >= 0 && axis <= 2, ErrorCode::Validation,
          std::string(op) + ": axis must be 0, 1 or 2");
}

// C(r x c) += A(r x k) * B(k x c)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t r,
                    std::size_t k, std::size_t cols) {
  for (std::size_t i = 0; i < r; ++i) {
    double* crow = c + i * cols;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * cols;
      for (std::size_t j = 0; j < cols; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(r x k) += G(r x c) * B(k x c)^T. B is transposed into a scratch buffer so
// the inner loop is a contiguous axpy rather than a reduction.
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t r,
                    std::size_t k, std::size_t cols) {
  thread_local std::vector<double> bt;
  bt.resize(k * cols);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < cols; ++j) bt[j * k + p] = b[p * cols + j];
  for (std::size_t i = 0; i < r; ++i) {
    const double* grow = g + i * cols;
    double* crow = c + i * k;
    for (std::size_t j = 0; j < cols; ++j) {
      const double gv = grow[j];
      const double* brow = bt.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) crow[p] += gv * brow[p];
    }
  }
}

// C(k x c) += A(r x k)^T * G(r x c)
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t r,
                    std::size_t k, std::size_t cols) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * cols;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * cols;
      for (std::size_t j = 0; j < cols; ++j) crow[j] += av * grow[j];
    }
  }
}

// Visit every element of `s` with the flat index of its reduced counterpart
// (the coordinate along `axis` collapsed to 0).
template <class F>
void for_each_reduced(const Shape& s, int axis, F&& f) {
  std::size_t flat = 0;
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t i = 0; i < s.r; ++i)
      for (std::size_t j = 0; j < s.c; ++j, ++flat) {
        const std::size_t rb = axis == 0 ? 0 : b;
        const std::size_t ri = axis == 1 ? 0 : i;
        const std::size_t rj = axis == 2 ? 0 : j;
        const std::size_t rr = axis == 1 ? 1 : s.r;
        const std::size_t rc = axis == 2 ? 1 : s.c;
        f(flat, (rb * rr + ri) * rc + rj);
      }
}

inline Shape reduced(Shape s, int axis) {
  if (axis == 0) s.b = 1;
  if (axis == 1) s.r = 1;
  if (axis == 2) s.c = 1;
  return s;
}

template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape);
  for (std::size_t k = 0; k < av.size(); ++k) out.data[k] = fwd(av.data[k]);
  const bool rg = a.tape->requires_grad(a.id);
  return a.tape->push(std::move(out), rg, [ai = a.id, deriv](Tape& t, std::size_t self) {
    const auto& x = t.value(ai).data;
    const auto& y = t.value(self).data;
    const auto& g = t.grad(self);
    auto& ga = t.grad(ai);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * deriv(x[k], y[k]);
  });
}

}  // namespace detail

/// Batched matrix product. Either operand may have batch 1 (broadcast).
inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b, "matmul");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.c != sb.r) detail::shape_error("matmul", sa, sb);
  const std::size_t nb = detail::broadcast_batch("matmul", sa, sb);
  const std::size_t r = sa.r, k = sa.c, c = sb.c;
  Tensor out(Shape{nb, r, c});
  {
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    for (std::size_t q = 0; q < nb; ++q)
      detail::gemm_nn(av.data() + (sa.b == 1 ? 0 : q) * r * k,
                      bv.data() + (sb.b == 1 ? 0 : q) * k * c, out.data.data() + q * r * c, r,
                      k, c);
  }
  Tape& tape = *a.tape;
  const bool rg = tape.requires_grad(a.id) || tape.requires_grad(b.id);
  return tape.push(std::move(out), rg, [ai = a.id, bi = b.id, sa, sb, nb, r, k, c](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ai)) {
      auto& ga = t.grad(ai);
      const auto& bv = t.value(bi).data;
      for (std::size_t q = 0; q < nb; ++q)
        detail::gemm_nt(g.data() + q * r * c, bv.data() + (sb.b == 1 ? 0 : q) * k * c,
                        ga.data() + (sa.b == 1 ? 0 : q) * r * k, r, k, c);
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad(bi);
      const auto& av = t.value(ai).data;
      for (std::size_t q = 0; q < nb; ++q)
        detail::gemm_tn(av.data() + (sa.b == 1 ? 0 : q) * r * k, g.data() + q * r * c,
                        gb.data() + (sb.b == 1 ? 0 : q) * k * c, r, k, c);
    }
  });
}

/// Swap the last two axes.
inline Var transpose(Var a) {
  const Shape s = a.shape();
  Tensor out(Shape{s.b, s.c, s.r});
  const auto& av = a.value();
  for (std::size_t q = 0; q < s.b; ++q)
    for (std::size_t i = 0; i < s.r; ++i)
      for (std::size_t j = 0; j < s.c; ++j) out.at(q, j, i) = av.at(q, i, j);
  const bool rg = a.tape->requires_grad(a.id);
  return a.tape->push(std::move(out), rg, [ai = a.id, s](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ai);
    for (std::size_t q = 0; q < s.b; ++q)
      for (std::size_t i = 0; i < s.r; ++i)
        for (std::size_t j = 0; j < s.c; ++j)
          ga[(q * s.r + i) * s.c + j] += g[(q * s.c + j) * s.r + i];
  });
}

namespace detail {

// Elementwise binary op with batch broadcasting. dfa/dfb give the local
// partials given (x, y).
template <class Fwd, class Da, class Db>
Var elementwise(const char* op, Var a, Var b, Fwd fwd, Da dfa, Db dfb) {
  check_same_tape(a, b, op);
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.r != sb.r || sa.c != sb.c) shape_error(op, sa, sb);
  const std::size_t nb = broadcast_batch(op, sa, sb);
  const std::size_t m = sa.r * sa.c;
  Tensor out(Shape{nb, sa.r, sa.c});
  {
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    for (std::size_t q = 0; q < nb; ++q) {
      const double* x = av.data() + (sa.b == 1 ? 0 : q) * m;
      const double* y = bv.data() + (sb.b == 1 ? 0 : q) * m;
      double* o = out.data.data() + q * m;
      for (std::size_t k = 0; k < m; ++k) o[k] = fwd(x[k], y[k]);
    }
  }
  Tape& tape = *a.tape;
  const bool rg = tape.requires_grad(a.id) || tape.requires_grad(b.id);
  return tape.push(std::move(out), rg,
                   [ai = a.id, bi = b.id, sa, sb, nb, m, dfa, dfb](Tape& t, std::size_t self) {
                     const auto& g = t.grad(self);
                     const auto& av = t.value(ai).data;
                     const auto& bv = t.value(bi).data;
                     const bool ga_on = t.requires_grad(ai), gb_on = t.requires_grad(bi);
                     double* ga = ga_on ? t.grad(ai).data() : nullptr;
                     double* gb = gb_on ? t.grad(bi).data() : nullptr;
                     for (std::size_t q = 0; q < nb; ++q) {
                       const std::size_t oa = (sa.b == 1 ? 0 : q) * m;
                       const std::size_t ob = (sb.b == 1 ? 0 : q) * m;
                       for (std::size_t k = 0; k < m; ++k) {
                         const double gv = g[q * m + k];
                         if (ga) ga[oa + k] += gv * dfa(av[oa + k], bv[ob + k]);
                         if (gb) gb[ob + k] += gv * dfb(av[oa + k], bv[ob + k]);
                       }
                     }
                   });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Var hadamard(Var a, Var b) {
  return detail::elementwise(
      "hadamard", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Var scale(Var a, double s) {
  return detail::unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var tanh(Var a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(Var a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// log(sum(exp(a))) along `axis`, keeping the axis with extent 1.
inline Var logsumexp(Var a, int axis) {
  detail::check_axis(axis, "logsumexp");
  const Shape s = a.shape();
  const Shape rs = detail::reduced(s, axis);
  const auto& av = a.value().data;
  std::vector<double> mx(rs.size(), -std::numeric_limits<double>::infinity());
  detail::for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) {
    mx[rk] = std::max(mx[rk], av[k]);
  });
  std::vector<double> w(s.size());
  Tensor out(rs, 0.0);
  detail::for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) {
    w[k] = std::exp(av[k] - mx[rk]);
    out.data[rk] += w[k];
  });
  // Keep the normalized weights (softmax along axis) for the backward pass.
  detail::for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) { w[k] /= out.data[rk]; });
  for (std::size_t rk = 0; rk < rs.size(); ++rk) out.data[rk] = mx[rk] + std::log(out.data[rk]);
  const bool rg = a.tape->requires_grad(a.id);
  return a.tape->push(std::move(out), rg,
                      [ai = a.id, s, axis, w = std::move(w)](Tape& t, std::size_t self) {
                        const auto& g = t.grad(self);
                        auto& ga = t.grad(ai);
                        detail::for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) {
                          ga[k] += g[rk] * w[k];
                        });
                      });
}

namespace detail {

// a (full shape) combined with r (extent 1 along axis).
template <class Fwd, class Da, class Dr>
Var along(const char* op, Var a, Var r, int axis, Fwd fwd, Da dfa, Dr dfr) {
  check_same_tape(a, r, op);
  check_axis(axis, op);
  const Shape s = a.shape();
  if (!(r.shape() == reduced(s, axis))) shape_error(op, s, r.shape());
  Tensor out(s);
  {
    const auto& av = a.value().data;
    const auto& rv = r.value().data;
    for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) {
      out.data[k] = fwd(av[k], rv[rk]);
    });
  }
  Tape& tape = *a.tape;
  const bool rg = tape.requires_grad(a.id) || tape.requires_grad(r.id);
  return tape.push(std::move(out), rg, [ai = a.id, ri = r.id, s, axis, dfa, dfr](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ai).data;
    const auto& rv = t.value(ri).data;
    double* ga = t.requires_grad(ai) ? t.grad(ai).data() : nullptr;
    double* gr = t.requires_grad(ri) ? t.grad(ri).data() : nullptr;
    for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) {
      if (ga) ga[k] += g[k] * dfa(av[k], rv[rk]);
      if (gr) gr[rk] += g[k] * dfr(av[k], rv[rk]);
    });
  });
}

}  // namespace detail

/// a - r, with r broadcast along `axis` (r has extent 1 there).
inline Var sub_along(Var a, Var r, int axis) {
  return detail::along(
      "sub_along", a, r, axis, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Var add_along(Var a, Var r, int axis) {
  return detail::along(
      "add_along", a, r, axis, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Var mul_along(Var a, Var r, int axis) {
  return detail::along(
      "mul_along", a, r, axis, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

/// Sum along `axis`, keeping it with extent 1.
inline Var sum(Var a, int axis) {
  detail::check_axis(axis, "sum");
  const Shape s = a.shape();
  Tensor out(detail::reduced(s, axis), 0.0);
  const auto& av = a.value().data;
  detail::for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) { out.data[rk] += av[k]; });
  const bool rg = a.tape->requires_grad(a.id);
  return a.tape->push(std::move(out), rg, [ai = a.id, s, axis](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ai);
    detail::for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) { ga[k] += g[rk]; });
  });
}

inline Var sum_all(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const bool rg = a.tape->requires_grad(a.id);
  return a.tape->push(Tensor(Shape{}, s), rg, [ai = a.id](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& x : t.grad(ai)) x += g;
  });
}

/// Softmax along `axis`.
inline Var softmax(Var a, int axis) {
  detail::check_axis(axis, "softmax");
  const Shape s = a.shape();
  const Shape rs = detail::reduced(s, axis);
  const auto& av = a.value().data;
  std::vector<double> mx(rs.size(), -std::numeric_limits<double>::infinity());
  detail::for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) {
    mx[rk] = std::max(mx[rk], av[k]);
  });
  std::vector<double> z(rs.size(), 0.0);
  Tensor out(s);
  detail::for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) {
    out.data[k] = std::exp(av[k] - mx[rk]);
    z[rk] += out.data[k];
  });
  detail::for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) { out.data[k] /= z[rk]; });
  const bool rg = a.tape->requires_grad(a.id);
  return a.tape->push(std::move(out), rg, [ai = a.id, s, axis](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).data;
    std::vector<double> dot(detail::reduced(s, axis).size(), 0.0);
    detail::for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) { dot[rk] += g[k] * y[k]; });
    auto& ga = t.grad(ai);
    detail::for_each_reduced(s, axis, [&](std::size_t k, std::size_t rk) {
      ga[k] += y[k] * (g[k] - dot[rk]);
    });
  });
}

/// Inverted dropout: zero each entry with probability p and scale survivors by
/// 1/(1-p). The mask is a pure function of `seed`. Identity when `active` is
/// false or p == 0.
inline Var dropout(Var a, double p, std::uint64_t seed, bool active) {
  require(p >= 0.0 && p < 1.0, ErrorCode::Validation, "dropout: p must lie in [0, 1)");
  if (!active || p == 0.0) return a;
  const auto& av = a.value().data;
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(av.size());
  Tensor out(a.shape());
  for (std::size_t k = 0; k < av.size(); ++k) {
    mask[k] = rng.uniform() < p ? 0.0 : keep_scale;
    out.data[k] = av[k] * mask[k];
  }
  const bool rg = a.tape->requires_grad(a.id);
  return a.tape->push(std::move(out), rg, [ai = a.id, mask = std::move(mask)](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ai);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * mask[k];
  });
}

inline Var dropout(Var a, double p, std::uint64_t seed, Mode mode) {
  return dropout(a, p, seed, mode != Mode::Deterministic);
}

/// <A, B> = tr(A^T B), summed over the batch too. Returns a scalar.
inline Var inner(Var a, Var b) {
  detail::check_same_tape(a, b, "inner");
  if (!(a.shape() == b.shape())) detail::shape_error("inner", a.shape(), b.shape());
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  double s = 0.0;
  for (std::size_t k = 0; k < av.size(); ++k) s += av[k] * bv[k];
  Tape& tape = *a.tape;
  const bool rg = tape.requires_grad(a.id) || tape.requires_grad(b.id);
  return tape.push(Tensor(Shape{}, s), rg, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    if (t.requires_grad(ai)) {
      auto& ga = t.grad(ai);
      const auto& bv = t.value(bi).data;
      for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += g * bv[k];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad(bi);
      const auto& av = t.value(ai).data;
      for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += g * av[k];
    }
  });
}

/// Concatenate along `axis`; the other extents must agree.
inline Var concat(Var a, Var b, int axis) {
  detail::check_same_tape(a, b, "concat");
  detail::check_axis(axis, "concat");
  const Shape sa = a.shape(), sb = b.shape();
  for (int ax = 0; ax < 3; ++ax)
    if (ax != axis && sa.dim(ax) != sb.dim(ax)) detail::shape_error("concat", sa, sb);
  Shape so = sa;
  if (axis == 0) so.b += sb.b;
  if (axis == 1) so.r += sb.r;
  if (axis == 2) so.c += sb.c;
  Tensor out(so);
  const auto& av = a.value();
  const auto& bv = b.value();
  auto src = [&](std::size_t q, std::size_t i, std::size_t j, bool& from_b) -> double {
    const std::size_t idx[3] = {q, i, j};
    from_b = idx[axis] >= sa.dim(axis);
    if (!from_b) return av.at(q, i, j);
    return bv.at(axis == 0 ? q - sa.b : q, axis == 1 ? i - sa.r : i, axis == 2 ? j - sa.c : j);
  };
  for (std::size_t q = 0; q < so.b; ++q)
    for (std::size_t i = 0; i < so.r; ++i)
      for (std::size_t j = 0; j < so.c; ++j) {
        bool fb;
        out.at(q, i, j) = src(q, i, j, fb);
      }
  Tape& tape = *a.tape;
  const bool rg = tape.requires_grad(a.id) || tape.requires_grad(b.id);
  return tape.push(std::move(out), rg, [ai = a.id, bi = b.id, sa, sb, so, axis](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    double* ga = t.requires_grad(ai) ? t.grad(ai).data() : nullptr;
    double* gb = t.requires_grad(bi) ? t.grad(bi).data() : nullptr;
    std::size_t flat = 0;
    for (std::size_t q = 0; q < so.b; ++q)
      for (std::size_t i = 0; i < so.r; ++i)
        for (std::size_t j = 0; j < so.c; ++j, ++flat) {
          const std::size_t idx[3] = {q, i, j};
          if (idx[axis] < sa.dim(axis)) {
            if (ga) ga[(q * sa.r + i) * sa.c + j] += g[flat];
          } else if (gb) {
            const std::size_t bq = axis == 0 ? q - sa.b : q;
            const std::size_t bi2 = axis == 1 ? i - sa.r : i;
            const std::size_t bj = axis == 2 ? j - sa.c : j;
            gb[(bq * sb.r + bi2) * sb.c + bj] += g[flat];
          }
        }
  });
}

/// Half-open range [begin, end) along `axis`.
inline Var slice(Var a, int axis, std::size_t begin, std::size_t end) {
  detail::check_axis(axis, "slice");
  const Shape s = a.shape();
  require(begin < end && end <= s.dim(axis), ErrorCode::ShapeMismatch,
          "slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
              ") out of bounds for shape " + s.str());
  Shape so = s;
  if (axis == 0) so.b = end - begin;
  if (axis == 1) so.r = end - begin;
  if (axis == 2) so.c = end - begin;
  Tensor out(so);
  const auto& av = a.value();
  auto src_index = [s, axis, begin](std::size_t q, std::size_t i, std::size_t j) {
    if (axis == 0) q += begin;
    if (axis == 1) i += begin;
    if (axis == 2) j += begin;
    return (q * s.r + i) * s.c + j;
  };
  std::size_t flat = 0;
  for (std::size_t q = 0; q < so.b; ++q)
    for (std::size_t i = 0; i < so.r; ++i)
      for (std::size_t j = 0; j < so.c; ++j, ++flat) out.data[flat] = av.data[src_index(q, i, j)];
  const bool rg = a.tape->requires_grad(a.id);
  return a.tape->push(std::move(out), rg, [ai = a.id, so, src_index](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ai);
    std::size_t flat = 0;
    for (std::size_t q = 0; q < so.b; ++q)
      for (std::size_t i = 0; i < so.r; ++i)
        for (std::size_t j = 0; j < so.c; ++j, ++flat) ga[src_index(q, i, j)] += g[flat];
  });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool non_finite = false;
};

/// Builds the scalar objective on a fresh tape from leaf variables holding the
/// parameter values.
using Objective = std::function<Var(Tape&, std::span<const Var>)>;

inline double evaluate(const Objective& f, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p, false));
  return f(tape, leaves).item();
}

/// Analytic gradients of f with respect to every parameter tensor.
inline std::vector<std::vector<double>> gradients(const Objective& f,
                                                  std::span<const Tensor> params,
                                                  double* value = nullptr) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
  Var out = f(tape, leaves);
  if (value) *value = out.item();
  tape.backward(out);
  std::vector<std::vector<double>> g;
  g.reserve(leaves.size());
  for (auto v : leaves) g.push_back(tape.grad(v.id));
  return g;
}

/// Compares tape gradients with central differences of step h. When the
/// parameters hold more than `max_samples` scalars, a seeded random subset is
/// checked. Error per coordinate: |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
inline GradCheckResult grad_check(const Objective& f, std::vector<Tensor> params, double h,
                                  std::size_t max_samples = 4096, std::uint64_t seed = 0) {
  require(h >= 1e-6 && h <= 1e-4, ErrorCode::Validation, "grad_check: h must lie in [1e-6, 1e-4]");
  GradCheckResult res;
  double f0 = 0.0;
  const auto g = gradients(f, params, &f0);
  if (!std::isfinite(f0)) {
    res.non_finite = true;
    return res;
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t k = 0; k < params[p].size(); ++k) coords.emplace_back(p, k);
  if (coords.size() > max_samples) {
    Rng rng(seed);
    rng.shuffle(coords.begin(), coords.end());
    coords.resize(max_samples);
  }

  for (auto [p, k] : coords) {
    const double orig = params[p].data[k];
    params[p].data[k] = orig + h;
    const double fp = evaluate(f, params);
    params[p].data[k] = orig - h;
    const double fm = evaluate(f, params);
    params[p].data[k] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(g[p][k])) {
      res.non_finite = true;
      continue;
    }
    const double fd = (fp - fm) / (2.0 * h);
    const double ad = g[p][k];
    const double err = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-8});
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_param = p;
      res.worst_index = k;
    }
    ++res.checked;
  }
  return res;
}

}  // namespace permtour::ad
