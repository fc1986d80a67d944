#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "mddc/autodiff.hpp"
#include "mddc/error.hpp"

namespace mddc::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw Error("operands live on different tapes");
  return a.tape();
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got " + shape_str(v.shape()));
  }
}

// Split a shape around `axis` into outer * len * inner.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

enum class Bcast { same, scalar_a, scalar_b };

Bcast broadcast_kind(const NdValue& a, const NdValue& b, const char* op) {
  if (a.shape == b.shape) return Bcast::same;
  if (b.size() == 1) return Bcast::scalar_b;
  if (a.size() == 1) return Bcast::scalar_a;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape) + " and " +
                   shape_str(b.shape) + " are not broadcast-compatible");
}

Shape result_shape(const NdValue& a, const NdValue& b, Bcast kind) {
  return kind == Bcast::scalar_a ? b.shape : a.shape;
}

// Generic binary elementwise op with scalar broadcasting.
// fwd(x, y) -> z ; da(x, y) and db(x, y) are local partials.
template <class Fwd, class Da, class Db>
Var binary(const char* op, Var a, Var b, Fwd fwd, Da da, Db db) {
  Tape& tape = same_tape(a, b);
  const NdValue& va = a.value();
  const NdValue& vb = b.value();
  const Bcast kind = broadcast_kind(va, vb, op);
  Shape shape = result_shape(va, vb, kind);
  const std::size_t n = numel(shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = kind == Bcast::scalar_a ? va.data[0] : va.data[i];
    const double y = kind == Bcast::scalar_b ? vb.data[0] : vb.data[i];
    out[i] = fwd(x, y);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      op, {ia, ib}, NdValue(std::move(shape), std::move(out)),
      [ia, ib, kind, n, da, db](Tape& t, std::size_t self) {
        const auto& g = *t.value(self).grad;
        const auto& xa = t.value(ia).data;
        const auto& xb = t.value(ib).data;
        const bool need_a = t.requires_grad(ia);
        const bool need_b = t.requires_grad(ib);
        std::vector<double>* ga = need_a ? &t.grad_buffer(ia) : nullptr;
        std::vector<double>* gb = need_b ? &t.grad_buffer(ib) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          const double x = kind == Bcast::scalar_a ? xa[0] : xa[i];
          const double y = kind == Bcast::scalar_b ? xb[0] : xb[i];
          if (ga) (*ga)[kind == Bcast::scalar_a ? 0 : i] += g[i] * da(x, y);
          if (gb) (*gb)[kind == Bcast::scalar_b ? 0 : i] += g[i] * db(x, y);
        }
      });
}

}  // namespace

Var relu(Var x) {
  const NdValue& v = x.value();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v.data[i] > 0.0 ? v.data[i] : 0.0;
  const std::size_t ix = x.id();
  return x.tape().record("relu", {ix}, NdValue(v.shape, std::move(out)),
                         [ix](Tape& t, std::size_t self) {
                           const auto& g = *t.value(self).grad;
                           const auto& in = t.value(ix).data;
                           auto& gx = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             if (in[i] > 0.0) gx[i] += g[i];
                           }
                         });
}

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var scale(Var x, double factor) {
  const NdValue& v = x.value();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v.data[i] * factor;
  const std::size_t ix = x.id();
  return x.tape().record("scale", {ix}, NdValue(v.shape, std::move(out)),
                         [ix, factor](Tape& t, std::size_t self) {
                           const auto& g = *t.value(self).grad;
                           auto& gx = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
                         });
}

Var exp(Var x) {
  const NdValue& v = x.value();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v.data[i]);
  const std::size_t ix = x.id();
  return x.tape().record("exp", {ix}, NdValue(v.shape, std::move(out)),
                         [ix](Tape& t, std::size_t self) {
                           const auto& g = *t.value(self).grad;
                           const auto& y = t.value(self).data;
                           auto& gx = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
                         });
}

Var softmax(Var x, std::size_t axis) {
  const NdValue& v = x.value();
  if (axis >= v.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                     shape_str(v.shape));
  }
  if (v.shape[axis] == 0) throw ShapeError("softmax: empty axis");
  for (double d : v.data) {
    if (!std::isfinite(d)) throw InvalidArgument("softmax: non-finite input");
  }
  const AxisSplit s = split_at(v.shape, axis);
  std::vector<double> out(v.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = v.data[base];
      for (std::size_t k = 1; k < s.len; ++k) mx = std::max(mx, v.data[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const double e = std::exp(v.data[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] /= total;
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(
      "softmax", {ix}, NdValue(v.shape, std::move(out)),
      [ix, s](Tape& t, std::size_t self) {
        const auto& g = *t.value(self).grad;
        const auto& y = t.value(self).data;
        auto& gx = t.grad_buffer(ix);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.len * s.inner + in;
            double dot = 0.0;
            for (std::size_t k = 0; k < s.len; ++k) {
              const std::size_t i = base + k * s.inner;
              dot += g[i] * y[i];
            }
            for (std::size_t k = 0; k < s.len; ++k) {
              const std::size_t i = base + k * s.inner;
              gx[i] += y[i] * (g[i] - dot);
            }
          }
        }
      });
}

Var avg_pool2d(Var x, std::size_t k) {
  require_rank(x, 4, "avg_pool2d");
  if (k == 0) throw InvalidArgument("avg_pool2d: window must be positive");
  const NdValue& v = x.value();
  const std::size_t planes = v.shape[0] * v.shape[1];
  const std::size_t h = v.shape[2], w = v.shape[3];
  const std::size_t ho = h / k, wo = w / k;
  if (ho == 0 || wo == 0) {
    throw ShapeError("avg_pool2d: window " + std::to_string(k) +
                     " larger than input " + shape_str(v.shape));
  }
  const double inv = 1.0 / static_cast<double>(k * k);
  std::vector<double> out(planes * ho * wo, 0.0);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = v.data.data() + p * h * w;
    double* dst = out.data() + p * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < k; ++a) {
          for (std::size_t b = 0; b < k; ++b) acc += src[(i * k + a) * w + j * k + b];
        }
        dst[i * wo + j] = acc * inv;
      }
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(
      "avg_pool2d", {ix},
      NdValue({v.shape[0], v.shape[1], ho, wo}, std::move(out)),
      [ix, planes, h, w, ho, wo, k, inv](Tape& t, std::size_t self) {
        const auto& g = *t.value(self).grad;
        auto& gx = t.grad_buffer(ix);
        for (std::size_t p = 0; p < planes; ++p) {
          for (std::size_t i = 0; i < ho; ++i) {
            for (std::size_t j = 0; j < wo; ++j) {
              const double gi = g[p * ho * wo + i * wo + j] * inv;
              for (std::size_t a = 0; a < k; ++a) {
                for (std::size_t b = 0; b < k; ++b) {
                  gx[p * h * w + (i * k + a) * w + j * k + b] += gi;
                }
              }
            }
          }
        }
      });
}

Var sum(Var x) {
  const NdValue& v = x.value();
  if (v.size() == 0) throw ShapeError("sum: empty input");
  double total = 0.0;
  for (double d : v.data) total += d;
  const std::size_t ix = x.id();
  return x.tape().record("sum", {ix}, NdValue({}, {total}),
                         [ix](Tape& t, std::size_t self) {
                           const double g = (*t.value(self).grad)[0];
                           for (double& gx : t.grad_buffer(ix)) gx += g;
                         });
}

Var global_mean(Var x) {
  const std::size_t n = x.size();
  if (n == 0) throw ShapeError("global_mean: empty input");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var mean_axis(Var x, std::size_t axis) {
  const NdValue& v = x.value();
  if (axis >= v.rank()) {
    throw ShapeError("mean_axis: axis " + std::to_string(axis) + " invalid for " +
                     shape_str(v.shape));
  }
  if (v.shape[axis] == 0) throw ShapeError("mean_axis: empty reduction axis");
  const AxisSplit s = split_at(v.shape, axis);
  const double inv = 1.0 / static_cast<double>(s.len);
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.len; ++k) {
      const double* src = v.data.data() + (o * s.len + k) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
  }
  for (double& d : out) d *= inv;
  Shape shape = v.shape;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const std::size_t ix = x.id();
  return x.tape().record("mean_axis", {ix}, NdValue(std::move(shape), std::move(out)),
                         [ix, s, inv](Tape& t, std::size_t self) {
                           const auto& g = *t.value(self).grad;
                           auto& gx = t.grad_buffer(ix);
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             for (std::size_t k = 0; k < s.len; ++k) {
                               double* dst = gx.data() + (o * s.len + k) * s.inner;
                               const double* src = g.data() + o * s.inner;
                               for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in] * inv;
                             }
                           }
                         });
}

Var reshape(Var x, Shape shape) {
  const NdValue& v = x.value();
  if (numel(shape) != v.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(v.shape) + " as " +
                     shape_str(shape));
  }
  const std::size_t ix = x.id();
  return x.tape().record("reshape", {ix}, NdValue(std::move(shape), v.data),
                         [ix](Tape& t, std::size_t self) {
                           const auto& g = *t.value(self).grad;
                           auto& gx = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

Var flatten(Var x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("flatten: scalar input");
  return reshape(x, {s[0], s[0] == 0 ? 0 : x.size() / s[0]});
}

Var expand(Var x, std::size_t axis, std::size_t count) {
  const NdValue& v = x.value();
  if (axis > v.rank()) {
    throw ShapeError("expand: axis " + std::to_string(axis) + " invalid for " +
                     shape_str(v.shape));
  }
  if (count == 0) throw ShapeError("expand: count must be positive");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= v.shape[i];
  for (std::size_t i = axis; i < v.rank(); ++i) inner *= v.shape[i];
  std::vector<double> out(outer * count * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < count; ++r) {
      std::copy_n(v.data.data() + o * inner, inner, out.data() + (o * count + r) * inner);
    }
  }
  Shape shape = v.shape;
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  const std::size_t ix = x.id();
  return x.tape().record("expand", {ix}, NdValue(std::move(shape), std::move(out)),
                         [ix, outer, count, inner](Tape& t, std::size_t self) {
                           const auto& g = *t.value(self).grad;
                           auto& gx = t.grad_buffer(ix);
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t r = 0; r < count; ++r) {
                               const double* src = g.data() + (o * count + r) * inner;
                               double* dst = gx.data() + o * inner;
                               for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                             }
                           }
                         });
}

Var matmul(Var a, Var b, bool ta, bool tb) {
  Tape& tape = same_tape(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const NdValue& va = a.value();
  const NdValue& vb = b.value();
  const std::size_t m = ta ? va.shape[1] : va.shape[0];
  const std::size_t ka = ta ? va.shape[0] : va.shape[1];
  const std::size_t kb = tb ? vb.shape[1] : vb.shape[0];
  const std::size_t n = tb ? vb.shape[0] : vb.shape[1];
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(va.shape) +
                     (ta ? "^T" : "") + " x " + shape_str(vb.shape) + (tb ? "^T" : ""));
  }
  std::vector<double> out(m * n);
  {
    ConstMapMat A(va.data.data(), va.shape[0], va.shape[1]);
    ConstMapMat B(vb.data.data(), vb.shape[0], vb.shape[1]);
    MapMat C(out.data(), m, n);
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  const std::size_t ia = a.id(), ib = b.id();
  const Shape sa = va.shape, sb = vb.shape;
  return tape.record(
      "matmul", {ia, ib}, NdValue({m, n}, std::move(out)),
      [ia, ib, ta, tb, sa, sb, m, n](Tape& t, std::size_t self) {
        ConstMapMat G(t.value(self).grad->data(), m, n);
        ConstMapMat A(t.value(ia).data.data(), sa[0], sa[1]);
        ConstMapMat B(t.value(ib).data.data(), sb[0], sb[1]);
        // op(A) = A or A^T; d op(A) = G op(B)^T, d op(B) = op(A)^T G.
        if (t.requires_grad(ia)) {
          MapMat GA(t.grad_buffer(ia).data(), sa[0], sa[1]);
          RowMat dopa = tb ? RowMat(G * B) : RowMat(G * B.transpose());
          if (ta) GA += dopa.transpose();
          else GA += dopa;
        }
        if (t.requires_grad(ib)) {
          MapMat GB(t.grad_buffer(ib).data(), sb[0], sb[1]);
          RowMat dopb = ta ? RowMat(A * G) : RowMat(A.transpose() * G);
          if (tb) GB += dopb.transpose();
          else GB += dopb;
        }
      });
}

Var linear(Var x, Var weight, Var bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  if (x.shape()[1] != weight.shape()[1]) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(weight.shape()));
  }
  Var y = matmul(x, weight, false, true);
  if (!bias.valid()) return y;
  require_rank(bias, 1, "linear");
  if (bias.shape()[0] != weight.shape()[0]) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " vs weight " +
                     shape_str(weight.shape()));
  }
  Tape& tape = same_tape(y, bias);
  const std::size_t rows = y.shape()[0], cols = y.shape()[1];
  std::vector<double> out = y.value().data;
  const auto& b = bias.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
  }
  const std::size_t iy = y.id(), ib = bias.id();
  return tape.record("bias_add", {iy, ib}, NdValue({rows, cols}, std::move(out)),
                     [iy, ib, rows, cols](Tape& t, std::size_t self) {
                       const auto& g = *t.value(self).grad;
                       if (t.requires_grad(iy)) {
                         auto& gy = t.grad_buffer(iy);
                         for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i];
                       }
                       if (t.requires_grad(ib)) {
                         auto& gb = t.grad_buffer(ib);
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                         }
                       }
                     });
}

Var rowwise_cosine_distance(Var a, Var b, double eps) {
  Tape& tape = same_tape(a, b);
  require_rank(a, 2, "rowwise_cosine_distance");
  if (a.shape() != b.shape()) {
    throw ShapeError("rowwise_cosine_distance: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  const auto& xa = a.value().data;
  const auto& xb = b.value().data;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double p = xa[r * cols + c], q = xb[r * cols + c];
      dot += p * q;
      na += p * p;
      nb += q * q;
    }
    total += 1.0 - dot / (std::sqrt(na) * std::sqrt(nb) + eps);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      "rowwise_cosine_distance", {ia, ib}, NdValue({}, {total}),
      [ia, ib, rows, cols, eps](Tape& t, std::size_t self) {
        const double g = (*t.value(self).grad)[0];
        const auto& xa = t.value(ia).data;
        const auto& xb = t.value(ib).data;
        std::vector<double>* ga = t.requires_grad(ia) ? &t.grad_buffer(ia) : nullptr;
        std::vector<double>* gb = t.requires_grad(ib) ? &t.grad_buffer(ib) : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0, na2 = 0.0, nb2 = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const double p = xa[r * cols + c], q = xb[r * cols + c];
            dot += p * q;
            na2 += p * p;
            nb2 += q * q;
          }
          const double na = std::sqrt(na2), nb = std::sqrt(nb2);
          const double den = na * nb + eps;
          // f = 1 - dot/den ; df/da = -(b/den - dot * nb * a / (na * den^2)).
          const double ka = na > 0.0 ? dot * nb / (na * den * den) : 0.0;
          const double kb = nb > 0.0 ? dot * na / (nb * den * den) : 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            if (ga) (*ga)[i] += g * (-(xb[i] / den) + ka * xa[i]);
            if (gb) (*gb)[i] += g * (-(xa[i] / den) + kb * xb[i]);
          }
        }
      });
}

Var mse_loss(Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse_loss: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.size() == 0) throw ShapeError("mse_loss: empty input");
  Var d = sub(a, b);
  return global_mean(mul(d, d));
}

Var cross_entropy_loss(Var logits, std::span<const int> targets) {
  require_rank(logits, 2, "cross_entropy_loss");
  const std::size_t rows = logits.shape()[0], classes = logits.shape()[1];
  if (rows == 0 || classes == 0) throw ShapeError("cross_entropy_loss: empty input");
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(rows) + " rows");
  }
  for (int y : targets) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw InvalidArgument("cross_entropy_loss: target " + std::to_string(y) +
                            " outside [0," + std::to_string(classes) + ")");
    }
  }
  const auto& z = logits.value().data;
  std::vector<double> probs(rows * classes);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = z.data() + r * classes;
    const double mx = *std::max_element(zr, zr + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(zr[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(zr[c] - lse);
    total += lse - zr[targets[r]];
  }
  const double inv = 1.0 / static_cast<double>(rows);
  std::vector<int> ys(targets.begin(), targets.end());
  const std::size_t il = logits.id();
  return logits.tape().record(
      "cross_entropy_loss", {il}, NdValue({}, {total * inv}),
      [il, rows, classes, inv, probs = std::move(probs), ys = std::move(ys)](
          Tape& t, std::size_t self) {
        const double g = (*t.value(self).grad)[0] * inv;
        auto& gl = t.grad_buffer(il);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < classes; ++c) {
            const double target = static_cast<int>(c) == ys[r] ? 1.0 : 0.0;
            gl[r * classes + c] += g * (probs[r * classes + c] - target);
          }
        }
      });
}

}  // namespace mddc::ad
