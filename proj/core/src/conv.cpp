#include <algorithm>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "mddc/autodiff.hpp"
#include "mddc/error.hpp"

namespace mddc::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ColMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeom {
  std::size_t batch, cin, h, w;
  std::size_t cout, kh, kw;
  std::size_t stride, pad;
  std::size_t ho, wo;

  std::size_t patch() const { return cin * kh * kw; }
  std::size_t spatial() const { return ho * wo; }
  // Columns reserved per image: spatial() rounded up to a multiple of 8.
  // With every image starting on the same column alignment, the GEMM runs
  // identical arithmetic for each image, so results do not depend on an
  // image's position in the batch.
  std::size_t span() const { return (spatial() + 7) / 8 * 8; }
  // Images per GEMM. Bounded so an im2col buffer stays around 1 MB; the
  // value depends only on the geometry, which keeps reductions over the
  // batch in a fixed order.
  std::size_t chunk() const {
    const std::size_t per_image = patch() * span();
    const std::size_t budget = std::size_t{1} << 17;
    return std::clamp<std::size_t>(budget / std::max<std::size_t>(per_image, 1), 1, batch);
  }
};

// Columns for images [first, first+count) laid side by side:
// col[(c*kh+i)*kw+j][n*span + oy*wo + ox], padding columns zero.
void im2col(const ConvGeom& g, const double* x, std::size_t first, std::size_t count,
            RowMat& col) {
  const std::size_t sp = g.span();
  col.resize(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(count * sp));
  if (sp != g.spatial()) col.setZero();
  for (std::size_t n = 0; n < count; ++n) {
    const double* img = x + (first + n) * g.cin * g.h * g.w;
    for (std::size_t c = 0; c < g.cin; ++c) {
      for (std::size_t i = 0; i < g.kh; ++i) {
        for (std::size_t j = 0; j < g.kw; ++j) {
          double* row = col.data() + ((c * g.kh + i) * g.kw + j) * count * sp + n * sp;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            double* dst = row + oy * g.wo;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill_n(dst, g.wo, 0.0);
              continue;
            }
            const double* src = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                            ? 0.0
                            : src[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const ColMat& col, std::size_t first, std::size_t count,
                double* dx) {
  const std::size_t sp = g.span();
  RowMat block;
  for (std::size_t n = 0; n < count; ++n) {
    // Contiguous [patch, span] copy of this image's columns.
    block = col.middleCols(static_cast<Eigen::Index>(n * sp), static_cast<Eigen::Index>(sp));
    double* img = dx + (first + n) * g.cin * g.h * g.w;
    for (std::size_t c = 0; c < g.cin; ++c) {
      for (std::size_t i = 0; i < g.kh; ++i) {
        for (std::size_t j = 0; j < g.kw; ++j) {
          const double* row = block.data() + ((c * g.kh + i) * g.kw + j) * sp;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            double* dst = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
            const double* src = row + oy * g.wo;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              dst[static_cast<std::size_t>(ix)] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding, Var bias) {
  if (&input.tape() != &kernel.tape()) throw Error("conv2d: operands on different tapes");
  const NdValue& x = input.value();
  const NdValue& k = kernel.value();
  if (x.rank() != 4 || k.rank() != 4) {
    throw ShapeError("conv2d: input " + shape_str(x.shape) + " and kernel " +
                     shape_str(k.shape) + " must both be rank 4");
  }
  if (x.shape[1] != k.shape[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(x.shape[1]) +
                     " channels, kernel expects " + std::to_string(k.shape[1]) +
                     " (input " + shape_str(x.shape) + ", kernel " + shape_str(k.shape) + ")");
  }
  if (stride == 0) throw InvalidArgument("conv2d: stride must be >= 1");
  ConvGeom g{x.shape[0], x.shape[1], x.shape[2], x.shape[3], k.shape[0], k.shape[2],
             k.shape[3], stride, padding, 0, 0};
  if (g.kh > g.h + 2 * g.pad || g.kw > g.w + 2 * g.pad) {
    throw ShapeError("conv2d: kernel " + shape_str(k.shape) + " larger than padded input " +
                     shape_str(x.shape) + " with padding " + std::to_string(padding));
  }
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const bool has_bias = bias.valid();
  if (has_bias) {
    if (&bias.tape() != &input.tape()) throw Error("conv2d: bias on a different tape");
    if (bias.shape() != Shape{g.cout}) {
      throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                       std::to_string(g.cout) + " output channels");
    }
  }

  const std::size_t sp = g.spatial(), span = g.span();
  std::vector<double> out(g.batch * g.cout * sp);
  const std::size_t chunk = g.chunk();
  ConstMapMat K(k.data.data(), static_cast<Eigen::Index>(g.cout),
                static_cast<Eigen::Index>(g.patch()));
  RowMat col;
  ColMat res;
  for (std::size_t first = 0; first < g.batch; first += chunk) {
    const std::size_t count = std::min(chunk, g.batch - first);
    im2col(g, x.data.data(), first, count, col);
    res.noalias() = K * col;
    for (std::size_t n = 0; n < count; ++n) {
      for (std::size_t c = 0; c < g.cout; ++c) {
        const double b = has_bias ? bias.value().data[c] : 0.0;
        const double* src = res.data() + n * span * g.cout + c;
        double* dst = out.data() + ((first + n) * g.cout + c) * sp;
        for (std::size_t s = 0; s < sp; ++s) dst[s] = src[s * g.cout] + b;
      }
    }
  }

  std::vector<std::size_t> inputs{input.id(), kernel.id()};
  if (has_bias) inputs.push_back(bias.id());
  const std::size_t ix = input.id(), ik = kernel.id();
  const std::size_t ib = has_bias ? bias.id() : 0;
  return input.tape().record(
      "conv2d", std::move(inputs), NdValue({g.batch, g.cout, g.ho, g.wo}, std::move(out)),
      [g, ix, ik, ib, has_bias](Tape& t, std::size_t self) {
        const auto& gout = *t.value(self).grad;
        const auto& xv = t.value(ix).data;
        const auto& kv = t.value(ik).data;
        const bool need_x = t.requires_grad(ix);
        const bool need_k = t.requires_grad(ik);
        const bool need_b = has_bias && t.requires_grad(ib);
        const std::size_t sp = g.spatial(), span = g.span();
        const std::size_t chunk = g.chunk();
        ConstMapMat K(kv.data(), static_cast<Eigen::Index>(g.cout),
                      static_cast<Eigen::Index>(g.patch()));
        RowMat G, col;
        ColMat dcol;
        for (std::size_t first = 0; first < g.batch; first += chunk) {
          const std::size_t count = std::min(chunk, g.batch - first);
          G.resize(static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(count * span));
          if (span != sp) G.setZero();
          for (std::size_t n = 0; n < count; ++n) {
            for (std::size_t c = 0; c < g.cout; ++c) {
              std::copy_n(gout.data() + ((first + n) * g.cout + c) * sp, sp,
                          G.data() + c * count * span + n * span);
            }
          }
          if (need_x) {
            dcol.noalias() = K.transpose() * G;
            col2im_add(g, dcol, first, count, t.grad_buffer(ix).data());
          }
          if (need_k) {
            im2col(g, xv.data(), first, count, col);
            MapMat GK(t.grad_buffer(ik).data(), static_cast<Eigen::Index>(g.cout),
                      static_cast<Eigen::Index>(g.patch()));
            GK.noalias() += G * col.transpose();
          }
          if (need_b) {
            auto& gb = t.grad_buffer(ib);
            for (std::size_t c = 0; c < g.cout; ++c) gb[c] += G.row(static_cast<Eigen::Index>(c)).sum();
          }
        }
      });
}

}  // namespace mddc::ad
