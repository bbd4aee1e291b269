#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "decomamba/ops.hpp"
#include "gemm.hpp"
#include "op_util.hpp"

namespace dm {

using detail::grad_of;
using detail::make_result;

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  int64_t B, Cin, H, W, Cout, kh, kw, Ho, Wo;
  int stride, pad;
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const int64_t plane = g.Ho * g.Wo;
  for (int64_t c = 0; c < g.Cin; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (int64_t oy = 0; oy < g.Ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + i;
          T* dst = row + oy * g.Wo;
          if (iy < 0 || iy >= g.H) {
            std::fill_n(dst, g.Wo, T(0));
            continue;
          }
          const T* src = x + (c * g.H + iy) * g.W;
          for (int64_t ox = 0; ox < g.Wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + j;
            dst[ox] = (ix >= 0 && ix < g.W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* gx) {
  const int64_t plane = g.Ho * g.Wo;
  for (int64_t c = 0; c < g.Cin; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (int64_t oy = 0; oy < g.Ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + i;
          if (iy < 0 || iy >= g.H) continue;
          T* dst = gx + (c * g.H + iy) * g.W;
          const T* src = row + oy * g.Wo;
          for (int64_t ox = 0; ox < g.Wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + j;
            if (ix >= 0 && ix < g.W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void require_rank(const char* op, const Shape& s, size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int padding) {
  require_rank("conv2d", x.shape(), 4);
  require_rank("conv2d weight", w.shape(), 4);
  ConvGeometry g{};
  g.B = x.dim(0);
  g.Cin = x.dim(1);
  g.H = x.dim(2);
  g.W = x.dim(3);
  g.Cout = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (w.dim(1) != g.Cin) {
    throw ShapeError("conv2d: input has " + std::to_string(g.Cin) + " channels, weight expects " +
                     std::to_string(w.dim(1)));
  }
  if (stride < 1 || padding < 0 || g.H + 2 * padding < g.kh || g.W + 2 * padding < g.kw) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " does not fit input " +
                     shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.Cout)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
  }
  g.Ho = (g.H + 2 * padding - g.kh) / stride + 1;
  g.Wo = (g.W + 2 * padding - g.kw) / stride + 1;

  const int64_t plane = g.Ho * g.Wo;
  const int64_t ckk = g.Cin * g.kh * g.kw;
  const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && padding == 0;
  std::vector<T> out(static_cast<size_t>(g.B * g.Cout * plane));
  Eigen::Map<const RowMat<T>> W2(w.data().data(), g.Cout, ckk);
  std::vector<T> col(pointwise ? 0 : static_cast<size_t>(ckk * plane));
  for (int64_t b = 0; b < g.B; ++b) {
    const T* xb = x.data().data() + b * g.Cin * g.H * g.W;
    if (!pointwise) im2col(xb, g, col.data());
    Eigen::Map<const RowMat<T>> C(pointwise ? xb : col.data(), ckk, plane);
    Eigen::Map<RowMat<T>> Y(out.data() + b * g.Cout * plane, g.Cout, plane);
    detail::product(Y, W2, C, false);
    if (bias.defined()) {
      for (int64_t o = 0; o < g.Cout; ++o) Y.row(o).array() += bias.data()[o];
    }
  }
  MacCounter::record(static_cast<uint64_t>(g.B * g.Cout * plane * ckk));

  return make_result<T>(
      "conv2d", Shape{g.B, g.Cout, g.Ho, g.Wo}, std::move(out), {x, w, bias},
      [x, w, bias, g, plane, ckk, pointwise](std::span<const T> grad) {
        auto gx = grad_of(x);
        auto gw = grad_of(w);
        auto gb = grad_of(bias);
        Eigen::Map<const RowMat<T>> W2(w.data().data(), g.Cout, ckk);
        std::vector<T> col(pointwise ? 0 : static_cast<size_t>(ckk * plane));
        std::vector<T> gcol(pointwise || gx.empty() ? 0 : static_cast<size_t>(ckk * plane));
        for (int64_t b = 0; b < g.B; ++b) {
          Eigen::Map<const RowMat<T>> G(grad.data() + b * g.Cout * plane, g.Cout, plane);
          if (!gb.empty()) {
            for (int64_t o = 0; o < g.Cout; ++o) {
              T s = 0;
              for (int64_t p = 0; p < plane; ++p) s += G(o, p);
              gb[o] += s;
            }
          }
          const T* xb = x.data().data() + b * g.Cin * g.H * g.W;
          if (!gw.empty()) {
            if (!pointwise) im2col(xb, g, col.data());
            Eigen::Map<const RowMat<T>> C(pointwise ? xb : col.data(), ckk, plane);
            Eigen::Map<RowMat<T>> GW(gw.data(), g.Cout, ckk);
            detail::product(GW, G, C.transpose(), true);
          }
          if (!gx.empty()) {
            T* gxb = gx.data() + b * g.Cin * g.H * g.W;
            if (pointwise) {
              Eigen::Map<RowMat<T>> GX(gxb, ckk, plane);
              detail::product(GX, W2.transpose(), G, true);
            } else {
              Eigen::Map<RowMat<T>> GC(gcol.data(), ckk, plane);
              detail::product(GC, W2.transpose(), G, false);
              col2im_add(gcol.data(), g, gxb);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank("depthwise_conv2d", x.shape(), 4);
  require_rank("depthwise_conv2d weight", w.shape(), 4);
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t k = w.dim(2);
  if (w.dim(0) != C || w.dim(1) != 1) {
    throw ShapeError("depthwise_conv2d: weight " + shape_str(w.shape()) + " for " +
                     std::to_string(C) + " channels");
  }
  if (w.dim(3) != k || k % 2 == 0) throw ShapeError("depthwise_conv2d: kernel must be square and odd");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != C)) {
    throw ShapeError("depthwise_conv2d: bias shape " + shape_str(bias.shape()));
  }
  const int64_t p = k / 2;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
  const T* pw = w.data().data();
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const T* xp = px + (b * C + c) * H * W;
      const T* wk = pw + c * k * k;
      T* yp = out.data() + (b * C + c) * H * W;
      std::fill_n(yp, H * W, bias.defined() ? bias.data()[c] : T(0));
      for (int64_t i = 0; i < k; ++i) {
        for (int64_t j = 0; j < k; ++j) {
          const T wv = wk[i * k + j];
          const int64_t dy = i - p, dx = j - p;
          const int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min(H, H - dy);
          const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min(W, W - dx);
          for (int64_t y = y0; y < y1; ++y) {
            const T* src = xp + (y + dy) * W + dx;
            T* dst = yp + y * W;
            for (int64_t xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
          }
        }
      }
    }
  }
  MacCounter::record(static_cast<uint64_t>(B * C * H * W * k * k));
  return make_result<T>(
      "depthwise_conv2d", x.shape(), std::move(out), {x, w, bias},
      [x, w, bias, B, C, H, W, k, p](std::span<const T> g) {
        auto gx = grad_of(x);
        auto gw = grad_of(w);
        auto gb = grad_of(bias);
        const T* px = x.data().data();
        const T* pw = w.data().data();
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t c = 0; c < C; ++c) {
            const T* gp = g.data() + (b * C + c) * H * W;
            const T* xp = px + (b * C + c) * H * W;
            if (!gb.empty()) {
              T acc = 0;
              for (int64_t i = 0; i < H * W; ++i) acc += gp[i];
              gb[c] += acc;
            }
            for (int64_t i = 0; i < k; ++i) {
              for (int64_t j = 0; j < k; ++j) {
                const int64_t dy = i - p, dx = j - p;
                const int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min(H, H - dy);
                const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min(W, W - dx);
                T acc = 0;
                const T wv = pw[c * k * k + i * k + j];
                for (int64_t y = y0; y < y1; ++y) {
                  const T* gr = gp + y * W;
                  const T* xr = xp + (y + dy) * W + dx;
                  if (!gw.empty()) {
                    for (int64_t xx = x0; xx < x1; ++xx) acc += gr[xx] * xr[xx];
                  }
                  if (!gx.empty()) {
                    T* gxr = gx.data() + (b * C + c) * H * W + (y + dy) * W + dx;
                    for (int64_t xx = x0; xx < x1; ++xx) gxr[xx] += gr[xx] * wv;
                  }
                }
                if (!gw.empty()) gw[c * k * k + i * k + j] += acc;
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolMode mode, int kernel, int stride) {
  require_rank("pool2d", x.shape(), 4);
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (kernel < 1 || stride < 1 || kernel > H || kernel > W) {
    throw ShapeError("pool2d: kernel " + std::to_string(kernel) + " exceeds input " +
                     shape_str(x.shape()));
  }
  const int64_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  std::vector<T> out(static_cast<size_t>(B * C * Ho * Wo));
  std::vector<int64_t> arg(mode == PoolMode::max ? out.size() : 0);
  const T* px = x.data().data();
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  for (int64_t bc = 0; bc < B * C; ++bc) {
    for (int64_t oy = 0; oy < Ho; ++oy) {
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const int64_t o = (bc * Ho + oy) * Wo + ox;
        if (mode == PoolMode::max) {
          int64_t best = (bc * H + oy * stride) * W + ox * stride;
          for (int64_t i = 0; i < kernel; ++i)
            for (int64_t j = 0; j < kernel; ++j) {
              const int64_t idx = (bc * H + oy * stride + i) * W + ox * stride + j;
              if (px[idx] > px[best]) best = idx;
            }
          out[o] = px[best];
          arg[o] = best;
        } else {
          T acc = 0;
          for (int64_t i = 0; i < kernel; ++i)
            for (int64_t j = 0; j < kernel; ++j) acc += px[(bc * H + oy * stride + i) * W + ox * stride + j];
          out[o] = acc * inv;
        }
      }
    }
  }
  return make_result<T>(
      mode == PoolMode::max ? "max_pool2d" : "avg_pool2d", Shape{B, C, Ho, Wo}, std::move(out), {x},
      [x, mode, kernel, stride, B, C, H, W, Ho, Wo, inv, arg = std::move(arg)](std::span<const T> g) {
        auto gx = grad_of(x);
        if (mode == PoolMode::max) {
          for (size_t o = 0; o < g.size(); ++o) gx[arg[o]] += g[o];
          return;
        }
        for (int64_t bc = 0; bc < B * C; ++bc)
          for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox) {
              const T v = g[(bc * Ho + oy) * Wo + ox] * inv;
              for (int64_t i = 0; i < kernel; ++i)
                for (int64_t j = 0; j < kernel; ++j) gx[(bc * H + oy * stride + i) * W + ox * stride + j] += v;
            }
      });
}

template <typename T>
Tensor<T> adaptive_pool2d(const Tensor<T>& x, PoolMode mode) {
  require_rank("adaptive_pool2d", x.shape(), 4);
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (HW == 0) throw ShapeError("adaptive_pool2d: empty spatial extent");
  std::vector<T> out(static_cast<size_t>(B * C));
  std::vector<int64_t> arg(mode == PoolMode::max ? out.size() : 0);
  const T* px = x.data().data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* p = px + bc * HW;
    if (mode == PoolMode::max) {
      int64_t best = 0;
      for (int64_t i = 1; i < HW; ++i)
        if (p[i] > p[best]) best = i;
      out[bc] = p[best];
      arg[bc] = bc * HW + best;
    } else {
      T acc = 0;
      for (int64_t i = 0; i < HW; ++i) acc += p[i];
      out[bc] = acc / static_cast<T>(HW);
    }
  }
  return make_result<T>(mode == PoolMode::max ? "adaptive_max_pool" : "adaptive_avg_pool",
                        Shape{B, C, 1, 1}, std::move(out), {x},
                        [x, mode, HW, arg = std::move(arg)](std::span<const T> g) {
                          auto gx = grad_of(x);
                          for (size_t bc = 0; bc < g.size(); ++bc) {
                            if (mode == PoolMode::max) {
                              gx[arg[bc]] += g[bc];
                            } else {
                              const T v = g[bc] / static_cast<T>(HW);
                              for (int64_t i = 0; i < HW; ++i) gx[static_cast<int64_t>(bc) * HW + i] += v;
                            }
                          }
                        });
}

namespace {

// Source taps and weights for one axis of half-pixel x2 upsampling.
struct UpsampleAxis {
  std::vector<int64_t> lo, hi;
  std::vector<double> frac;
};

UpsampleAxis upsample_axis(int64_t n) {
  UpsampleAxis a;
  for (int64_t o = 0; o < 2 * n; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    const auto i0 = static_cast<int64_t>(std::floor(src));
    a.lo.push_back(std::min(i0, n - 1));
    a.hi.push_back(std::min(i0 + 1, n - 1));
    a.frac.push_back(src - static_cast<double>(i0));
  }
  return a;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  require_rank("upsample_bilinear2x", x.shape(), 4);
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = 2 * H, Wo = 2 * W;
  auto ay = std::make_shared<UpsampleAxis>(upsample_axis(H));
  auto ax = std::make_shared<UpsampleAxis>(upsample_axis(W));
  std::vector<T> out(static_cast<size_t>(B * C * Ho * Wo));
  const T* px = x.data().data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* p = px + bc * H * W;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      const T fy = static_cast<T>(ay->frac[oy]);
      const T* r0 = p + ay->lo[oy] * W;
      const T* r1 = p + ay->hi[oy] * W;
      T* dst = out.data() + (bc * Ho + oy) * Wo;
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const T fx = static_cast<T>(ax->frac[ox]);
        const int64_t x0 = ax->lo[ox], x1 = ax->hi[ox];
        const T top = r0[x0] * (T(1) - fx) + r0[x1] * fx;
        const T bot = r1[x0] * (T(1) - fx) + r1[x1] * fx;
        dst[ox] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return make_result<T>("upsample_bilinear2x", Shape{B, C, Ho, Wo}, std::move(out), {x},
                        [x, ay, ax, B, C, H, W, Ho, Wo](std::span<const T> g) {
                          auto gx = grad_of(x);
                          for (int64_t bc = 0; bc < B * C; ++bc) {
                            T* p = gx.data() + bc * H * W;
                            for (int64_t oy = 0; oy < Ho; ++oy) {
                              const T fy = static_cast<T>(ay->frac[oy]);
                              T* r0 = p + ay->lo[oy] * W;
                              T* r1 = p + ay->hi[oy] * W;
                              const T* src = g.data() + (bc * Ho + oy) * Wo;
                              for (int64_t ox = 0; ox < Wo; ++ox) {
                                const T fx = static_cast<T>(ax->frac[ox]);
                                const int64_t x0 = ax->lo[ox], x1 = ax->hi[ox];
                                const T v = src[ox];
                                r0[x0] += v * (T(1) - fx) * (T(1) - fy);
                                r0[x1] += v * fx * (T(1) - fy);
                                r1[x0] += v * (T(1) - fx) * fy;
                                r1[x1] += v * fx * fy;
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> grid_sample_bilinear(const Tensor<T>& x, const Tensor<T>& coords) {
  require_rank("grid_sample_bilinear", x.shape(), 4);
  require_rank("grid_sample_bilinear coords", coords.shape(), 5);
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t K = coords.dim(1), Ho = coords.dim(2), Wo = coords.dim(3);
  if (coords.dim(0) != B || coords.dim(4) != 2) {
    throw ShapeError("grid_sample_bilinear: coords " + shape_str(coords.shape()) + " for input " +
                     shape_str(x.shape()));
  }
  const int64_t P = K * Ho * Wo;  // sample points per batch item
  std::vector<T> out(static_cast<size_t>(B * C * P));
  const T* px = x.data().data();
  const T* pc = coords.data().data();
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t s = 0; s < P; ++s) {
      const T sx = pc[(b * P + s) * 2], sy = pc[(b * P + s) * 2 + 1];
      const T fx0 = std::floor(sx), fy0 = std::floor(sy);
      const auto x0 = static_cast<int64_t>(fx0), y0 = static_cast<int64_t>(fy0);
      const T ax = sx - fx0, ay = sy - fy0;
      const bool in_x0 = x0 >= 0 && x0 < W, in_x1 = x0 + 1 >= 0 && x0 + 1 < W;
      const bool in_y0 = y0 >= 0 && y0 < H, in_y1 = y0 + 1 >= 0 && y0 + 1 < H;
      const T w00 = (T(1) - ax) * (T(1) - ay), w01 = ax * (T(1) - ay);
      const T w10 = (T(1) - ax) * ay, w11 = ax * ay;
      for (int64_t c = 0; c < C; ++c) {
        const T* plane = px + (b * C + c) * H * W;
        T v = 0;
        if (in_y0 && in_x0) v += w00 * plane[y0 * W + x0];
        if (in_y0 && in_x1) v += w01 * plane[y0 * W + x0 + 1];
        if (in_y1 && in_x0) v += w10 * plane[(y0 + 1) * W + x0];
        if (in_y1 && in_x1) v += w11 * plane[(y0 + 1) * W + x0 + 1];
        out[(b * C + c) * P + s] = v;
      }
    }
  }
  return make_result<T>(
      "grid_sample_bilinear", Shape{B, C, K, Ho, Wo}, std::move(out), {x, coords},
      [x, coords, B, C, H, W, P](std::span<const T> g) {
        auto gx = grad_of(x);
        auto gc = grad_of(coords);
        const T* px = x.data().data();
        const T* pc = coords.data().data();
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t s = 0; s < P; ++s) {
            const T sx = pc[(b * P + s) * 2], sy = pc[(b * P + s) * 2 + 1];
            const T fx0 = std::floor(sx), fy0 = std::floor(sy);
            const auto x0 = static_cast<int64_t>(fx0), y0 = static_cast<int64_t>(fy0);
            const T ax = sx - fx0, ay = sy - fy0;
            const bool in_x0 = x0 >= 0 && x0 < W, in_x1 = x0 + 1 >= 0 && x0 + 1 < W;
            const bool in_y0 = y0 >= 0 && y0 < H, in_y1 = y0 + 1 >= 0 && y0 + 1 < H;
            T dsx = 0, dsy = 0;
            for (int64_t c = 0; c < C; ++c) {
              const T go = g[(b * C + c) * P + s];
              if (go == T(0)) continue;
              const int64_t base = (b * C + c) * H * W;
              const T v00 = (in_y0 && in_x0) ? px[base + y0 * W + x0] : T(0);
              const T v01 = (in_y0 && in_x1) ? px[base + y0 * W + x0 + 1] : T(0);
              const T v10 = (in_y1 && in_x0) ? px[base + (y0 + 1) * W + x0] : T(0);
              const T v11 = (in_y1 && in_x1) ? px[base + (y0 + 1) * W + x0 + 1] : T(0);
              if (!gc.empty()) {
                dsx += go * ((v01 - v00) * (T(1) - ay) + (v11 - v10) * ay);
                dsy += go * ((v10 - v00) * (T(1) - ax) + (v11 - v01) * ax);
              }
              if (!gx.empty()) {
                if (in_y0 && in_x0) gx[base + y0 * W + x0] += go * (T(1) - ax) * (T(1) - ay);
                if (in_y0 && in_x1) gx[base + y0 * W + x0 + 1] += go * ax * (T(1) - ay);
                if (in_y1 && in_x0) gx[base + (y0 + 1) * W + x0] += go * (T(1) - ax) * ay;
                if (in_y1 && in_x1) gx[base + (y0 + 1) * W + x0 + 1] += go * ax * ay;
              }
            }
            if (!gc.empty()) {
              gc[(b * P + s) * 2] += dsx;
              gc[(b * P + s) * 2 + 1] += dsy;
            }
          }
        }
      });
}

#define DM_INSTANTIATE(T)                                                                      \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);   \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> pool2d(const Tensor<T>&, PoolMode, int, int);                             \
  template Tensor<T> adaptive_pool2d(const Tensor<T>&, PoolMode);                              \
  template Tensor<T> upsample_bilinear2x(const Tensor<T>&);                                    \
  template Tensor<T> grid_sample_bilinear(const Tensor<T>&, const Tensor<T>&);

DM_INSTANTIATE(float)
DM_INSTANTIATE(double)
#undef DM_INSTANTIATE

}  // namespace dm
