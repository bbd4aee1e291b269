#include <algorithm>
#include <cmath>

#include "decomamba/ops.hpp"
#include "op_util.hpp"

namespace dm {

using detail::grad_of;
using detail::make_result;

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                     BatchNormOptions options) {
  if (x.rank() != 4) throw ShapeError("batch_norm: expected [B,C,H,W], got " + shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->rank() != 1 || t->dim(0) != C) {
      throw ShapeError("batch_norm: parameter shape " + shape_str(t->shape()) + " for " +
                       std::to_string(C) + " channels");
    }
  }
  const int64_t n = B * HW;
  const bool training = mode == Mode::train;
  if (training && n < 2) {
    throw PreconditionError("batch_norm: train mode needs at least 2 values per channel, got " +
                            std::to_string(n));
  }
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
  for (int64_t c = 0; c < C; ++c) {
    T mu, var;
    if (training) {
      double acc = 0;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < HW; ++i) acc += px[(b * C + c) * HW + i];
      mu = static_cast<T>(acc / static_cast<double>(n));
      double sq = 0;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < HW; ++i) {
          const double d = px[(b * C + c) * HW + i] - mu;
          sq += d * d;
        }
      var = static_cast<T>(sq / static_cast<double>(n));
      const T m = static_cast<T>(options.momentum);
      running_mean.data()[c] = (T(1) - m) * running_mean.data()[c] + m * mu;
      running_var.data()[c] = (T(1) - m) * running_var.data()[c] +
                              m * static_cast<T>(sq / static_cast<double>(n - 1));
    } else {
      mu = running_mean.data()[c];
      var = running_var.data()[c];
    }
    const T is = T(1) / std::sqrt(var + static_cast<T>(options.eps));
    (*inv_std)[c] = is;
    const T gm = gamma.data()[c], bt = beta.data()[c];
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t i = 0; i < HW; ++i) {
        const int64_t k = (b * C + c) * HW + i;
        const T xh = (px[k] - mu) * is;
        (*xhat)[k] = xh;
        out[k] = gm * xh + bt;
      }
    }
  }
  return make_result<T>(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, B, C, HW, n, training](std::span<const T> g) {
        auto gx = grad_of(x);
        auto gg = grad_of(gamma);
        auto gbeta = grad_of(beta);
        for (int64_t c = 0; c < C; ++c) {
          T sum_g = 0, sum_gx = 0;
          for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < HW; ++i) {
              const int64_t k = (b * C + c) * HW + i;
              sum_g += g[k];
              sum_gx += g[k] * (*xhat)[k];
            }
          if (!gg.empty()) gg[c] += sum_gx;
          if (!gbeta.empty()) gbeta[c] += sum_g;
          if (gx.empty()) continue;
          const T gm = gamma.data()[c];
          const T is = (*inv_std)[c];
          for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < HW; ++i) {
              const int64_t k = (b * C + c) * HW + i;
              if (training) {
                gx[k] += gm * is *
                         (g[k] - sum_g / static_cast<T>(n) - (*xhat)[k] * sum_gx / static_cast<T>(n));
              } else {
                gx[k] += gm * is * g[k];
              }
            }
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, int axis,
                     double eps) {
  axis = detail::normalize_axis(axis, x.rank());
  const auto s = detail::split_axis(x.shape(), axis);
  for (const Tensor<T>* t : {&gamma, &beta}) {
    if (t->rank() != 1 || t->dim(0) != s.extent) {
      throw ShapeError("layer_norm: parameter shape " + shape_str(t->shape()) + " for extent " +
                       std::to_string(s.extent));
    }
  }
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(s.outer * s.inner));
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
  const T* pg = gamma.data().data();
  const T* pb = beta.data().data();
  const T n = static_cast<T>(s.extent);
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t i = 0; i < s.inner; ++i) {
      const int64_t base = o * s.extent * s.inner + i;
      T mu = 0;
      for (int64_t e = 0; e < s.extent; ++e) mu += px[base + e * s.inner];
      mu /= n;
      T var = 0;
      for (int64_t e = 0; e < s.extent; ++e) {
        const T d = px[base + e * s.inner] - mu;
        var += d * d;
      }
      var /= n;
      const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
      (*inv_std)[o * s.inner + i] = is;
      for (int64_t e = 0; e < s.extent; ++e) {
        const int64_t k = base + e * s.inner;
        const T xh = (px[k] - mu) * is;
        (*xhat)[k] = xh;
        out[k] = pg[e] * xh + pb[e];
      }
    }
  }
  return make_result<T>("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                        [x, gamma, beta, xhat, inv_std, s, n](std::span<const T> g) {
                          auto gx = grad_of(x);
                          auto gg = grad_of(gamma);
                          auto gbeta = grad_of(beta);
                          const T* pg = gamma.data().data();
                          for (int64_t o = 0; o < s.outer; ++o) {
                            for (int64_t i = 0; i < s.inner; ++i) {
                              const int64_t base = o * s.extent * s.inner + i;
                              T sum_gh = 0, sum_ghx = 0;
                              for (int64_t e = 0; e < s.extent; ++e) {
                                const int64_t k = base + e * s.inner;
                                const T gh = g[k] * pg[e];
                                sum_gh += gh;
                                sum_ghx += gh * (*xhat)[k];
                                if (!gg.empty()) gg[e] += g[k] * (*xhat)[k];
                                if (!gbeta.empty()) gbeta[e] += g[k];
                              }
                              if (gx.empty()) continue;
                              const T is = (*inv_std)[o * s.inner + i];
                              for (int64_t e = 0; e < s.extent; ++e) {
                                const int64_t k = base + e * s.inner;
                                gx[k] += is * (g[k] * pg[e] - sum_gh / n - (*xhat)[k] * sum_ghx / n);
                              }
                            }
                          }
                        });
}

namespace {

// [B,N,L] -> [B,L,N] so the state loop reads contiguous memory.
template <typename T>
std::vector<T> to_time_major(std::span<const T> src, int64_t B, int64_t N, int64_t L) {
  std::vector<T> dst(src.size());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t n = 0; n < N; ++n)
      for (int64_t t = 0; t < L; ++t) dst[(b * L + t) * N + n] = src[(b * N + n) * L + t];
  return dst;
}

}  // namespace

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& A,
                         const Tensor<T>& Bm, const Tensor<T>& Cm, const Tensor<T>& D) {
  if (u.rank() != 3) throw ShapeError("selective_scan: u must be [B,C,L], got " + shape_str(u.shape()));
  const int64_t Bn = u.dim(0), Ch = u.dim(1), L = u.dim(2);
  if (A.rank() != 2 || A.dim(0) != Ch) throw ShapeError("selective_scan: A shape " + shape_str(A.shape()));
  const int64_t N = A.dim(1);
  if (delta.shape() != u.shape()) throw ShapeError("selective_scan: delta shape " + shape_str(delta.shape()));
  const Shape bc_shape{Bn, N, L};
  if (Bm.shape() != bc_shape || Cm.shape() != bc_shape) {
    throw ShapeError("selective_scan: B/C must be " + shape_str(bc_shape));
  }
  if (D.rank() != 1 || D.dim(0) != Ch) throw ShapeError("selective_scan: D shape " + shape_str(D.shape()));
  for (T d : delta.data()) {
    if (!(d > T(0))) throw PreconditionError("selective_scan: step size delta must be positive");
  }

  const auto Bt = to_time_major<T>(Bm.data(), Bn, N, L);
  const auto Ct = to_time_major<T>(Cm.data(), Bn, N, L);
  std::vector<T> out(static_cast<size_t>(u.numel()));
  const T* pu = u.data().data();
  const T* pd = delta.data().data();
  const T* pA = A.data().data();
  const T* pD = D.data().data();
  // Sequences are independent; each chunk owns its slice of `out`.
  parallel_for(Bn * Ch, [&](int64_t begin, int64_t end) {
    std::vector<T> h(static_cast<size_t>(N));
    for (int64_t bc = begin; bc < end; ++bc) {
      const int64_t b = bc / Ch, c = bc % Ch;
      std::fill(h.begin(), h.end(), T(0));
      const T* a_row = pA + c * N;
      const int64_t seq = bc * L;
      for (int64_t t = 0; t < L; ++t) {
        const T d = pd[seq + t], x = pu[seq + t];
        const T* bt = Bt.data() + (b * L + t) * N;
        const T* ct = Ct.data() + (b * L + t) * N;
        T y = 0;
        for (int64_t n = 0; n < N; ++n) {
          h[n] = std::exp(d * a_row[n]) * h[n] + d * bt[n] * x;
          y += ct[n] * h[n];
        }
        out[seq + t] = y + pD[c] * x;
      }
    }
  });
  MacCounter::record(static_cast<uint64_t>(Bn * Ch * L * N));

  return make_result<T>(
      "selective_scan", u.shape(), std::move(out), {u, delta, A, Bm, Cm, D},
      [u, delta, A, Bm, Cm, D, Bn, Ch, L, N](std::span<const T> g) {
        auto gu = grad_of(u);
        auto gdelta = grad_of(delta);
        auto gA = grad_of(A);
        auto gB = grad_of(Bm);
        auto gC = grad_of(Cm);
        auto gD = grad_of(D);
        const auto Bt = to_time_major<T>(Bm.data(), Bn, N, L);
        const auto Ct = to_time_major<T>(Cm.data(), Bn, N, L);
        std::vector<T> gBt(gB.empty() ? 0 : Bt.size(), T(0));
        std::vector<T> gCt(gC.empty() ? 0 : Ct.size(), T(0));
        std::vector<T> hs(static_cast<size_t>(L * N));
        std::vector<T> decay(static_cast<size_t>(L * N));
        std::vector<T> dh(static_cast<size_t>(N));
        const T* pu = u.data().data();
        const T* pd = delta.data().data();
        const T* pA = A.data().data();
        const T* pD = D.data().data();
        for (int64_t b = 0; b < Bn; ++b) {
          for (int64_t c = 0; c < Ch; ++c) {
            const T* a_row = pA + c * N;
            const int64_t seq = (b * Ch + c) * L;
            // Recompute the state trajectory for this sequence.
            for (int64_t t = 0; t < L; ++t) {
              const T d = pd[seq + t], x = pu[seq + t];
              const T* bt = Bt.data() + (b * L + t) * N;
              for (int64_t n = 0; n < N; ++n) {
                const T a = std::exp(d * a_row[n]);
                const T prev = t > 0 ? hs[(t - 1) * N + n] : T(0);
                decay[t * N + n] = a;
                hs[t * N + n] = a * prev + d * bt[n] * x;
              }
            }
            std::fill(dh.begin(), dh.end(), T(0));
            T gD_acc = 0;
            for (int64_t t = L - 1; t >= 0; --t) {
              const T gy = g[seq + t];
              const T d = pd[seq + t], x = pu[seq + t];
              const T* bt = Bt.data() + (b * L + t) * N;
              const T* ct = Ct.data() + (b * L + t) * N;
              T gx = pD[c] * gy;
              T gd = 0;
              gD_acc += gy * x;
              for (int64_t n = 0; n < N; ++n) {
                dh[n] += ct[n] * gy;
                if (!gCt.empty()) gCt[(b * L + t) * N + n] += gy * hs[t * N + n];
                const T a = decay[t * N + n];
                const T prev = t > 0 ? hs[(t - 1) * N + n] : T(0);
                const T g_a = dh[n] * prev;
                gd += g_a * a * a_row[n] + dh[n] * bt[n] * x;
                if (!gA.empty()) gA[c * N + n] += g_a * a * d;
                if (!gBt.empty()) gBt[(b * L + t) * N + n] += dh[n] * d * x;
                gx += dh[n] * d * bt[n];
                dh[n] *= a;
              }
              if (!gu.empty()) gu[seq + t] += gx;
              if (!gdelta.empty()) gdelta[seq + t] += gd;
            }
            if (!gD.empty()) gD[c] += gD_acc;
          }
        }
        for (int64_t b = 0; b < Bn; ++b)
          for (int64_t n = 0; n < N; ++n)
            for (int64_t t = 0; t < L; ++t) {
              if (!gB.empty()) gB[(b * N + n) * L + t] += gBt[(b * L + t) * N + n];
              if (!gC.empty()) gC[(b * N + n) * L + t] += gCt[(b * L + t) * N + n];
            }
      });
}

#define DM_INSTANTIATE(T)                                                                       \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                Tensor<T>&, Tensor<T>&, Mode, BatchNormOptions);                \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,      \
                                double);                                                        \
  template Tensor<T> selective_scan(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                    const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

DM_INSTANTIATE(float)
DM_INSTANTIATE(double)
#undef DM_INSTANTIATE

}  // namespace dm
