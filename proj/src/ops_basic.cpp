#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <thread>

#include "decomamba/ops.hpp"
#include "gemm.hpp"
#include "op_util.hpp"

namespace dm {

using detail::grad_of;
using detail::make_result;

namespace {

thread_local MacCounter* g_mac_counter = nullptr;

// ---------------------------------------------------------------- broadcast

struct Broadcast {
  Shape out;
  std::vector<int64_t> stride_a;
  std::vector<int64_t> stride_b;
};

std::vector<int64_t> contiguous_strides(const Shape& shape) {
  std::vector<int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    s[static_cast<size_t>(i)] = s[static_cast<size_t>(i) + 1] * shape[static_cast<size_t>(i) + 1];
  }
  return s;
}

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  const size_t r = std::max(a.size(), b.size());
  Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  const auto sa = contiguous_strides(pa);
  const auto sb = contiguous_strides(pb);
  Broadcast plan;
  plan.out.resize(r);
  plan.stride_a.resize(r);
  plan.stride_b.resize(r);
  for (size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
    plan.out[i] = std::max(pa[i], pb[i]);
    if (pa[i] == 0 || pb[i] == 0) plan.out[i] = 0;
    plan.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    plan.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return plan;
}

// Calls f(out_index, a_index, b_index) over the broadcast output in row-major order.
template <typename F>
void for_each_broadcast(const Broadcast& plan, F&& f) {
  const int r = static_cast<int>(plan.out.size());
  const int64_t total = numel_of(plan.out);
  if (total == 0) return;
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const int64_t last = plan.out.back();
  const int64_t sa_last = plan.stride_a.back();
  const int64_t sb_last = plan.stride_b.back();
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t ia = 0, ib = 0, o = 0;
  for (int64_t row = 0; row < total / last; ++row) {
    for (int64_t j = 0; j < last; ++j) f(o++, ia + j * sa_last, ib + j * sb_last);
    for (int d = r - 2; d >= 0; --d) {
      const auto du = static_cast<size_t>(d);
      ++idx[du];
      ia += plan.stride_a[du];
      ib += plan.stride_b[du];
      if (idx[du] < plan.out[du]) break;
      ia -= plan.stride_a[du] * plan.out[du];
      ib -= plan.stride_b[du] * plan.out[du];
      idx[du] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul, div };

template <typename T>
T grad_a(BinaryKind kind, T g, T, T b) {
  switch (kind) {
    case BinaryKind::mul: return g * b;
    case BinaryKind::div: return g / b;
    default: return g;
  }
}

template <typename T>
T grad_b(BinaryKind kind, T g, T a, T b) {
  switch (kind) {
    case BinaryKind::add: return g;
    case BinaryKind::sub: return -g;
    case BinaryKind::mul: return g * a;
    default: return -g * a / (b * b);
  }
}

template <typename T>
Tensor<T> binary(const char* op, BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  auto apply = [kind](T x, T y) {
    switch (kind) {
      case BinaryKind::add: return x + y;
      case BinaryKind::sub: return x - y;
      case BinaryKind::mul: return x * y;
      default: return x / y;
    }
  };
  if (a.shape() == b.shape()) {
    std::vector<T> out(static_cast<size_t>(a.numel()));
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = apply(pa[i], pb[i]);
    return make_result<T>(op, a.shape(), std::move(out), {a, b},
                          [a, b, kind](std::span<const T> g) {
                            auto ga = grad_of(a);
                            auto gb = grad_of(b);
                            const T* pa = a.data().data();
                            const T* pb = b.data().data();
                            for (size_t i = 0; i < g.size(); ++i) {
                              if (!ga.empty()) ga[i] += grad_a(kind, g[i], pa[i], pb[i]);
                              if (!gb.empty()) gb[i] += grad_b(kind, g[i], pa[i], pb[i]);
                            }
                          });
  }
  Broadcast plan = plan_broadcast(op, a.shape(), b.shape());
  std::vector<T> out(static_cast<size_t>(numel_of(plan.out)));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for_each_broadcast(plan, [&](int64_t o, int64_t ia, int64_t ib) { out[o] = apply(pa[ia], pb[ib]); });
  Shape out_shape = plan.out;
  return make_result<T>(op, std::move(out_shape), std::move(out), {a, b},
                        [a, b, kind, plan](std::span<const T> g) {
                          auto ga = grad_of(a);
                          auto gb = grad_of(b);
                          const T* pa = a.data().data();
                          const T* pb = b.data().data();
                          for_each_broadcast(plan, [&](int64_t o, int64_t ia, int64_t ib) {
                            if (!ga.empty()) ga[ia] += grad_a(kind, g[o], pa[ia], pb[ib]);
                            if (!gb.empty()) gb[ib] += grad_b(kind, g[o], pa[ia], pb[ib]);
                          });
                        });
}

// Elementwise map with derivative recomputed from the input in backward.
template <typename T, typename F, typename DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df) {
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(px[i]);
  return make_result<T>(op, x.shape(), std::move(out), {x}, [x, df](std::span<const T> g) {
    auto gx = grad_of(x);
    const T* px = x.data().data();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(px[i]);
  });
}

template <typename T>
T stable_sigmoid(T v) {
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T v) {
  // log rather than log1p: glibc's log1pf stalls after AVX code runs.
  return std::max(v, T(0)) + std::log(T(1) + std::exp(-std::abs(v)));
}

}  // namespace

// ------------------------------------------------------------------ counters

MacCounter::MacCounter() : previous_(g_mac_counter) { g_mac_counter = this; }
MacCounter::~MacCounter() {
  g_mac_counter = previous_;
  if (previous_ != nullptr) previous_->total_ += total_;
}
void MacCounter::record(uint64_t macs) {
  if (g_mac_counter != nullptr) g_mac_counter->total_ += macs;
}

int thread_count() {
  static const int count = [] {
    int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("DM_THREADS")) {
      const int cap = std::atoi(env);
      if (cap >= 1) hw = std::min(hw, cap);
    }
    return hw;
  }();
  return count;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  const int64_t workers = std::min<int64_t>(thread_count(), n);
  if (workers <= 1) {
    if (n > 0) fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  const int64_t chunk = (n + workers - 1) / workers;
  for (int64_t w = 0; w < workers; ++w) {
    const int64_t begin = w * chunk, end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// --------------------------------------------------------------- elementwise

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("add", BinaryKind::add, a, b);
}
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("sub", BinaryKind::sub, a, b);
}
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("mul", BinaryKind::mul, a, b);
}
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("div", BinaryKind::div, a, b);
}

template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary<T>("add_scalar", x, [value](T v) { return v + value; }, [](T) { return T(1); });
}
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, T value) {
  return unary<T>("mul_scalar", x, [value](T v) { return v * value; }, [value](T) { return value; });
}
template <typename T> Tensor<T> neg(const Tensor<T>& x) {
  return unary<T>("neg", x, [](T v) { return -v; }, [](T) { return T(-1); });
}
template <typename T> Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}
template <typename T> Tensor<T> log(const Tensor<T>& x) {
  return unary<T>("log", x, [](T v) { return std::log(v); }, [](T v) { return T(1) / v; });
}
template <typename T> Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                  [](T v) { return v > T(0) ? T(1) : T(0); });
}
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>("sigmoid", x, [](T v) { return stable_sigmoid(v); }, [](T v) {
    const T s = stable_sigmoid(v);
    return s * (T(1) - s);
  });
}
template <typename T> Tensor<T> silu(const Tensor<T>& x) {
  return unary<T>("silu", x, [](T v) { return v * stable_sigmoid(v); }, [](T v) {
    const T s = stable_sigmoid(v);
    return s + v * s * (T(1) - s);
  });
}
template <typename T> Tensor<T> softplus(const Tensor<T>& x) {
  return unary<T>("softplus", x, [](T v) { return stable_softplus(v); },
                  [](T v) { return stable_sigmoid(v); });
}
template <typename T> Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  return unary<T>("clamp_min", x, [lo](T v) { return v > lo ? v : lo; },
                  [lo](T v) { return v > lo ? T(1) : T(0); });
}

// -------------------------------------------------------------------- matmul

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands must have rank >= 2");
  const int64_t M = a.dim(-2), K = a.dim(-1), N = b.dim(-1);
  if (b.dim(-2) != K) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  if (batch_a == batch_b || batch_b.empty()) {
    batch = batch_a;
  } else if (batch_a.empty()) {
    batch = batch_b;
  } else {
    throw ShapeError("matmul: batch dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int64_t nb = numel_of(batch);
  const bool a_batched = !batch_a.empty();
  const bool b_batched = !batch_b.empty();
  std::vector<T> out(static_cast<size_t>(nb * M * N));
  for (int64_t i = 0; i < nb; ++i) {
    CMap A(a.data().data() + (a_batched ? i * M * K : 0), M, K);
    CMap B(b.data().data() + (b_batched ? i * K * N : 0), K, N);
    MMap C(out.data() + i * M * N, M, N);
    detail::product(C, A, B, false);
  }
  MacCounter::record(static_cast<uint64_t>(nb * M * N * K));
  Shape out_shape = batch;
  out_shape.push_back(M);
  out_shape.push_back(N);
  return make_result<T>("matmul", std::move(out_shape), std::move(out), {a, b},
                        [a, b, nb, M, K, N, a_batched, b_batched](std::span<const T> g) {
                          auto ga = grad_of(a);
                          auto gb = grad_of(b);
                          for (int64_t i = 0; i < nb; ++i) {
                            CMap G(g.data() + i * M * N, M, N);
                            if (!ga.empty()) {
                              CMap B(b.data().data() + (b_batched ? i * K * N : 0), K, N);
                              MMap GA(ga.data() + (a_batched ? i * M * K : 0), M, K);
                              detail::product(GA, G, B.transpose(), true);
                            }
                            if (!gb.empty()) {
                              CMap A(a.data().data() + (a_batched ? i * M * K : 0), M, K);
                              MMap GB(gb.data() + (b_batched ? i * K * N : 0), K, N);
                              detail::product(GB, A.transpose(), G, true);
                            }
                          }
                        });
}

// ------------------------------------------------------------- shape changes

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one inferred extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) shape[static_cast<size_t>(infer)] = known == 0 ? 0 : x.numel() / known;
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {x}, [x](std::span<const T> g) {
    auto gx = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) throw ShapeError("permute: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }
  const auto in_strides = contiguous_strides(x.shape());
  Shape out_shape(static_cast<size_t>(r));
  // Strides of the input expressed in output-axis order.
  Broadcast plan;
  plan.stride_a.resize(static_cast<size_t>(r));
  plan.stride_b.assign(static_cast<size_t>(r), 0);
  for (int i = 0; i < r; ++i) {
    out_shape[static_cast<size_t>(i)] = x.shape()[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    plan.stride_a[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  }
  plan.out = out_shape;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
  for_each_broadcast(plan, [&](int64_t o, int64_t ia, int64_t) { out[o] = px[ia]; });
  return make_result<T>("permute", std::move(out_shape), std::move(out), {x},
                        [x, plan](std::span<const T> g) {
                          auto gx = grad_of(x);
                          for_each_broadcast(plan, [&](int64_t o, int64_t ia, int64_t) { gx[ia] += g[o]; });
                        });
}

template <typename T>
Tensor<T> flip(const Tensor<T>& x, int axis) {
  axis = detail::normalize_axis(axis, x.rank());
  const auto s = detail::split_axis(x.shape(), axis);
  auto index = [s](int64_t o, int64_t e, int64_t i) { return (o * s.extent + e) * s.inner + i; };
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t e = 0; e < s.extent; ++e)
      std::copy_n(px + index(o, s.extent - 1 - e, 0), s.inner, out.begin() + index(o, e, 0));
  return make_result<T>("flip", x.shape(), std::move(out), {x}, [x, s, index](std::span<const T> g) {
    auto gx = grad_of(x);
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t e = 0; e < s.extent; ++e)
        for (int64_t i = 0; i < s.inner; ++i) gx[index(o, s.extent - 1 - e, i)] += g[index(o, e, i)];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  axis = detail::normalize_axis(axis, xs.front().rank());
  Shape out_shape = xs.front().shape();
  int64_t total = 0;
  for (const auto& x : xs) {
    if (x.rank() != xs.front().rank()) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < x.rank(); ++i) {
      if (i != axis && x.shape()[static_cast<size_t>(i)] != out_shape[static_cast<size_t>(i)]) {
        throw ShapeError("concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(xs.front().shape()));
      }
    }
    total += x.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = total;
  const auto so = detail::split_axis(out_shape, axis);
  std::vector<T> out(static_cast<size_t>(numel_of(out_shape)));
  int64_t offset = 0;
  for (const auto& x : xs) {
    const int64_t ext = x.dim(axis);
    const T* px = x.data().data();
    for (int64_t o = 0; o < so.outer; ++o) {
      std::copy_n(px + o * ext * so.inner, ext * so.inner,
                  out.begin() + (o * so.extent + offset) * so.inner);
    }
    offset += ext;
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), xs,
                        [xs, axis, so](std::span<const T> g) {
                          int64_t offset = 0;
                          for (const auto& x : xs) {
                            const int64_t ext = x.dim(axis);
                            auto gx = grad_of(x);
                            if (!gx.empty()) {
                              for (int64_t o = 0; o < so.outer; ++o) {
                                const T* src = g.data() + (o * so.extent + offset) * so.inner;
                                T* dst = gx.data() + o * ext * so.inner;
                                for (int64_t i = 0; i < ext * so.inner; ++i) dst[i] += src[i];
                              }
                            }
                            offset += ext;
                          }
                        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t length) {
  axis = detail::normalize_axis(axis, x.rank());
  const auto s = detail::split_axis(x.shape(), axis);
  if (start < 0 || length < 0 || start + length > s.extent) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for extent " + std::to_string(s.extent));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = length;
  std::vector<T> out(static_cast<size_t>(numel_of(out_shape)));
  const T* px = x.data().data();
  for (int64_t o = 0; o < s.outer; ++o) {
    std::copy_n(px + (o * s.extent + start) * s.inner, length * s.inner,
                out.begin() + o * length * s.inner);
  }
  return make_result<T>("slice", std::move(out_shape), std::move(out), {x},
                        [x, s, start, length](std::span<const T> g) {
                          auto gx = grad_of(x);
                          for (int64_t o = 0; o < s.outer; ++o) {
                            T* dst = gx.data() + (o * s.extent + start) * s.inner;
                            const T* src = g.data() + o * length * s.inner;
                            for (int64_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
                          }
                        });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>("sum", {}, {total}, {x}, [x](std::span<const T> g) {
    auto gx = grad_of(x);
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim) {
  axis = detail::normalize_axis(axis, x.rank());
  const auto s = detail::split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[static_cast<size_t>(axis)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
  }
  std::vector<T> out(static_cast<size_t>(s.outer * s.inner), T(0));
  const T* px = x.data().data();
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t e = 0; e < s.extent; ++e)
      for (int64_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += px[(o * s.extent + e) * s.inner + i];
  return make_result<T>("sum_axis", std::move(out_shape), std::move(out), {x},
                        [x, s](std::span<const T> g) {
                          auto gx = grad_of(x);
                          for (int64_t o = 0; o < s.outer; ++o)
                            for (int64_t e = 0; e < s.extent; ++e)
                              for (int64_t i = 0; i < s.inner; ++i)
                                gx[(o * s.extent + e) * s.inner + i] += g[o * s.inner + i];
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim) {
  const int64_t n = x.dim(axis);
  if (n == 0) throw ShapeError("mean over empty axis");
  return mul_scalar(sum(x, axis, keepdim), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> max(const Tensor<T>& x, int axis, bool keepdim) {
  axis = detail::normalize_axis(axis, x.rank());
  const auto s = detail::split_axis(x.shape(), axis);
  if (s.extent == 0) throw ShapeError("max over empty axis");
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[static_cast<size_t>(axis)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
  }
  std::vector<T> out(static_cast<size_t>(s.outer * s.inner));
  std::vector<int64_t> arg(out.size());
  const T* px = x.data().data();
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t i = 0; i < s.inner; ++i) {
      int64_t best = (o * s.extent) * s.inner + i;
      for (int64_t e = 1; e < s.extent; ++e) {
        const int64_t idx = (o * s.extent + e) * s.inner + i;
        if (px[idx] > px[best]) best = idx;
      }
      out[o * s.inner + i] = px[best];
      arg[o * s.inner + i] = best;
    }
  }
  return make_result<T>("max_axis", std::move(out_shape), std::move(out), {x},
                        [x, arg = std::move(arg)](std::span<const T> g) {
                          auto gx = grad_of(x);
                          for (size_t k = 0; k < g.size(); ++k) gx[arg[k]] += g[k];
                        });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  axis = detail::normalize_axis(axis, x.rank());
  const auto s = detail::split_axis(x.shape(), axis);
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t i = 0; i < s.inner; ++i) {
      const int64_t base = o * s.extent * s.inner + i;
      T m = px[base];
      for (int64_t e = 1; e < s.extent; ++e) m = std::max(m, px[base + e * s.inner]);
      T acc = 0;
      for (int64_t e = 0; e < s.extent; ++e) acc += std::exp(px[base + e * s.inner] - m);
      const T lse = m + std::log(acc);
      for (int64_t e = 0; e < s.extent; ++e) out[base + e * s.inner] = px[base + e * s.inner] - lse;
    }
  }
  // Backward needs softmax = exp(output); keep a copy of the output.
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_result<T>("log_softmax", x.shape(), std::move(out), {x},
                        [x, s, saved](std::span<const T> g) {
                          auto gx = grad_of(x);
                          const auto& y = *saved;
                          for (int64_t o = 0; o < s.outer; ++o) {
                            for (int64_t i = 0; i < s.inner; ++i) {
                              const int64_t base = o * s.extent * s.inner + i;
                              T gsum = 0;
                              for (int64_t e = 0; e < s.extent; ++e) gsum += g[base + e * s.inner];
                              for (int64_t e = 0; e < s.extent; ++e) {
                                const int64_t k = base + e * s.inner;
                                gx[k] += g[k] - std::exp(y[k]) * gsum;
                              }
                            }
                          }
                        });
}

#define DM_INSTANTIATE(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                  \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                  \
  template Tensor<T> neg(const Tensor<T>&);                                            \
  template Tensor<T> exp(const Tensor<T>&);                                            \
  template Tensor<T> log(const Tensor<T>&);                                            \
  template Tensor<T> relu(const Tensor<T>&);                                           \
  template Tensor<T> sigmoid(const Tensor<T>&);                                        \
  template Tensor<T> silu(const Tensor<T>&);                                           \
  template Tensor<T> softplus(const Tensor<T>&);                                       \
  template Tensor<T> clamp_min(const Tensor<T>&, T);                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                 \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);               \
  template Tensor<T> flip(const Tensor<T>&, int);                                      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                       \
  template Tensor<T> slice(const Tensor<T>&, int, int64_t, int64_t);                   \
  template Tensor<T> sum(const Tensor<T>&);                                            \
  template Tensor<T> mean(const Tensor<T>&);                                           \
  template Tensor<T> sum(const Tensor<T>&, int, bool);                                 \
  template Tensor<T> mean(const Tensor<T>&, int, bool);                                \
  template Tensor<T> max(const Tensor<T>&, int, bool);                                 \
  template Tensor<T> log_softmax(const Tensor<T>&, int);

DM_INSTANTIATE(float)
DM_INSTANTIATE(double)
#undef DM_INSTANTIATE

}  // namespace dm
