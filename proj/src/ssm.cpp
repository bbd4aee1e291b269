#include "decomamba/ssm.hpp"

#include <cmath>

namespace dm {

template <typename T>
Discretized<T> discretize(const Tensor<T>& delta, const Tensor<T>& A, const Tensor<T>& B) {
  if (delta.rank() != 2 || A.rank() != 2 || B.rank() != 2 || A.dim(0) != delta.dim(1) ||
      B.dim(0) != delta.dim(0) || B.dim(1) != A.dim(1)) {
    throw ShapeError("discretize: delta " + shape_str(delta.shape()) + ", A " +
                     shape_str(A.shape()) + ", B " + shape_str(B.shape()));
  }
  for (T d : delta.data()) {
    if (!(d > T(0))) throw PreconditionError("discretize: delta must be positive");
  }
  const int64_t L = delta.dim(0), C = delta.dim(1), N = A.dim(1);
  auto d3 = reshape(delta, {L, C, 1});
  Discretized<T> out;
  out.decay = exp(mul(d3, reshape(A, {1, C, N})));
  out.input_gain = mul(d3, reshape(B, {L, 1, N}));
  return out;
}

const char* to_string(ScanDirection d) {
  switch (d) {
    case ScanDirection::row_forward: return "row-forward";
    case ScanDirection::row_backward: return "row-backward";
    case ScanDirection::col_forward: return "col-forward";
    case ScanDirection::col_backward: return "col-backward";
  }
  return "?";
}

template <typename T>
Tensor<T> to_sequence(const Tensor<T>& x, ScanDirection d) {
  const int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2) * x.dim(3);
  const bool by_column = d == ScanDirection::col_forward || d == ScanDirection::col_backward;
  auto seq = reshape(by_column ? permute(x, {0, 1, 3, 2}) : x, {B, C, L});
  const bool reversed = d == ScanDirection::row_backward || d == ScanDirection::col_backward;
  return reversed ? flip(seq, 2) : seq;
}

template <typename T>
Tensor<T> from_sequence(const Tensor<T>& seq, ScanDirection d, int64_t height, int64_t width) {
  const int64_t B = seq.dim(0), C = seq.dim(1);
  const bool reversed = d == ScanDirection::row_backward || d == ScanDirection::col_backward;
  auto s = reversed ? flip(seq, 2) : seq;
  const bool by_column = d == ScanDirection::col_forward || d == ScanDirection::col_backward;
  if (!by_column) return reshape(s, {B, C, height, width});
  return permute(reshape(s, {B, C, width, height}), {0, 1, 3, 2});
}

int64_t dt_rank_for(int64_t channels) { return std::max<int64_t>(1, channels / 16); }

template <typename T>
SS2D<T>::SS2D(ParamStore<T>& store, const std::string& path, int64_t channels_, int64_t state_,
              int64_t rank_)
    : channels(channels_), state(state_), rank(rank_) {
  A_log = store.param(join_path(path, "A_log"), {channels, state}, Init::zeros());
  for (int64_t c = 0; c < channels; ++c)
    for (int64_t n = 0; n < state; ++n) A_log.data()[c * state + n] = static_cast<T>(std::log(double(n + 1)));
  D = store.param(join_path(path, "D"), {channels}, Init::constant(1.0));
  for (ScanDirection d : kScanDirections) {
    const std::string dp = join_path(path, std::string("dir") + std::to_string(int(d)));
    auto& p = dirs[static_cast<size_t>(d)];
    p.x_proj = store.param(join_path(dp, "x_proj"), {rank + 2 * state, channels}, Init::fan_in(channels));
    p.dt_proj = store.param(join_path(dp, "dt_proj.weight"), {channels, rank}, Init::fan_in(rank));
    // Step sizes start log-uniform in [1e-3, 1e-1]; store their inverse softplus.
    const std::string bias_path = join_path(dp, "dt_proj.bias");
    p.dt_bias = store.param(bias_path, {channels}, Init::zeros());
    Rng rng = store.rng_for(bias_path);
    for (auto& v : p.dt_bias.data()) {
      const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
    }
  }
}

template <typename T>
Tensor<T> SS2D<T>::scan(const Tensor<T>& x, ScanDirection d) const {
  const int64_t H = x.dim(2), W = x.dim(3);
  const auto& p = dirs[static_cast<size_t>(d)];
  auto u = to_sequence(x, d);                      // [B,C,L]
  auto features = matmul(p.x_proj, u);             // [B,rank+2N,L]
  auto dt_low = slice(features, 1, 0, rank);
  auto Bm = slice(features, 1, rank, state);
  auto Cm = slice(features, 1, rank + state, state);
  auto delta = softplus(add(matmul(p.dt_proj, dt_low), reshape(p.dt_bias, {channels, 1})));
  auto A = neg(exp(A_log));
  return from_sequence(selective_scan(u, delta, A, Bm, Cm, D), d, H, W);
}

template <typename T>
Tensor<T> SS2D<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw ShapeError("ss2d: expected " + std::to_string(channels) + " channels, got " +
                     shape_str(x.shape()));
  }
  Tensor<T> acc;
  int used = 0;
  for (ScanDirection d : kScanDirections) {
    if (!active[static_cast<size_t>(d)]) continue;
    auto y = scan(x, d);
    acc = acc.defined() ? add(acc, y) : y;
    ++used;
  }
  if (used == 0) return Tensor<T>::zeros(x.shape());
  return merge == ScanMerge::mean ? mul_scalar(acc, T(1) / static_cast<T>(used)) : acc;
}

template <typename T>
VSSMB<T>::VSSMB(ParamStore<T>& store, const std::string& path, int64_t channels, int64_t state,
                int expand, ScanMerge merge)
    : norm_in(store, join_path(path, "norm_in"), channels, 1),
      in_proj(store, join_path(path, "in_proj"), channels, 2 * expand * channels, 1, 1, 0, false),
      dw(store, join_path(path, "dwconv"), expand * channels, 3),
      ss2d(store, join_path(path, "ss2d"), expand * channels, state, dt_rank_for(channels)),
      norm_out(store, join_path(path, "norm_out"), expand * channels, 1),
      out_proj(store, join_path(path, "out_proj"), expand * channels, channels, 1, 1, 0, false),
      inner(expand * channels) {
  ss2d.merge = merge;
}

template <typename T>
Tensor<T> VSSMB<T>::forward(const Tensor<T>& x) const {
  auto both = in_proj(norm_in(x));
  auto a = slice(both, 1, 0, inner);
  auto z = slice(both, 1, inner, inner);
  auto y = norm_out(ss2d.forward(silu(dw(a))));
  return add(x, out_proj(mul(y, silu(z))));
}

#define DM_INSTANTIATE(T)                                                                     \
  template Discretized<T> discretize(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> to_sequence(const Tensor<T>&, ScanDirection);                            \
  template Tensor<T> from_sequence(const Tensor<T>&, ScanDirection, int64_t, int64_t);        \
  template struct SS2D<T>;                                                                    \
  template struct VSSMB<T>;

DM_INSTANTIATE(float)
DM_INSTANTIATE(double)
#undef DM_INSTANTIATE

}  // namespace dm
