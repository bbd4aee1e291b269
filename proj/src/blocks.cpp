#include "decomamba/blocks.hpp"

#include <algorithm>

namespace dm {

template <typename T>
CnnStem<T>::CnnStem(ParamStore<T>& store, const std::string& path, int64_t in_channels,
                    int64_t channels)
    : conv(store, join_path(path, "conv"), in_channels, channels, 7, 1, 3),
      bn(store, join_path(path, "bn"), channels) {}

template <typename T>
typename CnnStem<T>::Output CnnStem<T>::forward(const Tensor<T>& image, Mode mode) const {
  Output out;
  out.x1 = relu(bn(conv(image), mode));
  out.x2 = pool2d(out.x1, PoolMode::max, 2, 2);
  return out;
}

int64_t attention_gate_width(int64_t channels) { return std::max<int64_t>(channels / 2, 8); }

template <typename T>
AttentionGate<T>::AttentionGate(ParamStore<T>& store, const std::string& path,
                                int64_t x_channels, int64_t g_channels) {
  const int64_t f_int = attention_gate_width(x_channels);
  proj_x = Conv2d<T>(store, join_path(path, "conv_x"), x_channels, f_int, 1);
  proj_g = Conv2d<T>(store, join_path(path, "conv_g"), g_channels, f_int, 1);
  psi = Conv2d<T>(store, join_path(path, "psi"), f_int, 1, 1);
}

template <typename T>
GateOutput<T> AttentionGate<T>::forward(const Tensor<T>& x, const Tensor<T>& g) const {
  if (x.rank() != 4 || g.rank() != 4 || x.dim(0) != g.dim(0) || x.dim(2) != g.dim(2) ||
      x.dim(3) != g.dim(3)) {
    throw ShapeError("attention gate: feature " + shape_str(x.shape()) + " and gate " +
                     shape_str(g.shape()) + " are not spatially aligned");
  }
  GateOutput<T> out;
  out.attention_map = sigmoid(psi(add(proj_x(x), proj_g(g))));
  out.gated = mul(x, out.attention_map);
  return out;
}

template <typename T>
ChannelAttention<T>::ChannelAttention(ParamStore<T>& store, const std::string& path,
                                      int64_t channels, int reduction) {
  if (reduction < 1 || channels % reduction != 0) {
    throw ConfigError("channel attention: " + std::to_string(channels) +
                      " channels not divisible by reduction " + std::to_string(reduction));
  }
  const int64_t hidden = channels / reduction;
  fc1 = Conv2d<T>(store, join_path(path, "fc1"), channels, hidden, 1);
  fc2 = Conv2d<T>(store, join_path(path, "fc2"), hidden, channels, 1);
}

template <typename T>
Tensor<T> ChannelAttention<T>::scale(const Tensor<T>& x) const {
  auto branch = [this](const Tensor<T>& pooled) { return fc2(relu(fc1(pooled))); };
  return sigmoid(add(branch(adaptive_pool2d(x, PoolMode::max)),
                     branch(adaptive_pool2d(x, PoolMode::avg))));
}

template <typename T>
CoAttentionGate<T>::CoAttentionGate(ParamStore<T>& store, const std::string& path,
                                    int64_t skip_channels, int64_t dec_channels,
                                    int64_t out_channels, int reduction)
    : enc_gate(store, join_path(path, "ag_enc"), skip_channels, dec_channels),
      dec_gate(store, join_path(path, "ag_dec"), dec_channels, skip_channels),
      ca(store, join_path(path, "ca"), skip_channels + dec_channels, reduction),
      proj(store, join_path(path, "proj"), skip_channels + dec_channels, out_channels, 1) {}

template <typename T>
Tensor<T> CoAttentionGate<T>::forward(const Tensor<T>& skip, const Tensor<T>& dec) const {
  auto a = enc_gate.forward(skip, dec).gated;
  auto b = dec_gate.forward(dec, skip).gated;
  return proj(ca.forward(concat<T>({a, b}, 1)));
}

template <typename T>
Tensor<T> deformable_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                            const Tensor<T>& offsets, const Tensor<T>& mask_logits) {
  if (x.rank() != 4) throw ShapeError("deformable_conv2d: input " + shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  constexpr int64_t K = 9;
  if (weight.shape() != Shape{weight.dim(0), C, 3, 3}) {
    throw ShapeError("deformable_conv2d: weight " + shape_str(weight.shape()) + " for " +
                     std::to_string(C) + " input channels");
  }
  if (offsets.shape() != Shape{B, 2 * K, H, W} || mask_logits.shape() != Shape{B, K, H, W}) {
    throw ShapeError("deformable_conv2d: offsets " + shape_str(offsets.shape()) + " / mask " +
                     shape_str(mask_logits.shape()) + " for input " + shape_str(x.shape()));
  }
  const int64_t cout = weight.dim(0);

  std::vector<T> lattice(static_cast<size_t>(K * H * W * 2));
  for (int64_t k = 0; k < K; ++k)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        const size_t at = static_cast<size_t>(((k * H + h) * W + w) * 2);
        lattice[at] = static_cast<T>(w + (k % 3) - 1);
        lattice[at + 1] = static_cast<T>(h + (k / 3) - 1);
      }
  auto base = Tensor<T>::from_data({1, K, H, W, 2}, std::move(lattice));
  auto shift = permute(reshape(offsets, {B, K, 2, H, W}), {0, 1, 3, 4, 2});
  auto samples = grid_sample_bilinear(x, add(shift, base));  // [B,C,K,H,W]
  auto modulation = reshape(mul_scalar(sigmoid(mask_logits), T(2)), {B, 1, K, H, W});
  auto cols = reshape(mul(samples, modulation), {B, C * K, H * W});
  auto y = reshape(matmul(reshape(weight, {cout, C * K}), cols), {B, cout, H, W});
  return bias.defined() ? add(y, reshape(bias, {1, cout, 1, 1})) : y;
}

template <typename T>
DeformableConv2d<T>::DeformableConv2d(ParamStore<T>& store, const std::string& path, int64_t cin,
                                      int64_t cout)
    : offset_conv(store, join_path(path, "offset"), cin, 18, 3, 1, 1, true, true),
      mask_conv(store, join_path(path, "mask"), cin, 9, 3, 1, 1, true, true) {
  const Init init = Init::fan_in(cin * 9);
  weight = store.param(join_path(path, "weight"), {cout, cin, 3, 3}, init);
  bias = store.param(join_path(path, "bias"), {cout}, init);
}

template <typename T>
Tensor<T> DeformableConv2d<T>::forward(const Tensor<T>& x) const {
  return deformable_conv2d(x, weight, bias, offset_conv(x), mask_conv(x));
}

template <typename T>
DeformableResidualBlock<T>::DeformableResidualBlock(ParamStore<T>& store, const std::string& path,
                                                    int64_t cin, int64_t cout, bool deformable)
    : conv1(store, join_path(path, "conv1"), cin, cout, 3),
      bn1(store, join_path(path, "bn1"), cout) {
  // Both variants register the main kernel under conv2.* so they initialize identically.
  if (deformable) {
    deform.emplace(store, join_path(path, "conv2"), cout, cout);
  } else {
    conv2 = Conv2d<T>(store, join_path(path, "conv2"), cout, cout, 3);
  }
  bn2 = BatchNorm2d<T>(store, join_path(path, "bn2"), cout);
  if (cin != cout) shortcut.emplace(store, join_path(path, "shortcut"), cin, cout, 1);
}

template <typename T>
Tensor<T> DeformableResidualBlock<T>::forward(const Tensor<T>& x, Mode mode) const {
  auto h = relu(bn1(conv1(x), mode));
  h = deform ? deform->forward(h) : conv2(h);
  h = relu(bn2(h, mode));
  return add(h, shortcut ? (*shortcut)(x) : x);
}

template <typename T>
DistributionHead<T>::DistributionHead(ParamStore<T>& store, const std::string& path,
                                      int64_t channels, int64_t num_classes)
    : dw(store, join_path(path, "dw"), channels, 3),
      bn(store, join_path(path, "bn"), channels),
      proj(store, join_path(path, "proj"), channels, num_classes, 1) {}

template <typename T>
Tensor<T> DistributionHead<T>::forward(const Tensor<T>& feat, Mode mode) const {
  return proj(relu(bn(dw(feat), mode)));
}

#define DM_INSTANTIATE(T)                                                                   \
  template struct CnnStem<T>;                                                               \
  template struct AttentionGate<T>;                                                         \
  template struct ChannelAttention<T>;                                                      \
  template struct CoAttentionGate<T>;                                                       \
  template struct DeformableConv2d<T>;                                                      \
  template struct DeformableResidualBlock<T>;                                               \
  template struct DistributionHead<T>;                                                      \
  template Tensor<T> deformable_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                       const Tensor<T>&, const Tensor<T>&);

DM_INSTANTIATE(float)
DM_INSTANTIATE(double)
#undef DM_INSTANTIATE

}  // namespace dm
