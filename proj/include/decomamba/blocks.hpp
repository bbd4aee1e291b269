#pragma once

#include <optional>
#include <string>

#include "decomamba/layers.hpp"

namespace dm {

/// 7x7 conv + BN + ReLU at full resolution, then 2x2 max-pool.
template <typename T>
struct CnnStem {
  struct Output {
    Tensor<T> x1;  // [B,C1,H,W]
    Tensor<T> x2;  // [B,C1,H/2,W/2]
  };

  Conv2d<T> conv;
  BatchNorm2d<T> bn;

  CnnStem() = default;
  CnnStem(ParamStore<T>& store, const std::string& path, int64_t in_channels, int64_t channels);
  Output forward(const Tensor<T>& image, Mode mode) const;
};

template <typename T>
struct GateOutput {
  Tensor<T> gated;          // x * attention_map
  Tensor<T> attention_map;  // [B,1,H,W], values in (0,1)
};

/// Intermediate width of an attention gate gating `channels` features.
int64_t attention_gate_width(int64_t channels);

/// alpha = sigmoid(psi(Wx x + Wg g)); output x * alpha.
template <typename T>
struct AttentionGate {
  Conv2d<T> proj_x, proj_g, psi;

  AttentionGate() = default;
  AttentionGate(ParamStore<T>& store, const std::string& path, int64_t x_channels,
                int64_t g_channels);
  GateOutput<T> forward(const Tensor<T>& x, const Tensor<T>& g) const;
};

/// x * sigmoid(mlp(maxpool(x)) + mlp(avgpool(x))) with one bottleneck MLP
/// (C -> C/r -> C, 1x1 convs) shared by both pooled descriptors.
template <typename T>
struct ChannelAttention {
  Conv2d<T> fc1, fc2;

  ChannelAttention() = default;
  ChannelAttention(ParamStore<T>& store, const std::string& path, int64_t channels, int reduction);
  /// Per-channel scale [B,C,1,1] in (0,1).
  Tensor<T> scale(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x) const { return mul(x, scale(x)); }
};

/// Two attention gates with encoder/decoder roles swapped, concatenated,
/// refined by channel attention and projected to `out_channels`.
template <typename T>
struct CoAttentionGate {
  AttentionGate<T> enc_gate;  // x = skip, g = decoder
  AttentionGate<T> dec_gate;  // x = decoder, g = skip
  ChannelAttention<T> ca;
  Conv2d<T> proj;

  CoAttentionGate() = default;
  CoAttentionGate(ParamStore<T>& store, const std::string& path, int64_t skip_channels,
                  int64_t dec_channels, int64_t out_channels, int reduction);
  Tensor<T> forward(const Tensor<T>& skip, const Tensor<T>& dec) const;
};

/// Modulated deformable 3x3 convolution (stride 1, padding 1):
///   y(p) = b + sum_k w_k * m_k(p) * x(p + p_k + offset_k(p)),  m = 2 * sigmoid(mask_logits)
/// offsets [B,18,H,W] holds (dx, dy) pairs per tap in row-major tap order;
/// mask_logits [B,9,H,W]. The modulation is shared across input channels.
template <typename T>
Tensor<T> deformable_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                            const Tensor<T>& offsets, const Tensor<T>& mask_logits);

/// Deformable conv whose offset and modulation branches are zero-initialized
/// 3x3 convs over its own input, so it starts out as a standard conv.
template <typename T>
struct DeformableConv2d {
  Tensor<T> weight, bias;
  Conv2d<T> offset_conv, mask_conv;

  DeformableConv2d() = default;
  DeformableConv2d(ParamStore<T>& store, const std::string& path, int64_t cin, int64_t cout);
  Tensor<T> forward(const Tensor<T>& x) const;
};

/// conv3x3-BN-ReLU then (deformable or standard) conv3x3-BN-ReLU, plus a
/// shortcut that is the identity when widths agree and a 1x1 conv otherwise.
template <typename T>
struct DeformableResidualBlock {
  Conv2d<T> conv1;
  BatchNorm2d<T> bn1;
  std::optional<DeformableConv2d<T>> deform;  // set when deformable
  Conv2d<T> conv2;                            // used when standard
  BatchNorm2d<T> bn2;
  std::optional<Conv2d<T>> shortcut;

  DeformableResidualBlock() = default;
  DeformableResidualBlock(ParamStore<T>& store, const std::string& path, int64_t cin,
                          int64_t cout, bool deformable);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) const;
};

/// Conv1x1(ReLU(BN(DWConv3x3(feat)))) -> per-class logits at the feature's scale.
template <typename T>
struct DistributionHead {
  DepthwiseConv2d<T> dw;
  BatchNorm2d<T> bn;
  Conv2d<T> proj;

  DistributionHead() = default;
  DistributionHead(ParamStore<T>& store, const std::string& path, int64_t channels,
                   int64_t num_classes);
  Tensor<T> forward(const Tensor<T>& feat, Mode mode) const;
};

}  // namespace dm
