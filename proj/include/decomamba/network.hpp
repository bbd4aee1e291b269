#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "decomamba/blocks.hpp"
#include "decomamba/config.hpp"
#include "decomamba/ssm.hpp"

namespace dm {

template <typename T>
struct FeaturePyramid {
  Tensor<T> x1, x2;          // stem: /1, /2
  Tensor<T> x3, x4, x5, x6;  // hierarchical encoder: /4, /8, /16, /32
};

template <typename T>
struct SegOutput {
  Tensor<T> logits;                 // [B,N,H,W]
  std::vector<Tensor<T>> aux_logits;  // /32, /16, /8, /4, /2
};

/// [B,C,H,W] <-> [B,H*W,C].
template <typename T> Tensor<T> to_tokens(const Tensor<T>& x);
template <typename T> Tensor<T> to_image(const Tensor<T>& tokens, int64_t height, int64_t width);

/// Multi-head attention whose keys and values come from a copy of the input
/// downsampled by a strided sr x sr conv (sr = 1: plain self-attention).
template <typename T>
struct SpatialReductionAttention {
  Linear<T> q, k, v, proj;
  std::optional<Conv2d<T>> reduce;
  LayerNorm<T> reduce_norm;
  int64_t heads = 1;

  SpatialReductionAttention() = default;
  SpatialReductionAttention(ParamStore<T>& store, const std::string& path, int64_t channels,
                            int64_t heads, int64_t sr_ratio);
  Tensor<T> forward(const Tensor<T>& tokens, int64_t height, int64_t width) const;
};

/// fc1 -> depthwise 3x3 on the token grid -> SiLU -> fc2.
template <typename T>
struct MixFFN {
  Linear<T> fc1, fc2;
  DepthwiseConv2d<T> dw;

  MixFFN() = default;
  MixFFN(ParamStore<T>& store, const std::string& path, int64_t channels, int64_t hidden);
  Tensor<T> forward(const Tensor<T>& tokens, int64_t height, int64_t width) const;
};

template <typename T>
struct EncoderBlock {
  LayerNorm<T> norm1, norm2;
  SpatialReductionAttention<T> attn;
  MixFFN<T> ffn;

  EncoderBlock() = default;
  EncoderBlock(ParamStore<T>& store, const std::string& path, int64_t channels, int64_t heads,
               int64_t sr_ratio, int64_t mlp_ratio);
  Tensor<T> forward(const Tensor<T>& tokens, int64_t height, int64_t width) const;
};

/// Strided-conv patch merging + LN, attention blocks, final LN.
template <typename T>
struct EncoderStage {
  Conv2d<T> embed;
  LayerNorm<T> embed_norm;
  std::vector<EncoderBlock<T>> blocks;
  LayerNorm<T> norm;

  EncoderStage() = default;
  EncoderStage(ParamStore<T>& store, const std::string& path, int64_t cin, int64_t cout,
               int kernel, int stride, int64_t depth, int64_t heads, int64_t sr_ratio,
               int64_t mlp_ratio);
  Tensor<T> forward(const Tensor<T>& x) const;
};

template <typename T>
struct Encoder {
  CnnStem<T> stem;
  std::array<EncoderStage<T>, 4> stages;

  Encoder() = default;
  Encoder(ParamStore<T>& store, const ModelConfig& config);
  FeaturePyramid<T> forward(const Tensor<T>& image, Mode mode) const;
};

/// Merges a skip feature with the upsampled decoder feature: co-attention
/// gate, or (gate = ag) a single attention gate on the skip whose output is
/// concatenated with the decoder feature and projected by a 1x1 conv.
template <typename T>
struct SkipFusion {
  std::optional<CoAttentionGate<T>> cag;
  std::optional<AttentionGate<T>> ag;
  Conv2d<T> ag_proj;

  SkipFusion() = default;
  SkipFusion(ParamStore<T>& store, const std::string& path, GateKind kind, int64_t skip_channels,
             int64_t dec_channels, int64_t out_channels, int reduction);
  Tensor<T> forward(const Tensor<T>& skip, const Tensor<T>& dec) const;
};

template <typename T>
struct DecoderStage {
  struct Output {
    Tensor<T> features;  // pre-upsample
    Tensor<T> aux;       // distribution-head logits; undefined for D1
    Tensor<T> up;        // input to the next stage; undefined for D1
  };

  std::optional<SkipFusion<T>> fusion;  // absent at the bottleneck
  std::vector<VSSMB<T>> vssm;
  DeformableResidualBlock<T> drb;
  std::optional<DistributionHead<T>> head;
  std::optional<Conv2d<T>> up_proj;

  /// `prev` is the bottleneck X6 for D6, otherwise the previous stage's `up`.
  Output forward(const Tensor<T>& prev, const Tensor<T>& skip, Mode mode) const;
};

template <typename T>
struct Decoder {
  std::array<DecoderStage<T>, 6> stages;  // D6..D1
  Conv2d<T> seg_head;

  Decoder() = default;
  Decoder(ParamStore<T>& store, const ModelConfig& config);
  SegOutput<T> forward(const FeaturePyramid<T>& pyramid, Mode mode) const;
};

/// Whole network plus the store that owns its parameters. Not movable:
/// layers hold handles into the store.
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const Encoder<T>& encoder() const { return encoder_; }
  const Decoder<T>& decoder() const { return decoder_; }
  Encoder<T>& encoder() { return encoder_; }
  Decoder<T>& decoder() { return decoder_; }

  /// image [B,Cimg,H,W] at the configured size.
  SegOutput<T> forward(const Tensor<T>& image, Mode mode) const;
  /// Architecture summary: config, per-module parameter counts, totals.
  std::string describe() const;

 private:
  ModelConfig config_;
  ParamStore<T> store_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
};

int64_t count_params(const ModelConfig& config);
/// Multiply-accumulates of one eval-mode forward pass at batch 1.
uint64_t count_flops(const ModelConfig& config);

}  // namespace dm
