#include "decomamba/network.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace dm {

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  return reshape(permute(x, {0, 2, 3, 1}), {x.dim(0), x.dim(2) * x.dim(3), x.dim(1)});
}

template <typename T>
Tensor<T> to_image(const Tensor<T>& tokens, int64_t height, int64_t width) {
  return permute(reshape(tokens, {tokens.dim(0), height, width, tokens.dim(2)}), {0, 3, 1, 2});
}

template <typename T>
SpatialReductionAttention<T>::SpatialReductionAttention(ParamStore<T>& store,
                                                        const std::string& path, int64_t channels,
                                                        int64_t heads_, int64_t sr_ratio)
    : q(store, join_path(path, "q"), channels, channels),
      k(store, join_path(path, "k"), channels, channels),
      v(store, join_path(path, "v"), channels, channels),
      proj(store, join_path(path, "proj"), channels, channels),
      heads(heads_) {
  if (channels % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(channels) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (sr_ratio > 1) {
    const int sr = static_cast<int>(sr_ratio);
    reduce.emplace(store, join_path(path, "sr"), channels, channels, sr, sr, 0);
    reduce_norm = LayerNorm<T>(store, join_path(path, "sr_norm"), channels, -1);
  }
}

template <typename T>
Tensor<T> SpatialReductionAttention<T>::forward(const Tensor<T>& tokens, int64_t height,
                                                int64_t width) const {
  const int64_t B = tokens.dim(0), L = tokens.dim(1), C = tokens.dim(2), d = C / heads;
  auto split_heads = [&](const Tensor<T>& t) {
    return permute(reshape(t, {B, t.dim(1), heads, d}), {0, 2, 1, 3});  // [B,h,L,d]
  };
  Tensor<T> source = tokens;
  if (reduce) source = reduce_norm(to_tokens((*reduce)(to_image(tokens, height, width))));
  auto qh = split_heads(q(tokens));
  auto kh = split_heads(k(source));
  auto vh = split_heads(v(source));
  auto scores = mul_scalar(matmul(qh, permute(kh, {0, 1, 3, 2})), static_cast<T>(1.0 / std::sqrt(double(d))));
  auto attn = exp(log_softmax(scores, -1));
  auto out = reshape(permute(matmul(attn, vh), {0, 2, 1, 3}), {B, L, C});
  return proj(out);
}

template <typename T>
MixFFN<T>::MixFFN(ParamStore<T>& store, const std::string& path, int64_t channels, int64_t hidden)
    : fc1(store, join_path(path, "fc1"), channels, hidden),
      fc2(store, join_path(path, "fc2"), hidden, channels),
      dw(store, join_path(path, "dwconv"), hidden, 3) {}

template <typename T>
Tensor<T> MixFFN<T>::forward(const Tensor<T>& tokens, int64_t height, int64_t width) const {
  auto h = to_image(fc1(tokens), height, width);
  return fc2(to_tokens(silu(dw(h))));
}

template <typename T>
EncoderBlock<T>::EncoderBlock(ParamStore<T>& store, const std::string& path, int64_t channels,
                              int64_t heads, int64_t sr_ratio, int64_t mlp_ratio)
    : norm1(store, join_path(path, "norm1"), channels, -1),
      norm2(store, join_path(path, "norm2"), channels, -1),
      attn(store, join_path(path, "attn"), channels, heads, sr_ratio),
      ffn(store, join_path(path, "ffn"), channels, channels * mlp_ratio) {}

template <typename T>
Tensor<T> EncoderBlock<T>::forward(const Tensor<T>& tokens, int64_t height, int64_t width) const {
  auto x = add(tokens, attn.forward(norm1(tokens), height, width));
  return add(x, ffn.forward(norm2(x), height, width));
}

template <typename T>
EncoderStage<T>::EncoderStage(ParamStore<T>& store, const std::string& path, int64_t cin,
                              int64_t cout, int kernel, int stride, int64_t depth, int64_t heads,
                              int64_t sr_ratio, int64_t mlp_ratio)
    : embed(store, join_path(path, "embed"), cin, cout, kernel, stride, kernel / 2),
      embed_norm(store, join_path(path, "embed_norm"), cout, 1),
      norm(store, join_path(path, "norm"), cout, 1) {
  for (int64_t i = 0; i < depth; ++i) {
    blocks.emplace_back(store, join_path(path, "block" + std::to_string(i)), cout, heads, sr_ratio,
                        mlp_ratio);
  }
}

template <typename T>
Tensor<T> EncoderStage<T>::forward(const Tensor<T>& x) const {
  auto h = embed_norm(embed(x));
  const int64_t H = h.dim(2), W = h.dim(3);
  if (!blocks.empty()) {
    auto t = to_tokens(h);
    for (const auto& b : blocks) t = b.forward(t, H, W);
    h = to_image(t, H, W);
  }
  return norm(h);
}

template <typename T>
Encoder<T>::Encoder(ParamStore<T>& store, const ModelConfig& c)
    : stem(store, "stem", c.in_channels, c.stem_channels) {
  int64_t size = std::min(c.height, c.width) / 4;
  for (size_t i = 0; i < 4; ++i) {
    const bool first = i == 0;
    const int64_t sr = std::max<int64_t>(1, std::min(c.sr_ratios[i], size));
    stages[i] = EncoderStage<T>(store, "encoder.stage" + std::to_string(i + 1),
                                first ? c.in_channels : c.encoder_widths[i - 1], c.encoder_widths[i],
                                first ? 7 : 3, first ? 4 : 2, c.encoder_depths[i], c.encoder_heads[i],
                                sr, c.mlp_ratio);
    size /= 2;
  }
}

template <typename T>
FeaturePyramid<T> Encoder<T>::forward(const Tensor<T>& image, Mode mode) const {
  FeaturePyramid<T> p;
  auto s = stem.forward(image, mode);
  p.x1 = s.x1;
  p.x2 = s.x2;
  p.x3 = stages[0].forward(image);
  p.x4 = stages[1].forward(p.x3);
  p.x5 = stages[2].forward(p.x4);
  p.x6 = stages[3].forward(p.x5);
  return p;
}

template <typename T>
SkipFusion<T>::SkipFusion(ParamStore<T>& store, const std::string& path, GateKind kind,
                          int64_t skip_channels, int64_t dec_channels, int64_t out_channels,
                          int reduction) {
  if (kind == GateKind::cag) {
    cag.emplace(store, join_path(path, "cag"), skip_channels, dec_channels, out_channels, reduction);
  } else {
    ag.emplace(store, join_path(path, "ag"), skip_channels, dec_channels);
    ag_proj = Conv2d<T>(store, join_path(path, "ag_proj"), skip_channels + dec_channels, out_channels, 1);
  }
}

template <typename T>
Tensor<T> SkipFusion<T>::forward(const Tensor<T>& skip, const Tensor<T>& dec) const {
  if (cag) return cag->forward(skip, dec);
  return ag_proj(concat<T>({ag->forward(skip, dec).gated, dec}, 1));
}

template <typename T>
typename DecoderStage<T>::Output DecoderStage<T>::forward(const Tensor<T>& prev,
                                                          const Tensor<T>& skip, Mode mode) const {
  Output out;
  Tensor<T> h = fusion ? fusion->forward(skip, prev) : prev;
  for (const auto& block : vssm) h = block.forward(h);
  h = drb.forward(h, mode);
  out.features = h;
  if (head) out.aux = head->forward(h, mode);
  if (up_proj) out.up = (*up_proj)(upsample_bilinear2x(h));
  return out;
}

template <typename T>
Decoder<T>::Decoder(ParamStore<T>& store, const ModelConfig& c) {
  const auto& d = c.decoder_widths;
  const bool deformable = c.conv == ConvKind::deformable;
  const ScanMerge merge = c.scan_merge == "mean" ? ScanMerge::mean : ScanMerge::sum;
  // Skip inputs of D5..D1.
  const int64_t skips[6] = {0, c.encoder_widths[2], c.encoder_widths[1], c.encoder_widths[0],
                            c.stem_channels, c.stem_channels};
  for (size_t i = 0; i < 6; ++i) {
    const std::string path = "decoder.d" + std::to_string(6 - i);
    auto& st = stages[i];
    int64_t cin = d[i];
    if (i == 0) {
      cin = c.encoder_widths[3];
      for (int b = 0; b < 2; ++b) {
        st.vssm.emplace_back(store, join_path(path, "vssm" + std::to_string(b)), cin, c.ssm_state,
                             static_cast<int>(c.ssm_expand), merge);
      }
    } else {
      st.fusion.emplace(store, join_path(path, "fusion"), c.gate, skips[i], d[i], d[i],
                        static_cast<int>(c.ca_reduction));
      if (i < 5) {
        st.vssm.emplace_back(store, join_path(path, "vssm0"), d[i], c.ssm_state,
                             static_cast<int>(c.ssm_expand), merge);
      }
    }
    st.drb = DeformableResidualBlock<T>(store, join_path(path, "drb"), cin, d[i], deformable);
    if (i < 5) {
      st.head.emplace(store, join_path(path, "head"), d[i], c.num_classes);
      st.up_proj.emplace(store, join_path(path, "up"), d[i], d[i + 1], 1);
    }
  }
  seg_head = Conv2d<T>(store, "decoder.seg_head", d[5], c.num_classes, 1);
}

template <typename T>
SegOutput<T> Decoder<T>::forward(const FeaturePyramid<T>& p, Mode mode) const {
  const Tensor<T>* skips[6] = {nullptr, &p.x5, &p.x4, &p.x3, &p.x2, &p.x1};
  SegOutput<T> out;
  Tensor<T> prev = p.x6;
  for (size_t i = 0; i < 6; ++i) {
    auto r = stages[i].forward(prev, skips[i] ? *skips[i] : Tensor<T>(), mode);
    if (i < 5) {
      out.aux_logits.push_back(r.aux);
      prev = r.up;
    } else {
      out.logits = seg_head(r.features);
    }
  }
  return out;
}

template <typename T>
Model<T>::Model(const ModelConfig& config)
    : config_((config.validate(), config)),
      store_(config.seed),
      encoder_(store_, config_),
      decoder_(store_, config_) {}

template <typename T>
SegOutput<T> Model<T>::forward(const Tensor<T>& image, Mode mode) const {
  const Shape expected{image.rank() == 4 ? image.dim(0) : 0, config_.in_channels, config_.height,
                       config_.width};
  if (image.rank() != 4 || image.shape() != expected) {
    throw ShapeError("model: expected image [B," + std::to_string(config_.in_channels) + "," +
                     std::to_string(config_.height) + "," + std::to_string(config_.width) +
                     "], got " + shape_str(image.shape()));
  }
  return decoder_.forward(encoder_.forward(image, mode), mode);
}

template <typename T>
std::string Model<T>::describe() const {
  std::ostringstream os;
  os << "config " << to_json(config_).dump() << "\n";
  // Parameter counts grouped by the first two path components.
  std::vector<std::pair<std::string, int64_t>> groups;
  for (const auto& e : store_.params()) {
    auto cut = e.path.find('.');
    if (cut != std::string::npos) {
      auto second = e.path.find('.', cut + 1);
      if (second != std::string::npos) cut = second;
    }
    const std::string key = e.path.substr(0, cut);
    if (groups.empty() || groups.back().first != key) groups.emplace_back(key, 0);
    groups.back().second += e.value.numel();
  }
  for (const auto& [name, n] : groups) os << "module " << name << " params=" << n << "\n";
  os << "tensors=" << store_.params().size() << " buffers=" << store_.buffers().size() << "\n";
  os << "params=" << store_.param_count() << "\n";
  return os.str();
}

int64_t count_params(const ModelConfig& config) {
  Model<float> model(config);
  return model.store().param_count();
}

uint64_t count_flops(const ModelConfig& config) {
  Model<float> model(config);
  NoGradGuard no_grad;
  MacCounter counter;
  model.forward(Tensor<float>::zeros({1, config.in_channels, config.height, config.width}), Mode::eval);
  return counter.total();
}

#define DM_INSTANTIATE(T)                                                  \
  template Tensor<T> to_tokens(const Tensor<T>&);                          \
  template Tensor<T> to_image(const Tensor<T>&, int64_t, int64_t);         \
  template struct SpatialReductionAttention<T>;                            \
  template struct MixFFN<T>;                                               \
  template struct EncoderBlock<T>;                                         \
  template struct EncoderStage<T>;                                         \
  template struct Encoder<T>;                                              \
  template struct SkipFusion<T>;                                           \
  template struct DecoderStage<T>;                                         \
  template struct Decoder<T>;                                              \
  template class Model<T>;

DM_INSTANTIATE(float)
DM_INSTANTIATE(double)
#undef DM_INSTANTIATE

}  // namespace dm
