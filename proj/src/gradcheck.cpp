#include "decomamba/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "decomamba/losses.hpp"
#include "decomamba/network.hpp"

namespace dm {

namespace {

using Td = Tensor<double>;

std::vector<int64_t> sample_indices(int64_t n, int64_t cap, Rng& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  if (cap >= 0 && n > cap) {
    rng.shuffle(idx);
    idx.resize(static_cast<size_t>(cap));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

}  // namespace

CheckReport grad_check(const std::string& name, const std::function<Td()>& f,
                       const std::vector<GradInput>& inputs, const GradCheckOptions& o) {
  const auto start = std::chrono::steady_clock::now();
  CheckReport report;
  report.name = name;
  auto finish = [&] {
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
  };
  try {
    for (const auto& in : inputs) {
      Td t = in.tensor;
      t.set_requires_grad(true);
      t.zero_grad();
    }
    Rng rng = Rng::derive(o.seed, "gradcheck/" + name);
    Td y = f();
    std::vector<double> proj(static_cast<size_t>(y.numel()));
    for (auto& v : proj) v = rng.normal();
    auto scalar = sum(mul(y, Td::from_data(y.shape(), proj)));
    scalar.backward();

    std::vector<std::vector<double>> analytic;
    for (const auto& in : inputs) {
      const auto g = in.tensor.grad();
      analytic.emplace_back(g.begin(), g.end());
      if (analytic.back().empty()) analytic.back().assign(static_cast<size_t>(in.tensor.numel()), 0.0);
    }
    auto evaluate = [&] {
      NoGradGuard no_grad;
      Td out = f();
      double s = 0;
      for (size_t i = 0; i < proj.size(); ++i) s += out.data()[i] * proj[i];
      return s;
    };
    for (size_t k = 0; k < inputs.size(); ++k) {
      Td t = inputs[k].tensor;
      InputReport ir;
      ir.name = inputs[k].name;
      const int64_t cap = inputs[k].max_samples >= 0 ? inputs[k].max_samples : o.max_samples;
      for (int64_t i : sample_indices(t.numel(), cap, rng)) {
        auto& x = t.data()[static_cast<size_t>(i)];
        const double orig = x;
        x = orig + o.eps;
        const double plus = evaluate();
        x = orig - o.eps;
        const double minus = evaluate();
        x = orig;
        const double numeric = (plus - minus) / (2 * o.eps);
        const double a = analytic[k][static_cast<size_t>(i)];
        if (!std::isfinite(numeric) || !std::isfinite(a)) {
          report.passed = false;
          report.message = "non-finite gradient at " + ir.name + "[" + std::to_string(i) + "]";
        }
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), o.floor});
        ++ir.checked;
        if (!(rel <= ir.max_rel_error) || ir.worst_index < 0) {
          if (!(rel <= ir.max_rel_error)) ir.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
          ir.worst_index = i;
          ir.analytic = a;
          ir.numeric = numeric;
        }
      }
      if (ir.max_rel_error > report.max_rel_error || report.worst_input.empty()) {
        if (ir.max_rel_error >= report.max_rel_error) {
          report.max_rel_error = ir.max_rel_error;
          report.worst_input = ir.name;
        }
      }
      report.inputs.push_back(ir);
    }
    for (const auto& in : inputs) {
      Td t = in.tensor;
      t.zero_grad();
    }
    if (!(report.max_rel_error < o.tolerance)) report.passed = false;
  } catch (const std::exception& e) {
    report.passed = false;
    report.message = e.what();
  }
  return finish();
}

// ------------------------------------------------------------------- suite

namespace {

Td rand_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(static_cast<size_t>(numel_of(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Td::from_data(std::move(shape), std::move(v));
}

Td flat(const Td& t) { return reshape(t, {-1}); }

Td pack(const std::vector<Td>& outs) {
  std::vector<Td> parts;
  for (const auto& t : outs) parts.push_back(flat(t));
  return concat(parts, 0);
}

std::vector<GradInput> with_params(std::vector<GradInput> inputs, const ParamStore<double>& store,
                                   const GradCheckOptions& o) {
  for (const auto& e : store.params()) inputs.push_back({e.path, e.value, o.max_param_samples});
  return inputs;
}

// Gives zero-initialized deformable branches random weights so sampling
// positions are off the integer lattice, where bilinear sampling is smooth.
void randomize_offset_branches(ParamStore<double>& store, Rng& rng, double scale) {
  for (const auto& e : store.params()) {
    if (e.path.find(".offset.") == std::string::npos && e.path.find(".mask.") == std::string::npos) continue;
    Td t = e.value;
    for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  }
}

GradCase primitive(const std::string& name, std::function<CheckReport(const GradCheckOptions&, Rng&)> body) {
  return {name, "primitive", [name, body](const GradCheckOptions& o) {
            Rng rng = Rng::derive(o.seed, "inputs/" + name);
            return body(o, rng);
          }};
}

GradCase block(const std::string& name, std::function<CheckReport(const GradCheckOptions&, Rng&)> body) {
  GradCase c = primitive(name, std::move(body));
  c.kind = "block";
  return c;
}

GradCase loss_case(const std::string& name, std::function<CheckReport(const GradCheckOptions&, Rng&)> body) {
  GradCase c = primitive(name, std::move(body));
  c.kind = "loss";
  return c;
}

LabelBatch random_labels(int64_t B, int64_t H, int64_t W, int64_t N, Rng& rng) {
  std::vector<int32_t> v(static_cast<size_t>(B * H * W));
  for (auto& x : v) x = static_cast<int32_t>(rng.below(static_cast<uint64_t>(N)));
  return LabelBatch(B, H, W, N, std::move(v));
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.height = c.width = 32;
  c.in_channels = 3;
  c.num_classes = 3;
  c.stem_channels = 4;
  c.encoder_widths = {8, 8, 8, 8};
  c.encoder_depths = {1, 1, 1, 1};
  c.encoder_heads = {1, 1, 2, 2};
  c.mlp_ratio = 2;
  c.decoder_widths = {8, 8, 8, 8, 8, 8};
  c.ssm_state = 2;
  c.ca_reduction = 4;
  c.seed = 3;
  return c;
}

template <typename F>
CheckReport unary_case(const std::string& name, const GradCheckOptions& o, Rng& rng, F op, double lo = -2,
                       double hi = 2) {
  auto x = rand_tensor({2, 3, 4}, rng, lo, hi);
  return grad_check(name, [=] { return op(x); }, {{"x", x}}, o);
}

}  // namespace

std::vector<GradCase> gradcheck_suite() {
  std::vector<GradCase> s;

  // ------------------------------------------------------------- primitives
  s.push_back(primitive("add_broadcast", [](auto& o, Rng& r) {
    auto a = rand_tensor({2, 3, 4}, r), b = rand_tensor({3, 1}, r);
    return grad_check("add_broadcast", [=] { return add(a, b); }, {{"a", a}, {"b", b}}, o);
  }));
  s.push_back(primitive("sub_broadcast", [](auto& o, Rng& r) {
    auto a = rand_tensor({2, 1, 4}, r), b = rand_tensor({2, 3, 4}, r);
    return grad_check("sub_broadcast", [=] { return sub(a, b); }, {{"a", a}, {"b", b}}, o);
  }));
  s.push_back(primitive("mul_broadcast", [](auto& o, Rng& r) {
    auto a = rand_tensor({2, 3, 4}, r), b = rand_tensor({4}, r);
    return grad_check("mul_broadcast", [=] { return mul(a, b); }, {{"a", a}, {"b", b}}, o);
  }));
  s.push_back(primitive("div", [](auto& o, Rng& r) {
    auto a = rand_tensor({2, 3, 4}, r), b = rand_tensor({2, 3, 4}, r, 0.5, 2.0);
    return grad_check("div", [=] { return div(a, b); }, {{"a", a}, {"b", b}}, o);
  }));
  s.push_back(primitive("scalar_ops", [](auto& o, Rng& r) {
    return unary_case("scalar_ops", o, r, [](const Td& x) { return add_scalar(mul_scalar(neg(x), 1.7), 0.3); });
  }));
  s.push_back(primitive("exp", [](auto& o, Rng& r) { return unary_case("exp", o, r, [](const Td& x) { return exp(x); }); }));
  s.push_back(primitive("log", [](auto& o, Rng& r) {
    return unary_case("log", o, r, [](const Td& x) { return log(x); }, 0.3, 3.0);
  }));
  s.push_back(primitive("relu", [](auto& o, Rng& r) { return unary_case("relu", o, r, [](const Td& x) { return relu(x); }); }));
  s.push_back(primitive("sigmoid", [](auto& o, Rng& r) {
    return unary_case("sigmoid", o, r, [](const Td& x) { return sigmoid(x); }, -6, 6);
  }));
  s.push_back(primitive("silu", [](auto& o, Rng& r) { return unary_case("silu", o, r, [](const Td& x) { return silu(x); }, -4, 4); }));
  s.push_back(primitive("softplus", [](auto& o, Rng& r) {
    return unary_case("softplus", o, r, [](const Td& x) { return softplus(x); }, -6, 6);
  }));
  s.push_back(primitive("clamp_min", [](auto& o, Rng& r) {
    return unary_case("clamp_min", o, r, [](const Td& x) { return clamp_min(x, 0.1); });
  }));
  s.push_back(primitive("matmul", [](auto& o, Rng& r) {
    auto a = rand_tensor({2, 3, 4}, r), b = rand_tensor({2, 4, 5}, r), w = rand_tensor({5, 2}, r);
    return grad_check("matmul", [=] { return matmul(matmul(a, b), w); }, {{"a", a}, {"b", b}, {"w", w}}, o);
  }));
  s.push_back(primitive("matmul_left_shared", [](auto& o, Rng& r) {
    auto a = rand_tensor({3, 4}, r), b = rand_tensor({2, 4, 5}, r);
    return grad_check("matmul_left_shared", [=] { return matmul(a, b); }, {{"a", a}, {"b", b}}, o);
  }));
  s.push_back(primitive("shape_ops", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 3, 4}, r), y = rand_tensor({2, 2, 4}, r);
    return grad_check("shape_ops", [=] {
      auto c = concat<double>({x, y}, 1);                         // [2,5,4]
      auto p = permute(flip(c, 2), {2, 0, 1});                    // [4,2,5]
      return reshape(slice(p, 2, 1, 3), {-1, 3});
    }, {{"x", x}, {"y", y}}, o);
  }));
  s.push_back(primitive("reductions", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 3, 4}, r);
    return grad_check("reductions", [=] {
      return pack({sum(x), mean(x), sum(x, 1, false), mean(x, 2, true), max(x, 1, false), max(x, -1, true)});
    }, {{"x", x}}, o);
  }));
  s.push_back(primitive("log_softmax", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 4, 3, 3}, r, -3, 3);
    return grad_check("log_softmax", [=] { return log_softmax(x, 1); }, {{"x", x}}, o);
  }));
  s.push_back(primitive("conv2d", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 3, 6, 6}, r), w = rand_tensor({4, 3, 3, 3}, r), b = rand_tensor({4}, r);
    return grad_check("conv2d", [=] { return conv2d(x, w, b, 1, 1); }, {{"x", x}, {"w", w}, {"b", b}}, o);
  }));
  s.push_back(primitive("conv2d_strided", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 3, 7, 7}, r), w = rand_tensor({2, 3, 3, 3}, r);
    return grad_check("conv2d_strided", [=] { return conv2d(x, w, Td(), 2, 1); }, {{"x", x}, {"w", w}}, o);
  }));
  s.push_back(primitive("conv2d_pointwise", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 3, 4, 5}, r), w = rand_tensor({5, 3, 1, 1}, r), b = rand_tensor({5}, r);
    return grad_check("conv2d_pointwise", [=] { return conv2d(x, w, b, 1, 0); }, {{"x", x}, {"w", w}, {"b", b}}, o);
  }));
  s.push_back(primitive("depthwise_conv2d", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 3, 5, 5}, r), w = rand_tensor({3, 1, 3, 3}, r), b = rand_tensor({3}, r);
    return grad_check("depthwise_conv2d", [=] { return depthwise_conv2d(x, w, b); }, {{"x", x}, {"w", w}, {"b", b}}, o);
  }));
  s.push_back(primitive("batch_norm_train", [](auto& o, Rng& r) {
    auto x = rand_tensor({3, 2, 3, 3}, r), g = rand_tensor({2}, r, 0.5, 1.5), b = rand_tensor({2}, r);
    auto rm = Td::zeros({2}), rv = Td::full({2}, 1.0);
    return grad_check("batch_norm_train", [=]() mutable { return batch_norm(x, g, b, rm, rv, Mode::train); },
                      {{"x", x}, {"gamma", g}, {"beta", b}}, o);
  }));
  s.push_back(primitive("batch_norm_eval", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 2, 3, 3}, r), g = rand_tensor({2}, r, 0.5, 1.5), b = rand_tensor({2}, r);
    auto rm = rand_tensor({2}, r), rv = rand_tensor({2}, r, 0.5, 2.0);
    return grad_check("batch_norm_eval", [=]() mutable { return batch_norm(x, g, b, rm, rv, Mode::eval); },
                      {{"x", x}, {"gamma", g}, {"beta", b}}, o);
  }));
  s.push_back(primitive("layer_norm", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 4, 3, 3}, r), g = rand_tensor({4}, r, 0.5, 1.5), b = rand_tensor({4}, r);
    auto y = rand_tensor({2, 5, 6}, r), g2 = rand_tensor({6}, r, 0.5, 1.5), b2 = rand_tensor({6}, r);
    return grad_check("layer_norm", [=] { return pack({layer_norm(x, g, b, 1), layer_norm(y, g2, b2, -1)}); },
                      {{"x", x}, {"gamma", g}, {"beta", b}, {"y", y}, {"gamma2", g2}, {"beta2", b2}}, o);
  }));
  s.push_back(primitive("pool2d", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 3, 6, 6}, r);
    return grad_check("pool2d", [=] { return pack({pool2d(x, PoolMode::max, 2, 2), pool2d(x, PoolMode::avg, 2, 2)}); },
                      {{"x", x}}, o);
  }));
  s.push_back(primitive("adaptive_pool2d", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 3, 4, 5}, r);
    return grad_check("adaptive_pool2d", [=] {
      return pack({adaptive_pool2d(x, PoolMode::max), adaptive_pool2d(x, PoolMode::avg)});
    }, {{"x", x}}, o);
  }));
  s.push_back(primitive("upsample_bilinear2x", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 2, 3, 4}, r);
    return grad_check("upsample_bilinear2x", [=] { return upsample_bilinear2x(x); }, {{"x", x}}, o);
  }));
  s.push_back(primitive("grid_sample_bilinear", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 3, 5, 5}, r);
    // Coordinates range past the border so zero-padded taps are exercised.
    auto coords = rand_tensor({2, 2, 3, 3, 2}, r, -1.5, 5.5);
    return grad_check("grid_sample_bilinear", [=] { return grid_sample_bilinear(x, coords); },
                      {{"x", x}, {"coords", coords}}, o);
  }));
  s.push_back(primitive("selective_scan", [](auto& o, Rng& r) {
    const int64_t B = 2, C = 3, L = 7, N = 4;
    auto u = rand_tensor({B, C, L}, r), delta = rand_tensor({B, C, L}, r, 0.05, 0.8);
    auto A = rand_tensor({C, N}, r, -2.0, -0.2), Bm = rand_tensor({B, N, L}, r), Cm = rand_tensor({B, N, L}, r);
    auto D = rand_tensor({C}, r);
    return grad_check("selective_scan", [=] { return selective_scan(u, delta, A, Bm, Cm, D); },
                      {{"u", u}, {"delta", delta}, {"A", A}, {"B", Bm}, {"C", Cm}, {"D", D}}, o);
  }));
  s.push_back(primitive("discretize", [](auto& o, Rng& r) {
    auto delta = rand_tensor({5, 3}, r, 0.05, 0.8), A = rand_tensor({3, 4}, r, -2, -0.2), B = rand_tensor({5, 4}, r);
    return grad_check("discretize", [=] {
      auto d = discretize(delta, A, B);
      return pack({d.decay, d.input_gain});
    }, {{"delta", delta}, {"A", A}, {"B", B}}, o);
  }));
  s.push_back(primitive("deformable_conv2d", [](auto& o, Rng& r) {
    auto x = rand_tensor({2, 3, 5, 5}, r), w = rand_tensor({4, 3, 3, 3}, r), b = rand_tensor({4}, r);
    auto off = rand_tensor({2, 18, 5, 5}, r, -1.3, 1.3), mask = rand_tensor({2, 9, 5, 5}, r, -2, 2);
    return grad_check("deformable_conv2d", [=] { return deformable_conv2d(x, w, b, off, mask); },
                      {{"x", x}, {"weight", w}, {"bias", b}, {"offsets", off}, {"mask_logits", mask}}, o);
  }));

  // ------------------------------------------------------------------ blocks
  s.push_back(block("cnn_stem", [](auto& o, Rng& r) {
    auto store = std::make_shared<ParamStore<double>>(11);
    auto stem = std::make_shared<CnnStem<double>>(*store, "stem", 3, 4);
    auto x = rand_tensor({2, 3, 8, 8}, r);
    return grad_check("cnn_stem", [=] {
      auto out = stem->forward(x, Mode::train);
      return pack({out.x1, out.x2});
    }, with_params({{"x", x}}, *store, o), o);
  }));
  s.push_back(block("attention_gate", [](auto& o, Rng& r) {
    auto store = std::make_shared<ParamStore<double>>(12);
    auto ag = std::make_shared<AttentionGate<double>>(*store, "ag", 4, 6);
    auto x = rand_tensor({2, 4, 5, 5}, r), g = rand_tensor({2, 6, 5, 5}, r);
    return grad_check("attention_gate", [=] {
      auto out = ag->forward(x, g);
      return pack({out.gated, out.attention_map});
    }, with_params({{"x", x}, {"g", g}}, *store, o), o);
  }));
  s.push_back(block("channel_attention", [](auto& o, Rng& r) {
    auto store = std::make_shared<ParamStore<double>>(13);
    auto ca = std::make_shared<ChannelAttention<double>>(*store, "ca", 8, 4);
    auto x = rand_tensor({2, 8, 4, 4}, r);
    return grad_check("channel_attention", [=] { return ca->forward(x); }, with_params({{"x", x}}, *store, o), o);
  }));
  s.push_back(block("co_attention_gate", [](auto& o, Rng& r) {
    auto store = std::make_shared<ParamStore<double>>(14);
    auto cag = std::make_shared<CoAttentionGate<double>>(*store, "cag", 4, 4, 6, 4);
    auto skip = rand_tensor({2, 4, 4, 4}, r), dec = rand_tensor({2, 4, 4, 4}, r);
    return grad_check("co_attention_gate", [=] { return cag->forward(skip, dec); },
                      with_params({{"skip", skip}, {"dec", dec}}, *store, o), o);
  }));
  s.push_back(block("deformable_conv_block", [](auto& o, Rng& r) {
    auto store = std::make_shared<ParamStore<double>>(15);
    auto dc = std::make_shared<DeformableConv2d<double>>(*store, "dconv", 3, 4);
    randomize_offset_branches(*store, r, 0.3);
    auto x = rand_tensor({2, 3, 5, 5}, r);
    return grad_check("deformable_conv_block", [=] { return dc->forward(x); }, with_params({{"x", x}}, *store, o), o);
  }));
  for (bool deformable : {true, false}) {
    const std::string name = deformable ? "drb_deformable" : "drb_standard";
    s.push_back(block(name, [deformable, name](auto& o, Rng& r) {
      auto store = std::make_shared<ParamStore<double>>(16);
      auto drb = std::make_shared<DeformableResidualBlock<double>>(*store, "drb", 3, 4, deformable);
      randomize_offset_branches(*store, r, 0.3);
      auto x = rand_tensor({2, 3, 5, 5}, r);
      return grad_check(name, [=] { return drb->forward(x, Mode::train); }, with_params({{"x", x}}, *store, o), o);
    }));
  }
  s.push_back(block("distribution_head", [](auto& o, Rng& r) {
    auto store = std::make_shared<ParamStore<double>>(17);
    auto head = std::make_shared<DistributionHead<double>>(*store, "head", 4, 3);
    auto x = rand_tensor({2, 4, 4, 4}, r);
    return grad_check("distribution_head", [=] { return head->forward(x, Mode::train); },
                      with_params({{"x", x}}, *store, o), o);
  }));
  s.push_back(block("ss2d", [](auto& o, Rng& r) {
    auto store = std::make_shared<ParamStore<double>>(18);
    auto ss = std::make_shared<SS2D<double>>(*store, "ss2d", 4, 3, 2);
    auto x = rand_tensor({2, 4, 3, 4}, r);
    return grad_check("ss2d", [=] { return ss->forward(x); }, with_params({{"x", x}}, *store, o), o);
  }));
  s.push_back(block("vssmb", [](auto& o, Rng& r) {
    auto store = std::make_shared<ParamStore<double>>(19);
    auto vb = std::make_shared<VSSMB<double>>(*store, "vssmb", 4, 3);
    auto x = rand_tensor({2, 4, 4, 4}, r);
    return grad_check("vssmb", [=] { return vb->forward(x); }, with_params({{"x", x}}, *store, o), o);
  }));
  s.push_back(block("sr_attention", [](auto& o, Rng& r) {
    auto store = std::make_shared<ParamStore<double>>(20);
    auto at = std::make_shared<SpatialReductionAttention<double>>(*store, "attn", 4, 2, 2);
    auto x = rand_tensor({2, 16, 4}, r);
    return grad_check("sr_attention", [=] { return at->forward(x, 4, 4); }, with_params({{"tokens", x}}, *store, o), o);
  }));
  s.push_back(block("mix_ffn", [](auto& o, Rng& r) {
    auto store = std::make_shared<ParamStore<double>>(21);
    auto ffn = std::make_shared<MixFFN<double>>(*store, "ffn", 4, 8);
    auto x = rand_tensor({2, 9, 4}, r);
    return grad_check("mix_ffn", [=] { return ffn->forward(x, 3, 3); }, with_params({{"tokens", x}}, *store, o), o);
  }));
  s.push_back(block("encoder_stage", [](auto& o, Rng& r) {
    auto store = std::make_shared<ParamStore<double>>(22);
    auto st = std::make_shared<EncoderStage<double>>(*store, "stage", 3, 4, 3, 2, 1, 2, 2, 2);
    auto x = rand_tensor({2, 3, 8, 8}, r);
    return grad_check("encoder_stage", [=] { return st->forward(x); }, with_params({{"x", x}}, *store, o), o);
  }));
  s.push_back(block("decoder_stage", [](auto& o, Rng& r) {
    ModelConfig c = tiny_config();
    auto store = std::make_shared<ParamStore<double>>(23);
    auto dec = std::make_shared<Decoder<double>>(*store, c);
    randomize_offset_branches(*store, r, 0.3);
    // D3 at 8x8: skip X3 and the upsampled D4 output.
    auto prev = rand_tensor({2, c.decoder_widths[3], 8, 8}, r);
    auto skip = rand_tensor({2, c.encoder_widths[0], 8, 8}, r);
    std::vector<GradInput> in{{"prev", prev}, {"skip", skip}};
    for (const auto& e : store->params()) {
      if (e.path.rfind("decoder.d3.", 0) == 0) in.push_back({e.path, e.value, o.max_param_samples});
    }
    return grad_check("decoder_stage", [=] {
      auto out = dec->stages[3].forward(prev, skip, Mode::train);
      return pack({out.aux, out.up});
    }, in, o);
  }));

  // Whole network plus loss, differentiated with respect to the image. A fresh
  // model keeps its offset convs at zero, so sampling positions stay on the
  // lattice for every perturbed image and no bilinear kink is crossed.
  s.push_back(block("model_end_to_end", [](auto& o, Rng& r) {
    ModelConfig c = tiny_config();
    auto model = std::make_shared<Model<double>>(c);
    auto image = rand_tensor({2, c.in_channels, c.height, c.width}, r, 0, 1);
    auto gt = random_labels(2, c.height, c.width, c.num_classes, r);
    return grad_check("model_end_to_end", [=] {
      auto out = model->forward(image, Mode::train);
      return total_loss(out.logits, out.aux_logits, gt, c).total;
    }, {{"image", image}}, o);
  }));

  // ------------------------------------------------------------------ losses
  s.push_back(loss_case("dice_loss", [](auto& o, Rng& r) {
    auto logits = rand_tensor({2, 3, 4, 4}, r, -2, 2);
    auto target = one_hot<double>(random_labels(2, 4, 4, 3, r));
    return grad_check("dice_loss", [=] { return dice_loss(exp(log_softmax(logits, 1)), target); },
                      {{"logits", logits}}, o);
  }));
  s.push_back(loss_case("kl_divergence_map", [](auto& o, Rng& r) {
    auto logits = rand_tensor({2, 3, 2, 2}, r, -2, 2);
    auto P = windowed_gt_distribution<double>(random_labels(2, 8, 8, 3, r), 2, 2);
    return grad_check("kl_divergence_map", [=] { return kl_divergence_map(P, log_softmax(logits, 1)); },
                      {{"logits", logits}}, o);
  }));
  s.push_back(loss_case("dist_loss_scale", [](auto& o, Rng& r) {
    auto logits = rand_tensor({2, 3, 4, 4}, r, -2, 2);
    auto P = windowed_gt_distribution<double>(random_labels(2, 8, 8, 3, r), 4, 4);
    return grad_check("dist_loss_scale", [=] { return dist_loss_scale(P, logits, 1.5); }, {{"logits", logits}}, o);
  }));
  s.push_back(loss_case("msda_loss", [](auto& o, Rng& r) {
    auto gt = random_labels(2, 16, 16, 3, r);
    std::vector<GradInput> in;
    std::vector<Td> aux;
    for (int64_t side : {1, 2, 4, 8, 16}) {
      aux.push_back(rand_tensor({2, 3, side, side}, r, -2, 2));
      in.push_back({"aux" + std::to_string(side), aux.back()});
    }
    const std::vector<double> lambdas{1 / 15.0, 2 / 15.0, 3 / 15.0, 4 / 15.0, 5 / 15.0};
    return grad_check("msda_loss", [=] { return msda_loss(aux, gt, lambdas, 1.0); }, in, o);
  }));
  for (Supervision sup : {Supervision::dice, Supervision::dice_deepsup, Supervision::dice_msda}) {
    const std::string name = std::string("total_loss_") + to_string(sup);
    s.push_back(loss_case(name, [sup, name](auto& o, Rng& r) {
      ModelConfig c;
      c.num_classes = 3;
      c.supervision = sup;
      auto gt = random_labels(2, 32, 32, 3, r);
      auto logits = rand_tensor({2, 3, 32, 32}, r, -2, 2);
      std::vector<GradInput> in{{"logits", logits}};
      std::vector<Td> aux;
      for (int64_t side : {1, 2, 4, 8, 16}) {
        aux.push_back(rand_tensor({2, 3, side, side}, r, -2, 2));
        in.push_back({"aux" + std::to_string(side), aux.back()});
      }
      return grad_check(name, [=] { return total_loss(logits, aux, gt, c).total; }, in, o);
    }));
  }
  return s;
}

std::vector<CheckReport> run_gradcheck_suite(const GradCheckOptions& options,
                                             const std::function<void(const std::string&)>& line,
                                             const std::string& filter) {
  std::vector<CheckReport> out;
  for (const auto& c : gradcheck_suite()) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    CheckReport r = c.run(options);
    if (line) {
      char buf[512];
      std::snprintf(buf, sizeof buf, "%-4s %-26s kind=%-9s max_rel_err=%.3e worst=%s checked=%lld time=%.2fs%s%s",
                    r.passed ? "PASS" : "FAIL", r.name.c_str(), c.kind.c_str(), r.max_rel_error,
                    r.worst_input.c_str(), static_cast<long long>([&] {
                      int64_t n = 0;
                      for (const auto& i : r.inputs) n += i.checked;
                      return n;
                    }()),
                    r.seconds, r.message.empty() ? "" : " error=", r.message.c_str());
      line(buf);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dm
