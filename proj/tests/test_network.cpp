#include <doctest.h>

#include <set>

#include "decomamba/losses.hpp"
#include "decomamba/network.hpp"
#include "test_util.hpp"

using namespace dm;
using test::bit_equal;
using test::random;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.height = c.width = 64;
  c.num_classes = 3;
  c.stem_channels = 4;
  c.encoder_widths = {8, 16, 16, 24};
  c.encoder_depths = {1, 1, 1, 1};
  c.encoder_heads = {1, 1, 2, 2};
  c.mlp_ratio = 2;
  c.decoder_widths = {24, 16, 16, 8, 8, 8};
  c.ssm_state = 4;
  c.ca_reduction = 4;
  return c;
}

int64_t pw(int64_t cin, int64_t cout) { return cin * cout + cout; }
int64_t ag_params(int64_t x, int64_t g) {
  const int64_t f = attention_gate_width(x);
  return pw(x, f) + pw(g, f) + pw(f, 1);
}

}  // namespace

TEST_CASE("pyramid and output resolutions") {
  ModelConfig c = small_config();
  Model<float> model(c);
  auto x = random<float>({2, 3, 64, 64}, 1, 0, 1);
  auto pyr = model.encoder().forward(x, Mode::eval);
  CHECK(pyr.x1.shape() == Shape{2, 4, 64, 64});
  CHECK(pyr.x2.shape() == Shape{2, 4, 32, 32});
  CHECK(pyr.x3.shape() == Shape{2, 8, 16, 16});
  CHECK(pyr.x4.shape() == Shape{2, 16, 8, 8});
  CHECK(pyr.x5.shape() == Shape{2, 16, 4, 4});
  CHECK(pyr.x6.shape() == Shape{2, 24, 2, 2});
  auto out = model.forward(x, Mode::eval);
  CHECK(out.logits.shape() == Shape{2, 3, 64, 64});
  REQUIRE(out.aux_logits.size() == 5);
  for (int s = 0; s < 5; ++s) CHECK(out.aux_logits[size_t(s)].shape() == Shape{2, 3, 2 << s, 2 << s});
}

TEST_CASE("default config gives a 7x7 bottleneck at 224") {
  ModelConfig c;
  Model<float> model(c);
  NoGradGuard guard;
  auto pyr = model.encoder().forward(Tensor<float>::zeros({1, 3, 224, 224}), Mode::eval);
  CHECK(pyr.x6.shape() == Shape{1, 256, 7, 7});
}

TEST_CASE("eval mode is a pure function of the input") {
  Model<float> model(small_config());
  auto x = random<float>({2, 3, 64, 64}, 2, 0, 1);
  auto a = model.forward(x, Mode::eval), b = model.forward(x, Mode::eval);
  CHECK(bit_equal(a.logits, b.logits));
  for (size_t s = 0; s < 5; ++s) CHECK(bit_equal(a.aux_logits[s], b.aux_logits[s]));
}

TEST_CASE("permuting the batch permutes the eval outputs") {
  Model<float> model(small_config());
  auto x = random<float>({3, 3, 64, 64}, 3, 0, 1);
  const int perm[3] = {2, 0, 1};
  std::vector<Tensor<float>> parts;
  for (int p : perm) parts.push_back(slice(x, 0, p, 1));
  auto xp = concat(parts, 0);
  auto y = model.forward(x, Mode::eval).logits, yp = model.forward(xp, Mode::eval).logits;
  for (int i = 0; i < 3; ++i) CHECK(bit_equal(slice(yp, 0, i, 1), slice(y, 0, perm[i], 1)));
  // Two identical images give identical slices.
  auto twin = concat<float>({slice(x, 0, 0, 1), slice(x, 0, 0, 1)}, 0);
  auto yt = model.forward(twin, Mode::eval).logits;
  CHECK(bit_equal(slice(yt, 0, 0, 1), slice(yt, 0, 1, 1)));
}

TEST_CASE("every trainable parameter receives a gradient") {
  ModelConfig c = small_config();
  Model<double> model(c);
  // Open the deformable branches so their gradients are not structurally zero at init.
  Rng rng(4);
  for (const auto& e : model.store().params()) {
    if (e.path.find(".offset.") == std::string::npos && e.path.find(".mask.") == std::string::npos) continue;
    auto t = e.value;
    for (auto& v : t.data()) v = rng.uniform(-0.05, 0.05);
  }
  std::set<std::string> dead;
  for (const auto& e : model.store().params()) dead.insert(e.path);
  for (uint64_t seed = 0; seed < 3 && !dead.empty(); ++seed) {
    model.store().zero_grad();
    auto x = random<double>({2, 3, 64, 64}, 10 + seed, 0, 1);
    std::vector<int32_t> labels(2 * 64 * 64);
    Rng lr(seed);
    for (auto& l : labels) l = int32_t(lr.below(3));
    auto out = model.forward(x, Mode::train);
    total_loss(out.logits, out.aux_logits, LabelBatch(2, 64, 64, 3, labels), c).total.backward();
    for (const auto& e : model.store().params()) {
      for (double g : e.value.grad()) {
        if (g != 0.0) {
          dead.erase(e.path);
          break;
        }
      }
    }
  }
  for (const auto& p : dead) MESSAGE("no gradient: " << p);
  CHECK(dead.empty());
}

TEST_CASE("AG ablation removes exactly the second gate and channel attention") {
  ModelConfig cag = small_config(), ag = small_config();
  ag.gate = GateKind::ag;
  const auto& d = cag.decoder_widths;
  const int64_t skips[5] = {cag.encoder_widths[2], cag.encoder_widths[1], cag.encoder_widths[0], cag.stem_channels,
                            cag.stem_channels};
  int64_t expected = 0;
  for (int i = 0; i < 5; ++i) {
    const int64_t e = skips[i], g = d[size_t(i + 1)];
    expected += ag_params(g, e) + pw(e + g, (e + g) / cag.ca_reduction) + pw((e + g) / cag.ca_reduction, e + g);
  }
  CHECK(count_params(cag) - count_params(ag) == expected);
}

TEST_CASE("standard and deformable configurations agree at initialization") {
  ModelConfig a = small_config(), b = small_config();
  b.conv = ConvKind::standard;
  Model<float> ma(a), mb(b);
  for (int i = 0; i < 3; ++i) {
    auto x = random<float>({1, 3, 64, 64}, 20 + uint64_t(i), 0, 1);
    CHECK(test::max_abs_diff(ma.forward(x, Mode::eval).logits, mb.forward(x, Mode::eval).logits) < 1e-5);
  }
}

TEST_CASE("parameter init depends only on the seed and path") {
  Model<float> a(small_config()), b(small_config());
  REQUIRE(a.store().params().size() == b.store().params().size());
  for (size_t i = 0; i < a.store().params().size(); ++i) {
    CHECK(bit_equal(a.store().params()[i].value, b.store().params()[i].value));
  }
  ModelConfig other = small_config();
  other.seed = 1;
  Model<float> c(other);
  CHECK_FALSE(bit_equal(a.store().params()[0].value, c.store().params()[0].value));
}

TEST_CASE("config validation") {
  ModelConfig c = small_config();
  c.height = 48;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.decoder_widths.pop_back();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.lambdas = {0.1, 0.2, 0.2, 0.3, 0.4};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"hieght", 64}}), ConfigError);
  CHECK_THROWS_AS(ModelConfig::preset("v9"), ConfigError);
}

TEST_CASE("config JSON round trip and diff") {
  ModelConfig c = ModelConfig::preset("desk");
  c.gate = GateKind::ag;
  c.lambdas = {0.1, 0.2, 0.3, 0.4, 0.5};
  const ModelConfig back = model_config_from_json(to_json(c));
  CHECK(diff_configs(c, back).empty());
  ModelConfig d = c;
  d.num_classes = 7;
  const auto diff = diff_configs(c, d);
  REQUIRE(diff.size() == 1);
  CHECK(diff[0].find("num_classes") != std::string::npos);
}

TEST_CASE("count_flops and describe") {
  const ModelConfig c = small_config();
  CHECK(count_flops(c) > 0);
  Model<float> model(c);
  const std::string text = model.describe();
  CHECK(text.find("params=" + std::to_string(count_params(c))) != std::string::npos);
  CHECK(text.find("module decoder.d1") != std::string::npos);
}
