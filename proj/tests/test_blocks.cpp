#include <doctest.h>

#include "decomamba/blocks.hpp"
#include "test_util.hpp"

using namespace dm;
using test::max_abs_diff;
using test::random;

namespace {

// 1x1 conv with bias: cin*cout + cout.
int64_t pw(int64_t cin, int64_t cout) { return cin * cout + cout; }

int64_t ag_params(int64_t x, int64_t g) {
  const int64_t f = attention_gate_width(x);
  return pw(x, f) + pw(g, f) + pw(f, 1);
}

}  // namespace

TEST_CASE("attention gate output is the input scaled by a map in (0,1)") {
  ParamStore<double> store(1);
  AttentionGate<double> ag(store, "ag", 4, 6);
  auto x = random({2, 4, 5, 5}, 1), g = random({2, 6, 5, 5}, 2);
  auto out = ag.forward(x, g);
  REQUIRE(out.attention_map.shape() == Shape{2, 1, 5, 5});
  for (double a : out.attention_map.data()) CHECK((a > 0 && a < 1));
  for (int64_t c = 0; c < 4; ++c)
    CHECK(out.gated.at({1, c, 2, 3}) == doctest::Approx(x.at({1, c, 2, 3}) * out.attention_map.at({1, 0, 2, 3})));
  CHECK(store.param_count() == ag_params(4, 6));
  CHECK_THROWS_AS(ag.forward(x, random({2, 6, 4, 5}, 3)), ShapeError);
}

TEST_CASE("channel attention scales each channel uniformly with a shared MLP") {
  ParamStore<double> store(2);
  ChannelAttention<double> ca(store, "ca", 8, 4);
  CHECK(store.param_count() == pw(8, 2) + pw(2, 8));
  auto x = random({2, 8, 3, 3}, 4);
  auto s = ca.scale(x);
  REQUIRE(s.shape() == Shape{2, 8, 1, 1});
  auto y = ca.forward(x);
  CHECK(y.at({0, 5, 1, 2}) == doctest::Approx(x.at({0, 5, 1, 2}) * s.at({0, 5, 0, 0})));
  ParamStore<double> bad(0);
  CHECK_THROWS_AS(ChannelAttention<double>(bad, "ca", 6, 4), ConfigError);
}

TEST_CASE("co-attention gate parameter count and output shape") {
  ParamStore<double> store(3);
  CoAttentionGate<double> cag(store, "cag", 4, 12, 6, 4);
  CHECK(store.param_count() == ag_params(4, 12) + ag_params(12, 4) + pw(16, 4) + pw(4, 16) + pw(16, 6));
  auto y = cag.forward(random({2, 4, 3, 3}, 5), random({2, 12, 3, 3}, 6));
  CHECK(y.shape() == Shape{2, 6, 3, 3});
}

TEST_CASE("deformable conv block starts as the standard conv") {
  ParamStore<double> a(4), b(4);
  DeformableConv2d<double> deform(a, "conv", 3, 5);
  Conv2d<double> plain(b, "conv", 3, 5, 3);
  auto x = random({2, 3, 6, 6}, 7);
  CHECK(max_abs_diff(deform.forward(x), plain(x)) < 1e-12);
}

TEST_CASE("deformable and standard residual blocks agree at initialization") {
  ParamStore<float> a(5), b(5);
  DeformableResidualBlock<float> deform(a, "drb", 3, 6, true);
  DeformableResidualBlock<float> plain(b, "drb", 3, 6, false);
  for (int i = 0; i < 20; ++i) {
    auto x = random<float>({2, 3, 8, 8}, 100 + uint64_t(i), -2, 2);
    CHECK(max_abs_diff(deform.forward(x, Mode::train), plain.forward(x, Mode::train)) < 1e-5);
  }
}

TEST_CASE("residual block shortcut is identity at equal widths") {
  ParamStore<double> store(6);
  DeformableResidualBlock<double> same(store, "s", 4, 4, false);
  CHECK_FALSE(same.shortcut.has_value());
  DeformableResidualBlock<double> widen(store, "w", 4, 6, false);
  CHECK(widen.shortcut.has_value());
  CHECK(widen.forward(random({1, 4, 5, 5}, 8), Mode::train).shape() == Shape{1, 6, 5, 5});
}

TEST_CASE("distribution head keeps the feature's resolution") {
  ParamStore<double> store(7);
  DistributionHead<double> head(store, "head", 6, 4);
  CHECK(store.param_count() == (6 * 9 + 6) + 2 * 6 + pw(6, 4));
  CHECK(head.forward(random({2, 6, 3, 5}, 9), Mode::train).shape() == Shape{2, 4, 3, 5});
}

TEST_CASE("stem produces full and half resolution features") {
  ParamStore<double> store(8);
  CnnStem<double> stem(store, "stem", 3, 4);
  auto out = stem.forward(random({2, 3, 8, 6}, 10), Mode::train);
  CHECK(out.x1.shape() == Shape{2, 4, 8, 6});
  CHECK(out.x2.shape() == Shape{2, 4, 4, 3});
  for (double v : out.x1.data()) CHECK(v >= 0.0);
}
