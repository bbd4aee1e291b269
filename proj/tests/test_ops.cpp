#include <doctest.h>

#include "decomamba/blocks.hpp"
#include "test_util.hpp"

using namespace dm;
using test::max_abs_diff;
using test::random;

namespace {

// Direct nested-loop convolution (zero padding).
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int stride,
                          int pad) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0), k = w.dim(2);
  const int64_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  std::vector<double> out(size_t(B * O * Ho * Wo));
  for (int64_t n = 0; n < B; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          double s = b.defined() ? b.data()[size_t(o)] : 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t u = 0; u < k; ++u)
              for (int64_t v = 0; v < k; ++v) {
                const int64_t r = i * stride - pad + u, q = j * stride - pad + v;
                if (r < 0 || r >= H || q < 0 || q >= W) continue;
                s += x.at({n, c, r, q}) * w.at({o, c, u, v});
              }
          out[size_t(((n * O + o) * Ho + i) * Wo + j)] = s;
        }
  return Tensor<double>::from_data({B, O, Ho, Wo}, out);
}

}  // namespace

TEST_CASE("conv2d agrees with the nested-loop definition") {
  auto x = random({2, 3, 7, 6}, 1), w = random({4, 3, 3, 3}, 2), b = random({4}, 3);
  for (int stride : {1, 2}) {
    CHECK(max_abs_diff(conv2d(x, w, b, stride, 1), naive_conv(x, w, b, stride, 1)) < 1e-12);
  }
  auto w7 = random({2, 3, 7, 7}, 4);
  CHECK(max_abs_diff(conv2d(x, w7, Tensor<double>(), 4, 3), naive_conv(x, w7, Tensor<double>(), 4, 3)) < 1e-12);
}

TEST_CASE("depthwise conv equals per-channel single conv") {
  auto x = random({1, 3, 5, 5}, 5), w = random({3, 1, 3, 3}, 6), b = random({3}, 7);
  auto y = depthwise_conv2d(x, w, b);
  for (int64_t c = 0; c < 3; ++c) {
    auto xc = slice(x, 1, c, 1), wc = slice(w, 0, c, 1), bc = slice(b, 0, c, 1);
    CHECK(max_abs_diff(slice(y, 1, c, 1), naive_conv(xc, wc, bc, 1, 1)) < 1e-12);
  }
}

TEST_CASE("pooling hand examples") {
  auto x = Tensor<double>::from_data({1, 1, 2, 4}, {1, 5, 2, 0, 3, -1, 7, 4});
  auto mx = pool2d(x, PoolMode::max, 2, 2), av = pool2d(x, PoolMode::avg, 2, 2);
  CHECK(mx.at({0, 0, 0, 0}) == 5);
  CHECK(mx.at({0, 0, 0, 1}) == 7);
  CHECK(av.at({0, 0, 0, 0}) == doctest::Approx(2.0));
  CHECK(av.at({0, 0, 0, 1}) == doctest::Approx(3.25));
  CHECK(adaptive_pool2d(x, PoolMode::max).item() == 7);
  CHECK(adaptive_pool2d(x, PoolMode::avg).item() == doctest::Approx(21.0 / 8));
}

TEST_CASE("bilinear x2 upsampling preserves constants and linear ramps in the interior") {
  auto c = Tensor<double>::full({1, 2, 3, 3}, 4.5);
  const auto up = upsample_bilinear2x(c);
  for (double v : up.data()) CHECK(v == doctest::Approx(4.5));
  std::vector<double> ramp(16);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) ramp[size_t(i * 4 + j)] = j;
  auto up2 = upsample_bilinear2x(Tensor<double>::from_data({1, 1, 4, 4}, ramp));
  CHECK(up2.dim(2) == 8);
  // Half-pixel centers: output column q samples input x = (q + 0.5) / 2 - 0.5.
  for (int q = 1; q < 7; ++q) CHECK(up2.at({0, 0, 3, q}) == doctest::Approx((q + 0.5) / 2 - 0.5));
}

TEST_CASE("grid sample at integer coordinates reads pixels and zero-pads outside") {
  auto x = random({1, 2, 3, 4}, 8);
  // coords [B, P, H', W', 2] as (x, y)
  auto coords = Tensor<double>::from_data({1, 1, 1, 3, 2}, {2, 1, 0, 0, -5, 1});
  auto y = grid_sample_bilinear(x, coords);
  CHECK(y.at({0, 0, 0, 0, 0}) == x.at({0, 0, 1, 2}));
  CHECK(y.at({0, 1, 0, 0, 1}) == x.at({0, 1, 0, 0}));
  CHECK(y.at({0, 0, 0, 0, 2}) == 0.0);
}

TEST_CASE("grid sample interpolates linearly between neighbours") {
  auto x = Tensor<double>::from_data({1, 1, 1, 2}, {1.0, 3.0});
  auto coords = Tensor<double>::from_data({1, 1, 1, 1, 2}, {0.25, 0.0});
  CHECK(grid_sample_bilinear(x, coords).item() == doctest::Approx(1.5));
}

TEST_CASE("deformable conv with zero offsets and zero mask logits is a standard conv") {
  // m = 2 * sigmoid(0) = 1, so every tap is unmodulated.
  auto x = random({2, 3, 6, 5}, 9), w = random({4, 3, 3, 3}, 10), b = random({4}, 11);
  auto y = deformable_conv2d(x, w, b, Tensor<double>::zeros({2, 18, 6, 5}), Tensor<double>::zeros({2, 9, 6, 5}));
  CHECK(max_abs_diff(y, conv2d(x, w, b, 1, 1)) < 1e-12);
}

TEST_CASE("a whole-pixel offset shifts the sampled input") {
  auto x = random({1, 1, 5, 5}, 12);
  auto w = Tensor<double>::zeros({1, 1, 3, 3});
  w.data()[4] = 1.0;  // centre tap only
  std::vector<double> off(18 * 25, 0.0);
  for (int p = 0; p < 25; ++p) off[size_t(8 * 25 + p)] = 1.0;  // centre tap dx = +1
  auto y = deformable_conv2d(x, w, Tensor<double>(), Tensor<double>::from_data({1, 18, 5, 5}, off),
                             Tensor<double>::zeros({1, 9, 5, 5}));
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 4; ++c) CHECK(y.at({0, 0, r, c}) == doctest::Approx(x.at({0, 0, r, c + 1})));
  CHECK(y.at({0, 0, 2, 4}) == 0.0);
}

TEST_CASE("batch norm train mode normalizes and eval mode uses running statistics") {
  auto x = random({4, 2, 3, 3}, 13, -3, 5);
  auto g = Tensor<double>::full({2}, 1.0), b = Tensor<double>::zeros({2});
  auto rm = Tensor<double>::zeros({2}), rv = Tensor<double>::full({2}, 1.0);
  auto y = batch_norm(x, g, b, rm, rv, Mode::train);
  for (int64_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 9; ++i) m += y.data()[size_t((n * 2 + c) * 9 + i)];
    m /= 36;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 9; ++i) v += std::pow(y.data()[size_t((n * 2 + c) * 9 + i)] - m, 2);
    CHECK(m == doctest::Approx(0).scale(1));
    CHECK(v / 36 == doctest::Approx(1).epsilon(1e-4));
  }
  CHECK(rm.data()[0] != 0.0);
  auto rm2 = Tensor<double>::from_data({2}, {1.0, -1.0}), rv2 = Tensor<double>::from_data({2}, {4.0, 0.25});
  auto e = batch_norm(x, g, b, rm2, rv2, Mode::eval);
  CHECK(e.at({0, 0, 0, 0}) == doctest::Approx((x.at({0, 0, 0, 0}) - 1.0) / std::sqrt(4.0 + 1e-5)));
  CHECK(rm2.data()[0] == 1.0);
}

TEST_CASE("layer norm over the channel axis of an image") {
  auto x = random({2, 4, 2, 2}, 14);
  auto y = layer_norm(x, Tensor<double>::full({4}, 1.0), Tensor<double>::zeros({4}), 1);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 2; ++j) {
      double m = 0;
      for (int64_t c = 0; c < 4; ++c) m += y.at({0, c, i, j});
      CHECK(m == doctest::Approx(0).scale(1));
    }
}

TEST_CASE("MAC counter formulas") {
  NoGradGuard guard;
  MacCounter counter;
  conv2d(Tensor<float>::zeros({2, 3, 8, 8}), Tensor<float>::zeros({5, 3, 3, 3}), Tensor<float>(), 2, 1);
  CHECK(counter.total() == uint64_t(2 * 5 * 4 * 4 * 3 * 9));
  MacCounter inner;
  depthwise_conv2d(Tensor<float>::zeros({1, 4, 6, 6}), Tensor<float>::zeros({4, 1, 3, 3}), Tensor<float>());
  matmul(Tensor<float>::zeros({3, 2, 5}), Tensor<float>::zeros({3, 5, 7}));
  CHECK(inner.total() == uint64_t(4 * 36 * 9 + 3 * 2 * 7 * 5));
}
