#include <doctest.h>

#include <cmath>

#include "decomamba/losses.hpp"
#include "test_util.hpp"

using namespace dm;
using test::random;

namespace {

LabelBatch random_batch(int64_t b, int64_t h, int64_t w, int64_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<int32_t> l(size_t(b * h * w));
  for (auto& v : l) v = int32_t(rng.below(uint64_t(n)));
  return LabelBatch(b, h, w, n, l);
}

// Aux logits at /32 .. /2 of an hxw label map.
std::vector<Tensor<double>> aux_for(int64_t b, int64_t h, int64_t n, uint64_t seed) {
  std::vector<Tensor<double>> out;
  for (int s = 0; s < 5; ++s) {
    const int64_t side = h >> (5 - s);
    out.push_back(random<double>({b, n, side, side}, seed + uint64_t(s), -2, 2));
  }
  return out;
}

double scalar(const Tensor<double>& t) { return t.data()[0]; }

}  // namespace

TEST_CASE("dice of a half-confident prediction on half-labelled pixels is 1/3") {
  // One class, four pixels, two labelled: 1 - 2*1 / (4*0.25 + 2) = 1/3.
  auto probs = Tensor<double>::full({1, 1, 2, 2}, 0.5);
  auto target = Tensor<double>::from_data({1, 1, 2, 2}, {1, 1, 0, 0});
  CHECK(scalar(dice_loss(probs, target)) == doctest::Approx(1.0 / 3).epsilon(1e-6));
  CHECK(scalar(dice_loss(target, target)) == doctest::Approx(0).epsilon(1e-6));
}

TEST_CASE("windowed distribution of [0,0,1,2]") {
  LabelBatch gt(1, 2, 2, 3, {0, 0, 1, 2});
  auto P = windowed_gt_distribution<double>(gt, 1, 1);
  CHECK(P.P.shape() == Shape{1, 3, 1, 1});
  CHECK(P.P.data()[0] == doctest::Approx(0.5));
  CHECK(P.P.data()[1] == doctest::Approx(0.25));
  CHECK(P.P.data()[2] == doctest::Approx(0.25));
  auto w = boundary_weight(P, 1.0);
  CHECK(w.data()[0] == doctest::Approx(0.5));
}

TEST_CASE("windowed distributions sum to one and are one-hot at full resolution") {
  auto gt = random_batch(2, 32, 32, 4, 1);
  for (int64_t side : {1, 2, 4, 8, 16, 32}) {
    auto P = windowed_gt_distribution<double>(gt, side, side);
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t i = 0; i < side * side; ++i) {
        double sum = 0;
        for (int64_t n = 0; n < 4; ++n) sum += P.P.data()[size_t((b * 4 + n) * side * side + i)];
        CHECK(std::abs(sum - 1) < 1e-6);
      }
  }
  auto full = windowed_gt_distribution<double>(gt, 32, 32);
  CHECK(full.kh == 1);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t h = 0; h < 32; ++h)
      for (int64_t w = 0; w < 32; ++w)
        for (int64_t n = 0; n < 4; ++n) {
          CHECK(full.P.data()[size_t(((b * 4 + n) * 32 + h) * 32 + w)] == (gt.at(b, h, w) == n ? 1.0 : 0.0));
        }
}

TEST_CASE("boundary weight vanishes on pure tiles only") {
  std::vector<int32_t> l(16, 1);
  l[0] = 2;  // top-left 2x2 tile is mixed
  LabelBatch gt(1, 4, 4, 3, l);
  auto P = windowed_gt_distribution<double>(gt, 2, 2);
  auto w = boundary_weight(P, 1.0);
  CHECK(w.data()[0] > 0);
  CHECK(w.data()[1] == 0);
  CHECK(w.data()[2] == 0);
  CHECK(w.data()[3] == 0);
}

TEST_CASE("KL divergence: known value, zero at equality, nonnegative") {
  LabelBatch gt(1, 1, 1, 2, {0});
  auto P = windowed_gt_distribution<double>(gt, 1, 1);
  auto uniform = log_softmax(Tensor<double>::zeros({1, 2, 1, 1}), 1);
  CHECK(scalar(kl_divergence_map(P, uniform)) == doctest::Approx(std::log(2.0)).epsilon(1e-9));

  auto big = random_batch(2, 16, 16, 4, 3);
  auto Pb = windowed_gt_distribution<double>(big, 4, 4);
  auto self = log(clamp_min(Pb.P, 1e-300));
  auto zero = kl_divergence_map(Pb, self);
  for (double v : zero.data()) CHECK(std::abs(v) < 1e-12);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto q = log_softmax(random<double>({2, 4, 4, 4}, 100 + seed, -3, 3), 1);
    const auto kl = kl_divergence_map(Pb, q);
    for (double v : kl.data()) CHECK(v >= 0);
  }
}

TEST_CASE("msda is linear in lambda and decomposes over scales") {
  auto gt = random_batch(2, 64, 64, 3, 5);
  auto aux = aux_for(2, 64, 3, 50);
  const std::vector<double> lam{0.1, 0.2, 0.3, 0.4, 0.5};
  const double alpha = 1.0;
  double sum = 0;
  for (int s = 0; s < 5; ++s) {
    const int64_t side = aux[size_t(s)].shape()[2];
    sum += lam[size_t(s)] * scalar(dist_loss_scale(windowed_gt_distribution<double>(gt, side, side), aux[size_t(s)], alpha));
  }
  const double whole = scalar(msda_loss(aux, gt, lam, alpha));
  CHECK(whole == doctest::Approx(sum).epsilon(1e-12));
  std::vector<double> lam3;
  for (double l : lam) lam3.push_back(3 * l);
  CHECK(scalar(msda_loss(aux, gt, lam3, alpha)) == doctest::Approx(3 * whole).epsilon(1e-12));
  CHECK_THROWS_AS(msda_loss(aux, gt, {0.5, 0.4, 0.3, 0.2, 0.1}, alpha), ConfigError);
}

TEST_CASE("distribution term is the weighted mean of KL") {
  auto gt = random_batch(1, 8, 8, 3, 8);
  auto P = windowed_gt_distribution<double>(gt, 2, 2);
  auto logits = random<double>({1, 3, 2, 2}, 9);
  auto kl = kl_divergence_map(P, log_softmax(logits, 1));
  auto w = boundary_weight(P, 2.0);
  double expected = 0;
  for (size_t i = 0; i < 4; ++i) expected += (1 + w.data()[i]) * kl.data()[i];
  CHECK(scalar(dist_loss_scale(P, logits, 2.0)) == doctest::Approx(expected / 4).epsilon(1e-12));
}

TEST_CASE("total loss equals dice plus the weighted scale terms") {
  auto gt = random_batch(2, 64, 64, 3, 11);
  auto aux = aux_for(2, 64, 3, 60);
  auto logits = random<double>({2, 3, 64, 64}, 70, -2, 2);
  for (auto sup : {Supervision::dice, Supervision::dice_deepsup, Supervision::dice_msda}) {
    ModelConfig c;
    c.num_classes = 3;
    c.supervision = sup;
    auto r = total_loss(logits, aux, gt, c);
    double sum = r.report.dice;
    for (size_t s = 0; s < r.report.per_scale.size(); ++s) sum += r.report.lambdas[s] * r.report.per_scale[s];
    CHECK(std::abs(scalar(r.total) - sum) < 1e-6);
    CHECK(std::abs(r.report.total - sum) < 1e-6);
    const double dice = scalar(dice_loss(exp(log_softmax(logits, 1)), one_hot<double>(gt)));
    CHECK(r.report.dice == doctest::Approx(dice).epsilon(1e-12));
    REQUIRE(r.report.per_scale.size() == 5);
    if (sup == Supervision::dice) {
      for (double v : r.report.per_scale) CHECK(v == 0);
    }
  }
}

TEST_CASE("default scale weights increase and are normalized") {
  ModelConfig c;
  auto lam = c.scale_weights();
  REQUIRE(lam.size() == 5);
  double sum = 0;
  for (size_t s = 0; s < 5; ++s) {
    CHECK(lam[s] == doctest::Approx(double(s + 1) / 15));
    sum += lam[s];
  }
  CHECK(sum == doctest::Approx(1));
}
