#include <doctest.h>

#include "decomamba/bench.hpp"
#include "decomamba/ssm.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dm;
using test::random;

TEST_CASE("selective scan matches the naive recurrence in float32") {
  for (int64_t L : {1, 2, 7, 64, 257}) {
    CAPTURE(L);
    const uint64_t s = uint64_t(L) * 10;
    auto u = random<float>({2, 3, L}, s), delta = random<float>({2, 3, L}, s + 1, 0.01, 0.5);
    auto A = random<float>({3, 4}, s + 2, -2, -0.1), B = random<float>({2, 4, L}, s + 3);
    auto C = random<float>({2, 4, L}, s + 4), D = random<float>({3}, s + 5);
    auto y = selective_scan(u, delta, A, B, C, D);
    const auto ref = oracle::scan(u, delta, A, B, C, D);
    double err = 0;
    for (size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(double(y.data()[i]) - ref[i]));
    CHECK(err < 1e-5);
  }
}

TEST_CASE("selective scan is causal") {
  auto u = random<double>({1, 2, 10}, 1), delta = random<double>({1, 2, 10}, 2, 0.1, 0.5);
  auto A = random<double>({2, 3}, 3, -1, -0.1), B = random<double>({1, 3, 10}, 4), C = random<double>({1, 3, 10}, 5);
  auto D = random<double>({2}, 6);
  auto y1 = selective_scan(u, delta, A, B, C, D);
  u.data()[7] += 1.0;  // channel 0, t = 7
  auto y2 = selective_scan(u, delta, A, B, C, D);
  for (int t = 0; t < 7; ++t) CHECK(y1.at({0, 0, t}) == y2.at({0, 0, t}));
  CHECK(y1.at({0, 0, 7}) != y2.at({0, 0, 7}));
}

TEST_CASE("selective scan rejects non-positive step sizes") {
  auto u = Tensor<double>::zeros({1, 1, 2});
  auto A = Tensor<double>::full({1, 1}, -1.0), B = Tensor<double>::zeros({1, 1, 2});
  CHECK_THROWS_AS(selective_scan(u, Tensor<double>::zeros({1, 1, 2}), A, B, B, Tensor<double>::zeros({1})),
                  PreconditionError);
}

TEST_CASE("zero-order-hold discretization") {
  auto delta = Tensor<double>::from_data({1, 1}, {0.5});
  auto A = Tensor<double>::from_data({1, 2}, {-1.0, -3.0});
  auto B = Tensor<double>::from_data({1, 2}, {2.0, 4.0});
  auto d = discretize(delta, A, B);
  CHECK(d.decay.data()[0] == doctest::Approx(std::exp(-0.5)));
  CHECK(d.decay.data()[1] == doctest::Approx(std::exp(-1.5)));
  CHECK(d.input_gain.data()[0] == doctest::Approx(1.0));
  CHECK(d.input_gain.data()[1] == doctest::Approx(2.0));
}

TEST_CASE("scan directions round-trip") {
  auto x = random<double>({2, 3, 4, 5}, 7);
  for (auto d : kScanDirections) {
    CAPTURE(to_string(d));
    auto seq = to_sequence(x, d);
    CHECK(seq.dim(2) == 20);
    CHECK(test::bit_equal(from_sequence(seq, d, 4, 5), x));
  }
  // row_backward reads the row-major flattening in reverse.
  auto rb = to_sequence(x, ScanDirection::row_backward);
  CHECK(rb.at({0, 0, 0}) == x.at({0, 0, 3, 4}));
  auto cf = to_sequence(x, ScanDirection::col_forward);
  CHECK(cf.at({0, 0, 1}) == x.at({0, 0, 1, 0}));
}

TEST_CASE("SS2D and VSSMB preserve shape; VSSMB is residual") {
  ParamStore<double> store(1);
  VSSMB<double> block(store, "v", 4, 3);
  auto x = random<double>({2, 4, 3, 5}, 8);
  auto y = block.forward(x);
  CHECK(y.shape() == x.shape());
  // A zero output projection reduces the block to the identity.
  auto w = block.out_proj.weight;
  std::fill(w.data().begin(), w.data().end(), 0.0);
  auto b = block.out_proj.bias;
  if (b.defined()) std::fill(b.data().begin(), b.data().end(), 0.0);
  CHECK(test::bit_equal(block.forward(x), x));
}

TEST_CASE("scan time grows linearly with length") {
  const double t1 = time_selective_scan(4096), t2 = time_selective_scan(8192);
  MESSAGE("scan 4096: " << t1 * 1e3 << " ms, 8192: " << t2 * 1e3 << " ms");
  CHECK(t2 / t1 <= 2.5);
}
