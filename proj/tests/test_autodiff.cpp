#include <doctest.h>

#include "decomamba/gradcheck.hpp"
#include "test_util.hpp"

using namespace dm;
using test::random;

TEST_CASE("broadcast add sums the gradient over expanded axes") {
  auto a = Tensor<double>::zeros({2, 3}, true);
  auto b = Tensor<double>::zeros({3}, true);
  sum(add(a, b)).backward();
  for (double g : b.grad()) CHECK(g == 2.0);
  for (double g : a.grad()) CHECK(g == 1.0);
}

TEST_CASE("gradients accumulate when a tensor is used twice") {
  auto x = Tensor<double>::from_data({2}, {1.5, -2.0}, true);
  sum(mul(x, x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  CHECK(x.grad()[1] == doctest::Approx(-4.0));
}

TEST_CASE("diamond graph visits the shared node once") {
  auto x = Tensor<double>::from_data({1}, {2.0}, true);
  auto y = exp(x);
  auto z = add(mul(y, y), y);  // e^{2x} + e^x
  z.backward(std::vector<double>{1.0});
  CHECK(x.grad()[0] == doctest::Approx(2 * std::exp(4.0) + std::exp(2.0)));
}

TEST_CASE("no tape is recorded under NoGradGuard") {
  auto x = Tensor<double>::from_data({2}, {1, 2}, true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(grad_enabled());
}

TEST_CASE("non-finite results raise NumericError") {
  auto x = Tensor<double>::from_data({1}, {-1.0});
  CHECK_THROWS_AS(log(x), NumericError);
}

TEST_CASE("shape mismatches are reported") {
  CHECK_THROWS_AS(add(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({4})), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({4, 2})), ShapeError);
}

TEST_CASE("log_softmax rows exponentiate to a distribution") {
  auto x = random({3, 5}, 1, -10, 10);
  auto p = exp(log_softmax(x, 1));
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int c = 0; c < 5; ++c) s += p.at({r, c});
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("softplus is accurate in both tails") {
  auto x = Tensor<double>::from_data({3}, {-40.0, 0.0, 40.0});
  auto y = softplus(x);
  CHECK(y.data()[0] == doctest::Approx(std::exp(-40.0)).epsilon(1e-9));
  CHECK(y.data()[1] == doctest::Approx(std::log(2.0)));
  CHECK(y.data()[2] == doctest::Approx(40.0));
}

TEST_CASE("matmul matches a hand computation and its transpose identities") {
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({2, 2}, {5, 6, 7, 8});
  auto c = matmul(a, b);
  CHECK(c.at({0, 0}) == 19);
  CHECK(c.at({0, 1}) == 22);
  CHECK(c.at({1, 0}) == 43);
  CHECK(c.at({1, 1}) == 50);
}

TEST_CASE("grad_check accepts a correct op and rejects a sign-flipped backward") {
  auto x = random({4, 3}, 2);
  auto f = [&] { return mul(exp(x), x); };
  CHECK(grad_check("exp_mul", f, {{"x", x}}).passed);
  testing::inject_backward_fault("exp");
  auto bad = grad_check("exp_mul", f, {{"x", x}});
  testing::inject_backward_fault("");
  CHECK_FALSE(bad.passed);
  CHECK(bad.max_rel_error > 1e-2);
}

TEST_CASE("a fault in one op fails exactly the suite rows that use it") {
  testing::inject_backward_fault("relu");
  const auto reports = run_gradcheck_suite({}, nullptr, "relu");
  testing::inject_backward_fault("");
  REQUIRE(reports.size() == 1);
  CHECK_FALSE(reports[0].passed);
  const auto clean = run_gradcheck_suite({}, nullptr, "relu");
  CHECK(clean[0].passed);
}
