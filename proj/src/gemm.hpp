#pragma once

#include <Eigen/Core>

namespace dm::detail {

/// dst (+)= a * b with a result that does not depend on buffer addresses.
/// Eigen's matrix-vector and reduction kernels peel to an aligned start, so
/// their summation order follows the heap layout; vector-shaped products are
/// therefore done here in fixed k order. Matrix-matrix products pack into
/// aligned panels and are address independent.
template <typename Dst, typename A, typename B>
void product(Dst&& dst, const A& a, const B& b, bool accumulate) {
  using T = typename std::decay_t<Dst>::Scalar;
  if (dst.rows() == 1 || dst.cols() == 1) {
    for (Eigen::Index i = 0; i < dst.rows(); ++i)
      for (Eigen::Index j = 0; j < dst.cols(); ++j) {
        T s = 0;
        for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
        dst(i, j) = accumulate ? dst(i, j) + s : s;
      }
    return;
  }
  if (accumulate) {
    dst.noalias() += a * b;
  } else {
    dst.noalias() = a * b;
  }
}

}  // namespace dm::detail
