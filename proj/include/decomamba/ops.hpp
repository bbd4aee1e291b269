#pragma once

#include <functional>

#include <cstdint>
#include <vector>

#include "decomamba/tensor.hpp"

namespace dm {

// Elementwise. Binary ops broadcast numpy-style; gradients are reduced back
// onto the broadcast operand.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, T value);
template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> silu(const Tensor<T>& x);
template <typename T> Tensor<T> softplus(const Tensor<T>& x);
/// max(x, lo); the gradient passes only where x > lo.
template <typename T> Tensor<T> clamp_min(const Tensor<T>& x, T lo);

/// [..., M, K] x [..., K, N]. Leading dims must match, or one side is rank 2.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm);
template <typename T> Tensor<T> flip(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t length);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim);
template <typename T> Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim);
/// Max along an axis; the gradient goes to the first maximal index.
template <typename T> Tensor<T> max(const Tensor<T>& x, int axis, bool keepdim);

/// Cross-correlation with zero padding. x [B,Cin,H,W], w [Cout,Cin,kH,kW],
/// bias [Cout] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int padding);

/// One k x k filter per channel, stride 1, "same" padding (k odd).
/// x [B,C,H,W], w [C,1,k,k], bias [C] or undefined.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

enum class Mode { train, eval };

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Normalizes per channel of [B,C,H,W]. In train mode batch statistics are
/// used (and differentiated through) and the running statistics updated in
/// place; the running variance is the unbiased estimate.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                     BatchNormOptions options = {});

/// Normalizes over `axis` independently at every other index.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, int axis,
                     double eps = 1e-5);

enum class PoolMode { max, avg };

/// Non-padded pooling over [B,C,H,W].
template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolMode mode, int kernel, int stride);

/// Global pooling to [B,C,1,1].
template <typename T> Tensor<T> adaptive_pool2d(const Tensor<T>& x, PoolMode mode);

/// Bilinear x2 upsampling with half-pixel centers (align_corners = false):
/// output index o samples source coordinate (o + 0.5) / 2 - 0.5, clamped to
/// the valid range.
template <typename T> Tensor<T> upsample_bilinear2x(const Tensor<T>& x);

/// Samples x [B,C,H,W] at absolute pixel coordinates coords [B,K,H',W',2],
/// last axis ordered (x = column, y = row). Out-of-range taps read zero.
/// Returns [B,C,K,H',W'].
template <typename T>
Tensor<T> grid_sample_bilinear(const Tensor<T>& x, const Tensor<T>& coords);

template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, int axis);

/// Selective-scan recurrence, one independent sequence per (batch, channel):
///   h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t,  h_0 = 0
///   y_t = <C_t, h_t> + D * u_t
/// u, delta [B,C,L]; A [C,N] (negative); B, C [B,N,L]; D [C]. Returns [B,C,L].
/// The backward pass recomputes states per sequence instead of storing them.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& A,
                         const Tensor<T>& B, const Tensor<T>& C, const Tensor<T>& D);

/// Multiply-accumulate tally of the ops executed on this thread while alive.
/// conv: B*Cout*H'*W'*Cin*k^2, depthwise: B*C*H*W*k^2, matmul: batch*M*N*K,
/// scan: B*C*L*N. Elementwise ops, norms and pooling are not counted.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;
  uint64_t total() const { return total_; }

  static void record(uint64_t macs);

 private:
  uint64_t total_ = 0;
  MacCounter* previous_;
};

/// Internal thread cap from DM_THREADS (default: hardware concurrency).
int thread_count();

/// Runs fn over [0, n) split into contiguous chunks, one per thread (at most
/// thread_count()). Chunks must write disjoint memory; the first exception
/// thrown by any chunk is rethrown.
void parallel_for(int64_t n, const std::function<void(int64_t begin, int64_t end)>& fn);

}  // namespace dm
