#pragma once

#include <array>
#include <string>

#include "decomamba/layers.hpp"

namespace dm {

template <typename T>
struct Discretized {
  Tensor<T> decay;       // exp(delta * A)      [L,C,N]
  Tensor<T> input_gain;  // delta * B           [L,C,N]
};

/// Zero-order hold on A, Euler on B. delta [L,C] > 0, A [C,N], B [L,N].
template <typename T>
Discretized<T> discretize(const Tensor<T>& delta, const Tensor<T>& A, const Tensor<T>& B);

enum class ScanDirection { row_forward = 0, row_backward = 1, col_forward = 2, col_backward = 3 };

inline constexpr std::array<ScanDirection, 4> kScanDirections = {
    ScanDirection::row_forward, ScanDirection::row_backward, ScanDirection::col_forward,
    ScanDirection::col_backward};

const char* to_string(ScanDirection d);

/// [B,C,H,W] -> [B,C,H*W] in the visiting order of `d`.
template <typename T>
Tensor<T> to_sequence(const Tensor<T>& x, ScanDirection d);
/// Inverse of to_sequence.
template <typename T>
Tensor<T> from_sequence(const Tensor<T>& seq, ScanDirection d, int64_t height, int64_t width);

enum class ScanMerge { sum, mean };

/// Input-dependent projections owned by one scan direction.
template <typename T>
struct DirectionParams {
  Tensor<T> x_proj;   // [rank + 2N, C]: position features -> (dt_low, B, C)
  Tensor<T> dt_proj;  // [C, rank]
  Tensor<T> dt_bias;  // [C]
};

/// Four-direction selective scan over a feature map. A = -exp(A_log) and the
/// skip D are shared by the directions; the projections are per direction.
template <typename T>
struct SS2D {
  int64_t channels = 0, state = 0, rank = 0;
  Tensor<T> A_log;  // [C,N]
  Tensor<T> D;      // [C]
  std::array<DirectionParams<T>, 4> dirs;
  std::array<bool, 4> active{true, true, true, true};
  ScanMerge merge = ScanMerge::sum;

  SS2D() = default;
  SS2D(ParamStore<T>& store, const std::string& path, int64_t channels, int64_t state,
       int64_t rank);

  /// One direction: returns the scan output already mapped back to [B,C,H,W].
  Tensor<T> scan(const Tensor<T>& x, ScanDirection d) const;
  Tensor<T> forward(const Tensor<T>& x) const;
};

/// Visual state-space block:
///   x + out_proj(LN(SS2D(SiLU(DWConv(a)))) * SiLU(z)),  (a, z) = in_proj(LN(x))
template <typename T>
struct VSSMB {
  LayerNorm<T> norm_in;
  Conv2d<T> in_proj;  // C -> 2E
  DepthwiseConv2d<T> dw;
  SS2D<T> ss2d;
  LayerNorm<T> norm_out;
  Conv2d<T> out_proj;  // E -> C
  int64_t inner = 0;

  VSSMB() = default;
  VSSMB(ParamStore<T>& store, const std::string& path, int64_t channels, int64_t state,
        int expand = 2, ScanMerge merge = ScanMerge::sum);
  Tensor<T> forward(const Tensor<T>& x) const;
};

/// Rank of the step-size projection for a block of `channels` width.
int64_t dt_rank_for(int64_t channels);

}  // namespace dm
