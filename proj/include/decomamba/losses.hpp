#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "decomamba/config.hpp"
#include "decomamba/ops.hpp"

namespace dm {

/// Integer class map [B,H,W] with values in [0, num_classes).
struct LabelBatch {
  int64_t batch = 0, height = 0, width = 0;
  int64_t num_classes = 0;
  std::vector<int32_t> labels;

  LabelBatch() = default;
  LabelBatch(int64_t batch, int64_t height, int64_t width, int64_t num_classes,
             std::vector<int32_t> labels);
  int32_t at(int64_t b, int64_t h, int64_t w) const { return labels[static_cast<size_t>((b * height + h) * width + w)]; }
};

/// One-hot [B,N,H,W].
template <typename T> Tensor<T> one_hot(const LabelBatch& labels);

/// 1 - 2 sum(p y) / (sum p^2 + sum y^2 + eps), sums over batch, classes and pixels jointly.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& target, double eps = 1e-6);

/// Mean over classes of the per-class Dice loss (for reporting only).
template <typename T>
std::vector<double> per_class_dice_loss(const Tensor<T>& probs, const Tensor<T>& target,
                                        double eps = 1e-6);

/// Ground-truth class frequencies over non-overlapping kh x kw tiles.
template <typename T>
struct WindowedDistribution {
  Tensor<T> P;  // [B,N,Hs,Ws], rows sum to 1
  int64_t kh = 1, kw = 1;
};

template <typename T>
WindowedDistribution<T> windowed_gt_distribution(const LabelBatch& gt, int64_t out_height,
                                                 int64_t out_width);

/// Floor applied to Q inside the log.
inline constexpr double kKlFloor = 1e-12;

/// KL(P || Q) per position [B,Hs,Ws] with 0 log 0 = 0; log_q = log_softmax over axis 1.
template <typename T>
Tensor<T> kl_divergence_map(const WindowedDistribution<T>& P, const Tensor<T>& log_q);

/// (1 - max_n P)^alpha per position [B,Hs,Ws].
template <typename T>
Tensor<T> boundary_weight(const WindowedDistribution<T>& P, double alpha);

/// Mean over batch and positions of (1 + W) * KL at one scale.
template <typename T>
Tensor<T> dist_loss_scale(const WindowedDistribution<T>& P, const Tensor<T>& head_logits,
                          double alpha);

/// sum_s lambda_s * dist_loss_scale(s). `aux_logits[s]` is the scale paired with
/// lambdas[s]; lambdas must be strictly increasing.
template <typename T>
Tensor<T> msda_loss(const std::vector<Tensor<T>>& aux_logits, const LabelBatch& gt,
                    const std::vector<double>& lambdas, double alpha);

struct BoundaryStats {
  double min = 0, max = 0, mean = 0;
};

/// Per-scale entries are ordered like the aux logits: coarsest (/32) to finest (/2).
struct LossReport {
  double dice = 0;
  std::vector<double> per_scale;  // distribution (or deep-supervision CE) term per scale
  std::vector<double> lambdas;    // weight applied to each per_scale entry
  std::vector<BoundaryStats> boundary;
  double total = 0;

  /// key=value form for the training log.
  std::string to_line() const;
};

template <typename T>
struct LossResult {
  Tensor<T> total;  // differentiable scalar
  LossReport report;
};

/// Dice on softmax(logits) plus the auxiliary term selected by config.supervision.
template <typename T>
LossResult<T> total_loss(const Tensor<T>& logits, const std::vector<Tensor<T>>& aux_logits,
                         const LabelBatch& gt, const ModelConfig& config);

}  // namespace dm
