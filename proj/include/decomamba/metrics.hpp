#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "decomamba/data.hpp"
#include "decomamba/network.hpp"

namespace dm {

/// 2|P & G| / (|P| + |G|) for class c; 1 when both are empty.
double dice_score(const LabelMap& pred, const LabelMap& gt, int32_t c);
/// |P & G| / |P | G| for class c; 1 when both are empty.
double iou_score(const LabelMap& pred, const LabelMap& gt, int32_t c);

/// Foreground pixels with at least one 4-neighbor that is background or outside the image.
std::vector<uint8_t> mask_boundary(const std::vector<uint8_t>& mask, int64_t height, int64_t width);

/// Exact squared Euclidean distance from every pixel to the nearest nonzero
/// pixel of `features` (separable lower-envelope transform). Values are
/// integers stored as doubles; +inf when there are no features.
std::vector<double> squared_distance_transform(const std::vector<uint8_t>& features, int64_t height,
                                               int64_t width);

/// Symmetric 95th-percentile Hausdorff distance between two binary masks
/// (nonzero = foreground), in pixels. Boundary-to-boundary distances, nearest
/// rank ceil(0.95 n). Both empty: 0. Exactly one empty: the image diagonal.
double hd95(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt, int64_t height,
            int64_t width);
/// hd95 of the class-c indicator masks.
double hd95(const LabelMap& pred, const LabelMap& gt, int32_t c);

struct EvalReport {
  std::vector<double> per_class_dice, per_class_iou, per_class_hd95;  // all classes incl. background
  double mean_dice = 0, mean_iou = 0, mean_hd95 = 0;                  // foreground classes only
  int64_t sample_count = 0;

  std::string to_line() const;
};

/// Per-class metrics per case, averaged over cases, then over foreground classes.
EvalReport evaluate_masks(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                          int64_t num_classes);

/// Argmax labels of eval-mode logits; ties go to the lower class index.
template <typename T>
std::vector<LabelMap> argmax_labels(const Tensor<T>& logits);

template <typename T>
std::vector<LabelMap> predict_masks(const Model<T>& model, const std::vector<SegSample>& samples,
                                    const std::vector<size_t>& idx, int64_t batch_size = 8);

/// Evaluates `model` on the samples of `split`.
template <typename T>
EvalReport evaluate(const Model<T>& model, const Dataset& data, const std::string& split,
                    int64_t batch_size = 8);

}  // namespace dm
