#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "decomamba/rng.hpp"
#include "decomamba/tensor.hpp"

namespace dm {

struct LabelMap {
  int64_t height = 0, width = 0;
  std::vector<int32_t> data;  // row-major class indices

  int32_t at(int64_t h, int64_t w) const { return data[static_cast<size_t>(h * width + w)]; }
  bool operator==(const LabelMap&) const = default;
};

struct SegSample {
  std::string id;
  int64_t channels = 0, height = 0, width = 0;
  std::vector<float> image;  // [C,H,W] in [0,1]
  LabelMap mask;
};

struct Dataset {
  int64_t num_classes = 0;
  std::vector<SegSample> samples;
  std::vector<std::string> split;  // "train" or "val", parallel to samples

  /// Indices of the samples in `name`, in manifest order.
  std::vector<size_t> indices(const std::string& name) const;
};

enum class ShapeKind { ellipse, rectangle, ring };

/// A filled shape in pixel coordinates (x = column, y = row; pixel (r, c)
/// covers [c, c+1) x [r, r+1)). Rectangles and ellipses are rotated by
/// `angle` radians; a ring keeps the points whose normalized radius is in
/// [1 - thickness, 1].
struct ShapeSpec {
  ShapeKind kind = ShapeKind::ellipse;
  double cx = 0, cy = 0, rx = 1, ry = 1, angle = 0, thickness = 0.4;

  bool contains(double x, double y) const;
};

/// Mask of the pixels whose centers lie inside the shape.
LabelMap rasterize(const ShapeSpec& shape, int64_t height, int64_t width, int32_t label = 1);

struct SynthSpec {
  int64_t count = 250;
  int64_t val_count = 50;  // the last val_count samples form the validation split
  int64_t height = 96, width = 96;
  int64_t num_classes = 4;
  int64_t channels = 3;
  double noise = 0.04;  // Gaussian noise std
};

/// Every foreground class appears once per image, drawn as shape kind
/// (class - 1) mod 3 in its own color, without overlaps. Pixel values are
/// quantized to k/255 so that the on-disk round trip is exact.
Dataset synth_generate(const SynthSpec& spec, uint64_t seed);

/// Geometric augmentation applied as: horizontal flip, vertical flip, then
/// `rot90` quarter turns counter-clockwise. A nonzero `angle` (radians) adds
/// a free rotation, bilinear for images and nearest for masks, and is not
/// invertible.
struct AugmentOp {
  bool hflip = false, vflip = false;
  int rot90 = 0;
  double angle = 0;
};

AugmentOp sample_augment(Rng& rng, bool free_rotation = false);
SegSample apply_augment(const SegSample& s, const AugmentOp& op);
/// Undoes the flips and quarter turns of `op`.
SegSample invert_augment(const SegSample& s, const AugmentOp& op);

/// Binary PNM: P6 (3 channels) or P5 (1 channel), maxval 255, no comments.
struct PnmImage {
  int64_t channels = 0, height = 0, width = 0;
  std::vector<uint8_t> pixels;  // interleaved [H,W,C]
};
void write_pnm(const std::filesystem::path& path, const PnmImage& img);
PnmImage read_pnm(const std::filesystem::path& path);

/// Directory with images/<id>.ppm|pgm, masks/<id>.pgm and manifest.txt.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

/// Image loaded from PPM/PGM as [C,H,W] floats in [0,1].
SegSample load_image(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const LabelMap& mask);

/// Resamples to out_h x out_w with half-pixel centers: bilinear (edge
/// clamped) for the image, nearest for the mask.
SegSample resize_sample(const SegSample& s, int64_t out_h, int64_t out_w);
LabelMap resize_labels(const LabelMap& m, int64_t out_h, int64_t out_w);

/// Stacks samples[idx] into an image batch [B,C,H,W].
template <typename T>
Tensor<T> stack_images(const std::vector<SegSample>& samples, const std::vector<size_t>& idx);

}  // namespace dm
