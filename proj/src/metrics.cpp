#include "decomamba/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dm {

namespace {

void check_pair(const LabelMap& a, const LabelMap& b) {
  if (a.height != b.height || a.width != b.width || a.data.size() != b.data.size()) {
    throw ShapeError("metrics: masks differ in size");
  }
}

std::vector<uint8_t> indicator(const LabelMap& m, int32_t c) {
  std::vector<uint8_t> out(m.data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = m.data[i] == c;
  return out;
}

// 1D squared distance transform of sampled function f (lower envelope of parabolas).
void dt_1d(const double* f, double* d, int64_t n, std::vector<int64_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  int64_t k = -1;
  for (int64_t q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    double s = -inf;
    while (k >= 0) {
      const int64_t p = v[static_cast<size_t>(k)];
      s = ((f[q] + double(q * q)) - (f[p] + double(p * p))) / double(2 * (q - p));
      if (s > z[static_cast<size_t>(k)]) break;
      s = -inf;
      --k;
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
  }
  if (k < 0) {
    std::fill(d, d + n, inf);
    return;
  }
  int64_t j = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (j < k && z[static_cast<size_t>(j + 1)] < double(q)) ++j;
    const int64_t p = v[static_cast<size_t>(j)];
    d[q] = double((q - p) * (q - p)) + f[p];
  }
}

double percentile95(std::vector<double>& values) {
  const size_t n = values.size();
  const size_t rank = (95 * n + 99) / 100;  // ceil(0.95 n), >= 1 for n >= 1
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

}  // namespace

double dice_score(const LabelMap& pred, const LabelMap& gt, int32_t c) {
  check_pair(pred, gt);
  int64_t p = 0, g = 0, both = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] == c, b = gt.data[i] == c;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

double iou_score(const LabelMap& pred, const LabelMap& gt, int32_t c) {
  check_pair(pred, gt);
  int64_t either = 0, both = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] == c, b = gt.data[i] == c;
    either += a || b;
    both += a && b;
  }
  if (either == 0) return 1.0;
  return static_cast<double>(both) / static_cast<double>(either);
}

std::vector<uint8_t> mask_boundary(const std::vector<uint8_t>& m, int64_t H, int64_t W) {
  std::vector<uint8_t> out(m.size(), 0);
  auto fg = [&](int64_t r, int64_t c) {
    return r >= 0 && r < H && c >= 0 && c < W && m[static_cast<size_t>(r * W + c)] != 0;
  };
  for (int64_t r = 0; r < H; ++r)
    for (int64_t c = 0; c < W; ++c) {
      if (!fg(r, c)) continue;
      out[static_cast<size_t>(r * W + c)] = !fg(r - 1, c) || !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1);
    }
  return out;
}

std::vector<double> squared_distance_transform(const std::vector<uint8_t>& features, int64_t H, int64_t W) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const int64_t n = std::max(H, W);
  std::vector<double> grid(features.size()), f(static_cast<size_t>(n)), d(static_cast<size_t>(n));
  std::vector<int64_t> v(static_cast<size_t>(n));
  std::vector<double> z(static_cast<size_t>(n) + 1);
  for (size_t i = 0; i < features.size(); ++i) grid[i] = features[i] ? 0.0 : inf;
  for (int64_t c = 0; c < W; ++c) {
    for (int64_t r = 0; r < H; ++r) f[static_cast<size_t>(r)] = grid[static_cast<size_t>(r * W + c)];
    dt_1d(f.data(), d.data(), H, v, z);
    for (int64_t r = 0; r < H; ++r) grid[static_cast<size_t>(r * W + c)] = d[static_cast<size_t>(r)];
  }
  for (int64_t r = 0; r < H; ++r) {
    std::copy_n(grid.begin() + r * W, W, f.begin());
    dt_1d(f.data(), d.data(), W, v, z);
    std::copy_n(d.begin(), W, grid.begin() + r * W);
  }
  return grid;
}

double hd95(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt, int64_t H, int64_t W) {
  if (pred.size() != static_cast<size_t>(H * W) || gt.size() != pred.size()) {
    throw ShapeError("hd95: mask sizes do not match " + std::to_string(H) + "x" + std::to_string(W));
  }
  const bool pred_empty = std::none_of(pred.begin(), pred.end(), [](uint8_t v) { return v != 0; });
  const bool gt_empty = std::none_of(gt.begin(), gt.end(), [](uint8_t v) { return v != 0; });
  if (pred_empty && gt_empty) return 0.0;
  if (pred_empty || gt_empty) return std::sqrt(double(H * H + W * W));
  const auto bp = mask_boundary(pred, H, W);
  const auto bg = mask_boundary(gt, H, W);
  auto directed = [&](const std::vector<uint8_t>& from, const std::vector<uint8_t>& to) {
    const auto dist2 = squared_distance_transform(to, H, W);
    std::vector<double> d;
    for (size_t i = 0; i < from.size(); ++i) {
      if (from[i]) d.push_back(std::sqrt(dist2[i]));
    }
    return percentile95(d);
  };
  return std::max(directed(bp, bg), directed(bg, bp));
}

double hd95(const LabelMap& pred, const LabelMap& gt, int32_t c) {
  check_pair(pred, gt);
  return hd95(indicator(pred, c), indicator(gt, c), pred.height, pred.width);
}

std::string EvalReport::to_line() const {
  std::ostringstream os;
  os.precision(6);
  auto list = [&os](const char* key, const std::vector<double>& v) {
    os << ' ' << key << '=';
    for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  };
  os << "samples=" << sample_count << " mean_dice=" << mean_dice << " mean_iou=" << mean_iou
     << " mean_hd95=" << mean_hd95;
  list("dice", per_class_dice);
  list("iou", per_class_iou);
  list("hd95", per_class_hd95);
  return os.str();
}

EvalReport evaluate_masks(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                          int64_t num_classes) {
  if (preds.empty()) throw PreconditionError("evaluate: empty dataset");
  if (preds.size() != gts.size()) throw ShapeError("evaluate: prediction and ground-truth counts differ");
  if (num_classes < 2) throw ConfigError("evaluate: need at least 2 classes");
  EvalReport r;
  const auto N = static_cast<size_t>(num_classes);
  r.per_class_dice.assign(N, 0);
  r.per_class_iou.assign(N, 0);
  r.per_class_hd95.assign(N, 0);
  r.sample_count = static_cast<int64_t>(preds.size());
  // Per-case scores are computed in parallel and summed in case order.
  std::vector<double> scores(preds.size() * N * 3);
  parallel_for(static_cast<int64_t>(preds.size()), [&](int64_t begin, int64_t end) {
    for (auto i = static_cast<size_t>(begin); i < static_cast<size_t>(end); ++i)
      for (size_t c = 0; c < N; ++c) {
        const auto cls = static_cast<int32_t>(c);
        double* row = &scores[(i * N + c) * 3];
        row[0] = dice_score(preds[i], gts[i], cls);
        row[1] = iou_score(preds[i], gts[i], cls);
        row[2] = hd95(preds[i], gts[i], cls);
      }
  });
  for (size_t i = 0; i < preds.size(); ++i)
    for (size_t c = 0; c < N; ++c) {
      const double* row = &scores[(i * N + c) * 3];
      r.per_class_dice[c] += row[0];
      r.per_class_iou[c] += row[1];
      r.per_class_hd95[c] += row[2];
    }
  const double cases = static_cast<double>(preds.size());
  for (size_t c = 0; c < N; ++c) {
    r.per_class_dice[c] /= cases;
    r.per_class_iou[c] /= cases;
    r.per_class_hd95[c] /= cases;
    if (c == 0) continue;
    r.mean_dice += r.per_class_dice[c];
    r.mean_iou += r.per_class_iou[c];
    r.mean_hd95 += r.per_class_hd95[c];
  }
  const double fg = static_cast<double>(N - 1);
  r.mean_dice /= fg;
  r.mean_iou /= fg;
  r.mean_hd95 /= fg;
  return r;
}

template <typename T>
std::vector<LabelMap> argmax_labels(const Tensor<T>& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax_labels: expected [B,N,H,W], got " + shape_str(logits.shape()));
  const int64_t B = logits.dim(0), N = logits.dim(1), H = logits.dim(2), W = logits.dim(3), HW = H * W;
  std::vector<LabelMap> out;
  const T* p = logits.data().data();
  for (int64_t b = 0; b < B; ++b) {
    LabelMap m{H, W, std::vector<int32_t>(static_cast<size_t>(HW), 0)};
    for (int64_t i = 0; i < HW; ++i) {
      T best = p[(b * N) * HW + i];
      for (int64_t c = 1; c < N; ++c) {
        const T v = p[(b * N + c) * HW + i];
        if (v > best) {
          best = v;
          m.data[static_cast<size_t>(i)] = static_cast<int32_t>(c);
        }
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

template <typename T>
std::vector<LabelMap> predict_masks(const Model<T>& model, const std::vector<SegSample>& samples,
                                    const std::vector<size_t>& idx, int64_t batch_size) {
  NoGradGuard no_grad;
  std::vector<LabelMap> out;
  for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(idx.size(), start + static_cast<size_t>(batch_size));
    std::vector<size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(start),
                              idx.begin() + static_cast<std::ptrdiff_t>(end));
    auto labels = argmax_labels(model.forward(stack_images<T>(samples, chunk), Mode::eval).logits);
    for (auto& m : labels) out.push_back(std::move(m));
  }
  return out;
}

template <typename T>
EvalReport evaluate(const Model<T>& model, const Dataset& data, const std::string& split,
                    int64_t batch_size) {
  const auto idx = data.indices(split);
  if (idx.empty()) throw PreconditionError("evaluate: split '" + split + "' is empty");
  std::vector<LabelMap> gts;
  for (size_t i : idx) gts.push_back(data.samples[i].mask);
  return evaluate_masks(predict_masks(model, data.samples, idx, batch_size), gts, data.num_classes);
}

#define DM_INSTANTIATE(T)                                                                             \
  template std::vector<LabelMap> argmax_labels(const Tensor<T>&);                                     \
  template std::vector<LabelMap> predict_masks(const Model<T>&, const std::vector<SegSample>&,        \
                                               const std::vector<size_t>&, int64_t);                  \
  template EvalReport evaluate(const Model<T>&, const Dataset&, const std::string&, int64_t);

DM_INSTANTIATE(float)
DM_INSTANTIATE(double)
#undef DM_INSTANTIATE

}  // namespace dm
