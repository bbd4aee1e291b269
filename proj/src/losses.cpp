#include "decomamba/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace dm {

LabelBatch::LabelBatch(int64_t batch_, int64_t height_, int64_t width_, int64_t num_classes_,
                       std::vector<int32_t> labels_)
    : batch(batch_), height(height_), width(width_), num_classes(num_classes_),
      labels(std::move(labels_)) {
  if (static_cast<int64_t>(labels.size()) != batch * height * width) {
    throw ShapeError("labels: " + std::to_string(labels.size()) + " values for [" +
                     std::to_string(batch) + "," + std::to_string(height) + "," +
                     std::to_string(width) + "]");
  }
  for (int32_t v : labels) {
    if (v < 0 || v >= num_classes) {
      throw PreconditionError("labels: class " + std::to_string(v) + " outside [0, " +
                              std::to_string(num_classes) + ")");
    }
  }
}

template <typename T>
Tensor<T> one_hot(const LabelBatch& gt) {
  const int64_t HW = gt.height * gt.width, N = gt.num_classes;
  std::vector<T> out(static_cast<size_t>(gt.batch * N * HW), T(0));
  for (int64_t b = 0; b < gt.batch; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      const int64_t c = gt.labels[static_cast<size_t>(b * HW + i)];
      out[static_cast<size_t>((b * N + c) * HW + i)] = T(1);
    }
  return Tensor<T>::from_data({gt.batch, N, gt.height, gt.width}, std::move(out));
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& target, double eps) {
  if (probs.shape() != target.shape()) {
    throw ShapeError("dice_loss: prediction " + shape_str(probs.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  auto inter = sum(mul(probs, target));
  auto denom = add_scalar(add(sum(mul(probs, probs)), sum(mul(target, target))), static_cast<T>(eps));
  return add_scalar(neg(mul_scalar(div(inter, denom), T(2))), T(1));
}

template <typename T>
std::vector<double> per_class_dice_loss(const Tensor<T>& probs, const Tensor<T>& target, double eps) {
  if (probs.shape() != target.shape() || probs.rank() != 4) {
    throw ShapeError("per_class_dice_loss: prediction " + shape_str(probs.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  const int64_t B = probs.dim(0), N = probs.dim(1), HW = probs.dim(2) * probs.dim(3);
  std::vector<double> out;
  for (int64_t c = 0; c < N; ++c) {
    double inter = 0, pp = 0, yy = 0;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < HW; ++i) {
        const size_t at = static_cast<size_t>((b * N + c) * HW + i);
        const double p = probs.data()[at], y = target.data()[at];
        inter += p * y;
        pp += p * p;
        yy += y * y;
      }
    out.push_back(1.0 - 2.0 * inter / (pp + yy + eps));
  }
  return out;
}

template <typename T>
WindowedDistribution<T> windowed_gt_distribution(const LabelBatch& gt, int64_t hs, int64_t ws) {
  if (hs <= 0 || ws <= 0 || gt.height % hs != 0 || gt.width % ws != 0) {
    throw ConfigError("windowed distribution: " + std::to_string(gt.height) + "x" +
                      std::to_string(gt.width) + " does not tile into " + std::to_string(hs) + "x" +
                      std::to_string(ws));
  }
  WindowedDistribution<T> out;
  out.kh = gt.height / hs;
  out.kw = gt.width / ws;
  const int64_t N = gt.num_classes;
  std::vector<int64_t> counts(static_cast<size_t>(gt.batch * N * hs * ws), 0);
  for (int64_t b = 0; b < gt.batch; ++b)
    for (int64_t h = 0; h < gt.height; ++h)
      for (int64_t w = 0; w < gt.width; ++w) {
        const int64_t c = gt.at(b, h, w);
        ++counts[static_cast<size_t>(((b * N + c) * hs + h / out.kh) * ws + w / out.kw)];
      }
  const double area = static_cast<double>(out.kh * out.kw);
  std::vector<T> p(counts.size());
  for (size_t i = 0; i < p.size(); ++i) p[i] = static_cast<T>(static_cast<double>(counts[i]) / area);
  out.P = Tensor<T>::from_data({gt.batch, N, hs, ws}, std::move(p));
  return out;
}

template <typename T>
Tensor<T> kl_divergence_map(const WindowedDistribution<T>& P, const Tensor<T>& log_q) {
  if (log_q.shape() != P.P.shape()) {
    throw ShapeError("kl_divergence_map: log Q " + shape_str(log_q.shape()) + " vs P " +
                     shape_str(P.P.shape()));
  }
  std::vector<T> plogp(static_cast<size_t>(P.P.numel()));
  for (size_t i = 0; i < plogp.size(); ++i) {
    const T p = P.P.data()[i];
    plogp[i] = p > T(0) ? p * std::log(p) : T(0);
  }
  auto entropy_term = Tensor<T>::from_data(P.P.shape(), std::move(plogp));
  auto floored = clamp_min(log_q, static_cast<T>(std::log(kKlFloor)));
  // Rounding can leave P = Q a hair below zero.
  return clamp_min(sum(sub(entropy_term, mul(P.P, floored)), 1, false), T(0));
}

template <typename T>
Tensor<T> boundary_weight(const WindowedDistribution<T>& P, double alpha) {
  if (!(alpha > 0)) throw ConfigError("boundary_weight: alpha must be positive");
  const int64_t B = P.P.dim(0), N = P.P.dim(1), HW = P.P.dim(2) * P.P.dim(3);
  std::vector<T> w(static_cast<size_t>(B * HW));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      T peak = 0;
      for (int64_t c = 0; c < N; ++c) peak = std::max(peak, P.P.data()[static_cast<size_t>((b * N + c) * HW + i)]);
      w[static_cast<size_t>(b * HW + i)] = static_cast<T>(std::pow(1.0 - static_cast<double>(peak), alpha));
    }
  return Tensor<T>::from_data({B, P.P.dim(2), P.P.dim(3)}, std::move(w));
}

template <typename T>
Tensor<T> dist_loss_scale(const WindowedDistribution<T>& P, const Tensor<T>& head_logits, double alpha) {
  auto kl = kl_divergence_map(P, log_softmax(head_logits, 1));
  return mean(mul(kl, add_scalar(boundary_weight(P, alpha), T(1))));
}

namespace {

void check_lambdas(const std::vector<double>& lambdas, size_t scales) {
  if (lambdas.size() != scales) {
    throw ConfigError("msda: " + std::to_string(lambdas.size()) + " lambdas for " +
                      std::to_string(scales) + " scales");
  }
  for (size_t i = 1; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > lambdas[i - 1])) throw ConfigError("msda: lambdas must be strictly increasing");
  }
}

}  // namespace

template <typename T>
Tensor<T> msda_loss(const std::vector<Tensor<T>>& aux_logits, const LabelBatch& gt,
                    const std::vector<double>& lambdas, double alpha) {
  check_lambdas(lambdas, aux_logits.size());
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (size_t s = 0; s < aux_logits.size(); ++s) {
    const auto& a = aux_logits[s];
    auto P = windowed_gt_distribution<T>(gt, a.dim(2), a.dim(3));
    total = add(total, mul_scalar(dist_loss_scale(P, a, alpha), static_cast<T>(lambdas[s])));
  }
  return total;
}

std::string LossReport::to_line() const {
  std::ostringstream os;
  os.precision(9);
  auto list = [&os](const char* key, const std::vector<double>& v) {
    os << ' ' << key << '=';
    for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  };
  os << "dice=" << dice;
  list("scale_terms", per_scale);
  list("lambdas", lambdas);
  if (!boundary.empty()) {
    std::vector<double> means;
    for (const auto& b : boundary) means.push_back(b.mean);
    list("boundary_mean", means);
  }
  os << " total=" << total;
  return os.str();
}

template <typename T>
LossResult<T> total_loss(const Tensor<T>& logits, const std::vector<Tensor<T>>& aux_logits,
                         const LabelBatch& gt, const ModelConfig& config) {
  const int64_t S = ModelConfig::kAuxScales;
  LossResult<T> out;
  auto probs = exp(log_softmax(logits, 1));
  auto dice = dice_loss(probs, one_hot<T>(gt));
  out.report.dice = static_cast<double>(dice.item());
  out.total = dice;

  // lambda index for each aux scale (aux ordered coarsest to finest).
  const auto lambdas = config.scale_weights();
  check_lambdas(lambdas, static_cast<size_t>(S));
  out.report.lambdas.resize(static_cast<size_t>(S));
  for (int64_t s = 0; s < S; ++s) {
    out.report.lambdas[static_cast<size_t>(s)] = lambdas[static_cast<size_t>(config.lambda_reverse ? S - 1 - s : s)];
  }
  out.report.per_scale.assign(static_cast<size_t>(S), 0.0);

  if (config.supervision != Supervision::dice) {
    if (static_cast<int64_t>(aux_logits.size()) != S) {
      throw ShapeError("total_loss: expected " + std::to_string(S) + " aux outputs, got " +
                       std::to_string(aux_logits.size()));
    }
    Tensor<T> target;
    if (config.supervision == Supervision::dice_deepsup) target = one_hot<T>(gt);
    for (int64_t s = 0; s < S; ++s) {
      const auto& a = aux_logits[static_cast<size_t>(s)];
      Tensor<T> term;
      if (config.supervision == Supervision::dice_msda) {
        auto P = windowed_gt_distribution<T>(gt, a.dim(2), a.dim(3));
        term = dist_loss_scale(P, a, config.alpha);
        auto w = boundary_weight(P, config.alpha);
        BoundaryStats st{1e300, -1e300, 0};
        for (T v : w.data()) {
          st.min = std::min(st.min, double(v));
          st.max = std::max(st.max, double(v));
          st.mean += double(v);
        }
        st.mean /= static_cast<double>(w.numel());
        out.report.boundary.push_back(st);
      } else {
        Tensor<T> up = a;
        while (up.dim(2) < gt.height) up = upsample_bilinear2x(up);
        if (up.dim(2) != gt.height || up.dim(3) != gt.width) {
          throw ShapeError("total_loss: aux " + shape_str(a.shape()) + " does not upsample to " +
                           std::to_string(gt.height) + "x" + std::to_string(gt.width));
        }
        const T scale = static_cast<T>(-1.0 / static_cast<double>(gt.batch * gt.height * gt.width));
        term = mul_scalar(sum(mul(log_softmax(up, 1), target)), scale);
      }
      out.report.per_scale[static_cast<size_t>(s)] = static_cast<double>(term.item());
      out.total = add(out.total, mul_scalar(term, static_cast<T>(out.report.lambdas[static_cast<size_t>(s)])));
    }
  }
  out.report.total = static_cast<double>(out.total.item());
  return out;
}

#define DM_INSTANTIATE(T)                                                                          \
  template Tensor<T> one_hot<T>(const LabelBatch&);                                                \
  template Tensor<T> dice_loss(const Tensor<T>&, const Tensor<T>&, double);                        \
  template std::vector<double> per_class_dice_loss(const Tensor<T>&, const Tensor<T>&, double);    \
  template WindowedDistribution<T> windowed_gt_distribution<T>(const LabelBatch&, int64_t, int64_t); \
  template Tensor<T> kl_divergence_map(const WindowedDistribution<T>&, const Tensor<T>&);          \
  template Tensor<T> boundary_weight(const WindowedDistribution<T>&, double);                      \
  template Tensor<T> dist_loss_scale(const WindowedDistribution<T>&, const Tensor<T>&, double);    \
  template Tensor<T> msda_loss(const std::vector<Tensor<T>>&, const LabelBatch&,                   \
                               const std::vector<double>&, double);                                \
  template LossResult<T> total_loss(const Tensor<T>&, const std::vector<Tensor<T>>&,               \
                                    const LabelBatch&, const ModelConfig&);

DM_INSTANTIATE(float)
DM_INSTANTIATE(double)
#undef DM_INSTANTIATE

}  // namespace dm
