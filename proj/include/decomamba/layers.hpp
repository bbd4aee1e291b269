#pragma once

#include <string>

#include "decomamba/ops.hpp"
#include "decomamba/params.hpp"

namespace dm {

// Thin parameter-owning wrappers over the primitives. Each registers its
// tensors in a ParamStore under `path`.

template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when constructed without bias
  int stride = 1;
  int padding = 0;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& path, int64_t cin, int64_t cout, int kernel,
         int stride_ = 1, int padding_ = -1, bool with_bias = true, bool zero_init = false)
      : stride(stride_), padding(padding_ < 0 ? kernel / 2 : padding_) {
    const Init init = zero_init ? Init::zeros() : Init::fan_in(cin * kernel * kernel);
    weight = store.param(join_path(path, "weight"), {cout, cin, kernel, kernel}, init);
    if (with_bias) bias = store.param(join_path(path, "bias"), {cout}, zero_init ? Init::zeros() : init);
  }

  int64_t in_channels() const { return weight.dim(1); }
  int64_t out_channels() const { return weight.dim(0); }
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }
};

template <typename T>
struct DepthwiseConv2d {
  Tensor<T> weight;
  Tensor<T> bias;

  DepthwiseConv2d() = default;
  DepthwiseConv2d(ParamStore<T>& store, const std::string& path, int64_t channels, int kernel = 3) {
    weight = store.param(join_path(path, "weight"), {channels, 1, kernel, kernel},
                         Init::fan_in(kernel * kernel));
    bias = store.param(join_path(path, "bias"), {channels}, Init::zeros());
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return depthwise_conv2d(x, weight, bias); }
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  mutable Tensor<T> running_mean, running_var;

  BatchNorm2d() = default;
  BatchNorm2d(ParamStore<T>& store, const std::string& path, int64_t channels) {
    gamma = store.param(join_path(path, "weight"), {channels}, Init::constant(1.0));
    beta = store.param(join_path(path, "bias"), {channels}, Init::zeros());
    running_mean = store.buffer(join_path(path, "running_mean"), {channels}, T(0));
    running_var = store.buffer(join_path(path, "running_var"), {channels}, T(1));
  }

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) const {
    return batch_norm(x, gamma, beta, running_mean, running_var, mode);
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;
  int axis = -1;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& path, int64_t width, int axis_)
      : axis(axis_) {
    gamma = store.param(join_path(path, "weight"), {width}, Init::constant(1.0));
    beta = store.param(join_path(path, "bias"), {width}, Init::zeros());
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, axis); }
};

/// Affine map on the last axis: [..., in] -> [..., out].
template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& path, int64_t in, int64_t out, bool with_bias = true) {
    weight = store.param(join_path(path, "weight"), {in, out}, Init::fan_in(in));
    if (with_bias) bias = store.param(join_path(path, "bias"), {out}, Init::fan_in(in));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
  }
};

}  // namespace dm
