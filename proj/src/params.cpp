#include "decomamba/params.hpp"

#include <cmath>

namespace dm {

Init Init::fan_in(int64_t fan_in) {
  return uniform(1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1))));
}

template <typename T>
void ParamStore<T>::claim(const std::string& path) {
  if (param_index_.count(path) != 0 || buffer_index_.count(path) != 0) {
    throw ConfigError("duplicate parameter path: " + path);
  }
}

template <typename T>
Tensor<T> ParamStore<T>::param(const std::string& path, Shape shape, Init init) {
  claim(path);
  auto t = Tensor<T>::zeros(std::move(shape), true);
  if (init.kind == Init::Kind::constant) {
    for (auto& v : t.data()) v = static_cast<T>(init.value);
  } else if (init.kind == Init::Kind::uniform) {
    Rng rng = rng_for(path);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-init.value, init.value));
  }
  param_index_[path] = params_.size();
  params_.push_back({path, t});
  return t;
}

template <typename T>
Tensor<T> ParamStore<T>::buffer(const std::string& path, Shape shape, T fill) {
  claim(path);
  auto t = Tensor<T>::full(std::move(shape), fill, false);
  buffer_index_[path] = buffers_.size();
  buffers_.push_back({path, t});
  return t;
}

template <typename T>
const typename ParamStore<T>::Entry* ParamStore<T>::find_param(const std::string& path) const {
  auto it = param_index_.find(path);
  return it == param_index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
const typename ParamStore<T>::Entry* ParamStore<T>::find_buffer(const std::string& path) const {
  auto it = buffer_index_.find(path);
  return it == buffer_index_.end() ? nullptr : &buffers_[it->second];
}

template <typename T>
int64_t ParamStore<T>::param_count() const {
  int64_t n = 0;
  for (const auto& e : params_) n += e.value.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : params_) e.value.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace dm
