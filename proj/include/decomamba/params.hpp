#pragma once

#include <map>
#include <string>
#include <vector>

#include "decomamba/rng.hpp"
#include "decomamba/tensor.hpp"

namespace dm {

struct Init {
  enum class Kind { zeros, constant, uniform } kind = Kind::zeros;
  double value = 0.0;  // constant value or uniform half-width

  static Init zeros() { return {}; }
  static Init constant(double v) { return {Kind::constant, v}; }
  static Init uniform(double bound) { return {Kind::uniform, bound}; }
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Init fan_in(int64_t fan_in);
};

/// Named, ordered collection of a model's learnable tensors and buffers.
///
/// Each tensor is initialized from a generator derived from (seed, path), so
/// adding or removing one parameter never changes the values of the others.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string path;
    Tensor<T> value;
  };

  explicit ParamStore(uint64_t seed = 0) : seed_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Tensor<T> param(const std::string& path, Shape shape, Init init);
  /// Non-trainable state such as batch-norm running statistics.
  Tensor<T> buffer(const std::string& path, Shape shape, T fill);

  const std::vector<Entry>& params() const { return params_; }
  const std::vector<Entry>& buffers() const { return buffers_; }
  const Entry* find_param(const std::string& path) const;
  const Entry* find_buffer(const std::string& path) const;

  int64_t param_count() const;
  Rng rng_for(const std::string& path) const { return Rng::derive(seed_, path); }
  uint64_t seed() const { return seed_; }

  void zero_grad();

 private:
  void claim(const std::string& path);

  uint64_t seed_;
  std::vector<Entry> params_;
  std::vector<Entry> buffers_;
  std::map<std::string, size_t> param_index_;
  std::map<std::string, size_t> buffer_index_;
};

inline std::string join_path(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace dm
