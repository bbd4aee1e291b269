#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "decomamba/data.hpp"
#include "decomamba/losses.hpp"
#include "decomamba/metrics.hpp"
#include "decomamba/network.hpp"

namespace dm {

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay over every parameter of a store.
/// Parameters without a gradient this step are left untouched.
template <typename T>
class AdamW {
 public:
  AdamW(ParamStore<T>& store, AdamWOptions options);

  void step(double lr);
  int64_t steps_taken() const { return t_; }
  const AdamWOptions& options() const { return options_; }

  // Moment buffers, parallel to store.params().
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void set_steps_taken(int64_t t) { t_ = t; }

 private:
  ParamStore<T>& store_;
  AdamWOptions options_;
  int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

/// Cosine annealing with warm restarts: the first period lasts t0 epochs and
/// each later period is t_mult times longer; lr returns to `peak` at every restart.
struct CosineWarmRestarts {
  double peak = 1e-4;
  double floor = 0.0;
  double t0 = 2.0;
  double t_mult = 2.0;

  /// `epoch` may be fractional.
  double lr(double epoch) const;
};

struct TrainConfig {
  ModelConfig model;
  AdamWOptions optimizer;
  CosineWarmRestarts schedule;
  int64_t epochs = 100;
  int64_t batch_size = 16;
  uint64_t seed = 0;
  std::string data_dir;  // dataset directory (images/, masks/, manifest.txt)
  std::string out_dir = "run";
  bool augment = true;
  bool free_rotation = false;
  bool keep_best = true;  // write best.dmck by validation mean Dice

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Strict: unknown keys anywhere are ConfigErrors.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

struct EpochRecord {
  int64_t epoch = 0;
  double mean_loss = 0;
  EvalReport val;
};

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<EpochRecord> epochs;
  double best_val_dice = -1;
  int64_t best_epoch = -1;
  int64_t global_step = 0;
};

using LineSink = std::function<void(const std::string&)>;

/// Trains `model` in place on the train split of `data`, validating on the
/// val split after each epoch. Checkpoints go to out_dir unless it is empty.
/// A non-finite loss or gradient raises NumericError naming the step.
TrainResult train(Model<float>& model, const TrainConfig& config, const Dataset& data,
                  const LineSink& log);

// ---------------------------------------------------------------- checkpoint

inline constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const AdamW<T>* optimizer = nullptr, int64_t global_step = 0);

template <typename T>
struct LoadedCheckpoint {
  std::unique_ptr<Model<T>> model;
  std::unique_ptr<AdamW<T>> optimizer;  // set when the file holds optimizer state
  int64_t global_step = 0;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path);

/// Config echo only; validates the header.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

/// Element count of the parameter records (buffers and optimizer state excluded).
int64_t checkpoint_param_elements(const std::filesystem::path& path);

}  // namespace dm
