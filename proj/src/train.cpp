#include "decomamba/train.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace dm {

namespace fs = std::filesystem;
using nlohmann::json;

template <typename T>
AdamW<T>::AdamW(ParamStore<T>& store, AdamWOptions options) : store_(store), options_(options) {
  for (const auto& e : store_.params()) {
    m_.emplace_back(static_cast<size_t>(e.value.numel()), T(0));
    v_.emplace_back(static_cast<size_t>(e.value.numel()), T(0));
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double decay = 1.0 - lr * options_.weight_decay;
  const auto& params = store_.params();
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].value;
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      m[k] = static_cast<T>(b1 * m[k] + (1 - b1) * gk);
      v[k] = static_cast<T>(b2 * v[k] + (1 - b2) * gk * gk);
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      w[k] = static_cast<T>(w[k] * decay - lr * mhat / (std::sqrt(vhat) + options_.eps));
    }
  }
}

double CosineWarmRestarts::lr(double epoch) const {
  double t = std::max(0.0, epoch), period = t0;
  while (t >= period) {
    t -= period;
    period *= t_mult;
  }
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t / period));
}

void TrainConfig::validate() const {
  model.validate();
  if (!(optimizer.lr > 0)) throw ConfigError("train config: lr must be positive");
  if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1 && optimizer.beta2 >= 0 && optimizer.beta2 < 1)) {
    throw ConfigError("train config: betas must lie in [0, 1)");
  }
  if (!(optimizer.eps > 0) || optimizer.weight_decay < 0) throw ConfigError("train config: bad eps/weight_decay");
  if (!(schedule.t0 >= 1)) throw ConfigError("train config: restart period must be >= 1");
  if (!(schedule.t_mult >= 1)) throw ConfigError("train config: t_mult must be >= 1");
  if (schedule.floor < 0 || schedule.floor > optimizer.lr) throw ConfigError("train config: lr floor outside [0, lr]");
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
}

json to_json(const TrainConfig& c) {
  json j;
  j["model"] = to_json(c.model);
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"betas", {c.optimizer.beta1, c.optimizer.beta2}},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay}};
  j["schedule"] = {{"restart_epochs", c.schedule.t0}, {"period_mult", c.schedule.t_mult}, {"lr_min", c.schedule.floor}};
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["data"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["augment"] = c.augment;
  j["free_rotation"] = c.free_rotation;
  j["keep_best"] = c.keep_best;
  return j;
}

namespace {

using Handlers = std::map<std::string, std::function<void(const json&)>>;

void apply_strict(const json& j, const Handlers& fields, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError(where + ": bad value for '" + key + "': " + e.what());
    }
  }
}

double number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("train config: " + key + " must be a number");
  return v.get<double>();
}

int64_t integer(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError("train config: " + key + " must be an integer");
  return v.get<int64_t>();
}

bool boolean(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("train config: " + key + " must be a boolean");
  return v.get<bool>();
}

std::string text(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("train config: " + key + " must be a string");
  return v.get<std::string>();
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  const Handlers optimizer = {
      {"lr", [&](const json& v) { c.optimizer.lr = number(v, "lr"); }},
      {"betas",
       [&](const json& v) {
         if (!v.is_array() || v.size() != 2) throw ConfigError("train config: betas must be [b1, b2]");
         c.optimizer.beta1 = number(v[0], "betas");
         c.optimizer.beta2 = number(v[1], "betas");
       }},
      {"eps", [&](const json& v) { c.optimizer.eps = number(v, "eps"); }},
      {"weight_decay", [&](const json& v) { c.optimizer.weight_decay = number(v, "weight_decay"); }},
  };
  const Handlers schedule = {
      {"restart_epochs", [&](const json& v) { c.schedule.t0 = number(v, "restart_epochs"); }},
      {"period_mult", [&](const json& v) { c.schedule.t_mult = number(v, "period_mult"); }},
      {"lr_min", [&](const json& v) { c.schedule.floor = number(v, "lr_min"); }},
  };
  const Handlers top = {
      {"model", [&](const json& v) { c.model = model_config_from_json(v); }},
      {"optimizer", [&](const json& v) { apply_strict(v, optimizer, "train config optimizer"); }},
      {"schedule", [&](const json& v) { apply_strict(v, schedule, "train config schedule"); }},
      {"epochs", [&](const json& v) { c.epochs = integer(v, "epochs"); }},
      {"batch_size", [&](const json& v) { c.batch_size = integer(v, "batch_size"); }},
      {"seed",
       [&](const json& v) {
         if (!v.is_number_integer() || v.get<int64_t>() < 0) throw ConfigError("train config: seed must be a non-negative integer");
         c.seed = v.get<uint64_t>();
       }},
      {"data", [&](const json& v) { c.data_dir = text(v, "data"); }},
      {"out_dir", [&](const json& v) { c.out_dir = text(v, "out_dir"); }},
      {"augment", [&](const json& v) { c.augment = boolean(v, "augment"); }},
      {"free_rotation", [&](const json& v) { c.free_rotation = boolean(v, "free_rotation"); }},
      {"keep_best", [&](const json& v) { c.keep_best = boolean(v, "keep_best"); }},
  };
  apply_strict(j, top, "train config");
  c.schedule.peak = c.optimizer.lr;
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  TrainConfig c = train_config_from_json(j);
  // Relative paths are relative to the config file.
  const fs::path base = path.parent_path();
  if (!c.data_dir.empty() && fs::path(c.data_dir).is_relative()) c.data_dir = (base / c.data_dir).string();
  if (!c.out_dir.empty() && fs::path(c.out_dir).is_relative()) c.out_dir = (base / c.out_dir).string();
  return c;
}

namespace {

void check_compatible(const ModelConfig& m, const Dataset& data) {
  std::vector<std::string> diffs;
  if (data.num_classes != m.num_classes) {
    diffs.push_back("num_classes: model " + std::to_string(m.num_classes) + " vs data " + std::to_string(data.num_classes));
  }
  if (!data.samples.empty()) {
    const auto& s = data.samples.front();
    if (s.channels != m.in_channels) {
      diffs.push_back("in_channels: model " + std::to_string(m.in_channels) + " vs data " + std::to_string(s.channels));
    }
    if (s.height != m.height || s.width != m.width) {
      diffs.push_back("input_size: model " + std::to_string(m.height) + "x" + std::to_string(m.width) + " vs data " +
                      std::to_string(s.height) + "x" + std::to_string(s.width));
    }
  }
  if (!diffs.empty()) {
    std::string msg = "model and dataset are incompatible:";
    for (const auto& d : diffs) msg += "\n  " + d;
    throw ConfigError(msg);
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace

TrainResult train(Model<float>& model, const TrainConfig& config, const Dataset& data, const LineSink& log) {
  config.validate();
  check_compatible(model.config(), data);
  const auto train_idx = data.indices("train");
  const auto val_idx = data.indices("val");
  if (train_idx.empty()) throw PreconditionError("train: dataset has no train samples");

  AdamW<float> optimizer(model.store(), config.optimizer);
  CosineWarmRestarts schedule = config.schedule;
  schedule.peak = config.optimizer.lr;
  const auto bs = static_cast<size_t>(config.batch_size);
  const size_t steps_per_epoch = (train_idx.size() + bs - 1) / bs;
  const fs::path out_dir = config.out_dir;
  if (!config.out_dir.empty()) fs::create_directories(out_dir);

  TrainResult result;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto order = train_idx;
    Rng shuffle_rng = Rng::derive(config.seed, "epoch/" + std::to_string(epoch));
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    for (size_t b = 0; b < steps_per_epoch; ++b) {
      const size_t begin = b * bs, end = std::min(order.size(), begin + bs);
      std::vector<SegSample> batch;
      for (size_t k = begin; k < end; ++k) {
        const SegSample& s = data.samples[order[k]];
        if (!config.augment) {
          batch.push_back(s);
          continue;
        }
        Rng aug_rng = Rng::derive(config.seed, "augment/" + std::to_string(epoch) + "/" + s.id);
        AugmentOp op = sample_augment(aug_rng, config.free_rotation);
        if (s.height != s.width) op.rot90 = (op.rot90 / 2) * 2;
        batch.push_back(apply_augment(s, op));
      }
      std::vector<size_t> all(batch.size());
      std::vector<int32_t> labels;
      for (size_t k = 0; k < batch.size(); ++k) {
        all[k] = k;
        labels.insert(labels.end(), batch[k].mask.data.begin(), batch[k].mask.data.end());
      }
      const auto& first = batch.front();
      LabelBatch gt(static_cast<int64_t>(batch.size()), first.height, first.width, data.num_classes, std::move(labels));
      const double lr = schedule.lr(static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(steps_per_epoch));

      LossResult<float> loss;
      try {
        model.store().zero_grad();
        auto out = model.forward(stack_images<float>(batch, all), Mode::train);
        loss = total_loss(out.logits, out.aux_logits, gt, model.config());
        loss.total.backward();
        for (const auto& e : model.store().params()) {
          for (float g : e.value.grad()) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + e.path);
          }
        }
      } catch (const NumericError& e) {
        throw NumericError("training diverged at step " + std::to_string(result.global_step) + " (epoch " +
                           std::to_string(epoch) + "): " + e.what());
      }
      optimizer.step(lr);
      result.step_losses.push_back(loss.report.total);
      loss_sum += loss.report.total;
      if (log) {
        log("step=" + std::to_string(result.global_step) + " epoch=" + std::to_string(epoch) + " lr=" + fmt(lr) + " " +
            loss.report.to_line());
      }
      ++result.global_step;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(steps_per_epoch);
    std::string line = "epoch=" + std::to_string(epoch) + " mean_loss=" + fmt(rec.mean_loss);
    if (!val_idx.empty()) {
      rec.val = evaluate(model, data, "val");
      line += " val " + rec.val.to_line();
      if (rec.val.mean_dice > result.best_val_dice) {
        result.best_val_dice = rec.val.mean_dice;
        result.best_epoch = epoch;
        if (config.keep_best && !config.out_dir.empty()) {
          save_checkpoint(out_dir / "best.dmck", model, &optimizer, result.global_step);
        }
      }
    }
    result.epochs.push_back(rec);
    if (log) log(line);
  }
  if (!config.out_dir.empty()) save_checkpoint(out_dir / "final.dmck", model, &optimizer, result.global_step);
  return result;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace dm
