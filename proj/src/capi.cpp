#include "decomamba/decomamba.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "decomamba/bench.hpp"
#include "decomamba/gradcheck.hpp"
#include "decomamba/train.hpp"

struct dm_model {
  std::unique_ptr<dm::Model<float>> model;
};

namespace {

thread_local std::string g_last_error;

dm_status fail(dm_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

/// Runs `body`, mapping library exceptions onto status codes.
template <typename F>
dm_status guarded(F&& body) {
  g_last_error.clear();
  try {
    return body();
  } catch (const dm::ConfigError& e) {
    return fail(DM_ERR_CONFIG, e.what());
  } catch (const dm::ShapeError& e) {
    return fail(DM_ERR_SHAPE, e.what());
  } catch (const dm::NumericError& e) {
    return fail(DM_ERR_NUMERIC, e.what());
  } catch (const dm::IoError& e) {
    return fail(DM_ERR_IO, e.what());
  } catch (const dm::FormatError& e) {
    return fail(DM_ERR_FORMAT, e.what());
  } catch (const dm::PreconditionError& e) {
    return fail(DM_ERR_INVALID_ARGUMENT, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(DM_ERR_CONFIG, std::string("invalid JSON: ") + e.what());
  } catch (const std::exception& e) {
    return fail(DM_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(DM_ERR_INTERNAL, "unknown error");
  }
}

dm::LineSink sink(dm_line_fn line, void* user) {
  return [line, user](const std::string& text) {
    if (line == nullptr) return;
    // Multi-line text is delivered one line at a time.
    std::istringstream in(text);
    std::string part;
    while (std::getline(in, part)) line(part.c_str(), user);
  };
}

bool missing(const char* s) { return s == nullptr || *s == '\0'; }

/// Config of `base` with the data-dependent fields taken from the sample shape.
dm::ModelConfig as_required_by(dm::ModelConfig base, int64_t num_classes, int64_t channels, int64_t height,
                               int64_t width) {
  base.num_classes = num_classes;
  base.in_channels = channels;
  base.height = height;
  base.width = width;
  return base;
}

std::string diff_message(const std::string& what, const dm::ModelConfig& have, const dm::ModelConfig& need) {
  std::string msg = what + " is incompatible with the checkpoint config:";
  for (const auto& d : dm::diff_configs(have, need)) msg += "\n  " + d;
  return msg;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dm::IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw dm::ConfigError(path + ": " + e.what());
  }
}

void write_probabilities(const std::string& path, const dm::Tensor<float>& probs) {
  // Text header line, then float32 little-endian values [N,H,W].
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw dm::IoError("cannot write " + path);
  out << "DMPROB " << probs.dim(1) << " " << probs.dim(2) << " " << probs.dim(3) << "\n";
  for (float v : probs.data()) {
    const auto bits = std::bit_cast<uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>(bits >> (8 * i)));
  }
  if (!out) throw dm::IoError("write failed for " + path);
}

}  // namespace

extern "C" {

const char* dm_version(void) { return "1.0.0"; }

const char* dm_status_name(dm_status status) {
  switch (status) {
    case DM_OK: return "ok";
    case DM_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case DM_ERR_CONFIG: return "config";
    case DM_ERR_SHAPE: return "shape";
    case DM_ERR_NUMERIC: return "numeric";
    case DM_ERR_IO: return "io";
    case DM_ERR_FORMAT: return "format";
    case DM_ERR_INCOMPATIBLE: return "incompatible";
    case DM_ERR_CHECK_FAILED: return "check_failed";
    case DM_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* dm_last_error(void) { return g_last_error.c_str(); }

int dm_thread_count(void) { return dm::thread_count(); }

dm_status dm_model_create(const char* config_json, dm_model** out) {
  return guarded([&] {
    if (out == nullptr) return fail(DM_ERR_INVALID_ARGUMENT, "dm_model_create: null output handle");
    *out = nullptr;
    const auto j = nlohmann::json::parse(missing(config_json) ? "{}" : config_json);
    auto handle = std::make_unique<dm_model>();
    handle->model = std::make_unique<dm::Model<float>>(dm::model_config_from_json(j));
    *out = handle.release();
    return DM_OK;
  });
}

dm_status dm_model_load(const char* checkpoint_path, dm_model** out) {
  return guarded([&] {
    if (out == nullptr || missing(checkpoint_path)) return fail(DM_ERR_INVALID_ARGUMENT, "dm_model_load: missing argument");
    *out = nullptr;
    auto handle = std::make_unique<dm_model>();
    handle->model = dm::load_checkpoint<float>(checkpoint_path).model;
    *out = handle.release();
    return DM_OK;
  });
}

dm_status dm_model_save(const dm_model* model, const char* checkpoint_path) {
  return guarded([&] {
    if (model == nullptr || missing(checkpoint_path)) return fail(DM_ERR_INVALID_ARGUMENT, "dm_model_save: missing argument");
    dm::save_checkpoint<float>(checkpoint_path, *model->model);
    return DM_OK;
  });
}

void dm_model_free(dm_model* model) { delete model; }

dm_status dm_model_input_shape(const dm_model* model, int64_t* channels, int64_t* height, int64_t* width,
                               int64_t* num_classes) {
  return guarded([&] {
    if (model == nullptr) return fail(DM_ERR_INVALID_ARGUMENT, "dm_model_input_shape: null model");
    const auto& c = model->model->config();
    if (channels) *channels = c.in_channels;
    if (height) *height = c.height;
    if (width) *width = c.width;
    if (num_classes) *num_classes = c.num_classes;
    return DM_OK;
  });
}

dm_status dm_model_param_count(const dm_model* model, int64_t* out) {
  return guarded([&] {
    if (model == nullptr || out == nullptr) return fail(DM_ERR_INVALID_ARGUMENT, "dm_model_param_count: null argument");
    *out = model->model->store().param_count();
    return DM_OK;
  });
}

dm_status dm_model_flop_count(const dm_model* model, uint64_t* out) {
  return guarded([&] {
    if (model == nullptr || out == nullptr) return fail(DM_ERR_INVALID_ARGUMENT, "dm_model_flop_count: null argument");
    *out = dm::count_flops(model->model->config());
    return DM_OK;
  });
}

dm_status dm_model_describe(const dm_model* model, dm_line_fn line, void* user) {
  return guarded([&] {
    if (model == nullptr) return fail(DM_ERR_INVALID_ARGUMENT, "dm_model_describe: null model");
    auto log = sink(line, user);
    log(model->model->describe());
    log("macs=" + std::to_string(dm::count_flops(model->model->config())));
    return DM_OK;
  });
}

dm_status dm_model_forward(const dm_model* model, const float* images, int64_t batch, float* probs_out) {
  return guarded([&] {
    if (model == nullptr || images == nullptr || probs_out == nullptr || batch <= 0) {
      return fail(DM_ERR_INVALID_ARGUMENT, "dm_model_forward: bad argument");
    }
    const auto& c = model->model->config();
    const dm::Shape shape{batch, c.in_channels, c.height, c.width};
    std::vector<float> data(images, images + dm::numel_of(shape));
    dm::NoGradGuard no_grad;
    auto out = model->model->forward(dm::Tensor<float>::from_data(shape, std::move(data)), dm::Mode::eval);
    auto probs = dm::exp(dm::log_softmax(out.logits, 1));
    std::copy(probs.data().begin(), probs.data().end(), probs_out);
    return DM_OK;
  });
}

dm_status dm_train(const char* config_path, dm_line_fn line, void* user) {
  return guarded([&] {
    if (missing(config_path)) return fail(DM_ERR_INVALID_ARGUMENT, "dm_train: missing config path");
    const dm::TrainConfig config = dm::load_train_config(config_path);
    if (config.data_dir.empty()) return fail(DM_ERR_CONFIG, std::string(config_path) + ": \"data\" is required");
    const dm::Dataset data = dm::load_dataset(config.data_dir);
    auto log = sink(line, user);
    dm::Model<float> model(config.model);
    const auto result = dm::train(model, config, data, log);
    char buf[160];
    std::snprintf(buf, sizeof buf, "done steps=%lld best_epoch=%lld best_val_mean_dice=%.6f",
                  static_cast<long long>(result.global_step), static_cast<long long>(result.best_epoch),
                  result.best_val_dice);
    log(buf);
    return DM_OK;
  });
}

dm_status dm_eval(const char* checkpoint_path, const char* data_dir, const char* split, dm_line_fn line, void* user) {
  return guarded([&] {
    if (missing(checkpoint_path) || missing(data_dir)) return fail(DM_ERR_INVALID_ARGUMENT, "dm_eval: missing argument");
    const std::string which = missing(split) ? "val" : split;
    if (which != "val" && which != "train" && which != "all") {
      return fail(DM_ERR_INVALID_ARGUMENT, "dm_eval: split must be val, train or all");
    }
    const dm::ModelConfig have = dm::read_checkpoint_config(checkpoint_path);
    const dm::Dataset data = dm::load_dataset(data_dir);
    if (data.samples.empty()) return fail(DM_ERR_INVALID_ARGUMENT, std::string(data_dir) + ": dataset is empty");
    const auto& first = data.samples.front();
    const auto need = as_required_by(have, data.num_classes, first.channels, first.height, first.width);
    if (!dm::diff_configs(have, need).empty()) {
      return fail(DM_ERR_INCOMPATIBLE, diff_message(std::string("dataset ") + data_dir, have, need));
    }
    auto loaded = dm::load_checkpoint<float>(checkpoint_path);
    dm::EvalReport report;
    if (which == "all") {
      std::vector<size_t> idx(data.samples.size());
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::vector<dm::LabelMap> gts;
      for (size_t i : idx) gts.push_back(data.samples[i].mask);
      report = dm::evaluate_masks(dm::predict_masks(*loaded.model, data.samples, idx), gts, data.num_classes);
    } else {
      if (data.indices(which).empty()) return fail(DM_ERR_INVALID_ARGUMENT, "dm_eval: split '" + which + "' is empty");
      report = dm::evaluate(*loaded.model, data, which);
    }
    sink(line, user)("split=" + which + " " + report.to_line());
    return DM_OK;
  });
}

dm_status dm_gradcheck(const char* filter, const char* inject_fault, dm_line_fn line, void* user) {
  return guarded([&] {
    struct FaultScope {
      explicit FaultScope(const char* op) { dm::testing::inject_backward_fault(missing(op) ? "" : op); }
      ~FaultScope() { dm::testing::inject_backward_fault(""); }
    } scope(inject_fault);
    auto log = sink(line, user);
    const auto reports = dm::run_gradcheck_suite(dm::GradCheckOptions{}, log, missing(filter) ? "" : filter);
    int64_t failed = 0;
    double worst = 0;
    for (const auto& r : reports) {
      failed += r.passed ? 0 : 1;
      worst = std::max(worst, r.max_rel_error);
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "summary cases=%zu failed=%lld max_rel_err=%.3e", reports.size(),
                  static_cast<long long>(failed), worst);
    log(buf);
    if (reports.empty()) return fail(DM_ERR_INVALID_ARGUMENT, "gradcheck: no case matches the filter");
    if (failed > 0) return fail(DM_ERR_CHECK_FAILED, std::to_string(failed) + " gradient check(s) failed");
    return DM_OK;
  });
}

dm_status dm_bench(const char* what, dm_line_fn line, void* user) {
  return guarded([&] {
    if (!dm::run_bench(missing(what) ? "all" : what, sink(line, user))) {
      return fail(DM_ERR_CHECK_FAILED, "bench: a reported check failed");
    }
    return DM_OK;
  });
}

dm_status dm_synth(const char* out_dir, int64_t count, uint64_t seed, const char* spec_json, dm_line_fn line,
                   void* user) {
  return guarded([&] {
    if (missing(out_dir)) return fail(DM_ERR_INVALID_ARGUMENT, "dm_synth: missing output directory");
    dm::SynthSpec spec;
    bool val_given = false;
    if (!missing(spec_json)) {
      const auto j = nlohmann::json::parse(spec_json);
      if (!j.is_object()) return fail(DM_ERR_CONFIG, "synth spec must be a JSON object");
      for (const auto& [key, value] : j.items()) {
        if (key == "count") spec.count = value.get<int64_t>();
        else if (key == "val_count") spec.val_count = value.get<int64_t>(), val_given = true;
        else if (key == "height") spec.height = value.get<int64_t>();
        else if (key == "width") spec.width = value.get<int64_t>();
        else if (key == "num_classes") spec.num_classes = value.get<int64_t>();
        else if (key == "channels") spec.channels = value.get<int64_t>();
        else if (key == "noise") spec.noise = value.get<double>();
        else return fail(DM_ERR_CONFIG, "synth spec: unknown key '" + key + "'");
      }
    }
    if (count >= 0) spec.count = count;
    // Default split: one fifth held out for validation.
    if (!val_given) spec.val_count = spec.count / 5;
    const dm::Dataset ds = dm::synth_generate(spec, seed);
    dm::save_dataset(out_dir, ds);
    sink(line, user)("synth out=" + std::string(out_dir) + " count=" + std::to_string(spec.count) +
                     " train=" + std::to_string(spec.count - spec.val_count) + " val=" + std::to_string(spec.val_count) +
                     " size=" + std::to_string(spec.height) + "x" + std::to_string(spec.width) +
                     " classes=" + std::to_string(spec.num_classes) + " seed=" + std::to_string(seed));
    return DM_OK;
  });
}

dm_status dm_predict(const char* checkpoint_path, const char* image_path, const char* out_pgm, const char* prob_path,
                     int resize, dm_line_fn line, void* user) {
  return guarded([&] {
    if (missing(checkpoint_path) || missing(image_path) || missing(out_pgm)) {
      return fail(DM_ERR_INVALID_ARGUMENT, "dm_predict: missing argument");
    }
    auto loaded = dm::load_checkpoint<float>(checkpoint_path);
    const auto& c = loaded.model->config();
    dm::SegSample image = dm::load_image(image_path);
    if (image.channels != c.in_channels) {
      return fail(DM_ERR_INCOMPATIBLE, std::string(image_path) + " has " + std::to_string(image.channels) +
                                           " channel(s); the model expects " + std::to_string(c.in_channels));
    }
    const int64_t orig_h = image.height, orig_w = image.width;
    const bool wrong_size = orig_h != c.height || orig_w != c.width;
    if (wrong_size && resize == 0) {
      return fail(DM_ERR_INCOMPATIBLE, std::string(image_path) + " is " + std::to_string(orig_h) + "x" +
                                           std::to_string(orig_w) + " but the model expects " + std::to_string(c.height) +
                                           "x" + std::to_string(c.width) + " (pass --resize to resample)");
    }
    if (wrong_size) image = dm::resize_sample(image, c.height, c.width);
    dm::NoGradGuard no_grad;
    auto out = loaded.model->forward(dm::stack_images<float>({image}, {0}), dm::Mode::eval);
    dm::LabelMap mask = dm::argmax_labels(out.logits).front();
    if (wrong_size) mask = dm::resize_labels(mask, orig_h, orig_w);
    dm::save_mask(out_pgm, mask);
    if (!missing(prob_path)) write_probabilities(prob_path, dm::exp(dm::log_softmax(out.logits, 1)));
    std::vector<int64_t> hist(static_cast<size_t>(c.num_classes), 0);
    for (int32_t v : mask.data) ++hist[static_cast<size_t>(v)];
    std::string row = "predict out=" + std::string(out_pgm) + " size=" + std::to_string(orig_h) + "x" +
                      std::to_string(orig_w) + " resized=" + (wrong_size ? "1" : "0") + " class_pixels=";
    for (size_t k = 0; k < hist.size(); ++k) row += (k ? "," : "") + std::to_string(hist[k]);
    sink(line, user)(row);
    return DM_OK;
  });
}

dm_status dm_describe_config(const char* config_path, dm_line_fn line, void* user) {
  return guarded([&] {
    if (missing(config_path)) return fail(DM_ERR_INVALID_ARGUMENT, "dm_describe_config: missing path");
    const auto j = read_json_file(config_path);
    // A training config nests the model under "model"; anything else is a model config.
    dm::ModelConfig config;
    auto log = sink(line, user);
    if (j.is_object() && j.contains("model")) {
      const dm::TrainConfig tc = dm::load_train_config(config_path);
      config = tc.model;
      log("train " + dm::to_json(tc).dump());
    } else {
      config = dm::model_config_from_json(j);
    }
    dm::Model<float> model(config);
    log(model.describe());
    log("macs=" + std::to_string(dm::count_flops(config)));
    return DM_OK;
  });
}

}  // extern "C"
