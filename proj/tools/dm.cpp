// Command-line front end over the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

#include "decomamba/decomamba.h"

namespace {

void print_line(const char* line, void*) {
  std::fputs(line, stdout);
  std::fputc('\n', stdout);
  std::fflush(stdout);
}

int report(dm_status status) {
  if (status == DM_OK) return 0;
  std::cerr << "error (" << dm_status_name(status) << "): " << dm_last_error() << "\n";
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable-decoder Mamba segmentation: training, evaluation and diagnostics"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train a model from a JSON training config");
  train->add_option("--config", config_path, "Training config (JSON)")->required();

  std::string ckpt, data_dir, split = "val";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset directory");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval->add_option("--data", data_dir, "Dataset directory")->required();
  eval->add_option("--split", split, "val, train or all")->capture_default_str();

  std::string filter, inject;
  auto* gradcheck = app.add_subcommand("gradcheck", "Central-difference gradient checks of every op, block and loss");
  gradcheck->add_option("--filter", filter, "Only cases whose name contains this text");
  gradcheck->add_option("--inject-fault", inject, "Negate the backward of this op (negative control)");

  std::string section = "all";
  auto* bench = app.add_subcommand("bench", "Scan timings, forward time and complexity counts");
  bench->add_option("--only", section, "all, scan, forward, counts or conv")->capture_default_str();

  std::string out_dir, spec_json;
  int64_t count = 250;
  uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "Write a synthetic segmentation dataset");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--count", count, "Number of samples")->capture_default_str();
  synth->add_option("--seed", seed, "Random seed")->capture_default_str();
  synth->add_option("--spec", spec_json, "JSON overrides: val_count, height, width, num_classes, channels, noise");

  std::string image, out_pgm, prob_path;
  bool resize = false;
  auto* predict = app.add_subcommand("predict", "Segment one image");
  predict->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  predict->add_option("--image", image, "Input PPM/PGM")->required();
  predict->add_option("--out", out_pgm, "Output mask PGM (class index per pixel)")->required();
  predict->add_option("--probs", prob_path, "Also write class probabilities here");
  predict->add_flag("--resize", resize, "Resample a wrong-size image instead of rejecting it");

  auto* describe = app.add_subcommand("describe", "Print the architecture, parameter and MAC counts of a config");
  describe->add_option("--config", config_path, "Training or model config (JSON)")->required();

  CLI11_PARSE(app, argc, argv);

  if (*train) return report(dm_train(config_path.c_str(), print_line, nullptr));
  if (*eval) return report(dm_eval(ckpt.c_str(), data_dir.c_str(), split.c_str(), print_line, nullptr));
  if (*gradcheck) return report(dm_gradcheck(filter.c_str(), inject.c_str(), print_line, nullptr));
  if (*bench) return report(dm_bench(section.c_str(), print_line, nullptr));
  if (*synth) {
    return report(dm_synth(out_dir.c_str(), count, seed, spec_json.empty() ? nullptr : spec_json.c_str(), print_line,
                           nullptr));
  }
  if (*predict) {
    return report(dm_predict(ckpt.c_str(), image.c_str(), out_pgm.c_str(), prob_path.empty() ? nullptr : prob_path.c_str(),
                             resize ? 1 : 0, print_line, nullptr));
  }
  if (*describe) return report(dm_describe_config(config_path.c_str(), print_line, nullptr));
  return 1;
}
