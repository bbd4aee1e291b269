#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace dm {

enum class GateKind { cag, ag };
enum class ConvKind { deformable, standard };
enum class Supervision { dice, dice_deepsup, dice_msda };

const char* to_string(GateKind v);
const char* to_string(ConvKind v);
const char* to_string(Supervision v);

/// Complete architectural description; rebuilding from it (same seed)
/// reproduces a network bit-for-bit.
struct ModelConfig {
  int64_t height = 224;
  int64_t width = 224;
  int64_t in_channels = 3;
  int64_t num_classes = 9;
  int64_t stem_channels = 16;
  std::vector<int64_t> encoder_widths{32, 64, 160, 256};  // X3..X6
  std::vector<int64_t> encoder_depths{2, 2, 2, 2};
  std::vector<int64_t> encoder_heads{1, 2, 5, 8};
  std::vector<int64_t> sr_ratios{8, 4, 2, 1};
  int64_t mlp_ratio = 4;
  std::vector<int64_t> decoder_widths{256, 160, 96, 64, 32, 16};  // D6..D1
  int64_t ssm_state = 16;
  int64_t ssm_expand = 2;
  int64_t ca_reduction = 8;
  std::string scan_merge = "sum";
  GateKind gate = GateKind::cag;
  ConvKind conv = ConvKind::deformable;
  Supervision supervision = Supervision::dice_msda;
  double alpha = 1.0;
  std::vector<double> lambdas;  // empty: s / sum(1..S)
  bool lambda_reverse = false;  // pair lambda_1 with the finest scale instead of the coarsest
  uint64_t seed = 0;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
  /// The strictly increasing lambda_1..lambda_S.
  std::vector<double> scale_weights() const;

  static constexpr int kAuxScales = 5;
  /// "v0", "v1" (224x224 variants) or "desk" (96x96, 4 classes, small widths).
  static ModelConfig preset(std::string_view name);
};

nlohmann::json to_json(const ModelConfig& c);
/// Strict: unknown keys and wrong types are ConfigErrors. Missing keys keep defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Human-readable list of fields that differ, empty when equal.
std::vector<std::string> diff_configs(const ModelConfig& a, const ModelConfig& b);

}  // namespace dm
