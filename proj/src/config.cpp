#include "decomamba/config.hpp"

#include <functional>
#include <map>

#include "decomamba/tensor.hpp"

namespace dm {

using nlohmann::json;

const char* to_string(GateKind v) { return v == GateKind::cag ? "cag" : "ag"; }
const char* to_string(ConvKind v) { return v == ConvKind::deformable ? "deformable" : "standard"; }
const char* to_string(Supervision v) {
  switch (v) {
    case Supervision::dice: return "dice";
    case Supervision::dice_deepsup: return "dice+deepsup";
    case Supervision::dice_msda: return "dice+msda";
  }
  return "?";
}

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError("model config: " + message);
}

template <typename E>
E parse_enum(const json& v, const char* key, std::initializer_list<E> values) {
  if (!v.is_string()) throw ConfigError(std::string("model config: ") + key + " must be a string");
  const auto s = v.get<std::string>();
  for (E e : values) {
    if (s == to_string(e)) return e;
  }
  throw ConfigError(std::string("model config: unknown ") + key + " '" + s + "'");
}

}  // namespace

void ModelConfig::validate() const {
  require(height > 0 && width > 0 && height % 32 == 0 && width % 32 == 0,
          "input size " + std::to_string(height) + "x" + std::to_string(width) +
              " must be positive multiples of 32");
  require(in_channels >= 1, "in_channels must be >= 1");
  require(num_classes >= 2, "num_classes must be >= 2");
  require(stem_channels >= 1, "stem_channels must be >= 1");
  require(encoder_widths.size() == 4, "encoder_widths needs 4 entries");
  require(encoder_depths.size() == 4, "encoder_depths needs 4 entries");
  require(encoder_heads.size() == 4, "encoder_heads needs 4 entries");
  require(sr_ratios.size() == 4, "sr_ratios needs 4 entries");
  require(decoder_widths.size() == 6, "decoder_widths needs 6 entries");
  for (size_t i = 0; i < 4; ++i) {
    require(encoder_widths[i] >= 1 && encoder_depths[i] >= 0 && sr_ratios[i] >= 1,
            "encoder stage " + std::to_string(i + 1) + " has a non-positive setting");
    require(encoder_heads[i] >= 1 && encoder_widths[i] % encoder_heads[i] == 0,
            "encoder width " + std::to_string(encoder_widths[i]) + " not divisible by heads " +
                std::to_string(encoder_heads[i]));
  }
  for (int64_t w : decoder_widths) require(w >= 1, "decoder widths must be positive");
  require(mlp_ratio >= 1 && ssm_state >= 1 && ssm_expand >= 1, "mlp_ratio/ssm_state/ssm_expand must be >= 1");
  require(ca_reduction >= 1, "ca_reduction must be >= 1");
  require(scan_merge == "sum" || scan_merge == "mean", "scan_merge must be 'sum' or 'mean'");
  require(alpha > 0, "alpha must be positive");
  if (gate == GateKind::cag) {
    // Skip widths per decoder stage D5..D1 are X5, X4, X3, X2 (stem), X1 (stem).
    const int64_t skips[5] = {encoder_widths[2], encoder_widths[1], encoder_widths[0],
                              stem_channels, stem_channels};
    for (int i = 0; i < 5; ++i) {
      const int64_t c = skips[i] + decoder_widths[static_cast<size_t>(i + 1)];
      require(c % ca_reduction == 0, "co-attention width " + std::to_string(c) + " at stage D" +
                                         std::to_string(5 - i) + " not divisible by ca_reduction " +
                                         std::to_string(ca_reduction));
    }
  }
  if (!lambdas.empty()) {
    require(lambdas.size() == static_cast<size_t>(kAuxScales),
            "lambdas needs " + std::to_string(kAuxScales) + " entries");
    for (size_t i = 1; i < lambdas.size(); ++i) {
      require(lambdas[i] > lambdas[i - 1], "lambdas must be strictly increasing");
    }
    require(lambdas.front() >= 0, "lambdas must be non-negative");
  }
}

std::vector<double> ModelConfig::scale_weights() const {
  std::vector<double> w = lambdas;
  if (w.empty()) {
    const double total = kAuxScales * (kAuxScales + 1) / 2.0;
    for (int s = 1; s <= kAuxScales; ++s) w.push_back(s / total);
  }
  return w;
}

ModelConfig ModelConfig::preset(std::string_view name) {
  ModelConfig c;
  if (name == "v0") return c;
  if (name == "v1") {
    c.encoder_widths = {64, 128, 320, 512};
    c.encoder_depths = {3, 4, 6, 3};
    c.decoder_widths = {512, 320, 128, 64, 32, 16};
    return c;
  }
  if (name == "desk") {
    c.height = c.width = 96;
    c.num_classes = 4;
    c.stem_channels = 8;
    c.encoder_widths = {16, 32, 48, 64};
    c.encoder_depths = {1, 1, 1, 1};
    c.encoder_heads = {1, 1, 2, 2};
    c.mlp_ratio = 2;
    c.decoder_widths = {64, 48, 32, 24, 16, 8};
    c.ssm_state = 8;
    return c;
  }
  throw ConfigError("unknown model preset '" + std::string(name) + "'");
}

json to_json(const ModelConfig& c) {
  json j;
  j["input_size"] = {c.height, c.width};
  j["in_channels"] = c.in_channels;
  j["num_classes"] = c.num_classes;
  j["stem_channels"] = c.stem_channels;
  j["encoder_widths"] = c.encoder_widths;
  j["encoder_depths"] = c.encoder_depths;
  j["encoder_heads"] = c.encoder_heads;
  j["sr_ratios"] = c.sr_ratios;
  j["mlp_ratio"] = c.mlp_ratio;
  j["decoder_widths"] = c.decoder_widths;
  j["ssm_state"] = c.ssm_state;
  j["ssm_expand"] = c.ssm_expand;
  j["ca_reduction"] = c.ca_reduction;
  j["scan_merge"] = c.scan_merge;
  j["gate"] = to_string(c.gate);
  j["conv"] = to_string(c.conv);
  j["supervision"] = to_string(c.supervision);
  j["alpha"] = c.alpha;
  j["lambdas"] = c.lambdas;
  j["lambda_reverse"] = c.lambda_reverse;
  j["seed"] = c.seed;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  if (j.contains("preset")) c = ModelConfig::preset(j.at("preset").get<std::string>());
  auto ints = [](const json& v, const char* key) {
    if (!v.is_array()) throw ConfigError(std::string("model config: ") + key + " must be an array");
    std::vector<int64_t> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError(std::string("model config: ") + key + " must hold integers");
      out.push_back(e.get<int64_t>());
    }
    return out;
  };
  auto integer = [](const json& v, const char* key) {
    if (!v.is_number_integer()) throw ConfigError(std::string("model config: ") + key + " must be an integer");
    return v.get<int64_t>();
  };
  auto number = [](const json& v, const char* key) {
    if (!v.is_number()) throw ConfigError(std::string("model config: ") + key + " must be a number");
    return v.get<double>();
  };
  const std::map<std::string, std::function<void(const json&)>> fields = {
      {"preset", [](const json&) {}},
      {"input_size",
       [&](const json& v) {
         auto s = ints(v, "input_size");
         if (s.size() != 2) throw ConfigError("model config: input_size needs [H, W]");
         c.height = s[0];
         c.width = s[1];
       }},
      {"in_channels", [&](const json& v) { c.in_channels = integer(v, "in_channels"); }},
      {"num_classes", [&](const json& v) { c.num_classes = integer(v, "num_classes"); }},
      {"stem_channels", [&](const json& v) { c.stem_channels = integer(v, "stem_channels"); }},
      {"encoder_widths", [&](const json& v) { c.encoder_widths = ints(v, "encoder_widths"); }},
      {"encoder_depths", [&](const json& v) { c.encoder_depths = ints(v, "encoder_depths"); }},
      {"encoder_heads", [&](const json& v) { c.encoder_heads = ints(v, "encoder_heads"); }},
      {"sr_ratios", [&](const json& v) { c.sr_ratios = ints(v, "sr_ratios"); }},
      {"mlp_ratio", [&](const json& v) { c.mlp_ratio = integer(v, "mlp_ratio"); }},
      {"decoder_widths", [&](const json& v) { c.decoder_widths = ints(v, "decoder_widths"); }},
      {"ssm_state", [&](const json& v) { c.ssm_state = integer(v, "ssm_state"); }},
      {"ssm_expand", [&](const json& v) { c.ssm_expand = integer(v, "ssm_expand"); }},
      {"ca_reduction", [&](const json& v) { c.ca_reduction = integer(v, "ca_reduction"); }},
      {"scan_merge",
       [&](const json& v) {
         if (!v.is_string()) throw ConfigError("model config: scan_merge must be a string");
         c.scan_merge = v.get<std::string>();
       }},
      {"gate", [&](const json& v) { c.gate = parse_enum(v, "gate", {GateKind::cag, GateKind::ag}); }},
      {"conv",
       [&](const json& v) { c.conv = parse_enum(v, "conv", {ConvKind::deformable, ConvKind::standard}); }},
      {"supervision",
       [&](const json& v) {
         c.supervision = parse_enum(v, "supervision",
                                    {Supervision::dice, Supervision::dice_deepsup, Supervision::dice_msda});
       }},
      {"alpha", [&](const json& v) { c.alpha = number(v, "alpha"); }},
      {"lambdas",
       [&](const json& v) {
         if (!v.is_array()) throw ConfigError("model config: lambdas must be an array");
         c.lambdas.clear();
         for (const auto& e : v) c.lambdas.push_back(number(e, "lambdas"));
       }},
      {"lambda_reverse",
       [&](const json& v) {
         if (!v.is_boolean()) throw ConfigError("model config: lambda_reverse must be a boolean");
         c.lambda_reverse = v.get<bool>();
       }},
      {"seed",
       [&](const json& v) {
         if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<int64_t>() >= 0)) {
           throw ConfigError("model config: seed must be a non-negative integer");
         }
         c.seed = v.get<uint64_t>();
       }},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("model config: unknown key '" + key + "'");
    it->second(value);
  }
  c.validate();
  return c;
}

std::vector<std::string> diff_configs(const ModelConfig& a, const ModelConfig& b) {
  std::vector<std::string> out;
  const json ja = to_json(a), jb = to_json(b);
  for (const auto& [key, value] : ja.items()) {
    if (jb.at(key) != value) out.push_back(key + ": " + value.dump() + " vs " + jb.at(key).dump());
  }
  return out;
}

}  // namespace dm
