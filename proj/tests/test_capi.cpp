#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "decomamba/decomamba.h"

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dm_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void collect(const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); }

const char* kTinyModel =
    R"({"input_size": [32, 32], "num_classes": 4, "stem_channels": 4, "encoder_widths": [8, 8, 8, 8],
        "encoder_depths": [1, 1, 1, 1], "encoder_heads": [1, 1, 1, 1], "mlp_ratio": 2,
        "decoder_widths": [8, 8, 8, 8, 8, 8], "ssm_state": 2, "ca_reduction": 4})";

std::string joined(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

}  // namespace

TEST_CASE("model handle lifecycle") {
  const auto dir = temp_dir("model");
  dm_model* m = nullptr;
  REQUIRE(dm_model_create(kTinyModel, &m) == DM_OK);
  int64_t c, h, w, n, params;
  REQUIRE(dm_model_input_shape(m, &c, &h, &w, &n) == DM_OK);
  CHECK((c == 3 && h == 32 && w == 32 && n == 4));
  REQUIRE(dm_model_param_count(m, &params) == DM_OK);
  CHECK(params > 0);
  uint64_t macs = 0;
  CHECK(dm_model_flop_count(m, &macs) == DM_OK);
  CHECK(macs > 0);

  std::vector<float> img(2 * 3 * 32 * 32, 0.5f), probs(2 * 4 * 32 * 32);
  REQUIRE(dm_model_forward(m, img.data(), 2, probs.data()) == DM_OK);
  for (int p = 0; p < 32 * 32; ++p) {
    double s = 0;
    for (int k = 0; k < 4; ++k) s += probs[size_t(k * 32 * 32 + p)];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }

  const auto path = (dir / "m.dmck").string();
  REQUIRE(dm_model_save(m, path.c_str()) == DM_OK);
  dm_model* back = nullptr;
  REQUIRE(dm_model_load(path.c_str(), &back) == DM_OK);
  std::vector<float> probs2(probs.size());
  REQUIRE(dm_model_forward(back, img.data(), 2, probs2.data()) == DM_OK);
  CHECK(probs == probs2);
  dm_model_free(back);
  dm_model_free(m);
  dm_model_free(nullptr);
  fs::remove_all(dir);
}

TEST_CASE("errors map to status codes with messages") {
  dm_model* m = nullptr;
  CHECK(dm_model_create("{\"num_clases\": 3}", &m) == DM_ERR_CONFIG);
  CHECK(std::string(dm_last_error()).find("num_clases") != std::string::npos);
  CHECK(m == nullptr);
  CHECK(dm_model_create("not json", &m) == DM_ERR_CONFIG);
  CHECK(dm_model_create(kTinyModel, nullptr) == DM_ERR_INVALID_ARGUMENT);
  CHECK(dm_model_load("/nonexistent/x.dmck", &m) == DM_ERR_IO);

  const auto dir = temp_dir("errors");
  std::ofstream(dir / "junk.dmck") << "JUNKJUNKJUNK";
  CHECK(dm_model_load((dir / "junk.dmck").string().c_str(), &m) == DM_ERR_FORMAT);
  CHECK(std::string(dm_last_error()).find("bad magic") != std::string::npos);
  CHECK(std::string(dm_status_name(DM_ERR_INCOMPATIBLE)).size() > 0);
  CHECK(dm_thread_count() >= 1);
  fs::remove_all(dir);
}

TEST_CASE("synth, eval against an incompatible checkpoint, predict") {
  const auto dir = temp_dir("flow");
  std::vector<std::string> lines;
  REQUIRE(dm_synth((dir / "data").string().c_str(), 5, 1, R"({"height": 32, "width": 32, "val_count": 2})", collect,
                   &lines) == DM_OK);
  CHECK(fs::exists(dir / "data" / "manifest.txt"));

  dm_model* m = nullptr;
  REQUIRE(dm_model_create(kTinyModel, &m) == DM_OK);
  const auto ok_path = (dir / "ok.dmck").string();
  REQUIRE(dm_model_save(m, ok_path.c_str()) == DM_OK);
  dm_model_free(m);
  lines.clear();
  CHECK(dm_eval(ok_path.c_str(), (dir / "data").string().c_str(), "val", collect, &lines) == DM_OK);
  CHECK(joined(lines).find("mean_dice=") != std::string::npos);

  std::string other = kTinyModel;
  other.replace(other.find("\"num_classes\": 4"), 16, "\"num_classes\": 6");
  REQUIRE(dm_model_create(other.c_str(), &m) == DM_OK);
  const auto bad_path = (dir / "six.dmck").string();
  REQUIRE(dm_model_save(m, bad_path.c_str()) == DM_OK);
  dm_model_free(m);
  CHECK(dm_eval(bad_path.c_str(), (dir / "data").string().c_str(), "val", collect, &lines) == DM_ERR_INCOMPATIBLE);
  const std::string msg = dm_last_error();
  CHECK(msg.find("num_classes") != std::string::npos);
  CHECK(msg.find('6') != std::string::npos);
  CHECK(msg.find('4') != std::string::npos);

  // predict: right size, resize, and reject.
  const auto image = (dir / "data" / "images" / "s00000.ppm").string();
  const auto out = (dir / "pred.pgm").string(), probs = (dir / "pred.prob").string();
  REQUIRE(dm_predict(ok_path.c_str(), image.c_str(), out.c_str(), probs.c_str(), 0, collect, &lines) == DM_OK);
  CHECK(fs::exists(out));
  CHECK(fs::file_size(probs) == std::string("DMPROB 4 32 32\n").size() + 4 * 32 * 32 * sizeof(float));

  REQUIRE(dm_synth((dir / "big").string().c_str(), 2, 1, R"({"height": 64, "width": 96, "val_count": 1})", nullptr,
                   nullptr) == DM_OK);
  const auto big = (dir / "big" / "images" / "s00000.ppm").string();
  CHECK(dm_predict(ok_path.c_str(), big.c_str(), out.c_str(), nullptr, 0, nullptr, nullptr) == DM_ERR_INCOMPATIBLE);
  REQUIRE(dm_predict(ok_path.c_str(), big.c_str(), out.c_str(), nullptr, 1, nullptr, nullptr) == DM_OK);
  std::ifstream pgm(out, std::ios::binary);
  std::string magic;
  int64_t w = 0, h = 0;
  pgm >> magic >> w >> h;
  CHECK(magic == "P5");
  CHECK((w == 96 && h == 64));
  fs::remove_all(dir);
}

TEST_CASE("gradcheck negative control fails the faulty rows") {
  std::vector<std::string> lines;
  CHECK(dm_gradcheck("relu", "", collect, &lines) == DM_OK);
  lines.clear();
  CHECK(dm_gradcheck("relu", "relu", collect, &lines) == DM_ERR_CHECK_FAILED);
  bool failed_row = false;
  for (const auto& l : lines) failed_row |= l.rfind("FAIL relu", 0) == 0;
  CHECK(failed_row);
}

TEST_CASE("bench reports the reference conv counts") {
  std::vector<std::string> lines;
  REQUIRE(dm_bench("conv", collect, &lines) == DM_OK);
  const auto text = joined(lines);
  CHECK(text.find("params=4640") != std::string::npos);
  CHECK(text.find("macs=14450688") != std::string::npos);
}

TEST_CASE("describe accepts model and training configs") {
  const auto dir = temp_dir("describe");
  std::ofstream(dir / "model.json") << kTinyModel;
  std::ofstream(dir / "train.json") << std::string("{\"model\": ") + kTinyModel + ", \"epochs\": 1}";
  std::vector<std::string> a, b;
  REQUIRE(dm_describe_config((dir / "model.json").string().c_str(), collect, &a) == DM_OK);
  REQUIRE(dm_describe_config((dir / "train.json").string().c_str(), collect, &b) == DM_OK);
  // A training config adds one line echoing the full training config.
  REQUIRE(b.size() == a.size() + 1);
  CHECK(b.front().rfind("train ", 0) == 0);
  CHECK(std::vector<std::string>(b.begin() + 1, b.end()) == a);
  CHECK(joined(a).find("params=") != std::string::npos);
  fs::remove_all(dir);
}
