#include "decomamba/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "decomamba/layers.hpp"
#include "decomamba/network.hpp"

namespace dm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* pattern, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

}  // namespace

double time_selective_scan(int64_t length, int repeats, int64_t channels, int64_t state) {
  Rng rng(1234);
  auto fill = [&](Shape shape, float lo, float hi) {
    std::vector<float> v(static_cast<size_t>(numel_of(shape)));
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return Tensor<float>::from_data(std::move(shape), std::move(v));
  };
  auto u = fill({1, channels, length}, -1, 1), delta = fill({1, channels, length}, 0.01f, 0.2f);
  auto A = fill({channels, state}, -2, -0.1f), B = fill({1, state, length}, -1, 1), C = fill({1, state, length}, -1, 1);
  auto D = fill({channels}, -1, 1);
  NoGradGuard no_grad;
  selective_scan(u, delta, A, B, C, D);  // warm-up
  std::vector<double> times;
  for (int r = 0; r < repeats; ++r) {
    const auto t = Clock::now();
    selective_scan(u, delta, A, B, C, D);
    times.push_back(seconds_since(t));
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

ConvCount conv_reference_count() {
  ParamStore<float> store(0);
  Conv2d<float> conv(store, "conv", 16, 32, 3);
  NoGradGuard no_grad;
  MacCounter counter;
  conv(Tensor<float>::zeros({1, 16, 56, 56}));
  return {store.param_count(), counter.total()};
}

bool run_bench(const std::string& what, const std::function<void(const std::string&)>& line) {
  const bool all = what == "all";
  if (!all && what != "scan" && what != "forward" && what != "counts" && what != "conv") {
    throw ConfigError("bench: unknown section '" + what + "' (all, scan, forward, counts, conv)");
  }
  bool ok = true;
  line(fmt("threads=%d", thread_count()));
  if (all || what == "scan") {
    double previous = 0;
    for (int64_t L : {1024, 2048, 4096, 8192}) {
      const double t = time_selective_scan(L);
      std::string row = fmt("scan L=%lld median_ms=%.4f", static_cast<long long>(L), t * 1e3);
      if (previous > 0) {
        const double ratio = t / previous;
        row += fmt(" ratio_vs_half=%.3f", ratio);
        if (L >= 8192) {
          const bool pass = ratio <= 2.5;
          ok = ok && pass;
          row += pass ? " linear=ok" : " linear=FAIL";
        }
      }
      line(row);
      previous = t;
    }
  }
  if (all || what == "forward") {
    const ModelConfig config = ModelConfig::preset("v0");
    Model<float> model(config);
    auto image = Tensor<float>::zeros({1, config.in_channels, config.height, config.width});
    NoGradGuard no_grad;
    const auto t = Clock::now();
    model.forward(image, Mode::eval);
    line(fmt("forward preset=v0 size=%lldx%lld batch=1 seconds=%.3f", static_cast<long long>(config.height),
             static_cast<long long>(config.width), seconds_since(t)));
  }
  if (all || what == "counts") {
    // Reference totals for the published models (pretrained PVT encoder).
    const struct {
      const char* preset;
      double ref_params_m, ref_gflops;
    } rows[] = {{"v0", 9.67, 9.73}, {"v1", 46.93, 17.24}};
    for (const auto& r : rows) {
      const ModelConfig config = ModelConfig::preset(r.preset);
      const int64_t params = count_params(config);
      const uint64_t macs = count_flops(config);
      line(fmt("counts preset=%s params=%lld params_m=%.3f reference_params_m=%.2f gmacs=%.3f reference_gflops=%.2f",
               r.preset, static_cast<long long>(params), params / 1e6, r.ref_params_m, macs / 1e9, r.ref_gflops));
    }
  }
  if (all || what == "conv") {
    const ConvCount c = conv_reference_count();
    const bool pass = c.params == kConvReferenceParams && c.macs == kConvReferenceMacs;
    ok = ok && pass;
    line(fmt("conv3x3 16->32 bias size=56x56 params=%lld expected=%lld macs=%llu expected=%llu %s",
             static_cast<long long>(c.params), static_cast<long long>(kConvReferenceParams),
             static_cast<unsigned long long>(c.macs), static_cast<unsigned long long>(kConvReferenceMacs),
             pass ? "ok" : "FAIL"));
  }
  return ok;
}

}  // namespace dm
