#pragma once

#include <functional>
#include <string>
#include <vector>

#include "decomamba/config.hpp"

namespace dm {

/// Median wall time (seconds) of a float32 selective-scan forward over
/// sequences [1, channels, length] with `state` states, over `repeats` runs.
double time_selective_scan(int64_t length, int repeats = 5, int64_t channels = 16, int64_t state = 16);

/// The single 3x3 conv reference case: 16 -> 32 channels with bias at 56x56.
struct ConvCount {
  int64_t params = 0;
  uint64_t macs = 0;
};
ConvCount conv_reference_count();
inline constexpr int64_t kConvReferenceParams = 4640;          // 32*16*9 + 32
inline constexpr uint64_t kConvReferenceMacs = 14'450'688;     // 32*56*56*16*9

/// Prints a timing / complexity table. `what`: all, scan, forward, counts, conv.
/// Returns false when a reported check (scan ratio, conv count) fails.
bool run_bench(const std::string& what, const std::function<void(const std::string&)>& line);

}  // namespace dm
