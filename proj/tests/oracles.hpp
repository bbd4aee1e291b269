#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. They favor obviousness over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace dm::oracle {

// Foreground pixels with a 4-neighbor that is background or off the image.
inline std::vector<std::pair<int64_t, int64_t>> boundary_pixels(const std::vector<uint8_t>& m, int64_t H,
                                                                int64_t W) {
  std::vector<std::pair<int64_t, int64_t>> out;
  auto fg = [&](int64_t r, int64_t c) { return r >= 0 && r < H && c >= 0 && c < W && m[size_t(r * W + c)] != 0; };
  for (int64_t r = 0; r < H; ++r)
    for (int64_t c = 0; c < W; ++c) {
      if (!fg(r, c)) continue;
      if (!fg(r - 1, c) || !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1)) out.emplace_back(r, c);
    }
  return out;
}

inline double hd95(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b, int64_t H, int64_t W) {
  const auto ba = boundary_pixels(a, H, W), bb = boundary_pixels(b, H, W);
  if (ba.empty() && bb.empty()) return 0;
  if (ba.empty() || bb.empty()) return std::sqrt(double(H * H + W * W));
  auto directed = [](const auto& from, const auto& to) {
    std::vector<double> d;
    for (auto [r, c] : from) {
      double best = std::numeric_limits<double>::infinity();
      for (auto [r2, c2] : to) best = std::min(best, std::hypot(double(r - r2), double(c - c2)));
      d.push_back(best);
    }
    std::sort(d.begin(), d.end());
    const auto rank = size_t(std::ceil(0.95 * double(d.size())));
    return d[std::max<size_t>(rank, 1) - 1];
  };
  return std::max(directed(ba, bb), directed(bb, ba));
}

// Step-by-step selective-scan recurrence in double precision, same layout
// as dm::selective_scan.
template <typename Tn>
std::vector<double> scan(const Tn& u, const Tn& delta, const Tn& A, const Tn& B, const Tn& C, const Tn& D) {
  const int64_t Bn = u.dim(0), Ch = u.dim(1), L = u.dim(2), N = A.dim(1);
  std::vector<double> y(size_t(Bn * Ch * L));
  for (int64_t b = 0; b < Bn; ++b)
    for (int64_t c = 0; c < Ch; ++c) {
      std::vector<double> h(size_t(N), 0.0);
      for (int64_t t = 0; t < L; ++t) {
        const double d = delta.at({b, c, t}), x = u.at({b, c, t});
        double out = double(D.at({c})) * x;
        for (int64_t n = 0; n < N; ++n) {
          h[size_t(n)] = std::exp(d * double(A.at({c, n}))) * h[size_t(n)] + d * double(B.at({b, n, t})) * x;
          out += double(C.at({b, n, t})) * h[size_t(n)];
        }
        y[size_t((b * Ch + c) * L + t)] = out;
      }
    }
  return y;
}

}  // namespace dm::oracle
