#pragma once

// Small synthetic image sets whose randomness lives at shape boundaries:
// interiors and backgrounds are fixed, edge positions jitter.

#include <algorithm>
#include <string>
#include <vector>

#include "flowvar/numerics.hpp"

namespace flowvar {

enum class ToyKind { bars, blobs };

inline ToyKind parse_toy_kind(const std::string& s) {
  if (s == "bars") return ToyKind::bars;
  if (s == "blobs") return ToyKind::blobs;
  throw ValidationError("unknown toy image kind: " + s);
}

inline const char* to_string(ToyKind k) { return k == ToyKind::bars ? "bars" : "blobs"; }

/// Edge jitter (in pixels) for a given side.
inline int toy_jitter(int side) { return std::max(1, side / 8); }

/// One vertical bar (+1) on a -1 background. Left edge near side/4, right
/// edge near 3 side/4 - 1, each moved by a uniform integer in [-j, j].
inline Vec toy_bar(int side, Rng& rng) {
  const int j = toy_jitter(side);
  const auto jitter = [&] { return static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * j + 1))) - j; };
  int left = std::clamp(side / 4 + jitter(), 0, side - 1);
  int right = std::clamp(3 * side / 4 - 1 + jitter(), 0, side - 1);
  right = std::max(right, left);
  Vec img = Vec::Constant(side * side, -1.0);
  for (int r = 0; r < side; ++r)
    for (int c = left; c <= right; ++c) img[r * side + c] = 1.0;
  return img;
}

/// A +1 disc of radius side/4 whose centre moves uniformly by up to side/8.
inline Vec toy_blob(int side, Rng& rng) {
  const double radius = side / 4.0;
  const double span = side / 8.0;
  const double mid = (side - 1) / 2.0;
  const double cr = mid + span * (2.0 * rng.uniform() - 1.0);
  const double cc = mid + span * (2.0 * rng.uniform() - 1.0);
  Vec img = Vec::Constant(side * side, -1.0);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const double dr = r - cr, dc = c - cc;
      if (dr * dr + dc * dc <= radius * radius) img[r * side + c] = 1.0;
    }
  }
  return img;
}

inline std::vector<Vec> toy_image_dataset(ToyKind kind, int side, std::size_t n, RngState state) {
  require(side >= 4 && side <= 32, "toy image side must lie in [4, 32]");
  Rng rng(state);
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(kind == ToyKind::bars ? toy_bar(side, rng) : toy_blob(side, rng));
  return out;
}

}  // namespace flowvar
