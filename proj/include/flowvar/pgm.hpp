#pragma once

// Binary 8-bit portable graymaps for per-pixel uncertainty maps.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "flowvar/idx.hpp"
#include "flowvar/numerics.hpp"

namespace flowvar {

enum class MapNormalization { per_frame, global };

inline MapNormalization parse_normalization(const std::string& s) {
  if (s == "per-frame") return MapNormalization::per_frame;
  if (s == "global") return MapNormalization::global;
  throw ValidationError("unknown map normalization: " + s);
}

struct MapRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Linear stretch of [lo, hi] onto [0, 255]; values outside are clipped and
/// a degenerate range (hi <= lo) maps everything to 0.
inline GrayImage render_map(const Vec& values, int side, MapRange range) {
  require(side >= 1 && values.size() == static_cast<Eigen::Index>(side) * side, "map size is not side^2");
  require(all_finite(values), "map values are not finite");
  GrayImage img{side, side, std::vector<std::uint8_t>(static_cast<std::size_t>(values.size()), 0)};
  const double width = range.hi - range.lo;
  if (!(width > 0.0)) return img;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double q = std::round(255.0 * (values[i] - range.lo) / width);
    img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
  }
  return img;
}

inline MapRange frame_range(const Vec& values) { return {values.minCoeff(), values.maxCoeff()}; }

inline std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    }
    std::string s;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) s.push_back(static_cast<char>(bytes[pos++]));
    return s;
  };
  if (token() != "P5") throw ValidationError("not a binary PGM");
  GrayImage img;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    if (std::stoi(token()) != 255) throw ValidationError("only maxval 255 PGMs are supported");
  } catch (const std::logic_error&) {
    throw ValidationError("malformed PGM header");
  }
  ++pos;  // single whitespace before the raster
  const auto n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  if (pos + n != bytes.size()) throw ValidationError("PGM raster size mismatch");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeFailure("write failed: " + path);
}

/// Writes the map and returns the range that was used. Per-frame ignores
/// `global_range`.
inline MapRange write_uq_map(const Vec& values, int side, MapNormalization norm, const std::string& path,
                             MapRange global_range = {}) {
  const MapRange range = norm == MapNormalization::per_frame ? frame_range(values) : global_range;
  write_bytes(path, encode_pgm(render_map(values, side, range)));
  return range;
}

inline GrayImage read_pgm(const std::string& path) { return decode_pgm(read_file_bytes(path)); }

}  // namespace flowvar
