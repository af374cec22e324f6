#pragma once

// IDX container (MNIST): big-endian magic 0x0000 08 NN, NN big-endian u32
// dimensions, then unsigned-byte payload.

#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "flowvar/numerics.hpp"

namespace flowvar {

inline constexpr std::uint32_t kIdxLabels = 0x00000801;
inline constexpr std::uint32_t kIdxImages = 0x00000803;

struct IdxTensor {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  [[nodiscard]] std::size_t element_count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
  }
  friend bool operator==(const IdxTensor&, const IdxTensor&) = default;
};

namespace detail {
inline std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}
inline void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xFFu));
}
}  // namespace detail

inline IdxTensor parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) {
    throw ValidationError("truncated IDX input: need at least 4 bytes, got " + std::to_string(bytes.size()));
  }
  IdxTensor t;
  t.magic = detail::read_be32(bytes, 0);
  if (t.magic != kIdxLabels && t.magic != kIdxImages) throw ValidationError("not an IDX file");
  const std::size_t ndims = t.magic & 0xFFu;
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) {
    throw ValidationError("IDX size mismatch: expected at least " + std::to_string(header) +
                          " header bytes, got " + std::to_string(bytes.size()));
  }
  for (std::size_t i = 0; i < ndims; ++i) t.dims.push_back(detail::read_be32(bytes, 4 + 4 * i));
  const std::size_t expected = t.element_count();
  const std::size_t actual = bytes.size() - header;
  if (expected != actual) {
    throw ValidationError("IDX size mismatch: expected " + std::to_string(expected) + " payload bytes, got " +
                          std::to_string(actual));
  }
  t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return t;
}

inline std::vector<std::uint8_t> write_idx(const IdxTensor& t) {
  require((t.magic & 0xFFu) == t.dims.size(), "IDX magic disagrees with dimension count");
  require(t.payload.size() == t.element_count(), "IDX payload disagrees with dimensions");
  std::vector<std::uint8_t> out;
  detail::write_be32(out, t.magic);
  for (std::uint32_t d : t.dims) detail::write_be32(out, d);
  out.insert(out.end(), t.payload.begin(), t.payload.end());
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline IdxTensor read_idx_file(const std::string& path) { return parse_idx(read_file_bytes(path)); }

/// Area-weighted average pooling of a square image to out_side x out_side.
inline Vec area_pool(const Vec& image, Eigen::Index side, Eigen::Index out_side) {
  require(image.size() == side * side && out_side >= 1 && out_side <= side, "area_pool: bad sizes");
  if (out_side == side) return image;
  const double scale = static_cast<double>(side) / static_cast<double>(out_side);
  auto overlap = [](double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); };
  Vec out = Vec::Zero(out_side * out_side);
  for (Eigen::Index oi = 0; oi < out_side; ++oi) {
    for (Eigen::Index oj = 0; oj < out_side; ++oj) {
      const double r0 = oi * scale, r1 = (oi + 1) * scale, c0 = oj * scale, c1 = (oj + 1) * scale;
      double acc = 0.0;
      for (auto i = static_cast<Eigen::Index>(r0); i < side && i < r1; ++i) {
        const double wr = overlap(r0, r1, static_cast<double>(i), static_cast<double>(i + 1));
        for (auto j = static_cast<Eigen::Index>(c0); j < side && j < c1; ++j) {
          acc += wr * overlap(c0, c1, static_cast<double>(j), static_cast<double>(j + 1)) * image[i * side + j];
        }
      }
      out[oi * out_side + oj] = acc / (scale * scale);
    }
  }
  return out;
}

/// Images as vectors in [-1, 1] (byte / 127.5 - 1), optionally pooled.
inline std::vector<Vec> idx_images(const IdxTensor& t, std::size_t limit = 0, Eigen::Index out_side = 0) {
  require(t.magic == kIdxImages && t.dims.size() == 3, "IDX tensor does not hold images");
  require(t.dims[1] == t.dims[2], "only square IDX images are supported");
  const auto side = static_cast<Eigen::Index>(t.dims[1]);
  const std::size_t count = limit == 0 ? t.dims[0] : std::min<std::size_t>(limit, t.dims[0]);
  const auto pixels = static_cast<std::size_t>(side * side);
  std::vector<Vec> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Vec img(side * side);
    for (std::size_t p = 0; p < pixels; ++p) img[static_cast<Eigen::Index>(p)] = t.payload[n * pixels + p] / 127.5 - 1.0;
    out.push_back(out_side > 0 ? area_pool(img, side, out_side) : img);
  }
  return out;
}

inline std::vector<int> idx_labels(const IdxTensor& t) {
  require(t.magic == kIdxLabels && t.dims.size() == 1, "IDX tensor does not hold labels");
  return {t.payload.begin(), t.payload.end()};
}

}  // namespace flowvar
