#pragma once

// Model container:
//   "FVAR"  u32 version  u32 n_widths  u32 widths[n]
//   u32 activation  u32 kind  u32 n_freq  f64 freq[n_freq]  f64 dropout_rate
//   f64 parameters (per layer: weight row-major, then bias)
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "flowvar/idx.hpp"
#include "flowvar/mlp.hpp"
#include "flowvar/pgm.hpp"

namespace flowvar {

inline constexpr std::uint32_t kModelVersion = 1;

struct StoredModel {
  MlpVelocity model;
  FieldKind kind = FieldKind::mlp;
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : b_(b) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw ValidationError("model file is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_++]} << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b_[pos_++]} << (8 * i);
    return std::bit_cast<double>(v);
  }
  bool magic(const char* m) {
    need(4);
    const bool ok = std::memcmp(b_.data() + pos_, m, 4) == 0;
    pos_ += 4;
    return ok;
  }
  [[nodiscard]] bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_model(const MlpVelocity& model, FieldKind kind) {
  require(kind != FieldKind::analytic, "analytic fields are not stored");
  detail::ByteWriter w;
  w.bytes("FVAR", 4);
  w.u32(kModelVersion);
  const auto widths = model.widths();
  w.u32(static_cast<std::uint32_t>(widths.size()));
  for (Eigen::Index x : widths) w.u32(static_cast<std::uint32_t>(x));
  w.u32(static_cast<std::uint32_t>(model.activation()));
  w.u32(static_cast<std::uint32_t>(kind));
  w.u32(static_cast<std::uint32_t>(model.embedding().frequencies.size()));
  for (double f : model.embedding().frequencies) w.f64(f);
  w.f64(model.dropout_rate());
  const Vec p = model.parameters();
  for (Eigen::Index i = 0; i < p.size(); ++i) w.f64(p[i]);
  return w.take();
}

inline StoredModel decode_model(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  if (!r.magic("FVAR")) throw ValidationError("not a model file");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) throw ValidationError("unsupported model version " + std::to_string(version));
  const std::uint32_t n_widths = r.u32();
  if (n_widths < 2 || n_widths > 64) throw ValidationError("model file has an invalid layer count");
  std::vector<Eigen::Index> widths(n_widths);
  for (auto& x : widths) {
    x = r.u32();
    if (x == 0) throw ValidationError("model file has a zero-width layer");
  }
  const std::uint32_t act = r.u32();
  const std::uint32_t kind = r.u32();
  if (act > 1) throw ValidationError("model file has an unknown activation");
  if (kind != static_cast<std::uint32_t>(FieldKind::mlp) && kind != static_cast<std::uint32_t>(FieldKind::mean_velocity))
    throw ValidationError("model file has an unknown field kind");
  const std::uint32_t n_freq = r.u32();
  r.need(8ull * n_freq);
  TimeEmbedding emb;
  for (std::uint32_t i = 0; i < n_freq; ++i) emb.frequencies.push_back(r.f64());
  const double dropout = r.f64();

  const Eigen::Index data_dim = widths.back();
  if (widths.front() != data_dim + emb.dim()) throw ValidationError("model file widths disagree with its embedding");
  std::vector<Eigen::Index> hidden(widths.begin() + 1, widths.end() - 1);
  StoredModel out{MlpVelocity(data_dim, hidden, emb, static_cast<Activation>(act), dropout),
                  static_cast<FieldKind>(kind)};
  const Eigen::Index n = out.model.parameter_count();
  r.need(8ull * static_cast<std::size_t>(n));
  Vec p(n);
  for (Eigen::Index i = 0; i < n; ++i) p[i] = r.f64();
  if (!r.done()) throw ValidationError("model file has trailing bytes");
  out.model.set_parameters(p);
  return out;
}

inline void save_model(const MlpVelocity& model, FieldKind kind, const std::string& path) {
  write_bytes(path, encode_model(model, kind));
}

inline StoredModel load_model(const std::string& path) { return decode_model(read_file_bytes(path)); }

}  // namespace flowvar
