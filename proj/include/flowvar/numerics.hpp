#pragma once

// Dense vectors/matrices, reproducible random streams, Rademacher probes,
// finite differences and Hutchinson trace/diagonal estimation.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "flowvar/error.hpp"

namespace flowvar {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void require_same_dim(const Vec& a, const Vec& b, const char* what = "dimension mismatch") {
  if (a.size() != b.size()) {
    throw ValidationError(std::string(what) + " (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  }
}

/// True when max|A - A^T| <= 1e-9 * max|A|.
inline bool is_symmetric(const Mat& a) {
  if (a.rows() != a.cols()) return false;
  const double scale = a.cwiseAbs().maxCoeff();
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * scale;
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// (seed, stream) pair identifying a reproducible draw sequence. Child
/// streams are derived with split(); siblings never share a sequence.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  [[nodiscard]] RngState split(std::uint64_t sub) const {
    return {seed, splitmix64(stream * 0x632BE59BD9B4E019ULL + sub + 1)};
  }
  [[nodiscard]] std::uint64_t engine_seed() const {
    return splitmix64(seed ^ splitmix64(stream ^ 0xD1B54A32D192ED03ULL));
  }
  friend bool operator==(const RngState&, const RngState&) = default;
};

/// mt19937_64 has a standard-mandated output sequence; the transforms below
/// are hand-written so draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(RngState state) : state_(state), engine_(state.engine_seed()) {}

  [[nodiscard]] const RngState& state() const { return state_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (two uniforms per draw, no caching).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Vec normal_vec(Eigen::Index d) {
    Vec v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = normal();
    return v;
  }

  double sign() { return (engine_() >> 63) ? 1.0 : -1.0; }

  /// Uniform integer in [0, n), unbiased by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  RngState state_;
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Probes
// ---------------------------------------------------------------------------

/// S sign vectors stored column-wise (d x S). Every entry is exactly +-1.
struct ProbeSet {
  Mat probes;
  RngState seed;
  bool exhaustive = false;

  [[nodiscard]] Eigen::Index dim() const { return probes.rows(); }
  [[nodiscard]] Eigen::Index count() const { return probes.cols(); }
};

inline ProbeSet draw_rademacher(RngState state, Eigen::Index d, Eigen::Index S) {
  require(d >= 1 && S >= 1, "draw_rademacher requires d >= 1 and S >= 1");
  Rng rng(state);
  ProbeSet set{Mat(d, S), state, false};
  for (Eigen::Index s = 0; s < S; ++s)
    for (Eigen::Index i = 0; i < d; ++i) set.probes(i, s) = rng.sign();
  return set;
}

/// All 2^d sign vectors. Under full enumeration the Hutchinson trace and
/// diagonal estimates are exact.
inline ProbeSet exhaustive_probes(Eigen::Index d) {
  require(d >= 1 && d <= 20, "exhaustive_probes supports 1 <= d <= 20");
  const Eigen::Index S = Eigen::Index{1} << d;
  ProbeSet set{Mat(d, S), RngState{}, true};
  for (Eigen::Index s = 0; s < S; ++s)
    for (Eigen::Index i = 0; i < d; ++i) set.probes(i, s) = ((s >> i) & 1) ? 1.0 : -1.0;
  return set;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central difference (f(x + h u) - f(x - h u)) / (2h).
template <typename F>
Vec finite_diff_jvp(F&& f, const Vec& x, const Vec& u, double h = 1e-4) {
  require(h > 0.0, "finite_diff_jvp requires h > 0");
  require_same_dim(x, u);
  const Vec plus = f(Vec(x + h * u));
  const Vec minus = f(Vec(x - h * u));
  if (!all_finite(plus) || !all_finite(minus)) throw RuntimeFailure("field evaluation failed");
  return (plus - minus) / (2.0 * h);
}

/// Dense Jacobian by central differences along basis vectors.
template <typename F>
Mat finite_diff_jacobian(F&& f, const Vec& x, double h = 1e-4) {
  const Eigen::Index d = x.size();
  Mat jac;
  for (Eigen::Index j = 0; j < d; ++j) {
    const Vec col = finite_diff_jvp(f, x, Vec::Unit(d, j), h);
    if (j == 0) jac.resize(col.size(), d);
    jac.col(j) = col;
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Hutchinson estimators
// ---------------------------------------------------------------------------

struct HutchinsonResult {
  double trace = 0.0;
  Vec diagonal;
};

/// One JVP per probe; trace is the sum of the diagonal estimate so the two
/// agree bit-for-bit.
template <typename Jvp>
HutchinsonResult hutchinson(Jvp&& jvp, const ProbeSet& probes) {
  const Eigen::Index d = probes.dim();
  const Eigen::Index S = probes.count();
  require(S >= 1, "probe set is empty");
  Vec acc = Vec::Zero(d);
  for (Eigen::Index s = 0; s < S; ++s) {
    const Vec eps = probes.probes.col(s);
    const Vec jeps = jvp(eps);
    if (jeps.size() != d) {
      throw ValidationError("hutchinson: jvp returned dimension " + std::to_string(jeps.size()) +
                            ", expected " + std::to_string(d));
    }
    acc.array() += eps.array() * jeps.array();
  }
  HutchinsonResult out;
  out.diagonal = acc / static_cast<double>(S);
  out.trace = out.diagonal.sum();
  return out;
}

template <typename Jvp>
double hutchinson_trace(Jvp&& jvp, const ProbeSet& probes) {
  return hutchinson(std::forward<Jvp>(jvp), probes).trace;
}

template <typename Jvp>
Vec hutchinson_diagonal(Jvp&& jvp, const ProbeSet& probes) {
  return hutchinson(std::forward<Jvp>(jvp), probes).diagonal;
}

}  // namespace flowvar
