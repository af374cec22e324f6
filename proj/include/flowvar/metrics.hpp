#pragma once

// Agreement between uncertainty and error: Spearman rank correlation with
// average ranks, HitRate@K%, and the corruption/consistency protocol built
// on them.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowvar/baselines.hpp"
#include "flowvar/numerics.hpp"
#include "flowvar/parallel.hpp"
#include "flowvar/tweedie.hpp"

namespace flowvar {

/// 1-based ranks; tied groups share their average rank.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

/// Pearson correlation of average ranks. Returns nullopt ("undefined
/// correlation") when either input is constant.
inline std::optional<double> spearman(std::span<const double> u, std::span<const double> e) {
  require(u.size() == e.size(), "spearman: length mismatch");
  require(u.size() >= 2, "spearman: need at least 2 values");
  for (std::size_t i = 0; i < u.size(); ++i) require(std::isfinite(u[i]) && std::isfinite(e[i]), "spearman: non-finite input");
  const std::vector<double> ru = average_ranks(u);
  const std::vector<double> re = average_ranks(e);
  const double n = static_cast<double>(u.size());
  const double mu = std::accumulate(ru.begin(), ru.end(), 0.0) / n;
  const double me = std::accumulate(re.begin(), re.end(), 0.0) / n;
  double suv = 0.0, suu = 0.0, svv = 0.0;
  for (std::size_t i = 0; i < ru.size(); ++i) {
    const double a = ru[i] - mu;
    const double b = re[i] - me;
    suv += a * b;
    suu += a * a;
    svv += b * b;
  }
  if (suu <= 0.0 || svv <= 0.0) return std::nullopt;
  return std::clamp(suv / std::sqrt(suu * svv), -1.0, 1.0);
}

inline std::optional<double> spearman(const Vec& u, const Vec& e) {
  return spearman(std::span<const double>(u.data(), static_cast<std::size_t>(u.size())),
                  std::span<const double>(e.data(), static_cast<std::size_t>(e.size())));
}

/// Indices of the k largest values; ties broken by ascending index.
inline std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  order.resize(std::min(k, order.size()));
  return order;
}

/// |top-K%(u) ∩ top-K%(e)| / |top-K%(u)| with K = max(1, floor(N k / 100)).
inline double hitrate_at_k(std::span<const double> u, std::span<const double> e, double k_percent = 30.0) {
  require(u.size() == e.size() && !u.empty(), "hitrate_at_k: length mismatch or empty input");
  require(k_percent > 0.0 && k_percent < 100.0, "hitrate_at_k: k_percent must lie in (0, 100)");
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(static_cast<double>(u.size()) * k_percent / 100.0 + 1e-9)));
  std::vector<std::size_t> a = top_k_indices(u, k);
  std::vector<std::size_t> b = top_k_indices(e, k);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::size_t> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  return static_cast<double>(both.size()) / static_cast<double>(a.size());
}

inline double hitrate_at_k(const Vec& u, const Vec& e, double k_percent = 30.0) {
  return hitrate_at_k(std::span<const double>(u.data(), static_cast<std::size_t>(u.size())),
                      std::span<const double>(e.data(), static_cast<std::size_t>(e.size())), k_percent);
}

/// Convex mixing with unit Gaussian noise: (1 - lambda) x1 + lambda n.
/// lambda = 0 returns x1 unchanged (noise is still drawn).
inline Vec corrupt(const Vec& x1, double lambda, Rng& rng) {
  require(lambda >= 0.0 && lambda <= 1.0, "noise level must lie in [0, 1]");
  const Vec noise = rng.normal_vec(x1.size());
  if (lambda == 0.0) return x1;
  return (1.0 - lambda) * x1 + lambda * noise;
}

// ---------------------------------------------------------------------------
// UQ methods under a common interface
// ---------------------------------------------------------------------------

struct MethodInput {
  const Vec& xt;
  double t;
  RngState rng;
  /// Clean target; only oracle stubs may look at it.
  const Vec* reference = nullptr;
};

struct MethodOutput {
  Vec pixel_uq;
  double scalar_uq = 0.0;
  Vec prediction;  // estimate of x1
};

struct UqMethod {
  std::string label;
  std::function<MethodOutput(const MethodInput&)> run;
};

/// Closed-form covariance on a velocity field; prediction from the same field.
inline UqMethod tweedie_method(VelocityField field, Eigen::Index probes, std::string label = "tweedie-fm") {
  return {std::move(label), [field = std::move(field), probes](const MethodInput& in) {
            const ProbeSet p = draw_rademacher(in.rng, field.dim(), probes);
            const PosteriorEstimate est = cov_closed_form(field, in.xt, in.t, p);
            return MethodOutput{est.diag, est.U, posterior_mean_from_velocity(in.xt, in.t, field.eval(in.xt, in.t))};
          }};
}

inline UqMethod ensemble_method(std::vector<VelocityField> members, std::string label = "ensemble") {
  return {std::move(label), [members = std::move(members)](const MethodInput& in) {
            const BaselineEstimate est = ensemble_uq(members, in.xt, in.t);
            return MethodOutput{est.variance, est.scalar, est.mean_prediction};
          }};
}

inline UqMethod mc_dropout_method(std::shared_ptr<const MlpVelocity> model, std::size_t passes,
                                  std::string label = "mc-dropout") {
  return {std::move(label), [model = std::move(model), passes](const MethodInput& in) {
            const BaselineEstimate est = mc_dropout_uq(*model, in.xt, in.t, passes, in.rng);
            return MethodOutput{est.variance, est.scalar, est.mean_prediction};
          }};
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

struct ConsistencyRow {
  double t = 0.0;
  std::string method;
  std::optional<double> pixel_spearman;  // mean over samples with a defined value
  double hitrate = 0.0;                  // mean HitRate@K over samples
  std::optional<double> sample_spearman;
  std::size_t samples = 0;
  std::size_t pixel_defined = 0;
  double noise_level = 0.0;
};

struct ProtocolOptions {
  double noise_level = 0.5;
  std::vector<double> times{0.3, 0.5, 0.7, 0.9};
  double hitrate_percent = 30.0;
  RngState seed{};
};

/// For every clean sample: corrupt it, interpolate with a noise draw (the same
/// x0 at every t), run each method, and score its per-pixel map and scalar
/// against the squared error of its prediction to the clean sample.
/// Sample i uses streams seed.split(0|1).split(i); method m at time index j
/// uses seed.split(2).split(i).split(j).split(m).
inline std::vector<ConsistencyRow> consistency_protocol(const std::vector<Vec>& clean,
                                                        const std::vector<UqMethod>& methods,
                                                        const ProtocolOptions& opt) {
  require(clean.size() >= 2, "consistency protocol needs at least 2 samples");
  require(!methods.empty(), "consistency protocol needs at least one method");
  require(opt.noise_level >= 0.0 && opt.noise_level <= 1.0, "noise level must lie in [0, 1]");
  for (double t : opt.times) require_open(t);

  const std::size_t n = clean.size();
  const std::size_t nt = opt.times.size();
  const std::size_t nm = methods.size();
  struct Cell {
    std::optional<double> pixel;
    double hit = 0.0;
    double scalar = 0.0;
    double error = 0.0;
  };
  // cells[(i * nt + j) * nm + m]
  std::vector<Cell> cells(n * nt * nm);

  parallel_for(n, [&](std::size_t i) {
    const Vec& x1 = clean[i];
    Rng corrupt_rng(opt.seed.split(0).split(i));
    Rng noise_rng(opt.seed.split(1).split(i));
    const Vec x1_corrupt = corrupt(x1, opt.noise_level, corrupt_rng);
    const Vec x0 = noise_rng.normal_vec(x1.size());
    for (std::size_t j = 0; j < nt; ++j) {
      const double t = opt.times[j];
      const Vec xt = t * x1_corrupt + (1.0 - t) * x0;
      for (std::size_t m = 0; m < nm; ++m) {
        const MethodOutput out = methods[m].run(MethodInput{xt, t, opt.seed.split(2).split(i).split(j).split(m), &x1});
        const Vec err = (out.prediction - x1).cwiseAbs2();
        Cell& c = cells[(i * nt + j) * nm + m];
        if (err.size() >= 2) {
          c.pixel = spearman(out.pixel_uq, err);
          c.hit = hitrate_at_k(out.pixel_uq, err, opt.hitrate_percent);
        }
        c.scalar = out.scalar_uq;
        c.error = err.sum();
      }
    }
  });

  std::vector<ConsistencyRow> rows;
  for (std::size_t j = 0; j < nt; ++j) {
    for (std::size_t m = 0; m < nm; ++m) {
      ConsistencyRow row;
      row.t = opt.times[j];
      row.method = methods[m].label;
      row.samples = n;
      row.noise_level = opt.noise_level;
      double pix_sum = 0.0, hit_sum = 0.0;
      std::vector<double> scal(n), errs(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Cell& c = cells[(i * nt + j) * nm + m];
        if (c.pixel) {
          pix_sum += *c.pixel;
          ++row.pixel_defined;
        }
        hit_sum += c.hit;
        scal[i] = c.scalar;
        errs[i] = c.error;
      }
      if (row.pixel_defined > 0) row.pixel_spearman = pix_sum / static_cast<double>(row.pixel_defined);
      row.hitrate = hit_sum / static_cast<double>(n);
      row.sample_spearman = spearman(scal, errs);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

struct CorrelationRow {
  std::string method;
  std::optional<double> rho;
  std::size_t samples = 0;
  double t = 0.0;
};

/// Sample-level Spearman between the scalar UQ and the squared error of the
/// posterior-mean prediction on clean inputs at a single time.
inline std::vector<CorrelationRow> error_correlation(const std::vector<Vec>& clean, const std::vector<UqMethod>& methods,
                                                    FlowTime t, RngState seed) {
  require(clean.size() >= 8, "error_correlation needs at least 8 samples");
  ProtocolOptions opt;
  opt.noise_level = 0.0;
  opt.times = {t.value()};
  opt.seed = seed;
  std::vector<CorrelationRow> out;
  for (const ConsistencyRow& r : consistency_protocol(clean, methods, opt)) {
    out.push_back({r.method, r.sample_spearman, r.samples, r.t});
  }
  return out;
}

}  // namespace flowvar
