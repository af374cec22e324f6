#pragma once

// Closed-form posterior covariance of the data endpoint given an
// intermediate flow state:
//
//   Cov(x1 | x_t) = (1-t)^2 / t * [I + (1-t) J_v(x_t, t)]
//   U(x_t, t)     = (1-t)^2 / t * [d + (1-t) div v]
//
// with J_v the velocity Jacobian. Trace and diagonal come from Hutchinson
// sign probes; the full matrix is assembled from basis JVPs for small d.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "flowvar/interpolant.hpp"
#include "flowvar/mlp.hpp"
#include "flowvar/numerics.hpp"
#include "flowvar/velocity.hpp"

namespace flowvar {

/// Full covariance is only assembled up to this dimension.
inline constexpr Eigen::Index kMaxMaterializeDim = 64;
/// t = 0 is evaluated at this time in trajectory grids.
inline constexpr double kStartTimeShift = 1e-3;
/// One-step covariance is evaluated at this epsilon by default.
inline constexpr double kOneStepEpsilon = 1e-2;

/// Trajectory grid used for the per-pixel map series.
inline const std::vector<double>& map_series_times() {
  static const std::vector<double> grid{0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 0.98};
  return grid;
}

/// 50 probes up to d = 1024, 64 beyond.
inline Eigen::Index default_probe_count(Eigen::Index d) { return d <= 1024 ? 50 : 64; }

struct PosteriorEstimate {
  double t = 0.0;
  double U = 0.0;      // floored at zero
  double U_raw = 0.0;  // before flooring
  Vec diag;            // floored per-pixel variances
  Vec diag_raw;
  std::optional<Mat> covariance;  // pre-floor, when materialized
  double divergence = 0.0;        // trace of J used for U
  double hutchinson_divergence = 0.0;
  RngState probe_seed{};
  Eigen::Index probe_count = 0;
  bool exhaustive_probes = false;
  bool floored = false;
  /// Smallest eigenvalue of the symmetric part of the materialized matrix.
  /// Negative values are reported, never clipped.
  std::optional<double> min_eigenvalue;
  std::uint64_t jvp_calls = 0;

  [[nodiscard]] Eigen::Index dim() const { return diag.size(); }
};

struct UncertaintyMapSeries {
  std::vector<std::pair<double, PosteriorEstimate>> points;

  [[nodiscard]] bool times_increasing() const {
    for (std::size_t i = 1; i < points.size(); ++i)
      if (!(points[i].first > points[i - 1].first)) return false;
    return true;
  }
};

inline double prior_factor(double t) { return (1.0 - t) * (1.0 - t) / t; }

/// (1-t)^2 d / t: the uncertainty a divergence-free field would report.
inline double prior_baseline(FlowTime t, Eigen::Index d) {
  return prior_factor(require_open(t)) * static_cast<double>(d);
}

/// E[x1 | x_t] = x_t / t + (1-t)^2 / t * grad log p_t(x_t).
inline Vec tweedie_posterior_mean(const Vec& xt, FlowTime t, const Vec& score) {
  const double tt = require_open(t);
  require_same_dim(xt, score);
  return xt / tt + prior_factor(tt) * score;
}

/// E[x1 | x_t] = x_t + (1-t) v(x_t, t).
inline Vec posterior_mean_from_velocity(const Vec& xt, FlowTime t, const Vec& v) {
  require_same_dim(xt, v);
  return xt + (1.0 - t.value()) * v;
}

/// Floors diagonal and trace at zero; the raw values stay in the estimate.
inline void apply_floor(PosteriorEstimate& est) {
  est.floored = est.U_raw < 0.0 || (est.diag_raw.array() < 0.0).any();
  est.U = std::max(est.U_raw, 0.0);
  est.diag = est.diag_raw.cwiseMax(0.0);
}

/// Closed-form covariance at (x_t, t). Costs probes.count() JVPs, plus d more
/// when materialize_full is set and d <= kMaxMaterializeDim. When the matrix
/// is materialized, U and the diagonal use its exact trace and diagonal (so
/// U equals the trace of the returned matrix); the probe estimate is kept in
/// hutchinson_divergence.
inline PosteriorEstimate cov_closed_form(const VelocityField& field, const Vec& xt, FlowTime t,
                                         const ProbeSet& probes, bool materialize_full = false) {
  const double tt = require_open(t);
  const Eigen::Index d = field.dim();
  require(xt.size() == d, "cov_closed_form: state dimension mismatch");
  require(probes.dim() == d, "cov_closed_form: probe dimension mismatch");
  const double s = 1.0 - tt;
  const double pref = prior_factor(tt);

  PosteriorEstimate est;
  est.t = tt;
  est.probe_seed = probes.seed;
  est.probe_count = probes.count();
  est.exhaustive_probes = probes.exhaustive;

  const HutchinsonResult h = hutchinson([&](const Vec& eps) { return field.jvp(xt, tt, eps); }, probes);
  est.jvp_calls = static_cast<std::uint64_t>(probes.count());
  est.hutchinson_divergence = h.trace;
  Vec jac_diag = h.diagonal;
  est.divergence = h.trace;

  if (materialize_full && d <= kMaxMaterializeDim) {
    const Mat jac = field.jacobian(xt, tt);
    est.jvp_calls += static_cast<std::uint64_t>(d);
    Mat cov = pref * (Mat::Identity(d, d) + s * jac);
    jac_diag = jac.diagonal();
    est.divergence = jac.trace();
    const Mat sym = 0.5 * (cov + cov.transpose());
    est.min_eigenvalue = Eigen::SelfAdjointEigenSolver<Mat>(sym, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    est.covariance = std::move(cov);
  }

  est.diag_raw = pref * (Vec::Ones(d) + s * jac_diag);
  est.U_raw = pref * (static_cast<double>(d) + s * est.divergence);
  if (!all_finite(est.diag_raw) || !std::isfinite(est.U_raw)) throw RuntimeFailure("covariance estimate is not finite");
  apply_floor(est);
  return est;
}

/// One-step generator specialization: the same closed form at small t = epsilon
/// on the generator input x0, using the average-velocity network's Jacobian.
inline PosteriorEstimate one_step_cov(const VelocityField& mean_velocity, const Vec& x0, double epsilon,
                                      const ProbeSet& probes, bool materialize_full = false) {
  require(epsilon > 0.0 && epsilon <= 0.1, "one_step_cov requires 0 < epsilon <= 0.1");
  return cov_closed_form(mean_velocity, x0, epsilon, probes, materialize_full);
}

inline PosteriorEstimate one_step_cov(const MlpVelocity& model, const Vec& x0, double epsilon,
                                      const ProbeSet& probes, bool materialize_full = false) {
  return one_step_cov(mlp_handle(model, FieldKind::mean_velocity), x0, epsilon, probes, materialize_full);
}

/// t = 0 maps to kStartTimeShift; everything else must already be in (0, 1).
inline double shift_start_time(double t) { return t == 0.0 ? kStartTimeShift : t; }

/// One estimate per (t, state), each with a fresh probe set drawn from
/// stream.split(i).
inline UncertaintyMapSeries trajectory_uq(const VelocityField& field,
                                          const std::vector<std::pair<double, Vec>>& states,
                                          Eigen::Index probes_per_point, RngState stream) {
  UncertaintyMapSeries series;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const double t = shift_start_time(states[i].first);
    require(t > 0.0 && t < 1.0, "trajectory time outside (0, 1) after shifting");
    if (!series.points.empty()) require(t > series.points.back().first, "trajectory times must be strictly increasing");
    const ProbeSet probes = draw_rademacher(stream.split(i), field.dim(), probes_per_point);
    series.points.emplace_back(t, cov_closed_form(field, states[i].second, t, probes));
  }
  return series;
}

}  // namespace flowvar
