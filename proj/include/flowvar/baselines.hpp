#pragma once

// Sampling baselines: spread of the posterior mean x_t + (1-t) v across
// ensemble members or across MC-dropout passes.

#include <chrono>
#include <cstdint>
#include <span>
#include <vector>

#include "flowvar/mlp.hpp"
#include "flowvar/tweedie.hpp"
#include "flowvar/velocity.hpp"

namespace flowvar {

/// Population divides by n; unbiased by n - 1.
enum class VarianceConvention { population, unbiased };

struct BaselineEstimate {
  Vec variance;
  double scalar = 0.0;  // sum of per-pixel variances
  Vec mean_prediction;  // average posterior mean across members/passes
  std::size_t members = 0;
  std::uint64_t forward_evaluations = 0;
  double wall_seconds = 0.0;
};

/// Per-coordinate variance of the columns of `samples` (d x n), reduced in
/// column order.
inline BaselineEstimate spread_of(const Mat& samples, VarianceConvention conv) {
  const Eigen::Index n = samples.cols();
  require(n >= 2, "variance needs at least 2 samples");
  BaselineEstimate est;
  // Shifted by the first sample so identical samples give exactly zero spread.
  const Vec first = samples.col(0);
  est.mean_prediction = first + (samples.colwise() - first).rowwise().sum() / static_cast<double>(n);
  Vec acc = Vec::Zero(samples.rows());
  for (Eigen::Index i = 0; i < n; ++i) acc += (samples.col(i) - est.mean_prediction).cwiseAbs2();
  const double denom = conv == VarianceConvention::population ? static_cast<double>(n) : static_cast<double>(n - 1);
  est.variance = acc / denom;
  est.scalar = est.variance.sum();
  est.members = static_cast<std::size_t>(n);
  return est;
}

inline BaselineEstimate ensemble_uq(std::span<const VelocityField> members, const Vec& xt, FlowTime t,
                                    VarianceConvention conv = VarianceConvention::population) {
  require(members.size() >= 2, "ensemble_uq needs at least 2 members");
  const double tt = require_open(t);
  const auto start = std::chrono::steady_clock::now();
  Mat preds(xt.size(), static_cast<Eigen::Index>(members.size()));
  for (std::size_t m = 0; m < members.size(); ++m) {
    preds.col(static_cast<Eigen::Index>(m)) = posterior_mean_from_velocity(xt, tt, members[m].eval(xt, tt));
  }
  BaselineEstimate est = spread_of(preds, conv);
  est.forward_evaluations = members.size();
  est.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return est;
}

/// P passes, pass p using masks seeded by stream.split(p).
inline BaselineEstimate mc_dropout_uq(const MlpVelocity& model, const Vec& xt, FlowTime t, std::size_t passes,
                                      RngState stream, VarianceConvention conv = VarianceConvention::population) {
  require(passes >= 2, "mc_dropout_uq needs at least 2 passes");
  const double tt = require_open(t);
  const auto start = std::chrono::steady_clock::now();
  Mat preds(xt.size(), static_cast<Eigen::Index>(passes));
  for (std::size_t p = 0; p < passes; ++p) {
    const Vec v = model.eval(xt, tt, DropoutMode::sampled(stream.split(p)));
    preds.col(static_cast<Eigen::Index>(p)) = posterior_mean_from_velocity(xt, tt, v);
  }
  BaselineEstimate est = spread_of(preds, conv);
  est.forward_evaluations = passes;
  est.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return est;
}

}  // namespace flowvar
