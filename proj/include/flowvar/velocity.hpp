#pragma once

// Uniform velocity-field contract: value and Jacobian-vector product at
// (x, t), with evaluation counters for cost audits.

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include "flowvar/interpolant.hpp"
#include "flowvar/numerics.hpp"

namespace flowvar {

enum class FieldKind { analytic, mlp, mean_velocity };

inline const char* to_string(FieldKind k) {
  switch (k) {
    case FieldKind::analytic: return "analytic";
    case FieldKind::mlp: return "mlp";
    case FieldKind::mean_velocity: return "mean-velocity";
  }
  return "?";
}

/// Forward-equivalent counts. A JVP computed by tangent propagation costs one
/// forward-equivalent.
struct EvalCounter {
  std::atomic<std::uint64_t> evals{0};
  std::atomic<std::uint64_t> jvps{0};
  std::atomic<std::uint64_t> sampler_steps{0};

  void reset() {
    evals = 0;
    jvps = 0;
    sampler_steps = 0;
  }
  [[nodiscard]] std::uint64_t forward_equivalents() const { return evals + jvps; }
};

class VelocityField {
 public:
  using EvalFn = std::function<Vec(const Vec&, double)>;
  using JvpFn = std::function<Vec(const Vec&, double, const Vec&)>;

  VelocityField(FieldKind kind, Eigen::Index dim, EvalFn eval, JvpFn jvp)
      : kind_(kind), dim_(dim), eval_(std::move(eval)), jvp_(std::move(jvp)),
        counter_(std::make_shared<EvalCounter>()) {}

  [[nodiscard]] Vec eval(const Vec& x, FlowTime t) const {
    require(x.size() == dim_, "velocity field: input dimension mismatch");
    ++counter_->evals;
    return eval_(x, t.value());
  }

  [[nodiscard]] Vec jvp(const Vec& x, FlowTime t, const Vec& u) const {
    require(x.size() == dim_ && u.size() == dim_, "velocity field: jvp dimension mismatch");
    ++counter_->jvps;
    return jvp_(x, t.value(), u);
  }

  /// Dense Jacobian from d basis-vector JVPs.
  [[nodiscard]] Mat jacobian(const Vec& x, FlowTime t) const {
    Mat j(dim_, dim_);
    for (Eigen::Index c = 0; c < dim_; ++c) j.col(c) = jvp(x, t, Vec::Unit(dim_, c));
    return j;
  }

  [[nodiscard]] FieldKind kind() const { return kind_; }
  [[nodiscard]] Eigen::Index dim() const { return dim_; }
  [[nodiscard]] EvalCounter& counter() const { return *counter_; }

  /// Count sampler steps against this field (used by the Euler integrator).
  void note_sampler_step() const { ++counter_->sampler_steps; }

 private:
  FieldKind kind_;
  Eigen::Index dim_;
  EvalFn eval_;
  JvpFn jvp_;
  std::shared_ptr<EvalCounter> counter_;
};

enum class JacobianMode { automatic, finite_difference };

namespace detail {

/// Per-time cache of mixture posteriors shared by the analytic field.
class PosteriorCache {
 public:
  explicit PosteriorCache(GmmSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  std::shared_ptr<const GmmPosterior> at(double t) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(t);
    if (it != cache_.end()) return it->second;
    if (cache_.size() >= 256) cache_.clear();
    auto post = std::make_shared<const GmmPosterior>(spec_, t);
    cache_.emplace(t, post);
    return post;
  }

  [[nodiscard]] const GmmSpec& spec() const { return spec_; }

 private:
  GmmSpec spec_;
  std::mutex mutex_;
  std::map<double, std::shared_ptr<const GmmPosterior>> cache_;
};

}  // namespace detail

/// Step used by the analytic field's finite-difference JVP.
inline constexpr double kAnalyticJvpStep = 1e-5;

/// Population-optimal field of a mixture. JVPs use the single-Gaussian
/// analytic Jacobian when K = 1 (and mode is automatic), otherwise central
/// differences of the velocity with step kAnalyticJvpStep.
inline VelocityField analytic_handle(const GmmSpec& spec, JacobianMode mode = JacobianMode::automatic) {
  auto cache = std::make_shared<detail::PosteriorCache>(spec);
  auto eval = [cache](const Vec& x, double t) { return cache->at(t)->velocity(x); };
  VelocityField::JvpFn jvp;
  if (spec.components() == 1 && mode == JacobianMode::automatic) {
    const Mat sigma = spec.covariances.front();
    jvp = [sigma](const Vec&, double t, const Vec& u) -> Vec {
      return single_gaussian_velocity_jacobian(sigma, t) * u;
    };
  } else {
    jvp = [cache](const Vec& x, double t, const Vec& u) -> Vec {
      auto post = cache->at(t);
      return finite_diff_jvp([&](const Vec& y) { return post->velocity(y); }, x, u, kAnalyticJvpStep);
    };
  }
  return VelocityField(FieldKind::analytic, spec.dim(), std::move(eval), std::move(jvp));
}

/// Linear field v(x, t) = A x + b, handy for exact checks.
inline VelocityField linear_field(const Mat& a, const Vec& b, FieldKind kind = FieldKind::mlp) {
  return VelocityField(
      kind, a.rows(), [a, b](const Vec& x, double) -> Vec { return a * x + b; },
      [a](const Vec&, double, const Vec& u) -> Vec { return a * u; });
}

}  // namespace flowvar
