#pragma once

// Linear interpolant x_t = t x1 + (1 - t) x0 with x0 ~ N(0, I), and a
// Gaussian-mixture data law whose posterior p(x1 | x_t) is available in
// closed form. The mixture posterior is the ground truth the covariance
// estimators are checked against.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "flowvar/numerics.hpp"

namespace flowvar {

/// Flow time in [0, 1]. Implicitly constructible from double (validated).
class FlowTime {
 public:
  FlowTime(double t) : t_(t) {  // NOLINT(google-explicit-constructor)
    if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("flow time " + std::to_string(t) + " outside [0, 1]");
  }
  [[nodiscard]] double value() const { return t_; }
  operator double() const { return t_; }  // NOLINT(google-explicit-constructor)

 private:
  double t_;
};

/// Rejects the endpoints, where the closed forms divide by t or (1 - t).
inline double require_open(FlowTime t) {
  if (t.value() <= 0.0 || t.value() >= 1.0) throw ValidationError("flow-time out of open interval");
  return t.value();
}

inline Vec interpolate(const Vec& x0, const Vec& x1, FlowTime t) {
  require_same_dim(x0, x1);
  return t.value() * x1 + (1.0 - t.value()) * x0;
}

/// Score of N(x_t; t x1, (1-t)^2 I) with respect to x_t.
inline Vec conditional_score(const Vec& xt, const Vec& x1, FlowTime t) {
  require_same_dim(xt, x1);
  if (t.value() >= 1.0) throw ValidationError("degenerate conditional");
  const double s = 1.0 - t.value();
  return -(xt - t.value() * x1) / (s * s);
}

// ---------------------------------------------------------------------------
// Mixture specification
// ---------------------------------------------------------------------------

struct GmmSpec {
  Vec weights;
  std::vector<Vec> means;
  std::vector<Mat> covariances;

  [[nodiscard]] Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }
  [[nodiscard]] std::size_t components() const { return means.size(); }

  void validate() const {
    const std::size_t k = means.size();
    require(k >= 1, "GMM needs at least one component");
    require(static_cast<std::size_t>(weights.size()) == k && covariances.size() == k,
            "GMM weights/means/covariances disagree on component count");
    require((weights.array() > 0.0).all(), "GMM weights must be positive");
    require(std::abs(weights.sum() - 1.0) <= 1e-12, "GMM weights must sum to 1");
    const Eigen::Index d = dim();
    require(d >= 1, "GMM dimension must be >= 1");
    for (std::size_t i = 0; i < k; ++i) {
      require(means[i].size() == d && all_finite(means[i]), "GMM mean " + std::to_string(i) + " invalid");
      const Mat& c = covariances[i];
      require(c.rows() == d && c.cols() == d, "GMM covariance " + std::to_string(i) + " has wrong shape");
      require(all_finite(c) && is_symmetric(c), "GMM covariance " + std::to_string(i) + " not symmetric");
      Eigen::LLT<Mat> llt(c);
      require(llt.info() == Eigen::Success, "GMM covariance " + std::to_string(i) + " not positive definite");
    }
  }

  [[nodiscard]] Vec marginal_mean() const {
    Vec m = Vec::Zero(dim());
    for (std::size_t k = 0; k < components(); ++k) m += weights[k] * means[k];
    return m;
  }

  /// Law of total variance over components.
  [[nodiscard]] Mat marginal_covariance() const {
    const Vec m = marginal_mean();
    Mat c = Mat::Zero(dim(), dim());
    for (std::size_t k = 0; k < components(); ++k) {
      const Vec dm = means[k] - m;
      c += weights[k] * (covariances[k] + dm * dm.transpose());
    }
    return c;
  }

  static GmmSpec isotropic(const std::vector<double>& w, const std::vector<Vec>& mu,
                           const std::vector<double>& variances) {
    require(w.size() == mu.size() && w.size() == variances.size(), "isotropic GMM: length mismatch");
    GmmSpec spec;
    spec.weights = Eigen::Map<const Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
    spec.means = mu;
    for (std::size_t k = 0; k < w.size(); ++k) {
      spec.covariances.push_back(variances[k] * Mat::Identity(mu[k].size(), mu[k].size()));
    }
    spec.validate();
    return spec;
  }
};

inline GmmSpec standard_gaussian(Eigen::Index d) { return GmmSpec::isotropic({1.0}, {Vec::Zero(d)}, {1.0}); }

/// Two well-separated isotropic components in the plane.
inline GmmSpec default_gmm() {
  Vec a(2), b(2);
  a << -1.0, 2.0;
  b << 1.0, 2.0;
  return GmmSpec::isotropic({0.5, 0.5}, {a, b}, {0.01, 0.01});
}

/// Random well-conditioned mixture for identity suites: means in [-2, 2]^d,
/// covariances A A^T / d + 0.1 I, weights bounded away from zero.
inline GmmSpec random_gmm(std::size_t k, Eigen::Index d, RngState state) {
  Rng rng(state);
  GmmSpec spec;
  spec.weights.resize(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) spec.weights[static_cast<Eigen::Index>(i)] = 0.5 + rng.uniform();
  spec.weights /= spec.weights.sum();
  for (std::size_t i = 0; i < k; ++i) {
    Vec mu(d);
    for (Eigen::Index j = 0; j < d; ++j) mu[j] = -2.0 + 4.0 * rng.uniform();
    Mat a(d, d);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c) a(r, c) = rng.normal() * 0.5;
    Mat cov = a * a.transpose() / static_cast<double>(d) + 0.1 * Mat::Identity(d, d);
    spec.means.push_back(mu);
    spec.covariances.push_back(0.5 * (cov + cov.transpose()));
  }
  // weights were renormalized by division; snap the sum exactly.
  spec.weights[0] = 1.0 - spec.weights.tail(spec.weights.size() - 1).sum();
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Posterior of the mixture given x_t
// ---------------------------------------------------------------------------

struct PosteriorOracle {
  Vec mean;
  Mat covariance;
  Vec responsibilities;
};

/// Per-time precomputation of the component marginals
/// x_t | k ~ N(t mu_k, t^2 Sigma_k + (1-t)^2 I) and their conditioning gains.
/// t = 0 is allowed (the posterior is the prior) so samplers can start there.
class GmmPosterior {
 public:
  GmmPosterior(const GmmSpec& spec, FlowTime t) : t_(t.value()), d_(spec.dim()) {
    if (t_ >= 1.0) throw ValidationError("flow-time out of open interval");
    spec.validate();
    const double s2 = (1.0 - t_) * (1.0 - t_);
    const Mat eye = Mat::Identity(d_, d_);
    for (std::size_t k = 0; k < spec.components(); ++k) {
      const Mat& sigma = spec.covariances[k];
      Component c;
      c.prior_mean = spec.means[k];
      c.marginal_mean = t_ * spec.means[k];
      Mat marginal_cov = t_ * t_ * sigma + s2 * eye;
      c.chol.compute(marginal_cov);
      if (c.chol.info() != Eigen::Success) throw RuntimeFailure("component marginal not positive definite");
      // gain = t Sigma C^{-1}; C and Sigma symmetric.
      c.gain = c.chol.solve(t_ * sigma).transpose();
      Mat cov = sigma - c.gain * (t_ * sigma);
      c.covariance = 0.5 * (cov + cov.transpose());
      const Mat l = c.chol.matrixL();
      c.log_norm = -l.diagonal().array().log().sum() - 0.5 * static_cast<double>(d_) * std::log(2.0 * std::numbers::pi);
      c.log_weight = std::log(spec.weights[static_cast<Eigen::Index>(k)]);
      components_.push_back(std::move(c));
    }
  }

  [[nodiscard]] double time() const { return t_; }

  /// log(w_k N_k(x_t)) per component.
  [[nodiscard]] Vec log_joint(const Vec& xt) const {
    require(xt.size() == d_, "gmm_posterior: x_t dimension mismatch");
    Vec lj(static_cast<Eigen::Index>(components_.size()));
    for (std::size_t k = 0; k < components_.size(); ++k) {
      const Component& c = components_[k];
      const Vec z = c.chol.matrixL().solve(xt - c.marginal_mean);
      lj[static_cast<Eigen::Index>(k)] = c.log_weight + c.log_norm - 0.5 * z.squaredNorm();
    }
    return lj;
  }

  /// Softmax of log_joint with max subtraction.
  [[nodiscard]] Vec responsibilities(const Vec& xt) const {
    const Vec lj = log_joint(xt);
    const double top = lj.maxCoeff();
    if (!std::isfinite(top) || top < std::log(std::numeric_limits<double>::min())) {
      throw ValidationError("xt in negligible-density region");
    }
    Vec r = (lj.array() - top).exp();
    return r / r.sum();
  }

  [[nodiscard]] Vec mean(const Vec& xt) const {
    const Vec r = responsibilities(xt);
    Vec m = Vec::Zero(d_);
    for (std::size_t k = 0; k < components_.size(); ++k) m += r[static_cast<Eigen::Index>(k)] * component_mean(k, xt);
    return m;
  }

  [[nodiscard]] PosteriorOracle operator()(const Vec& xt) const {
    PosteriorOracle out;
    out.responsibilities = responsibilities(xt);
    std::vector<Vec> means;
    means.reserve(components_.size());
    out.mean = Vec::Zero(d_);
    for (std::size_t k = 0; k < components_.size(); ++k) {
      means.push_back(component_mean(k, xt));
      out.mean += out.responsibilities[static_cast<Eigen::Index>(k)] * means.back();
    }
    out.covariance = Mat::Zero(d_, d_);
    for (std::size_t k = 0; k < components_.size(); ++k) {
      const Vec dm = means[k] - out.mean;
      out.covariance += out.responsibilities[static_cast<Eigen::Index>(k)] *
                        (components_[k].covariance + dm * dm.transpose());
    }
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
    return out;
  }

  /// Marginal score grad log p_t(x_t) = sum_k r_k * (-C_k^{-1} (x_t - t mu_k)).
  [[nodiscard]] Vec score(const Vec& xt) const {
    const Vec r = responsibilities(xt);
    Vec g = Vec::Zero(d_);
    for (std::size_t k = 0; k < components_.size(); ++k) {
      g -= r[static_cast<Eigen::Index>(k)] * components_[k].chol.solve(xt - components_[k].marginal_mean);
    }
    return g;
  }

  /// Population-optimal velocity (E[x1 | x_t] - x_t) / (1 - t).
  [[nodiscard]] Vec velocity(const Vec& xt) const { return (mean(xt) - xt) / (1.0 - t_); }

 private:
  struct Component {
    Vec prior_mean;
    Vec marginal_mean;
    Eigen::LLT<Mat> chol;
    Mat gain;
    Mat covariance;
    double log_norm = 0.0;
    double log_weight = 0.0;
  };

  [[nodiscard]] Vec component_mean(std::size_t k, const Vec& xt) const {
    const Component& c = components_[k];
    return c.prior_mean + c.gain * (xt - c.marginal_mean);
  }

  double t_;
  Eigen::Index d_;
  std::vector<Component> components_;
};

inline PosteriorOracle gmm_posterior(const GmmSpec& spec, const Vec& xt, FlowTime t) {
  return GmmPosterior(spec, require_open(t))(xt);
}

inline Vec optimal_velocity(const GmmSpec& spec, const Vec& xt, FlowTime t) {
  return GmmPosterior(spec, require_open(t)).velocity(xt);
}

// ---------------------------------------------------------------------------
// Single-Gaussian closed forms (information form, independent of the
// gain-form mixture path above)
// ---------------------------------------------------------------------------

/// Posterior of x1 ~ N(mu, Sigma) given x_t: precision Sigma^{-1} + t^2/s^2 I.
inline PosteriorOracle single_gaussian_posterior(const Vec& mu, const Mat& sigma, const Vec& xt, FlowTime t) {
  const double tt = require_open(t);
  const double s2 = (1.0 - tt) * (1.0 - tt);
  const Eigen::Index d = mu.size();
  const Mat sigma_inv = sigma.inverse();
  const Mat precision = sigma_inv + (tt * tt / s2) * Mat::Identity(d, d);
  PosteriorOracle out;
  out.covariance = precision.inverse();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  out.mean = out.covariance * (sigma_inv * mu + (tt / s2) * xt);
  out.responsibilities = Vec::Ones(1);
  return out;
}

/// Jacobian of the optimal velocity for a single Gaussian, by differentiating
/// the information-form mean: d mean / d x_t = (t / s^2) P^{-1}.
inline Mat single_gaussian_velocity_jacobian(const Mat& sigma, FlowTime t) {
  const double tt = require_open(t);
  const double s = 1.0 - tt;
  const Eigen::Index d = sigma.rows();
  const Mat precision = sigma.inverse() + (tt * tt / (s * s)) * Mat::Identity(d, d);
  const Mat dmean = (tt / (s * s)) * precision.inverse();
  return (dmean - Mat::Identity(d, d)) / s;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

class GmmSampler {
 public:
  explicit GmmSampler(const GmmSpec& spec) : spec_(spec) {
    spec_.validate();
    for (const Mat& c : spec_.covariances) factors_.push_back(Eigen::LLT<Mat>(c).matrixL());
  }

  Vec operator()(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t k = spec_.components() - 1;
    for (std::size_t i = 0; i < spec_.components(); ++i) {
      acc += spec_.weights[static_cast<Eigen::Index>(i)];
      if (u < acc) {
        k = i;
        break;
      }
    }
    return spec_.means[k] + factors_[k] * rng.normal_vec(spec_.dim());
  }

  [[nodiscard]] const GmmSpec& spec() const { return spec_; }

 private:
  GmmSpec spec_;
  std::vector<Mat> factors_;
};

/// Independent (x0, x1): x0 from the noise stream, x1 from the data stream.
inline std::pair<Vec, Vec> sample_pair(const GmmSampler& sampler, Rng& noise, Rng& data) {
  Vec x0 = noise.normal_vec(sampler.spec().dim());
  Vec x1 = sampler(data);
  return {std::move(x0), std::move(x1)};
}

/// Pair stream with x0 on stream split(0) and x1 on split(1).
class PairSampler {
 public:
  PairSampler(const GmmSpec& spec, RngState state)
      : sampler_(spec), noise_(state.split(0)), data_(state.split(1)) {}
  std::pair<Vec, Vec> next() { return sample_pair(sampler_, noise_, data_); }

 private:
  GmmSampler sampler_;
  Rng noise_;
  Rng data_;
};

inline std::pair<Vec, Vec> sample_pair(const GmmSpec& spec, RngState state) {
  return PairSampler(spec, state).next();
}

/// Axis-aligned grid covering +-width marginal standard deviations of x_t.
inline std::vector<Vec> marginal_grid(const GmmSpec& spec, FlowTime t, int per_axis = 9, double width = 3.0) {
  const double tt = t.value();
  const Eigen::Index d = spec.dim();
  const Vec center = tt * spec.marginal_mean();
  const Vec sd = (tt * tt * spec.marginal_covariance().diagonal().array() + (1.0 - tt) * (1.0 - tt)).sqrt();
  std::size_t total = 1;
  for (Eigen::Index i = 0; i < d; ++i) total *= static_cast<std::size_t>(per_axis);
  std::vector<Vec> pts;
  pts.reserve(total);
  for (std::size_t idx = 0; idx < total; ++idx) {
    Vec p(d);
    std::size_t rem = idx;
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto k = static_cast<int>(rem % static_cast<std::size_t>(per_axis));
      rem /= static_cast<std::size_t>(per_axis);
      const double frac = per_axis == 1 ? 0.0 : -1.0 + 2.0 * k / (per_axis - 1);
      p[i] = center[i] + frac * width * sd[i];
    }
    pts.push_back(std::move(p));
  }
  return pts;
}

}  // namespace flowvar
