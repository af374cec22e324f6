#pragma once

// Conditional flow matching, the one-step average-velocity objective, AdamW
// with optional cosine annealing, and independently seeded ensembles.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "flowvar/interpolant.hpp"
#include "flowvar/mlp.hpp"
#include "flowvar/parallel.hpp"

namespace flowvar {

enum class Objective { fm, one_step };
enum class LrSchedule { constant, cosine };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double learning_rate = 2e-4;
  LrSchedule schedule = LrSchedule::cosine;
  double weight_decay = 0.0;
  RngState seed{};
  Objective objective = Objective::fm;
  /// Pairs per epoch for generative (infinite-data) datasets.
  std::size_t dataset_size = 8192;
  /// Offset of the data-order stream; changing it alone reshuffles the data.
  std::uint64_t data_order_offset = 0;
  double time_clamp = 1e-3;
  /// Evaluate gradient chunks on worker threads. Results are identical to
  /// the sequential mode (fixed chunking, in-order reduction).
  bool parallel = false;
  double divergence_threshold = 1e6;

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  static constexpr Eigen::Index kChunk = 32;

  void validate() const {
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_size >= 1, "batch size must be >= 1");
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning rate must be finite and >= 0");
    require(weight_decay >= 0.0, "weight decay must be >= 0");
    require(time_clamp > 0.0 && time_clamp < 0.5, "time clamp must lie in (0, 0.5)");
    require(dataset_size >= 1, "dataset size must be >= 1");
  }
};

struct TrainReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;
  double wall_seconds = 0.0;
  std::uint64_t checksum = 0;
  std::size_t steps = 0;
  bool aborted = false;
  std::string note;
};

/// Source of data samples x1: a fixed pool (shuffled per epoch) or a
/// mixture sampled afresh every epoch.
class Dataset {
 public:
  static Dataset gmm(const GmmSpec& spec) {
    Dataset d;
    d.sampler_.emplace(spec);
    d.dim_ = spec.dim();
    return d;
  }

  static Dataset fixed(std::vector<Vec> samples) {
    require(!samples.empty(), "dataset is empty");
    Dataset d;
    d.dim_ = samples.front().size();
    for (const Vec& s : samples) require(s.size() == d.dim_, "dataset samples disagree on dimension");
    d.pool_ = std::move(samples);
    return d;
  }

  [[nodiscard]] Eigen::Index dim() const { return dim_; }
  [[nodiscard]] bool generative() const { return sampler_.has_value(); }
  [[nodiscard]] const std::vector<Vec>& pool() const { return pool_; }

  [[nodiscard]] std::size_t epoch_size(const TrainConfig& cfg) const {
    return generative() ? cfg.dataset_size : pool_.size();
  }

  /// x1 samples for one epoch, in training order.
  [[nodiscard]] std::vector<Vec> epoch(Rng& rng, std::size_t n) const {
    std::vector<Vec> out;
    out.reserve(n);
    if (sampler_) {
      for (std::size_t i = 0; i < n; ++i) out.push_back((*sampler_)(rng));
      return out;
    }
    std::vector<std::size_t> order(pool_.size());
    while (out.size() < n) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      for (std::size_t i = 0; i < order.size() && out.size() < n; ++i) out.push_back(pool_[order[i]]);
    }
    return out;
  }

 private:
  Eigen::Index dim_ = 0;
  std::optional<GmmSampler> sampler_;
  std::vector<Vec> pool_;
};

/// Columns are samples. masks holds one seed per column when the network is
/// trained with dropout, else it is empty.
struct Batch {
  Mat x0;
  Mat x1;
  Vec t;
  std::vector<RngState> masks;
};

struct LossResult {
  double loss = 0.0;
  Vec gradient;
};

namespace detail {

/// Mean SSE over columns and its gradient, evaluated in fixed-size chunks
/// reduced in order.
inline LossResult chunked_loss(const MlpVelocity& model, const Mat& inputs, const Vec& times, const Mat& targets,
                               const std::vector<RngState>& masks, bool parallel) {
  const Eigen::Index n = inputs.cols();
  require(n >= 1, "empty batch");
  const Eigen::Index chunks = (n + TrainConfig::kChunk - 1) / TrainConfig::kChunk;
  std::vector<Vec> grads(static_cast<std::size_t>(chunks));
  std::vector<double> sse(static_cast<std::size_t>(chunks), 0.0);
  auto run = [&](std::size_t c) {
    const Eigen::Index start = static_cast<Eigen::Index>(c) * TrainConfig::kChunk;
    const Eigen::Index len = std::min(TrainConfig::kChunk, n - start);
    grads[c] = Vec::Zero(model.parameter_count());
    std::span<const RngState> seeds;
    if (!masks.empty()) seeds = std::span<const RngState>(masks).subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len));
    sse[c] = model.accumulate_sse_gradient(inputs.middleCols(start, len), times.segment(start, len),
                                           targets.middleCols(start, len), seeds, grads[c]);
  };
  parallel_for(static_cast<std::size_t>(chunks), run, parallel ? worker_count() : 1);
  LossResult out;
  out.gradient = Vec::Zero(model.parameter_count());
  for (std::size_t c = 0; c < grads.size(); ++c) {
    out.loss += sse[c];
    out.gradient += grads[c];
  }
  out.loss /= static_cast<double>(n);
  out.gradient /= static_cast<double>(n);
  if (!std::isfinite(out.loss)) throw RuntimeFailure("non-finite loss");
  return out;
}

}  // namespace detail

/// Mean over the batch of ||v(x_t, t) - (x1 - x0)||^2 with x_t interpolated.
inline LossResult fm_loss(const MlpVelocity& model, const Batch& batch, bool parallel = false) {
  require(batch.x0.cols() == batch.x1.cols() && batch.x0.rows() == batch.x1.rows() &&
              batch.t.size() == batch.x0.cols(),
          "fm_loss: batch shape mismatch");
  Mat xt(batch.x0.rows(), batch.x0.cols());
  for (Eigen::Index i = 0; i < xt.cols(); ++i) xt.col(i) = batch.t[i] * batch.x1.col(i) + (1.0 - batch.t[i]) * batch.x0.col(i);
  return detail::chunked_loss(model, xt, batch.t, batch.x1 - batch.x0, batch.masks, parallel);
}

/// Mean over the batch of ||u(x0, 0) - (x1 - x0)||^2.
inline LossResult one_step_loss(const MlpVelocity& model, const Batch& batch, bool parallel = false) {
  require(batch.x0.cols() == batch.x1.cols() && batch.x0.rows() == batch.x1.rows(),
          "one_step_loss: batch shape mismatch");
  const Vec zeros = Vec::Zero(batch.x0.cols());
  return detail::chunked_loss(model, batch.x0, zeros, batch.x1 - batch.x0, batch.masks, parallel);
}

namespace detail {

/// Decoupled-weight-decay Adam state.
class AdamW {
 public:
  explicit AdamW(Eigen::Index n) : m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

  void step(Vec& params, const Vec& grad, double lr, double weight_decay) {
    ++k_;
    m_ = TrainConfig::kBeta1 * m_ + (1.0 - TrainConfig::kBeta1) * grad;
    v_ = TrainConfig::kBeta2 * v_ + (1.0 - TrainConfig::kBeta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(TrainConfig::kBeta1, static_cast<double>(k_));
    const double c2 = 1.0 - std::pow(TrainConfig::kBeta2, static_cast<double>(k_));
    params *= (1.0 - lr * weight_decay);
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + TrainConfig::kEps);
  }

 private:
  Vec m_;
  Vec v_;
  std::uint64_t k_ = 0;
};

inline double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total) {
  if (cfg.schedule == LrSchedule::constant || total == 0) return cfg.learning_rate;
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

}  // namespace detail

// Stream layout under TrainConfig::seed.
inline constexpr std::uint64_t kInitStream = 0;
inline constexpr std::uint64_t kDataStream = 1;
inline constexpr std::uint64_t kNoiseStream = 2;
inline constexpr std::uint64_t kTimeStream = 3;
inline constexpr std::uint64_t kMaskStream = 4;

using EpochHook = std::function<void(std::size_t epoch, const MlpVelocity& model)>;

/// Trains in place. Deterministic given the parameters and config seed.
/// on_epoch runs after every completed epoch.
inline TrainReport train(MlpVelocity& model, const Dataset& data, const TrainConfig& cfg,
                         const EpochHook& on_epoch = {}) {
  cfg.validate();
  require(data.dim() == model.data_dim(), "dataset dimension does not match the model");
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  {
    std::ostringstream note;
    note << "t clamped to [" << cfg.time_clamp << ", " << 1.0 - cfg.time_clamp << "]";
    report.note = note.str();
  }

  const std::size_t n = data.epoch_size(cfg);
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const bool dropout = model.dropout_rate() > 0.0;
  const Eigen::Index d = model.data_dim();

  Vec params = model.parameters();
  detail::AdamW opt(params.size());
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs && !report.aborted; ++epoch) {
    Rng data_rng(cfg.seed.split(kDataStream).split(cfg.data_order_offset).split(epoch));
    Rng noise_rng(cfg.seed.split(kNoiseStream).split(epoch));
    Rng time_rng(cfg.seed.split(kTimeStream).split(epoch));
    const RngState mask_base = cfg.seed.split(kMaskStream).split(epoch);
    const std::vector<Vec> x1s = data.epoch(data_rng, n);

    double epoch_sum = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const auto len = static_cast<Eigen::Index>(std::min(cfg.batch_size, n - b0));
      Batch batch{Mat(d, len), Mat(d, len), Vec(len), {}};
      for (Eigen::Index i = 0; i < len; ++i) {
        batch.x1.col(i) = x1s[b0 + static_cast<std::size_t>(i)];
        batch.x0.col(i) = noise_rng.normal_vec(d);
        batch.t[i] = std::clamp(time_rng.uniform(), cfg.time_clamp, 1.0 - cfg.time_clamp);
        if (dropout) batch.masks.push_back(mask_base.split(b0 + static_cast<std::size_t>(i)));
      }
      LossResult lr;
      try {
        lr = cfg.objective == Objective::fm ? fm_loss(model, batch, cfg.parallel)
                                            : one_step_loss(model, batch, cfg.parallel);
      } catch (const RuntimeFailure& e) {
        report.aborted = true;
        report.note += "; epoch " + std::to_string(epoch) + " aborted: " + e.what();
        break;
      }
      if (step == 0) report.initial_loss = lr.loss;
      if (lr.loss > cfg.divergence_threshold) {
        report.aborted = true;
        report.note += "; diverged at epoch " + std::to_string(epoch) + " (loss " + std::to_string(lr.loss) + ")";
        break;
      }
      epoch_sum += lr.loss * static_cast<double>(len);
      epoch_count += static_cast<std::size_t>(len);
      opt.step(params, lr.gradient, detail::scheduled_lr(cfg, step, total_steps), cfg.weight_decay);
      model.set_parameters(params);
      ++step;
    }
    if (epoch_count > 0 && !report.aborted) {
      report.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_count));
      if (on_epoch) on_epoch(epoch, model);
    }
  }

  report.steps = step;
  report.checksum = model.checksum();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

struct TrainedModel {
  MlpVelocity model;
  TrainReport report;
};

/// Initializes a copy of the prototype from seed.split(kInitStream) and trains it.
inline TrainedModel train_new(const MlpVelocity& prototype, const Dataset& data, const TrainConfig& cfg) {
  TrainedModel out{prototype, {}};
  out.model.initialize(cfg.seed.split(kInitStream));
  out.report = train(out.model, data, cfg);
  return out;
}

/// M members, member m seeded with cfg.seed.split(100 + m) for both
/// initialization and data order. force_identical_seeds reuses cfg.seed.
inline std::vector<TrainedModel> train_ensemble(std::size_t members, const MlpVelocity& prototype,
                                                const Dataset& data, const TrainConfig& cfg,
                                                bool force_identical_seeds = false) {
  require(members >= 2, "ensemble needs at least 2 members");
  std::vector<TrainedModel> out;
  out.reserve(members);
  for (std::size_t m = 0; m < members; ++m) {
    TrainConfig member_cfg = cfg;
    if (!force_identical_seeds) member_cfg.seed = cfg.seed.split(100 + m);
    out.push_back(train_new(prototype, data, member_cfg));
  }
  return out;
}

}  // namespace flowvar
