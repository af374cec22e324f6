#pragma once

// Small fully connected velocity network on [x | embed(t)] with smooth
// activations, optional dropout, hand-written forward-mode tangents for
// JVPs, and batched reverse accumulation for training.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowvar/numerics.hpp"
#include "flowvar/velocity.hpp"

namespace flowvar {

enum class Activation : std::uint32_t { tanh = 0, relu = 1 };

/// Sinusoidal features [sin(f_1 t) .. sin(f_n t), cos(f_1 t) .. cos(f_n t)].
struct TimeEmbedding {
  std::vector<double> frequencies;

  /// n frequencies spaced geometrically in [lo, hi] (radians per unit time).
  static TimeEmbedding geometric(std::size_t n, double lo = 1.0, double hi = 16.0) {
    TimeEmbedding e;
    for (std::size_t k = 0; k < n; ++k) {
      const double frac = n == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(n - 1);
      e.frequencies.push_back(lo * std::pow(hi / lo, frac));
    }
    return e;
  }

  [[nodiscard]] Eigen::Index dim() const { return static_cast<Eigen::Index>(2 * frequencies.size()); }

  [[nodiscard]] Vec operator()(double t) const {
    const auto n = static_cast<Eigen::Index>(frequencies.size());
    Vec out(2 * n);
    for (Eigen::Index k = 0; k < n; ++k) {
      out[k] = std::sin(frequencies[static_cast<std::size_t>(k)] * t);
      out[n + k] = std::cos(frequencies[static_cast<std::size_t>(k)] * t);
    }
    return out;
  }
};

/// Off, or sampled masks seeded by mask_seed (one draw per pass).
struct DropoutMode {
  std::optional<RngState> mask_seed;

  static DropoutMode off() { return {}; }
  static DropoutMode sampled(RngState seed) { return {seed}; }
  [[nodiscard]] bool active() const { return mask_seed.has_value(); }
};

class MlpVelocity {
 public:
  struct Layer {
    Mat weight;  // out x in
    Vec bias;
  };

  MlpVelocity() = default;

  /// Widths: (data_dim + embedding) -> hidden... -> data_dim.
  MlpVelocity(Eigen::Index data_dim, std::vector<Eigen::Index> hidden,
              TimeEmbedding embedding = TimeEmbedding::geometric(8),
              Activation activation = Activation::tanh, double dropout_rate = 0.0)
      : data_dim_(data_dim), embedding_(std::move(embedding)), activation_(activation),
        dropout_rate_(dropout_rate) {
    require(data_dim >= 1, "MLP data dimension must be >= 1");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout rate must lie in [0, 1)");
    std::vector<Eigen::Index> widths{data_dim + embedding_.dim()};
    for (Eigen::Index h : hidden) {
      require(h >= 1, "hidden width must be >= 1");
      widths.push_back(h);
    }
    widths.push_back(data_dim);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      layers_.push_back({Mat::Zero(widths[l + 1], widths[l]), Vec::Zero(widths[l + 1])});
    }
  }

  /// LeCun-normal weights, zero biases; optionally a zero output layer.
  void initialize(RngState state, bool zero_head = false) {
    Rng rng(state);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Layer& layer = layers_[l];
      const double scale = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = scale * rng.normal();
      layer.bias.setZero();
    }
    if (zero_head) {
      layers_.back().weight.setZero();
      layers_.back().bias.setZero();
    }
  }

  [[nodiscard]] Eigen::Index data_dim() const { return data_dim_; }
  [[nodiscard]] Eigen::Index input_dim() const { return data_dim_ + embedding_.dim(); }
  [[nodiscard]] const TimeEmbedding& embedding() const { return embedding_; }
  [[nodiscard]] Activation activation() const { return activation_; }
  [[nodiscard]] double dropout_rate() const { return dropout_rate_; }
  [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }
  [[nodiscard]] std::vector<Layer>& layers() { return layers_; }

  [[nodiscard]] std::vector<Eigen::Index> widths() const {
    std::vector<Eigen::Index> w{input_dim()};
    for (const Layer& l : layers_) w.push_back(l.weight.rows());
    return w;
  }

  void attach_counter(std::shared_ptr<EvalCounter> counter) { counter_ = std::move(counter); }

  // -------------------------------------------------------------------------
  // Inference
  // -------------------------------------------------------------------------

  [[nodiscard]] Vec eval(const Vec& x, FlowTime t, const DropoutMode& mode = DropoutMode::off()) const {
    if (counter_) ++counter_->evals;
    return propagate(x, t.value(), nullptr, mode).first;
  }

  /// Output and directional derivative along u (x only; t held fixed).
  [[nodiscard]] std::pair<Vec, Vec> eval_with_tangent(const Vec& x, FlowTime t, const Vec& u,
                                                      const DropoutMode& mode = DropoutMode::off()) const {
    require_same_dim(x, u, "mlp_jvp: tangent dimension mismatch");
    if (counter_) ++counter_->jvps;
    return propagate(x, t.value(), &u, mode);
  }

  [[nodiscard]] Vec jvp(const Vec& x, FlowTime t, const Vec& u, const DropoutMode& mode = DropoutMode::off()) const {
    return eval_with_tangent(x, t, u, mode).second;
  }

  // -------------------------------------------------------------------------
  // Parameters
  // -------------------------------------------------------------------------

  [[nodiscard]] Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const Layer& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Flat layout: per layer, weight in row-major order then bias.
  [[nodiscard]] Vec parameters() const {
    Vec p(parameter_count());
    Eigen::Index off = 0;
    for (const Layer& l : layers_) {
      using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
      Eigen::Map<RowMajor>(p.data() + off, l.weight.rows(), l.weight.cols()) = l.weight;
      off += l.weight.size();
      p.segment(off, l.bias.size()) = l.bias;
      off += l.bias.size();
    }
    return p;
  }

  void set_parameters(const Vec& p) {
    require(p.size() == parameter_count(), "parameter vector has wrong length");
    Eigen::Index off = 0;
    for (Layer& l : layers_) {
      using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
      l.weight = Eigen::Map<const RowMajor>(p.data() + off, l.weight.rows(), l.weight.cols());
      off += l.weight.size();
      l.bias = p.segment(off, l.bias.size());
      off += l.bias.size();
    }
  }

  /// FNV-1a over the little-endian parameter bytes.
  [[nodiscard]] std::uint64_t checksum() const {
    const Vec p = parameters();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &p[i], sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFFu;
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

  // -------------------------------------------------------------------------
  // Training support
  // -------------------------------------------------------------------------

  /// Sum over the batch columns of ||f(x_i, t_i) - y_i||^2, and its gradient
  /// with respect to the flat parameter vector (added into grad). mask_seeds
  /// is empty for dropout-free passes, else one seed per column.
  double accumulate_sse_gradient(const Mat& xs, const Vec& ts, const Mat& targets,
                                 std::span<const RngState> mask_seeds, Vec& grad) const {
    const Eigen::Index batch = xs.cols();
    require(xs.rows() == data_dim_ && targets.rows() == data_dim_ && targets.cols() == batch &&
                ts.size() == batch,
            "training batch shape mismatch");
    require(mask_seeds.empty() || static_cast<Eigen::Index>(mask_seeds.size()) == batch,
            "mask seed count must match batch size");
    require(grad.size() == parameter_count(), "gradient buffer has wrong length");
    const bool dropout = !mask_seeds.empty() && dropout_rate_ > 0.0;

    Mat input(input_dim(), batch);
    input.topRows(data_dim_) = xs;
    for (Eigen::Index i = 0; i < batch; ++i) input.col(i).tail(embedding_.dim()) = embedding_(ts[i]);

    const std::size_t nl = layers_.size();
    std::vector<Mat> acts{input};   // post-activation (and mask) per layer input
    std::vector<Mat> pre;           // pre-activations of hidden layers
    std::vector<Mat> masks;         // scaled masks of hidden layers
    for (std::size_t l = 0; l + 1 < nl; ++l) {
      Mat a = layers_[l].weight * acts.back();
      a.colwise() += layers_[l].bias;
      Mat h = activate(a);
      if (dropout) {
        Mat m(a.rows(), batch);
        for (Eigen::Index i = 0; i < batch; ++i) m.col(i) = mask(mask_seeds[static_cast<std::size_t>(i)], l, a.rows());
        h.array() *= m.array();
        masks.push_back(std::move(m));
      }
      pre.push_back(std::move(a));
      acts.push_back(std::move(h));
    }
    Mat out = layers_.back().weight * acts.back();
    out.colwise() += layers_.back().bias;
    const Mat resid = out - targets;
    const double sse = resid.squaredNorm();
    if (!std::isfinite(sse)) throw RuntimeFailure("forward pass diverged");

    // Reverse sweep; offsets follow the flat layout.
    std::vector<Eigen::Index> offsets(nl);
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < nl; ++l) {
      offsets[l] = off;
      off += layers_[l].weight.size() + layers_[l].bias.size();
    }
    Mat delta = 2.0 * resid;
    for (std::size_t l = nl; l-- > 0;) {
      const Layer& layer = layers_[l];
      using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
      Eigen::Map<RowMajor> gw(grad.data() + offsets[l], layer.weight.rows(), layer.weight.cols());
      gw.noalias() += delta * acts[l].transpose();
      grad.segment(offsets[l] + layer.weight.size(), layer.bias.size()) += delta.rowwise().sum();
      if (l == 0) break;
      Mat back = layer.weight.transpose() * delta;
      back.array() *= activate_derivative(pre[l - 1]).array();
      if (dropout) back.array() *= masks[l - 1].array();
      delta = std::move(back);
    }
    return sse;
  }

  /// Scaled keep-mask (entries 0 or 1/(1-p)) for hidden layer `layer`.
  [[nodiscard]] Vec mask(const RngState& seed, std::size_t layer, Eigen::Index width) const {
    Rng rng(seed.split(layer));
    const double keep_scale = 1.0 / (1.0 - dropout_rate_);
    Vec m(width);
    for (Eigen::Index i = 0; i < width; ++i) m[i] = rng.uniform() < dropout_rate_ ? 0.0 : keep_scale;
    return m;
  }

 private:
  [[nodiscard]] Mat activate(const Mat& a) const {
    if (activation_ == Activation::tanh) return a.array().tanh().matrix();
    return a.cwiseMax(0.0);
  }

  [[nodiscard]] Mat activate_derivative(const Mat& a) const {
    if (activation_ == Activation::tanh) return (1.0 - a.array().tanh().square()).matrix();
    return (a.array() > 0.0).cast<double>().matrix();
  }

  std::pair<Vec, Vec> propagate(const Vec& x, double t, const Vec* tangent, const DropoutMode& mode) const {
    require(x.size() == data_dim_, "MLP input dimension mismatch");
    Vec z(input_dim());
    z.head(data_dim_) = x;
    z.tail(embedding_.dim()) = embedding_(t);
    Vec dz;
    if (tangent) {
      dz = Vec::Zero(input_dim());
      dz.head(data_dim_) = *tangent;
    }
    const bool dropout = mode.active() && dropout_rate_ > 0.0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      Vec a = layer.weight * z + layer.bias;
      if (tangent) dz = layer.weight * dz;
      if (l + 1 == layers_.size()) {
        z = std::move(a);
        break;
      }
      Vec h = activate(a);
      if (tangent) dz.array() *= activate_derivative(a).array();
      if (dropout) {
        const Vec m = mask(*mode.mask_seed, l, a.size());
        h.array() *= m.array();
        if (tangent) dz.array() *= m.array();
      }
      z = std::move(h);
    }
    if (!all_finite(z) || (tangent && !all_finite(dz))) throw RuntimeFailure("forward pass diverged");
    return {std::move(z), std::move(dz)};
  }

  Eigen::Index data_dim_ = 0;
  TimeEmbedding embedding_;
  Activation activation_ = Activation::tanh;
  double dropout_rate_ = 0.0;
  std::vector<Layer> layers_;
  std::shared_ptr<EvalCounter> counter_;
};

/// Default desk-scale architecture: (d + 16) -> 128 -> 128 -> d, tanh.
inline MlpVelocity default_mlp(Eigen::Index d, double dropout_rate = 0.0) {
  return MlpVelocity(d, {128, 128}, TimeEmbedding::geometric(8), Activation::tanh, dropout_rate);
}

/// Handle over a network; the model is shared, not copied per call.
inline VelocityField mlp_handle(std::shared_ptr<const MlpVelocity> model, FieldKind kind = FieldKind::mlp,
                                DropoutMode mode = DropoutMode::off()) {
  const Eigen::Index d = model->data_dim();
  return VelocityField(
      kind, d, [model, mode](const Vec& x, double t) { return model->eval(x, t, mode); },
      [model, mode](const Vec& x, double t, const Vec& u) { return model->jvp(x, t, u, mode); });
}

inline VelocityField mlp_handle(const MlpVelocity& model, FieldKind kind = FieldKind::mlp,
                                DropoutMode mode = DropoutMode::off()) {
  return mlp_handle(std::make_shared<const MlpVelocity>(model), kind, mode);
}

/// Average velocity over [0, 1] predicted from the noise input x0.
inline Vec mean_velocity_eval(const MlpVelocity& model, const Vec& x0) { return model.eval(x0, 0.0); }

}  // namespace flowvar
