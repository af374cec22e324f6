#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "flowvar/mlp.hpp"
#include "flowvar/velocity.hpp"

namespace flowvar {

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  std::size_t steps = 0;
};

/// Thrown when the state stops being finite; carries what was integrated.
class SamplerDiverged : public RuntimeFailure {
 public:
  SamplerDiverged(const std::string& what, Trajectory partial)
      : RuntimeFailure(what), partial_(std::move(partial)) {}
  [[nodiscard]] const Trajectory& partial() const { return partial_; }

 private:
  Trajectory partial_;
};

/// Uniform-step Euler from t = 0 to t = 1. With no snapshot times every grid
/// node is recorded; otherwise each requested time is served by the first
/// node at or after it.
inline Trajectory euler_generate(const VelocityField& field, const Vec& x0, std::size_t steps,
                                 const std::vector<double>& snapshot_times = {}) {
  require(steps >= 1, "euler_generate requires at least one step");
  require(x0.size() == field.dim(), "euler_generate: x0 dimension mismatch");
  const double dt = 1.0 / static_cast<double>(steps);

  // Node index for each snapshot request.
  std::vector<std::size_t> wanted;
  for (double t : snapshot_times) {
    require(t >= 0.0 && t <= 1.0, "snapshot time outside [0, 1]");
    const double k = std::ceil(t * static_cast<double>(steps) - 1e-9);
    wanted.push_back(std::min(steps, static_cast<std::size_t>(std::max(0.0, k))));
  }
  std::sort(wanted.begin(), wanted.end());
  wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());

  Trajectory traj;
  traj.steps = steps;
  auto record = [&](std::size_t k, const Vec& x) {
    if (snapshot_times.empty()) {
      traj.times.push_back(static_cast<double>(k) * dt);
      traj.states.push_back(x);
      return;
    }
    for (std::size_t w : wanted) {
      if (w == k) {
        traj.times.push_back(static_cast<double>(k) * dt);
        traj.states.push_back(x);
      }
    }
  };

  Vec x = x0;
  record(0, x);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    field.note_sampler_step();
    x += dt * field.eval(x, t);
    if (!all_finite(x)) throw SamplerDiverged("sampler state became non-finite at step " + std::to_string(k), traj);
    record(k + 1, x);
  }
  return traj;
}

/// x0 + u(x0, 0): exactly one network evaluation.
inline Vec one_step_generate(const MlpVelocity& model, const Vec& x0) { return x0 + mean_velocity_eval(model, x0); }

}  // namespace flowvar
