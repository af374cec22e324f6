#pragma once

// Experiment plumbing shared by the command-line tool and the acceptance
// runner: task data, role-seeded training, model storage and UQ method sets.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "flowvar/baselines.hpp"
#include "flowvar/config.hpp"
#include "flowvar/idx.hpp"
#include "flowvar/metrics.hpp"
#include "flowvar/model_io.hpp"
#include "flowvar/toy_images.hpp"
#include "flowvar/training.hpp"
#include "flowvar/tweedie.hpp"

namespace flowvar {

/// Stream ids under RngState{seed, 0}.
inline constexpr std::uint64_t kPoolStream = 2001;
inline constexpr std::uint64_t kTestStream = 2002;
inline constexpr std::uint64_t kEvalNoiseStream = 2003;
inline constexpr std::uint64_t kProbeStream = 2004;
inline constexpr std::uint64_t kProtocolStream = 2005;

enum class Role : std::uint64_t { fm = 0, one_step = 1, dropout = 2, ensemble = 3 };

struct TaskData {
  Dataset train;
  std::vector<Vec> test;
};

inline TaskData load_task(const ExperimentConfig& cfg) {
  const RngState root{cfg.seed, 0};
  const std::size_t n_test = cfg.task.test_count;
  switch (cfg.task.kind) {
    case TaskKind::gmm: {
      const GmmSampler sampler(cfg.task.gmm);
      Rng rng(root.split(kTestStream));
      std::vector<Vec> test;
      for (std::size_t i = 0; i < n_test; ++i) test.push_back(sampler(rng));
      return {Dataset::gmm(cfg.task.gmm), std::move(test)};
    }
    case TaskKind::toy_image:
      return {Dataset::fixed(toy_image_dataset(cfg.task.toy, cfg.task.side, cfg.task.train_count, root.split(kPoolStream))),
              toy_image_dataset(cfg.task.toy, cfg.task.side, n_test, root.split(kTestStream))};
    case TaskKind::mnist: {
      const IdxTensor t = read_idx_file(cfg.task.mnist_path);
      std::vector<Vec> images = idx_images(t, cfg.task.subsample + n_test, cfg.task.pool_side);
      require(images.size() == cfg.task.subsample + n_test, "IDX file holds fewer images than subsample + test_count");
      std::vector<Vec> test(images.end() - static_cast<std::ptrdiff_t>(n_test), images.end());
      images.resize(cfg.task.subsample);
      return {Dataset::fixed(std::move(images)), std::move(test)};
    }
  }
  throw ValidationError("unknown task kind");
}

/// Forward-equivalents spent in training: one per sample visit.
inline std::uint64_t training_forward_equivalents(const TrainReport& r, const Dataset& data, const TrainConfig& cfg) {
  return static_cast<std::uint64_t>(r.epoch_loss.size()) * data.epoch_size(cfg);
}

inline const char* role_label(Role r) {
  switch (r) {
    case Role::fm: return "tweedie-fm";
    case Role::one_step: return "tweedie-onestep";
    case Role::dropout: return "mc-dropout";
    case Role::ensemble: return "ensemble";
  }
  return "?";
}

inline TrainConfig role_train_config(const ExperimentConfig& cfg, Role role) {
  return cfg.train_config(role == Role::one_step ? Objective::one_step : Objective::fm, static_cast<std::uint64_t>(role));
}

inline TrainedModel train_role(const ExperimentConfig& cfg, const TaskData& data, Role role) {
  require(role != Role::ensemble, "train_role: use train_members for the ensemble");
  const double rate = role == Role::dropout ? cfg.methods.dropout_rate : 0.0;
  return train_new(cfg.prototype(rate), data.train, role_train_config(cfg, role));
}

inline std::vector<TrainedModel> train_members(const ExperimentConfig& cfg, const TaskData& data) {
  return train_ensemble(cfg.methods.ensemble_members, cfg.prototype(), data.train, role_train_config(cfg, Role::ensemble));
}

/// Model files under <out>/models.
class ModelStore {
 public:
  explicit ModelStore(std::filesystem::path out) : dir_(std::move(out) / "models") {}

  [[nodiscard]] std::filesystem::path path(const std::string& name) const { return dir_ / (name + ".fvm"); }
  [[nodiscard]] static std::string member_name(std::size_t m) { return "ensemble-" + std::to_string(m); }

  void save(const std::string& name, const MlpVelocity& model, FieldKind kind) const {
    std::filesystem::create_directories(dir_);
    save_model(model, kind, path(name).string());
  }

  [[nodiscard]] bool has(const std::string& name) const { return std::filesystem::is_regular_file(path(name)); }

  [[nodiscard]] StoredModel load(const std::string& name) const {
    if (!has(name)) throw ValidationError("model not found: " + path(name).string());
    return load_model(path(name).string());
  }

  [[nodiscard]] std::vector<MlpVelocity> load_members(std::size_t count) const {
    std::vector<MlpVelocity> out;
    for (std::size_t m = 0; m < count; ++m) out.push_back(load(member_name(m)).model);
    return out;
  }

 private:
  std::filesystem::path dir_;
};

/// Evaluation pairs (x0, x1): the first `count` held-out samples with their
/// own noise draws.
inline std::vector<std::pair<Vec, Vec>> eval_pairs(const ExperimentConfig& cfg, const TaskData& data, std::size_t count) {
  require(count <= data.test.size(), "not enough held-out samples for the requested evaluation count");
  Rng rng(RngState{cfg.seed, 0}.split(kEvalNoiseStream));
  std::vector<std::pair<Vec, Vec>> out;
  for (std::size_t i = 0; i < count; ++i) out.emplace_back(rng.normal_vec(data.test[i].size()), data.test[i]);
  return out;
}

inline RngState probe_stream(const ExperimentConfig& cfg) { return RngState{cfg.seed, 0}.split(kProbeStream); }

// ---------------------------------------------------------------------------
// Trained models and the protocol method set
// ---------------------------------------------------------------------------

struct ModelSet {
  std::shared_ptr<const MlpVelocity> fm;
  std::shared_ptr<const MlpVelocity> one_step;
  std::shared_ptr<const MlpVelocity> dropout;
  std::vector<std::shared_ptr<const MlpVelocity>> members;
};

/// Loads what the listed methods need; throws "model not found" otherwise.
inline ModelSet load_models(const ModelStore& store, const ExperimentConfig& cfg, const std::vector<std::string>& methods) {
  ModelSet set;
  for (const std::string& m : methods) {
    if (m == "tweedie-fm") set.fm = std::make_shared<const MlpVelocity>(store.load("fm").model);
    else if (m == "tweedie-onestep") set.one_step = std::make_shared<const MlpVelocity>(store.load("one-step").model);
    else if (m == "mc-dropout") set.dropout = std::make_shared<const MlpVelocity>(store.load("dropout").model);
    else if (m == "ensemble")
      for (MlpVelocity& net : store.load_members(cfg.methods.ensemble_members))
        set.members.push_back(std::make_shared<const MlpVelocity>(std::move(net)));
  }
  return set;
}

inline std::vector<VelocityField> member_fields(const ModelSet& set) {
  std::vector<VelocityField> out;
  for (const auto& m : set.members) out.push_back(mlp_handle(m));
  return out;
}

/// Methods that act on (x_t, t). The one-step generator is conditioned on x0
/// only, so it has no place in the corruption and error-correlation protocols.
inline std::vector<UqMethod> protocol_methods(const ExperimentConfig& cfg, const ModelSet& set) {
  std::vector<UqMethod> out;
  for (const std::string& m : cfg.methods.list) {
    if (m == "tweedie-fm") {
      require(set.fm != nullptr, "model not found: fm");
      out.push_back(tweedie_method(mlp_handle(set.fm), cfg.uq.probes));
    } else if (m == "ensemble") {
      require(set.members.size() >= 2, "model not found: ensemble");
      out.push_back(ensemble_method(member_fields(set)));
    } else if (m == "mc-dropout") {
      require(set.dropout != nullptr, "model not found: dropout");
      out.push_back(mc_dropout_method(set.dropout, cfg.methods.dropout_passes));
    }
  }
  require(!out.empty(), "no protocol methods selected");
  return out;
}

inline ProtocolOptions protocol_options(const ExperimentConfig& cfg, double noise_level) {
  ProtocolOptions opt;
  opt.noise_level = noise_level;
  opt.times.clear();
  for (double t : cfg.uq.t_grid) opt.times.push_back(shift_start_time(t));
  opt.hitrate_percent = cfg.uq.hitrate_percent;
  opt.seed = RngState{cfg.seed, 0}.split(kProtocolStream);
  return opt;
}

// ---------------------------------------------------------------------------
// Closed form vs conjugacy oracle
// ---------------------------------------------------------------------------

struct OracleCheck {
  double max_rel_error = 0.0;
  std::size_t points = 0;
};

inline std::vector<double> oracle_times() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

/// Largest relative Frobenius error between the closed-form covariance on
/// the analytic field and the conjugacy posterior, over marginal grids.
inline OracleCheck oracle_check(const GmmSpec& spec, const std::vector<double>& times) {
  const Eigen::Index d = spec.dim();
  const VelocityField field = analytic_handle(spec);
  const ProbeSet probes = d <= 4 ? exhaustive_probes(d) : draw_rademacher(RngState{}, d, default_probe_count(d));
  const int per_axis = d <= 2 ? 9 : (d <= 4 ? 5 : 3);
  OracleCheck out;
  for (double t : times) {
    for (const Vec& xt : marginal_grid(spec, t, per_axis)) {
      const PosteriorEstimate est = cov_closed_form(field, xt, t, probes, true);
      require(est.covariance.has_value(), "oracle check needs d <= " + std::to_string(kMaxMaterializeDim));
      const Mat truth = gmm_posterior(spec, xt, t).covariance;
      const double err = (*est.covariance - truth).norm() / std::max(truth.norm(), 1e-300);
      out.max_rel_error = std::max(out.max_rel_error, err);
      ++out.points;
    }
  }
  return out;
}

struct SuiteCase {
  std::size_t components;
  Eigen::Index dim;
  GmmSpec spec;
};

/// Random mixtures for K in {1, 2, 3} and d in {1, 2, 4}.
inline std::vector<SuiteCase> oracle_suite(std::uint64_t seed) {
  std::vector<SuiteCase> out;
  for (std::size_t k : {1u, 2u, 3u})
    for (Eigen::Index d : {1, 2, 4})
      out.push_back({k, d, random_gmm(k, d, RngState{seed, 10 * k + static_cast<std::uint64_t>(d)})});
  return out;
}

}  // namespace flowvar
