#pragma once

// Experiment configuration: a sectioned key = value file (';' comments).
// Unknown sections or keys are rejected. A handful of named presets are
// built in; --config accepts either a path or a preset name.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowvar/interpolant.hpp"
#include "flowvar/mlp.hpp"
#include "flowvar/pgm.hpp"
#include "flowvar/toy_images.hpp"
#include "flowvar/training.hpp"
#include "flowvar/tweedie.hpp"

namespace flowvar {

enum class TaskKind { gmm, toy_image, mnist };

struct TaskConfig {
  TaskKind kind = TaskKind::gmm;
  GmmSpec gmm = default_gmm();
  ToyKind toy = ToyKind::bars;
  int side = 8;
  std::size_t train_count = 4096;  // fixed pool size for image tasks
  std::string mnist_path;          // images IDX file
  std::size_t subsample = 2048;
  int pool_side = 8;
  std::size_t test_count = 64;  // held-out samples for protocols
};

struct ModelConfig {
  std::vector<Eigen::Index> hidden{128, 128};
  std::size_t frequencies = 8;
  Activation activation = Activation::tanh;
};

struct UqConfig {
  std::vector<double> t_grid{0.3, 0.5, 0.7, 0.9};
  Eigen::Index probes = 50;
  double epsilon = kOneStepEpsilon;
  std::size_t steps = 100;
  std::size_t samples = 16;  // evaluation states per t
  MapNormalization normalization = MapNormalization::per_frame;
  double noise_level = 0.5;
  double hitrate_percent = 30.0;
  std::vector<Eigen::Index> ablation_probes{4, 16, 64, 256};
  std::size_t replicates = 8;
};

struct MethodsConfig {
  std::vector<std::string> list{"tweedie-fm", "tweedie-onestep", "ensemble", "mc-dropout"};
  std::size_t ensemble_members = 5;
  std::size_t dropout_passes = 50;
  double dropout_rate = 0.15;

  [[nodiscard]] bool has(const std::string& m) const {
    return std::find(list.begin(), list.end(), m) != list.end();
  }
};

struct ExperimentConfig {
  std::string name = "custom";
  std::uint64_t seed = 0;
  std::string out = "flowvar-out";
  TaskConfig task;
  ModelConfig model;
  TrainConfig train;
  UqConfig uq;
  MethodsConfig methods;

  [[nodiscard]] Eigen::Index data_dim() const {
    switch (task.kind) {
      case TaskKind::gmm: return task.gmm.dim();
      case TaskKind::toy_image: return static_cast<Eigen::Index>(task.side) * task.side;
      case TaskKind::mnist: return static_cast<Eigen::Index>(task.pool_side) * task.pool_side;
    }
    return 0;
  }

  /// Side of the square image a state reshapes into, or 0 when it is not an image.
  [[nodiscard]] int image_side() const {
    switch (task.kind) {
      case TaskKind::gmm: return 0;
      case TaskKind::toy_image: return task.side;
      case TaskKind::mnist: return task.pool_side;
    }
    return 0;
  }

  [[nodiscard]] MlpVelocity prototype(double dropout_rate = 0.0) const {
    return MlpVelocity(data_dim(), model.hidden, TimeEmbedding::geometric(model.frequencies), model.activation,
                       dropout_rate);
  }

  /// Training config for a named role; seeds are distinct per role.
  [[nodiscard]] TrainConfig train_config(Objective objective, std::uint64_t role) const {
    TrainConfig cfg = train;
    cfg.objective = objective;
    cfg.seed = RngState{seed, 0}.split(1000 + role);
    return cfg;
  }

  void validate() const {
    task.gmm.validate();
    if (task.kind != TaskKind::gmm) require(task.side >= 4 && task.side <= 32, "config [task] side must lie in [4, 32]");
    if (task.kind == TaskKind::mnist) {
      require(!task.mnist_path.empty(), "config [task] path is required for mnist");
      require(std::filesystem::exists(task.mnist_path), "config [task] path does not exist: " + task.mnist_path);
      require(task.pool_side >= 1 && task.pool_side <= 28, "config [task] pool_side must lie in [1, 28]");
      require(task.subsample >= 2, "config [task] subsample must be >= 2");
    }
    require(task.test_count >= 8, "config [task] test_count must be >= 8");
    require(!model.hidden.empty(), "config [model] hidden must list at least one width");
    require(model.frequencies >= 1, "config [model] frequencies must be >= 1");
    train.validate();
    require(train.learning_rate > 0.0, "config [train] learning_rate must be > 0");
    for (double t : uq.t_grid) {
      const double shifted = t == 0.0 ? 1e-3 : t;
      require(shifted > 0.0 && shifted < 1.0, "config [uq] t_grid values must lie in [0, 1)");
    }
    require(uq.probes >= 1, "config [uq] probes must be >= 1");
    require(uq.epsilon > 0.0 && uq.epsilon <= 0.1, "config [uq] epsilon must lie in (0, 0.1]");
    require(uq.steps >= 1 && uq.samples >= 1, "config [uq] steps and samples must be >= 1");
    require(uq.noise_level >= 0.0 && uq.noise_level <= 1.0, "config [uq] noise_level must lie in [0, 1]");
    require(uq.replicates >= 1, "config [uq] replicates must be >= 1");
    for (Eigen::Index s : uq.ablation_probes) require(s >= 1, "config [uq] ablation_probes must be >= 1");
    static const std::set<std::string> known{"tweedie-fm", "tweedie-onestep", "ensemble", "mc-dropout"};
    for (const std::string& m : methods.list) require(known.count(m) == 1, "config [methods] unknown method: " + m);
    require(methods.ensemble_members >= 2, "config [methods] ensemble_members must be >= 2");
    require(methods.dropout_passes >= 2, "config [methods] dropout_passes must be >= 2");
    require(methods.dropout_rate > 0.0 && methods.dropout_rate < 1.0, "config [methods] dropout_rate must lie in (0, 1)");
  }
};

namespace detail {

using boost::property_tree::ptree;

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema{
      {"experiment", {"name", "seed", "out"}},
      {"task",
       {"kind", "weights", "means", "variances", "covariances", "generator", "components", "dim", "spec_seed",
        "image_kind", "side", "train_count", "path", "subsample", "pool_side", "test_count"}},
      {"model", {"hidden", "frequencies", "activation"}},
      {"train", {"epochs", "batch_size", "learning_rate", "schedule", "weight_decay", "dataset_size", "parallel"}},
      {"uq",
       {"t_grid", "probes", "epsilon", "steps", "samples", "normalization", "noise_level", "hitrate_percent",
        "ablation_probes", "replicates"}},
      {"methods", {"list", "ensemble_members", "dropout_passes", "dropout_rate"}},
  };
  return schema;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

class Section {
 public:
  Section(std::string name, const ptree* node) : name_(std::move(name)), node_(node) {}

  [[nodiscard]] bool has(const std::string& key) const { return node_ && node_->find(key) != node_->not_found(); }

  [[nodiscard]] std::string str(const std::string& key) const { return trim(node_->get<std::string>(key)); }

  [[nodiscard]] double number(const std::string& key) const { return parse_double(str(key), key); }

  [[nodiscard]] std::uint64_t count(const std::string& key) const {
    const std::string v = str(key);
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) fail(key, "expected a non-negative integer", v);
    return out;
  }

  [[nodiscard]] bool boolean(const std::string& key) const {
    const std::string v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(key, "expected true or false", v);
  }

  /// Whitespace- or comma-separated numbers.
  [[nodiscard]] std::vector<double> numbers(const std::string& key) const { return parse_list(str(key), key); }

  /// '|'-separated groups of numbers.
  [[nodiscard]] std::vector<std::vector<double>> groups(const std::string& key) const {
    std::vector<std::vector<double>> out;
    for (const std::string& g : split(str(key), '|')) out.push_back(parse_list(g, key));
    return out;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what, const std::string& value) const {
    throw ValidationError("config [" + name_ + "] " + key + ": " + what + ", got '" + value + "'");
  }

 private:
  [[nodiscard]] double parse_double(const std::string& v, const std::string& key) const {
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || !std::isfinite(out)) fail(key, "expected a number", v);
    return out;
  }

  [[nodiscard]] std::vector<double> parse_list(const std::string& s, const std::string& key) const {
    std::string flat = s;
    std::replace(flat.begin(), flat.end(), ',', ' ');
    std::vector<double> out;
    for (const std::string& tok : split(flat, ' ')) out.push_back(parse_double(tok, key));
    if (out.empty()) fail(key, "expected at least one number", s);
    return out;
  }

  std::string name_;
  const ptree* node_;
};

inline GmmSpec parse_gmm(const Section& s) {
  const std::string generator = s.has("generator") ? s.str("generator") : "explicit";
  if (generator == "random") {
    const auto k = static_cast<std::size_t>(s.count("components"));
    const auto d = static_cast<Eigen::Index>(s.count("dim"));
    require(k >= 1 && d >= 1, "config [task] components and dim must be >= 1");
    return random_gmm(k, d, RngState{s.has("spec_seed") ? s.count("spec_seed") : 0, 0});
  }
  if (generator == "default") return default_gmm();
  if (generator != "explicit") s.fail("generator", "expected explicit, random or default", generator);

  const std::vector<double> w = s.numbers("weights");
  const auto means = s.groups("means");
  require(means.size() == w.size(), "config [task] means must have one group per weight");
  GmmSpec spec;
  spec.weights = Eigen::Map<const Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
  for (const auto& m : means) spec.means.push_back(Eigen::Map<const Vec>(m.data(), static_cast<Eigen::Index>(m.size())));
  const Eigen::Index d = spec.means.front().size();
  if (s.has("covariances")) {
    const auto covs = s.groups("covariances");
    require(covs.size() == w.size(), "config [task] covariances must have one group per weight");
    for (const auto& c : covs) {
      require(static_cast<Eigen::Index>(c.size()) == d * d, "config [task] covariance must have dim^2 entries");
      spec.covariances.push_back(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(c.data(), d, d));
    }
  } else {
    const std::vector<double> vars = s.numbers("variances");
    require(vars.size() == w.size(), "config [task] variances must have one entry per weight");
    for (double v : vars) spec.covariances.push_back(v * Mat::Identity(d, d));
  }
  spec.validate();
  return spec;
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  using detail::ptree;
  ptree root;
  try {
    std::istringstream is(text);
    boost::property_tree::ini_parser::read_ini(is, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError(std::string("config parse error: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  const auto& schema = detail::config_schema();
  for (const auto& [section, node] : root) {
    const auto it = schema.find(section);
    if (it == schema.end()) {
      if (node.empty()) throw ValidationError("config: key outside any section: " + section);
      throw ValidationError("config: unknown section [" + section + "]");
    }
    for (const auto& kv : node)
      if (it->second.count(kv.first) == 0) throw ValidationError("config [" + section + "]: unknown key " + kv.first);
  }
  auto section = [&](const std::string& name) {
    const auto it = root.find(name);
    return detail::Section(name, it == root.not_found() ? nullptr : &it->second);
  };

  ExperimentConfig cfg;
  if (const auto s = section("experiment"); true) {
    if (s.has("name")) cfg.name = s.str("name");
    if (s.has("seed")) cfg.seed = s.count("seed");
    if (s.has("out")) cfg.out = s.str("out");
  }
  if (const auto s = section("task"); true) {
    const std::string kind = s.has("kind") ? s.str("kind") : "gmm";
    if (kind == "gmm") {
      cfg.task.kind = TaskKind::gmm;
      if (s.has("weights") || s.has("generator")) cfg.task.gmm = detail::parse_gmm(s);
    } else if (kind == "toy-image") {
      cfg.task.kind = TaskKind::toy_image;
      if (s.has("image_kind")) cfg.task.toy = parse_toy_kind(s.str("image_kind"));
    } else if (kind == "mnist") {
      cfg.task.kind = TaskKind::mnist;
    } else {
      s.fail("kind", "expected gmm, toy-image or mnist", kind);
    }
    if (s.has("side")) cfg.task.side = static_cast<int>(s.count("side"));
    if (s.has("train_count")) cfg.task.train_count = s.count("train_count");
    if (s.has("path")) cfg.task.mnist_path = s.str("path");
    if (s.has("subsample")) cfg.task.subsample = s.count("subsample");
    if (s.has("pool_side")) cfg.task.pool_side = static_cast<int>(s.count("pool_side"));
    if (s.has("test_count")) cfg.task.test_count = s.count("test_count");
  }
  if (const auto s = section("model"); true) {
    if (s.has("hidden")) {
      cfg.model.hidden.clear();
      for (double h : s.numbers("hidden")) {
        if (h < 1 || h != std::floor(h)) s.fail("hidden", "expected positive integers", s.str("hidden"));
        cfg.model.hidden.push_back(static_cast<Eigen::Index>(h));
      }
    }
    if (s.has("frequencies")) cfg.model.frequencies = s.count("frequencies");
    if (s.has("activation")) {
      const std::string a = s.str("activation");
      if (a == "tanh") cfg.model.activation = Activation::tanh;
      else if (a == "relu") cfg.model.activation = Activation::relu;
      else s.fail("activation", "expected tanh or relu", a);
    }
  }
  if (const auto s = section("train"); true) {
    if (s.has("epochs")) cfg.train.epochs = s.count("epochs");
    if (s.has("batch_size")) cfg.train.batch_size = s.count("batch_size");
    if (s.has("learning_rate")) cfg.train.learning_rate = s.number("learning_rate");
    if (s.has("schedule")) {
      const std::string v = s.str("schedule");
      if (v == "cosine") cfg.train.schedule = LrSchedule::cosine;
      else if (v == "constant") cfg.train.schedule = LrSchedule::constant;
      else s.fail("schedule", "expected cosine or constant", v);
    }
    if (s.has("weight_decay")) cfg.train.weight_decay = s.number("weight_decay");
    if (s.has("dataset_size")) cfg.train.dataset_size = s.count("dataset_size");
    if (s.has("parallel")) cfg.train.parallel = s.boolean("parallel");
  }
  if (const auto s = section("uq"); true) {
    if (s.has("t_grid")) cfg.uq.t_grid = s.numbers("t_grid");
    if (s.has("probes")) cfg.uq.probes = static_cast<Eigen::Index>(s.count("probes"));
    if (s.has("epsilon")) cfg.uq.epsilon = s.number("epsilon");
    if (s.has("steps")) cfg.uq.steps = s.count("steps");
    if (s.has("samples")) cfg.uq.samples = s.count("samples");
    if (s.has("normalization")) cfg.uq.normalization = parse_normalization(s.str("normalization"));
    if (s.has("noise_level")) cfg.uq.noise_level = s.number("noise_level");
    if (s.has("hitrate_percent")) cfg.uq.hitrate_percent = s.number("hitrate_percent");
    if (s.has("ablation_probes")) {
      cfg.uq.ablation_probes.clear();
      for (double v : s.numbers("ablation_probes")) cfg.uq.ablation_probes.push_back(static_cast<Eigen::Index>(v));
    }
    if (s.has("replicates")) cfg.uq.replicates = s.count("replicates");
  }
  if (const auto s = section("methods"); true) {
    if (s.has("list")) cfg.methods.list = detail::split(s.str("list"), ',');
    if (s.has("ensemble_members")) cfg.methods.ensemble_members = s.count("ensemble_members");
    if (s.has("dropout_passes")) cfg.methods.dropout_passes = s.count("dropout_passes");
    if (s.has("dropout_rate")) cfg.methods.dropout_rate = s.number("dropout_rate");
  }
  cfg.validate();
  return cfg;
}

/// Built-in presets as config text.
inline const std::map<std::string, std::string>& config_presets() {
  static const std::map<std::string, std::string> presets{
      {"gmm1d", R"([experiment]
name = gmm1d
seed = 1
[task]
kind = gmm
weights = 0.4 0.6
means = -1.5 | 1.5
variances = 0.1 0.1
[model]
hidden = 64, 64
[train]
epochs = 30
batch_size = 128
learning_rate = 3e-3
dataset_size = 8192
)"},
      {"gmm2d", R"([experiment]
name = gmm2d
seed = 2
[task]
kind = gmm
generator = default
[model]
hidden = 64, 64
[train]
epochs = 30
batch_size = 128
learning_rate = 3e-3
dataset_size = 8192
)"},
      {"gmm4d", R"([experiment]
name = gmm4d
seed = 4
[task]
kind = gmm
generator = random
components = 3
dim = 4
spec_seed = 4
[model]
hidden = 64, 64
[train]
epochs = 30
batch_size = 128
learning_rate = 3e-3
dataset_size = 8192
)"},
      {"toy-bars", R"([experiment]
name = toy-bars
seed = 8
[task]
kind = toy-image
image_kind = bars
side = 8
train_count = 4096
[model]
hidden = 128, 128
[train]
epochs = 30
batch_size = 128
learning_rate = 2e-3
[uq]
samples = 8
)"},
      {"toy-blobs", R"([experiment]
name = toy-blobs
seed = 9
[task]
kind = toy-image
image_kind = blobs
side = 8
train_count = 4096
[model]
hidden = 128, 128
[train]
epochs = 30
batch_size = 128
learning_rate = 2e-3
[uq]
samples = 8
)"},
  };
  return presets;
}

/// A readable file path, or else a preset name.
inline ExperimentConfig load_config(const std::string& path_or_preset) {
  if (std::filesystem::is_regular_file(path_or_preset)) {
    std::ifstream in(path_or_preset);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
  }
  const auto& presets = config_presets();
  if (const auto it = presets.find(path_or_preset); it != presets.end()) return parse_config(it->second);
  throw ValidationError("config not found: " + path_or_preset);
}

}  // namespace flowvar
