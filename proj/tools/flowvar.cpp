// flowvar command-line tool. Every subcommand is a pure function of the
// config and seed: CSVs and maps are byte-stable, timings go to *.meta.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flowvar/cost.hpp"
#include "flowvar/csv.hpp"
#include "flowvar/experiment.hpp"
#include "flowvar/pgm.hpp"
#include "flowvar/sampler.hpp"

namespace fs = std::filesystem;
using namespace flowvar;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Globals {
  std::string config = "gmm2d";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

struct Context {
  ExperimentConfig cfg;
  fs::path out;

  [[nodiscard]] std::string file(const std::string& name) const { return (out / name).string(); }
  [[nodiscard]] ModelStore store() const { return ModelStore(out); }

  [[nodiscard]] fs::path maps_dir() const {
    const fs::path p = out / "maps";
    fs::create_directories(p);
    return p;
  }
};

Context make_context(const Globals& g) {
  Context ctx{load_config(g.config), {}};
  if (g.seed) ctx.cfg.seed = *g.seed;
  if (g.out) ctx.cfg.out = *g.out;
  ctx.out = ctx.cfg.out;
  fs::create_directories(ctx.out);
  return ctx;
}

std::string t_tag(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", t);
  return buf;
}

std::vector<double> shifted_grid(const std::vector<double>& grid) {
  std::vector<double> out;
  for (double t : grid) {
    const double s = shift_start_time(t);
    require(s > 0.0 && s < 1.0, "t values must lie in [0, 1)");
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

Role parse_role(const std::string& s) {
  if (s == "fm") return Role::fm;
  if (s == "one-step") return Role::one_step;
  if (s == "ensemble") return Role::ensemble;
  if (s == "dropout") return Role::dropout;
  throw ValidationError("unknown training target: " + s);
}

int cmd_train(const Context& ctx, const std::string& target) {
  const Role role = parse_role(target);
  const TaskData data = load_task(ctx.cfg);
  const TrainConfig tcfg = role_train_config(ctx.cfg, role);
  const ModelStore store = ctx.store();

  std::vector<TrainedModel> runs;
  if (role == Role::ensemble) runs = train_members(ctx.cfg, data);
  else runs.push_back(train_role(ctx.cfg, data, role));

  CsvTable table({"member", "epoch", "loss"});
  std::map<std::string, std::string> meta;
  double seconds = 0.0;
  std::uint64_t forward = 0;
  std::string failure;
  for (std::size_t m = 0; m < runs.size(); ++m) {
    const TrainReport& r = runs[m].report;
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
      table.add({role_label(role), std::nullopt, ctx.cfg.seed, std::nullopt},
                {format_number(std::uint64_t{m}), format_number(std::uint64_t{e + 1}), format_number(r.epoch_loss[e])});
    seconds += r.wall_seconds;
    forward += training_forward_equivalents(r, data.train, tcfg);
    const std::string prefix = runs.size() > 1 ? "member" + std::to_string(m) + "." : "";
    meta[prefix + "wall_seconds"] = format_number(r.wall_seconds);
    meta[prefix + "checksum"] = std::to_string(r.checksum);
    if (r.aborted) failure = r.note;
    const FieldKind kind = role == Role::one_step ? FieldKind::mean_velocity : FieldKind::mlp;
    const std::string name = role == Role::ensemble ? ModelStore::member_name(m) : target;
    if (!r.aborted) store.save(name, runs[m].model, kind);
  }
  meta["train_seconds"] = format_number(seconds);
  meta["train_forward_equivalents"] = std::to_string(forward);
  table.write(ctx.file("train_" + target + ".csv"));
  write_meta(ctx.file("train_" + target + ".meta"), meta);
  if (!failure.empty()) throw RuntimeFailure("training aborted: " + failure);
  std::cout << "trained " << target << " (" << runs.size() << " model" << (runs.size() > 1 ? "s" : "") << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// uq
// ---------------------------------------------------------------------------

struct UqRow {
  std::size_t sample = 0;
  double t = 0.0;
  double U = 0.0;
  double U_raw = 0.0;
  double prior = 0.0;
  std::optional<double> error;
  bool floored = false;
  std::uint64_t forward = 0;
  Vec map;
};

void write_uq(const Context& ctx, const std::string& label, std::optional<std::int64_t> probes, std::vector<UqRow>& rows) {
  const int side = ctx.cfg.image_side();
  const MapNormalization norm = ctx.cfg.uq.normalization;
  MapRange global{};
  if (side > 0 && norm == MapNormalization::global && !rows.empty()) {
    global = frame_range(rows.front().map);
    for (const UqRow& r : rows) {
      global.lo = std::min(global.lo, r.map.minCoeff());
      global.hi = std::max(global.hi, r.map.maxCoeff());
    }
  }
  CsvTable table({"sample", "U", "U_raw", "prior", "error", "floored", "forward_equivalents", "map_lo", "map_hi"});
  const fs::path maps = side > 0 ? ctx.maps_dir() : fs::path();
  for (const UqRow& r : rows) {
    std::string lo, hi;
    if (side > 0) {
      const std::string name = label + "_t" + t_tag(r.t) + "_s" + std::to_string(r.sample) + ".pgm";
      const MapRange used = write_uq_map(r.map, side, norm, (maps / name).string(), global);
      lo = format_number(used.lo);
      hi = format_number(used.hi);
    }
    table.add({label, r.t, ctx.cfg.seed, probes},
              {format_number(std::uint64_t{r.sample}), format_number(r.U), format_number(r.U_raw),
               format_number(r.prior), format_number(r.error), r.floored ? "1" : "0", format_number(r.forward), lo, hi});
  }
  table.write(ctx.file("uq_" + label + ".csv"));
}

int cmd_uq(const Context& ctx, const std::string& method, const std::vector<double>& t_override, bool analytic) {
  const ExperimentConfig& cfg = ctx.cfg;
  const std::vector<double> times = shifted_grid(t_override.empty() ? cfg.uq.t_grid : t_override);
  if (analytic) require(method == "tweedie" && cfg.task.kind == TaskKind::gmm, "--analytic needs `uq tweedie` on a gmm task");
  const ModelStore store = ctx.store();
  ModelSet models;
  if (method == "tweedie" && !analytic) models = load_models(store, cfg, {"tweedie-fm"});
  else if (method == "onestep") models = load_models(store, cfg, {"tweedie-onestep"});
  else if (method == "ensemble") models = load_models(store, cfg, {"ensemble"});
  else if (method == "mc-dropout") models = load_models(store, cfg, {"mc-dropout"});
  else if (method != "tweedie") throw ValidationError("unknown uq method: " + method);

  const TaskData data = load_task(cfg);
  const auto pairs = eval_pairs(cfg, data, cfg.uq.samples);
  const Eigen::Index d = cfg.data_dim();
  const RngState probes_root = probe_stream(cfg);
  const auto start = Clock::now();
  std::vector<UqRow> rows;
  std::string label;
  std::optional<std::int64_t> S;

  if (method == "onestep") {
    label = "tweedie-onestep";
    S = cfg.uq.probes;
    const VelocityField field = mlp_handle(models.one_step, FieldKind::mean_velocity);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const std::uint64_t before = field.counter().forward_equivalents();
      const PosteriorEstimate est =
          one_step_cov(field, pairs[i].first, cfg.uq.epsilon, draw_rademacher(probes_root.split(i), d, cfg.uq.probes));
      rows.push_back({i, cfg.uq.epsilon, est.U, est.U_raw, prior_baseline(cfg.uq.epsilon, d), std::nullopt, est.floored,
                      field.counter().forward_equivalents() - before, est.diag});
    }
  } else if (method == "tweedie") {
    label = analytic ? "tweedie-analytic" : "tweedie-fm";
    S = cfg.uq.probes;
    const VelocityField field = analytic ? analytic_handle(cfg.task.gmm) : mlp_handle(models.fm);
    for (std::size_t j = 0; j < times.size(); ++j) {
      const double t = times[j];
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Vec xt = interpolate(pairs[i].first, pairs[i].second, t);
        const std::uint64_t before = field.counter().forward_equivalents();
        const PosteriorEstimate est =
            cov_closed_form(field, xt, t, draw_rademacher(probes_root.split(j).split(i), d, cfg.uq.probes));
        const std::uint64_t used = field.counter().forward_equivalents() - before;
        const Vec pred = posterior_mean_from_velocity(xt, t, field.eval(xt, t));
        rows.push_back({i, t, est.U, est.U_raw, prior_baseline(t, d), (pred - pairs[i].second).squaredNorm(),
                        est.floored, used, est.diag});
      }
    }
  } else {
    label = method;
    const std::vector<VelocityField> members = member_fields(models);
    for (std::size_t j = 0; j < times.size(); ++j) {
      const double t = times[j];
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Vec xt = interpolate(pairs[i].first, pairs[i].second, t);
        const BaselineEstimate est =
            method == "ensemble"
                ? ensemble_uq(members, xt, t)
                : mc_dropout_uq(*models.dropout, xt, t, cfg.methods.dropout_passes, probes_root.split(j).split(i));
        rows.push_back({i, t, est.scalar, est.scalar, prior_baseline(t, d),
                        (est.mean_prediction - pairs[i].second).squaredNorm(), false, est.forward_evaluations,
                        est.variance});
      }
    }
  }
  const double seconds = seconds_since(start);
  write_uq(ctx, label, S, rows);
  write_meta(ctx.file("uq_" + label + ".meta"),
             {{"inference_seconds", format_number(seconds)}, {"points", std::to_string(rows.size())}});
  std::cout << "wrote " << ctx.file("uq_" + label + ".csv") << " (" << rows.size() << " rows)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// oracle-check
// ---------------------------------------------------------------------------

int cmd_oracle(const Context& ctx, bool suite) {
  constexpr double kTolerance = 1e-5;
  CsvTable table({"components", "dim", "max_rel_frobenius", "points"});
  double worst = 0.0;
  std::size_t points = 0;
  auto run = [&](const GmmSpec& spec) {
    for (double t : oracle_times()) {
      const OracleCheck r = oracle_check(spec, {t});
      table.add({"tweedie-analytic", t, ctx.cfg.seed, std::nullopt},
                {format_number(std::uint64_t{spec.components()}), format_number(std::int64_t{spec.dim()}),
                 format_number(r.max_rel_error), format_number(std::uint64_t{r.points})});
      worst = std::max(worst, r.max_rel_error);
      points += r.points;
    }
  };
  if (suite) {
    for (const SuiteCase& c : oracle_suite(ctx.cfg.seed)) run(c.spec);
  } else {
    require(ctx.cfg.task.kind == TaskKind::gmm, "oracle-check needs a gmm task (or --suite)");
    run(ctx.cfg.task.gmm);
  }
  table.write(ctx.file("oracle_check.csv"));
  const bool pass = worst <= kTolerance;
  std::cout << "max relative Frobenius error: " << worst << " over " << points << " points\n"
            << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? 0 : 2;
}

// ---------------------------------------------------------------------------
// traj
// ---------------------------------------------------------------------------

int cmd_traj(const Context& ctx, bool analytic) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (analytic) require(cfg.task.kind == TaskKind::gmm, "--analytic needs a gmm task");
  ModelSet models;
  if (!analytic) models = load_models(ctx.store(), cfg, {"tweedie-fm"});
  const VelocityField field = analytic ? analytic_handle(cfg.task.gmm) : mlp_handle(models.fm);
  const std::string label = analytic ? "tweedie-analytic" : "tweedie-fm";
  const Eigen::Index d = cfg.data_dim();
  const int side = cfg.image_side();
  Rng noise(RngState{cfg.seed, 0}.split(kEvalNoiseStream));
  const RngState probes_root = probe_stream(cfg).split(1);

  CsvTable table({"sample", "step", "U", "U_raw", "prior", "floored", "map_lo", "map_hi"});
  const auto& grid = map_series_times();
  for (std::size_t i = 0; i < cfg.uq.samples; ++i) {
    const Trajectory tr = euler_generate(field, noise.normal_vec(d), cfg.uq.steps, grid);
    std::vector<std::pair<double, Vec>> states;
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
      const double t = tr.times[k];
      if (t >= 1.0) continue;
      if (!states.empty() && shift_start_time(t) <= shift_start_time(states.back().first)) continue;
      states.emplace_back(t, tr.states[k]);
    }
    const UncertaintyMapSeries series = trajectory_uq(field, states, cfg.uq.probes, probes_root.split(i));
    MapRange series_range{};
    if (side > 0) {
      series_range = frame_range(series.points.front().second.diag);
      for (const auto& [t, est] : series.points) {
        series_range.lo = std::min(series_range.lo, est.diag.minCoeff());
        series_range.hi = std::max(series_range.hi, est.diag.maxCoeff());
      }
    }
    std::size_t step = 0;
    for (const auto& [t, est] : series.points) {
      std::string lo, hi;
      if (side > 0) {
        const std::string name = "traj_" + label + "_s" + std::to_string(i) + "_t" + t_tag(t) + ".pgm";
        const MapRange r =
            write_uq_map(est.diag, side, cfg.uq.normalization, (ctx.maps_dir() / name).string(), series_range);
        lo = format_number(r.lo);
        hi = format_number(r.hi);
      }
      table.add({label, t, cfg.seed, cfg.uq.probes},
                {format_number(std::uint64_t{i}), format_number(std::uint64_t{step++}), format_number(est.U),
                 format_number(est.U_raw), format_number(prior_baseline(t, d)), est.floored ? "1" : "0", lo, hi});
    }
  }
  table.write(ctx.file("traj_" + label + ".csv"));
  std::cout << "wrote " << ctx.file("traj_" + label + ".csv") << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// consistency
// ---------------------------------------------------------------------------

int cmd_consistency(const Context& ctx, std::optional<double> noise) {
  const ExperimentConfig& cfg = ctx.cfg;
  const ModelSet models = load_models(ctx.store(), cfg, cfg.methods.list);
  const std::vector<UqMethod> methods = protocol_methods(cfg, models);
  const TaskData data = load_task(cfg);
  const ProtocolOptions opt = protocol_options(cfg, noise.value_or(cfg.uq.noise_level));
  const std::optional<std::int64_t> S = cfg.uq.probes;

  const auto start = Clock::now();
  CsvTable table({"pixel_spearman", "hitrate", "sample_spearman", "samples", "pixel_defined", "noise_level"});
  for (const ConsistencyRow& r : consistency_protocol(data.test, methods, opt)) {
    table.add({r.method, r.t, cfg.seed, r.method == "tweedie-fm" ? S : std::nullopt},
              {format_number(r.pixel_spearman), format_number(r.hitrate), format_number(r.sample_spearman),
               format_number(std::uint64_t{r.samples}), format_number(std::uint64_t{r.pixel_defined}),
               format_number(r.noise_level)});
  }
  table.write(ctx.file("consistency.csv"));

  CsvTable corr({"rho", "samples"});
  for (const CorrelationRow& r : error_correlation(data.test, methods, 0.5, opt.seed.split(99))) {
    corr.add({r.method, r.t, cfg.seed, r.method == "tweedie-fm" ? S : std::nullopt},
             {format_number(r.rho), format_number(std::uint64_t{r.samples})});
  }
  corr.write(ctx.file("correlation.csv"));
  write_meta(ctx.file("consistency.meta"), {{"seconds", format_number(seconds_since(start))}});
  std::cout << "wrote " << ctx.file("consistency.csv") << " and " << ctx.file("correlation.csv") << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// ablate-probes
// ---------------------------------------------------------------------------

int cmd_ablate(const Context& ctx, std::vector<Eigen::Index> sweep, std::optional<double> t_opt, bool analytic) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (sweep.empty()) sweep = cfg.uq.ablation_probes;
  for (Eigen::Index s : sweep) require(s >= 1, "--S values must be >= 1");
  if (analytic) require(cfg.task.kind == TaskKind::gmm, "--analytic needs a gmm task");
  ModelSet models;
  if (!analytic) models = load_models(ctx.store(), cfg, {"tweedie-fm"});
  const VelocityField field = analytic ? analytic_handle(cfg.task.gmm) : mlp_handle(models.fm);
  const std::string label = analytic ? "tweedie-analytic" : "tweedie-fm";
  const double t = shift_start_time(t_opt.value_or(0.5));
  require_open(t);
  const TaskData data = load_task(cfg);
  const auto pairs = eval_pairs(cfg, data, cfg.uq.samples);
  const Eigen::Index d = cfg.data_dim();
  const RngState root = probe_stream(cfg).split(2);

  std::vector<Vec> states;
  for (const auto& [x0, x1] : pairs) states.push_back(interpolate(x0, x1, t));
  CsvTable table({"replicate", "U_mean", "divergence_mean", "map_mean"});
  for (Eigen::Index S : sweep) {
    for (std::size_t r = 0; r < cfg.uq.replicates; ++r) {
      double u = 0.0, div = 0.0, map = 0.0;
      for (std::size_t i = 0; i < states.size(); ++i) {
        const ProbeSet probes = draw_rademacher(root.split(static_cast<std::uint64_t>(S)).split(r).split(i), d, S);
        const PosteriorEstimate est = cov_closed_form(field, states[i], t, probes);
        u += est.U_raw;
        div += est.divergence;
        map += est.diag_raw.mean();
      }
      const double n = static_cast<double>(states.size());
      table.add({label, t, cfg.seed, S},
                {format_number(std::uint64_t{r}), format_number(u / n), format_number(div / n), format_number(map / n)});
    }
  }
  table.write(ctx.file("ablate_probes.csv"));
  std::cout << "wrote " << ctx.file("ablate_probes.csv") << " (" << table.size() << " rows)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// cost
// ---------------------------------------------------------------------------

std::map<std::string, std::string> read_meta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("training record not found: " + path + " (run `train` first)");
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

int cmd_cost(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  const ModelSet models = load_models(ctx.store(), cfg, cfg.methods.list);
  const TaskData data = load_task(cfg);
  const auto pairs = eval_pairs(cfg, data, cfg.uq.samples);
  const Eigen::Index d = cfg.data_dim();
  const double t = 0.5;
  const RngState root = probe_stream(cfg).split(3);
  static const std::map<std::string, std::string> train_file{
      {"tweedie-fm", "fm"}, {"tweedie-onestep", "one-step"}, {"ensemble", "ensemble"}, {"mc-dropout", "dropout"}};

  CostLedger ledger;
  for (const std::string& m : cfg.methods.list) {
    const auto meta = read_meta(ctx.file("train_" + train_file.at(m) + ".meta"));
    ledger.add_training(m, std::stod(meta.at("train_seconds")), std::stoull(meta.at("train_forward_equivalents")));

    std::uint64_t forward = 0;
    const auto start = Clock::now();
    if (m == "tweedie-fm" || m == "tweedie-onestep") {
      const bool one_step = m == "tweedie-onestep";
      const VelocityField field = one_step ? mlp_handle(models.one_step, FieldKind::mean_velocity) : mlp_handle(models.fm);
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const ProbeSet probes = draw_rademacher(root.split(i), d, cfg.uq.probes);
        if (one_step) (void)one_step_cov(field, pairs[i].first, cfg.uq.epsilon, probes);
        else (void)cov_closed_form(field, interpolate(pairs[i].first, pairs[i].second, t), t, probes);
      }
      forward = field.counter().forward_equivalents();
    } else if (m == "ensemble") {
      const std::vector<VelocityField> members = member_fields(models);
      for (const auto& [x0, x1] : pairs) forward += ensemble_uq(members, interpolate(x0, x1, t), t).forward_evaluations;
    } else {
      for (std::size_t i = 0; i < pairs.size(); ++i)
        forward += mc_dropout_uq(*models.dropout, interpolate(pairs[i].first, pairs[i].second, t), t,
                                 cfg.methods.dropout_passes, root.split(i))
                       .forward_evaluations;
    }
    ledger.add_inference(m, seconds_since(start), forward, pairs.size());
  }

  const CostReport rep = cost_report(ledger);
  cost_table(rep, cfg.seed).write(ctx.file("cost.csv"));
  std::map<std::string, std::string> meta;
  for (const MethodCost& c : rep.rows) {
    meta[c.method + ".train_seconds"] = format_number(c.train_seconds);
    meta[c.method + ".inference_seconds"] = format_number(c.inference_seconds);
    meta[c.method + ".total_seconds"] = format_number(c.total_seconds());
  }
  for (const CostRatio& r : rep.ratios) {
    meta["ratio." + r.numerator + "/" + r.denominator + ".seconds"] = format_number(r.seconds_ratio);
    meta["ratio." + r.numerator + "/" + r.denominator + ".forward"] = format_number(r.forward_ratio);
  }
  write_meta(ctx.file("cost.meta"), meta);
  for (const MethodCost& c : rep.rows)
    std::cout << c.method << ": " << c.total_forward_equivalents() << " forward-equivalents, " << c.total_seconds()
              << " s\n";
  return 0;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == tok.size(), "not a number: " + tok);
    out.push_back(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowvar: closed-form posterior uncertainty for flow-matching models"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "config file or preset (gmm1d, gmm2d, gmm4d, toy-bars, toy-blobs)");
  app.add_option("--seed", g.seed, "master seed (overrides the config)");
  app.add_option("--out", g.out, "output directory (overrides the config)");

  std::string train_target;
  auto* train = app.add_subcommand("train", "train a model: fm, one-step, ensemble or dropout");
  train->add_option("target", train_target)->required()->check(CLI::IsMember({"fm", "one-step", "ensemble", "dropout"}));

  std::string uq_method;
  std::string uq_t;
  bool uq_analytic = false;
  auto* uq = app.add_subcommand("uq", "per-sample uncertainty: tweedie, onestep, ensemble or mc-dropout");
  uq->add_option("method", uq_method)->required()->check(CLI::IsMember({"tweedie", "onestep", "ensemble", "mc-dropout"}));
  uq->add_option("--t", uq_t, "comma-separated flow times (default: config grid)");
  uq->add_flag("--analytic", uq_analytic, "use the exact mixture velocity instead of the trained model");

  bool suite = false;
  auto* oracle = app.add_subcommand("oracle-check", "closed form vs conjugacy posterior on mixtures");
  oracle->add_flag("--suite", suite, "random mixtures with K in {1,2,3}, d in {1,2,4}");

  bool traj_analytic = false;
  auto* traj = app.add_subcommand("traj", "uncertainty along Euler trajectories");
  traj->add_flag("--analytic", traj_analytic, "use the exact mixture velocity");

  std::optional<double> noise;
  auto* consistency = app.add_subcommand("consistency", "corruption protocol and error correlation");
  consistency->add_option("--noise", noise, "corruption level in [0, 1]");

  std::string ablate_s;
  std::optional<double> ablate_t;
  bool ablate_analytic = false;
  auto* ablate = app.add_subcommand("ablate-probes", "probe-count sweep");
  ablate->add_option("--S", ablate_s, "comma-separated probe counts");
  ablate->add_option("--t", ablate_t, "flow time (default 0.5)");
  ablate->add_flag("--analytic", ablate_analytic, "use the exact mixture velocity");

  auto* cost = app.add_subcommand("cost", "training and inference cost per method");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    const Context ctx = make_context(g);
    if (*train) return cmd_train(ctx, train_target);
    if (*uq) return cmd_uq(ctx, uq_method, parse_doubles(uq_t), uq_analytic);
    if (*oracle) return cmd_oracle(ctx, suite);
    if (*traj) return cmd_traj(ctx, traj_analytic);
    if (*consistency) return cmd_consistency(ctx, noise);
    if (*ablate) {
      std::vector<Eigen::Index> sweep;
      for (double s : parse_doubles(ablate_s)) {
        require(s >= 1 && s == std::floor(s), "--S values must be positive integers");
        sweep.push_back(static_cast<Eigen::Index>(s));
      }
      return cmd_ablate(ctx, sweep, ablate_t, ablate_analytic);
    }
    if (*cost) return cmd_cost(ctx);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
