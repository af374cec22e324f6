// Acceptance runner: one PASS/FAIL line per criterion, exit 0 only when all
// pass. Thresholds and runtime limits are fixed here; configs and seeds are
// fixed up front (no reruns with other seeds).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flowvar/experiment.hpp"
#include "flowvar/sampler.hpp"
#include "support/cli_run.hpp"
#include "support/oracles.hpp"

using namespace flowvar;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_seconds;
  std::function<Outcome()> run;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double rel_err(const Vec& a, const Vec& b) { return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12}); }

// ---------------------------------------------------------------------------
// Shared trained models (trained once, on first use)
// ---------------------------------------------------------------------------

struct GmmRun {
  ExperimentConfig cfg;
  TaskData data;
  TrainedModel fm;
  double seconds = 0.0;
};

struct ToyRun {
  ExperimentConfig cfg;
  TaskData data;
  ModelSet models;
  double fm_seconds = 0.0;
  double seconds = 0.0;
};

GmmRun& gmm_run() {
  static std::optional<GmmRun> run;
  if (!run) {
    const auto start = Clock::now();
    ExperimentConfig cfg = load_config("gmm2d");
    TaskData data = load_task(cfg);
    TrainedModel fm = train_role(cfg, data, Role::fm);
    run = GmmRun{cfg, std::move(data), std::move(fm), 0.0};
    run->seconds = std::chrono::duration<double>(Clock::now() - start).count();
  }
  return *run;
}

ToyRun& toy_run(bool with_baselines) {
  static std::optional<ToyRun> run;
  static bool baselines = false;
  if (!run) {
    const auto start = Clock::now();
    ExperimentConfig cfg = load_config("toy-bars");
    TaskData data = load_task(cfg);
    ModelSet models;
    models.fm = std::make_shared<const MlpVelocity>(train_role(cfg, data, Role::fm).model);
    run = ToyRun{cfg, std::move(data), std::move(models), 0.0, 0.0};
    run->fm_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    run->seconds = run->fm_seconds;
  }
  if (with_baselines && !baselines) {
    const auto start = Clock::now();
    run->models.dropout = std::make_shared<const MlpVelocity>(train_role(run->cfg, run->data, Role::dropout).model);
    for (TrainedModel& m : train_members(run->cfg, run->data))
      run->models.members.push_back(std::make_shared<const MlpVelocity>(std::move(m.model)));
    run->seconds += std::chrono::duration<double>(Clock::now() - start).count();
    baselines = true;
  }
  return *run;
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

Outcome oracle_equivalence() {
  double worst = 0.0;
  std::size_t points = 0;
  for (const SuiteCase& c : oracle_suite(1)) {
    const OracleCheck r = oracle_check(c.spec, oracle_times());
    worst = std::max(worst, r.max_rel_error);
    points += r.points;
  }
  return {worst <= 1e-5, "max rel Frobenius " + fmt(worst) + " over " + std::to_string(points) + " points (<= 1e-5)"};
}

Outcome monte_carlo_cross_check() {
  Rng pick(RngState{2, 0});
  double worst_z = 0.0;
  bool ok = true;
  for (std::uint64_t i = 0; i < 12; ++i) {
    const std::size_t k = 1 + pick.below(3);
    const Eigen::Index d = std::array<Eigen::Index, 3>{1, 2, 4}[pick.below(3)];
    const GmmSpec spec = random_gmm(k, d, RngState{2, 100 + i});
    const double t = 0.1 + 0.8 * pick.uniform();
    const auto [x0, x1] = sample_pair(spec, RngState{2, 200 + i});
    const Vec xt = interpolate(x0, x1, t);
    const Mat truth = gmm_posterior(spec, xt, t).covariance;
    const Mat closed = *cov_closed_form(analytic_handle(spec), xt, t, exhaustive_probes(d), true).covariance;
    const oracle::SnisResult mc = oracle::snis_posterior(spec, xt, t, 100000, RngState{2, 300 + i});
    for (Eigen::Index a = 0; a < d; ++a) {
      for (Eigen::Index b = 0; b < d; ++b) {
        const double se = mc.cov_se(a, b);
        for (const double ref : {truth(a, b), closed(a, b)}) {
          const double z = std::abs(mc.cov(a, b) - ref) / std::max(se, 1e-300);
          worst_z = std::max(worst_z, z);
          if (std::abs(mc.cov(a, b) - ref) > 4.0 * se) ok = false;
        }
      }
    }
  }
  return {ok, "12 tuples, 1e5 draws; worst deviation " + fmt(worst_z) + " SE (<= 4)"};
}

Outcome isotropic_closed_forms() {
  const GmmSpec spec = standard_gaussian(3);
  const VelocityField f = analytic_handle(spec);
  double worst = 0.0;
  std::string values;
  for (double t : {0.25, 0.5, 0.75}) {
    const double want = (1 - t) * (1 - t) / (t * t + (1 - t) * (1 - t));
    for (const Vec& xt : marginal_grid(spec, t, 3)) {
      const Mat cov = *cov_closed_form(f, xt, t, exhaustive_probes(3), true).covariance;
      worst = std::max(worst, (cov - want * Mat::Identity(3, 3)).cwiseAbs().maxCoeff());
      worst = std::max(worst, (gmm_posterior(spec, xt, t).covariance - want * Mat::Identity(3, 3)).cwiseAbs().maxCoeff());
    }
    values += (values.empty() ? "" : "/") + fmt(want);
  }
  return {worst <= 1e-8, "t=0.25/0.5/0.75 -> " + values + "; max abs error " + fmt(worst) + " (<= 1e-8)"};
}

Outcome small_epsilon_limit() {
  const GmmSpec spec = default_gmm();
  const Mat marginal = spec.marginal_covariance();
  const VelocityField f = analytic_handle(spec);
  double worst = 0.0;
  Rng rng(RngState{4, 0});
  for (int i = 0; i < 8; ++i) {
    const Vec x0 = rng.normal_vec(2);
    const PosteriorEstimate est = one_step_cov(f, x0, 1e-6, exhaustive_probes(2), true);
    worst = std::max(worst, oracle::rel_frobenius(*est.covariance, marginal));
  }
  return {worst <= 1e-3, "eps=1e-6 vs marginal covariance at 8 inputs: max rel error " + fmt(worst) + " (<= 1e-3)"};
}

MlpVelocity random_model(std::uint64_t seed, Eigen::Index d, double dropout) {
  Rng rng(RngState{seed, 99});
  const Eigen::Index h1 = 4 + static_cast<Eigen::Index>(rng.below(12));
  const Eigen::Index h2 = 4 + static_cast<Eigen::Index>(rng.below(12));
  MlpVelocity m(d, {h1, h2}, TimeEmbedding::geometric(3), Activation::tanh, dropout);
  m.initialize(RngState{seed, 0});
  Vec p = m.parameters();
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += 0.1 * rng.normal();
  m.set_parameters(p);
  return m;
}

Outcome jvp_and_gradients() {
  Rng rng(RngState{5, 0});
  double worst_jvp = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(k % 4);
    const MlpVelocity m = random_model(500 + k, d, k % 3 == 0 ? 0.2 : 0.0);
    const Vec x = rng.normal_vec(d), u = rng.normal_vec(d);
    const double t = 0.05 + 0.9 * rng.uniform();
    const DropoutMode mode = k % 3 == 0 ? DropoutMode::sampled(RngState{k, 5}) : DropoutMode::off();
    const Vec fd = finite_diff_jvp([&](const Vec& y) { return m.eval(y, t, mode); }, x, u, 1e-4);
    worst_jvp = std::max(worst_jvp, rel_err(m.jvp(x, t, u, mode), fd));
  }
  double worst_grad = 0.0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(k % 3);
    const bool dropout = k % 4 == 1;
    MlpVelocity m = random_model(700 + k, d, dropout ? 0.25 : 0.0);
    const Eigen::Index b = 5;
    Mat xs(d, b), ys(d, b);
    Vec ts(b);
    std::vector<RngState> seeds;
    for (Eigen::Index i = 0; i < b; ++i) {
      xs.col(i) = rng.normal_vec(d);
      ys.col(i) = rng.normal_vec(d);
      ts[i] = rng.uniform();
      if (dropout) seeds.push_back(RngState{k, static_cast<std::uint64_t>(i)});
    }
    Vec grad = Vec::Zero(m.parameter_count());
    m.accumulate_sse_gradient(xs, ts, ys, seeds, grad);
    const Vec p0 = m.parameters();
    Vec fd(p0.size()), scratch(p0.size());
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < p0.size(); ++j) {
      Vec p = p0;
      p[j] += h;
      m.set_parameters(p);
      scratch.setZero();
      const double up = m.accumulate_sse_gradient(xs, ts, ys, seeds, scratch);
      p[j] -= 2 * h;
      m.set_parameters(p);
      scratch.setZero();
      fd[j] = (up - m.accumulate_sse_gradient(xs, ts, ys, seeds, scratch)) / (2 * h);
    }
    m.set_parameters(p0);
    worst_grad = std::max(worst_grad, rel_err(grad, fd));
  }
  return {worst_jvp <= 1e-4 && worst_grad <= 1e-5,
          "JVP max rel error " + fmt(worst_jvp) + " (<= 1e-4, 100 tuples); gradient " + fmt(worst_grad) +
              " (<= 1e-5, 20 tuples)"};
}

Outcome hutchinson_statistics() {
  ToyRun& run = toy_run(false);
  const VelocityField f = mlp_handle(run.models.fm);
  const Eigen::Index d = f.dim();
  const auto pairs = eval_pairs(run.cfg, run.data, 16);
  const double t = 0.5;
  const Vec xt = interpolate(pairs[0].first, pairs[0].second, t);
  const double exact = f.jacobian(xt, t).trace();
  auto trace_est = [&](Eigen::Index S, std::uint64_t r) {
    return hutchinson_trace([&](const Vec& e) { return f.jvp(xt, t, e); }, draw_rademacher(RngState{6, S * 100000 + r}, d, S));
  };

  // Unbiasedness: 400 replicates at S = 4.
  const int reps = 400;
  double mean = 0.0, m2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    const double e = trace_est(4, static_cast<std::uint64_t>(r));
    mean += e;
    m2 += e * e;
  }
  mean /= reps;
  const double se = std::sqrt((m2 / reps - mean * mean) * reps / (reps - 1) / reps);
  const bool unbiased = std::abs(mean - exact) <= 4.0 * se;

  // RMS error vs S.
  std::vector<double> logs, loge;
  for (Eigen::Index S : {4, 16, 64, 256}) {
    double acc = 0.0;
    const int n = 200;
    for (int r = 0; r < n; ++r) {
      const double e = trace_est(S, 50000 + static_cast<std::uint64_t>(r));
      acc += (e - exact) * (e - exact);
    }
    logs.push_back(std::log(static_cast<double>(S)));
    loge.push_back(0.5 * std::log(acc / n));
  }
  const double slope = oracle::fitted_slope(logs, loge);

  // S = 64 vs S = 1024 on held-out states.
  double u64 = 0.0, u1024 = 0.0, map_diff = 0.0, map_norm = 0.0;
  const RngState probes = RngState{6, 1};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Vec x = interpolate(pairs[i].first, pairs[i].second, t);
    const PosteriorEstimate a = cov_closed_form(f, x, t, draw_rademacher(probes.split(i).split(64), d, 64));
    const PosteriorEstimate b = cov_closed_form(f, x, t, draw_rademacher(probes.split(i).split(1024), d, 1024));
    u64 += a.U_raw;
    u1024 += b.U_raw;
    map_diff += (a.diag_raw - b.diag_raw).squaredNorm();
    map_norm += b.diag_raw.squaredNorm();
  }
  const double u_rel = std::abs(u64 - u1024) / std::abs(u1024);
  const double map_rel = std::sqrt(map_diff / map_norm);
  const bool pass = unbiased && std::abs(slope + 0.5) <= 0.1 && u_rel <= 0.02;
  return {pass, "bias " + fmt(std::abs(mean - exact) / se) + " SE (<= 4); slope " + fmt(slope) +
                    " (-0.5 +- 0.1); U(S=64) vs U(S=1024) " + fmt(100 * u_rel) + "% (<= 2%); map L2 " +
                    fmt(100 * map_rel) + "% (reported)"};
}

Outcome contractivity() {
  GmmRun& run = gmm_run();
  const VelocityField f = mlp_handle(run.fm.model);
  const Eigen::Index d = f.dim();
  const auto pairs = eval_pairs(run.cfg, run.data, 64);
  bool ok = true;
  std::string detail;
  for (double t : {0.3, 0.5, 0.7, 0.9}) {
    double u = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const Vec xt = interpolate(pairs[i].first, pairs[i].second, t);
      u += cov_closed_form(f, xt, t, draw_rademacher(probe_stream(run.cfg).split(i), d, run.cfg.uq.probes)).U;
    }
    u /= static_cast<double>(pairs.size());
    const double prior = prior_baseline(t, d);
    ok = ok && u < prior;
    detail += (detail.empty() ? "" : "; ") + ("t=" + fmt(t) + " U=" + fmt(u) + " prior=" + fmt(prior) + " gap x" + fmt(prior / u, 3));
  }
  return {ok, detail};
}

Outcome error_correlation_gmm() {
  GmmRun& run = gmm_run();
  const std::vector<UqMethod> methods{tweedie_method(mlp_handle(run.fm.model), run.cfg.uq.probes)};
  const std::vector<Vec> clean(run.data.test.begin(), run.data.test.begin() + 64);
  const auto rows = error_correlation(clean, methods, 0.5, RngState{run.cfg.seed, 0}.split(kProtocolStream));
  const double rho = rows.front().rho.value_or(0.0);
  return {rows.front().rho.has_value() && rho > 0.2, "Spearman(U, error) at t=0.5 over 64 samples = " + fmt(rho) + " (> 0.2)"};
}

Outcome consistency_toy() {
  ToyRun& run = toy_run(true);
  const std::vector<UqMethod> methods = protocol_methods(run.cfg, run.models);
  ProtocolOptions opt = protocol_options(run.cfg, 0.5);
  opt.times = {0.3, 0.5, 0.7, 0.9};
  const auto rows = consistency_protocol(run.data.test, methods, opt);
  auto sample_at = [&](const std::string& m, double t) {
    for (const ConsistencyRow& r : rows)
      if (r.method == m && r.t == t) return r.sample_spearman.value_or(0.0);
    return 0.0;
  };
  bool pixel_ok = true;
  std::string pixel;
  for (const ConsistencyRow& r : rows) {
    if (r.method != "tweedie-fm") continue;
    pixel_ok = pixel_ok && r.pixel_spearman.has_value() && *r.pixel_spearman > 0.0;
    pixel += (pixel.empty() ? "" : "/") + fmt(r.pixel_spearman.value_or(NAN), 3);
  }
  const double tweedie_drop = sample_at("tweedie-fm", 0.3) - sample_at("tweedie-fm", 0.9);
  bool baseline_collapse = false;
  std::string drops;
  for (const UqMethod& m : methods) {
    const double drop = sample_at(m.label, 0.3) - sample_at(m.label, 0.9);
    drops += " " + m.label + " " + fmt(sample_at(m.label, 0.3), 3) + "->" + fmt(sample_at(m.label, 0.9), 3);
    if (m.label != "tweedie-fm" && drop > 0.1) baseline_collapse = true;
  }
  const bool ok = pixel_ok && tweedie_drop <= 0.1 && baseline_collapse;
  return {ok, std::string("(a) pixel rho ") + pixel + (pixel_ok ? " all > 0" : " NOT all > 0") +
                  "; (b) sample rho t=0.3->0.9:" + drops + "; tweedie drop " + fmt(tweedie_drop, 3) +
                  (tweedie_drop <= 0.1 ? " <= 0.1" : " > 0.1") +
                  (baseline_collapse ? ", a baseline drops > 0.1" : ", no baseline drops > 0.1")};
}

Outcome single_pass_audit() {
  const Eigen::Index d = 16, S = 50;
  const std::size_t M = 5, P = 50;
  MlpVelocity net(d, {32, 32}, TimeEmbedding::geometric(4));
  net.initialize(RngState{10, 0});
  const VelocityField head = mlp_handle(net, FieldKind::mean_velocity);
  const PosteriorEstimate est = one_step_cov(head, Vec::Ones(d), kOneStepEpsilon, draw_rademacher(RngState{10, 1}, d, S));
  const EvalCounter& c = head.counter();
  const bool one_step_ok = c.forward_equivalents() == static_cast<std::uint64_t>(S) && c.jvps == static_cast<std::uint64_t>(S) &&
                           c.sampler_steps == 0 && est.jvp_calls == static_cast<std::uint64_t>(S);

  std::vector<VelocityField> members;
  for (std::size_t m = 0; m < M; ++m) {
    MlpVelocity mm(d, {32, 32}, TimeEmbedding::geometric(4));
    mm.initialize(RngState{11, m});
    members.push_back(mlp_handle(mm));
  }
  const BaselineEstimate ens = ensemble_uq(members, Vec::Ones(d), 0.5);
  std::uint64_t member_evals = 0;
  for (const VelocityField& f : members) member_evals += f.counter().forward_equivalents();

  MlpVelocity drop(d, {32, 32}, TimeEmbedding::geometric(4), Activation::tanh, 0.15);
  drop.initialize(RngState{12, 0});
  auto counter = std::make_shared<EvalCounter>();
  drop.attach_counter(counter);
  const BaselineEstimate mc = mc_dropout_uq(drop, Vec::Ones(d), 0.5, P, RngState{12, 1});

  const bool ok = one_step_ok && member_evals == M && ens.forward_evaluations == M && counter->evals == P &&
                  counter->jvps == 0 && mc.forward_evaluations == P;
  return {ok, "one-step: " + std::to_string(c.forward_equivalents()) + " forward-equivalents (S=" + std::to_string(S) +
                  "), " + std::to_string(c.sampler_steps.load()) + " sampler steps; ensemble: " +
                  std::to_string(member_evals) + " (M=" + std::to_string(M) + "); mc-dropout: " +
                  std::to_string(counter->evals.load()) + " (P=" + std::to_string(P) + ")"};
}

Outcome metric_examples() {
  using V = std::vector<double>;
  int failed = 0;
  auto check = [&](bool c) { failed += c ? 0 : 1; };
  check(spearman(V{1, 2, 3}, V{10, 20, 30}) == 1.0);
  check(spearman(V{1, 2, 3}, V{30, 20, 10}) == -1.0);
  check(std::abs(*spearman(V{1, 2, 3, 4}, V{1, 2, 4, 3}) - 0.8) <= 1e-12);
  check(!spearman(V{1, 1, 1}, V{1, 2, 3}).has_value());
  const V u{9, 8, 7, 6, 5, 4, 3, 2, 1, 0};
  check(hitrate_at_k(u, u, 30) == 1.0);
  check(hitrate_at_k(u, V{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 30) == 0.0);
  check(std::abs(hitrate_at_k(u, V{9, 8, 0, 1, 2, 7, 3, 4, 5, 6}, 30) - 2.0 / 3.0) <= 1e-12);
  check(average_ranks(V{5, 1, 5, 3}) == V{3.5, 1, 3.5, 2});
  check(top_k_indices(V{2, 5, 5, 1, 5}, 2) == std::vector<std::size_t>{1, 2});
  try {
    (void)spearman(V{1}, V{1});
    ++failed;
  } catch (const ValidationError&) {
  }
  return {failed == 0, std::to_string(10 - failed) + "/10 examples exact"};
}

Outcome cli_reproducibility() {
  namespace fs = std::filesystem;
  const fs::path a = fs::temp_directory_path() / "flowvar_acceptance_a";
  const fs::path b = fs::temp_directory_path() / "flowvar_acceptance_b";
  for (const fs::path& dir : {a, b}) {
    const std::string failed = cli::run_pipeline(dir);
    if (!failed.empty()) return {false, "pipeline step failed: " + failed};
  }
  const auto sa = cli::snapshot(a / "out", {".csv", ".pgm"});
  const auto sb = cli::snapshot(b / "out", {".csv", ".pgm"});
  std::size_t same = 0;
  for (const auto& [name, bytes] : sa)
    if (sb.count(name) && sb.at(name) == bytes) ++same;
  const bool ok = sa.size() == sb.size() && same == sa.size() && !sa.empty();
  return {ok, std::to_string(same) + "/" + std::to_string(sa.size()) + " CSV and map files byte-identical across " +
                  std::to_string(cli::full_pipeline().size()) + " subcommands"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "oracle equivalence", 10, oracle_equivalence},
      {2, "Monte-Carlo cross-check", 60, monte_carlo_cross_check},
      {3, "isotropic closed forms", 1e9, isotropic_closed_forms},
      {4, "small-epsilon limit", 1, small_epsilon_limit},
      {5, "JVP and gradient correctness", 30, jvp_and_gradients},
      {6, "Hutchinson statistics", 300, hutchinson_statistics},
      {7, "contractivity", 300, contractivity},
      {8, "error correlation", 300, error_correlation_gmm},
      {9, "consistency protocol", 900, consistency_toy},
      {10, "single-pass audit", 1, single_pass_audit},
      {11, "metric examples", 1, metric_examples},
      {12, "CLI reproducibility", 1e9, cli_reproducibility},
  };
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    // Shared training is charged to the criterion that needs it.
    if (c.id == 7) seconds = std::max(seconds, gmm_run().seconds);
    if (c.id == 9) seconds = std::max(seconds, toy_run(true).seconds);
    const bool in_time = seconds < c.limit_seconds;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("%s %2d %s: %s [%.2fs%s]\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(), seconds,
                in_time ? "" : ", over time limit");
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
