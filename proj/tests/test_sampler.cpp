#include <gtest/gtest.h>

#include <cmath>

#include "flowvar/sampler.hpp"
#include "flowvar/training.hpp"
#include "support/oracles.hpp"

using namespace flowvar;

TEST(Euler, ConstantFieldIsExact) {
  const Vec c = (Vec(2) << 0.3, -1.2).finished();
  const Vec x0 = (Vec(2) << 1.0, 1.0).finished();
  for (std::size_t n : {1u, 7u, 100u}) {
    const Trajectory tr = euler_generate(linear_field(Mat::Zero(2, 2), c), x0, n);
    EXPECT_LE((tr.states.back() - (x0 + c)).cwiseAbs().maxCoeff(), 1e-13) << n;
    EXPECT_EQ(tr.states.size(), n + 1);
    EXPECT_EQ(tr.times.front(), 0.0);
    EXPECT_DOUBLE_EQ(tr.times.back(), 1.0);
  }
}

TEST(Euler, ZeroFieldKeepsStart) {
  const Vec x0 = (Vec(3) << 1.0, 2.0, 3.0).finished();
  const Trajectory tr = euler_generate(linear_field(Mat::Zero(3, 3), Vec::Zero(3)), x0, 10);
  for (const Vec& s : tr.states) EXPECT_EQ(s, x0);
}

TEST(Euler, FirstOrderConvergence) {
  // For the standard Gaussian the exact flow is the identity map from t = 0 to t = 1.
  const VelocityField f = analytic_handle(standard_gaussian(2));
  const Vec x0 = (Vec(2) << 0.8, -1.3).finished();
  std::vector<double> logn, loge;
  for (std::size_t n : {25u, 50u, 100u, 200u, 400u}) {
    const double err = (euler_generate(f, x0, n).states.back() - x0).norm();
    logn.push_back(std::log(static_cast<double>(n)));
    loge.push_back(std::log(err));
  }
  EXPECT_NEAR(oracle::fitted_slope(logn, loge), -1.0, 0.2);
  const double e100 = (euler_generate(f, x0, 100).states.back() - euler_generate(f, x0, 400).states.back()).norm();
  EXPECT_LE(e100, 5.0 / 100.0);
}

TEST(Euler, SnapshotsWithinOneStep) {
  const std::vector<double> want{0.0, 0.1, 0.33, 0.5, 0.77, 0.98, 1.0};
  for (std::size_t n : {10u, 30u, 100u}) {
    const Trajectory tr = euler_generate(linear_field(Mat::Zero(1, 1), Vec::Ones(1)), Vec::Zero(1), n, want);
    ASSERT_EQ(tr.times.size(), tr.states.size());
    const double dt = 1.0 / static_cast<double>(n);
    for (std::size_t i = 1; i < tr.times.size(); ++i) EXPECT_GT(tr.times[i], tr.times[i - 1]);
    for (double t : want) {
      const bool served = std::any_of(tr.times.begin(), tr.times.end(),
                                      [&](double s) { return s >= t - 1e-12 && s - t <= dt + 1e-12; });
      EXPECT_TRUE(served) << "t=" << t << " n=" << n;
    }
    for (std::size_t i = 0; i < tr.times.size(); ++i) EXPECT_NEAR(tr.states[i][0], tr.times[i], 1e-12);
  }
}

TEST(Euler, CountsSamplerSteps) {
  const VelocityField f = linear_field(Mat::Zero(2, 2), Vec::Zero(2));
  euler_generate(f, Vec::Zero(2), 17);
  EXPECT_EQ(f.counter().sampler_steps, 17u);
  EXPECT_EQ(f.counter().evals, 17u);
}

TEST(Euler, DivergenceKeepsPartialTrajectory) {
  const VelocityField f(FieldKind::mlp, 1, [](const Vec& x, double t) -> Vec { return t > 0.45 ? Vec::Constant(1, NAN) : x; },
                        [](const Vec&, double, const Vec& u) -> Vec { return u; });
  try {
    euler_generate(f, Vec::Ones(1), 10);
    FAIL() << "expected divergence";
  } catch (const SamplerDiverged& e) {
    EXPECT_EQ(e.partial().states.size(), 6u);
  }
}

TEST(Euler, Validation) {
  const VelocityField f = linear_field(Mat::Zero(2, 2), Vec::Zero(2));
  EXPECT_THROW(euler_generate(f, Vec::Zero(2), 0), ValidationError);
  EXPECT_THROW(euler_generate(f, Vec::Zero(3), 4), ValidationError);
  EXPECT_THROW(euler_generate(f, Vec::Zero(2), 4, {1.5}), ValidationError);
}

TEST(EulerProperty, DeterministicGivenStart) {
  const VelocityField f = analytic_handle(default_gmm());
  const Vec x0 = (Vec(2) << 0.1, 0.2).finished();
  EXPECT_EQ(euler_generate(f, x0, 50).states.back(), euler_generate(f, x0, 50).states.back());
}

TEST(EulerProperty, AnalyticFieldReproducesMixtureMoments) {
  const GmmSpec spec = default_gmm();
  const VelocityField f = analytic_handle(spec);
  Rng rng(RngState{3, 0});
  const int n = 1000;
  Mat ends(2, n);
  for (int i = 0; i < n; ++i) ends.col(i) = euler_generate(f, rng.normal_vec(2), 100).states.back();
  const Vec mean = ends.rowwise().mean();
  const Mat centred = ends.colwise() - mean;
  const Mat cov = centred * centred.transpose() / static_cast<double>(n);

  Vec true_mean = Vec::Zero(2);
  for (std::size_t k = 0; k < spec.components(); ++k) true_mean += spec.weights[static_cast<Eigen::Index>(k)] * spec.means[k];
  Mat true_cov = Mat::Zero(2, 2);
  for (std::size_t k = 0; k < spec.components(); ++k) {
    const Vec dm = spec.means[k] - true_mean;
    true_cov += spec.weights[static_cast<Eigen::Index>(k)] * (spec.covariances[k] + dm * dm.transpose());
  }
  EXPECT_LE((mean - true_mean).norm(), 0.15);
  EXPECT_LE((cov - true_cov).norm(), 0.15);
}

TEST(OneStepGenerate, ZeroHeadReturnsInput) {
  MlpVelocity m(3, {8}, TimeEmbedding::geometric(2));
  m.initialize(RngState{1, 0}, true);
  const Vec x0 = (Vec(3) << 0.5, -0.5, 2.0).finished();
  EXPECT_EQ(one_step_generate(m, x0), x0);
}

TEST(OneStepGenerate, SingleForward) {
  MlpVelocity m(2, {8}, TimeEmbedding::geometric(2));
  m.initialize(RngState{2, 0});
  auto counter = std::make_shared<EvalCounter>();
  m.attach_counter(counter);
  one_step_generate(m, Vec::Ones(2));
  EXPECT_EQ(counter->evals, 1u);
  EXPECT_EQ(counter->jvps, 0u);
  EXPECT_EQ(counter->sampler_steps, 0u);
}

TEST(OneStepGenerate, TrainedMeanMatchesSingleGaussian) {
  const Vec mu = (Vec(2) << -1.0, 2.0).finished();
  const GmmSpec spec = GmmSpec::isotropic({1.0}, {mu}, {0.3});
  TrainConfig cfg;
  cfg.objective = Objective::one_step;
  cfg.epochs = 20;
  cfg.learning_rate = 3e-3;
  cfg.dataset_size = 2048;
  cfg.seed = RngState{4, 0};
  const auto r = train_new(MlpVelocity(2, {32, 32}, TimeEmbedding::geometric(4)), Dataset::gmm(spec), cfg);
  Rng rng(RngState{5, 0});
  Vec mean = Vec::Zero(2);
  for (int i = 0; i < 1000; ++i) mean += one_step_generate(r.model, rng.normal_vec(2));
  EXPECT_LE((mean / 1000 - mu).cwiseAbs().maxCoeff(), 0.2);
}
