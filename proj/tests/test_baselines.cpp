#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "flowvar/baselines.hpp"
#include "flowvar/mlp.hpp"
#include "flowvar/training.hpp"

using namespace flowvar;

namespace {

/// Field whose posterior mean at t is x_t + (1-t) * c, i.e. constant velocity c.
VelocityField constant_field(const Vec& c) { return linear_field(Mat::Zero(c.size(), c.size()), c); }

MlpVelocity dropout_mlp(double rate, std::uint64_t seed) {
  MlpVelocity m(3, {32, 32}, TimeEmbedding::geometric(4), Activation::tanh, rate);
  m.initialize(RngState{seed, 0});
  return m;
}

}  // namespace

TEST(Ensemble, IdenticalMembersHaveZeroSpread) {
  const VelocityField f = constant_field((Vec(2) << 0.3, -0.7).finished());
  const std::vector<VelocityField> members{f, f, f};
  const BaselineEstimate est = ensemble_uq(members, (Vec(2) << 1.0, 2.0).finished(), 0.4);
  EXPECT_EQ(est.variance, Vec::Zero(2));
  EXPECT_EQ(est.scalar, 0.0);
  EXPECT_EQ(est.members, 3u);
  EXPECT_EQ(est.forward_evaluations, 3u);
}

TEST(Ensemble, TwoMembersPopulationVariance) {
  // At t = 0.5 the posterior mean moves by (1 - t) * c; offsets of +-(2, 0) give means 2 apart.
  const double t = 0.5;
  const std::vector<VelocityField> members{constant_field((Vec(2) << 2.0, 0.0).finished()),
                                           constant_field((Vec(2) << -2.0, 0.0).finished())};
  const BaselineEstimate pop = ensemble_uq(members, Vec::Zero(2), t);
  EXPECT_DOUBLE_EQ(pop.variance[0], 1.0);
  EXPECT_DOUBLE_EQ(pop.variance[1], 0.0);
  EXPECT_DOUBLE_EQ(pop.scalar, 1.0);
  const BaselineEstimate unb = ensemble_uq(members, Vec::Zero(2), t, VarianceConvention::unbiased);
  EXPECT_DOUBLE_EQ(unb.variance[0], 2.0);
}

TEST(Ensemble, PermutationInvariant) {
  std::vector<VelocityField> members;
  for (int m = 0; m < 5; ++m) {
    MlpVelocity net(2, {16}, TimeEmbedding::geometric(2));
    net.initialize(RngState{static_cast<std::uint64_t>(m), 0});
    members.push_back(mlp_handle(net));
  }
  const Vec xt = (Vec(2) << 0.2, -0.4).finished();
  const BaselineEstimate a = ensemble_uq(members, xt, 0.6);
  std::vector<VelocityField> shuffled{members[3], members[0], members[4], members[2], members[1]};
  const BaselineEstimate b = ensemble_uq(shuffled, xt, 0.6);
  EXPECT_LE((a.variance - b.variance).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Ensemble, ArgmaxPixelStableUnderSharedRescale) {
  Rng rng(RngState{4, 0});
  std::vector<VelocityField> members, scaled;
  for (int m = 0; m < 4; ++m) {
    const Vec c = rng.normal_vec(5);
    members.push_back(constant_field(c));
    scaled.push_back(constant_field(3.5 * c));
  }
  const BaselineEstimate a = ensemble_uq(members, Vec::Zero(5), 0.3);
  const BaselineEstimate b = ensemble_uq(scaled, Vec::Zero(5), 0.3);
  Eigen::Index ia = 0, ib = 0;
  a.variance.maxCoeff(&ia);
  b.variance.maxCoeff(&ib);
  EXPECT_EQ(ia, ib);
}

TEST(Ensemble, Validation) {
  const VelocityField f = constant_field(Vec::Zero(2));
  EXPECT_THROW(ensemble_uq(std::vector<VelocityField>{f}, Vec::Zero(2), 0.5), ValidationError);
  EXPECT_THROW(ensemble_uq(std::vector<VelocityField>{f, f}, Vec::Zero(2), 1.0), ValidationError);
}

TEST(McDropout, RateZeroHasZeroVariance) {
  const MlpVelocity m = dropout_mlp(0.0, 1);
  const BaselineEstimate est = mc_dropout_uq(m, Vec::Ones(3), 0.5, 20, RngState{2, 0});
  EXPECT_EQ(est.variance, Vec::Zero(3));
  EXPECT_EQ(est.forward_evaluations, 20u);
}

TEST(McDropout, DeterministicGivenStream) {
  const MlpVelocity m = dropout_mlp(0.15, 3);
  const BaselineEstimate a = mc_dropout_uq(m, Vec::Ones(3), 0.5, 10, RngState{5, 0});
  const BaselineEstimate b = mc_dropout_uq(m, Vec::Ones(3), 0.5, 10, RngState{5, 0});
  EXPECT_EQ(a.variance, b.variance);
  const BaselineEstimate c = mc_dropout_uq(m, Vec::Ones(3), 0.5, 10, RngState{5, 1});
  EXPECT_NE(a.variance, c.variance);
}

TEST(McDropout, TrainedModelHasPositiveSpread) {
  MlpVelocity m(2, {64, 64}, TimeEmbedding::geometric(4), Activation::tanh, 0.15);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 3e-3;
  cfg.dataset_size = 2048;
  cfg.seed = RngState{6, 0};
  m.initialize(cfg.seed);
  train(m, Dataset::gmm(default_gmm()), cfg);
  const BaselineEstimate est = mc_dropout_uq(m, (Vec(2) << 0.5, 0.1).finished(), 0.5, 50, RngState{7, 0});
  EXPECT_GT(est.scalar, 0.0);
  EXPECT_TRUE((est.variance.array() >= 0.0).all());
  EXPECT_NEAR(est.scalar, est.variance.sum(), 1e-9);
}

TEST(McDropout, Validation) {
  const MlpVelocity m = dropout_mlp(0.1, 8);
  EXPECT_THROW(mc_dropout_uq(m, Vec::Ones(3), 0.5, 1, RngState{}), ValidationError);
}

TEST(Spread, UnbiasedNeedsTwoSamples) {
  EXPECT_THROW(spread_of(Mat::Zero(2, 1), VarianceConvention::population), ValidationError);
  Mat s(1, 3);
  s << 1.0, 2.0, 6.0;
  EXPECT_DOUBLE_EQ(spread_of(s, VarianceConvention::population).variance[0], 14.0 / 3.0);
  EXPECT_DOUBLE_EQ(spread_of(s, VarianceConvention::unbiased).variance[0], 7.0);
}
