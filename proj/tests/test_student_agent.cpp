#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fmirl/agent/policy_update.hpp"
#include "test_support.hpp"

using namespace fmirl;
using namespace fmirl::agent;
using flow::Condition;
using flow::FlowConfig;

namespace {

Tensor random_states(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Tensor x(n, d);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
  return x;
}

struct ZeroField {
  Tensor operator()(const Tensor& x, const Vector&, std::span<const Condition>) const {
    return Tensor::Zero(x.rows(), x.cols());
  }
};

struct ConstantField {
  double w;
  Tensor operator()(const Tensor& x, const Vector&, std::span<const Condition>) const {
    return Tensor::Constant(x.rows(), x.cols(), w);
  }
};

struct FlakyField {
  int* calls;
  int failures;
  Tensor operator()(const Tensor& x, const Vector& t, std::span<const Condition>) const {
    if (t[0] == 0.0) ++*calls;
    return Tensor::Constant(x.rows(), x.cols(), *calls <= failures ? std::nan("") : 0.0);
  }
};

// Fills a buffer from the policy acting on random states with synthetic rewards.
RolloutBuffer synthetic_buffer(const StudentPolicy& policy, int envs, int horizon, Rng& rng) {
  const auto& sh = policy.shape();
  RolloutBuffer buf = RolloutBuffer::allocate(envs, horizon, sh.state_dim, sh.action_dim);
  buf.states = random_states(buf.size(), sh.state_dim, rng);
  const ActOutput out = act(policy, buf.states, rng);
  buf.actions = out.actions;
  buf.pre_squash = out.pre_squash;
  buf.logp = out.logp;
  buf.values = out.value;
  for (Eigen::Index i = 0; i < buf.size(); ++i) {
    buf.rewards[i] = -buf.actions.row(i).squaredNorm() + 0.1 * rng.normal();
    buf.dones[static_cast<std::size_t>(i)] = rng.uniform() < 0.05;
  }
  compute_gae(buf, 0.99, 0.95);
  return buf;
}

}  // namespace

TEST(Act, NearDeterministicAtMinimumLogStd) {
  Rng rng(1);
  StudentPolicy policy(PolicyShape{}, rng);
  policy.params().at("log_std").value.setConstant(-9.0);  // clamped to -5
  EXPECT_EQ(policy.log_std()(0, 0), kLogStdMin);
  const Tensor s = random_states(50, 4, rng);
  const ActOutput out = act(policy, s, rng);
  EXPECT_LT((out.actions - policy.mean_action(s)).cwiseAbs().maxCoeff(), 0.05);
}

TEST(Act, ZeroMeanSamplesAreSymmetric) {
  Rng rng(2);
  StudentPolicy policy(PolicyShape{}, rng);
  for (auto& p : policy.params())
    if (p.name.rfind("pi.", 0) == 0) p.value.setZero();
  const int n = 10000;
  const ActOutput out = act(policy, Tensor::Zero(n, 4), rng);
  for (Eigen::Index k = 0; k < 2; ++k) {
    const Vector a = out.actions.col(k);
    const double mean = a.mean();
    const double sd = std::sqrt((a.array() - mean).square().sum() / (n - 1));
    EXPECT_LT(std::abs(mean), 3.0 * sd / std::sqrt(n));
    EXPECT_LE(a.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(Act, LogProbMatchesSquashedGaussianDensity) {
  PolicyShape shape;
  shape.action_bound = 2.0;
  Rng rng(3);
  StudentPolicy policy(shape, rng);
  policy.params().at("pi.l2.W").value *= 50.0;  // move the mean away from zero
  const Tensor s = random_states(100, 4, rng);
  const ActOutput out = act(policy, s, rng);
  const Tensor mu = policy.pre_squash_mean(s);
  const Tensor ls = policy.log_std();
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    // density of a = b tanh(u), u ~ N(mu, sigma): p(u) / |da/du|
    double logp = 0.0;
    for (Eigen::Index k = 0; k < 2; ++k) {
      const double sigma = std::exp(ls(0, k));
      const double u = out.pre_squash(i, k);
      const double gauss = std::exp(-0.5 * std::pow((u - mu(i, k)) / sigma, 2)) / (sigma * std::sqrt(2 * std::numbers::pi));
      const double jac = shape.action_bound * (1.0 - std::pow(std::tanh(u), 2));
      logp += std::log(gauss / jac);
      EXPECT_DOUBLE_EQ(out.actions(i, k), shape.action_bound * std::tanh(u));
    }
    EXPECT_NEAR(out.logp[i], logp, 1e-9);
  }
}

TEST(Gae, SingleTerminalStep) {
  const std::vector<double> r{2.5}, v{0.0};
  const std::vector<char> d{1};
  const GaeResult g = compute_gae(r, v, d, 7.0, 0.99, 0.95);
  EXPECT_DOUBLE_EQ(g.advantages[0], 2.5);
}

TEST(Gae, ZeroDiscountIsOneStepResidual) {
  const std::vector<double> r{1.0, -2.0, 0.5}, v{0.3, 0.1, -0.4};
  const std::vector<char> d{0, 0, 0};
  const GaeResult g = compute_gae(r, v, d, 5.0, 0.0, 0.95);
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(g.advantages[k], r[k] - v[k]);
}

TEST(Gae, TwoStepHandUnrolled) {
  // delta_1 = 1 + 0 - 0.5 = 0.5; delta_0 = 1 + 0.9 * 0.5 - 0.5 = 0.95
  // A_1 = 0.5; A_0 = 0.95 + 0.9 * 0.95 * 0.5 = 1.3775
  const std::vector<double> r{1.0, 1.0}, v{0.5, 0.5};
  const std::vector<char> d{0, 1};
  const GaeResult g = compute_gae(r, v, d, 0.0, 0.9, 0.95);
  EXPECT_DOUBLE_EQ(g.advantages[1], 0.5);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.3775);
  EXPECT_DOUBLE_EQ(g.returns[0], 1.8775);
  EXPECT_DOUBLE_EQ(g.returns[1], 1.0);
}

TEST(Gae, NoBootstrapAcrossTerminal) {
  const std::vector<double> r{1.0, 1.0, 1.0}, v{0.0, 100.0, 0.0};
  const std::vector<char> d{1, 0, 0};
  const GaeResult g = compute_gae(r, v, d, 0.0, 0.9, 1.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.0);
}

TEST(Gae, BufferLayoutMatchesPerStreamRecursion) {
  Rng rng(4);
  StudentPolicy policy(PolicyShape{}, rng);
  RolloutBuffer buf = synthetic_buffer(policy, 3, 20, rng);
  buf.last_values << 0.5, -1.0, 2.0;
  compute_gae(buf, 0.97, 0.9);
  for (int e = 0; e < 3; ++e) {
    std::vector<double> r, v;
    std::vector<char> d;
    for (int k = 0; k < 20; ++k) {
      const Eigen::Index row = k * 3 + e;
      r.push_back(buf.rewards[row]);
      v.push_back(buf.values[row]);
      d.push_back(buf.dones[static_cast<std::size_t>(row)]);
    }
    const GaeResult g = compute_gae(r, v, d, buf.last_values[e], 0.97, 0.9);
    for (int k = 0; k < 20; ++k) EXPECT_EQ(buf.advantages[k * 3 + e], g.advantages[k]);
  }
}

TEST(Gae, NormalizedAdvantagesHaveUnitMoments) {
  Rng rng(5);
  Vector adv(1000);
  for (auto& a : adv) a = 3.0 + 10.0 * rng.normal();
  const Vector n = normalize_advantages(adv);
  const double mean = n.mean();
  const double std = std::sqrt((n.array() - mean).square().mean());
  EXPECT_LT(std::abs(mean), 1e-6);
  EXPECT_LT(std::abs(std - 1.0), 1e-6);
}

TEST(RegularizationBatch, ZeroFieldIsGaussian) {
  FlowConfig cfg;
  cfg.state_dim = 4;
  cfg.action_dim = 2;
  Rng rng(6);
  const RegPairs reg = regularization_batch(ZeroField{}, 10000, rng, cfg, 1.0);
  ASSERT_EQ(reg.size(), 10000);
  for (Eigen::Index k = 0; k < 4; ++k) EXPECT_LT(std::abs(reg.states.col(k).mean()), 3.0 * 0.5 / 100.0);
  for (Eigen::Index k = 0; k < 2; ++k) EXPECT_LT(std::abs(reg.actions.col(k).mean()), 3.0 * 0.5 / 100.0);
}

TEST(RegularizationBatch, EmptyAndClipped) {
  FlowConfig cfg;
  cfg.state_dim = 2;
  cfg.action_dim = 2;
  Rng rng(7);
  EXPECT_EQ(regularization_batch(ZeroField{}, 0, rng, cfg, 1.0).size(), 0);
  const RegPairs reg = regularization_batch(ConstantField{5.0}, 20, rng, cfg, 1.0);
  EXPECT_EQ(reg.actions.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_GT(reg.states.minCoeff(), 2.0);  // states are not clipped
}

TEST(RegularizationBatch, RetriesThenFails) {
  FlowConfig cfg;
  cfg.state_dim = 1;
  cfg.action_dim = 1;
  cfg.num_steps = 4;
  Rng rng(8);
  int calls = 0;
  EXPECT_NO_THROW(regularization_batch(FlakyField{&calls, 3}, 5, rng, cfg, 1.0));
  EXPECT_EQ(calls, 4);
  calls = 0;
  EXPECT_THROW(regularization_batch(FlakyField{&calls, 4}, 5, rng, cfg, 1.0), NumericalError);
  EXPECT_EQ(calls, 4);
}

TEST(RegularizationBatch, FittedFieldReproducesExpertMean) {
  FlowConfig cfg;
  cfg.state_dim = 1;
  cfg.action_dim = 1;
  cfg.hidden_layers = 2;
  cfg.hidden_units = 64;
  Rng rng(9);
  Tensor data(500, 2);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const double s = 0.6 + 0.3 * rng.normal();
    data.row(i) << s, std::clamp(-0.5 * s + 0.1 * rng.normal(), -1.0, 1.0);
  }
  flow::VectorFieldNet net(cfg, rng);
  nn::Adam opt(nn::AdamConfig{2e-3});
  const std::vector<Condition> c(500, Condition::expert);
  for (int i = 0; i < 1500; ++i) flow::cfm_train_step(net, opt, data, c, 128, rng);
  const RegPairs reg = regularization_batch(net, 2000, rng, cfg, 1.0);
  EXPECT_LT(std::abs(reg.states.mean() - data.col(0).mean()), 0.1);
  EXPECT_LT(std::abs(reg.actions.mean() - data.col(1).mean()), 0.1);
}

TEST(PolicyUpdate, ZeroBetaMatchesPlainUpdateBitwise) {
  Rng rng(10);
  StudentPolicy base(PolicyShape{}, rng);
  const RolloutBuffer buf = synthetic_buffer(base, 4, 64, rng);
  RegPairs reg{random_states(64, 4, rng), Tensor(random_states(64, 2, rng).array().tanh())};
  StudentPolicy a = base, b = base;
  PolicyObjectiveConfig cfg;
  cfg.minibatch_size = 64;
  cfg.epochs = 3;
  cfg.beta = 0.0;
  nn::Adam oa(nn::AdamConfig{cfg.lr}), ob(nn::AdamConfig{cfg.lr});
  Rng ra(11), rb(11);
  policy_update(a, oa, buf, reg, cfg, ra);
  cfg.beta = 2.0;
  policy_update(b, ob, buf, RegPairs{Tensor(0, 4), Tensor(0, 2)}, cfg, rb);
  EXPECT_EQ(a.params().flat_values(), b.params().flat_values());
}

TEST(PolicyUpdate, MatchedPairsGiveZeroRegularizer) {
  Rng rng(12);
  StudentPolicy policy(PolicyShape{}, rng);
  RegPairs reg{random_states(32, 4, rng), Tensor()};
  reg.actions = policy.mean_action(reg.states);
  nn::Tape tape;
  EXPECT_EQ(regularization_loss(tape, policy, reg, 2.0).value()(0, 0), 0.0);
  reg.actions.array() += 0.1;
  nn::Tape tape2;
  EXPECT_GT(regularization_loss(tape2, policy, reg, 2.0).value()(0, 0), 0.0);
}

TEST(PolicyUpdate, RegularizerGradientMatchesFiniteDifferences) {
  PolicyShape shape;
  shape.state_dim = 1;
  shape.action_dim = 1;
  shape.hidden_layers = 0;  // mean net: one weight and one bias
  Rng rng(13);
  StudentPolicy policy(shape, rng);
  policy.params().at("pi.l0.W").value(0, 0) = 0.8;
  policy.params().at("pi.l0.b").value(0, 0) = -0.3;
  RegPairs reg{random_states(10, 1, rng), Tensor(random_states(10, 1, rng).array().tanh())};
  {
    nn::Tape tape;
    tape.backward(regularization_loss(tape, policy, reg, 2.0));
  }
  auto loss = [&] {
    nn::Tape tape;
    return regularization_loss(tape, policy, reg, 2.0).value()(0, 0);
  };
  EXPECT_LT(test::finite_difference_check(policy.params(), loss).max_rel_error, 1e-4);
}

TEST(PolicyUpdate, FullObjectiveGradientMatchesFiniteDifferences) {
  PolicyShape shape;
  shape.state_dim = 1;
  shape.action_dim = 1;
  shape.hidden_layers = 1;
  shape.hidden_units = 2;
  Rng rng(14);
  StudentPolicy policy(shape, rng);
  policy.params().at("pi.l1.W").value *= 100.0;
  ASSERT_LE(policy.params().numel(), 16u);
  const Tensor s = random_states(12, 1, rng);
  const ActOutput out = act(policy, s, rng);
  Vector old_logp = out.logp;
  for (auto& v : old_logp) v += 0.1 * rng.uniform(-1.0, 1.0);
  Vector adv(12), ret(12);
  for (auto& v : adv) v = rng.normal();
  for (auto& v : ret) v = rng.normal();
  RegPairs reg{random_states(8, 1, rng), Tensor(random_states(8, 1, rng).array().tanh())};
  PolicyObjectiveConfig cfg;
  cfg.entropy_coef = 0.01;
  {
    nn::Tape tape;
    tape.backward(minibatch_loss(tape, policy, s, out.pre_squash, old_logp, adv, ret, reg, cfg).total);
  }
  auto loss = [&] {
    nn::Tape tape;
    return minibatch_loss(tape, policy, s, out.pre_squash, old_logp, adv, ret, reg, cfg).total.value()(0, 0);
  };
  EXPECT_LT(test::finite_difference_check(policy.params(), loss).max_rel_error, 1e-4);
}

TEST(PolicyUpdate, LargerBetaTracksGeneratedPairsMoreClosely) {
  Rng rng(15);
  StudentPolicy base(PolicyShape{}, rng);
  const RolloutBuffer buf = synthetic_buffer(base, 4, 128, rng);  // frozen rewards
  auto pairs = [&](Eigen::Index n) {
    RegPairs r{random_states(n, 4, rng), Tensor(n, 2)};
    for (Eigen::Index i = 0; i < n; ++i) r.actions.row(i) << 0.6 * std::tanh(r.states(i, 0)), -0.4;
    return r;
  };
  const RegPairs held_out = pairs(512);
  auto converged_gap = [&](double beta) {
    StudentPolicy p = base;
    PolicyObjectiveConfig cfg;
    cfg.beta = beta;
    cfg.epochs = 4;
    nn::Adam opt(nn::AdamConfig{cfg.lr});
    Rng r(16);
    for (int round = 0; round < 8; ++round) policy_update(p, opt, buf, pairs(256), cfg, r);
    return (p.mean_action(held_out.states) - held_out.actions).rowwise().squaredNorm().mean();
  };
  const double g0 = converged_gap(0.0), g10 = converged_gap(10.0);
  EXPECT_LT(g10, g0);
}

TEST(PolicyUpdate, ReportsStatsAndRejectsMissingAdvantages) {
  Rng rng(17);
  StudentPolicy policy(PolicyShape{}, rng);
  RolloutBuffer buf = synthetic_buffer(policy, 2, 64, rng);
  nn::Adam opt;
  PolicyObjectiveConfig cfg;
  const PolicyStats st = policy_update(policy, opt, buf, RegPairs{random_states(16, 4, rng), Tensor::Zero(16, 2)}, cfg, rng);
  EXPECT_GT(st.epochs_run, 0);
  EXPECT_GE(st.reg_loss, 0.0);
  EXPECT_GE(st.clip_fraction, 0.0);
  buf.advantages.resize(0);
  EXPECT_THROW(policy_update(policy, opt, buf, RegPairs{}, cfg, rng), UsageError);
}
