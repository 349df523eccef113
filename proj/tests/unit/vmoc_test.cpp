#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <thread>

#include "../support/reference_sac.h"
#include "hitmdp/envs/env.h"
#include "hitmdp/vmoc/agent.h"
#include "hitmdp/vmoc/trainer.h"

namespace hitmdp::vmoc {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

AgentConfig small_config(int K = 3, int action_count = 0) {
  AgentConfig c;
  c.obs_dim = 3;
  c.action_dim = 2;
  c.action_count = action_count;
  c.n_options = K;
  c.embed_dim = 4;
  c.hidden = {8, 8};
  c.gamma = 0.9;
  c.alpha_a = 0.3;
  c.alpha_o = 0.2;
  return c;
}

Batch random_batch(const AgentConfig& c, int B, Rng& rng) {
  std::vector<Transition> ts(B);
  std::vector<const Transition*> ptrs;
  for (auto& t : ts) {
    t.s = VectorXd::NullaryExpr(c.obs_dim, [&] { return rng.uniform(-1, 1); });
    t.s_next = VectorXd::NullaryExpr(c.obs_dim, [&] { return rng.uniform(-1, 1); });
    if (c.discrete()) {
      t.a = VectorXd::Constant(1, rng.uniform_int(c.action_count));
    } else {
      t.a = VectorXd::NullaryExpr(c.action_dim, [&] { return rng.uniform(-0.95, 0.95); });
    }
    t.r = rng.uniform(-1, 1);
    t.o_prev = rng.uniform_int(c.n_options);
    t.o = rng.uniform_int(c.n_options);
    t.done = rng.uniform() < 0.2;
    ptrs.push_back(&t);
  }
  return Batch::from(ptrs);
}

MatrixXd random_noise(const AgentConfig& c, int B, Rng& rng) {
  MatrixXd n(c.discrete() ? 0 : c.action_dim, B);
  for (Eigen::Index i = 0; i < n.size(); ++i) n.data()[i] = rng.normal();
  return n;
}

// Central differences of f over every entry of v.
VectorXd numeric_grad(Eigen::Ref<VectorXd> v, const std::function<double()>& f,
                      double h = 1e-5) {
  VectorXd g(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double keep = v(i);
    v(i) = keep + h;
    double up = f();
    v(i) = keep - h;
    double down = f();
    v(i) = keep;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

// Sets the last layer to zero weights and the given biases, making the net
// output constant.
void constant_output(nn::DenseNet& net, const VectorXd& value) {
  int last = net.n_layers() - 1;
  net.weight(last).setZero();
  net.bias(last) = value;
}

class LossGradTest : public ::testing::TestWithParam<int> {};

TEST_P(LossGradTest, AllLossesMatchFiniteDifferences) {
  for (bool discrete : {false, true}) {
    for (RegularizerMode mode : {RegularizerMode::Zero, RegularizerMode::MutualInfo}) {
     for (OptionTargetAction ota : {OptionTargetAction::Buffer, discrete ? OptionTargetAction::Expected : OptionTargetAction::Policy}) {
      AgentConfig c = small_config(3, discrete ? 4 : 0);
      c.regularizer = mode;
      c.option_target_action = ota;
      Rng rng(100 + GetParam());
      AgentParams p = AgentParams::create(c, rng);
      // Targets differ from online critics.
      for (int i = 0; i < 2; ++i) {
        p.qa_target[i].params() += VectorXd::NullaryExpr(p.qa_target[i].param_count(), [&] { return 0.1 * rng.normal(); });
        p.qo_target[i].params() += VectorXd::NullaryExpr(p.qo_target[i].param_count(), [&] { return 0.1 * rng.normal(); });
      }
      Batch batch = random_batch(c, 6, rng);
      MatrixXd noise = random_noise(c, 6, rng);
      MatrixXd target_noise = random_noise(c, 6, rng);

      CriticLoss qa = critic_loss_action(p, batch);
      CriticLoss qo = critic_loss_option(p, batch, &target_noise);
      for (int i = 0; i < 2; ++i) {
        VectorXd n = numeric_grad(p.qa[i].params(), [&] { return critic_loss_action(p, batch).loss; });
        EXPECT_LT(nn::max_relative_error(qa.grads[i], n), 1e-4);
        n = numeric_grad(p.qo[i].params(), [&] { return critic_loss_option(p, batch, &target_noise).loss; });
        EXPECT_LT(nn::max_relative_error(qo.grads[i], n), 1e-4);
      }
      ActionActorLoss pa = actor_loss_action(p, batch, noise);
      VectorXd n = numeric_grad(p.pa.params(), [&] { return actor_loss_action(p, batch, noise).loss; });
      EXPECT_LT(nn::max_relative_error(pa.grad, n), 1e-4);

      OptionActorLoss po = actor_loss_option(p, batch);
      n = numeric_grad(p.po.params(), [&] { return actor_loss_option(p, batch).loss; });
      EXPECT_LT(nn::max_relative_error(po.grad, n), 1e-4);
      Eigen::Map<VectorXd> w(p.W.data(), p.W.size());
      n = numeric_grad(w, [&] { return actor_loss_option(p, batch).loss; });
      EXPECT_LT(nn::max_relative_error(Eigen::Map<const VectorXd>(po.grad_W.data(), po.grad_W.size()), n), 1e-4);

      TemperatureLoss t = temperature_loss(p, pa.log_pi, po.entropy);
      VectorXd la = VectorXd::Constant(1, p.log_alpha_a), lo = VectorXd::Constant(1, p.log_alpha_o);
      VectorXd na = numeric_grad(la, [&] {
        AgentParams q = p;
        q.log_alpha_a = la(0);
        return temperature_loss(q, pa.log_pi, po.entropy).loss_a;
      });
      VectorXd no = numeric_grad(lo, [&] {
        AgentParams q = p;
        q.log_alpha_o = lo(0);
        return temperature_loss(q, pa.log_pi, po.entropy).loss_o;
      });
      EXPECT_LT(nn::relative_error(t.grad_log_alpha_a, na(0), 0.0), 1e-6);
      EXPECT_LT(nn::relative_error(t.grad_log_alpha_o, no(0), 0.0), 1e-6);
     }
    }
  }
}

TEST(CriticLossTest, ExpectedTargetAveragesOverActions) {
  AgentConfig c = small_config(1, 2);
  c.option_target_action = OptionTargetAction::Expected;
  Rng rng(9);
  AgentParams p = AgentParams::create(c, rng);
  constant_output(p.qa_target[0], (VectorXd(2) << 1.0, 3.0).finished());
  constant_output(p.qa_target[1], (VectorXd(2) << 2.0, 2.5).finished());
  constant_output(p.pa, (VectorXd(2) << 0.0, std::log(3.0)).finished());
  Batch b = random_batch(c, 1, rng);
  // pi = (1/4, 3/4), min Q = (1, 2.5)
  double y = 0.25 * (1.0 - 0.3 * std::log(0.25)) + 0.75 * (2.5 - 0.3 * std::log(0.75));
  EXPECT_NEAR(critic_loss_option(p, b).target(0), y, 1e-12);
  c.option_target_action = OptionTargetAction::Expected;
  c.action_count = 0;
  AgentParams q = AgentParams::create(c, rng);
  EXPECT_THROW(critic_loss_option(q, random_batch(c, 1, rng)), std::invalid_argument);
}

INSTANTIATE_TEST_SUITE_P(Seeds, LossGradTest, ::testing::Range(0, 3));

TEST(CriticLossTest, HandComputedActionTarget) {
  AgentConfig c = small_config(1);
  Rng rng(1);
  AgentParams p = AgentParams::create(c, rng);
  constant_output(p.qo_target[0], VectorXd::Constant(1, 2.0));
  constant_output(p.qo_target[1], VectorXd::Constant(1, 1.5));
  constant_output(p.qa[0], VectorXd::Constant(1, 0.3));
  constant_output(p.qa[1], VectorXd::Constant(1, -0.2));
  Batch b = random_batch(c, 1, rng);
  b.r(0) = 0.7;
  b.done(0) = 0.0;
  double y = 0.7 + 0.9 * 1.5;
  double expected = (0.3 - y) * (0.3 - y) + (-0.2 - y) * (-0.2 - y);
  EXPECT_NEAR(critic_loss_action(p, b).loss, expected, 1e-10);
  b.done(0) = 1.0;
  expected = (0.3 - 0.7) * (0.3 - 0.7) + (-0.2 - 0.7) * (-0.2 - 0.7);
  EXPECT_NEAR(critic_loss_action(p, b).loss, expected, 1e-10);
}

TEST(CriticLossTest, HandComputedOptionTarget) {
  AgentConfig c = small_config(1);
  c.action_dim = 1;
  Rng rng(2);
  AgentParams p = AgentParams::create(c, rng);
  constant_output(p.qa_target[0], VectorXd::Constant(1, 1.25));
  constant_output(p.qa_target[1], VectorXd::Constant(1, 0.75));
  constant_output(p.qo[0], VectorXd::Constant(1, 0.1));
  constant_output(p.qo[1], VectorXd::Constant(1, 0.4));
  constant_output(p.pa, (VectorXd(2) << 0.1, -0.5).finished());
  Batch b = random_batch(c, 1, rng);
  b.a(0, 0) = 0.3;
  double u = std::atanh(0.3), sd = std::exp(-0.5);
  double logp = -0.5 * std::pow((u - 0.1) / sd, 2) + 0.5 - 0.5 * std::log(2 * M_PI) -
                std::log(1 - 0.3 * 0.3);
  double y = 0.75 - 0.3 * logp;
  double expected = (0.1 - y) * (0.1 - y) + (0.4 - y) * (0.4 - y);
  EXPECT_NEAR(critic_loss_option(p, b).loss, expected, 1e-10);
}

TEST(CriticLossTest, ZeroWhenOnlineEqualsTarget) {
  AgentConfig c = small_config(1);
  Rng rng(3);
  AgentParams p = AgentParams::create(c, rng);
  Batch b = random_batch(c, 1, rng);
  double y = critic_loss_action(p, b).target(0);
  constant_output(p.qa[0], VectorXd::Constant(1, y));
  constant_output(p.qa[1], VectorXd::Constant(1, y));
  EXPECT_NEAR(critic_loss_action(p, b).loss, 0.0, 1e-20);
}

TEST(OptionActorTest, UniformIsStationaryForConstantQ) {
  AgentConfig c = small_config(4);
  Rng rng(4);
  AgentParams p = AgentParams::create(c, rng);
  constant_output(p.qo[0], VectorXd::Constant(4, 0.7));
  constant_output(p.qo[1], VectorXd::Constant(4, 0.9));
  constant_output(p.po, VectorXd::Zero(4));
  Batch b = random_batch(c, 5, rng);
  OptionActorLoss l = actor_loss_option(p, b);
  EXPECT_LT(l.grad.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(l.grad_W.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(OptionActorTest, ConvergesToSoftmaxOfQ) {
  AgentConfig c = small_config(2);
  c.alpha_o = 1.0;
  c.lr = 0.05;
  Rng rng(5);
  AgentParams p = AgentParams::create(c, rng);
  constant_output(p.qo[0], (VectorXd(2) << 1.0, 0.0).finished());
  constant_output(p.qo[1], (VectorXd(2) << 1.0, 0.0).finished());
  Batch b = random_batch(c, 1, rng);
  nn::Adam opt(p.po.param_count(), 0.01);
  for (int i = 0; i < 5000; ++i) opt.step(p.po.params(), actor_loss_option(p, b).grad);
  MatrixXd pr = p.option_probs(b.s, b.o_prev);
  EXPECT_NEAR(pr(0, 0), 0.731059, 1e-5);
  EXPECT_NEAR(pr(1, 0), 0.268941, 1e-5);
}

TEST(ActionActorTest, ConstantCriticsPushLogStdUp) {
  AgentConfig c = small_config(2);
  Rng rng(6);
  AgentParams p = AgentParams::create(c, rng);
  constant_output(p.qa[0], VectorXd::Constant(1, 3.0));
  constant_output(p.qa[1], VectorXd::Constant(1, 3.0));
  int last = p.pa.n_layers() - 1;
  p.pa.weight(last).setZero();
  p.pa.bias(last) << 0.0, 0.0, -1.0, -1.0;
  Batch b = random_batch(c, 64, rng);
  MatrixXd noise = random_noise(c, 64, rng);
  ActionActorLoss l = actor_loss_action(p, b, noise);
  EXPECT_NEAR(l.loss, p.alpha_a() * l.log_pi.mean() - 3.0, 1e-12);
  // Bias gradient for log-std entries is negative: descent raises log-std.
  Eigen::Index bias_at = p.pa.param_count() - 4;
  EXPECT_LT(l.grad(bias_at + 2), 0.0);
  EXPECT_LT(l.grad(bias_at + 3), 0.0);
  EXPECT_EQ(actor_loss_action(p, b, noise).loss, l.loss);
}

TEST(TemperatureTest, StationaryAtTargetAndSign) {
  AgentConfig c = small_config(2);
  Rng rng(7);
  AgentParams p = AgentParams::create(c, rng);
  VectorXd logpi = VectorXd::Constant(5, -p.target_entropy_a);
  VectorXd ent = VectorXd::Constant(5, p.target_entropy_o);
  TemperatureLoss t = temperature_loss(p, logpi, ent);
  EXPECT_EQ(t.grad_log_alpha_a, 0.0);
  EXPECT_EQ(t.grad_log_alpha_o, 0.0);
  // Entropy below target: descent increases alpha.
  t = temperature_loss(p, VectorXd::Constant(5, -p.target_entropy_a + 1.0),
                       VectorXd::Constant(5, p.target_entropy_o - 0.2));
  EXPECT_LT(t.grad_log_alpha_a, 0.0);
  EXPECT_LT(t.grad_log_alpha_o, 0.0);
}

TEST(ActTest, GreedyTieBreaksLowAndDeterministicLimit) {
  AgentConfig c = small_config(4);
  c.action_dim = 1;
  Rng rng(8);
  AgentParams p = AgentParams::create(c, rng);
  constant_output(p.po, (VectorXd(4) << 2, 1, 1, 1).finished());
  constant_output(p.pa, (VectorXd(2) << 0.4, -1e9).finished());
  Rng r(1);
  auto d = act_with(p, VectorXd::Zero(3), 0, ActMode::Greedy, r);
  EXPECT_EQ(d.o, 0);
  EXPECT_DOUBLE_EQ(d.a(0), std::tanh(0.4));
  constant_output(p.po, (VectorXd(4) << 1, 3, 3, 0).finished());
  EXPECT_EQ(act_with(p, VectorXd::Zero(3), 2, ActMode::Greedy, r).o, 1);
}

TEST(ActTest, ExploreDeterministicUnderSeed) {
  AgentConfig c = small_config(3);
  Agent a1(c, 9), a2(c, 9);
  for (int i = 0; i < 20; ++i) {
    VectorXd s = VectorXd::Constant(3, 0.1 * i);
    auto d1 = a1.act(s, i % 3, ActMode::Explore);
    auto d2 = a2.act(s, i % 3, ActMode::Explore);
    EXPECT_EQ(d1.o, d2.o);
    EXPECT_EQ(d1.a, d2.a);
    EXPECT_LT(d1.a.cwiseAbs().maxCoeff(), 1.0);
  }
}

ReplayBuffer filled_buffer(const AgentConfig& c, int n, std::uint64_t seed) {
  ReplayBuffer buf(1000);
  Rng rng(seed);
  Batch b = random_batch(c, n, rng);
  for (int i = 0; i < n; ++i)
    buf.add({b.s.col(i), b.o_prev[i], b.a.col(i), b.r(i), b.s_next.col(i), b.o[i], b.done(i) > 0});
  return buf;
}

TEST(TrainStepTest, PolyakLimitsAndDeterminism) {
  AgentConfig c = small_config(3);
  ReplayBuffer buf = filled_buffer(c, 50, 3);
  for (double tau : {0.0, 1.0, 0.3}) {
    c.tau = tau;
    Agent agent(c, 11);
    AgentParams before = agent.params();
    agent.train_step(buf, 16);
    const AgentParams& after = agent.params();
    for (int i = 0; i < 2; ++i) {
      if (tau == 1.0) {
        EXPECT_EQ(after.qa_target[i].params(), after.qa[i].params());
        EXPECT_EQ(after.qo_target[i].params(), after.qo[i].params());
      } else if (tau == 0.0) {
        EXPECT_EQ(after.qa_target[i].params(), before.qa_target[i].params());
        EXPECT_EQ(after.qo_target[i].params(), before.qo_target[i].params());
      } else {
        double moved = (after.qa_target[i].params() - before.qa_target[i].params()).norm();
        double gap = (after.qa[i].params() - before.qa_target[i].params()).norm();
        EXPECT_LE(moved, tau * gap + 1e-15);
      }
    }
  }
  c.tau = 0.005;
  Agent a1(c, 12), a2(c, 12);
  for (int i = 0; i < 5; ++i) {
    TrainMetrics m1 = a1.train_step(buf, 16), m2 = a2.train_step(buf, 16);
    EXPECT_EQ(m1.loss_qa, m2.loss_qa);
    EXPECT_EQ(m1.loss_pa, m2.loss_pa);
    EXPECT_EQ(m1.alpha_o, m2.alpha_o);
    EXPECT_GT(m1.alpha_a, 0.0);
    EXPECT_GT(m1.alpha_o, 0.0);
  }
  MatrixXd pr = a1.params().option_probs(buf.sample(8, a1.train_rng()).s, std::vector<int>(8, 1));
  for (int b = 0; b < 8; ++b) EXPECT_NEAR(pr.col(b).sum(), 1.0, 1e-12);
}

TEST(TrainStepTest, FixedTemperatureStaysFixed) {
  AgentConfig c = small_config(2);
  c.auto_alpha = false;
  c.alpha_a = c.alpha_o = 0.05;
  ReplayBuffer buf = filled_buffer(c, 40, 4);
  Agent agent(c, 3);
  for (int i = 0; i < 3; ++i) agent.train_step(buf, 8);
  EXPECT_DOUBLE_EQ(agent.params().alpha_a(), 0.05);
  EXPECT_DOUBLE_EQ(agent.params().alpha_o(), 0.05);
}

TEST(SacReductionTest, SingleOptionMatchesReferenceSac) {
  AgentConfig c = small_config(1);
  c.action_dim = 1;
  c.hidden = {16, 16};
  const std::uint64_t seed = 21;
  Agent agent(c, seed);
  const AgentParams& p = agent.params();
  oracle::ReferenceSac ref(p.qa, p.qo, p.pa, p.W.row(0).transpose(), p.log_alpha_a,
                           p.target_entropy_a, c.gamma, c.tau, c.lr, c.adam_eps,
                           Rng::derive(seed, "train"));
  ReplayBuffer buf(10000);
  envs::PendulumEnv env;
  env.seed(5);
  VectorXd obs = env.reset();
  Rng act(2);
  for (int t = 0; t < 60; ++t) {
    VectorXd s = obs;
    auto d = agent.act(s, 0, ActMode::Explore, act);
    envs::StepResult r = env.step(d.a * 2.0);
    buf.add({s, 0, d.a, r.reward, r.obs, 0, r.done});
    ref.add({s, d.a, r.obs, r.reward, r.done});
    obs = r.obs;
    if (buf.size() < 16) continue;
    TrainMetrics m = agent.train_step(buf, 16);
    oracle::SacLosses l = ref.update(16);
    ASSERT_NEAR(m.loss_qa, l.q, 1e-8);
    ASSERT_NEAR(m.loss_qo, l.v, 1e-8);
    ASSERT_NEAR(m.loss_pa, l.pi, 1e-8);
    ASSERT_NEAR(m.loss_alpha_a, l.alpha, 1e-8);
  }
}

TEST(ReplayTest, FifoEvictionAndSamplingGuard) {
  ReplayBuffer buf(3);
  Rng rng(1);
  EXPECT_THROW(buf.sample(1, rng), std::logic_error);
  for (int i = 0; i < 5; ++i) {
    Transition t;
    t.s = t.s_next = t.a = VectorXd::Constant(1, i);
    buf.add(t);
  }
  EXPECT_EQ(buf.size(), 3u);
  EXPECT_EQ(buf.at(0).r, 0.0);
  EXPECT_EQ(buf.at(0).s(0), 2.0);
  EXPECT_EQ(buf.at(2).s(0), 4.0);
  Batch b = buf.sample(3, rng);
  for (int i = 0; i < 3; ++i) EXPECT_GE(b.s(0, i), 2.0);
}

TEST(ConcurrencyTest, QueueAndSnapshots) {
  TransitionQueue q;
  SnapshotSlot<std::vector<double>> slot;
  slot.publish(std::make_shared<const std::vector<double>>(100, 0.0));
  std::vector<std::thread> producers;
  for (int p = 0; p < 3; ++p)
    producers.emplace_back([&, p] {
      for (int i = 0; i < 500; ++i) {
        auto snap = slot.get();
        // Every snapshot is internally consistent.
        double first = snap->front();
        for (double v : *snap) ASSERT_EQ(v, first);
        Transition t;
        t.r = p;
        q.push(t);
      }
    });
  for (int v = 1; v <= 200; ++v) slot.publish(std::make_shared<const std::vector<double>>(100, v));
  for (auto& t : producers) t.join();
  q.close();
  std::vector<Transition> got;
  q.drain(got);
  EXPECT_EQ(got.size(), 1500u);
  EXPECT_FALSE(q.pop_wait().has_value());
  EXPECT_EQ(slot.version(), 201);
}

TEST(CheckpointTest, AgentRoundTrip) {
  AgentConfig c = small_config(3);
  Agent a(c, 1), b(c, 2);
  auto dir = (std::filesystem::temp_directory_path() / "hitmdp_agent_ckpt").string();
  a.save(dir);
  b.load(dir);
  EXPECT_EQ(a.params().W, b.params().W);
  EXPECT_EQ(a.params().pa.params(), b.params().pa.params());
  EXPECT_EQ(a.params().qo_target[1].params(), b.params().qo_target[1].params());
}

TEST(RunTest, ShortRunIsReproducible) {
  AgentConfig c;
  c.hidden = {16, 16};
  c.embed_dim = 4;
  TrainerConfig t;
  t.env = "pendulum";
  t.total_steps = 300;
  t.start_steps = 100;
  t.update_after = 100;
  t.batch_size = 16;
  t.eval_interval = 150;
  t.eval_episodes = 1;
  RunResult r1 = run_vmoc(c, t, 7), r2 = run_vmoc(c, t, 7);
  ASSERT_EQ(r1.rows.size(), 3u);
  for (std::size_t i = 0; i < r1.rows.size(); ++i) {
    EXPECT_EQ(r1.rows[i].ret_mean, r2.rows[i].ret_mean);
    EXPECT_EQ(r1.rows[i].train.loss_qa, r2.rows[i].train.loss_qa);
  }
  EXPECT_EQ(r1.updates, 201);
  t.threads = 2;
  RunResult r3 = run_vmoc(c, t, 7);
  EXPECT_EQ(r3.env_steps, 300);
  EXPECT_EQ(r3.rows.size(), 3u);
}

}  // namespace
}  // namespace hitmdp::vmoc
