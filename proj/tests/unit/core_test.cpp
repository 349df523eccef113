#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hitmdp/core/hitmdp.h"
#include "hitmdp/core/json_io.h"

namespace hitmdp {
namespace {

// Two states, two options, two actions, deterministic swap dynamics.
FiniteHiTMDP swap_mdp() {
  FiniteHiTMDP m(2, 2, 2, 0.9);
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) m.transition(s, a, 1 - s) = 1.0;
  m.initial(0, 0) = 1.0;
  return m;
}

Trajectory make_traj(std::initializer_list<Step> steps) { return Trajectory{steps}; }

// Product of raw table entries along the trajectory, HiT-MDP factorization.
double factor_product(const FiniteHiTMDP& m, const TabularPolicies& p, const Trajectory& tau) {
  double prod = 1.0;
  for (std::size_t t = 0; t < tau.steps.size(); ++t) {
    const Step& st = tau.steps[t];
    prod *= t == 0 ? m.initial(st.s, st.o_prev)
                   : m.transition(tau.steps[t - 1].s, tau.steps[t - 1].a, st.s);
    prod *= p.option_policy(st.s, st.o_prev, st.o);
    prod *= p.action_policy(st.s, st.o, st.a);
  }
  return prod;
}

TEST(HitmdpTest, ValidatesRowSums) {
  FiniteHiTMDP m = swap_mdp();
  EXPECT_NO_THROW(m.validate());
  m.transition(0, 0, 0) = 1e-9;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  m = swap_mdp();
  m.initial(1, 1) = 1e-11;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  m = swap_mdp();
  m.discount = 1.0;
  EXPECT_THROW(m.validate(), std::invalid_argument);
}

TEST(HitmdpTest, DeterministicFactorsGiveZero) {
  FiniteHiTMDP m(1, 1, 1, 0.5);
  m.transition(0, 0, 0) = 1.0;
  m.initial(0, 0) = 1.0;
  TabularPolicies p = TabularPolicies::uniform(1, 1, 1);
  p.smdp_termination = Table2(1, 1, 1.0);
  p.smdp_master = Table2(1, 1, 1.0);
  Trajectory tau = make_traj({{0, 0, 0, 0, 0.0}});
  EXPECT_EQ(traj_logprob_hitmdp(m, p, tau), 0.0);
  EXPECT_EQ(traj_logprob_smdp(m, p, tau), 0.0);
}

TEST(HitmdpTest, UniformFactorsThreeSteps) {
  FiniteHiTMDP m = swap_mdp();
  TabularPolicies p = TabularPolicies::uniform(2, 2, 2);
  Trajectory tau = make_traj({{0, 0, 1, 1, 0.0}, {1, 1, 0, 0, 0.0}, {0, 0, 0, 1, 0.0}});
  EXPECT_NEAR(traj_logprob_hitmdp(m, p, tau), 3.0 * (std::log(0.5) + std::log(0.5)), 1e-12);
  EXPECT_NEAR(traj_logprob_hitmdp(m, p, tau), -4.158883, 1e-6);
}

TEST(HitmdpTest, RandomTablesMatchFactorProduct) {
  Rng rng(7);
  FiniteHiTMDP m = random_hitmdp(3, 2, 2, 0.9, rng);
  TabularPolicies p = TabularPolicies::random(3, 2, 2, rng);
  Trajectory tau;
  int op = 1;
  for (int t = 0; t < 4; ++t) {
    Step st{rng.uniform_int(3), op, rng.uniform_int(2), rng.uniform_int(2), 0.0};
    tau.steps.push_back(st);
    op = st.o;
  }
  EXPECT_NEAR(traj_logprob_hitmdp(m, p, tau), std::log(factor_product(m, p, tau)), 1e-12);
}

TEST(HitmdpTest, SmdpUniformHalfTables) {
  FiniteHiTMDP m(2, 2, 2, 0.9);
  for (double& x : m.transition.data()) x = 0.5;
  for (double& x : m.initial.data()) x = 0.25;
  TabularPolicies p = TabularPolicies::uniform(2, 2, 2);
  p.smdp_termination = Table2(2, 2, 0.5);
  p.smdp_master = Table2(2, 2, 0.5);
  Trajectory tau = make_traj({{0, 1, 0, 1, 0.0}, {1, 1, 1, 0, 0.0}});
  // initial 0.25; step 0 bracket 0.5*1 + 0.5*0.5, action 0.5;
  // transition 0.5; step 1 bracket 0.5*0 + 0.5*0.5, action 0.5.
  double expected = std::log(0.25) + std::log(0.75) + std::log(0.5) + std::log(0.5) +
                    std::log(0.25) + std::log(0.5);
  EXPECT_NEAR(traj_logprob_smdp(m, p, tau), expected, 1e-12);
}

TEST(HitmdpTest, SmdpContinuationAddsUp) {
  Rng rng(11);
  FiniteHiTMDP m = random_hitmdp(3, 2, 2, 0.9, rng);
  TabularPolicies p = TabularPolicies::random(3, 2, 2, rng);
  Table2 beta(2, 3), master(3, 2);
  for (double& b : beta.data()) b = rng.uniform();
  for (int s = 0; s < 3; ++s) random_distribution(master.row(s), 2, rng);
  p.smdp_termination = beta;
  p.smdp_master = master;
  Trajectory whole;
  int op = 0;
  for (int t = 0; t < 5; ++t) {
    Step st{rng.uniform_int(3), op, rng.uniform_int(2), rng.uniform_int(2), 0.0};
    whole.steps.push_back(st);
    op = st.o;
  }
  Trajectory head{{whole.steps.begin(), whole.steps.begin() + 2}};
  Trajectory tail{{whole.steps.begin() + 2, whole.steps.end()}};
  double joined = traj_logprob_smdp(m, p, whole);
  double split = traj_logprob_smdp(m, p, head) + traj_logprob_smdp(m, p, tail, &head.steps.back());
  EXPECT_NEAR(joined, split, 1e-12);
}

TEST(HitmdpTest, SmdpCollapsesToHitmdp) {
  Rng rng(5);
  FiniteHiTMDP m = random_hitmdp(3, 2, 2, 0.9, rng);
  TabularPolicies p = TabularPolicies::random(3, 2, 2, rng);
  Table2 master(3, 2);
  for (int s = 0; s < 3; ++s) random_distribution(master.row(s), 2, rng);
  for (int s = 0; s < 3; ++s)
    for (int op = 0; op < 2; ++op)
      for (int o = 0; o < 2; ++o) p.option_policy(s, op, o) = master(s, o);
  p.smdp_termination = Table2(2, 3, 1.0);
  p.smdp_master = master;
  for (int trial = 0; trial < 20; ++trial) {
    Trajectory tau;
    int op = rng.uniform_int(2);
    for (int t = 0; t < 4; ++t) {
      Step st{rng.uniform_int(3), op, rng.uniform_int(2), rng.uniform_int(2), 0.0};
      tau.steps.push_back(st);
      op = st.o;
    }
    EXPECT_NEAR(traj_logprob_smdp(m, p, tau), traj_logprob_hitmdp(m, p, tau), 1e-12);
  }
}

TEST(HitmdpTest, ZeroProbabilityGivesSentinel) {
  FiniteHiTMDP m = swap_mdp();
  TabularPolicies p = TabularPolicies::uniform(2, 2, 2);
  Trajectory tau = make_traj({{0, 0, 0, 0, 0.0}, {0, 0, 0, 0, 0.0}});  // 0 -> 0 impossible
  EXPECT_EQ(traj_logprob_hitmdp(m, p, tau), kLogZero);
}

TEST(HitmdpTest, RejectsBrokenOptionChain) {
  FiniteHiTMDP m = swap_mdp();
  TabularPolicies p = TabularPolicies::uniform(2, 2, 2);
  Trajectory tau = make_traj({{0, 0, 0, 1, 0.0}, {1, 0, 0, 0, 0.0}});
  EXPECT_THROW(traj_logprob_hitmdp(m, p, tau), std::invalid_argument);
  EXPECT_THROW(traj_logprob_smdp(m, p, tau), std::invalid_argument);  // no SMDP tables
}

// Enumerates all trajectories of horizon T and sums their probabilities.
TEST(HitmdpTest, TrajectoryMassSumsToOne) {
  Rng rng(3);
  for (auto [S, K, A] : {std::tuple{2, 2, 2}, std::tuple{3, 2, 2}, std::tuple{2, 3, 4}}) {
    FiniteHiTMDP m = random_hitmdp(S, K, A, 0.9, rng);
    TabularPolicies p = TabularPolicies::random(S, K, A, rng);
    const int T = 3;
    const int per_step = S * K * A;
    long total = 1;
    for (int t = 0; t < T; ++t) total *= per_step;
    double mass = 0.0;
    for (int o0 = 0; o0 < K; ++o0)
      for (long code = 0; code < total; ++code) {
        Trajectory tau;
        long c = code;
        int op = o0;
        for (int t = 0; t < T; ++t) {
          int cell = static_cast<int>(c % per_step);
          c /= per_step;
          Step st{cell / (K * A), op, cell % A, (cell / A) % K, 0.0};
          tau.steps.push_back(st);
          op = st.o;
        }
        double lp = traj_logprob_hitmdp(m, p, tau);
        if (lp > kLogZero) mass += std::exp(lp);
      }
    EXPECT_NEAR(mass, 1.0, 1e-9) << S << " " << K << " " << A;
  }
}

TEST(OptimalityTest, SumsRewardAndRegularizer) {
  FiniteHiTMDP m = swap_mdp();
  Trajectory tau = make_traj({{0, 0, 0, 0, 0.0}, {1, 0, 1, 0, 0.0}});
  EXPECT_EQ(optimality_loglik(m, tau, {0.0, 0.0}), 0.0);
  m.reward(0, 0) = 1.0;
  m.reward(1, 1) = 2.0;
  EXPECT_NEAR(optimality_loglik(m, tau, {-0.1, -0.2}), 2.7, 1e-12);
  EXPECT_THROW(optimality_loglik(m, tau, {0.1, 0.0}), std::invalid_argument);
}

TEST(OptimalityTest, SeededSumAndPermutationInvariance) {
  Rng rng(21);
  FiniteHiTMDP m = random_hitmdp(4, 2, 3, 0.9, rng);
  Trajectory tau;
  std::vector<double> f;
  double expected = 0.0;
  for (int t = 0; t < 6; ++t) {
    Step st{rng.uniform_int(4), 0, rng.uniform_int(3), 0, 0.0};
    tau.steps.push_back(st);
    f.push_back(-rng.uniform());
    expected += m.reward(st.s, st.a) + f.back();
  }
  EXPECT_NEAR(optimality_loglik(m, tau, f), expected, 1e-12);
  Trajectory rev = tau;
  std::reverse(rev.steps.begin(), rev.steps.end());
  std::vector<double> frev(f.rbegin(), f.rend());
  EXPECT_NEAR(optimality_loglik(m, rev, frev), optimality_loglik(m, tau, f), 1e-12);
}

TEST(MutualInfoTest, ClampedLogRatio) {
  TabularPolicies p = TabularPolicies::uniform(1, 4, 1);
  EXPECT_EQ(mutual_info_regularizer(p, {0.25, 0.25, 0.25, 0.25}, 0, 0, 2), 0.0);
  EXPECT_NEAR(mutual_info_regularizer(p, {0.5, 0.5, 0.0, 0.0}, 0, 0, 1), std::log(0.5), 1e-12);
  EXPECT_NEAR(mutual_info_regularizer(p, {0.5, 0.5, 0.0, 0.0}, 0, 0, 1), -0.693147, 1e-6);
  EXPECT_EQ(mutual_info_regularizer(p, {0.5, 0.5, 0.0, 0.0}, 0, 0, 2), kLogZero);
  TabularPolicies q = TabularPolicies::uniform(1, 2, 1);
  q.option_policy(0, 0, 0) = 0.9;
  q.option_policy(0, 0, 1) = 0.1;
  EXPECT_EQ(mutual_info_regularizer(q, {0.5, 0.5}, 0, 0, 0), 0.0);
}

TEST(JsonTest, RoundTrip) {
  Rng rng(9);
  FiniteHiTMDP m = random_hitmdp(3, 2, 2, 0.95, rng);
  FiniteHiTMDP back = hitmdp_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.transition.data(), m.transition.data());
  EXPECT_EQ(back.reward.data(), m.reward.data());
  EXPECT_EQ(back.initial.data(), m.initial.data());
  EXPECT_EQ(back.discount, m.discount);
  auto j = to_json(m);
  j["transition"][0][0][0] = 2.0;
  EXPECT_THROW(hitmdp_from_json(j), std::invalid_argument);
}

TEST(RngTest, SubstreamsAreReproducibleAndDistinct) {
  Rng a = Rng::substream(42, "env"), b = Rng::substream(42, "env"), c = Rng::substream(42, "agent");
  for (int i = 0; i < 5; ++i) {
    auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

}  // namespace
}  // namespace hitmdp
