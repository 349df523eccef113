#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>

#include "hitmdp/core/hitmdp.h"
#include "hitmdp/core/rng.h"

namespace hitmdp::envs {

struct EnvSpec {
  int obs_dim = 1;
  int action_dim = 1;    // continuous action dimension (1 for discrete envs)
  int action_count = 0;  // number of discrete actions, 0 when continuous
  int max_episode_steps = 1;
  double reward_min = 0.0;
  double reward_max = 0.0;

  bool discrete() const { return action_count > 0; }
};

struct StepResult {
  Eigen::VectorXd obs;
  double reward = 0.0;
  bool done = false;       // terminal state reached
  bool truncated = false;  // episode cap hit without termination
};

// Single-caller environment. Discrete envs read the action index from
// action(0).
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual void seed(std::uint64_t seed) = 0;
  virtual Eigen::VectorXd reset() = 0;
  virtual StepResult step(const Eigen::VectorXd& action) = 0;
  virtual std::unique_ptr<Env> clone() const = 0;
  virtual std::string id() const = 0;
};

// Environment over a finite state set with an exact tabular model.
class FiniteEnv : public Env {
 public:
  virtual int state() const = 0;
  virtual int n_states() const = 0;
  // Exact model with the given option count; the option carried into the
  // first step is option 0.
  virtual FiniteHiTMDP model(int n_options, double discount) const = 0;
  virtual Eigen::VectorXd observe(int state) const;

  StepResult step_index(int a) {
    Eigen::VectorXd v(1);
    v(0) = a;
    return step(v);
  }
};

class ChainEnv final : public FiniteEnv {
 public:
  // n states, actions 0 = left, 1 = right. With probability `slip` the move
  // goes the other way. The right terminus is absorbing and pays 1 per step;
  // stepping from it ends the episode.
  explicit ChainEnv(int n, double slip = 0.0, int max_episode_steps = 200);

  const EnvSpec& spec() const override { return spec_; }
  void seed(std::uint64_t seed) override { rng_ = Rng(seed); }
  Eigen::VectorXd reset() override;
  StepResult step(const Eigen::VectorXd& action) override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<ChainEnv>(*this); }
  std::string id() const override { return "chain:" + std::to_string(n_); }

  int state() const override { return s_; }
  int n_states() const override { return n_; }
  FiniteHiTMDP model(int n_options, double discount) const override;
  double slip() const { return slip_; }

 private:
  int n_;
  double slip_;
  EnvSpec spec_;
  Rng rng_{0};
  int s_ = 0;
  int t_ = 0;
};

class FourRoomsEnv final : public FiniteEnv {
 public:
  static constexpr int kSize = 13;
  static constexpr int kFreeCells = 104;

  // Actions 0 = up, 1 = down, 2 = left, 3 = right; moving into a wall stays.
  // Entering the goal pays 1 and ends the episode. Starts are uniform over
  // non-goal cells.
  explicit FourRoomsEnv(int max_episode_steps = 500);

  const EnvSpec& spec() const override { return spec_; }
  void seed(std::uint64_t seed) override { rng_ = Rng(seed); }
  Eigen::VectorXd reset() override;
  StepResult step(const Eigen::VectorXd& action) override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<FourRoomsEnv>(*this); }
  std::string id() const override { return "four_rooms"; }

  int state() const override { return s_; }
  int n_states() const override { return kFreeCells; }
  FiniteHiTMDP model(int n_options, double discount) const override;

  int goal() const { return goal_; }
  bool is_wall(int row, int col) const;
  int cell_index(int row, int col) const;  // -1 for walls
  std::pair<int, int> cell_position(int index) const;
  int next_state(int s, int a) const;
  // Set the current state directly (tests and evaluation).
  void set_state(int s);

 private:
  EnvSpec spec_;
  Rng rng_{0};
  std::vector<int> index_;  // grid -> free-cell index or -1
  std::vector<std::pair<int, int>> cells_;
  int goal_ = 0;
  int s_ = 0;
  int t_ = 0;
};

struct PendulumState {
  double theta = 0.0;  // 0 is upright
  double theta_dot = 0.0;
};

// Gym-style swing-up pendulum: g = 10, m = l = 1, torque in [-2, 2],
// semi-implicit Euler at dt = 0.05, 200-step episodes.
class PendulumEnv final : public Env {
 public:
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kMaxTorque = 2.0;
  static constexpr double kDt = 0.05;
  static constexpr double kGravity = 10.0;

  explicit PendulumEnv(int max_episode_steps = 200);

  const EnvSpec& spec() const override { return spec_; }
  void seed(std::uint64_t seed) override { rng_ = Rng(seed); }
  Eigen::VectorXd reset() override;
  StepResult step(const Eigen::VectorXd& action) override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<PendulumEnv>(*this); }
  std::string id() const override { return "pendulum"; }

  const PendulumState& state() const { return x_; }
  void set_state(const PendulumState& x) { x_ = x; }
  static Eigen::VectorXd observe(const PendulumState& x);
  static double reward(const PendulumState& x, double torque);
  // One integrator step. clip_speed = false gives the frictionless,
  // unclipped variant.
  static PendulumState integrate(const PendulumState& x, double torque, double dt,
                                 bool clip_speed = true);
  // Conserved quantity of the unclipped, unforced dynamics.
  static double energy(const PendulumState& x);

 private:
  EnvSpec spec_;
  Rng rng_{0};
  PendulumState x_;
  int t_ = 0;
};

double angle_normalize(double x);

// Builds an environment from "chain:N", "four_rooms" or "pendulum".
std::unique_ptr<Env> make_env(const std::string& id, std::uint64_t seed);

// Running mean and population variance with parallel (Chan) merging.
class RunningNormalizer {
 public:
  RunningNormalizer() = default;
  explicit RunningNormalizer(int dim)
      : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {}

  void update(const Eigen::VectorXd& x);
  void merge(const RunningNormalizer& other);
  // (x - mean) / sqrt(var + 1e-8); identity until two samples are seen.
  Eigen::VectorXd normalize(const Eigen::VectorXd& x, bool update);
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;

  double count() const { return count_; }
  int dim() const { return static_cast<int>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  Eigen::VectorXd variance() const;
  void set_state(double count, const Eigen::VectorXd& mean, const Eigen::VectorXd& m2);
  const Eigen::VectorXd& m2() const { return m2_; }

 private:
  double count_ = 0.0;
  Eigen::VectorXd mean_, m2_;
};

}  // namespace hitmdp::envs
