#include "hitmdp/envs/env.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hitmdp::envs {

Eigen::VectorXd FiniteEnv::observe(int state) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n_states());
  v(state) = 1.0;
  return v;
}

namespace {

int read_action(const Eigen::VectorXd& action, int count) {
  if (action.size() < 1 || !std::isfinite(action(0)))
    throw std::invalid_argument("discrete step: missing or non-finite action");
  int a = static_cast<int>(std::lround(action(0)));
  if (a < 0 || a >= count)
    throw std::invalid_argument("discrete step: action " + std::to_string(a) + " out of range");
  return a;
}

}  // namespace

// ---------------------------------------------------------------- chain

ChainEnv::ChainEnv(int n, double slip, int max_episode_steps) : n_(n), slip_(slip) {
  if (n < 2 || n > 50) throw std::invalid_argument("chain: n must be in [2, 50]");
  if (!(slip >= 0.0 && slip < 1.0)) throw std::invalid_argument("chain: slip must be in [0, 1)");
  spec_.obs_dim = n;
  spec_.action_dim = 1;
  spec_.action_count = 2;
  spec_.max_episode_steps = max_episode_steps;
  spec_.reward_min = 0.0;
  spec_.reward_max = 1.0;
}

Eigen::VectorXd ChainEnv::reset() {
  s_ = 0;
  t_ = 0;
  return observe(s_);
}

StepResult ChainEnv::step(const Eigen::VectorXd& action) {
  int a = read_action(action, 2);
  StepResult out;
  ++t_;
  if (s_ == n_ - 1) {
    out.reward = 1.0;
    out.done = true;
  } else {
    int dir = a == 1 ? 1 : -1;
    if (slip_ > 0.0 && rng_.uniform() < slip_) dir = -dir;
    s_ = std::clamp(s_ + dir, 0, n_ - 1);
  }
  out.obs = observe(s_);
  out.truncated = !out.done && t_ >= spec_.max_episode_steps;
  return out;
}

FiniteHiTMDP ChainEnv::model(int n_options, double discount) const {
  FiniteHiTMDP m(n_, n_options, 2, discount);
  for (int s = 0; s < n_; ++s) {
    if (s == n_ - 1) {
      for (int a = 0; a < 2; ++a) {
        m.transition(s, a, s) = 1.0;
        m.reward(s, a) = 1.0;
      }
      continue;
    }
    for (int a = 0; a < 2; ++a) {
      int dir = a == 1 ? 1 : -1;
      m.transition(s, a, std::clamp(s + dir, 0, n_ - 1)) += 1.0 - slip_;
      if (slip_ > 0.0) m.transition(s, a, std::clamp(s - dir, 0, n_ - 1)) += slip_;
    }
  }
  m.initial(0, 0) = 1.0;
  m.validate();
  return m;
}

// ---------------------------------------------------------------- four rooms

namespace {

constexpr const char* kFourRooms[FourRoomsEnv::kSize] = {
    "#############",
    "#     #     #",
    "#     #     #",
    "#           #",
    "#     #     #",
    "#     #     #",
    "## ####     #",
    "#     ### ###",
    "#     #     #",
    "#     #     #",
    "#           #",
    "#     #     #",
    "#############",
};

constexpr int kGoalIndex = 62;
constexpr int kMoves[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};

}  // namespace

FourRoomsEnv::FourRoomsEnv(int max_episode_steps) {
  index_.assign(kSize * kSize, -1);
  for (int r = 0; r < kSize; ++r)
    for (int c = 0; c < kSize; ++c)
      if (kFourRooms[r][c] != '#') {
        index_[r * kSize + c] = static_cast<int>(cells_.size());
        cells_.emplace_back(r, c);
      }
  if (static_cast<int>(cells_.size()) != kFreeCells)
    throw std::logic_error("four_rooms: layout does not have 104 free cells");
  goal_ = kGoalIndex;
  spec_.obs_dim = kFreeCells;
  spec_.action_dim = 1;
  spec_.action_count = 4;
  spec_.max_episode_steps = max_episode_steps;
  spec_.reward_min = 0.0;
  spec_.reward_max = 1.0;
}

bool FourRoomsEnv::is_wall(int row, int col) const {
  if (row < 0 || row >= kSize || col < 0 || col >= kSize) return true;
  return index_[row * kSize + col] < 0;
}

int FourRoomsEnv::cell_index(int row, int col) const {
  return is_wall(row, col) ? -1 : index_[row * kSize + col];
}

std::pair<int, int> FourRoomsEnv::cell_position(int index) const { return cells_.at(index); }

int FourRoomsEnv::next_state(int s, int a) const {
  auto [r, c] = cells_.at(s);
  int nr = r + kMoves[a][0], nc = c + kMoves[a][1];
  return is_wall(nr, nc) ? s : index_[nr * kSize + nc];
}

void FourRoomsEnv::set_state(int s) {
  if (s < 0 || s >= kFreeCells) throw std::invalid_argument("four_rooms: bad state");
  s_ = s;
  t_ = 0;
}

Eigen::VectorXd FourRoomsEnv::reset() {
  int k = rng_.uniform_int(kFreeCells - 1);
  s_ = k < goal_ ? k : k + 1;
  t_ = 0;
  return observe(s_);
}

StepResult FourRoomsEnv::step(const Eigen::VectorXd& action) {
  int a = read_action(action, 4);
  StepResult out;
  ++t_;
  if (s_ != goal_) {
    s_ = next_state(s_, a);
    if (s_ == goal_) {
      out.reward = 1.0;
      out.done = true;
    }
  } else {
    out.done = true;
  }
  out.obs = observe(s_);
  out.truncated = !out.done && t_ >= spec_.max_episode_steps;
  return out;
}

FiniteHiTMDP FourRoomsEnv::model(int n_options, double discount) const {
  FiniteHiTMDP m(kFreeCells, n_options, 4, discount);
  for (int s = 0; s < kFreeCells; ++s)
    for (int a = 0; a < 4; ++a) {
      if (s == goal_) {
        m.transition(s, a, s) = 1.0;
        continue;
      }
      int n = next_state(s, a);
      m.transition(s, a, n) = 1.0;
      if (n == goal_) m.reward(s, a) = 1.0;
    }
  for (int s = 0; s < kFreeCells; ++s)
    if (s != goal_) m.initial(s, 0) = 1.0 / (kFreeCells - 1);
  m.validate();
  return m;
}

// ---------------------------------------------------------------- pendulum

double angle_normalize(double x) {
  constexpr double pi = std::numbers::pi;
  double y = std::fmod(x + pi, 2.0 * pi);
  if (y < 0.0) y += 2.0 * pi;
  return y - pi;
}

PendulumEnv::PendulumEnv(int max_episode_steps) {
  spec_.obs_dim = 3;
  spec_.action_dim = 1;
  spec_.action_count = 0;
  spec_.max_episode_steps = max_episode_steps;
  constexpr double pi = std::numbers::pi;
  spec_.reward_min = -(pi * pi + 0.1 * kMaxSpeed * kMaxSpeed + 0.001 * kMaxTorque * kMaxTorque);
  spec_.reward_max = 0.0;
}

Eigen::VectorXd PendulumEnv::observe(const PendulumState& x) {
  return Eigen::Vector3d(std::cos(x.theta), std::sin(x.theta), x.theta_dot);
}

double PendulumEnv::reward(const PendulumState& x, double u) {
  double th = angle_normalize(x.theta);
  return -(th * th + 0.1 * x.theta_dot * x.theta_dot + 0.001 * u * u);
}

PendulumState PendulumEnv::integrate(const PendulumState& x, double u, double dt,
                                     bool clip_speed) {
  PendulumState n;
  n.theta_dot = x.theta_dot + (1.5 * kGravity * std::sin(x.theta) + 3.0 * u) * dt;
  if (clip_speed) n.theta_dot = std::clamp(n.theta_dot, -kMaxSpeed, kMaxSpeed);
  n.theta = x.theta + n.theta_dot * dt;
  return n;
}

double PendulumEnv::energy(const PendulumState& x) {
  return 0.5 * x.theta_dot * x.theta_dot + 1.5 * kGravity * std::cos(x.theta);
}

Eigen::VectorXd PendulumEnv::reset() {
  constexpr double pi = std::numbers::pi;
  x_.theta = rng_.uniform(-pi, pi);
  x_.theta_dot = rng_.uniform(-1.0, 1.0);
  t_ = 0;
  return observe(x_);
}

StepResult PendulumEnv::step(const Eigen::VectorXd& action) {
  if (action.size() != 1 || !std::isfinite(action(0)))
    throw std::invalid_argument("pendulum: action must be one finite torque");
  double u = std::clamp(action(0), -kMaxTorque, kMaxTorque);
  StepResult out;
  out.reward = reward(x_, u);
  x_ = integrate(x_, u, kDt);
  ++t_;
  out.obs = observe(x_);
  out.truncated = t_ >= spec_.max_episode_steps;
  return out;
}

// ---------------------------------------------------------------- factory

std::unique_ptr<Env> make_env(const std::string& id, std::uint64_t seed) {
  std::unique_ptr<Env> env;
  if (id == "four_rooms") {
    env = std::make_unique<FourRoomsEnv>();
  } else if (id == "pendulum") {
    env = std::make_unique<PendulumEnv>();
  } else if (id.rfind("chain:", 0) == 0) {
    std::string n = id.substr(6);
    if (n.empty() || n.find_first_not_of("0123456789") != std::string::npos || n.size() > 3)
      throw std::invalid_argument("bad chain id: " + id);
    env = std::make_unique<ChainEnv>(std::stoi(n));
  } else {
    throw std::invalid_argument("unknown environment id: " + id);
  }
  env->seed(seed);
  return env;
}

// ---------------------------------------------------------------- normalizer

void RunningNormalizer::update(const Eigen::VectorXd& x) {
  if (mean_.size() == 0) {
    mean_ = Eigen::VectorXd::Zero(x.size());
    m2_ = Eigen::VectorXd::Zero(x.size());
  }
  if (x.size() != mean_.size()) throw std::invalid_argument("normalizer: dimension mismatch");
  count_ += 1.0;
  Eigen::VectorXd delta = x - mean_;
  mean_ += delta / count_;
  m2_ += delta.cwiseProduct(x - mean_);
}

void RunningNormalizer::merge(const RunningNormalizer& other) {
  if (other.count_ == 0.0) return;
  if (count_ == 0.0) {
    *this = other;
    return;
  }
  if (other.mean_.size() != mean_.size())
    throw std::invalid_argument("normalizer: dimension mismatch");
  double n = count_ + other.count_;
  Eigen::VectorXd delta = other.mean_ - mean_;
  mean_ += delta * (other.count_ / n);
  m2_ += other.m2_ + delta.cwiseAbs2() * (count_ * other.count_ / n);
  count_ = n;
}

Eigen::VectorXd RunningNormalizer::variance() const {
  if (count_ == 0.0) return Eigen::VectorXd::Zero(mean_.size());
  return (m2_ / count_).cwiseMax(0.0);
}

Eigen::VectorXd RunningNormalizer::apply(const Eigen::VectorXd& x) const {
  if (count_ < 2.0) return x;
  if (x.size() != mean_.size()) throw std::invalid_argument("normalizer: dimension mismatch");
  return ((x - mean_).array() / (variance().array() + 1e-8).sqrt()).matrix();
}

Eigen::VectorXd RunningNormalizer::normalize(const Eigen::VectorXd& x, bool do_update) {
  if (do_update) update(x);
  return apply(x);
}

void RunningNormalizer::set_state(double count, const Eigen::VectorXd& mean,
                                  const Eigen::VectorXd& m2) {
  if (mean.size() != m2.size()) throw std::invalid_argument("normalizer: dimension mismatch");
  count_ = count;
  mean_ = mean;
  m2_ = m2;
}

}  // namespace hitmdp::envs
