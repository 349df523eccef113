#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hitmdp/core/hitmdp.h"
#include "hitmdp/core/rng.h"
#include "hitmdp/nn/dense_net.h"
#include "hitmdp/vmoc/replay.h"

namespace hitmdp::vmoc {

// Action used inside the option-critic target: the buffered action, a fresh
// reparameterized sample from the current action policy, or (categorical
// heads only) the exact expectation over actions.
enum class OptionTargetAction { Buffer, Policy, Expected };

struct AgentConfig {
  int obs_dim = 3;
  int action_dim = 1;    // continuous action dimension
  int action_count = 0;  // > 0 selects a categorical action head
  int n_options = 4;
  int embed_dim = 40;
  std::vector<int> hidden = {256, 256};
  double gamma = 0.99;
  double lr = 3e-4;
  double adam_eps = 1e-5;
  double tau = 0.005;  // Polyak rate of the target critics
  bool auto_alpha = true;
  double alpha_a = 0.05;  // initial (or fixed) temperatures
  double alpha_o = 0.05;
  // NaN selects the defaults: -action_dim (0.5 log A for categorical actions)
  // and 0.5 log K.
  double target_entropy_a = std::numeric_limits<double>::quiet_NaN();
  double target_entropy_o = std::numeric_limits<double>::quiet_NaN();
  RegularizerMode regularizer = RegularizerMode::Zero;
  double reward_scale = 1.0;
  OptionTargetAction option_target_action = OptionTargetAction::Buffer;
  double explore_noise = 0.2;
  double log_std_min = -20.0;
  double log_std_max = 2.0;

  bool discrete() const { return action_count > 0; }
  void validate() const;
};

// All learnable state of the agent. W (K x d) belongs to the option policy.
struct AgentParams {
  AgentConfig cfg;
  std::array<nn::DenseNet, 2> qa, qa_target;  // action critics
  std::array<nn::DenseNet, 2> qo, qo_target;  // option critics, K outputs
  nn::DenseNet pa;                             // action policy
  nn::DenseNet po;                             // option policy, K logits
  Eigen::MatrixXd W;
  double log_alpha_a = 0.0;
  double log_alpha_o = 0.0;
  double target_entropy_a = 0.0;
  double target_entropy_o = 0.0;

  static AgentParams create(const AgentConfig& cfg, Rng& rng);

  double alpha_a() const { return std::exp(log_alpha_a); }
  double alpha_o() const { return std::exp(log_alpha_o); }
  int n_options() const { return cfg.n_options; }
  // Rows [s; W[o]] for each column of s.
  Eigen::MatrixXd with_embedding(const Eigen::MatrixXd& s, const std::vector<int>& o) const;
  // Option-policy probabilities, K x B.
  Eigen::MatrixXd option_probs(const Eigen::MatrixXd& s, const std::vector<int>& o_prev) const;
  // Action critic inputs [s; W[o]; a] (continuous) or [s; W[o]] (categorical).
  Eigen::MatrixXd critic_input(const Eigen::MatrixXd& s, const std::vector<int>& o,
                               const Eigen::MatrixXd* a) const;
  // log pi^A(a | s, o) of given actions, one entry per column.
  Eigen::VectorXd action_log_prob(const Eigen::MatrixXd& s, const std::vector<int>& o,
                                  const Eigen::MatrixXd& a) const;
};

struct CriticLoss {
  double loss = 0.0;
  std::array<Eigen::VectorXd, 2> grads;
  Eigen::VectorXd target;  // regression target per sample
};

struct ActionActorLoss {
  double loss = 0.0;
  Eigen::VectorXd grad;
  Eigen::VectorXd log_pi;  // per sample; -entropy for categorical heads
  double entropy = 0.0;    // batch estimate of H[pi^A]
};

struct OptionActorLoss {
  double loss = 0.0;
  Eigen::VectorXd grad;  // option-policy network parameters
  Eigen::MatrixXd grad_W;
  Eigen::VectorXd entropy;  // H[pi^O(.|s, o_prev)] per sample
};

struct TemperatureLoss {
  double loss_a = 0.0, loss_o = 0.0;
  double grad_log_alpha_a = 0.0, grad_log_alpha_o = 0.0;
};

CriticLoss critic_loss_action(const AgentParams& p, const Batch& batch);
// target_noise (action_dim x B) is used only with OptionTargetAction::Policy.
CriticLoss critic_loss_option(const AgentParams& p, const Batch& batch,
                              const Eigen::MatrixXd* target_noise = nullptr);
// noise: action_dim x B standard normals (ignored by categorical heads).
ActionActorLoss actor_loss_action(const AgentParams& p, const Batch& batch,
                                  const Eigen::MatrixXd& noise);
OptionActorLoss actor_loss_option(const AgentParams& p, const Batch& batch);
// log_pi_a: log pi^A of the actor's sampled actions; entropy_o: H[pi^O] per
// sample. The option term uses E[log pi^O] = -H exactly.
TemperatureLoss temperature_loss(const AgentParams& p, const Eigen::VectorXd& log_pi_a,
                                 const Eigen::VectorXd& entropy_o);

enum class ActMode { Explore, Greedy };

struct TrainMetrics {
  double loss_qa = 0.0, loss_qo = 0.0, loss_pa = 0.0, loss_po = 0.0;
  double loss_alpha_a = 0.0, loss_alpha_o = 0.0;
  double alpha_a = 0.0, alpha_o = 0.0;
  double ent_a = 0.0, ent_o = 0.0;
};

class Agent {
 public:
  Agent(const AgentConfig& cfg, std::uint64_t seed);

  AgentParams& params() { return p_; }
  const AgentParams& params() const { return p_; }
  const AgentConfig& config() const { return p_.cfg; }

  struct Decision {
    int o = 0;
    Eigen::VectorXd a;  // in [-1, 1] per dim, or a(0) = index for categorical
  };
  Decision act(const Eigen::VectorXd& s, int o_prev, ActMode mode, Rng& rng) const;
  Decision act(const Eigen::VectorXd& s, int o_prev, ActMode mode) { return act(s, o_prev, mode, act_rng_); }

  // One Appendix-B pass: action critics, option critics, option policy,
  // action policy, Polyak update, temperatures.
  TrainMetrics train_step(const ReplayBuffer& buffer, int batch_size);
  TrainMetrics train_on(const Batch& batch, const Eigen::MatrixXd& noise,
                        const Eigen::MatrixXd* target_noise = nullptr);
  Rng& train_rng() { return train_rng_; }

  void save(const std::string& dir) const;
  void load(const std::string& dir);

 private:
  AgentParams p_;
  std::array<nn::Adam, 2> opt_qa_, opt_qo_;
  nn::Adam opt_pa_, opt_po_, opt_w_, opt_alpha_a_, opt_alpha_o_;
  Rng act_rng_, train_rng_;
};

// Same forward pass as Agent::act over a read-only parameter set.
Agent::Decision act_with(const AgentParams& p, const Eigen::VectorXd& s, int o_prev,
                         ActMode mode, Rng& rng);

// psi_bar <- tau psi + (1 - tau) psi_bar
void polyak_update(const nn::DenseNet& online, nn::DenseNet& target, double tau);

}  // namespace hitmdp::vmoc
