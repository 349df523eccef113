#include "hitmdp/vmoc/agent.h"

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "hitmdp/nn/checkpoint.h"

namespace hitmdp::vmoc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void AgentConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("agent config: " + m); };
  if (obs_dim < 1) fail("obs_dim must be >= 1");
  if (!discrete() && action_dim < 1) fail("action_dim must be >= 1");
  if (action_count < 0) fail("action_count must be >= 0");
  if (n_options < 1) fail("n_options must be >= 1");
  if (embed_dim < 1) fail("embed_dim must be >= 1");
  if (hidden.empty() || hidden.size() > 3) fail("hidden must list 1 to 3 layer widths");
  for (int h : hidden)
    if (h < 1) fail("hidden widths must be positive");
  if (!(gamma >= 0.0 && gamma < 1.0)) fail("gamma must be in [0, 1)");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(tau >= 0.0 && tau <= 1.0)) fail("tau must be in [0, 1]");
  if (!(alpha_a > 0.0) || !(alpha_o > 0.0)) fail("temperatures must be positive");
  if (!(reward_scale > 0.0)) fail("reward_scale must be positive");
  if (!(explore_noise >= 0.0)) fail("explore_noise must be >= 0");
  if (!(log_std_min < log_std_max)) fail("log_std_min must be below log_std_max");
}

Agent::Agent(const AgentConfig& cfg, std::uint64_t seed)
    : act_rng_(Rng::derive(seed, "act")), train_rng_(Rng::derive(seed, "train")) {
  Rng init = Rng::substream(seed, "init");
  p_ = AgentParams::create(cfg, init);
  auto adam = [&](Eigen::Index n) { return nn::Adam(n, cfg.lr, 0.9, 0.999, cfg.adam_eps); };
  for (int i = 0; i < 2; ++i) {
    opt_qa_[i] = adam(p_.qa[i].param_count());
    opt_qo_[i] = adam(p_.qo[i].param_count());
  }
  opt_pa_ = adam(p_.pa.param_count());
  opt_po_ = adam(p_.po.param_count());
  opt_w_ = adam(p_.W.size());
  opt_alpha_a_ = adam(1);
  opt_alpha_o_ = adam(1);
}

Agent::Decision act_with(const AgentParams& p, const VectorXd& s, int o_prev, ActMode mode,
                         Rng& rng) {
  const AgentConfig& cfg = p.cfg;
  if (!s.allFinite()) throw std::invalid_argument("act: non-finite observation");
  MatrixXd sm = s;
  VectorXd logits = p.po.forward(MatrixXd(p.with_embedding(sm, {o_prev})), nullptr).col(0);
  if (!logits.allFinite())
    throw std::runtime_error("act: option policy produced non-finite logits");
  Agent::Decision d;
  auto sample_softmax = [&](const VectorXd& l) {
    VectorXd e = (l.array() - l.maxCoeff()).exp();
    std::vector<double> probs(e.data(), e.data() + e.size());
    double z = e.sum();
    for (double& x : probs) x /= z;
    return rng.categorical(probs);
  };
  if (mode == ActMode::Greedy) {
    Eigen::Index arg;
    logits.maxCoeff(&arg);  // first maximum
    d.o = static_cast<int>(arg);
  } else {
    d.o = sample_softmax(logits);
  }
  VectorXd out = p.pa.forward(MatrixXd(p.with_embedding(sm, {d.o})), nullptr).col(0);
  if (!out.allFinite()) throw std::runtime_error("act: action policy produced non-finite output");
  if (cfg.discrete()) {
    d.a.resize(1);
    if (mode == ActMode::Greedy) {
      Eigen::Index arg;
      out.maxCoeff(&arg);
      d.a(0) = static_cast<double>(arg);
    } else {
      d.a(0) = sample_softmax(out);
    }
    return d;
  }
  const int ad = cfg.action_dim;
  d.a.resize(ad);
  for (int j = 0; j < ad; ++j) {
    double u = out(j);
    if (mode == ActMode::Explore) {
      double ls = std::clamp(out(ad + j), cfg.log_std_min, cfg.log_std_max);
      u += std::exp(ls) * rng.normal();
      u += cfg.explore_noise * rng.normal();
    }
    d.a(j) = std::clamp(std::tanh(u), -1.0 + 1e-6, 1.0 - 1e-6);
  }
  return d;
}

Agent::Decision Agent::act(const VectorXd& s, int o_prev, ActMode mode, Rng& rng) const {
  return act_with(p_, s, o_prev, mode, rng);
}

void polyak_update(const nn::DenseNet& online, nn::DenseNet& target, double tau) {
  if (online.param_count() != target.param_count())
    throw std::invalid_argument("polyak_update: architecture mismatch");
  target.params() = tau * online.params() + (1.0 - tau) * target.params();
}

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite ") + what + " loss");
}

}  // namespace

TrainMetrics Agent::train_on(const Batch& batch, const MatrixXd& noise,
                             const MatrixXd* target_noise) {
  TrainMetrics m;
  CriticLoss qa = critic_loss_action(p_, batch);
  require_finite(qa.loss, "action critic");
  for (int i = 0; i < 2; ++i) opt_qa_[i].step(p_.qa[i].params(), qa.grads[i]);

  CriticLoss qo = critic_loss_option(p_, batch, target_noise);
  require_finite(qo.loss, "option critic");
  for (int i = 0; i < 2; ++i) opt_qo_[i].step(p_.qo[i].params(), qo.grads[i]);

  OptionActorLoss po = actor_loss_option(p_, batch);
  require_finite(po.loss, "option policy");
  opt_po_.step(p_.po.params(), po.grad);
  Eigen::Map<VectorXd> w(p_.W.data(), p_.W.size());
  opt_w_.step(w, Eigen::Map<const VectorXd>(po.grad_W.data(), po.grad_W.size()));

  ActionActorLoss pa = actor_loss_action(p_, batch, noise);
  require_finite(pa.loss, "action policy");
  opt_pa_.step(p_.pa.params(), pa.grad);

  for (int i = 0; i < 2; ++i) {
    polyak_update(p_.qa[i], p_.qa_target[i], p_.cfg.tau);
    polyak_update(p_.qo[i], p_.qo_target[i], p_.cfg.tau);
  }

  TemperatureLoss t = temperature_loss(p_, pa.log_pi, po.entropy);
  if (p_.cfg.auto_alpha) {
    VectorXd la(1), lo(1);
    la << p_.log_alpha_a;
    lo << p_.log_alpha_o;
    opt_alpha_a_.step(la, VectorXd::Constant(1, t.grad_log_alpha_a));
    opt_alpha_o_.step(lo, VectorXd::Constant(1, t.grad_log_alpha_o));
    p_.log_alpha_a = la(0);
    p_.log_alpha_o = lo(0);
  }

  m.loss_qa = qa.loss;
  m.loss_qo = qo.loss;
  m.loss_pa = pa.loss;
  m.loss_po = po.loss;
  m.loss_alpha_a = t.loss_a;
  m.loss_alpha_o = t.loss_o;
  m.alpha_a = p_.alpha_a();
  m.alpha_o = p_.alpha_o();
  m.ent_a = pa.entropy;
  m.ent_o = po.entropy.mean();
  return m;
}

TrainMetrics Agent::train_step(const ReplayBuffer& buffer, int batch_size) {
  Batch batch = buffer.sample(batch_size, train_rng_);
  const int ad = p_.cfg.discrete() ? 0 : p_.cfg.action_dim;
  MatrixXd noise(ad, batch_size);
  for (int b = 0; b < batch_size; ++b)
    for (int j = 0; j < ad; ++j) noise(j, b) = train_rng_.normal();
  if (p_.cfg.option_target_action == OptionTargetAction::Policy) {
    MatrixXd target_noise(ad, batch_size);
    for (int b = 0; b < batch_size; ++b)
      for (int j = 0; j < ad; ++j) target_noise(j, b) = train_rng_.normal();
    return train_on(batch, noise, &target_noise);
  }
  return train_on(batch, noise);
}

void Agent::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto path = [&](const std::string& n) { return (fs::path(dir) / n).string(); };
  for (int i = 0; i < 2; ++i) {
    nn::save_net(path("qa" + std::to_string(i + 1)), p_.qa[i]);
    nn::save_net(path("qa" + std::to_string(i + 1) + "_target"), p_.qa_target[i]);
    nn::save_net(path("qo" + std::to_string(i + 1)), p_.qo[i]);
    nn::save_net(path("qo" + std::to_string(i + 1) + "_target"), p_.qo_target[i]);
  }
  nn::save_net(path("policy_action"), p_.pa);
  nn::save_net(path("policy_option"), p_.po);
  nn::NamedTensor w{"W", {static_cast<int>(p_.W.rows()), static_cast<int>(p_.W.cols())}, {}};
  for (Eigen::Index r = 0; r < p_.W.rows(); ++r)
    for (Eigen::Index c = 0; c < p_.W.cols(); ++c) w.values.push_back(p_.W(r, c));
  nn::NamedTensor alpha{"log_alpha", {2}, {p_.log_alpha_a, p_.log_alpha_o}};
  nn::save_tensors(path("embedding"), {w, alpha});
}

void Agent::load(const std::string& dir) {
  namespace fs = std::filesystem;
  auto path = [&](const std::string& n) { return (fs::path(dir) / n).string(); };
  auto load_into = [&](nn::DenseNet& net, const std::string& name) {
    nn::DenseNet loaded = nn::load_net(path(name));
    if (loaded.layer_sizes() != net.layer_sizes())
      throw std::runtime_error("checkpoint " + name + " does not match the agent architecture");
    net = std::move(loaded);
  };
  for (int i = 0; i < 2; ++i) {
    load_into(p_.qa[i], "qa" + std::to_string(i + 1));
    load_into(p_.qa_target[i], "qa" + std::to_string(i + 1) + "_target");
    load_into(p_.qo[i], "qo" + std::to_string(i + 1));
    load_into(p_.qo_target[i], "qo" + std::to_string(i + 1) + "_target");
  }
  load_into(p_.pa, "policy_action");
  load_into(p_.po, "policy_option");
  auto tensors = nn::load_tensors(path("embedding"));
  for (const auto& t : tensors) {
    if (t.name == "W") {
      if (t.shape.size() != 2 || t.shape[0] != p_.W.rows() || t.shape[1] != p_.W.cols())
        throw std::runtime_error("checkpoint W shape mismatch");
      for (Eigen::Index r = 0; r < p_.W.rows(); ++r)
        for (Eigen::Index c = 0; c < p_.W.cols(); ++c) p_.W(r, c) = t.values[r * p_.W.cols() + c];
    } else if (t.name == "log_alpha" && t.values.size() == 2) {
      p_.log_alpha_a = t.values[0];
      p_.log_alpha_o = t.values[1];
    }
  }
}

}  // namespace hitmdp::vmoc
