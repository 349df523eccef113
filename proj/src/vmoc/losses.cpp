#include <cmath>
#include <numbers>
#include <stdexcept>

#include "hitmdp/vmoc/agent.h"

namespace hitmdp::vmoc {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Column-wise softmax.
MatrixXd softmax_cols(const MatrixXd& logits) {
  MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    VectorXd e = (logits.col(b).array() - logits.col(b).maxCoeff()).exp();
    p.col(b) = e / e.sum();
  }
  return p;
}

double col_entropy(const MatrixXd& p, Eigen::Index b) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.rows(); ++k)
    if (p(k, b) > 0.0) h -= p(k, b) * std::log(p(k, b));
  return h;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// log(1 - tanh(u)^2) without cancellation.
double log_one_minus_tanh_sq(double u) {
  return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u));
}

constexpr double kHalfLog2Pi = 0.91893853320467274178;

// Gradient of sum_k p_k (alpha log p_k - q_k) with respect to the logits.
VectorXd soft_policy_logit_grad(const MatrixXd& p, const MatrixXd& q, Eigen::Index b,
                                double alpha) {
  double h = col_entropy(p, b);
  double pq = p.col(b).dot(q.col(b));
  VectorXd g(p.rows());
  for (Eigen::Index k = 0; k < p.rows(); ++k) {
    double lp = p(k, b) > 0.0 ? std::log(p(k, b)) : 0.0;
    g(k) = p(k, b) * (alpha * (lp + h) - (q(k, b) - pq));
  }
  return g;
}

void check_batch(const AgentParams& p, const Batch& batch) {
  if (batch.size() < 1) throw std::invalid_argument("vmoc loss: empty batch");
  if (batch.s.rows() != p.cfg.obs_dim)
    throw std::invalid_argument("vmoc loss: observation dimension mismatch");
}

}  // namespace

// ------------------------------------------------------------ AgentParams

AgentParams AgentParams::create(const AgentConfig& cfg, Rng& rng) {
  cfg.validate();
  AgentParams p;
  p.cfg = cfg;
  const int od = cfg.obs_dim, d = cfg.embed_dim, K = cfg.n_options;
  auto net = [&](int in, int out) {
    std::vector<int> sizes{in};
    std::vector<nn::Activation> acts;
    for (int h : cfg.hidden) {
      sizes.push_back(h);
      acts.push_back(nn::Activation::ReLU);
    }
    sizes.push_back(out);
    acts.push_back(nn::Activation::Identity);
    return nn::DenseNet(sizes, acts, rng);
  };
  for (int i = 0; i < 2; ++i)
    p.qa[i] = cfg.discrete() ? net(od + d, cfg.action_count) : net(od + d + cfg.action_dim, 1);
  for (int i = 0; i < 2; ++i) p.qo[i] = net(od, K);
  p.pa = cfg.discrete() ? net(od + d, cfg.action_count) : net(od + d, 2 * cfg.action_dim);
  p.po = net(od + d, K);
  p.W.resize(K, d);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < d; ++j) p.W(k, j) = rng.normal();
  p.qa_target = p.qa;
  p.qo_target = p.qo;
  p.log_alpha_a = std::log(cfg.alpha_a);
  p.log_alpha_o = std::log(cfg.alpha_o);
  p.target_entropy_a = std::isnan(cfg.target_entropy_a)
                           ? (cfg.discrete() ? 0.5 * std::log(static_cast<double>(cfg.action_count))
                                             : -static_cast<double>(cfg.action_dim))
                           : cfg.target_entropy_a;
  p.target_entropy_o = std::isnan(cfg.target_entropy_o) ? 0.5 * std::log(static_cast<double>(K))
                                                        : cfg.target_entropy_o;
  return p;
}

MatrixXd AgentParams::with_embedding(const MatrixXd& s, const std::vector<int>& o) const {
  const int od = static_cast<int>(s.rows()), d = static_cast<int>(W.cols());
  MatrixXd x(od + d, s.cols());
  x.topRows(od) = s;
  for (Eigen::Index b = 0; b < s.cols(); ++b) {
    int k = o[b];
    if (k < 0 || k >= W.rows()) throw std::invalid_argument("vmoc: option id out of range");
    x.block(od, b, d, 1) = W.row(k).transpose();
  }
  return x;
}

MatrixXd AgentParams::option_probs(const MatrixXd& s, const std::vector<int>& o_prev) const {
  return softmax_cols(po.forward(with_embedding(s, o_prev), nullptr));
}

MatrixXd AgentParams::critic_input(const MatrixXd& s, const std::vector<int>& o,
                                   const MatrixXd* a) const {
  MatrixXd x = with_embedding(s, o);
  if (cfg.discrete()) return x;
  MatrixXd full(x.rows() + a->rows(), x.cols());
  full.topRows(x.rows()) = x;
  full.bottomRows(a->rows()) = *a;
  return full;
}

VectorXd AgentParams::action_log_prob(const MatrixXd& s, const std::vector<int>& o,
                                      const MatrixXd& a) const {
  MatrixXd out = pa.forward(with_embedding(s, o), nullptr);
  VectorXd lp(s.cols());
  if (cfg.discrete()) {
    MatrixXd p = softmax_cols(out);
    for (Eigen::Index b = 0; b < s.cols(); ++b) {
      int idx = static_cast<int>(std::lround(a(0, b)));
      lp(b) = p(idx, b) > 0.0 ? std::log(p(idx, b)) : kLogZero;
    }
    return lp;
  }
  const int ad = cfg.action_dim;
  for (Eigen::Index b = 0; b < s.cols(); ++b) {
    double sum = 0.0;
    for (int j = 0; j < ad; ++j) {
      double ls = std::clamp(out(ad + j, b), cfg.log_std_min, cfg.log_std_max);
      double x = std::clamp(a(j, b), -1.0 + 1e-6, 1.0 - 1e-6);
      double u = std::atanh(x);
      double z = (u - out(j, b)) / std::exp(ls);
      sum += -0.5 * z * z - ls - kHalfLog2Pi - log_one_minus_tanh_sq(u);
    }
    lp(b) = sum;
  }
  return lp;
}

// ------------------------------------------------------------ losses

namespace {

// tanh(mu + sigma * noise), clamped inside (-1, 1).
MatrixXd sample_actions(const AgentParams& p, const MatrixXd& s, const std::vector<int>& o,
                        const MatrixXd& noise) {
  const int ad = p.cfg.action_dim;
  MatrixXd out = p.pa.forward(p.with_embedding(s, o), nullptr);
  MatrixXd a(ad, s.cols());
  for (Eigen::Index b = 0; b < s.cols(); ++b)
    for (int j = 0; j < ad; ++j) {
      double ls = std::clamp(out(ad + j, b), p.cfg.log_std_min, p.cfg.log_std_max);
      a(j, b) = std::clamp(std::tanh(out(j, b) + std::exp(ls) * noise(j, b)), -1.0 + 1e-6,
                           1.0 - 1e-6);
    }
  return a;
}

}  // namespace

CriticLoss critic_loss_action(const AgentParams& p, const Batch& batch) {
  check_batch(p, batch);
  const int B = batch.size();
  // Exact expectation over the next option.
  MatrixXd qn = p.qo_target[0].forward(batch.s_next, nullptr)
                    .cwiseMin(p.qo_target[1].forward(batch.s_next, nullptr));
  MatrixXd pn = p.option_probs(batch.s_next, batch.o);
  CriticLoss out;
  out.target.resize(B);
  const double ao = p.alpha_o();
  for (int b = 0; b < B; ++b) {
    double v = pn.col(b).dot(qn.col(b)) + ao * col_entropy(pn, b);
    out.target(b) = p.cfg.reward_scale * batch.r(b) + p.cfg.gamma * (1.0 - batch.done(b)) * v;
  }
  MatrixXd x = p.critic_input(batch.s, batch.o, &batch.a);
  for (int i = 0; i < 2; ++i) {
    nn::ForwardCache cache;
    MatrixXd q = p.qa[i].forward(x, &cache);
    MatrixXd up = MatrixXd::Zero(q.rows(), B);
    for (int b = 0; b < B; ++b) {
      int row = p.cfg.discrete() ? static_cast<int>(std::lround(batch.a(0, b))) : 0;
      double diff = q(row, b) - out.target(b);
      out.loss += diff * diff / B;
      up(row, b) = 2.0 * diff / B;
    }
    out.grads[i] = p.qa[i].backward(cache, up).params;
  }
  return out;
}

CriticLoss critic_loss_option(const AgentParams& p, const Batch& batch,
                              const MatrixXd* target_noise) {
  check_batch(p, batch);
  const int B = batch.size(), K = p.cfg.n_options;
  MatrixXd acts = batch.a;
  if (p.cfg.option_target_action == OptionTargetAction::Policy) {
    if (p.cfg.discrete()) {
      throw std::invalid_argument("critic_loss_option: policy target needs continuous actions");
    }
    if (!target_noise || target_noise->rows() != p.cfg.action_dim || target_noise->cols() != B)
      throw std::invalid_argument("critic_loss_option: target noise shape mismatch");
    acts = sample_actions(p, batch.s, batch.o, *target_noise);
  }
  MatrixXd x = p.critic_input(batch.s, batch.o, &acts);
  MatrixXd q1 = p.qa_target[0].forward(x, nullptr), q2 = p.qa_target[1].forward(x, nullptr);
  if (p.cfg.option_target_action == OptionTargetAction::Expected && !p.cfg.discrete())
    throw std::invalid_argument("critic_loss_option: expected target needs categorical actions");
  VectorXd logp = p.action_log_prob(batch.s, batch.o, acts);
  std::vector<double> marginal(K, 0.0);
  MatrixXd po;
  if (p.cfg.regularizer == RegularizerMode::MutualInfo) {
    for (int o : batch.o) marginal[o] += 1.0 / B;
    po = p.option_probs(batch.s, batch.o_prev);
  }
  CriticLoss out;
  out.target.resize(B);
  const double aa = p.alpha_a();
  const bool expected = p.cfg.option_target_action == OptionTargetAction::Expected;
  MatrixXd pa_probs;
  if (expected) pa_probs = softmax_cols(p.pa.forward(p.with_embedding(batch.s, batch.o), nullptr));
  for (int b = 0; b < B; ++b) {
    double f = 0.0;
    if (p.cfg.regularizer == RegularizerMode::MutualInfo)
      f = clamped_pmi(po(batch.o[b], b), marginal[batch.o[b]]);
    if (expected) {
      double v = 0.0;
      for (Eigen::Index k = 0; k < pa_probs.rows(); ++k) {
        double pk = pa_probs(k, b);
        if (pk > 0.0) v += pk * (std::min(q1(k, b), q2(k, b)) - aa * std::log(pk));
      }
      out.target(b) = f + v;
      continue;
    }
    int row = p.cfg.discrete() ? static_cast<int>(std::lround(acts(0, b))) : 0;
    out.target(b) = f + std::min(q1(row, b), q2(row, b)) - aa * logp(b);
  }
  for (int i = 0; i < 2; ++i) {
    nn::ForwardCache cache;
    MatrixXd q = p.qo[i].forward(batch.s, &cache);
    MatrixXd up = MatrixXd::Zero(K, B);
    for (int b = 0; b < B; ++b) {
      double diff = q(batch.o[b], b) - out.target(b);
      out.loss += diff * diff / B;
      up(batch.o[b], b) = 2.0 * diff / B;
    }
    out.grads[i] = p.qo[i].backward(cache, up).params;
  }
  return out;
}

ActionActorLoss actor_loss_action(const AgentParams& p, const Batch& batch,
                                  const MatrixXd& noise) {
  check_batch(p, batch);
  const int B = batch.size();
  const double aa = p.alpha_a();
  MatrixXd xin = p.with_embedding(batch.s, batch.o);
  nn::ForwardCache cache;
  MatrixXd out = p.pa.forward(xin, &cache);
  ActionActorLoss res;
  res.log_pi.resize(B);
  MatrixXd up(out.rows(), B);

  if (p.cfg.discrete()) {
    MatrixXd pr = softmax_cols(out);
    MatrixXd q = p.qa[0].forward(xin, nullptr).cwiseMin(p.qa[1].forward(xin, nullptr));
    for (int b = 0; b < B; ++b) {
      double h = col_entropy(pr, b);
      res.loss += (-aa * h - pr.col(b).dot(q.col(b))) / B;
      res.log_pi(b) = -h;
      up.col(b) = soft_policy_logit_grad(pr, q, b, aa) / B;
    }
  } else {
    const int ad = p.cfg.action_dim;
    if (noise.rows() != ad || noise.cols() != B)
      throw std::invalid_argument("actor_loss_action: noise shape mismatch");
    MatrixXd u(ad, B), act(ad, B), sigma(ad, B);
    for (int b = 0; b < B; ++b) {
      double lp = 0.0;
      for (int j = 0; j < ad; ++j) {
        double ls = std::clamp(out(ad + j, b), p.cfg.log_std_min, p.cfg.log_std_max);
        sigma(j, b) = std::exp(ls);
        u(j, b) = out(j, b) + sigma(j, b) * noise(j, b);
        act(j, b) = std::tanh(u(j, b));
        lp += -0.5 * noise(j, b) * noise(j, b) - ls - kHalfLog2Pi -
              log_one_minus_tanh_sq(u(j, b));
      }
      res.log_pi(b) = lp;
    }
    MatrixXd xq = p.critic_input(batch.s, batch.o, &act);
    std::array<nn::ForwardCache, 2> qc;
    MatrixXd q1 = p.qa[0].forward(xq, &qc[0]), q2 = p.qa[1].forward(xq, &qc[1]);
    MatrixXd m1 = MatrixXd::Zero(1, B), m2 = MatrixXd::Zero(1, B);
    for (int b = 0; b < B; ++b) {
      double qmin = std::min(q1(0, b), q2(0, b));
      (q1(0, b) <= q2(0, b) ? m1 : m2)(0, b) = 1.0;
      res.loss += (aa * res.log_pi(b) - qmin) / B;
    }
    // dQmin/da from the input gradient of whichever critic is smaller.
    MatrixXd dq = p.qa[0].backward(qc[0], m1).input + p.qa[1].backward(qc[1], m2).input;
    const int a_row = static_cast<int>(xq.rows()) - ad;
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < ad; ++j) {
        double du = (aa * 2.0 * act(j, b) - dq(a_row + j, b) * (1.0 - act(j, b) * act(j, b))) / B;
        up(j, b) = du;
        double raw = out(ad + j, b);
        bool inside = raw > p.cfg.log_std_min && raw < p.cfg.log_std_max;
        up(ad + j, b) = inside ? du * sigma(j, b) * noise(j, b) - aa / B : 0.0;
      }
  }
  res.entropy = -res.log_pi.mean();
  res.grad = p.pa.backward(cache, up).params;
  return res;
}

OptionActorLoss actor_loss_option(const AgentParams& p, const Batch& batch) {
  check_batch(p, batch);
  const int B = batch.size(), K = p.cfg.n_options, od = p.cfg.obs_dim;
  const double ao = p.alpha_o();
  MatrixXd xin = p.with_embedding(batch.s, batch.o_prev);
  nn::ForwardCache cache;
  MatrixXd pr = softmax_cols(p.po.forward(xin, &cache));
  MatrixXd q = p.qo[0].forward(batch.s, nullptr).cwiseMin(p.qo[1].forward(batch.s, nullptr));
  OptionActorLoss res;
  res.entropy.resize(B);
  MatrixXd up(K, B);
  for (int b = 0; b < B; ++b) {
    res.entropy(b) = col_entropy(pr, b);
    res.loss -= (pr.col(b).dot(q.col(b)) + ao * res.entropy(b)) / B;
    up.col(b) = soft_policy_logit_grad(pr, q, b, ao) / B;
  }
  nn::NetGradients g = p.po.backward(cache, up);
  res.grad = std::move(g.params);
  res.grad_W = MatrixXd::Zero(p.W.rows(), p.W.cols());
  for (int b = 0; b < B; ++b)
    res.grad_W.row(batch.o_prev[b]) += g.input.block(od, b, p.W.cols(), 1).transpose();
  return res;
}

TemperatureLoss temperature_loss(const AgentParams& p, const VectorXd& log_pi_a,
                                 const VectorXd& entropy_o) {
  if (log_pi_a.size() == 0 || entropy_o.size() == 0)
    throw std::invalid_argument("temperature_loss: empty batch");
  TemperatureLoss t;
  const double aa = p.alpha_a(), ao = p.alpha_o();
  double ma = (log_pi_a.array() + p.target_entropy_a).mean();
  double mo = (-entropy_o.array() + p.target_entropy_o).mean();
  t.loss_a = -aa * ma;
  t.loss_o = -ao * mo;
  // d alpha / d log alpha = alpha
  t.grad_log_alpha_a = -aa * ma;
  t.grad_log_alpha_o = -ao * mo;
  return t;
}

}  // namespace hitmdp::vmoc
