#include "hitmdp/nn/dense_net.h"

#include <cmath>
#include <stdexcept>

namespace hitmdp::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation: " + s);
}

namespace {

void apply(Activation act, Eigen::MatrixXd& z) {
  switch (act) {
    case Activation::ReLU: z = z.cwiseMax(0.0); break;
    case Activation::Tanh: z = z.array().tanh().matrix(); break;
    case Activation::Identity: break;
  }
}

// Multiplies delta in place by the activation derivative, given the output.
void apply_derivative(Activation act, const Eigen::MatrixXd& out, Eigen::MatrixXd& delta) {
  switch (act) {
    case Activation::ReLU:
      delta = (out.array() > 0.0).select(delta.array(), 0.0).matrix();
      break;
    case Activation::Tanh:
      delta.array() *= 1.0 - out.array().square();
      break;
    case Activation::Identity: break;
  }
}

}  // namespace

DenseNet::DenseNet(std::vector<int> layer_sizes, std::vector<Activation> activations, Rng& rng)
    : sizes_(std::move(layer_sizes)), acts_(std::move(activations)) {
  layout();
  for (int l = 0; l < n_layers(); ++l) {
    double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    auto w = weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-bound, bound);
    auto b = bias(l);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.uniform(-bound, bound);
  }
}

DenseNet::DenseNet(std::vector<int> layer_sizes, std::vector<Activation> activations,
                   std::uint64_t seed) {
  Rng rng(seed);
  *this = DenseNet(std::move(layer_sizes), std::move(activations), rng);
}

void DenseNet::layout() {
  if (sizes_.size() < 2) throw std::invalid_argument("DenseNet: need at least two layer sizes");
  if (acts_.size() + 1 != sizes_.size())
    throw std::invalid_argument("DenseNet: one activation per layer required");
  if (n_layers() > kMaxLayers) throw std::invalid_argument("DenseNet: at most 4 layers");
  for (int s : sizes_)
    if (s < 1) throw std::invalid_argument("DenseNet: layer sizes must be positive");
  offsets_.clear();
  Eigen::Index n = 0;
  for (int l = 0; l < n_layers(); ++l) {
    offsets_.push_back(n);
    n += static_cast<Eigen::Index>(sizes_[l] + 1) * sizes_[l + 1];
  }
  params_ = Eigen::VectorXd::Zero(n);
}

Eigen::Map<Eigen::MatrixXd> DenseNet::weight(int l) {
  return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
Eigen::Map<const Eigen::MatrixXd> DenseNet::weight(int l) const {
  return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
Eigen::Map<Eigen::VectorXd> DenseNet::bias(int l) {
  return {params_.data() + offsets_[l] + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1],
          sizes_[l + 1]};
}
Eigen::Map<const Eigen::VectorXd> DenseNet::bias(int l) const {
  return {params_.data() + offsets_[l] + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1],
          sizes_[l + 1]};
}

Eigen::VectorXd DenseNet::forward(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd out = forward(Eigen::MatrixXd(x), nullptr);
  return out.col(0);
}

Eigen::MatrixXd DenseNet::forward(const Eigen::MatrixXd& x, ForwardCache* cache) const {
  if (x.rows() != input_dim())
    throw std::invalid_argument("DenseNet::forward: input has " + std::to_string(x.rows()) +
                                " rows, expected " + std::to_string(input_dim()));
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
  }
  Eigen::MatrixXd a = x;
  for (int l = 0; l < n_layers(); ++l) {
    Eigen::MatrixXd z = weight(l) * a;
    z.colwise() += bias(l);
    apply(acts_[l], z);
    if (cache) cache->inputs.push_back(std::move(a));
    a = std::move(z);
    if (cache) cache->outputs.push_back(a);
  }
  return a;
}

NetGradients DenseNet::backward(const ForwardCache& cache, const Eigen::MatrixXd& upstream) const {
  if (static_cast<int>(cache.outputs.size()) != n_layers())
    throw std::invalid_argument("DenseNet::backward: cache does not match the network");
  if (upstream.rows() != output_dim() || upstream.cols() != cache.outputs.back().cols())
    throw std::invalid_argument("DenseNet::backward: upstream shape mismatch");
  NetGradients g;
  g.params = Eigen::VectorXd::Zero(param_count());
  Eigen::MatrixXd delta = upstream;
  for (int l = n_layers() - 1; l >= 0; --l) {
    apply_derivative(acts_[l], cache.outputs[l], delta);
    Eigen::Map<Eigen::MatrixXd> dw(g.params.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
    dw.noalias() = delta * cache.inputs[l].transpose();
    Eigen::Map<Eigen::VectorXd> db(
        g.params.data() + offsets_[l] + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1],
        sizes_[l + 1]);
    db = delta.rowwise().sum();
    Eigen::MatrixXd prev = weight(l).transpose() * delta;
    delta = std::move(prev);
  }
  g.input = std::move(delta);
  return g;
}

NetGradients DenseNet::backward(const Eigen::VectorXd& x, const Eigen::VectorXd& upstream) const {
  ForwardCache cache;
  forward(Eigen::MatrixXd(x), &cache);
  return backward(cache, Eigen::MatrixXd(upstream));
}

Adam::Adam(Eigen::Index n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps),
      m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

void Adam::step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw std::invalid_argument("Adam::step: size mismatch");
  ++t_;
  m_ = b1_ * m_ + (1.0 - b1_) * grads;
  v_ = b2_ * v_ + (1.0 - b2_) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

double relative_error(double analytic, double numeric, double scale) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3 * scale, 1e-12});
  return std::abs(analytic - numeric) / denom;
}

double max_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  double scale = analytic.size() ? analytic.cwiseAbs().maxCoeff() : 0.0;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, relative_error(analytic(i), numeric(i), scale));
  return worst;
}

namespace {

bool near_kink(const DenseNet& net, const Eigen::VectorXd& x, double margin) {
  ForwardCache cache;
  net.forward(Eigen::MatrixXd(x), &cache);
  for (int l = 0; l < net.n_layers(); ++l) {
    if (net.activations()[l] != Activation::ReLU) continue;
    Eigen::VectorXd z = net.weight(l) * cache.inputs[l].col(0) + net.bias(l);
    if ((z.array().abs() < margin).any()) return true;
  }
  return false;
}

}  // namespace

double grad_check(const DenseNet& net, const LossFn& loss, int trials, Rng& rng,
                  const GradCheckOptions& opts) {
  if (trials < 1) throw std::invalid_argument("grad_check: trials must be >= 1");
  bool has_relu = false;
  for (Activation a : net.activations()) has_relu |= a == Activation::ReLU;
  double worst = 0.0;
  DenseNet probe = net;
  for (int t = 0; t < trials; ++t) {
    Eigen::VectorXd x(net.input_dim());
    for (int attempt = 0;; ++attempt) {
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(-1.0, 1.0);
      if (!has_relu || !near_kink(net, x, opts.kink_margin)) break;
      if (attempt >= opts.max_resamples)
        throw std::runtime_error("grad_check: could not find an input away from kinks");
    }
    Eigen::VectorXd dout;
    loss(net.forward(x), &dout);
    NetGradients g = net.backward(x, dout);

    auto eval = [&](const DenseNet& n, const Eigen::VectorXd& in) {
      return loss(n.forward(in), nullptr);
    };
    Eigen::VectorXd num_p(net.param_count());
    for (Eigen::Index i = 0; i < net.param_count(); ++i) {
      double keep = probe.params()(i);
      probe.params()(i) = keep + opts.step;
      double up = eval(probe, x);
      probe.params()(i) = keep - opts.step;
      double down = eval(probe, x);
      probe.params()(i) = keep;
      num_p(i) = (up - down) / (2.0 * opts.step);
    }
    Eigen::VectorXd num_x(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      Eigen::VectorXd xp = x, xm = x;
      xp(i) += opts.step;
      xm(i) -= opts.step;
      num_x(i) = (eval(net, xp) - eval(net, xm)) / (2.0 * opts.step);
    }
    worst = std::max(worst, max_relative_error(g.params, num_p));
    worst = std::max(worst, max_relative_error(g.input.col(0), num_x));
  }
  return worst;
}

}  // namespace hitmdp::nn
