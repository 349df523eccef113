#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hitmdp/core/rng.h"

namespace hitmdp::nn {

enum class Activation { ReLU, Tanh, Identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Per-layer values kept for backward; columns are samples.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> outputs;  // activation output of each layer
};

struct NetGradients {
  Eigen::VectorXd params;
  Eigen::MatrixXd input;
};

// Fully connected net, at most 4 layers, parameters in one flat vector laid
// out layer by layer as [W (out x in, column-major), b].
class DenseNet {
 public:
  static constexpr int kMaxLayers = 4;

  DenseNet() = default;
  DenseNet(std::vector<int> layer_sizes, std::vector<Activation> activations, Rng& rng);
  DenseNet(std::vector<int> layer_sizes, std::vector<Activation> activations,
           std::uint64_t seed);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  const std::vector<Activation>& activations() const { return acts_; }
  int n_layers() const { return static_cast<int>(acts_.size()); }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  Eigen::Index param_count() const { return params_.size(); }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  Eigen::Map<Eigen::MatrixXd> weight(int layer);
  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<Eigen::VectorXd> bias(int layer);
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, ForwardCache* cache) const;

  // Gradients of sum(upstream .* output) with respect to parameters and input.
  NetGradients backward(const ForwardCache& cache, const Eigen::MatrixXd& upstream) const;
  NetGradients backward(const Eigen::VectorXd& x, const Eigen::VectorXd& upstream) const;

 private:
  std::vector<int> sizes_;
  std::vector<Activation> acts_;
  std::vector<Eigen::Index> offsets_;  // start of each layer's W
  Eigen::VectorXd params_;

  void layout();
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(Eigen::Index n, double lr = 3e-4, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-5);

  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads);

  long steps() const { return t_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  double epsilon() const { return eps_; }
  const Eigen::VectorXd& first_moment() const { return m_; }
  const Eigen::VectorXd& second_moment() const { return v_; }

 private:
  double lr_ = 3e-4, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-5;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

// Relative error with a floor tied to the gradient scale, so coordinates that
// are tiny next to the largest one are judged on an absolute basis.
double relative_error(double analytic, double numeric, double scale);
double max_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric);

// loss(output, dloss_doutput) returns the scalar loss and fills its gradient.
using LossFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Resample inputs whose pre-activations fall within this distance of a kink.
  double kink_margin = 1e-3;
  int max_resamples = 1000;
};

// Worst relative error of backward against central differences over random
// inputs drawn uniformly from [-1, 1].
double grad_check(const DenseNet& net, const LossFn& loss, int trials, Rng& rng,
                  const GradCheckOptions& opts = {});

}  // namespace hitmdp::nn
