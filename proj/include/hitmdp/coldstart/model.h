#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "hitmdp/coldstart/corpus.h"
#include "hitmdp/core/rng.h"
#include "hitmdp/nn/dense_net.h"

namespace hitmdp::coldstart {

struct ModelConfig {
  int vocab = Vocab::kSize;
  int n_latent = 6;       // K
  int latent_len = 3;     // L
  int token_dim = 1;      // shared token table: summaries and the answer decoder
  int cot_dim = 4;        // the CoT decoder's own token table
  int latent_dim = 4;     // columns of W_emb
  int max_positions = 16; // decoder position one-hots, including the end marker
  double kl_weight = 0.1;
  double gumbel_temperature = 0.5;

  void validate() const;
  long long latent_space() const;  // K^L, saturating at 2^62
};

// Linear-softmax heads over mean-pooled embeddings.
//   prior     z = M_p [m(W); m(W_emb[o_<i]); e_i] + b_p
//   posterior z = prior z + M_q [m(W); m(Y^r); m(Y^a); m(W_emb[o_<i]); e_i] + b_q
//   decoders  h = A [m_D(W); m(W_emb[o]); m_D(y_<t); e_t] + a
//             logits_v = 2 D_v.h - |D_v|^2 + c_v + C_{v,t}
// The shared table E feeds the prior and posterior summaries and serves as D
// for the answer decoder; the CoT decoder has its own table. The output layer
// scores tokens by distance to h, up to a per-token bias.
class LatentReasoningModel {
 public:
  LatentReasoningModel() = default;
  static LatentReasoningModel create(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  // Named blocks, each with its offset into params().
  struct Block {
    std::string name;
    int rows, cols;
    Eigen::Index offset;
  };
  const std::vector<Block>& blocks() const { return blocks_; }
  const Block& block(const std::string& name) const;
  Eigen::Map<Eigen::MatrixXd> mat(const std::string& name);
  Eigen::Map<const Eigen::MatrixXd> mat(const std::string& name) const;
  static Eigen::Map<Eigen::MatrixXd> view(Eigen::VectorXd& v, const Block& b);

  int prior_features() const;
  int posterior_features() const;
  int decoder_features(bool cot) const;

  // Zeroes the posterior correction so that q(.|o_<i, W, Y) equals p(.|o_<i, W).
  void copy_prior_into_posterior();

  void save(const std::string& stem) const;
  static LatentReasoningModel load(const std::string& stem);

 private:
  ModelConfig cfg_;
  Eigen::VectorXd params_;
  std::vector<Block> blocks_;
  void layout();
};

struct ElboParts {
  double elbo = 0.0;
  double recon_cot = 0.0;
  double recon_ans = 0.0;
  double kl = 0.0;
};

// Per-step categorical distributions along one latent prefix.
Eigen::VectorXd prior_log_probs(const LatentReasoningModel& m, const ReasoningSample& s,
                                const std::vector<int>& prefix);
Eigen::VectorXd posterior_log_probs(const LatentReasoningModel& m, const ReasoningSample& s,
                                    const std::vector<int>& prefix);
// log p(Y|o, W) for the chain of thought (cot = true) or the answer; the end
// marker is scored after the last token.
double decoder_log_lik(const LatentReasoningModel& m, const std::vector<int>& prompt,
                       const std::vector<int>& latent, const std::vector<int>& target, bool cot);

// Exact enumeration over all K^L latent sequences. With grad, writes the
// gradient of the ELBO (not its negation) w.r.t. params().
ElboParts elbo_sft_exact(const LatentReasoningModel& m, const ReasoningSample& s,
                         Eigen::VectorXd* grad = nullptr);
// log sum_o p(o|W) p(Y^r|o,W) p(Y^a|o,W).
double log_marginal_likelihood(const LatentReasoningModel& m, const ReasoningSample& s);

struct GumbelEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};
// Monte-Carlo reconstruction over hard Gumbel-max samples plus the exact KL.
// stratified with n_samples >= K^L enumerates every sequence with weight q(o).
GumbelEstimate elbo_sft_gumbel_estimate(const LatentReasoningModel& m, const ReasoningSample& s,
                                        int n_samples, std::uint64_t seed, bool stratified = false);

// One straight-through Gumbel-softmax sample: reconstruction gradients flow
// through the relaxed one-hots, the KL gradient is exact. Returns the sampled
// reconstruction plus -beta KL and adds the gradient into grad.
double gumbel_surrogate(const LatentReasoningModel& m, const ReasoningSample& s, Rng& rng,
                        Eigen::VectorXd& grad);

enum class TrainMode { Exact, Gumbel };
TrainMode train_mode_from_string(const std::string& s);

struct TrainOptions {
  TrainMode mode = TrainMode::Exact;
  double lr = 0.03;
  int batch_size = 2;
  // Step-size multiplier for the posterior correction head and W_emb.
  double latent_lr_scale = 0.01;
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  double loss = 0.0;  // mean -ELBO (Exact) or mean -surrogate (Gumbel) over the pass
  double recon_cot = 0.0;
  double recon_ans = 0.0;
  double kl = 0.0;
  int updates = 0;
};

// Holds the optimizer state across epochs.
class ColdstartTrainer {
 public:
  ColdstartTrainer(LatentReasoningModel& model, const TrainOptions& opts);
  EpochMetrics train_epoch(const std::vector<ReasoningSample>& dataset);
  void set_lr(double lr) { adam_.set_learning_rate(lr); }

 private:
  LatentReasoningModel& model_;
  TrainOptions opts_;
  nn::Adam adam_;
  Rng rng_;
  Eigen::VectorXd lr_scale_;
};

EpochMetrics train_epoch(LatentReasoningModel& model, const std::vector<ReasoningSample>& dataset,
                         TrainMode mode, double lr, std::uint64_t seed = 0);

// Mean exact ELBO over a dataset, summed in order.
double mean_exact_elbo(const LatentReasoningModel& m, const std::vector<ReasoningSample>& data);

struct InferResult {
  std::vector<int> latent;
  std::vector<int> cot;
  std::vector<int> answer;
};
InferResult infer(const LatentReasoningModel& m, const std::vector<int>& prompt, std::uint64_t seed,
                  bool emit_cot);
// Fraction of samples whose decoded answer equals the reference.
double answer_exact_match(const LatentReasoningModel& m, const std::vector<ReasoningSample>& data,
                          std::uint64_t seed);

}  // namespace hitmdp::coldstart
