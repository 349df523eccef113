#pragma once

// Direct forward pass of the latent reasoning model from its raw parameter
// blocks, with brute-force enumeration of all latent sequences.

#include <cmath>
#include <vector>

#include "hitmdp/coldstart/model.h"

namespace oracle {

using hitmdp::coldstart::LatentReasoningModel;
using hitmdp::coldstart::ReasoningSample;
using hitmdp::coldstart::Vocab;

inline std::vector<double> row_mean(const Eigen::Map<const Eigen::MatrixXd>& t,
                                    const std::vector<int>& ids, std::size_t n) {
  std::vector<double> out(t.cols(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < t.cols(); ++c) out[c] += t(ids[i], c) / double(n);
  return out;
}

inline std::vector<double> log_normalize(std::vector<double> z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  double lse = mx + std::log(s);
  for (double& v : z) v -= lse;
  return z;
}

// Affine head: W x + b, with x given as a concatenation of parts.
inline std::vector<double> affine(const Eigen::Map<const Eigen::MatrixXd>& W,
                                  const Eigen::Map<const Eigen::MatrixXd>& b,
                                  const std::vector<double>& x) {
  std::vector<double> out(W.rows(), 0.0);
  for (int r = 0; r < W.rows(); ++r) {
    out[r] = b(r, 0);
    for (int c = 0; c < W.cols(); ++c) out[r] += W(r, c) * x[c];
  }
  return out;
}

inline void append(std::vector<double>& x, const std::vector<double>& part) {
  x.insert(x.end(), part.begin(), part.end());
}

inline std::vector<double> one_hot(int n, int i) {
  std::vector<double> v(n, 0.0);
  v[i] = 1.0;
  return v;
}

struct Factors {
  std::vector<double> log_prior, log_post;  // per latent step, log-probs over K
};

inline Factors factors(const LatentReasoningModel& m, const ReasoningSample& s,
                       const std::vector<int>& prefix) {
  const auto& c = m.config();
  const int i = static_cast<int>(prefix.size());
  auto E = m.mat("token_embedding");
  auto Wl = m.mat("latent_embedding");
  std::vector<double> mW = row_mean(E, s.prompt, s.prompt.size());
  std::vector<double> mo = row_mean(Wl, prefix, prefix.size());
  std::vector<double> xp = mW;
  append(xp, mo);
  append(xp, one_hot(c.latent_len, i));
  std::vector<double> zp = affine(m.mat("prior_weight"), m.mat("prior_bias"), xp);
  std::vector<double> xq = mW;
  append(xq, row_mean(E, s.cot, s.cot.size()));
  append(xq, row_mean(E, s.answer, s.answer.size()));
  append(xq, mo);
  append(xq, one_hot(c.latent_len, i));
  std::vector<double> zq = affine(m.mat("posterior_weight"), m.mat("posterior_bias"), xq);
  for (std::size_t k = 0; k < zq.size(); ++k) zq[k] += zp[k];
  return {log_normalize(zp), log_normalize(zq)};
}

inline double decoder_ll(const LatentReasoningModel& m, const std::vector<int>& prompt,
                         const std::vector<int>& latent, const std::vector<int>& target,
                         bool cot) {
  const auto& c = m.config();
  const std::string pre = cot ? "cot" : "ans";
  auto D = m.mat(cot ? "cot_embedding" : "token_embedding");
  auto A = m.mat(pre + "_weight");
  auto a = m.mat(pre + "_bias");
  auto cb = m.mat(pre + "_out_bias");
  auto C = m.mat(pre + "_pos_bias");
  std::vector<int> seq = target;
  seq.push_back(Vocab::kEos);
  double ll = 0.0;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    std::vector<double> x = row_mean(D, prompt, prompt.size());
    append(x, row_mean(m.mat("latent_embedding"), latent, latent.size()));
    append(x, row_mean(D, seq, t));
    append(x, one_hot(c.max_positions, static_cast<int>(t)));
    std::vector<double> h = affine(A, a, x);
    std::vector<double> z(D.rows());
    for (int v = 0; v < D.rows(); ++v) {
      double dot = 0.0, norm = 0.0;
      for (int j = 0; j < D.cols(); ++j) {
        dot += D(v, j) * h[j];
        norm += D(v, j) * D(v, j);
      }
      z[v] = 2.0 * dot - norm + cb(v, 0) + C(v, static_cast<int>(t));
    }
    ll += log_normalize(z)[seq[t]];
  }
  return ll;
}

struct ElboOracle {
  double elbo, recon_cot, recon_ans, kl, log_marginal;
};

inline ElboOracle enumerate_elbo(const LatentReasoningModel& m, const ReasoningSample& s) {
  const auto& c = m.config();
  long long n = 1;
  for (int i = 0; i < c.latent_len; ++i) n *= c.n_latent;
  ElboOracle out{0, 0, 0, 0, 0};
  std::vector<double> joint;
  for (long long idx = 0; idx < n; ++idx) {
    std::vector<int> o(c.latent_len);
    long long r = idx;
    for (int i = c.latent_len - 1; i >= 0; --i) {
      o[i] = static_cast<int>(r % c.n_latent);
      r /= c.n_latent;
    }
    double lq = 0.0, lp = 0.0;
    for (int i = 0; i < c.latent_len; ++i) {
      Factors f = factors(m, s, std::vector<int>(o.begin(), o.begin() + i));
      lq += f.log_post[o[i]];
      lp += f.log_prior[o[i]];
    }
    double q = std::exp(lq);
    double rc = decoder_ll(m, s.prompt, o, s.cot, true);
    double ra = decoder_ll(m, s.prompt, o, s.answer, false);
    out.recon_cot += q * rc;
    out.recon_ans += q * ra;
    out.kl += q * (lq - lp);
    joint.push_back(lp + rc + ra);
  }
  out.elbo = out.recon_cot + out.recon_ans - c.kl_weight * out.kl;
  double mx = joint[0];
  for (double v : joint) mx = std::max(mx, v);
  double acc = 0.0;
  for (double v : joint) acc += std::exp(v - mx);
  out.log_marginal = mx + std::log(acc);
  return out;
}

}  // namespace oracle
