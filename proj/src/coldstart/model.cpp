#include "hitmdp/coldstart/model.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "hitmdp/nn/checkpoint.h"

namespace hitmdp::coldstart {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using MapM = Eigen::Map<MatrixXd>;

void ModelConfig::validate() const {
  if (vocab < 4 || vocab > 40) throw std::invalid_argument("coldstart: vocab must be in [4, 40]");
  if (n_latent < 1) throw std::invalid_argument("coldstart: n_latent must be >= 1");
  if (latent_len < 1) throw std::invalid_argument("coldstart: latent_len must be >= 1");
  if (token_dim < 1 || cot_dim < 1 || latent_dim < 1) throw std::invalid_argument("coldstart: dims must be >= 1");
  if (max_positions < 2) throw std::invalid_argument("coldstart: max_positions must be >= 2");
  if (!(kl_weight >= 0.0)) throw std::invalid_argument("coldstart: kl_weight must be >= 0");
  if (!(gumbel_temperature > 0.0))
    throw std::invalid_argument("coldstart: gumbel_temperature must be > 0");
}

long long ModelConfig::latent_space() const {
  long long n = 1;
  for (int i = 0; i < latent_len; ++i) {
    if (n > (1LL << 62) / n_latent) return 1LL << 62;
    n *= n_latent;
  }
  return n;
}

int LatentReasoningModel::prior_features() const {
  return cfg_.token_dim + cfg_.latent_dim + cfg_.latent_len;
}
int LatentReasoningModel::posterior_features() const {
  return 3 * cfg_.token_dim + cfg_.latent_dim + cfg_.latent_len;
}
int LatentReasoningModel::decoder_features(bool cot) const {
  return 2 * (cot ? cfg_.cot_dim : cfg_.token_dim) + cfg_.latent_dim + cfg_.max_positions;
}

void LatentReasoningModel::layout() {
  const int V = cfg_.vocab, K = cfg_.n_latent, d = cfg_.token_dim;
  blocks_.clear();
  Eigen::Index off = 0;
  auto add = [&](const std::string& name, int r, int c) {
    blocks_.push_back({name, r, c, off});
    off += static_cast<Eigen::Index>(r) * c;
  };
  add("token_embedding", V, d);
  add("cot_embedding", V, cfg_.cot_dim);
  add("latent_embedding", K, cfg_.latent_dim);
  add("prior_weight", K, prior_features());
  add("prior_bias", K, 1);
  add("posterior_weight", K, posterior_features());
  add("posterior_bias", K, 1);
  for (const char* dec : {"cot", "ans"}) {
    const bool cot = dec[0] == 'c';
    const int dd = cot ? cfg_.cot_dim : d;
    add(std::string(dec) + "_weight", dd, decoder_features(cot));
    add(std::string(dec) + "_bias", dd, 1);
    add(std::string(dec) + "_out_bias", V, 1);
    add(std::string(dec) + "_pos_bias", V, cfg_.max_positions);
  }
  params_ = VectorXd::Zero(off);
}

const LatentReasoningModel::Block& LatentReasoningModel::block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw std::out_of_range("coldstart: no parameter block " + name);
}

MapM LatentReasoningModel::view(VectorXd& v, const Block& b) {
  return MapM(v.data() + b.offset, b.rows, b.cols);
}
MapM LatentReasoningModel::mat(const std::string& name) { return view(params_, block(name)); }
Eigen::Map<const MatrixXd> LatentReasoningModel::mat(const std::string& name) const {
  const Block& b = block(name);
  return Eigen::Map<const MatrixXd>(params_.data() + b.offset, b.rows, b.cols);
}

LatentReasoningModel LatentReasoningModel::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  LatentReasoningModel m;
  m.cfg_ = cfg;
  m.layout();
  Rng rng = Rng::substream(seed, "init");
  for (const auto& b : m.blocks_) {
    MapM w = view(m.params_, b);
    if (b.name.find("bias") != std::string::npos) continue;  // biases start at zero
    double scale;
    if (b.name.find("embedding") != std::string::npos) {
      // The shared table starts near zero so numbers can order themselves.
      scale = b.name == "token_embedding" ? 0.03 : 0.3;
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * rng.normal();
    } else {
      scale = 1.0 / std::sqrt(static_cast<double>(b.cols));
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-scale, scale);
    }
  }
  return m;
}

void LatentReasoningModel::copy_prior_into_posterior() {
  mat("posterior_weight").setZero();
  mat("posterior_bias").setZero();
}

void LatentReasoningModel::save(const std::string& stem) const {
  std::vector<nn::NamedTensor> ts;
  for (const auto& b : blocks_) {
    nn::NamedTensor t{b.name, {b.rows, b.cols}, {}};
    auto w = mat(b.name);
    for (int r = 0; r < b.rows; ++r)
      for (int c = 0; c < b.cols; ++c) t.values.push_back(w(r, c));
    ts.push_back(std::move(t));
  }
  ts.push_back({"config",
                {9},
                {double(cfg_.vocab), double(cfg_.n_latent), double(cfg_.latent_len),
                 double(cfg_.token_dim), double(cfg_.cot_dim), double(cfg_.latent_dim),
                 double(cfg_.max_positions), cfg_.kl_weight, cfg_.gumbel_temperature}});
  nn::save_tensors(stem, ts);
}

LatentReasoningModel LatentReasoningModel::load(const std::string& stem) {
  auto ts = nn::load_tensors(stem);
  auto find = [&](const std::string& n) -> const nn::NamedTensor& {
    for (const auto& t : ts)
      if (t.name == n) return t;
    throw std::runtime_error("coldstart checkpoint " + stem + ": missing tensor " + n);
  };
  const auto& c = find("config").values;
  if (c.size() != 9) throw std::runtime_error("coldstart checkpoint: bad config tensor");
  ModelConfig cfg;
  cfg.vocab = int(c[0]);
  cfg.n_latent = int(c[1]);
  cfg.latent_len = int(c[2]);
  cfg.token_dim = int(c[3]);
  cfg.cot_dim = int(c[4]);
  cfg.latent_dim = int(c[5]);
  cfg.max_positions = int(c[6]);
  cfg.kl_weight = c[7];
  cfg.gumbel_temperature = c[8];
  cfg.validate();
  LatentReasoningModel m;
  m.cfg_ = cfg;
  m.layout();
  for (const auto& b : m.blocks_) {
    const auto& t = find(b.name);
    if (t.shape != std::vector<int>{b.rows, b.cols})
      throw std::runtime_error("coldstart checkpoint: shape mismatch for " + b.name);
    MapM w = view(m.params_, b);
    for (int r = 0; r < b.rows; ++r)
      for (int col = 0; col < b.cols; ++col) w(r, col) = t.values[std::size_t(r) * b.cols + col];
  }
  return m;
}

namespace {

// Maps over a flat vector with the model's layout; used for both parameters
// and gradients.
struct Views {
  // Index 0 is the CoT decoder, 1 the answer decoder; D[k] is decoder k's
  // token table and aliases E for the answer decoder.
  MapM E, Wl, Mp, bp, Mq, bq, A[2], a[2], c[2], C[2], D[2];
  Views(const LatentReasoningModel& m, VectorXd& v)
      : E(LatentReasoningModel::view(v, m.block("token_embedding"))),
        Wl(LatentReasoningModel::view(v, m.block("latent_embedding"))),
        Mp(LatentReasoningModel::view(v, m.block("prior_weight"))),
        bp(LatentReasoningModel::view(v, m.block("prior_bias"))),
        Mq(LatentReasoningModel::view(v, m.block("posterior_weight"))),
        bq(LatentReasoningModel::view(v, m.block("posterior_bias"))),
        A{LatentReasoningModel::view(v, m.block("cot_weight")),
          LatentReasoningModel::view(v, m.block("ans_weight"))},
        a{LatentReasoningModel::view(v, m.block("cot_bias")),
          LatentReasoningModel::view(v, m.block("ans_bias"))},
        c{LatentReasoningModel::view(v, m.block("cot_out_bias")),
          LatentReasoningModel::view(v, m.block("ans_out_bias"))},
        C{LatentReasoningModel::view(v, m.block("cot_pos_bias")),
          LatentReasoningModel::view(v, m.block("ans_pos_bias"))},
        D{LatentReasoningModel::view(v, m.block("cot_embedding")),
          LatentReasoningModel::view(v, m.block("token_embedding"))} {}
};

VectorXd log_softmax(const VectorXd& z) {
  double mx = z.maxCoeff();
  double lse = mx + std::log((z.array() - mx).exp().sum());
  return z.array() - lse;
}

VectorXd mean_rows(const MapM& table, const std::vector<int>& ids, std::size_t n) {
  VectorXd out = VectorXd::Zero(table.cols());
  if (n == 0) return out;
  for (std::size_t i = 0; i < n; ++i) out += table.row(ids[i]).transpose();
  return out / double(n);
}

void scatter_rows(MapM& gtable, const std::vector<int>& ids, std::size_t n, const VectorXd& g) {
  if (n == 0) return;
  for (std::size_t i = 0; i < n; ++i) gtable.row(ids[i]) += g.transpose() / double(n);
}

// Everything the heads need for one sample.
struct Ctx {
  const LatentReasoningModel& m;
  Views P;
  const std::vector<int>& prompt;
  const std::vector<int>* cot;
  const std::vector<int>* ans;
  VectorXd mW, mYr, mYa;
  VectorXd mWd[2];  // prompt summary in each decoder's table
  int K, L, d, dl, Pmax;
  int dd[2];

  Ctx(const LatentReasoningModel& model, const std::vector<int>& w, const std::vector<int>* yr,
      const std::vector<int>* ya)
      : m(model),
        P(model, const_cast<VectorXd&>(model.params())),
        prompt(w),
        cot(yr),
        ans(ya) {
    const auto& c = model.config();
    K = c.n_latent;
    L = c.latent_len;
    d = c.token_dim;
    dl = c.latent_dim;
    Pmax = c.max_positions;
    if (w.empty()) throw std::invalid_argument("coldstart: empty prompt");
    for (int t : w)
      if (t < 0 || t >= c.vocab) throw std::invalid_argument("coldstart: token id out of range");
    mW = mean_rows(P.E, w, w.size());
    dd[0] = c.cot_dim;
    dd[1] = d;
    mWd[0] = mean_rows(P.D[0], w, w.size());
    mWd[1] = mW;
    mYr = yr ? mean_rows(P.E, *yr, yr->size()) : VectorXd::Zero(d);
    mYa = ya ? mean_rows(P.E, *ya, ya->size()) : VectorXd::Zero(d);
  }

  VectorXd prior_phi(const std::vector<int>& prefix, int i) const {
    VectorXd phi = VectorXd::Zero(d + dl + L);
    phi.head(d) = mW;
    phi.segment(d, dl) = mean_rows(P.Wl, prefix, i);
    phi(d + dl + i) = 1.0;
    return phi;
  }
  VectorXd post_phi(const std::vector<int>& prefix, int i) const {
    VectorXd phi = VectorXd::Zero(3 * d + dl + L);
    phi.head(d) = mW;
    phi.segment(d, d) = mYr;
    phi.segment(2 * d, d) = mYa;
    phi.segment(3 * d, dl) = mean_rows(P.Wl, prefix, i);
    phi(3 * d + dl + i) = 1.0;
    return phi;
  }
  VectorXd prior_logits(const std::vector<int>& prefix, int i) const {
    return P.Mp * prior_phi(prefix, i) + VectorXd(P.bp);
  }
  VectorXd post_logits(const std::vector<int>& prefix, int i) const {
    return prior_logits(prefix, i) + P.Mq * post_phi(prefix, i) + VectorXd(P.bq);
  }

  // Head backward: upstream g on the logits of node (prefix, i).
  void prior_back(const std::vector<int>& prefix, int i, const VectorXd& g, Views& G) const {
    VectorXd phi = prior_phi(prefix, i);
    G.Mp += g * phi.transpose();
    G.bp += g;
    VectorXd dphi = P.Mp.transpose() * g;
    scatter_rows(G.E, prompt, prompt.size(), dphi.head(d));
    scatter_rows(G.Wl, prefix, i, dphi.segment(d, dl));
  }
  void post_back(const std::vector<int>& prefix, int i, const VectorXd& g, Views& G) const {
    VectorXd phi = post_phi(prefix, i);
    G.Mq += g * phi.transpose();
    G.bq += g;
    VectorXd dphi = P.Mq.transpose() * g;
    scatter_rows(G.E, prompt, prompt.size(), dphi.head(d));
    if (cot) scatter_rows(G.E, *cot, cot->size(), dphi.segment(d, d));
    if (ans) scatter_rows(G.E, *ans, ans->size(), dphi.segment(2 * d, d));
    scatter_rows(G.Wl, prefix, i, dphi.segment(3 * d, dl));
    prior_back(prefix, i, g, G);
  }

  VectorXd dec_phi(int which, const VectorXd& mo, const VectorXd& prefix_sum, int t) const {
    const int e = dd[which];
    VectorXd phi = VectorXd::Zero(2 * e + dl + Pmax);
    phi.head(e) = mWd[which];
    phi.segment(e, dl) = mo;
    if (t > 0) phi.segment(e + dl, e) = prefix_sum / double(t);
    phi(2 * e + dl + t) = 1.0;
    return phi;
  }

  VectorXd dec_logits(int which, const VectorXd& phi, int t, VectorXd* h_out = nullptr) const {
    VectorXd h = P.A[which] * phi + VectorXd(P.a[which]);
    const MapM& Et = P.D[which];
    VectorXd z = 2.0 * (Et * h) - Et.rowwise().squaredNorm() + VectorXd(P.c[which]) +
                 VectorXd(P.C[which].col(t));
    if (h_out) *h_out = std::move(h);
    return z;
  }

  // log p(target + <eos> | o, W). With G, adds weight * gradient and
  // accumulates weight * d/d(mean latent embedding) into dmo.
  double decode(int which, const VectorXd& mo, const std::vector<int>& target, double weight,
                Views* G, VectorXd* dmo) const {
    const int T = static_cast<int>(target.size()) + 1;
    if (T > Pmax)
      throw std::invalid_argument("coldstart: sequence longer than max_positions - 1");
    const int e = dd[which];
    const MapM& Et = P.D[which];
    VectorXd prefix_sum = VectorXd::Zero(e);
    double ll = 0.0;
    for (int t = 0; t < T; ++t) {
      int y = t < T - 1 ? target[t] : Vocab::kEos;
      VectorXd phi = dec_phi(which, mo, prefix_sum, t);
      VectorXd h;
      VectorXd lp = log_softmax(dec_logits(which, phi, t, &h));
      ll += lp(y);
      if (G) {
        VectorXd g = -weight * lp.array().exp();
        g(y) += weight;
        MapM& GE = G->D[which];
        GE += 2.0 * g * h.transpose();
        GE -= 2.0 * (g.asDiagonal() * Et);
        G->c[which] += g;
        G->C[which].col(t) += g;
        VectorXd dh = 2.0 * (Et.transpose() * g);
        G->A[which] += dh * phi.transpose();
        G->a[which] += dh;
        VectorXd dphi = P.A[which].transpose() * dh;
        scatter_rows(GE, prompt, prompt.size(), dphi.head(e));
        if (dmo) *dmo += dphi.segment(e, dl);
        if (t > 0) scatter_rows(GE, target, t, dphi.segment(e + dl, e));
      }
      if (t < T - 1) prefix_sum += Et.row(y).transpose();
    }
    return ll;
  }

  double recon(const std::vector<int>& latent, double weight, Views* G, VectorXd* dmo_out) const {
    VectorXd mo = mean_rows(P.Wl, latent, latent.size());
    VectorXd dmo = VectorXd::Zero(dl);
    double ll = 0.0;
    if (cot) ll += decode(0, mo, *cot, weight, G, G ? &dmo : nullptr);
    if (ans) ll += decode(1, mo, *ans, weight, G, G ? &dmo : nullptr);
    if (G) scatter_rows(G->Wl, latent, latent.size(), dmo);
    if (dmo_out) *dmo_out = dmo;
    return ll;
  }
};

std::vector<int> digits(long long idx, int K, int L) {
  std::vector<int> o(L);
  for (int i = L - 1; i >= 0; --i) {
    o[i] = static_cast<int>(idx % K);
    idx /= K;
  }
  return o;
}

constexpr long long kEnumerationGuard = 1000000;

struct Tree {
  // Per depth i: K x K^i matrices of log-probabilities, one column per prefix.
  std::vector<MatrixXd> logq, logp;
};

Tree build_tree(const Ctx& c) {
  Tree t;
  long long width = 1;
  for (int i = 0; i < c.L; ++i) {
    t.logq.emplace_back(c.K, width);
    t.logp.emplace_back(c.K, width);
    for (long long u = 0; u < width; ++u) {
      std::vector<int> prefix = digits(u, c.K, i);
      t.logq[i].col(u) = log_softmax(c.post_logits(prefix, i));
      t.logp[i].col(u) = log_softmax(c.prior_logits(prefix, i));
    }
    width *= c.K;
  }
  return t;
}

long long multiset_key(std::vector<int> o, int K) {
  std::sort(o.begin(), o.end());
  long long key = 0;
  for (int v : o) key = key * K + v;
  return key;
}

// Exact objective sum_o q(o) [recon(o) + beta (log p(o) - log q(o))]; recon is
// skipped when with_recon is false. Adds the gradient into G when given.
ElboParts exact_pass(const Ctx& c, bool with_recon, Views* G) {
  const auto& cfg = c.m.config();
  if (cfg.latent_space() > kEnumerationGuard)
    throw std::invalid_argument("coldstart: K^L exceeds the exact enumeration guard (1e6)");
  const int K = c.K, L = c.L;
  const double beta = cfg.kl_weight;
  const long long N = cfg.latent_space();
  Tree tree = build_tree(c);

  // Decoder terms depend on o only through its multiset.
  std::unordered_map<long long, int> ms_index;
  std::vector<std::vector<int>> ms_latent;
  std::vector<double> ms_cot, ms_ans, ms_weight;
  std::vector<int> leaf_ms(with_recon ? N : 0);
  if (with_recon) {
    for (long long idx = 0; idx < N; ++idx) {
      std::vector<int> o = digits(idx, K, L);
      long long key = multiset_key(o, K);
      auto [it, fresh] = ms_index.emplace(key, static_cast<int>(ms_latent.size()));
      if (fresh) {
        VectorXd mo = mean_rows(c.P.Wl, o, o.size());
        ms_latent.push_back(o);
        ms_cot.push_back(c.cot ? c.decode(0, mo, *c.cot, 0.0, nullptr, nullptr) : 0.0);
        ms_ans.push_back(c.ans ? c.decode(1, mo, *c.ans, 0.0, nullptr, nullptr) : 0.0);
        ms_weight.push_back(0.0);
      }
      leaf_ms[idx] = it->second;
    }
  }

  ElboParts parts;
  std::vector<double> leaf_value(G ? N : 0);
  for (long long idx = 0; idx < N; ++idx) {
    double lq = 0.0, lp = 0.0;
    long long u = 0;
    long long rem = idx;
    long long span = N;
    for (int i = 0; i < L; ++i) {
      span /= K;
      int k = static_cast<int>(rem / span);
      rem %= span;
      lq += tree.logq[i](k, u);
      lp += tree.logp[i](k, u);
      u = u * K + k;
    }
    double q = std::exp(lq);
    double f = beta * (lp - lq);
    parts.kl += q * (lq - lp);
    if (with_recon) {
      int s = leaf_ms[idx];
      parts.recon_cot += q * ms_cot[s];
      parts.recon_ans += q * ms_ans[s];
      f += ms_cot[s] + ms_ans[s];
      ms_weight[s] += q;
    }
    if (G) leaf_value[idx] = q * f;
  }
  parts.elbo = parts.recon_cot + parts.recon_ans - beta * parts.kl;
  if (!G) return parts;

  if (with_recon)
    for (std::size_t s = 0; s < ms_latent.size(); ++s)
      c.recon(ms_latent[s], ms_weight[s], G, nullptr);

  // Score-function terms aggregated bottom-up over the prefix tree.
  std::vector<std::vector<double>> Q(L);
  Q[0] = {1.0};
  for (int i = 1; i < L; ++i) {
    Q[i].resize(Q[i - 1].size() * K);
    for (std::size_t u = 0; u < Q[i - 1].size(); ++u)
      for (int k = 0; k < K; ++k) Q[i][u * K + k] = Q[i - 1][u] * std::exp(tree.logq[i - 1](k, u));
  }
  std::vector<double> child = leaf_value;
  for (int i = L - 1; i >= 0; --i) {
    const long long width = static_cast<long long>(Q[i].size());
    std::vector<double> agg(width, 0.0);
    for (long long u = 0; u < width; ++u) {
      VectorXd gk(K);
      for (int k = 0; k < K; ++k) gk(k) = child[u * K + k];
      double total = gk.sum();
      agg[u] = total;
      VectorXd qv = tree.logq[i].col(u).array().exp();
      VectorXd pv = tree.logp[i].col(u).array().exp();
      std::vector<int> prefix = digits(u, K, i);
      c.post_back(prefix, i, gk - qv * total, *G);
      if (beta != 0.0) c.prior_back(prefix, i, beta * Q[i][u] * (qv - pv), *G);
    }
    child.swap(agg);
  }
  return parts;
}

int gumbel_argmax(const VectorXd& logits, Rng& rng, VectorXd* perturbed = nullptr) {
  VectorXd z(logits.size());
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    double u = std::max(rng.uniform(), 1e-300);
    z(k) = logits(k) - std::log(-std::log(u));
  }
  int best = 0;
  z.maxCoeff(&best);
  if (perturbed) *perturbed = std::move(z);
  return best;
}

}  // namespace

VectorXd prior_log_probs(const LatentReasoningModel& m, const ReasoningSample& s,
                         const std::vector<int>& prefix) {
  Ctx c(m, s.prompt, &s.cot, &s.answer);
  return log_softmax(c.prior_logits(prefix, static_cast<int>(prefix.size())));
}

VectorXd posterior_log_probs(const LatentReasoningModel& m, const ReasoningSample& s,
                             const std::vector<int>& prefix) {
  Ctx c(m, s.prompt, &s.cot, &s.answer);
  return log_softmax(c.post_logits(prefix, static_cast<int>(prefix.size())));
}

double decoder_log_lik(const LatentReasoningModel& m, const std::vector<int>& prompt,
                       const std::vector<int>& latent, const std::vector<int>& target, bool cot) {
  Ctx c(m, prompt, nullptr, nullptr);
  VectorXd mo = mean_rows(c.P.Wl, latent, latent.size());
  return c.decode(cot ? 0 : 1, mo, target, 0.0, nullptr, nullptr);
}

ElboParts elbo_sft_exact(const LatentReasoningModel& m, const ReasoningSample& s, VectorXd* grad) {
  s.validate(m.config().vocab);
  Ctx c(m, s.prompt, &s.cot, &s.answer);
  if (!grad) return exact_pass(c, true, nullptr);
  grad->setZero(m.params().size());
  Views G(m, *grad);
  return exact_pass(c, true, &G);
}

double log_marginal_likelihood(const LatentReasoningModel& m, const ReasoningSample& s) {
  s.validate(m.config().vocab);
  const auto& cfg = m.config();
  if (cfg.latent_space() > kEnumerationGuard)
    throw std::invalid_argument("coldstart: K^L exceeds the exact enumeration guard (1e6)");
  Ctx c(m, s.prompt, &s.cot, &s.answer);
  Tree tree = build_tree(c);
  const long long N = cfg.latent_space();
  std::vector<double> terms(N);
  for (long long idx = 0; idx < N; ++idx) {
    std::vector<int> o = digits(idx, c.K, c.L);
    double lp = 0.0;
    long long u = 0;
    for (int i = 0; i < c.L; ++i) {
      lp += tree.logp[i](o[i], u);
      u = u * c.K + o[i];
    }
    terms[idx] = lp + c.recon(o, 0.0, nullptr, nullptr);
  }
  double mx = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - mx);
  return mx + std::log(acc);
}

GumbelEstimate elbo_sft_gumbel_estimate(const LatentReasoningModel& m, const ReasoningSample& s,
                                        int n_samples, std::uint64_t seed, bool stratified) {
  if (n_samples < 1) throw std::invalid_argument("coldstart: n_samples must be >= 1");
  s.validate(m.config().vocab);
  const auto& cfg = m.config();
  Ctx c(m, s.prompt, &s.cot, &s.answer);
  const double kl = exact_pass(c, false, nullptr).kl;
  const double beta = cfg.kl_weight;

  std::map<long long, double> recon_cache;
  auto recon_of = [&](const std::vector<int>& o) {
    long long key = multiset_key(o, c.K);
    auto it = recon_cache.find(key);
    if (it != recon_cache.end()) return it->second;
    double v = c.recon(o, 0.0, nullptr, nullptr);
    recon_cache.emplace(key, v);
    return v;
  };

  if (stratified && n_samples >= cfg.latent_space()) {
    Tree tree = build_tree(c);
    double acc = 0.0;
    for (long long idx = 0; idx < cfg.latent_space(); ++idx) {
      std::vector<int> o = digits(idx, c.K, c.L);
      double lq = 0.0;
      long long u = 0;
      for (int i = 0; i < c.L; ++i) {
        lq += tree.logq[i](o[i], u);
        u = u * c.K + o[i];
      }
      acc += std::exp(lq) * recon_of(o);
    }
    return {acc - beta * kl, 0.0};
  }

  std::map<std::vector<int>, VectorXd> node_cache;
  auto node = [&](const std::vector<int>& prefix) -> const VectorXd& {
    auto it = node_cache.find(prefix);
    if (it != node_cache.end()) return it->second;
    VectorXd lq = log_softmax(c.post_logits(prefix, static_cast<int>(prefix.size())));
    return node_cache.emplace(prefix, std::move(lq)).first->second;
  };

  Rng rng(seed);
  double mean = 0.0, m2 = 0.0;
  std::vector<int> o;
  for (int n = 1; n <= n_samples; ++n) {
    o.clear();
    for (int i = 0; i < c.L; ++i) o.push_back(gumbel_argmax(node(o), rng));
    double x = recon_of(o);
    double delta = x - mean;
    mean += delta / n;
    m2 += delta * (x - mean);
  }
  double se = n_samples > 1 ? std::sqrt(m2 / (n_samples - 1) / n_samples) : 0.0;
  return {mean - beta * kl, se};
}

double gumbel_surrogate(const LatentReasoningModel& m, const ReasoningSample& s, Rng& rng,
                        VectorXd& grad) {
  s.validate(m.config().vocab);
  const auto& cfg = m.config();
  if (grad.size() != m.params().size()) grad = VectorXd::Zero(m.params().size());
  Views G(m, grad);
  Ctx c(m, s.prompt, &s.cot, &s.answer);
  const double tau = cfg.gumbel_temperature;

  std::vector<int> o;
  std::vector<VectorXd> soft;
  for (int i = 0; i < c.L; ++i) {
    VectorXd perturbed;
    int k = gumbel_argmax(log_softmax(c.post_logits(o, i)), rng, &perturbed);
    VectorXd y = (perturbed / tau).array() - (perturbed / tau).maxCoeff();
    y = y.array().exp();
    y /= y.sum();
    soft.push_back(std::move(y));
    o.push_back(k);
  }
  VectorXd dmo;
  double recon = c.recon(o, 1.0, &G, &dmo);
  // Straight-through: the forward pass used hard one-hots, the backward pass
  // differentiates the relaxed ones. Each step's prefix is held fixed.
  for (int i = 0; i < c.L; ++i) {
    const VectorXd& y = soft[i];
    VectorXd dy = c.P.Wl * dmo / double(c.L);
    VectorXd dz = (y.array() * (dy.array() - y.dot(dy))).matrix() / tau;
    std::vector<int> prefix(o.begin(), o.begin() + i);
    c.post_back(prefix, i, dz, G);
  }
  ElboParts kl = exact_pass(c, false, &G);
  return recon + kl.elbo;
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "exact") return TrainMode::Exact;
  if (s == "gumbel") return TrainMode::Gumbel;
  throw std::invalid_argument("unknown training mode '" + s + "' (exact, gumbel)");
}

ColdstartTrainer::ColdstartTrainer(LatentReasoningModel& model, const TrainOptions& opts)
    : model_(model),
      opts_(opts),
      adam_(model.params().size(), opts.lr),
      rng_(Rng::derive(opts.seed, "coldstart-train")) {
  if (opts.batch_size < 1) throw std::invalid_argument("coldstart: batch_size must be >= 1");
  if (!(opts.lr > 0.0)) throw std::invalid_argument("coldstart: lr must be > 0");
  if (!(opts.latent_lr_scale > 0.0))
    throw std::invalid_argument("coldstart: latent_lr_scale must be > 0");
  lr_scale_ = VectorXd::Ones(model.params().size());
  for (const char* n : {"posterior_weight", "posterior_bias", "latent_embedding"}) {
    const auto& b = model.block(n);
    lr_scale_.segment(b.offset, Eigen::Index(b.rows) * b.cols).setConstant(opts.latent_lr_scale);
  }
}

EpochMetrics ColdstartTrainer::train_epoch(const std::vector<ReasoningSample>& data) {
  if (data.empty()) throw std::invalid_argument("coldstart: empty dataset");
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
    std::swap(order[i], order[rng_.uniform_int(i + 1)]);

  EpochMetrics em;
  const Eigen::Index n = model_.params().size();
  VectorXd batch_grad(n), g(n);
  for (std::size_t start = 0; start < order.size(); start += opts_.batch_size) {
    std::size_t end = std::min(order.size(), start + opts_.batch_size);
    batch_grad.setZero();
    for (std::size_t j = start; j < end; ++j) {
      const ReasoningSample& s = data[order[j]];
      double objective;
      if (opts_.mode == TrainMode::Exact) {
        ElboParts p = elbo_sft_exact(model_, s, &g);
        objective = p.elbo;
        em.recon_cot += p.recon_cot;
        em.recon_ans += p.recon_ans;
        em.kl += p.kl;
      } else {
        g.setZero();
        objective = gumbel_surrogate(model_, s, rng_, g);
      }
      if (!std::isfinite(objective) || !g.allFinite())
        throw std::runtime_error("coldstart: non-finite loss during training");
      em.loss -= objective;
      batch_grad += g;
    }
    VectorXd before = model_.params();
    adam_.step(model_.params(), -batch_grad / double(end - start));
    model_.params() = before + (model_.params() - before).cwiseProduct(lr_scale_);
    ++em.updates;
  }
  const double count = static_cast<double>(data.size());
  em.loss /= count;
  em.recon_cot /= count;
  em.recon_ans /= count;
  em.kl /= count;
  return em;
}

EpochMetrics train_epoch(LatentReasoningModel& model, const std::vector<ReasoningSample>& data,
                         TrainMode mode, double lr, std::uint64_t seed) {
  TrainOptions opts;
  opts.mode = mode;
  opts.lr = lr;
  opts.seed = seed;
  ColdstartTrainer t(model, opts);
  return t.train_epoch(data);
}

double mean_exact_elbo(const LatentReasoningModel& m, const std::vector<ReasoningSample>& data) {
  if (data.empty()) throw std::invalid_argument("coldstart: empty dataset");
  double acc = 0.0;
  for (const auto& s : data) acc += elbo_sft_exact(m, s).elbo;
  return acc / double(data.size());
}

InferResult infer(const LatentReasoningModel& m, const std::vector<int>& prompt, std::uint64_t seed,
                  bool emit_cot) {
  Ctx c(m, prompt, nullptr, nullptr);
  Rng rng(seed);
  InferResult r;
  for (int i = 0; i < c.L; ++i) {
    VectorXd p = log_softmax(c.prior_logits(r.latent, i)).array().exp();
    r.latent.push_back(rng.categorical(std::span<const double>(p.data(), p.size())));
  }
  VectorXd mo = mean_rows(c.P.Wl, r.latent, r.latent.size());
  auto greedy = [&](int which) {
    std::vector<int> out;
    VectorXd prefix_sum = VectorXd::Zero(c.dd[which]);
    for (int t = 0; t < c.Pmax; ++t) {
      VectorXd z = c.dec_logits(which, c.dec_phi(which, mo, prefix_sum, t), t);
      int y = 0;
      z.maxCoeff(&y);
      if (y == Vocab::kEos) break;
      out.push_back(y);
      prefix_sum += c.P.D[which].row(y).transpose();
    }
    return out;
  };
  if (emit_cot) r.cot = greedy(0);
  r.answer = greedy(1);
  return r;
}

double answer_exact_match(const LatentReasoningModel& m, const std::vector<ReasoningSample>& data,
                          std::uint64_t seed) {
  if (data.empty()) return 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    InferResult r = infer(m, data[i].prompt, Rng::derive(seed, std::to_string(i)), false);
    hits += r.answer == data[i].answer;
  }
  return double(hits) / double(data.size());
}

}  // namespace hitmdp::coldstart
