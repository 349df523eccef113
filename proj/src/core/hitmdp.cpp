#include "hitmdp/core/hitmdp.h"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hitmdp {

namespace {

constexpr double kSumTol = 1e-12;

void check_distribution(const double* p, std::size_t n, const std::string& what) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(p[i] >= 0.0)) throw std::invalid_argument(what + ": negative or NaN entry");
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > kSumTol)
    throw std::invalid_argument(what + ": sums to " + std::to_string(sum));
}

double safe_log(double p) { return p > 0.0 ? std::log(p) : kLogZero; }

void check_step(const FiniteHiTMDP& mdp, const Step& st) {
  if (st.s < 0 || st.s >= mdp.n_states || st.a < 0 || st.a >= mdp.n_actions ||
      st.o < 0 || st.o >= mdp.n_options || st.o_prev < 0 || st.o_prev >= mdp.n_options)
    throw std::invalid_argument("trajectory step out of range");
}

void check_chain(const Trajectory& tau) {
  for (std::size_t t = 1; t < tau.steps.size(); ++t)
    if (tau.steps[t].o_prev != tau.steps[t - 1].o)
      throw std::invalid_argument("trajectory: o_prev of step " + std::to_string(t) +
                                  " differs from previous option");
}

// Accumulates log-factors; any zero factor collapses the total to kLogZero.
struct LogProduct {
  double total = 0.0;
  bool zero = false;
  void add(double p) {
    if (p <= 0.0) zero = true;
    else total += std::log(p);
  }
  double value() const { return zero ? kLogZero : total; }
};

}  // namespace

FiniteHiTMDP::FiniteHiTMDP(int s, int k, int a, double gamma)
    : n_states(s),
      n_options(k),
      n_actions(a),
      transition(s, a, s),
      reward(s, a),
      discount(gamma),
      initial(s, k) {}

void FiniteHiTMDP::validate() const {
  if (n_states < 1 || n_options < 1 || n_actions < 1)
    throw std::invalid_argument("hitmdp: dimensions must be positive");
  const auto S = static_cast<std::size_t>(n_states);
  const auto K = static_cast<std::size_t>(n_options);
  const auto A = static_cast<std::size_t>(n_actions);
  if (transition.dim0() != S || transition.dim1() != A || transition.dim2() != S)
    throw std::invalid_argument("hitmdp: transition shape mismatch");
  if (reward.rows() != S || reward.cols() != A)
    throw std::invalid_argument("hitmdp: reward shape mismatch");
  if (initial.rows() != S || initial.cols() != K)
    throw std::invalid_argument("hitmdp: initial shape mismatch");
  if (!(discount >= 0.0 && discount < 1.0))
    throw std::invalid_argument("hitmdp: discount must lie in [0, 1)");
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a)
      check_distribution(transition.row(s, a), S,
                         "transition row (" + std::to_string(s) + "," + std::to_string(a) + ")");
  for (double r : reward.data())
    if (!std::isfinite(r)) throw std::invalid_argument("hitmdp: non-finite reward");
  check_distribution(initial.data().data(), initial.size(), "initial");
}

TabularPolicies TabularPolicies::uniform(int s, int k, int a) {
  TabularPolicies p;
  p.option_policy = Table3(s, k, k, 1.0 / k);
  p.action_policy = Table3(s, k, a, 1.0 / a);
  return p;
}

void random_distribution(double* row, int n, Rng& rng) {
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    row[i] = -std::log(1.0 - rng.uniform());
    sum += row[i];
  }
  for (int i = 0; i < n; ++i) row[i] /= sum;
}

TabularPolicies TabularPolicies::random(int s, int k, int a, Rng& rng) {
  TabularPolicies p;
  p.option_policy = Table3(s, k, k);
  p.action_policy = Table3(s, k, a);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < k; ++j) random_distribution(p.option_policy.row(i, j), k, rng);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < k; ++j) random_distribution(p.action_policy.row(i, j), a, rng);
  return p;
}

void TabularPolicies::validate(int s, int k, int a) const {
  if (option_policy.dim0() != static_cast<std::size_t>(s) ||
      option_policy.dim1() != static_cast<std::size_t>(k) ||
      option_policy.dim2() != static_cast<std::size_t>(k))
    throw std::invalid_argument("policies: option table shape mismatch");
  if (action_policy.dim0() != static_cast<std::size_t>(s) ||
      action_policy.dim1() != static_cast<std::size_t>(k) ||
      action_policy.dim2() != static_cast<std::size_t>(a))
    throw std::invalid_argument("policies: action table shape mismatch");
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < k; ++j) {
      check_distribution(option_policy.row(i, j), k, "option policy");
      check_distribution(action_policy.row(i, j), a, "action policy");
    }
  if (smdp_termination) {
    if (smdp_termination->rows() != static_cast<std::size_t>(k) ||
        smdp_termination->cols() != static_cast<std::size_t>(s))
      throw std::invalid_argument("policies: termination shape mismatch");
    for (double b : smdp_termination->data())
      if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("policies: termination not in [0,1]");
  }
  if (smdp_master) {
    if (smdp_master->rows() != static_cast<std::size_t>(s) ||
        smdp_master->cols() != static_cast<std::size_t>(k))
      throw std::invalid_argument("policies: master shape mismatch");
    for (int i = 0; i < s; ++i) check_distribution(smdp_master->row(i), k, "master policy");
  }
}

double traj_logprob_hitmdp(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                           const Trajectory& tau) {
  pols.validate(mdp.n_states, mdp.n_options, mdp.n_actions);
  check_chain(tau);
  LogProduct lp;
  for (int t = 0; t < tau.horizon(); ++t) {
    const Step& st = tau.steps[t];
    check_step(mdp, st);
    if (t == 0) {
      lp.add(mdp.initial(st.s, st.o_prev));
    } else {
      const Step& prev = tau.steps[t - 1];
      lp.add(mdp.transition(prev.s, prev.a, st.s));
    }
    lp.add(pols.option_policy(st.s, st.o_prev, st.o));
    lp.add(pols.action_policy(st.s, st.o, st.a));
  }
  return lp.value();
}

double traj_logprob_smdp(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                         const Trajectory& tau, const Step* boundary) {
  if (!pols.smdp_termination || !pols.smdp_master)
    throw std::invalid_argument("smdp: termination and master tables required");
  pols.validate(mdp.n_states, mdp.n_options, mdp.n_actions);
  check_chain(tau);
  if (boundary && !tau.steps.empty() && tau.steps[0].o_prev != boundary->o)
    throw std::invalid_argument("smdp: continuation does not start from the boundary option");
  const Table2& beta = *pols.smdp_termination;
  const Table2& master = *pols.smdp_master;
  LogProduct lp;
  for (int t = 0; t < tau.horizon(); ++t) {
    const Step& st = tau.steps[t];
    check_step(mdp, st);
    if (t == 0 && boundary == nullptr) {
      lp.add(mdp.initial(st.s, st.o_prev));
    } else {
      const Step& prev = t == 0 ? *boundary : tau.steps[t - 1];
      lp.add(mdp.transition(prev.s, prev.a, st.s));
    }
    double b = beta(st.o_prev, st.s);
    double bracket = (1.0 - b) * (st.o == st.o_prev ? 1.0 : 0.0) + b * master(st.s, st.o);
    lp.add(bracket);
    lp.add(pols.action_policy(st.s, st.o, st.a));
  }
  return lp.value();
}

double optimality_loglik(const FiniteHiTMDP& mdp, const Trajectory& tau,
                         const std::vector<double>& f_values) {
  if (f_values.size() != tau.steps.size())
    throw std::invalid_argument("optimality_loglik: one f value per step required");
  double total = 0.0;
  for (std::size_t t = 0; t < tau.steps.size(); ++t) {
    if (f_values[t] > 0.0)
      throw std::invalid_argument("optimality_loglik: f must be non-positive (step " +
                                  std::to_string(t) + ")");
    const Step& st = tau.steps[t];
    check_step(mdp, st);
    total += mdp.reward(st.s, st.a) + f_values[t];
  }
  return total;
}

double mutual_info_regularizer(const TabularPolicies& pols, const std::vector<double>& marginal,
                               int s, int o_prev, int o) {
  if (marginal.size() != pols.option_policy.dim2())
    throw std::invalid_argument("mutual_info_regularizer: marginal size mismatch");
  return clamped_pmi(pols.option_policy(s, o_prev, o), marginal[o]);
}

double clamped_pmi(double p_option, double marginal) {
  if (marginal <= 0.0) return kLogZero;
  double v = safe_log(p_option) - std::log(marginal);
  return v < 0.0 ? v : 0.0;
}

std::vector<double> option_marginal(const Trajectory& tau, int n_options) {
  std::vector<double> m(n_options, 0.0);
  if (tau.steps.empty()) return m;
  for (const Step& st : tau.steps) m[st.o] += 1.0;
  for (double& x : m) x /= static_cast<double>(tau.steps.size());
  return m;
}

FiniteHiTMDP random_hitmdp(int s, int k, int a, double gamma, Rng& rng) {
  FiniteHiTMDP m(s, k, a, gamma);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < a; ++j) {
      random_distribution(m.transition.row(i, j), s, rng);
      m.reward(i, j) = rng.uniform(-1.0, 1.0);
    }
  random_distribution(m.initial.data().data(), s * k, rng);
  return m;
}

}  // namespace hitmdp
