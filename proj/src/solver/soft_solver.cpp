#include "hitmdp/solver/soft_solver.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "hitmdp/core/json_io.h"

namespace hitmdp {

namespace {

struct Sparse {
  int next;
  double p;
};

// Nonzero transitions per (s, a).
std::vector<std::vector<Sparse>> sparse_transitions(const FiniteHiTMDP& mdp) {
  std::vector<std::vector<Sparse>> out(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double* row = mdp.transition.row(s, a);
      auto& list = out[static_cast<std::size_t>(s) * mdp.n_actions + a];
      for (int s2 = 0; s2 < mdp.n_states; ++s2)
        if (row[s2] > 0.0) list.push_back({s2, row[s2]});
    }
  return out;
}

void check_inputs(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                  const TemperaturePair& temps) {
  mdp.validate();
  pols.validate(mdp.n_states, mdp.n_options, mdp.n_actions);
  temps.validate();
}

}  // namespace

void TemperaturePair::validate() const {
  if (!(alpha_a > 0.0) || !(alpha_o > 0.0))
    throw std::invalid_argument("temperatures must be strictly positive");
}

double entropy(const double* p, int n) {
  double h = 0.0;
  for (int i = 0; i < n; ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}

Table2 discounted_occupancy(const FiniteHiTMDP& mdp, const TabularPolicies& pols) {
  const int S = mdp.n_states, K = mdp.n_options, A = mdp.n_actions;
  const double g = mdp.discount;
  auto sparse = sparse_transitions(mdp);
  Table2 d = mdp.initial;
  for (double& x : d.data()) x *= (1.0 - g);
  Table2 pushed(S, K);
  Table2 mass = mdp.initial;
  // Accumulate (1-g) sum_t g^t P(e_t) until the remaining weight is negligible.
  double weight = 1.0 - g;
  for (int t = 1; t < 200000 && g > 0.0; ++t) {
    std::fill(pushed.data().begin(), pushed.data().end(), 0.0);
    for (int s = 0; s < S; ++s)
      for (int op = 0; op < K; ++op) {
        double m = mass(s, op);
        if (m == 0.0) continue;
        for (int o = 0; o < K; ++o) {
          double mo = m * pols.option_policy(s, op, o);
          if (mo == 0.0) continue;
          for (int a = 0; a < A; ++a) {
            double ma = mo * pols.action_policy(s, o, a);
            if (ma == 0.0) continue;
            for (const Sparse& tr : sparse[static_cast<std::size_t>(s) * A + a])
              pushed(tr.next, o) += ma * tr.p;
          }
        }
      }
    mass = pushed;
    weight *= g;
    for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] += weight * mass.data()[i];
    if (weight < 1e-16) break;
  }
  double total = 0.0;
  for (double x : d.data()) total += x;
  for (double& x : d.data()) x /= total;
  return d;
}

Table3 regularizer_table(const FiniteHiTMDP& mdp, const TabularPolicies& pols) {
  const int S = mdp.n_states, K = mdp.n_options;
  Table3 f(S, K, K, 0.0);
  if (mdp.regularizer_mode == RegularizerMode::Zero) return f;
  Table2 d = discounted_occupancy(mdp, pols);
  std::vector<double> marginal(K, 0.0);
  for (int s = 0; s < S; ++s)
    for (int op = 0; op < K; ++op)
      for (int o = 0; o < K; ++o) marginal[o] += d(s, op) * pols.option_policy(s, op, o);
  for (int s = 0; s < S; ++s)
    for (int op = 0; op < K; ++op)
      for (int o = 0; o < K; ++o)
        f(s, op, o) = mutual_info_regularizer(pols, marginal, s, op, o);
  return f;
}

Table2 expected_regularizer(const FiniteHiTMDP& mdp, const TabularPolicies& pols) {
  const int S = mdp.n_states, K = mdp.n_options;
  Table2 fbar(S, K, 0.0);
  if (mdp.regularizer_mode == RegularizerMode::Zero) return fbar;
  Table3 f = regularizer_table(mdp, pols);
  Table2 d = discounted_occupancy(mdp, pols);
  for (int s = 0; s < S; ++s) {
    double ds = 0.0;
    for (int op = 0; op < K; ++op) ds += d(s, op);
    for (int o = 0; o < K; ++o) {
      // Weight of o_prev given (s, o); uniform over o_prev for unvisited states.
      double norm = 0.0, acc = 0.0;
      for (int op = 0; op < K; ++op) {
        double w = (ds > 0.0 ? d(s, op) : 1.0) * pols.option_policy(s, op, o);
        if (w <= 0.0) continue;
        norm += w;
        acc += w * f(s, op, o);
      }
      fbar(s, o) = norm > 0.0 ? acc / norm : 0.0;
    }
  }
  return fbar;
}

SoftQTables soft_policy_evaluation(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                                   const TemperaturePair& temps, double tol) {
  EvaluationOptions opts;
  opts.tol = tol;
  return soft_policy_evaluation(mdp, pols, temps, opts);
}

SoftQTables soft_policy_evaluation(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                                   const TemperaturePair& temps, const EvaluationOptions& opts) {
  check_inputs(mdp, pols, temps);
  if (!(opts.tol > 0.0)) throw std::invalid_argument("evaluation tol must be positive");
  const int S = mdp.n_states, K = mdp.n_options, A = mdp.n_actions;
  const double g = mdp.discount;
  auto sparse = sparse_transitions(mdp);
  Table2 fbar = expected_regularizer(mdp, pols);

  // Entropy bonuses are policy constants.
  Table2 h_option(S, K), h_action(S, K);
  for (int s = 0; s < S; ++s)
    for (int o = 0; o < K; ++o) {
      h_option(s, o) = temps.alpha_o * entropy(pols.option_policy.row(s, o), K);
      h_action(s, o) = temps.alpha_a * entropy(pols.action_policy.row(s, o), A);
    }

  SoftQTables q;
  if (opts.warm_start) {
    q = *opts.warm_start;
  } else {
    q.q_option = Table2(S, K, 0.0);
    q.q_action = Table3(S, K, A, 0.0);
  }
  Table2 v_next(S, K);  // soft value of (s', o_prev) under the old Q_O
  SoftQTables nq = q;

  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    for (int s = 0; s < S; ++s)
      for (int op = 0; op < K; ++op) {
        const double* po = pols.option_policy.row(s, op);
        double v = h_option(s, op);
        for (int o = 0; o < K; ++o) v += po[o] * q.q_option(s, o);
        v_next(s, op) = v;
      }
    double dist = 0.0;
    for (int s = 0; s < S; ++s)
      for (int o = 0; o < K; ++o) {
        for (int a = 0; a < A; ++a) {
          double ev = 0.0;
          for (const Sparse& tr : sparse[static_cast<std::size_t>(s) * A + a])
            ev += tr.p * v_next(tr.next, o);
          double qa = mdp.reward(s, a) + g * ev;
          dist = std::max(dist, std::abs(qa - q.q_action(s, o, a)));
          nq.q_action(s, o, a) = qa;
        }
        const double* pa = pols.action_policy.row(s, o);
        double qo = fbar(s, o) + h_action(s, o);
        for (int a = 0; a < A; ++a) qo += pa[a] * nq.q_action(s, o, a);
        dist = std::max(dist, std::abs(qo - q.q_option(s, o)));
        nq.q_option(s, o) = qo;
      }
    std::swap(q, nq);
    if (opts.sweep_distances) opts.sweep_distances->push_back(dist);
    if (!std::isfinite(dist)) throw std::runtime_error("soft_policy_evaluation: diverged");
    if (dist < opts.tol) return q;
  }
  throw std::runtime_error("soft_policy_evaluation: no convergence within " +
                           std::to_string(opts.max_sweeps) + " sweeps");
}

double backup_residual(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                       const TemperaturePair& temps, const SoftQTables& q) {
  const int S = mdp.n_states, K = mdp.n_options, A = mdp.n_actions;
  Table2 fbar = expected_regularizer(mdp, pols);
  double res = 0.0;
  for (int s = 0; s < S; ++s)
    for (int o = 0; o < K; ++o) {
      for (int a = 0; a < A; ++a) {
        double ev = 0.0;
        for (int s2 = 0; s2 < S; ++s2) {
          double p = mdp.transition(s, a, s2);
          if (p == 0.0) continue;
          const double* po = pols.option_policy.row(s2, o);
          double v = temps.alpha_o * entropy(po, K);
          for (int o2 = 0; o2 < K; ++o2) v += po[o2] * q.q_option(s2, o2);
          ev += p * v;
        }
        res = std::max(res, std::abs(mdp.reward(s, a) + mdp.discount * ev - q.q_action(s, o, a)));
      }
      const double* pa = pols.action_policy.row(s, o);
      double qo = fbar(s, o) + temps.alpha_a * entropy(pa, A);
      for (int a = 0; a < A; ++a) qo += pa[a] * q.q_action(s, o, a);
      res = std::max(res, std::abs(qo - q.q_option(s, o)));
    }
  return res;
}

namespace {

void softmax_row(const double* q, int n, double alpha, double* out) {
  double m = q[0];
  for (int i = 1; i < n; ++i) m = std::max(m, q[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp((q[i] - m) / alpha);
    z += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= z;
}

double sup_change(const TabularPolicies& a, const TabularPolicies& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.option_policy.size(); ++i)
    d = std::max(d, std::abs(a.option_policy.data()[i] - b.option_policy.data()[i]));
  for (std::size_t i = 0; i < a.action_policy.size(); ++i)
    d = std::max(d, std::abs(a.action_policy.data()[i] - b.action_policy.data()[i]));
  return d;
}

}  // namespace

TabularPolicies soft_policy_improvement(const SoftQTables& q, const TemperaturePair& temps) {
  temps.validate();
  const int S = static_cast<int>(q.q_action.dim0());
  const int K = static_cast<int>(q.q_action.dim1());
  const int A = static_cast<int>(q.q_action.dim2());
  for (double x : q.q_action.data())
    if (!std::isfinite(x)) throw std::invalid_argument("soft_policy_improvement: non-finite Q");
  for (double x : q.q_option.data())
    if (!std::isfinite(x)) throw std::invalid_argument("soft_policy_improvement: non-finite Q");
  TabularPolicies p;
  p.action_policy = Table3(S, K, A);
  p.option_policy = Table3(S, K, K);
  for (int s = 0; s < S; ++s) {
    for (int o = 0; o < K; ++o)
      softmax_row(q.q_action.row(s, o), A, temps.alpha_a, p.action_policy.row(s, o));
    softmax_row(q.q_option.row(s), K, temps.alpha_o, p.option_policy.row(s, 0));
    for (int op = 1; op < K; ++op)
      std::copy(p.option_policy.row(s, 0), p.option_policy.row(s, 0) + K,
                p.option_policy.row(s, op));
  }
  return p;
}

PolicyIterationResult soft_option_policy_iteration(const FiniteHiTMDP& mdp,
                                                   const TabularPolicies& init,
                                                   const TemperaturePair& temps, double tol,
                                                   int max_rounds) {
  check_inputs(mdp, init, temps);
  PolicyIterationResult res;
  res.policies = init;
  res.q = soft_policy_evaluation(mdp, init, temps, tol);
  res.elbo_trace.push_back(elbo_discounted(mdp, init, temps));
  for (int round = 1; round <= max_rounds; ++round) {
    TabularPolicies next = soft_policy_improvement(res.q, temps);
    res.elbo_trace.push_back(elbo_discounted(mdp, next, temps));
    double change = sup_change(next, res.policies);
    res.policies = std::move(next);
    EvaluationOptions opts;
    opts.tol = tol;
    SoftQTables warm = res.q;
    opts.warm_start = &warm;
    res.q = soft_policy_evaluation(mdp, res.policies, temps, opts);
    res.rounds = round;
    if (change < tol) return res;
  }
  throw std::runtime_error("soft_option_policy_iteration: round cap exceeded");
}

namespace {

struct StepTerms {
  Table3 f;         // [S, K, K]
  Table2 h_option;  // alpha_o * H[pi_O(.|s, o_prev)]
  Table2 h_action;  // alpha_a * H[pi_A(.|s, o)]
};

StepTerms step_terms(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                     const TemperaturePair& temps) {
  const int S = mdp.n_states, K = mdp.n_options, A = mdp.n_actions;
  StepTerms t{regularizer_table(mdp, pols), Table2(S, K), Table2(S, K)};
  for (int s = 0; s < S; ++s)
    for (int o = 0; o < K; ++o) {
      t.h_option(s, o) = temps.alpha_o * entropy(pols.option_policy.row(s, o), K);
      t.h_action(s, o) = temps.alpha_a * entropy(pols.action_policy.row(s, o), A);
    }
  return t;
}

struct Enumerator {
  const FiniteHiTMDP& mdp;
  const TabularPolicies& pols;
  const StepTerms& terms;
  int horizon;
  bool discounted;
  double total = 0.0;

  // Adds the expected return of all continuations from step t in (s, o_prev).
  void visit(int t, int s, int op, double prob, double ret, double weight) {
    const int K = mdp.n_options, A = mdp.n_actions, S = mdp.n_states;
    for (int o = 0; o < K; ++o) {
      double po = pols.option_policy(s, op, o);
      if (po == 0.0) continue;
      for (int a = 0; a < A; ++a) {
        double pa = pols.action_policy(s, o, a);
        if (pa == 0.0) continue;
        double r = ret + weight * (mdp.reward(s, a) + terms.f(s, op, o) +
                                   terms.h_action(s, o) + terms.h_option(s, op));
        double p = prob * po * pa;
        if (t + 1 == horizon) {
          total += p * r;
          continue;
        }
        double w2 = discounted ? weight * mdp.discount : weight;
        for (int s2 = 0; s2 < S; ++s2) {
          double ps = mdp.transition(s, a, s2);
          if (ps == 0.0) continue;
          visit(t + 1, s2, o, p * ps, r, w2);
        }
      }
    }
  }
};

}  // namespace

double elbo_exact(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                  const TemperaturePair& temps, int horizon, bool discounted) {
  check_inputs(mdp, pols, temps);
  if (horizon < 0) throw std::invalid_argument("elbo_exact: negative horizon");
  if (horizon == 0) return 0.0;
  const double S = mdp.n_states, K = mdp.n_options, A = mdp.n_actions;
  double terms = S * K * K * A * std::pow(S * K * A, horizon - 1);
  if (terms > 1e7) throw std::invalid_argument("elbo_exact: enumeration guard exceeded");
  StepTerms st = step_terms(mdp, pols, temps);
  Enumerator en{mdp, pols, st, horizon, discounted};
  for (int s = 0; s < mdp.n_states; ++s)
    for (int op = 0; op < mdp.n_options; ++op) {
      double p0 = mdp.initial(s, op);
      if (p0 > 0.0) en.visit(0, s, op, p0, 0.0, 1.0);
    }
  return en.total;
}

double elbo_forward(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                    const TemperaturePair& temps, int horizon, bool discounted) {
  check_inputs(mdp, pols, temps);
  const int S = mdp.n_states, K = mdp.n_options, A = mdp.n_actions;
  StepTerms st = step_terms(mdp, pols, temps);
  auto sparse = sparse_transitions(mdp);
  // Per (s, o_prev) expected one-step term.
  Table2 step_value(S, K);
  for (int s = 0; s < S; ++s)
    for (int op = 0; op < K; ++op) {
      double v = st.h_option(s, op);
      for (int o = 0; o < K; ++o) {
        double po = pols.option_policy(s, op, o);
        double inner = st.f(s, op, o) + st.h_action(s, o);
        for (int a = 0; a < A; ++a) inner += pols.action_policy(s, o, a) * mdp.reward(s, a);
        v += po * inner;
      }
      step_value(s, op) = v;
    }
  Table2 mass = mdp.initial, next(S, K);
  double total = 0.0, weight = 1.0;
  for (int t = 0; t < horizon; ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < mass.size(); ++i) acc += mass.data()[i] * step_value.data()[i];
    total += weight * acc;
    if (discounted) weight *= mdp.discount;
    if (t + 1 == horizon) break;
    std::fill(next.data().begin(), next.data().end(), 0.0);
    for (int s = 0; s < S; ++s)
      for (int op = 0; op < K; ++op) {
        double m = mass(s, op);
        if (m == 0.0) continue;
        for (int o = 0; o < K; ++o) {
          double mo = m * pols.option_policy(s, op, o);
          if (mo == 0.0) continue;
          for (int a = 0; a < A; ++a) {
            double ma = mo * pols.action_policy(s, o, a);
            if (ma == 0.0) continue;
            for (const Sparse& tr : sparse[static_cast<std::size_t>(s) * A + a])
              next(tr.next, o) += ma * tr.p;
          }
        }
      }
    std::swap(mass, next);
  }
  return total;
}

double elbo_discounted(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                       const TemperaturePair& temps) {
  const double g = mdp.discount;
  if (g == 0.0) return elbo_forward(mdp, pols, temps, 1, true);
  double rmax = 0.0;
  for (double r : mdp.reward.data()) rmax = std::max(rmax, std::abs(r));
  double bound = (rmax + temps.alpha_a * std::log(mdp.n_actions) +
                  temps.alpha_o * std::log(mdp.n_options)) /
                 (1.0 - g);
  int horizon = 1;
  if (bound > 0.0)
    horizon = static_cast<int>(std::ceil(std::log(1e-14 / bound) / std::log(g))) + 1;
  horizon = std::clamp(horizon, 1, 1000000);
  return elbo_forward(mdp, pols, temps, horizon, true);
}

nlohmann::json solver_result_to_json(const SoftQTables& q, const std::vector<double>& trace) {
  nlohmann::json j;
  j["q_option"] = table_to_json(q.q_option);
  j["q_action"] = table_to_json(q.q_action);
  j["elbo_trace"] = trace;
  return j;
}

}  // namespace hitmdp
