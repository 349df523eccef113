#pragma once

// Reference computations written independently of the library code paths:
// dense loops, no sparsity, no shared helpers beyond the data types.

#include <algorithm>
#include <cmath>
#include <vector>

#include "hitmdp/core/hitmdp.h"
#include "hitmdp/core/rng.h"
#include "hitmdp/solver/soft_solver.h"

namespace oracle {

using hitmdp::FiniteHiTMDP;
using hitmdp::TabularPolicies;
using hitmdp::Table2;
using hitmdp::Table3;

inline double ent(const double* p, int n) {
  double h = 0.0;
  for (int i = 0; i < n; ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}

inline double logsumexp(const std::vector<double>& x, double alpha) {
  double m = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp((v - m) / alpha);
  return m + alpha * std::log(z);
}

// Soft value iteration on the joint (s, o_prev) space, Zero regularizer.
struct SoftOptimal {
  Table2 q_option;  // [S, K]
  Table3 q_action;  // [S, K, A]
};

inline SoftOptimal soft_value_iteration(const FiniteHiTMDP& m, double alpha_a, double alpha_o,
                                        double tol = 1e-13, int max_iter = 2000000) {
  const int S = m.n_states, K = m.n_options, A = m.n_actions;
  Table2 v(S, K, 0.0);  // V(s, o_prev)
  SoftOptimal out{Table2(S, K), Table3(S, K, A)};
  for (int it = 0; it < max_iter; ++it) {
    for (int s = 0; s < S; ++s)
      for (int o = 0; o < K; ++o) {
        std::vector<double> qa(A);
        for (int a = 0; a < A; ++a) {
          double ev = 0.0;
          for (int s2 = 0; s2 < S; ++s2) ev += m.transition(s, a, s2) * v(s2, o);
          qa[a] = m.reward(s, a) + m.discount * ev;
          out.q_action(s, o, a) = qa[a];
        }
        out.q_option(s, o) = logsumexp(qa, alpha_a);
      }
    double diff = 0.0;
    for (int s = 0; s < S; ++s)
      for (int op = 0; op < K; ++op) {
        std::vector<double> qo(out.q_option.row(s), out.q_option.row(s) + K);
        double nv = logsumexp(qo, alpha_o);
        diff = std::max(diff, std::abs(nv - v(s, op)));
        v(s, op) = nv;
      }
    if (diff < tol) return out;
  }
  return out;
}

// Iterates the coupled evaluation backup a fixed number of times.
inline hitmdp::SoftQTables long_run_backup(const FiniteHiTMDP& m, const TabularPolicies& p,
                                           double alpha_a, double alpha_o, int iters) {
  const int S = m.n_states, K = m.n_options, A = m.n_actions;
  hitmdp::SoftQTables q{Table2(S, K, 0.0), Table3(S, K, A, 0.0)};
  for (int it = 0; it < iters; ++it) {
    Table3 qa(S, K, A);
    for (int s = 0; s < S; ++s)
      for (int o = 0; o < K; ++o)
        for (int a = 0; a < A; ++a) {
          double ev = 0.0;
          for (int s2 = 0; s2 < S; ++s2) {
            double inner = alpha_o * ent(p.option_policy.row(s2, o), K);
            for (int o2 = 0; o2 < K; ++o2) inner += p.option_policy(s2, o, o2) * q.q_option(s2, o2);
            ev += m.transition(s, a, s2) * inner;
          }
          qa(s, o, a) = m.reward(s, a) + m.discount * ev;
        }
    Table2 qo(S, K);
    for (int s = 0; s < S; ++s)
      for (int o = 0; o < K; ++o) {
        double x = alpha_a * ent(p.action_policy.row(s, o), A);
        for (int a = 0; a < A; ++a) x += p.action_policy(s, o, a) * qa(s, o, a);
        qo(s, o) = x;
      }
    q.q_action = qa;
    q.q_option = qo;
  }
  return q;
}

// Samples one trajectory's ELBO integrand (Zero regularizer).
struct McResult {
  double mean = 0.0;
  double se = 0.0;
};

inline McResult monte_carlo_elbo(const FiniteHiTMDP& m, const TabularPolicies& p, double alpha_a,
                                 double alpha_o, int horizon, int n, std::uint64_t seed) {
  hitmdp::Rng rng(seed);
  const int S = m.n_states, K = m.n_options, A = m.n_actions;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    int cell = rng.categorical(m.initial.data());
    int s = cell / K, op = cell % K;
    double g = 0.0;
    for (int t = 0; t < horizon; ++t) {
      const double* po = p.option_policy.row(s, op);
      int o = rng.categorical({po, static_cast<std::size_t>(K)});
      const double* pa = p.action_policy.row(s, o);
      int a = rng.categorical({pa, static_cast<std::size_t>(A)});
      g += m.reward(s, a) + alpha_o * ent(po, K) + alpha_a * ent(pa, A);
      s = rng.categorical({m.transition.row(s, a), static_cast<std::size_t>(S)});
      op = o;
    }
    sum += g;
    sum2 += g * g;
  }
  McResult r;
  r.mean = sum / n;
  r.se = std::sqrt(std::max(0.0, sum2 / n - r.mean * r.mean) / (n - 1));
  return r;
}

}  // namespace oracle
