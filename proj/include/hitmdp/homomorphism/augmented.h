#pragma once

#include <utility>
#include <vector>

#include "hitmdp/core/hitmdp.h"

namespace hitmdp {

// Flattened view of a HiT-MDP over augmented states e = s*K + o_prev and
// augmented actions alpha = o*A + a. The option chosen at e becomes o_prev of
// the successor, so tau(e'|e, alpha) = P(s'|s,a) 1{o'_prev = o}.
struct AugmentedMDP {
  int n_states = 0, n_options = 0, n_actions = 0;
  int n_e = 0, n_alpha = 0;
  double discount = 0.0;
  Table2 reward;  // [n_e, n_alpha]
  std::vector<std::vector<std::pair<int, double>>> next;  // per e*n_alpha + alpha
  std::vector<double> initial;                            // [n_e]

  int e_index(int s, int o_prev) const { return s * n_options + o_prev; }
  int alpha_index(int a, int o) const { return o * n_actions + a; }
  int e_state(int e) const { return e / n_options; }
  int e_option(int e) const { return e % n_options; }
  int alpha_action(int al) const { return al % n_actions; }
  int alpha_option(int al) const { return al / n_actions; }
  const std::vector<std::pair<int, double>>& successors(int e, int al) const {
    return next[static_cast<std::size_t>(e) * n_alpha + al];
  }
};

AugmentedMDP augment(const FiniteHiTMDP& mdp);

// pi(alpha | e) = pi_O(o | s, o_prev) pi_A(a | s, o).
Table2 joint_policy(const AugmentedMDP& aug, const TabularPolicies& pols);

// E[sum_t R(e_t, alpha_t) + temperature * H(pi(.|e_t))] by enumeration.
double augmented_elbo_exact(const AugmentedMDP& aug, const Table2& policy, int horizon,
                            double temperature = 1.0);

// Non-entropic optimal action values by value iteration.
Table2 hard_value_iteration(const AugmentedMDP& aug, double tol = 1e-10,
                            int max_sweeps = 1000000);

// Action values of a fixed joint policy; entropy_weight adds a soft bonus.
Table2 augmented_policy_evaluation(const AugmentedMDP& aug, const Table2& policy,
                                   double tol = 1e-10, double entropy_weight = 0.0,
                                   int max_sweeps = 1000000);

}  // namespace hitmdp
