#include "hitmdp/homomorphism/augmented.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hitmdp/solver/soft_solver.h"

namespace hitmdp {

AugmentedMDP augment(const FiniteHiTMDP& mdp) {
  mdp.validate();
  AugmentedMDP aug;
  aug.n_states = mdp.n_states;
  aug.n_options = mdp.n_options;
  aug.n_actions = mdp.n_actions;
  aug.n_e = mdp.n_states * mdp.n_options;
  aug.n_alpha = mdp.n_actions * mdp.n_options;
  aug.discount = mdp.discount;
  aug.reward = Table2(aug.n_e, aug.n_alpha);
  aug.next.resize(static_cast<std::size_t>(aug.n_e) * aug.n_alpha);
  aug.initial.assign(aug.n_e, 0.0);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int op = 0; op < mdp.n_options; ++op) {
      int e = aug.e_index(s, op);
      aug.initial[e] = mdp.initial(s, op);
      for (int o = 0; o < mdp.n_options; ++o)
        for (int a = 0; a < mdp.n_actions; ++a) {
          int al = aug.alpha_index(a, o);
          aug.reward(e, al) = mdp.reward(s, a);
          auto& list = aug.next[static_cast<std::size_t>(e) * aug.n_alpha + al];
          for (int s2 = 0; s2 < mdp.n_states; ++s2) {
            double p = mdp.transition(s, a, s2);
            if (p > 0.0) list.emplace_back(aug.e_index(s2, o), p);
          }
        }
    }
  return aug;
}

Table2 joint_policy(const AugmentedMDP& aug, const TabularPolicies& pols) {
  pols.validate(aug.n_states, aug.n_options, aug.n_actions);
  Table2 pi(aug.n_e, aug.n_alpha);
  for (int e = 0; e < aug.n_e; ++e) {
    int s = aug.e_state(e), op = aug.e_option(e);
    for (int o = 0; o < aug.n_options; ++o)
      for (int a = 0; a < aug.n_actions; ++a)
        pi(e, aug.alpha_index(a, o)) = pols.option_policy(s, op, o) * pols.action_policy(s, o, a);
  }
  return pi;
}

namespace {

struct AugEnumerator {
  const AugmentedMDP& aug;
  const Table2& pi;
  const std::vector<double>& bonus;
  int horizon;
  double total = 0.0;

  void visit(int t, int e, double prob, double ret) {
    double r0 = ret + bonus[e];
    for (int al = 0; al < aug.n_alpha; ++al) {
      double p = pi(e, al);
      if (p == 0.0) continue;
      double r = r0 + aug.reward(e, al);
      if (t + 1 == horizon) {
        total += prob * p * r;
        continue;
      }
      for (const auto& [e2, pt] : aug.successors(e, al)) visit(t + 1, e2, prob * p * pt, r);
    }
  }
};

}  // namespace

double augmented_elbo_exact(const AugmentedMDP& aug, const Table2& policy, int horizon,
                            double temperature) {
  if (horizon < 0) throw std::invalid_argument("augmented_elbo_exact: negative horizon");
  if (horizon == 0) return 0.0;
  double terms = static_cast<double>(aug.n_e) * aug.n_alpha *
                 std::pow(static_cast<double>(aug.n_states) * aug.n_alpha, horizon - 1);
  if (terms > 1e7) throw std::invalid_argument("augmented_elbo_exact: enumeration guard exceeded");
  std::vector<double> bonus(aug.n_e);
  for (int e = 0; e < aug.n_e; ++e) bonus[e] = temperature * entropy(policy.row(e), aug.n_alpha);
  AugEnumerator en{aug, policy, bonus, horizon};
  for (int e = 0; e < aug.n_e; ++e)
    if (aug.initial[e] > 0.0) en.visit(0, e, aug.initial[e], 0.0);
  return en.total;
}

Table2 hard_value_iteration(const AugmentedMDP& aug, double tol, int max_sweeps) {
  Table2 q(aug.n_e, aug.n_alpha, 0.0), nq = q;
  std::vector<double> v(aug.n_e);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (int e = 0; e < aug.n_e; ++e)
      v[e] = *std::max_element(q.row(e), q.row(e) + aug.n_alpha);
    double dist = 0.0;
    for (int e = 0; e < aug.n_e; ++e)
      for (int al = 0; al < aug.n_alpha; ++al) {
        double ev = 0.0;
        for (const auto& [e2, p] : aug.successors(e, al)) ev += p * v[e2];
        double x = aug.reward(e, al) + aug.discount * ev;
        dist = std::max(dist, std::abs(x - q(e, al)));
        nq(e, al) = x;
      }
    std::swap(q, nq);
    if (dist < tol) return q;
  }
  throw std::runtime_error("hard_value_iteration: no convergence");
}

Table2 augmented_policy_evaluation(const AugmentedMDP& aug, const Table2& policy, double tol,
                                   double entropy_weight, int max_sweeps) {
  Table2 q(aug.n_e, aug.n_alpha, 0.0), nq = q;
  std::vector<double> v(aug.n_e), bonus(aug.n_e, 0.0);
  if (entropy_weight != 0.0)
    for (int e = 0; e < aug.n_e; ++e)
      bonus[e] = entropy_weight * entropy(policy.row(e), aug.n_alpha);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (int e = 0; e < aug.n_e; ++e) {
      double x = bonus[e];
      for (int al = 0; al < aug.n_alpha; ++al) x += policy(e, al) * q(e, al);
      v[e] = x;
    }
    double dist = 0.0;
    for (int e = 0; e < aug.n_e; ++e)
      for (int al = 0; al < aug.n_alpha; ++al) {
        double ev = 0.0;
        for (const auto& [e2, p] : aug.successors(e, al)) ev += p * v[e2];
        double x = aug.reward(e, al) + aug.discount * ev;
        dist = std::max(dist, std::abs(x - q(e, al)));
        nq(e, al) = x;
      }
    std::swap(q, nq);
    if (dist < tol) return q;
  }
  throw std::runtime_error("augmented_policy_evaluation: no convergence");
}

}  // namespace hitmdp
