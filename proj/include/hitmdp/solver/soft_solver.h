#pragma once

#include <vector>

#include "hitmdp/core/hitmdp.h"
#include "json.hpp"

namespace hitmdp {

struct TemperaturePair {
  double alpha_a = 1.0;
  double alpha_o = 1.0;
  void validate() const;
};

struct SoftQTables {
  Table2 q_option;  // [S, K]
  Table3 q_action;  // [S, K, A]
};

struct EvaluationOptions {
  double tol = 1e-9;
  int max_sweeps = 100000;
  const SoftQTables* warm_start = nullptr;
  // Receives the sup-norm change of every sweep when set.
  std::vector<double>* sweep_distances = nullptr;
};

SoftQTables soft_policy_evaluation(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                                   const TemperaturePair& temps, double tol = 1e-9);
SoftQTables soft_policy_evaluation(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                                   const TemperaturePair& temps, const EvaluationOptions& opts);

// Sup-norm residual of both backup equations at q.
double backup_residual(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                       const TemperaturePair& temps, const SoftQTables& q);

TabularPolicies soft_policy_improvement(const SoftQTables& q, const TemperaturePair& temps);

struct PolicyIterationResult {
  TabularPolicies policies;
  SoftQTables q;
  // trace[0] is the ELBO of the initial policy, then one entry per improvement.
  std::vector<double> elbo_trace;
  int rounds = 0;
};

PolicyIterationResult soft_option_policy_iteration(const FiniteHiTMDP& mdp,
                                                   const TabularPolicies& init,
                                                   const TemperaturePair& temps,
                                                   double tol = 1e-9, int max_rounds = 1000);

// Expected per-step regularizer f(s, o_prev, o); all zeros in Zero mode.
// MutualInfo mode uses the option marginal under the discounted occupancy.
Table3 regularizer_table(const FiniteHiTMDP& mdp, const TabularPolicies& pols);
// f averaged over o_prev given (s, o) under the discounted occupancy.
Table2 expected_regularizer(const FiniteHiTMDP& mdp, const TabularPolicies& pols);
// Normalized discounted occupancy of augmented states (s, o_prev).
Table2 discounted_occupancy(const FiniteHiTMDP& mdp, const TabularPolicies& pols);

// Enumerates every trajectory of the horizon; throws past 1e7 terms.
// With discounted set, step t is weighted by gamma^t.
double elbo_exact(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                  const TemperaturePair& temps, int horizon, bool discounted = false);

// Same quantity by a forward pass over state-option marginals.
double elbo_forward(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                    const TemperaturePair& temps, int horizon, bool discounted);

// Discounted infinite-horizon ELBO, truncated where the tail is below 1e-14.
double elbo_discounted(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                       const TemperaturePair& temps);

double entropy(const double* p, int n);

nlohmann::json solver_result_to_json(const SoftQTables& q, const std::vector<double>& trace);

}  // namespace hitmdp
