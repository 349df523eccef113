#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hitmdp/core/hitmdp.h"
#include "hitmdp/homomorphism/augmented.h"
#include "hitmdp/solver/soft_solver.h"
#include "json.hpp"

namespace hitmdp {

// f maps augmented base states to augmented abstract states; action_map[e]
// maps augmented base actions to augmented abstract actions (g_e).
struct FiniteHomomorphism {
  std::vector<int> state_option_map;
  std::vector<std::vector<int>> action_map;
  FiniteHiTMDP base;
  FiniteHiTMDP abstract_mdp;

  // Shapes and index ranges only; the homomorphism conditions live in
  // validate_homomorphism.
  void check_dimensions() const;
};

struct Counterexample {
  std::string condition;  // reward | transition | bundle | surjective
  std::vector<int> tuple;
  double lhs = 0.0;
  double rhs = 0.0;
};

struct ValidationReport {
  bool pass = true;
  long violations = 0;
  std::vector<Counterexample> counterexamples;  // first 10
};

ValidationReport validate_homomorphism(const FiniteHomomorphism& h, double tol = 1e-9);

enum class SplitMode { UniformOverPreimage, Given };

struct LiftedPolicy {
  Table2 policy;  // [n_e, n_alpha]
  // Probability of alpha within its class g_e^{-1}(g_e(alpha)).
  Table2 within_class_split;
};

LiftedPolicy lift_policy(const FiniteHomomorphism& h, const TabularPolicies& abstract_policy,
                         SplitMode split, const Table2* given_split = nullptr);

enum class EquivalenceMode { Optimal, FixedPolicy };

// Optimal mode is non-entropic and ignores abstract_policy. FixedPolicy mode
// lifts abstract_policy uniformly; temps (alpha_a == alpha_o required) adds a
// joint-entropy bonus on both sides.
double value_equivalence_gap(const FiniteHomomorphism& h,
                             const std::optional<TemperaturePair>& temps, EquivalenceMode mode,
                             const TabularPolicies* abstract_policy = nullptr,
                             double vi_tol = 1e-10);

struct ElboGap {
  double gap = 0.0;
  double conditional_entropy_term = 0.0;
};

// Throws std::logic_error when gap < -1e-10 or |gap - term| >= 1e-8.
ElboGap elbo_gap(const FiniteHomomorphism& h, const TabularPolicies& abstract_policy,
                 const LiftedPolicy& lifted, int horizon);

// h2 after h1.
FiniteHomomorphism compose(const FiniteHomomorphism& h1, const FiniteHomomorphism& h2);

FiniteHomomorphism identity_homomorphism(const FiniteHiTMDP& mdp);

struct QuotientResult {
  std::optional<FiniteHomomorphism> homomorphism;
  std::vector<std::string> violations;
};

// Builds the abstract MDP from a state partition, an option map and per-state
// action maps. Every member of a block must agree exactly with the block
// representative; nothing is averaged.
QuotientResult build_quotient(const FiniteHiTMDP& base, const std::vector<int>& state_block,
                              const std::vector<int>& option_map,
                              const std::vector<std::vector<int>>& action_maps,
                              int n_abstract_options, int n_abstract_actions,
                              double tol = 1e-12);

// 8-state line with mirror symmetry and its 4-state quotient.
FiniteHomomorphism mirror_fixture();

struct GeneratorParams {
  int abstract_states = 3;
  int abstract_options = 2;
  int abstract_actions = 2;
  int max_copies = 2;       // base states per abstract state
  int option_factor = 2;    // base options per abstract option
  int extra_actions = 1;    // base actions beyond the abstract count
  double discount = 0.9;
};

// Random base MDP lifted from a random abstract MDP; validates by construction.
FiniteHomomorphism random_homomorphism(Rng& rng, const GeneratorParams& p);
// Random base lifted from a given abstract MDP.
FiniteHomomorphism lift_random(const FiniteHiTMDP& abstract_mdp, Rng& rng,
                               const GeneratorParams& p);

nlohmann::json to_json(const FiniteHomomorphism& h);
FiniteHomomorphism homomorphism_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ValidationReport& r);

}  // namespace hitmdp
