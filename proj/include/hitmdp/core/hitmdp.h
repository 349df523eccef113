#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hitmdp/core/rng.h"
#include "hitmdp/core/table.h"

namespace hitmdp {

// Stand-in for log(0): keeps sums finite and comparable.
inline constexpr double kLogZero = -1e30;

enum class RegularizerMode { Zero, MutualInfo };

// Finite MDP with a latent option. initial(s, o) is the joint distribution of
// the first state and the option carried into the first step.
struct FiniteHiTMDP {
  int n_states = 0;
  int n_options = 0;
  int n_actions = 0;
  Table3 transition;  // [S, A, S]
  Table2 reward;      // [S, A]
  RegularizerMode regularizer_mode = RegularizerMode::Zero;
  double discount = 0.0;
  Table2 initial;  // [S, K]

  FiniteHiTMDP() = default;
  FiniteHiTMDP(int s, int k, int a, double gamma);

  // Throws std::invalid_argument on a broken invariant.
  void validate() const;
};

struct Step {
  int s = 0;
  int o_prev = 0;
  int a = 0;
  int o = 0;
  double r = 0.0;
};

struct Trajectory {
  std::vector<Step> steps;
  int horizon() const { return static_cast<int>(steps.size()); }
};

struct TabularPolicies {
  Table3 option_policy;  // [S, K(o_prev), K(o)]
  Table3 action_policy;  // [S, K, A]
  std::optional<Table2> smdp_termination;  // [K, S], P_o(b=1 | s)
  std::optional<Table2> smdp_master;       // [S, K]

  static TabularPolicies uniform(int s, int k, int a);
  // Dirichlet(1)-style random conditionals.
  static TabularPolicies random(int s, int k, int a, Rng& rng);

  void validate(int s, int k, int a) const;
};

double traj_logprob_hitmdp(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                           const Trajectory& tau);

// When `boundary` is given, tau is scored as a continuation of a trajectory
// whose last step is *boundary: the initial term becomes the transition from
// the boundary step.
double traj_logprob_smdp(const FiniteHiTMDP& mdp, const TabularPolicies& pols,
                         const Trajectory& tau, const Step* boundary = nullptr);

double optimality_loglik(const FiniteHiTMDP& mdp, const Trajectory& tau,
                         const std::vector<double>& f_values);

double mutual_info_regularizer(const TabularPolicies& pols,
                               const std::vector<double>& marginal, int s,
                               int o_prev, int o);

// min(0, log p_option - log marginal), kLogZero when the marginal is 0.
double clamped_pmi(double p_option, double marginal);

// Empirical option frequencies of a trajectory.
std::vector<double> option_marginal(const Trajectory& tau, int n_options);

// Random dense instance for tests and generators.
FiniteHiTMDP random_hitmdp(int s, int k, int a, double gamma, Rng& rng);

// Fills a row with a random distribution (normalized exponentials).
void random_distribution(double* row, int n, Rng& rng);

}  // namespace hitmdp
