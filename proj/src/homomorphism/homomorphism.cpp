#include "hitmdp/homomorphism/homomorphism.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "hitmdp/core/json_io.h"

namespace hitmdp {

namespace {

constexpr std::size_t kMaxCounterexamples = 10;

void record(ValidationReport& rep, Counterexample c) {
  rep.pass = false;
  ++rep.violations;
  if (rep.counterexamples.size() < kMaxCounterexamples) rep.counterexamples.push_back(std::move(c));
}

}  // namespace

void FiniteHomomorphism::check_dimensions() const {
  base.validate();
  abstract_mdp.validate();
  const int n_e = base.n_states * base.n_options;
  const int n_alpha = base.n_actions * base.n_options;
  const int m_e = abstract_mdp.n_states * abstract_mdp.n_options;
  const int m_alpha = abstract_mdp.n_actions * abstract_mdp.n_options;
  if (static_cast<int>(state_option_map.size()) != n_e)
    throw std::invalid_argument("homomorphism: state_option_map must cover every (s, o_prev)");
  if (static_cast<int>(action_map.size()) != n_e)
    throw std::invalid_argument("homomorphism: one action map per augmented state required");
  for (int x : state_option_map)
    if (x < 0 || x >= m_e) throw std::invalid_argument("homomorphism: state map out of range");
  for (const auto& g : action_map) {
    if (static_cast<int>(g.size()) != n_alpha)
      throw std::invalid_argument("homomorphism: action map size mismatch");
    for (int x : g)
      if (x < 0 || x >= m_alpha) throw std::invalid_argument("homomorphism: action map out of range");
  }
}

ValidationReport validate_homomorphism(const FiniteHomomorphism& h, double tol) {
  h.check_dimensions();
  AugmentedMDP base = augment(h.base);
  AugmentedMDP abs = augment(h.abstract_mdp);
  ValidationReport rep;

  // Bundle commutation: one abstract base state per base state.
  for (int s = 0; s < base.n_states; ++s) {
    int e0 = base.e_index(s, 0);
    int sbar = abs.e_state(h.state_option_map[e0]);
    for (int op = 1; op < base.n_options; ++op) {
      int e = base.e_index(s, op);
      int other = abs.e_state(h.state_option_map[e]);
      if (other != sbar) record(rep, {"bundle", {e0, e}, double(sbar), double(other)});
    }
  }
  // Surjectivity of every g_e.
  for (int e = 0; e < base.n_e; ++e) {
    std::vector<char> hit(abs.n_alpha, 0);
    for (int al = 0; al < base.n_alpha; ++al) hit[h.action_map[e][al]] = 1;
    for (int b = 0; b < abs.n_alpha; ++b)
      if (!hit[b]) record(rep, {"surjective", {e, b}, 0.0, 1.0});
  }

  std::vector<double> pushed(abs.n_e);
  for (int e = 0; e < base.n_e; ++e) {
    int ebar = h.state_option_map[e];
    for (int al = 0; al < base.n_alpha; ++al) {
      int abar = h.action_map[e][al];
      double lhs = base.reward(e, al), rhs = abs.reward(ebar, abar);
      if (std::abs(lhs - rhs) > tol) record(rep, {"reward", {e, al, ebar, abar}, lhs, rhs});

      std::fill(pushed.begin(), pushed.end(), 0.0);
      for (const auto& [e2, p] : base.successors(e, al)) pushed[h.state_option_map[e2]] += p;
      std::vector<double> target(abs.n_e, 0.0);
      for (const auto& [e2, p] : abs.successors(ebar, abar)) target[e2] = p;
      for (int e2 = 0; e2 < abs.n_e; ++e2)
        if (std::abs(target[e2] - pushed[e2]) > tol)
          record(rep, {"transition", {e, al, e2}, target[e2], pushed[e2]});
    }
  }
  return rep;
}

LiftedPolicy lift_policy(const FiniteHomomorphism& h, const TabularPolicies& abstract_policy,
                         SplitMode split, const Table2* given_split) {
  h.check_dimensions();
  AugmentedMDP base = augment(h.base);
  AugmentedMDP abs = augment(h.abstract_mdp);
  Table2 pibar = joint_policy(abs, abstract_policy);
  LiftedPolicy out{Table2(base.n_e, base.n_alpha), Table2(base.n_e, base.n_alpha)};
  if (split == SplitMode::Given) {
    if (!given_split || given_split->rows() != static_cast<std::size_t>(base.n_e) ||
        given_split->cols() != static_cast<std::size_t>(base.n_alpha))
      throw std::invalid_argument("lift_policy: Given split needs an [n_e, n_alpha] table");
  }
  for (int e = 0; e < base.n_e; ++e) {
    const auto& g = h.action_map[e];
    std::vector<int> class_size(abs.n_alpha, 0);
    std::vector<double> class_mass(abs.n_alpha, 0.0);
    for (int al = 0; al < base.n_alpha; ++al) {
      ++class_size[g[al]];
      if (given_split) class_mass[g[al]] += (*given_split)(e, al);
    }
    for (int b = 0; b < abs.n_alpha; ++b) {
      if (class_size[b] == 0) throw std::invalid_argument("lift_policy: empty preimage");
      if (split == SplitMode::Given && std::abs(class_mass[b] - 1.0) > 1e-12)
        throw std::invalid_argument("lift_policy: given split does not sum to 1 within a class");
    }
    int ebar = h.state_option_map[e];
    for (int al = 0; al < base.n_alpha; ++al) {
      double w = split == SplitMode::UniformOverPreimage ? 1.0 / class_size[g[al]]
                                                         : (*given_split)(e, al);
      out.within_class_split(e, al) = w;
      out.policy(e, al) = pibar(ebar, g[al]) * w;
    }
  }
  return out;
}

double value_equivalence_gap(const FiniteHomomorphism& h,
                             const std::optional<TemperaturePair>& temps, EquivalenceMode mode,
                             const TabularPolicies* abstract_policy, double vi_tol) {
  h.check_dimensions();
  if (h.base.discount != h.abstract_mdp.discount)
    throw std::invalid_argument("value_equivalence_gap: discounts differ");
  AugmentedMDP base = augment(h.base);
  AugmentedMDP abs = augment(h.abstract_mdp);
  Table2 q, qbar;
  if (mode == EquivalenceMode::Optimal) {
    if (temps) throw std::invalid_argument("value_equivalence_gap: Optimal mode is non-entropic");
    q = hard_value_iteration(base, vi_tol);
    qbar = hard_value_iteration(abs, vi_tol);
  } else {
    if (!abstract_policy)
      throw std::invalid_argument("value_equivalence_gap: FixedPolicy needs an abstract policy");
    double w = 0.0;
    if (temps) {
      temps->validate();
      if (temps->alpha_a != temps->alpha_o)
        throw std::invalid_argument("value_equivalence_gap: joint entropy needs equal temperatures");
      w = temps->alpha_a;
    }
    LiftedPolicy up = lift_policy(h, *abstract_policy, SplitMode::UniformOverPreimage);
    q = augmented_policy_evaluation(base, up.policy, vi_tol, w);
    qbar = augmented_policy_evaluation(abs, joint_policy(abs, *abstract_policy), vi_tol, w);
  }
  double gap = 0.0;
  for (int e = 0; e < base.n_e; ++e)
    for (int al = 0; al < base.n_alpha; ++al)
      gap = std::max(gap, std::abs(q(e, al) - qbar(h.state_option_map[e], h.action_map[e][al])));
  return gap;
}

namespace {

struct GapEnumerator {
  const AugmentedMDP& aug;
  const Table2& pi;
  const std::vector<double>& within;  // within-class entropy at e
  int horizon;
  double total = 0.0;

  void visit(int t, int e, double prob, double acc) {
    double a0 = acc + within[e];
    for (int al = 0; al < aug.n_alpha; ++al) {
      double p = pi(e, al);
      if (p == 0.0) continue;
      if (t + 1 == horizon) {
        total += prob * p * a0;
        continue;
      }
      for (const auto& [e2, pt] : aug.successors(e, al)) visit(t + 1, e2, prob * p * pt, a0);
    }
  }
};

}  // namespace

ElboGap elbo_gap(const FiniteHomomorphism& h, const TabularPolicies& abstract_policy,
                 const LiftedPolicy& lifted, int horizon) {
  h.check_dimensions();
  AugmentedMDP base = augment(h.base);
  AugmentedMDP abs = augment(h.abstract_mdp);
  // The base start distribution must push forward to the abstract one.
  std::vector<double> pushed(abs.n_e, 0.0);
  for (int e = 0; e < base.n_e; ++e) pushed[h.state_option_map[e]] += base.initial[e];
  for (int e = 0; e < abs.n_e; ++e)
    if (std::abs(pushed[e] - abs.initial[e]) > 1e-12)
      throw std::invalid_argument("elbo_gap: initial distribution is not a pushforward");

  ElboGap out;
  double upper = augmented_elbo_exact(base, lifted.policy, horizon);
  double lower = augmented_elbo_exact(abs, joint_policy(abs, abstract_policy), horizon);
  out.gap = upper - lower;

  // H(pi_up(alpha | e, class)) = sum_beta pibar(beta) H(split(. | beta)).
  std::vector<double> within(base.n_e, 0.0);
  for (int e = 0; e < base.n_e; ++e) {
    double hsum = 0.0;
    for (int al = 0; al < base.n_alpha; ++al) {
      double w = lifted.within_class_split(e, al);
      double p = lifted.policy(e, al);
      if (w > 0.0 && p > 0.0) hsum -= p * std::log(w);
    }
    within[e] = hsum;
  }
  if (horizon > 0) {
    GapEnumerator en{base, lifted.policy, within, horizon};
    for (int e = 0; e < base.n_e; ++e)
      if (base.initial[e] > 0.0) en.visit(0, e, base.initial[e], 0.0);
    out.conditional_entropy_term = en.total;
  }
  if (out.gap < -1e-10 || std::abs(out.gap - out.conditional_entropy_term) >= 1e-8) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "elbo_gap: decomposition violated (gap " << out.gap << ", conditional entropy "
        << out.conditional_entropy_term << ")";
    throw std::logic_error(msg.str());
  }
  return out;
}

FiniteHomomorphism compose(const FiniteHomomorphism& h1, const FiniteHomomorphism& h2) {
  h1.check_dimensions();
  h2.check_dimensions();
  FiniteHomomorphism c;
  c.base = h1.base;
  c.abstract_mdp = h2.abstract_mdp;
  const int n_e = static_cast<int>(h1.state_option_map.size());
  c.state_option_map.resize(n_e);
  c.action_map.resize(n_e);
  for (int e = 0; e < n_e; ++e) {
    int mid = h1.state_option_map[e];
    c.state_option_map[e] = h2.state_option_map[mid];
    c.action_map[e].resize(h1.action_map[e].size());
    for (std::size_t al = 0; al < h1.action_map[e].size(); ++al)
      c.action_map[e][al] = h2.action_map[mid][h1.action_map[e][al]];
  }
  return c;
}

FiniteHomomorphism identity_homomorphism(const FiniteHiTMDP& mdp) {
  FiniteHomomorphism h;
  h.base = mdp;
  h.abstract_mdp = mdp;
  const int n_e = mdp.n_states * mdp.n_options, n_alpha = mdp.n_actions * mdp.n_options;
  h.state_option_map.resize(n_e);
  h.action_map.assign(n_e, std::vector<int>(n_alpha));
  for (int e = 0; e < n_e; ++e) {
    h.state_option_map[e] = e;
    for (int al = 0; al < n_alpha; ++al) h.action_map[e][al] = al;
  }
  return h;
}

QuotientResult build_quotient(const FiniteHiTMDP& base, const std::vector<int>& state_block,
                              const std::vector<int>& option_map,
                              const std::vector<std::vector<int>>& action_maps,
                              int n_abstract_options, int n_abstract_actions, double tol) {
  base.validate();
  const int S = base.n_states, K = base.n_options, A = base.n_actions;
  if (static_cast<int>(state_block.size()) != S || static_cast<int>(option_map.size()) != K ||
      static_cast<int>(action_maps.size()) != S)
    throw std::invalid_argument("build_quotient: map sizes do not match the base MDP");
  int n_blocks = 0;
  for (int b : state_block) n_blocks = std::max(n_blocks, b + 1);
  const int Kb = n_abstract_options, Ab = n_abstract_actions;

  QuotientResult res;
  auto fail = [&](const std::string& what) { res.violations.push_back(what); };

  // First member of each block is its representative.
  std::vector<int> rep(n_blocks, -1);
  for (int s = 0; s < S; ++s)
    if (rep[state_block[s]] < 0) rep[state_block[s]] = s;
  for (int b = 0; b < n_blocks; ++b)
    if (rep[b] < 0) fail("block " + std::to_string(b) + " is empty");
  if (!res.violations.empty()) return res;

  FiniteHiTMDP abs(n_blocks, Kb, Ab, base.discount);
  std::vector<char> have(static_cast<std::size_t>(n_blocks) * Ab, 0);
  for (int s = 0; s < S; ++s) {
    int b = state_block[s];
    for (int a = 0; a < A; ++a) {
      int ab = action_maps[s][a];
      std::vector<double> block_p(n_blocks, 0.0);
      for (int s2 = 0; s2 < S; ++s2) block_p[state_block[s2]] += base.transition(s, a, s2);
      char& seen = have[static_cast<std::size_t>(b) * Ab + ab];
      if (!seen) {
        seen = 1;
        abs.reward(b, ab) = base.reward(s, a);
        for (int b2 = 0; b2 < n_blocks; ++b2) abs.transition(b, ab, b2) = block_p[b2];
        continue;
      }
      if (std::abs(abs.reward(b, ab) - base.reward(s, a)) > tol)
        fail("reward of state " + std::to_string(s) + " action " + std::to_string(a) +
             " differs from its block");
      for (int b2 = 0; b2 < n_blocks; ++b2)
        if (std::abs(abs.transition(b, ab, b2) - block_p[b2]) > tol)
          fail("block transition of state " + std::to_string(s) + " action " +
               std::to_string(a) + " to block " + std::to_string(b2) + " differs");
    }
  }
  for (std::size_t i = 0; i < have.size(); ++i)
    if (!have[i]) fail("abstract action " + std::to_string(i % Ab) + " of block " +
                       std::to_string(i / Ab) + " has no preimage");
  for (int s = 0; s < S; ++s)
    for (int o = 0; o < K; ++o) abs.initial(state_block[s], option_map[o]) += base.initial(s, o);
  abs.regularizer_mode = base.regularizer_mode;
  if (!res.violations.empty()) return res;

  FiniteHomomorphism h;
  h.base = base;
  h.abstract_mdp = abs;
  h.state_option_map.resize(S * K);
  h.action_map.assign(S * K, std::vector<int>(A * K));
  for (int s = 0; s < S; ++s)
    for (int op = 0; op < K; ++op) {
      int e = s * K + op;
      h.state_option_map[e] = state_block[s] * Kb + option_map[op];
      for (int o = 0; o < K; ++o)
        for (int a = 0; a < A; ++a)
          h.action_map[e][o * A + a] = option_map[o] * Ab + action_maps[s][a];
    }
  res.homomorphism = std::move(h);
  return res;
}

FiniteHomomorphism mirror_fixture() {
  // Line 0..7; action 0 moves left, 1 moves right, with a 0.1 slip to the
  // opposite side. Abstract state min(s, 7-s); abstract action 0 = outward.
  const int S = 8, K = 2, A = 2;
  FiniteHiTMDP base(S, K, A, 0.9);
  auto move = [&](int s, int dir) { return std::clamp(s + dir, 0, S - 1); };
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      int dir = a == 0 ? -1 : 1;
      base.transition(s, a, move(s, dir)) += 0.9;
      base.transition(s, a, move(s, -dir)) += 0.1;
    }
  std::vector<int> block(S);
  std::vector<std::vector<int>> amap(S, std::vector<int>(A));
  const double block_reward[4] = {1.0, 0.0, -0.1, 0.2};
  for (int s = 0; s < S; ++s) {
    block[s] = std::min(s, S - 1 - s);
    bool left_half = s < S / 2;
    amap[s][0] = left_half ? 0 : 1;
    amap[s][1] = left_half ? 1 : 0;
    for (int a = 0; a < A; ++a) {
      // Outward at an end keeps the agent at the end.
      double r = block_reward[block[s]];
      if (amap[s][a] == 0 && block[s] == 0) r += 1.0;
      base.reward(s, a) = r;
    }
  }
  for (int s = 0; s < S; ++s)
    for (int o = 0; o < K; ++o) base.initial(s, o) = 1.0 / (S * K);
  QuotientResult q = build_quotient(base, block, {0, 1}, amap, K, A);
  if (!q.homomorphism) throw std::logic_error("mirror_fixture: quotient is inconsistent");
  return *q.homomorphism;
}

FiniteHomomorphism lift_random(const FiniteHiTMDP& abstract_mdp, Rng& rng,
                               const GeneratorParams& p) {
  const int Sb = abstract_mdp.n_states, Kb = abstract_mdp.n_options, Ab = abstract_mdp.n_actions;
  // Copies per abstract state, state labels, options and per-state action maps.
  std::vector<int> block;
  std::vector<std::vector<int>> members(Sb);
  for (int sb = 0; sb < Sb; ++sb) {
    int copies = 1 + rng.uniform_int(p.max_copies);
    for (int c = 0; c < copies; ++c) {
      members[sb].push_back(static_cast<int>(block.size()));
      block.push_back(sb);
    }
  }
  const int S = static_cast<int>(block.size());
  const int K = Kb * p.option_factor;
  const int A = Ab + p.extra_actions;
  std::vector<int> option_map(K);
  for (int o = 0; o < K; ++o) option_map[o] = o % Kb;
  std::vector<std::vector<int>> amap(S, std::vector<int>(A));
  for (int s = 0; s < S; ++s) {
    // Random surjection: a permutation of the abstract actions then random fill.
    std::vector<int> img(A);
    for (int a = 0; a < A; ++a) img[a] = a < Ab ? a : rng.uniform_int(Ab);
    for (int a = A - 1; a > 0; --a) std::swap(img[a], img[rng.uniform_int(a + 1)]);
    amap[s] = img;
  }
  FiniteHiTMDP base(S, K, A, abstract_mdp.discount);
  base.regularizer_mode = abstract_mdp.regularizer_mode;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      int sb = block[s], ab = amap[s][a];
      base.reward(s, a) = abstract_mdp.reward(sb, ab);
      for (int sb2 = 0; sb2 < Sb; ++sb2) {
        double pb = abstract_mdp.transition(sb, ab, sb2);
        const auto& m = members[sb2];
        std::vector<double> w(m.size());
        random_distribution(w.data(), static_cast<int>(m.size()), rng);
        for (std::size_t i = 0; i < m.size(); ++i) base.transition(s, a, m[i]) = pb * w[i];
      }
    }
  for (int sb = 0; sb < Sb; ++sb)
    for (int ob = 0; ob < Kb; ++ob) {
      double mass = abstract_mdp.initial(sb, ob);
      std::vector<std::pair<int, int>> cells;
      for (int s : members[sb])
        for (int o = 0; o < K; ++o)
          if (option_map[o] == ob) cells.emplace_back(s, o);
      std::vector<double> w(cells.size());
      random_distribution(w.data(), static_cast<int>(cells.size()), rng);
      for (std::size_t i = 0; i < cells.size(); ++i)
        base.initial(cells[i].first, cells[i].second) = mass * w[i];
    }
  // Rows built from products may drift from 1 by rounding; renormalize.
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double sum = 0.0;
      for (int s2 = 0; s2 < S; ++s2) sum += base.transition(s, a, s2);
      for (int s2 = 0; s2 < S; ++s2) base.transition(s, a, s2) /= sum;
    }
  FiniteHomomorphism h;
  h.base = base;
  h.abstract_mdp = abstract_mdp;
  h.state_option_map.resize(S * K);
  h.action_map.assign(S * K, std::vector<int>(A * K));
  for (int s = 0; s < S; ++s)
    for (int op = 0; op < K; ++op) {
      int e = s * K + op;
      h.state_option_map[e] = block[s] * Kb + option_map[op];
      for (int o = 0; o < K; ++o)
        for (int a = 0; a < A; ++a) h.action_map[e][o * A + a] = option_map[o] * Ab + amap[s][a];
    }
  return h;
}

FiniteHomomorphism random_homomorphism(Rng& rng, const GeneratorParams& p) {
  FiniteHiTMDP abs = random_hitmdp(p.abstract_states, p.abstract_options, p.abstract_actions,
                                   p.discount, rng);
  return lift_random(abs, rng, p);
}

nlohmann::json to_json(const FiniteHomomorphism& h) {
  nlohmann::json j;
  j["state_option_map"] = h.state_option_map;
  j["action_map"] = h.action_map;
  j["base"] = to_json(h.base);
  j["abstract"] = to_json(h.abstract_mdp);
  return j;
}

FiniteHomomorphism homomorphism_from_json(const nlohmann::json& j) {
  FiniteHomomorphism h;
  h.state_option_map = j.at("state_option_map").get<std::vector<int>>();
  h.action_map = j.at("action_map").get<std::vector<std::vector<int>>>();
  h.base = hitmdp_from_json(j.at("base"));
  h.abstract_mdp = hitmdp_from_json(j.at("abstract"));
  h.check_dimensions();
  return h;
}

nlohmann::json to_json(const ValidationReport& r) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : r.counterexamples)
    list.push_back({{"condition", c.condition}, {"tuple", c.tuple}, {"lhs", c.lhs}, {"rhs", c.rhs}});
  return list;
}

}  // namespace hitmdp
