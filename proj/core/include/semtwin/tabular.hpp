#pragma once

// Small tabular POMDP with token-emission channels. The controller holds a
// belief over states, receives symbols for the scheduled token subset each
// step, updates the belief by Bayes' rule, and acts through a deterministic
// belief policy. Everything here is enumerable, which makes it the oracle
// environment for counterfactual token valuation.

#include <cstdint>
#include <functional>
#include <vector>

#include "semtwin/common.hpp"
#include "semtwin/rng.hpp"

namespace semtwin {

using Belief = std::vector<double>;

// P(symbol | state) per token; deterministic emissions use 0/1 rows.
struct TokenModel {
  int alphabet = 2;
  std::vector<double> emission;  // [state * alphabet]
  double p(int state, int symbol) const {
    return emission[static_cast<size_t>(state) * alphabet + symbol];
  }
};

struct TabularPomdp {
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  double discount = 1.0;
  std::vector<double> transition;  // [s * A * S]
  std::vector<double> reward;      // [s * A]
  std::vector<TokenModel> tokens;

  double trans(int s, int a, int s2) const {
    return transition[(static_cast<size_t>(s) * num_actions + a) * num_states + s2];
  }
  double& trans(int s, int a, int s2) {
    return transition[(static_cast<size_t>(s) * num_actions + a) * num_states + s2];
  }
  double rew(int s, int a) const { return reward[static_cast<size_t>(s) * num_actions + a]; }
  double& rew(int s, int a) { return reward[static_cast<size_t>(s) * num_actions + a]; }

  void validate() const;
};

// Deterministic mapping from (belief, step) to an action.
using TabularPolicy = std::function<int(const Belief&, int step)>;
// Token subset transmitted at each step; indices into pomdp.tokens.
using Schedule = std::vector<std::vector<int>>;

// belief'(s) proportional to belief(s) * prod_n P(symbol_n | s). A likelihood
// of zero across every state is a contract violation (impossible evidence).
Belief bayes_update(const TabularPomdp& m, const Belief& b, const std::vector<int>& subset,
                    const std::vector<int>& symbols);

// Pushes the belief through the transition kernel for one action.
Belief belief_predict(const TabularPomdp& m, const Belief& b, int action);

struct EnumLimits {
  // Guard on the number of recursion nodes visited before memoization hits.
  long max_nodes = 20'000'000;
};

// Exact expected discounted return from `step` on, by enumeration over token
// symbols and state transitions with memoization on (step, state, belief).
// `state_dist` is the true-state distribution consistent with the history
// that produced `belief` (they coincide unless a fixture decouples them).
double exact_return(const TabularPomdp& m, const TabularPolicy& policy,
                    const Schedule& schedule, const Belief& belief, const Belief& state_dist,
                    int step = 0, const EnumLimits& limits = {});

// Convenience: schedule transmits every token every step; true-state
// distribution equals the belief.
double tabular_exact_return(const TabularPomdp& m, const TabularPolicy& policy,
                            const Belief& belief);

// One sampled trajectory under hashed per-purpose streams: identical seeds
// give identical draws for the state sample, each (step, token) symbol and
// each step transition, independent of which other tokens are scheduled.
double rollout_return(const TabularPomdp& m, const TabularPolicy& policy,
                      const Schedule& schedule, const Belief& belief, const Belief& state_dist,
                      int step, int horizon_cap, uint64_t seed);

// Exact subset-conditioned counterfactual value of token n at `step`:
// the do(b=1) schedule transmits `subset`, the do(b=0) schedule transmits
// subset minus n; later steps follow `schedule` unchanged.
double exact_civ_tabular(const TabularPomdp& m, const TabularPolicy& policy,
                         const Schedule& schedule, const Belief& belief,
                         const Belief& state_dist, const std::vector<int>& subset, int n,
                         int step = 0, const EnumLimits& limits = {});

}  // namespace semtwin
