#pragma once

// Counterfactual token valuation. A twin exposes paired-seed rollouts of the
// digital-twin-predicted return after a belief update with a chosen token
// subset; the estimator differences two such evaluations under common random
// numbers to isolate one token's long-horizon contribution. The tabular twin
// wraps the enumerable fixture environment (and doubles as the exact-twin
// mode for oracle comparisons); the RSSM twin wraps the learned model.

#include <cstdint>
#include <vector>

#include "semtwin/channel.hpp"
#include "semtwin/control.hpp"
#include "semtwin/tabular.hpp"
#include "semtwin/worldmodel.hpp"

namespace semtwin {

struct CivParams {
  int rollouts = 32;   // M_r (audit mode uses 256)
  int horizon = 10;    // H
  double eps_rho = 1e-6;
  uint64_t seed = 0;
};

struct CivEstimate {
  double civ = 0.0;
  double per_bit = 0.0;   // civ / (bits + eps_rho)
  double priced = 0.0;    // civ - alpha * bits
  double std_err = 0.0;   // paired standard error over rollouts
  int rollouts = 0;
};

// Gamma = civ - alpha * bits.
double priced_contribution(double civ, double alpha, double bits);

// ---- twins --------------------------------------------------------------------

class TabularTwin {
 public:
  struct Snapshot {
    Belief belief;
    Belief state_dist;
    int step = 0;
  };

  TabularTwin(const TabularPomdp& m, TabularPolicy policy, Schedule future)
      : m_(&m), policy_(std::move(policy)), future_(std::move(future)) {}

  double rollout_q(const Snapshot& snap, const std::vector<int>& subset, int horizon,
                   uint64_t seed) const;
  const TabularPomdp& pomdp() const { return *m_; }
  const TabularPolicy& policy() const { return policy_; }
  const Schedule& future() const { return future_; }

 private:
  const TabularPomdp* m_;
  TabularPolicy policy_;
  Schedule future_;
};

class RssmTwin {
 public:
  struct Snapshot {
    BeliefSnapshot prev;                 // belief before this slot's intake
    std::vector<double> prev_action;     // normalized, length action_dim
    std::vector<SemanticToken> candidates;  // receiver-view (dequantized) embeddings
  };

  RssmTwin(const WorldModel& wm, const Actor& actor, double gamma)
      : wm_(&wm), actor_(&actor), gamma_(gamma) {}

  double rollout_q(const Snapshot& snap, const std::vector<int>& subset, int horizon,
                   uint64_t seed) const;

  // process-wide rollout counter, used to verify the distilled execution path
  // never touches the valuation machinery
  static long rollout_count();

 private:
  const WorldModel* wm_;
  const Actor* actor_;
  double gamma_;
};

// ---- estimator ------------------------------------------------------------------

// Monte-Carlo average of the twin-predicted return after updating the belief
// with `subset`. Optionally reports the standard error.
template <class Twin>
double q_hat(const Twin& twin, const typename Twin::Snapshot& snap,
             const std::vector<int>& subset, const CivParams& p, double* se = nullptr) {
  SEMTWIN_CHECK(p.rollouts >= 1 && p.horizon >= 1, "rollouts and horizon must be >= 1");
  double sum = 0.0, sum2 = 0.0;
  for (int m = 0; m < p.rollouts; ++m) {
    const double v = twin.rollout_q(snap, subset, p.horizon, mix_seed(p.seed, m));
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / p.rollouts;
  if (se) {
    *se = p.rollouts > 1
              ? std::sqrt(std::max(0.0, (sum2 - sum * sum / p.rollouts) / (p.rollouts - 1) /
                                            p.rollouts))
              : 0.0;
  }
  return mean;
}

// Paired-seed subset-conditioned estimate for token n within `subset`.
template <class Twin>
CivEstimate civ_estimate(const Twin& twin, const typename Twin::Snapshot& snap,
                         const std::vector<int>& subset, int n, const CivParams& p,
                         double alpha, double bits) {
  SEMTWIN_CHECK(std::find(subset.begin(), subset.end(), n) != subset.end(),
                "token of interest must be in the subset");
  std::vector<int> without;
  for (int idx : subset)
    if (idx != n) without.push_back(idx);

  double sum = 0.0, sum2 = 0.0;
  for (int m = 0; m < p.rollouts; ++m) {
    const uint64_t seed = mix_seed(p.seed, m);
    const double d =
        twin.rollout_q(snap, subset, p.horizon, seed) - twin.rollout_q(snap, without, p.horizon, seed);
    sum += d;
    sum2 += d * d;
  }
  CivEstimate est;
  est.rollouts = p.rollouts;
  est.civ = sum / p.rollouts;
  est.std_err = p.rollouts > 1
                    ? std::sqrt(std::max(0.0, (sum2 - sum * sum / p.rollouts) /
                                                  (p.rollouts - 1) / p.rollouts))
                    : 0.0;
  est.per_bit = est.civ / (bits + p.eps_rho);
  est.priced = priced_contribution(est.civ, alpha, bits);
  return est;
}

// ---- independent exact route -----------------------------------------------------
// Plain depth-first trajectory-tree enumeration (no memoization): sums
// probability-weighted discounted returns over every (symbol, transition)
// path. Second route for verifying the memoized belief recursion.
double tree_return(const TabularPomdp& m, const TabularPolicy& policy, const Schedule& schedule,
                   const Belief& belief, const Belief& state_dist, int step,
                   long max_leaves = 50'000'000);

double tree_civ(const TabularPomdp& m, const TabularPolicy& policy, const Schedule& schedule,
                const Belief& belief, const Belief& state_dist, const std::vector<int>& subset,
                int n, int step = 0);

// ---- comparator proxies (tabular audit forms) -------------------------------------
// One-step lookahead value difference; belief-shift magnitude; belief-entropy
// reduction. All are exact expectations over the emitted symbols.
double tabular_myopic_voi(const TabularPomdp& m, const TabularTwin::Snapshot& snap,
                          const std::vector<int>& subset, int n);
double tabular_saliency(const TabularPomdp& m, const TabularTwin::Snapshot& snap,
                        const std::vector<int>& subset, int n);
double tabular_confidence(const TabularPomdp& m, const TabularTwin::Snapshot& snap,
                          const std::vector<int>& subset, int n);

// ---- comparator proxies (learned-system forms) ------------------------------------

struct NeuralTokenScorer {
  const WorldModel* wm = nullptr;
  const Critic* critic = nullptr;
  BeliefSnapshot prev;
  std::vector<double> prev_action;
  const std::vector<SemanticToken>* candidates = nullptr;

  // critic value after a posterior update conditioned on `subset`
  double value_with(const std::vector<int>& subset) const;
  double myopic_voi(const std::vector<int>& context, int n) const;
  // gradient norm of the critic w.r.t. each candidate's embedding
  std::vector<double> saliency_all(const std::vector<int>& context) const;
  // total posterior std reduction attributable to token n
  double confidence(const std::vector<int>& context, int n) const;
};

// Spearman rank correlation with tie-averaged ranks.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace semtwin
