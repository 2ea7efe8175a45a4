#pragma once

// Agent-side token selection: a per-token gate network scores candidates,
// Top-M of the gate probabilities forms an over-complete proposal that
// exactly fills the bit budget, and counterfactual reverse pruning removes
// the lowest priced-marginal-contribution token until every survivor is
// worth its bits. The gate is distilled from the pruner's hard decisions.

#include <cstdint>
#include <string>
#include <vector>

#include "semtwin/nn.hpp"
#include "semtwin/valuation.hpp"

namespace semtwin {

struct SelectorConfig {
  int token_count = 32;
  int embed_dim = 16;
  int hidden = 32;
  int bits_per_token = 8;
};

class Gate {
 public:
  Gate(SelectorConfig cfg, uint64_t seed);

  // [N, E] -> [N, 1] raw retention scores
  ad::Tensor scores(const ad::Tensor& embeddings) const;
  ad::Tensor probs(const ad::Tensor& embeddings) const;   // sigmoid(scores)
  std::vector<double> probabilities(const std::vector<SemanticToken>& tokens) const;

  const SelectorConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

 private:
  SelectorConfig cfg_;
  nn::ParamStore ps_;
  nn::Mlp net_;
};

// Top-M token indices by probability, M = floor(budget / bits_per_token);
// ties break toward the lower index.
std::vector<int> propose(const std::vector<double>& probs, int budget_bits, int bits_per_token);

// Highest-probability tokens with p > 0.5, capped at the budget. The
// deployed (gate-only) execution path.
std::vector<int> select_distilled(const std::vector<double>& probs, int budget_bits,
                                  int bits_per_token);

// Budget-filling Top-K by an arbitrary score vector.
std::vector<int> select_topk_scores(const std::vector<double>& scores, int budget_bits,
                                    int bits_per_token);

std::vector<int> select_random(int token_count, int budget_bits, int bits_per_token, Rng& rng);

struct SelectionOutcome {
  std::vector<int> proposal;
  std::vector<int> prune_order;        // removed tokens, in removal order
  std::vector<int> selected;           // final subset, ascending
  std::vector<double> final_gammas;    // priced contributions of the survivors
  std::vector<uint8_t> mask;           // size token_count
  int total_bits = 0;
  int evaluations = 0;                 // counterfactual rollout batches spent
};

enum class PruneRule {
  PricedIterative,   // the full method
  RawCivIterative,   // per-bit pricing disabled
  PricedSinglePass,  // subset-conditioned re-evaluation disabled
};

// Counterfactual selection from an over-complete proposal. Every iteration
// re-evaluates the priced contribution of each member under the current
// subset with shared paired seeds, then removes the argmin while it is
// non-positive. Terminates in at most |proposal| iterations and may empty
// the subset.
template <class Twin>
SelectionOutcome counterfactual_select(const Twin& twin, const typename Twin::Snapshot& snap,
                                       const std::vector<int>& proposal, double alpha,
                                       const CivParams& params, int bits_per_token,
                                       int token_count, PruneRule rule) {
  SEMTWIN_CHECK(alpha >= 0.0, "price must be non-negative");
  SelectionOutcome out;
  out.proposal = proposal;
  out.mask.assign(token_count, 0);
  std::vector<int> current = proposal;

  auto evaluate = [&](const std::vector<int>& subset) {
    // cache the with-subset rollouts once; difference per member under the
    // same seeds
    std::vector<double> with_vals(params.rollouts);
    for (int m = 0; m < params.rollouts; ++m)
      with_vals[m] = twin.rollout_q(snap, subset, params.horizon, mix_seed(params.seed, m));
    std::vector<double> value(subset.size(), 0.0);
    for (size_t k = 0; k < subset.size(); ++k) {
      std::vector<int> without;
      for (int idx : subset)
        if (idx != subset[k]) without.push_back(idx);
      double acc = 0.0;
      for (int m = 0; m < params.rollouts; ++m)
        acc += with_vals[m] -
               twin.rollout_q(snap, without, params.horizon, mix_seed(params.seed, m));
      const double civ = acc / params.rollouts;
      value[k] = rule == PruneRule::RawCivIterative
                     ? civ
                     : priced_contribution(civ, alpha, bits_per_token);
    }
    ++out.evaluations;
    return value;
  };

  if (rule == PruneRule::PricedSinglePass) {
    if (!current.empty()) {
      auto gammas = evaluate(current);
      std::vector<int> kept;
      std::vector<double> kept_gammas;
      for (size_t k = 0; k < current.size(); ++k)
        if (gammas[k] > 0.0) {
          kept.push_back(current[k]);
          kept_gammas.push_back(gammas[k]);
        } else {
          out.prune_order.push_back(current[k]);
        }
      current = kept;
      out.final_gammas = kept_gammas;
    }
  } else {
    while (!current.empty()) {
      auto gammas = evaluate(current);
      size_t worst = 0;
      for (size_t k = 1; k < current.size(); ++k)
        if (gammas[k] < gammas[worst]) worst = k;  // ties keep the lowest index
      if (gammas[worst] > 0.0) {
        out.final_gammas = gammas;
        break;
      }
      out.prune_order.push_back(current[worst]);
      current.erase(current.begin() + worst);
    }
  }

  out.selected = current;
  std::sort(out.selected.begin(), out.selected.end());
  for (int idx : out.selected) {
    out.mask[idx] = 1;
    out.total_bits += bits_per_token;
  }
  return out;
}

template <class Twin>
SelectionOutcome reverse_prune(const Twin& twin, const typename Twin::Snapshot& snap,
                               const std::vector<int>& proposal, double alpha,
                               const CivParams& params, int bits_per_token, int token_count) {
  return counterfactual_select(twin, snap, proposal, alpha, params, bits_per_token, token_count,
                               PruneRule::PricedIterative);
}

// Binary cross-entropy of the gate probabilities against the pruner's hard
// mask, summed over tokens. The mask is a constant.
ad::Tensor selector_loss(const ad::Tensor& probs, const std::vector<uint8_t>& mask);

enum class SelectStrategy {
  Civ,
  Random,
  MyopicVoi,
  SaliencyTopK,
  ConfidenceTopK,
  FixedTopK,
  CivNoPerBit,
  CivNoPrune,
};

SelectStrategy parse_strategy(const std::string& name);
std::string strategy_name(SelectStrategy s);

}  // namespace semtwin
