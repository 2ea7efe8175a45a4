#include "semtwin/valuation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

namespace semtwin {

using ad::Tensor;

double priced_contribution(double civ, double alpha, double bits) {
  SEMTWIN_CHECK(alpha >= 0.0, "price must be non-negative");
  SEMTWIN_CHECK(bits >= 0.0, "bit length must be non-negative");
  return civ - alpha * bits;
}

// ---- TabularTwin ---------------------------------------------------------------

double TabularTwin::rollout_q(const Snapshot& snap, const std::vector<int>& subset, int horizon,
                              uint64_t seed) const {
  Schedule schedule = future_;
  if (static_cast<int>(schedule.size()) <= snap.step) schedule.resize(snap.step + 1);
  schedule[snap.step] = subset;
  return rollout_return(*m_, policy_, schedule, snap.belief, snap.state_dist, snap.step,
                        horizon, seed);
}

// ---- RssmTwin ------------------------------------------------------------------

namespace {
std::atomic<long> g_rssm_rollouts{0};

std::vector<double> subset_token_row(const std::vector<SemanticToken>& candidates,
                                     const std::vector<int>& subset, int token_count,
                                     int embed_dim) {
  ReceivedTokens rx;
  for (int n : subset) {
    SEMTWIN_CHECK(n >= 0 && n < token_count, "token index out of range");
    rx.indices.push_back(n);
    rx.erased.push_back(0);
    rx.embeddings.push_back(candidates[n].embedding);
    ++rx.delivered;
  }
  return token_input_row(rx, token_count, embed_dim);
}
}  // namespace

long RssmTwin::rollout_count() { return g_rssm_rollouts.load(); }

double RssmTwin::rollout_q(const Snapshot& snap, const std::vector<int>& subset, int horizon,
                           uint64_t seed) const {
  ++g_rssm_rollouts;
  const auto& cfg = wm_->config();
  Rng rng(seed);
  BeliefState prev = wm_->restore(snap.prev);
  Tensor action = Tensor::from({1, cfg.action_dim}, snap.prev_action);
  Tensor h = wm_->advance_h(prev, action);
  auto row = subset_token_row(snap.candidates, subset, cfg.token_count, cfg.embed_dim);
  BeliefState state =
      wm_->posterior_from(h, Tensor::from({1, cfg.token_input_dim()}, row), rng, false);

  auto traj = wm_->imagine(state, actor_->as_policy(), horizon, 0.0, rng, false);
  double acc = 0.0, g = 1.0;
  for (int tau = 0; tau < traj.horizon(); ++tau) {
    acc += g * traj.steps[tau].reward_mean.values()[0];
    g *= gamma_;
  }
  return acc;
}

// ---- independent tree enumeration ------------------------------------------------

namespace {

struct TreeCtx {
  const TabularPomdp& m;
  const TabularPolicy& policy;
  const Schedule& schedule;
  long leaves = 0;
  long max_leaves;
  double total = 0.0;

  const std::vector<int>& subset_at(int step) const {
    static const std::vector<int> kEmpty;
    if (step < static_cast<int>(schedule.size())) return schedule[step];
    return kEmpty;
  }

  // walks every (symbol-assignment, transition) branch, accumulating the
  // path probability and discounted reward sum
  void walk(int step, const Belief& belief, int s, double path_prob, double reward_acc,
            double gamma_pow) {
    if (path_prob == 0.0) return;
    if (step >= m.horizon) {
      SEMTWIN_CHECK(++leaves <= max_leaves, "trajectory tree exceeds leaf limit");
      total += path_prob * reward_acc;
      return;
    }
    const auto& subset = subset_at(step);
    std::vector<int> symbols(subset.size(), 0);
    while (true) {
      double py = 1.0;
      for (size_t k = 0; k < subset.size(); ++k) py *= m.tokens[subset[k]].p(s, symbols[k]);
      if (py > 0.0) {
        Belief post = bayes_update(m, belief, subset, symbols);
        const int a = policy(post, step);
        const double r = m.rew(s, a);
        Belief next_b = belief_predict(m, post, a);
        for (int s2 = 0; s2 < m.num_states; ++s2) {
          const double pt = m.trans(s, a, s2);
          if (pt > 0.0)
            walk(step + 1, next_b, s2, path_prob * py * pt, reward_acc + gamma_pow * r,
                 gamma_pow * m.discount);
        }
      }
      size_t k = 0;
      for (; k < subset.size(); ++k) {
        if (++symbols[k] < m.tokens[subset[k]].alphabet) break;
        symbols[k] = 0;
      }
      if (k == subset.size()) break;
    }
  }
};

}  // namespace

double tree_return(const TabularPomdp& m, const TabularPolicy& policy, const Schedule& schedule,
                   const Belief& belief, const Belief& state_dist, int step, long max_leaves) {
  TreeCtx ctx{m, policy, schedule, 0, max_leaves};
  for (int s = 0; s < m.num_states; ++s)
    if (state_dist[s] > 0.0) ctx.walk(step, belief, s, state_dist[s], 0.0, 1.0);
  return ctx.total;
}

double tree_civ(const TabularPomdp& m, const TabularPolicy& policy, const Schedule& schedule,
                const Belief& belief, const Belief& state_dist, const std::vector<int>& subset,
                int n, int step) {
  SEMTWIN_CHECK(std::find(subset.begin(), subset.end(), n) != subset.end(),
                "token of interest must be in the subset");
  Schedule with = schedule;
  if (static_cast<int>(with.size()) <= step) with.resize(step + 1);
  with[step] = subset;
  Schedule without = with;
  auto& w = without[step];
  w.erase(std::remove(w.begin(), w.end(), n), w.end());
  return tree_return(m, policy, with, belief, state_dist, step) -
         tree_return(m, policy, without, belief, state_dist, step);
}

// ---- tabular comparator proxies ----------------------------------------------------

namespace {

// Enumerates joint symbol assignments for `subset` at the snapshot and calls
// fn(prob, posterior_with, posterior_without_token_n).
template <typename F>
void for_each_symbol_outcome(const TabularPomdp& m, const TabularTwin::Snapshot& snap,
                             const std::vector<int>& subset, int n, F fn) {
  std::vector<int> without;
  std::vector<int> sym_without_idx;  // positions of `without` tokens in `subset`
  for (size_t k = 0; k < subset.size(); ++k)
    if (subset[k] != n) {
      without.push_back(subset[k]);
      sym_without_idx.push_back(static_cast<int>(k));
    }

  std::vector<int> symbols(subset.size(), 0);
  while (true) {
    // joint probability under the true-state distribution
    double py = 0.0;
    for (int s = 0; s < m.num_states; ++s) {
      if (snap.state_dist[s] == 0.0) continue;
      double p = snap.state_dist[s];
      for (size_t k = 0; k < subset.size(); ++k) p *= m.tokens[subset[k]].p(s, symbols[k]);
      py += p;
    }
    if (py > 0.0) {
      Belief post_with = bayes_update(m, snap.belief, subset, symbols);
      std::vector<int> sym_without(without.size());
      for (size_t k = 0; k < without.size(); ++k) sym_without[k] = symbols[sym_without_idx[k]];
      Belief post_without = bayes_update(m, snap.belief, without, sym_without);
      fn(py, post_with, post_without);
    }
    size_t k = 0;
    for (; k < subset.size(); ++k) {
      if (++symbols[k] < m.tokens[subset[k]].alphabet) break;
      symbols[k] = 0;
    }
    if (k == subset.size()) break;
  }
}

double one_step_value(const TabularPomdp& m, const Belief& b) {
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < m.num_actions; ++a) {
    double v = 0.0;
    for (int s = 0; s < m.num_states; ++s) v += b[s] * m.rew(s, a);
    best = std::max(best, v);
  }
  return best;
}

double belief_entropy(const Belief& b) {
  double h = 0.0;
  for (double p : b)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

}  // namespace

double tabular_myopic_voi(const TabularPomdp& m, const TabularTwin::Snapshot& snap,
                          const std::vector<int>& subset, int n) {
  double acc = 0.0;
  for_each_symbol_outcome(m, snap, subset, n,
                          [&](double p, const Belief& with, const Belief& without) {
                            acc += p * (one_step_value(m, with) - one_step_value(m, without));
                          });
  return acc;
}

double tabular_saliency(const TabularPomdp& m, const TabularTwin::Snapshot& snap,
                        const std::vector<int>& subset, int n) {
  double acc = 0.0;
  for_each_symbol_outcome(m, snap, subset, n,
                          [&](double p, const Belief& with, const Belief& without) {
                            double l1 = 0.0;
                            for (size_t s = 0; s < with.size(); ++s)
                              l1 += std::abs(with[s] - without[s]);
                            acc += p * l1;
                          });
  return acc;
}

double tabular_confidence(const TabularPomdp& m, const TabularTwin::Snapshot& snap,
                          const std::vector<int>& subset, int n) {
  double acc = 0.0;
  for_each_symbol_outcome(m, snap, subset, n,
                          [&](double p, const Belief& with, const Belief& without) {
                            acc += p * (belief_entropy(without) - belief_entropy(with));
                          });
  return acc;
}

// ---- learned-system comparator proxies ----------------------------------------------

double NeuralTokenScorer::value_with(const std::vector<int>& subset) const {
  const auto& cfg = wm->config();
  Rng rng(0);
  BeliefState prev_state = wm->restore(prev);
  Tensor action = Tensor::from({1, cfg.action_dim}, prev_action);
  Tensor h = wm->advance_h(prev_state, action);
  auto row = subset_token_row(*candidates, subset, cfg.token_count, cfg.embed_dim);
  BeliefState state =
      wm->posterior_from(h, Tensor::from({1, cfg.token_input_dim()}, row), rng, true);
  return critic->value(state.h, state.u).item();
}

double NeuralTokenScorer::myopic_voi(const std::vector<int>& context, int n) const {
  std::vector<int> without;
  for (int idx : context)
    if (idx != n) without.push_back(idx);
  return value_with(context) - value_with(without);
}

std::vector<double> NeuralTokenScorer::saliency_all(const std::vector<int>& context) const {
  const auto& cfg = wm->config();
  Rng rng(0);
  BeliefState prev_state = wm->restore(prev);
  Tensor action = Tensor::from({1, cfg.action_dim}, prev_action);
  auto row = subset_token_row(*candidates, context, cfg.token_count, cfg.embed_dim);

  Tensor input = Tensor::from({1, cfg.token_input_dim()}, row, true);
  std::vector<double> norms(cfg.token_count, 0.0);
  {
    ad::Tape tape;
    Tensor h = wm->advance_h(prev_state, action);
    BeliefState state = wm->posterior_from(h, input, rng, true);
    Tensor v = critic->value(state.h, state.u);
    tape.backward(v);
  }
  const auto& g = input.grad();
  for (int t = 0; t < cfg.token_count; ++t) {
    double sq = 0.0;
    for (int e = 0; e < cfg.embed_dim; ++e) {
      const double gi = g[static_cast<size_t>(t) * (cfg.embed_dim + 1) + e];
      sq += gi * gi;
    }
    norms[t] = std::sqrt(sq);
  }
  return norms;
}

double NeuralTokenScorer::confidence(const std::vector<int>& context, int n) const {
  const auto& cfg = wm->config();
  Rng rng(0);
  BeliefState prev_state = wm->restore(prev);
  Tensor action = Tensor::from({1, cfg.action_dim}, prev_action);
  Tensor h = wm->advance_h(prev_state, action);

  auto std_sum = [&](const std::vector<int>& subset) {
    auto row = subset_token_row(*candidates, subset, cfg.token_count, cfg.embed_dim);
    BeliefState state =
        wm->posterior_from(h, Tensor::from({1, cfg.token_input_dim()}, row), rng, true);
    double sum = 0.0;
    for (double s : state.post_std.values()) sum += s;
    return sum;
  };
  std::vector<int> without;
  for (int idx : context)
    if (idx != n) without.push_back(idx);
  return std_sum(without) - std_sum(context);
}

// ---- Spearman ------------------------------------------------------------------------

namespace {
std::vector<double> tie_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * (i + j) + 1.0;  // average rank, 1-based
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}
}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  SEMTWIN_CHECK(a.size() == b.size() && a.size() >= 2, "spearman needs matched vectors");
  auto ra = tie_ranks(a);
  auto rb = tie_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace semtwin
