#include "semtwin/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

namespace semtwin {

void TabularPomdp::validate() const {
  SEMTWIN_CHECK(num_states >= 1 && num_states <= 12, "state count must be in [1,12]");
  SEMTWIN_CHECK(num_actions >= 1 && num_actions <= 4, "action count must be in [1,4]");
  SEMTWIN_CHECK(horizon >= 1 && horizon <= 6, "horizon must be in [1,6]");
  SEMTWIN_CHECK(discount > 0.0 && discount <= 1.0, "discount must be in (0,1]");
  SEMTWIN_CHECK(static_cast<int>(transition.size()) == num_states * num_actions * num_states,
                "transition table size mismatch");
  SEMTWIN_CHECK(static_cast<int>(reward.size()) == num_states * num_actions,
                "reward table size mismatch");
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a) {
      double row = 0.0;
      for (int s2 = 0; s2 < num_states; ++s2) {
        const double p = trans(s, a, s2);
        SEMTWIN_CHECK(p >= 0.0 && p <= 1.0, "transition probability out of [0,1]");
        row += p;
      }
      SEMTWIN_CHECK(std::abs(row - 1.0) <= 1e-12, "transition row does not sum to 1");
    }
  for (const auto& tok : tokens) {
    SEMTWIN_CHECK(tok.alphabet >= 1, "token alphabet must be positive");
    SEMTWIN_CHECK(static_cast<int>(tok.emission.size()) == num_states * tok.alphabet,
                  "emission table size mismatch");
    for (int s = 0; s < num_states; ++s) {
      double row = 0.0;
      for (int y = 0; y < tok.alphabet; ++y) {
        const double p = tok.p(s, y);
        SEMTWIN_CHECK(p >= 0.0 && p <= 1.0, "emission probability out of [0,1]");
        row += p;
      }
      SEMTWIN_CHECK(std::abs(row - 1.0) <= 1e-12, "emission row does not sum to 1");
    }
  }
}

Belief bayes_update(const TabularPomdp& m, const Belief& b, const std::vector<int>& subset,
                    const std::vector<int>& symbols) {
  SEMTWIN_CHECK(subset.size() == symbols.size(), "subset/symbol count mismatch");
  Belief out(b);
  for (size_t k = 0; k < subset.size(); ++k) {
    const auto& tok = m.tokens[subset[k]];
    for (int s = 0; s < m.num_states; ++s) out[s] *= tok.p(s, symbols[k]);
  }
  double z = 0.0;
  for (double p : out) z += p;
  SEMTWIN_CHECK(z > 0.0, "bayes_update: impossible evidence");
  for (double& p : out) p /= z;
  return out;
}

Belief belief_predict(const TabularPomdp& m, const Belief& b, int action) {
  Belief out(m.num_states, 0.0);
  for (int s = 0; s < m.num_states; ++s) {
    if (b[s] == 0.0) continue;
    for (int s2 = 0; s2 < m.num_states; ++s2) out[s2] += b[s] * m.trans(s, action, s2);
  }
  return out;
}

namespace {

struct EnumCtx {
  const TabularPomdp& m;
  const TabularPolicy& policy;
  const Schedule& schedule;
  const EnumLimits& limits;
  long nodes = 0;
  std::map<std::tuple<int, int, Belief>, double> memo;

  const std::vector<int>& subset_at(int step) const {
    static const std::vector<int> kEmpty;
    if (step < static_cast<int>(schedule.size())) return schedule[step];
    return kEmpty;
  }

  // Expected discounted return from `step` given the controller belief and
  // the true state, before token intake at this step.
  double value(int step, const Belief& belief, int s_true) {
    if (step >= m.horizon) return 0.0;
    auto key = std::make_tuple(step, s_true, belief);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    SEMTWIN_CHECK(++nodes <= limits.max_nodes, "tabular enumeration exceeds node limit");

    const auto& subset = subset_at(step);
    double total = 0.0;
    std::vector<int> symbols(subset.size(), 0);
    // iterate the product alphabet of the scheduled tokens
    while (true) {
      double py = 1.0;
      for (size_t k = 0; k < subset.size(); ++k) py *= m.tokens[subset[k]].p(s_true, symbols[k]);
      if (py > 0.0) {
        Belief post = bayes_update(m, belief, subset, symbols);
        const int a = policy(post, step);
        SEMTWIN_CHECK(a >= 0 && a < m.num_actions, "policy returned invalid action");
        double v = m.rew(s_true, a);
        Belief next_belief = belief_predict(m, post, a);
        for (int s2 = 0; s2 < m.num_states; ++s2) {
          const double pt = m.trans(s_true, a, s2);
          if (pt > 0.0) v += m.discount * pt * value(step + 1, next_belief, s2);
        }
        total += py * v;
      }
      // next symbol combination
      size_t k = 0;
      for (; k < subset.size(); ++k) {
        if (++symbols[k] < m.tokens[subset[k]].alphabet) break;
        symbols[k] = 0;
      }
      if (k == subset.size()) break;
    }
    memo.emplace(std::move(key), total);
    return total;
  }
};

int sample_categorical(const double* probs, int n, double u) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return n - 1;
}

}  // namespace

double exact_return(const TabularPomdp& m, const TabularPolicy& policy,
                    const Schedule& schedule, const Belief& belief, const Belief& state_dist,
                    int step, const EnumLimits& limits) {
  m.validate();
  SEMTWIN_CHECK(static_cast<int>(belief.size()) == m.num_states, "belief size mismatch");
  SEMTWIN_CHECK(static_cast<int>(state_dist.size()) == m.num_states, "state_dist size mismatch");
  EnumCtx ctx{m, policy, schedule, limits};
  double total = 0.0;
  for (int s = 0; s < m.num_states; ++s)
    if (state_dist[s] > 0.0) total += state_dist[s] * ctx.value(step, belief, s);
  return total;
}

double tabular_exact_return(const TabularPomdp& m, const TabularPolicy& policy,
                            const Belief& belief) {
  std::vector<int> all(m.tokens.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  Schedule schedule(m.horizon, all);
  return exact_return(m, policy, schedule, belief, belief);
}

double rollout_return(const TabularPomdp& m, const TabularPolicy& policy,
                      const Schedule& schedule, const Belief& belief, const Belief& state_dist,
                      int step, int horizon_cap, uint64_t seed) {
  // hashed streams: one draw per purpose, keyed so that schedule changes do
  // not shift unrelated draws
  auto u01 = [&](uint64_t tag, uint64_t i, uint64_t j) {
    return (static_cast<double>(mix_seed(seed, tag, i, j) >> 11)) * 0x1.0p-53;
  };
  int s = sample_categorical(state_dist.data(), m.num_states, u01(1, 0, 0));
  Belief b = belief;
  double ret = 0.0;
  double gamma_pow = 1.0;
  const int last = std::min(m.horizon, step + horizon_cap);
  static const std::vector<int> kEmpty;
  for (int t = step; t < last; ++t) {
    const auto& subset =
        t < static_cast<int>(schedule.size()) ? schedule[t] : kEmpty;
    std::vector<int> symbols(subset.size());
    for (size_t k = 0; k < subset.size(); ++k) {
      const auto& tok = m.tokens[subset[k]];
      symbols[k] = sample_categorical(&tok.emission[static_cast<size_t>(s) * tok.alphabet],
                                      tok.alphabet, u01(2, t, subset[k]));
    }
    b = bayes_update(m, b, subset, symbols);
    const int a = policy(b, t);
    ret += gamma_pow * m.rew(s, a);
    gamma_pow *= m.discount;
    b = belief_predict(m, b, a);
    s = sample_categorical(&m.transition[(static_cast<size_t>(s) * m.num_actions + a) *
                                         m.num_states],
                           m.num_states, u01(3, t, 0));
  }
  return ret;
}

double exact_civ_tabular(const TabularPomdp& m, const TabularPolicy& policy,
                         const Schedule& schedule, const Belief& belief,
                         const Belief& state_dist, const std::vector<int>& subset, int n,
                         int step, const EnumLimits& limits) {
  SEMTWIN_CHECK(std::find(subset.begin(), subset.end(), n) != subset.end(),
                "token of interest must be in the subset");
  Schedule with = schedule;
  if (static_cast<int>(with.size()) <= step) with.resize(step + 1);
  with[step] = subset;
  Schedule without = with;
  auto& w = without[step];
  w.erase(std::remove(w.begin(), w.end(), n), w.end());
  return exact_return(m, policy, with, belief, state_dist, step, limits) -
         exact_return(m, policy, without, belief, state_dist, step, limits);
}

}  // namespace semtwin
