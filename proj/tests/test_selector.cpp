#include <doctest.h>

#include <cmath>
#include <map>

#include "semtwin/fixtures.hpp"
#include "semtwin/selector.hpp"

using namespace semtwin;
using ad::Tensor;

namespace {

// Twin with a scripted value per subset; deterministic across seeds.
struct ScriptedTwin {
  struct Snapshot {};
  std::map<std::vector<int>, double> values;
  double rollout_q(const Snapshot&, const std::vector<int>& subset, int, uint64_t) const {
    std::vector<int> key = subset;
    std::sort(key.begin(), key.end());
    auto it = values.find(key);
    SEMTWIN_CHECK(it != values.end(), "scripted twin missing subset");
    return it->second;
  }
};

// Additive per-token contributions: CIV of a token is its own weight,
// independent of context.
struct AdditiveTwin {
  struct Snapshot {
    std::vector<double> token_values;
  };
  double rollout_q(const Snapshot& s, const std::vector<int>& subset, int, uint64_t) const {
    double acc = 0.0;
    for (int idx : subset) acc += s.token_values[idx];
    return acc;
  }
};

}  // namespace

TEST_CASE("propose: budget fill, tie rule, empty budget") {
  std::vector<double> probs(32, 0.5);
  auto all_equal = propose(probs, 96, 8);
  REQUIRE(all_equal.size() == 12);
  for (int i = 0; i < 12; ++i) CHECK(all_equal[i] == i);  // ties break low

  probs[20] = 0.9;
  probs[7] = 0.8;
  auto ranked = propose(probs, 16, 8);
  REQUIRE(ranked.size() == 2);
  CHECK(ranked[0] == 7);
  CHECK(ranked[1] == 20);

  CHECK(propose(probs, 0, 8).empty());
  CHECK(propose(probs, 7, 8).empty());  // budget below one token
}

TEST_CASE("counterfactual pruning: argmin removal order and stop rule") {
  // three tokens with priced contributions {0.5, -0.1, 0.2} at alpha=0
  AdditiveTwin twin;
  AdditiveTwin::Snapshot snap{{0.5, -0.1, 0.2}};
  CivParams p;
  p.rollouts = 4;
  p.horizon = 1;
  auto out = reverse_prune(twin, snap, {0, 1, 2}, 0.0, p, 8, 3);
  REQUIRE(out.prune_order.size() == 1);
  CHECK(out.prune_order[0] == 1);  // the -0.1 token goes first
  CHECK(out.selected == std::vector<int>{0, 2});
  CHECK(out.total_bits == 16);
  for (double g : out.final_gammas) CHECK(g > 0.0);
  CHECK(out.mask[0] == 1);
  CHECK(out.mask[1] == 0);
}

TEST_CASE("all contributions positive: proposal kept, empty prune trace") {
  AdditiveTwin twin;
  AdditiveTwin::Snapshot snap{{0.5, 0.4, 0.2}};
  CivParams p;
  p.rollouts = 2;
  p.horizon = 1;
  auto out = reverse_prune(twin, snap, {0, 1, 2}, 0.0, p, 8, 3);
  CHECK(out.prune_order.empty());
  CHECK(out.selected == std::vector<int>{0, 1, 2});
}

TEST_CASE("pruning can empty the subset and always terminates") {
  AdditiveTwin twin;
  AdditiveTwin::Snapshot snap{{-0.5, -0.4, -0.2}};
  CivParams p;
  p.rollouts = 2;
  p.horizon = 1;
  auto out = reverse_prune(twin, snap, {0, 1, 2}, 0.0, p, 8, 3);
  CHECK(out.selected.empty());
  CHECK(out.prune_order.size() == 3);
  CHECK(out.total_bits == 0);
  // strictly decreasing subset size: one evaluation per removal
  CHECK(out.evaluations == 3);
}

TEST_CASE("alpha prices marginal tokens out") {
  AdditiveTwin twin;
  AdditiveTwin::Snapshot snap{{0.5, 0.05, 0.3}};
  CivParams p;
  p.rollouts = 2;
  p.horizon = 1;
  // alpha*8 = 0.08 > 0.05: token 1 is not worth its bits
  auto out = reverse_prune(twin, snap, {0, 1, 2}, 0.01, p, 8, 3);
  CHECK(out.selected == std::vector<int>{0, 2});
}

TEST_CASE("redundancy fixture: one duplicate survives, noise is pruned") {
  auto f = fixtures::redundancy_fixture(3);
  TabularTwin twin(f.pomdp, f.policy, f.schedule);
  TabularTwin::Snapshot snap{f.belief, f.state_dist, 0};
  CivParams p;
  p.rollouts = 128;
  p.horizon = f.pomdp.horizon;
  p.seed = 5;
  // tokens 0,1 duplicates of the corridor bit; 2 noise
  auto out = reverse_prune(twin, snap, {0, 1, 2}, 0.001, p, 8, 3);
  REQUIRE(out.selected.size() == 1);
  CHECK((out.selected[0] == 0 || out.selected[0] == 1));
  // noise was removed somewhere in the pruning trace
  bool noise_pruned = false;
  for (int idx : out.prune_order) noise_pruned = noise_pruned || idx == 2;
  CHECK(noise_pruned);
  for (double g : out.final_gammas) CHECK(g > 0.0);
}

TEST_CASE("prune-rule ablations") {
  AdditiveTwin twin;
  AdditiveTwin::Snapshot snap{{0.5, 0.05, -0.2}};
  CivParams p;
  p.rollouts = 2;
  p.horizon = 1;
  SUBCASE("raw-civ iterative ignores the price") {
    auto out = counterfactual_select(twin, snap, {0, 1, 2}, 0.01, p, 8, 3,
                                     PruneRule::RawCivIterative);
    CHECK(out.selected == std::vector<int>{0, 1});  // 0.05 kept: no alpha*8 test
  }
  SUBCASE("single pass drops every non-positive token at once") {
    auto out = counterfactual_select(twin, snap, {0, 1, 2}, 0.01, p, 8, 3,
                                     PruneRule::PricedSinglePass);
    CHECK(out.selected == std::vector<int>{0});  // 0.05 - 0.08 <= 0 and -0.2 both dropped
    CHECK(out.evaluations == 1);
  }
}

TEST_CASE("selector loss: target fit, closed form at p=0.5, gradient sign") {
  const int N = 8;
  std::vector<uint8_t> mask(N, 0);
  mask[2] = mask[5] = 1;

  std::vector<double> close(N, 1e-9);
  close[2] = close[5] = 1.0 - 1e-9;
  CHECK(selector_loss(Tensor::from({N}, close), mask).item() == doctest::Approx(0.0).epsilon(1e-6));

  std::vector<double> half(N, 0.5);
  CHECK(selector_loss(Tensor::from({N}, half), mask).item() ==
        doctest::Approx(N * std::log(2.0)).epsilon(1e-12));

  // d(loss)/d(score) = p - b: negative when b=1, p<1
  Tensor scores = Tensor::from({N}, std::vector<double>(N, 0.3), true);
  {
    ad::Tape tape;
    Tensor p = ad::sigmoid(scores);
    Tensor loss = selector_loss(p, mask);
    tape.backward(loss);
  }
  CHECK(scores.grad()[2] < 0.0);
  CHECK(scores.grad()[5] < 0.0);
  CHECK(scores.grad()[0] > 0.0);
}

TEST_CASE("budget safety across every selection helper") {
  Rng rng(17);
  for (int budget : {0, 8, 64, 96, 128, 160, 192, 256}) {
    std::vector<double> probs(32), scores(32);
    for (auto& p : probs) p = rng.uniform();
    for (auto& s : scores) s = rng.uniform(-2.0, 2.0);
    const int cap = budget / 8;
    CHECK(static_cast<int>(propose(probs, budget, 8).size()) <= cap);
    CHECK(static_cast<int>(select_distilled(probs, budget, 8).size()) <= cap);
    CHECK(static_cast<int>(select_topk_scores(scores, budget, 8).size()) <= cap);
    CHECK(static_cast<int>(select_random(32, budget, 8, rng).size()) <= cap);
  }
}

TEST_CASE("random selection is reproducible under a fixed seed") {
  Rng a(5), b(5);
  CHECK(select_random(32, 96, 8, a) == select_random(32, 96, 8, b));
  Rng c(5);
  CHECK(static_cast<int>(select_random(32, 96, 8, c).size()) == 12);
}

TEST_CASE("distilled path keeps only confident tokens") {
  std::vector<double> probs(8, 0.2);
  probs[1] = 0.9;
  probs[4] = 0.7;
  auto sel = select_distilled(probs, 32, 8);  // cap 4
  CHECK(sel == std::vector<int>{1, 4});
  CHECK(select_distilled(std::vector<double>(8, 0.2), 32, 8).empty());
}

TEST_CASE("strategy parsing covers the ablation set and rejects unknowns") {
  CHECK(parse_strategy("civ") == SelectStrategy::Civ);
  CHECK(parse_strategy("random") == SelectStrategy::Random);
  CHECK(parse_strategy("myopic-voi") == SelectStrategy::MyopicVoi);
  CHECK(parse_strategy("saliency-topk") == SelectStrategy::SaliencyTopK);
  CHECK(parse_strategy("confidence-topk") == SelectStrategy::ConfidenceTopK);
  CHECK(parse_strategy("fixed-topk") == SelectStrategy::FixedTopK);
  CHECK(parse_strategy("civ-no-perbit") == SelectStrategy::CivNoPerBit);
  CHECK(parse_strategy("civ-no-prune") == SelectStrategy::CivNoPrune);
  CHECK_THROWS_AS(parse_strategy("sorted-by-vibes"), ContractViolation);
  CHECK(strategy_name(parse_strategy("civ-no-prune")) == "civ-no-prune");
}

TEST_CASE("gate distillation recovers the pruner's selections on held-out slots") {
  SelectorConfig cfg;
  cfg.token_count = 16;
  cfg.embed_dim = 6;
  cfg.hidden = 16;
  Gate gate(cfg, 23);

  // planted rule: token value = w . e; pruner keeps tokens worth their bits
  Rng rng(29);
  std::vector<double> w(cfg.embed_dim);
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  const double alpha = 0.004;  // alpha*8 = 0.032 threshold

  auto make_slot = [&](uint64_t seed) {
    Rng r(seed);
    std::vector<std::vector<double>> embeddings(cfg.token_count,
                                                std::vector<double>(cfg.embed_dim));
    AdditiveTwin::Snapshot snap;
    for (int n = 0; n < cfg.token_count; ++n) {
      double v = 0.0;
      for (int e = 0; e < cfg.embed_dim; ++e) {
        embeddings[n][e] = r.uniform(-1.0, 1.0);
        v += w[e] * embeddings[n][e];
      }
      snap.token_values.push_back(v);
    }
    return std::make_pair(embeddings, snap);
  };

  AdditiveTwin twin;
  CivParams p;
  p.rollouts = 2;
  p.horizon = 1;
  std::vector<int> all(cfg.token_count);
  std::iota(all.begin(), all.end(), 0);

  nn::AdamConfig ac;
  ac.lr = 0.01;
  nn::Adam opt(gate.params().params(), ac);
  for (int step = 0; step < 600; ++step) {
    auto [embeddings, snap] = make_slot(1000 + step % 200);  // 200 training slots
    auto out = counterfactual_select(twin, snap, all, alpha, p, 8, cfg.token_count,
                                     PruneRule::PricedIterative);
    std::vector<double> flat;
    for (auto& e : embeddings) flat.insert(flat.end(), e.begin(), e.end());
    gate.params().zero_grad();
    ad::Tape tape;
    Tensor probs = gate.probs(Tensor::from({cfg.token_count, cfg.embed_dim}, flat));
    Tensor loss = selector_loss(ad::flatten(probs), out.mask);
    tape.backward(loss);
    opt.step();
  }

  // held-out recovery: gate Top-M proposal must contain >= 90% of B*
  int covered = 0, total = 0;
  for (int s = 0; s < 50; ++s) {
    auto [embeddings, snap] = make_slot(900000 + s);
    auto out = counterfactual_select(twin, snap, all, alpha, p, 8, cfg.token_count,
                                     PruneRule::PricedIterative);
    std::vector<SemanticToken> toks(cfg.token_count);
    for (int n = 0; n < cfg.token_count; ++n) {
      toks[n].index = n;
      toks[n].embedding = embeddings[n];
    }
    auto probs = gate.probabilities(toks);
    auto top = propose(probs, 8 * static_cast<int>(out.selected.size()), 8);
    for (int idx : out.selected) {
      ++total;
      if (std::find(top.begin(), top.end(), idx) != top.end()) ++covered;
    }
  }
  REQUIRE(total > 0);
  const double recovery = static_cast<double>(covered) / total;
  INFO("recovery ", recovery, " over ", total, " selections");
  CHECK(recovery >= 0.9);
}
