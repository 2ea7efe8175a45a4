#include "semtwin/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace semtwin {

using ad::Tensor;

Gate::Gate(SelectorConfig cfg, uint64_t seed) : cfg_(cfg), ps_(mix_seed(seed, 0x6A7E)) {
  net_ = nn::Mlp(ps_, "gate", {cfg_.embed_dim, cfg_.hidden, 1});
}

Tensor Gate::scores(const Tensor& embeddings) const { return net_(embeddings); }

Tensor Gate::probs(const Tensor& embeddings) const { return ad::sigmoid(scores(embeddings)); }

std::vector<double> Gate::probabilities(const std::vector<SemanticToken>& tokens) const {
  SEMTWIN_CHECK(static_cast<int>(tokens.size()) == cfg_.token_count, "token count mismatch");
  std::vector<double> flat;
  flat.reserve(tokens.size() * cfg_.embed_dim);
  for (const auto& t : tokens) {
    SEMTWIN_CHECK(static_cast<int>(t.embedding.size()) == cfg_.embed_dim,
                  "token embedding dim mismatch");
    flat.insert(flat.end(), t.embedding.begin(), t.embedding.end());
  }
  Tensor e = Tensor::from({cfg_.token_count, cfg_.embed_dim}, flat);
  Tensor p = probs(e);
  return p.values();
}

namespace {

std::vector<int> topm_indices(const std::vector<double>& score, int m) {
  std::vector<int> order(score.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  order.resize(std::min<size_t>(order.size(), static_cast<size_t>(std::max(0, m))));
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

std::vector<int> propose(const std::vector<double>& probs, int budget_bits, int bits_per_token) {
  SEMTWIN_CHECK(budget_bits >= 0, "budget must be non-negative");
  SEMTWIN_CHECK(bits_per_token > 0, "token bit length must be positive");
  return topm_indices(probs, budget_bits / bits_per_token);
}

std::vector<int> select_distilled(const std::vector<double>& probs, int budget_bits,
                                  int bits_per_token) {
  auto top = propose(probs, budget_bits, bits_per_token);
  std::vector<int> keep;
  for (int idx : top)
    if (probs[idx] > 0.5) keep.push_back(idx);
  return keep;
}

std::vector<int> select_topk_scores(const std::vector<double>& scores, int budget_bits,
                                    int bits_per_token) {
  return topm_indices(scores, budget_bits / bits_per_token);
}

std::vector<int> select_random(int token_count, int budget_bits, int bits_per_token, Rng& rng) {
  std::vector<int> order(token_count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const int m = std::min(token_count, budget_bits / bits_per_token);
  order.resize(m);
  std::sort(order.begin(), order.end());
  return order;
}

Tensor selector_loss(const Tensor& probs, const std::vector<uint8_t>& mask) {
  SEMTWIN_CHECK(static_cast<size_t>(probs.size()) == mask.size(),
                "probability/mask size mismatch");
  std::vector<double> target(mask.begin(), mask.end());
  Tensor b = Tensor::from(probs.shape(), target);
  Tensor one_minus_b = ad::add_scalar(ad::mul_scalar(b, -1.0), 1.0);
  Tensor one_minus_p = ad::add_scalar(ad::mul_scalar(probs, -1.0), 1.0);
  Tensor ll = ad::add(ad::mul(b, ad::log(probs)), ad::mul(one_minus_b, ad::log(one_minus_p)));
  return ad::mul_scalar(ad::sum(ll), -1.0);
}

SelectStrategy parse_strategy(const std::string& name) {
  if (name == "civ") return SelectStrategy::Civ;
  if (name == "random") return SelectStrategy::Random;
  if (name == "myopic-voi") return SelectStrategy::MyopicVoi;
  if (name == "saliency-topk") return SelectStrategy::SaliencyTopK;
  if (name == "confidence-topk") return SelectStrategy::ConfidenceTopK;
  if (name == "fixed-topk") return SelectStrategy::FixedTopK;
  if (name == "civ-no-perbit") return SelectStrategy::CivNoPerBit;
  if (name == "civ-no-prune") return SelectStrategy::CivNoPrune;
  throw ContractViolation("unknown selection strategy: " + name);
}

std::string strategy_name(SelectStrategy s) {
  switch (s) {
    case SelectStrategy::Civ: return "civ";
    case SelectStrategy::Random: return "random";
    case SelectStrategy::MyopicVoi: return "myopic-voi";
    case SelectStrategy::SaliencyTopK: return "saliency-topk";
    case SelectStrategy::ConfidenceTopK: return "confidence-topk";
    case SelectStrategy::FixedTopK: return "fixed-topk";
    case SelectStrategy::CivNoPerBit: return "civ-no-perbit";
    case SelectStrategy::CivNoPrune: return "civ-no-prune";
  }
  return "unknown";
}

}  // namespace semtwin
