#include "semtwin/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace semtwin {

using ad::Tensor;

namespace {
// ctx summary: [min_sector, mean_sector, mean_delta, bearing, dist, a_prev x3]
constexpr int kCtxInDim = 8;
}  // namespace

Encoder::Encoder(EncoderConfig cfg, uint64_t seed) : cfg_(cfg), ps_(mix_seed(seed, 0xE4C)) {
  const int E = cfg_.embed_dim;
  ctx_ = nn::Linear(ps_, "enc.ctx", kCtxInDim, cfg_.ctx_dim);
  sector_group_ = nn::Mlp(ps_, "enc.sector", {1 + cfg_.ctx_dim, cfg_.hidden, E});
  gradient_group_ = nn::Mlp(ps_, "enc.gradient", {1 + cfg_.ctx_dim, cfg_.hidden, E});
  goal_group_ = nn::Mlp(ps_, "enc.goal", {2 + cfg_.group_slots + cfg_.ctx_dim, cfg_.hidden, E});
  ego_group_ = nn::Mlp(ps_, "enc.ego", {5 + cfg_.group_slots + cfg_.ctx_dim, cfg_.hidden, E});
  td_head_ = nn::Mlp(ps_, "enc.td",
                     {cfg_.flat_dim() + cfg_.action_dim, cfg_.td_hidden, cfg_.flat_dim()});
  value_head_ = nn::Mlp(ps_, "enc.value", {cfg_.flat_dim(), cfg_.td_hidden, 1});
}

Tensor Encoder::context(const Observation& obs) const {
  const int K = cfg_.sectors;
  double mn = obs[0], mean_s = 0.0, mean_d = 0.0;
  for (int i = 0; i < K; ++i) {
    mn = std::min(mn, obs[i]);
    mean_s += obs[i];
    mean_d += obs[K + i];
  }
  mean_s /= K;
  mean_d /= K;
  Tensor in = Tensor::from({1, kCtxInDim}, {mn, mean_s, mean_d, obs[2 * K], obs[2 * K + 1],
                                            obs[2 * K + 2], obs[2 * K + 3], obs[2 * K + 4]});
  return ad::tanh(ctx_(in));
}

Tensor Encoder::encode_flat(const Observation& obs) const {
  SEMTWIN_CHECK(static_cast<int>(obs.size()) == cfg_.obs_dim(),
                "observation length does not match encoder config");
  const int K = cfg_.sectors;
  const int P = cfg_.group_slots;
  Tensor ctx = context(obs);  // [1, ctx]
  const auto& cv = ctx.values();

  auto tile_ctx_rows = [&](const std::vector<std::vector<double>>& feats) {
    // rows = one slot each: [feat..., ctx...]
    std::vector<Tensor> rows;
    rows.reserve(feats.size());
    for (const auto& f : feats) {
      Tensor fr = Tensor::from({static_cast<int>(f.size())}, f);
      rows.push_back(fr);
    }
    Tensor fmat = ad::stack_rows(rows);  // [P, feat_dim] (constant)
    // broadcast ctx by stacking the same row; gradient flows into ctx via concat
    std::vector<Tensor> crows(feats.size(), ad::flatten(ctx));
    Tensor cmat = ad::stack_rows(crows);  // [P, ctx]
    (void)cv;
    return ad::concat_cols(fmat, cmat);
  };

  std::vector<std::vector<double>> sect_f(P), grad_f(P), goal_f(P), ego_f(P);
  double mn = obs[0], mean_d = 0.0;
  for (int i = 0; i < K; ++i) {
    mn = std::min(mn, obs[i]);
    mean_d += obs[K + i];
  }
  mean_d /= K;
  for (int i = 0; i < P; ++i) {
    sect_f[i] = {obs[i % K]};
    grad_f[i] = {obs[K + i % K]};
    std::vector<double> onehot(P, 0.0);
    onehot[i] = 1.0;
    goal_f[i] = {obs[2 * K], obs[2 * K + 1]};
    goal_f[i].insert(goal_f[i].end(), onehot.begin(), onehot.end());
    ego_f[i] = {obs[2 * K + 2], obs[2 * K + 3], obs[2 * K + 4], mn, mean_d};
    ego_f[i].insert(ego_f[i].end(), onehot.begin(), onehot.end());
  }

  Tensor t_sector = sector_group_(tile_ctx_rows(sect_f));      // [P, E]
  Tensor t_gradient = gradient_group_(tile_ctx_rows(grad_f));  // [P, E]
  Tensor t_goal = goal_group_(tile_ctx_rows(goal_f));          // [P, E]
  Tensor t_ego = ego_group_(tile_ctx_rows(ego_f));             // [P, E]

  Tensor all = ad::concat_rows(ad::concat_rows(t_sector, t_gradient),
                               ad::concat_rows(t_goal, t_ego));  // [N, E]
  return ad::flatten(all);
}

Tensor Encoder::encode_batch(const std::vector<Observation>& batch) const {
  SEMTWIN_CHECK(!batch.empty(), "encode_batch: empty batch");
  std::vector<Tensor> rows;
  rows.reserve(batch.size());
  for (const auto& o : batch) rows.push_back(encode_flat(o));
  return ad::stack_rows(rows);
}

std::vector<SemanticToken> Encoder::encode(const Observation& obs) const {
  Tensor flat = encode_flat(obs);
  const int N = cfg_.num_tokens();
  const int E = cfg_.embed_dim;
  std::vector<SemanticToken> toks(N);
  for (int n = 0; n < N; ++n) {
    toks[n].index = n;
    toks[n].bits = cfg_.token_bits;
    toks[n].embedding.assign(flat.values().begin() + static_cast<size_t>(n) * E,
                             flat.values().begin() + static_cast<size_t>(n + 1) * E);
  }
  return toks;
}

Tensor Encoder::td_predict(const Tensor& z_flat, const Tensor& actions) const {
  return td_head_(ad::concat_cols(z_flat, actions));
}

Tensor Encoder::value(const Tensor& z_flat) const { return value_head_(z_flat); }

Tensor Encoder::loss(const Tensor& z, const Tensor& actions, const Tensor& z_next,
                     const std::vector<double>& returns) const {
  const int B = z.rows();
  SEMTWIN_CHECK(static_cast<int>(returns.size()) == B, "returns size mismatch");
  Tensor pred = td_predict(z, actions);
  Tensor resid = ad::sub(pred, ad::stop_gradient(z_next));
  Tensor td_term = ad::sum(ad::mul(resid, resid));

  Tensor g = Tensor::from({B, 1}, [&] {
    std::vector<double> v(returns);
    for (double& x : v) x /= cfg_.return_scale;
    return v;
  }());
  Tensor vresid = ad::sub(value(z), g);
  Tensor v_term = ad::sum(ad::mul(vresid, vresid));
  return ad::mul_scalar(ad::add(td_term, ad::mul_scalar(v_term, cfg_.beta_value)), 1.0 / B);
}

Tensor Encoder::loss_batch(const std::vector<const Transition*>& batch) const {
  std::vector<Observation> obs, next_obs;
  std::vector<double> acts, rets;
  for (const auto* tr : batch) {
    obs.push_back(tr->obs);
    next_obs.push_back(tr->next_obs);
    acts.insert(acts.end(), tr->action.begin(), tr->action.end());
    rets.push_back(tr->ret);
  }
  Tensor z = encode_batch(obs);
  Tensor zn = encode_batch(next_obs);
  Tensor a = Tensor::from({static_cast<int>(batch.size()), cfg_.action_dim}, acts);
  return loss(z, a, zn, rets);
}

double Encoder::heldout_loss(const std::vector<Transition>& split) const {
  SEMTWIN_CHECK(!split.empty(), "empty held-out split");
  std::vector<const Transition*> ptrs;
  for (const auto& t : split) ptrs.push_back(&t);
  return loss_batch(ptrs).item();
}

PretrainResult Encoder::pretrain(const std::vector<Transition>& dataset,
                                 const PretrainConfig& pc) {
  SEMTWIN_CHECK(!dataset.empty(), "pretrain: empty dataset");
  Rng rng(mix_seed(pc.seed, 0x9127));
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());

  const int heldout_n =
      std::max(1, static_cast<int>(dataset.size() * pc.heldout_fraction));
  std::vector<Transition> heldout, train;
  for (size_t i = 0; i < order.size(); ++i) {
    (static_cast<int>(i) < heldout_n ? heldout : train).push_back(dataset[order[i]]);
  }
  SEMTWIN_CHECK(!train.empty(), "pretrain: dataset too small for a train split");

  PretrainResult res;
  res.initial_heldout = heldout_loss(heldout);

  nn::AdamConfig ac;
  ac.lr = pc.lr;
  nn::Adam opt(ps_.params(), ac);
  for (int step = 0; step < pc.steps; ++step) {
    std::vector<const Transition*> batch;
    for (int b = 0; b < pc.batch; ++b)
      batch.push_back(&train[rng.uniform_int(static_cast<int>(train.size()))]);
    ps_.zero_grad();
    ad::Tape tape;
    Tensor l = loss_batch(batch);
    tape.backward(l);
    opt.step();
    ++res.steps;
  }
  res.final_heldout = heldout_loss(heldout);
  return res;
}

std::string Encoder::group_name(int token_index) const {
  const int g = token_index / cfg_.group_slots;
  switch (g) {
    case 0: return "sector-risk";
    case 1: return "sector-gradient";
    case 2: return "goal-geometry";
    default: return "ego-state";
  }
}

void Encoder::write_token_layout(std::ostream& os) const {
  os << "# token layout: index group feature\n";
  const int K = cfg_.sectors;
  for (int n = 0; n < cfg_.num_tokens(); ++n) {
    const int slot = n % cfg_.group_slots;
    os << n << ' ' << group_name(n) << ' ';
    const int g = n / cfg_.group_slots;
    if (g == 0)
      os << "sector_" << slot % K << "_range";
    else if (g == 1)
      os << "sector_" << slot % K << "_delta";
    else if (g == 2)
      os << "goal_slot_" << slot;
    else
      os << "ego_slot_" << slot;
    os << '\n';
  }
}

}  // namespace semtwin
