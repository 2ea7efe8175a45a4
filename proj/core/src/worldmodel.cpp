#include "semtwin/worldmodel.hpp"

#include <cmath>

namespace semtwin {

using ad::Tensor;

BeliefSnapshot snapshot(const BeliefState& b) {
  BeliefSnapshot s;
  s.batch = b.batch();
  s.h_dim = b.h.cols();
  s.u_dim = b.u.cols();
  s.h = b.h.values();
  s.u = b.u.values();
  s.post_mean = b.post_mean.values();
  s.post_std = b.post_std.values();
  s.prior_mean = b.prior_mean.values();
  s.prior_std = b.prior_std.values();
  return s;
}

WorldModel::WorldModel(WorldModelConfig cfg, uint64_t seed)
    : cfg_(cfg), ps_(mix_seed(seed, 0x5517)) {
  gru_ = nn::GruCell(ps_, "wm.gru", cfg_.u_dim + cfg_.action_dim, cfg_.h_dim);
  post_head_ = nn::GaussianHead(ps_, "wm.post",
                                {cfg_.h_dim + cfg_.token_input_dim(), cfg_.hidden}, cfg_.u_dim);
  prior_head_ = nn::GaussianHead(ps_, "wm.prior", {cfg_.h_dim, cfg_.hidden}, cfg_.u_dim);
  decoder_ = nn::Mlp(ps_, "wm.dec", {cfg_.h_dim + cfg_.u_dim, cfg_.hidden, cfg_.recon_dim()});
  reward_head_ = nn::GaussianHead(ps_, "wm.rew", {cfg_.h_dim + cfg_.u_dim, cfg_.hidden}, 1);
}

BeliefState WorldModel::initial(int batch) const {
  BeliefState b;
  b.h = Tensor::zeros({batch, cfg_.h_dim});
  b.u = Tensor::zeros({batch, cfg_.u_dim});
  b.post_mean = Tensor::zeros({batch, cfg_.u_dim});
  b.post_std = Tensor::full({batch, cfg_.u_dim}, 1.0);
  b.prior_mean = Tensor::zeros({batch, cfg_.u_dim});
  b.prior_std = Tensor::full({batch, cfg_.u_dim}, 1.0);
  return b;
}

BeliefState WorldModel::restore(const BeliefSnapshot& s) const {
  SEMTWIN_CHECK(s.h_dim == cfg_.h_dim && s.u_dim == cfg_.u_dim, "snapshot dims mismatch");
  BeliefState b;
  b.h = Tensor::from({s.batch, s.h_dim}, s.h);
  b.u = Tensor::from({s.batch, s.u_dim}, s.u);
  b.post_mean = Tensor::from({s.batch, s.u_dim}, s.post_mean);
  b.post_std = Tensor::from({s.batch, s.u_dim}, s.post_std);
  b.prior_mean = Tensor::from({s.batch, s.u_dim}, s.prior_mean);
  b.prior_std = Tensor::from({s.batch, s.u_dim}, s.prior_std);
  return b;
}

Tensor WorldModel::advance_h(const BeliefState& prev, const Tensor& prev_action) const {
  return gru_(ad::concat_cols(prev.u, prev_action), prev.h);
}

BeliefState WorldModel::posterior_from(const Tensor& h, const Tensor& token_input, Rng& rng,
                                       bool eval_mode) const {
  auto post = post_head_(ad::concat_cols(h, token_input));
  auto prior = prior_head_(h);
  BeliefState b;
  b.h = h;
  b.post_mean = post.mean;
  b.post_std = post.std;
  b.prior_mean = prior.mean;
  b.prior_std = prior.std;
  b.u = ad::reparam_sample(post.mean, post.std,
                           nn::draw_eps(post.mean.size(), rng, eval_mode));
  return b;
}

BeliefState WorldModel::prior_from(const Tensor& h, Rng& rng, bool eval_mode) const {
  auto prior = prior_head_(h);
  BeliefState b;
  b.h = h;
  b.post_mean = prior.mean;
  b.post_std = prior.std;
  b.prior_mean = prior.mean;
  b.prior_std = prior.std;
  b.u = ad::reparam_sample(prior.mean, prior.std,
                           nn::draw_eps(prior.mean.size(), rng, eval_mode));
  return b;
}

BeliefState WorldModel::posterior_update(const BeliefState& prev, const Tensor& prev_action,
                                         const Tensor& token_input, Rng& rng,
                                         bool eval_mode) const {
  return posterior_from(advance_h(prev, prev_action), token_input, rng, eval_mode);
}

BeliefState WorldModel::prior_step(const BeliefState& prev, const Tensor& prev_action, Rng& rng,
                                   bool eval_mode) const {
  return prior_from(advance_h(prev, prev_action), rng, eval_mode);
}

Tensor WorldModel::decode_tokens(const BeliefState& b) const {
  return decoder_(ad::concat_cols(b.h, b.u));
}

WorldModel::RewardOut WorldModel::reward_head(const BeliefState& b) const {
  auto out = reward_head_(ad::concat_cols(b.h, b.u));
  return {out.mean, out.std};
}

WorldModel::ElboParts WorldModel::elbo_loss(const SequenceBatch& batch, Rng& rng,
                                            bool eval_mode) const {
  SEMTWIN_CHECK(batch.length == cfg_.seq_len,
                "sequence length does not match the configured L");
  SEMTWIN_CHECK(static_cast<int>(batch.token_inputs.size()) == batch.length &&
                    static_cast<int>(batch.actions.size()) == batch.length &&
                    static_cast<int>(batch.rewards.size()) == batch.length,
                "sequence batch is inconsistent");
  const int B = batch.batch;
  const double invB = 1.0 / B;

  BeliefState state = initial(B);
  Tensor total = Tensor::scalar(0.0);
  ElboParts parts;
  parts.kl_per_step.reserve(batch.length);

  for (int t = 0; t < batch.length; ++t) {
    Tensor h = advance_h(state, batch.actions[t]);
    BeliefState post = posterior_from(h, batch.token_inputs[t], rng, eval_mode);

    // reconstruction, supervised only where tokens were received
    Tensor recon_mean = decode_tokens(post);
    Tensor diff = ad::mul(ad::sub(recon_mean, batch.recon_targets[t]), batch.recon_masks[t]);
    double mask_count = 0.0;
    for (double m : batch.recon_masks[t].values()) mask_count += m;
    Tensor recon_nll = ad::add_scalar(ad::mul_scalar(ad::sum(ad::mul(diff, diff)), 0.5),
                                      0.5 * std::log(2.0 * M_PI) * mask_count);
    recon_nll = ad::mul_scalar(recon_nll, invB);

    auto rew = reward_head(post);
    Tensor r_target = Tensor::from({B, 1}, batch.rewards[t]);
    Tensor reward_nll = ad::mul_scalar(nn::gaussian_nll(r_target, rew.mean, rew.std), invB);

    Tensor kl = ad::mul_scalar(
        nn::gaussian_kl(post.post_mean, post.post_std, post.prior_mean, post.prior_std), invB);
    const double kl_val = kl.item();
    SEMTWIN_CHECK(kl_val >= -1e-9, "KL(q||p) must be non-negative");
    parts.kl_per_step.push_back(kl_val);

    total = ad::add(total, ad::add(ad::add(recon_nll, reward_nll),
                                   ad::clamp_min(kl, cfg_.free_bits)));
    parts.recon_nll += recon_nll.item();
    parts.reward_nll += reward_nll.item();
    parts.kl += kl_val;

    state = post;
  }
  parts.total = total;
  return parts;
}

ImaginedTrajectory WorldModel::imagine(const BeliefState& start, const PolicyFn& policy,
                                       int horizon, double price, Rng& rng,
                                       bool eval_mode) const {
  SEMTWIN_CHECK(horizon >= 1, "imagination horizon must be >= 1");
  ImaginedTrajectory traj;
  traj.price = price;
  traj.steps.reserve(horizon);
  BeliefState state = start;
  for (int tau = 0; tau < horizon; ++tau) {
    ImaginedStep step;
    step.h = state.h;
    step.u = state.u;
    step.action = policy(state.h, state.u, rng, eval_mode);
    step.reward_mean = reward_head(state).mean;
    traj.steps.push_back(step);
    state = prior_step(state, traj.steps.back().action, rng, eval_mode);
  }
  traj.bootstrap_h = state.h;
  traj.bootstrap_u = state.u;
  return traj;
}

std::vector<double> token_input_row(const ReceivedTokens& rx, int token_count, int embed_dim) {
  std::vector<double> row(static_cast<size_t>(token_count) * (embed_dim + 1), 0.0);
  for (size_t i = 0; i < rx.indices.size(); ++i) {
    if (rx.erased[i]) continue;
    const int idx = rx.indices[i];
    double* base = &row[static_cast<size_t>(idx) * (embed_dim + 1)];
    for (int j = 0; j < embed_dim; ++j) base[j] = rx.embeddings[i][j];
    base[embed_dim] = 1.0;
  }
  return row;
}

std::vector<double> recon_target_row(const ReceivedTokens& rx, int token_count, int embed_dim,
                                     std::vector<double>* mask_row) {
  std::vector<double> row(static_cast<size_t>(token_count) * embed_dim, 0.0);
  if (mask_row) mask_row->assign(row.size(), 0.0);
  for (size_t i = 0; i < rx.indices.size(); ++i) {
    if (rx.erased[i]) continue;
    const int idx = rx.indices[i];
    for (int j = 0; j < embed_dim; ++j) {
      row[static_cast<size_t>(idx) * embed_dim + j] = rx.embeddings[i][j];
      if (mask_row) (*mask_row)[static_cast<size_t>(idx) * embed_dim + j] = 1.0;
    }
  }
  return row;
}

}  // namespace semtwin
