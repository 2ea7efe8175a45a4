#pragma once

// Recurrent state-space digital twin. A gated recurrent transition carries
// the deterministic state h, a posterior head conditions the stochastic
// latent u on received tokens (zero-filled embeddings plus per-token
// presence bits), a prior head predicts u without tokens, and decoder /
// reward heads reconstruct the received embeddings and the task reward.
// Trained by minimizing the negative ELBO with a free-bits KL floor.

#include <cstdint>
#include <functional>
#include <vector>

#include "semtwin/channel.hpp"
#include "semtwin/nn.hpp"

namespace semtwin {

struct WorldModelConfig {
  int h_dim = 128;
  int u_dim = 32;
  int token_count = 32;
  int embed_dim = 16;
  int action_dim = 3;
  int hidden = 128;
  int seq_len = 32;       // L
  double free_bits = 1.0; // nats per latent group

  int token_input_dim() const { return token_count * (embed_dim + 1); }
  int recon_dim() const { return token_count * embed_dim; }
};

struct BeliefState {
  ad::Tensor h;  // [B, h_dim]
  ad::Tensor u;  // [B, u_dim]
  ad::Tensor post_mean, post_std;
  ad::Tensor prior_mean, prior_std;
  int batch() const { return h.rows(); }
};

// Plain-value form for persistence and counterfactual snapshots.
struct BeliefSnapshot {
  int batch = 0, h_dim = 0, u_dim = 0;
  std::vector<double> h, u, post_mean, post_std, prior_mean, prior_std;
};

BeliefSnapshot snapshot(const BeliefState& b);

struct SequenceBatch {
  int batch = 0, length = 0;
  std::vector<ad::Tensor> token_inputs;    // per step [B, N*(E+1)]
  std::vector<ad::Tensor> actions;         // per step [B, A]: action entering the step
  std::vector<std::vector<double>> rewards;  // per step [B]
  std::vector<ad::Tensor> recon_targets;   // per step [B, N*E]
  std::vector<ad::Tensor> recon_masks;     // per step [B, N*E], 0/1 per received dim
};

struct ImaginedStep {
  ad::Tensor h, u;
  ad::Tensor action;       // [B, A]
  ad::Tensor reward_mean;  // [B, 1], task reward prediction, unpriced
};

// H-step latent rollout. `price` is the per-step priced communication term
// subtracted when forming shaped rewards.
struct ImaginedTrajectory {
  std::vector<ImaginedStep> steps;
  ad::Tensor bootstrap_h, bootstrap_u;  // state after the last action
  double price = 0.0;
  int horizon() const { return static_cast<int>(steps.size()); }
  ad::Tensor shaped_reward(int tau) const {
    return ad::add_scalar(steps[tau].reward_mean, -price);
  }
};

using PolicyFn = std::function<ad::Tensor(const ad::Tensor& h, const ad::Tensor& u, Rng& rng,
                                          bool eval_mode)>;

class WorldModel {
 public:
  WorldModel(WorldModelConfig cfg, uint64_t seed);

  const WorldModelConfig& config() const { return cfg_; }

  BeliefState initial(int batch) const;
  BeliefState restore(const BeliefSnapshot& snap) const;

  // Deterministic state advance h_t = Psi(h_{t-1}, u_{t-1}, a_{t-1}).
  ad::Tensor advance_h(const BeliefState& prev, const ad::Tensor& prev_action) const;
  BeliefState posterior_from(const ad::Tensor& h, const ad::Tensor& token_input, Rng& rng,
                             bool eval_mode) const;
  BeliefState prior_from(const ad::Tensor& h, Rng& rng, bool eval_mode) const;

  BeliefState posterior_update(const BeliefState& prev, const ad::Tensor& prev_action,
                               const ad::Tensor& token_input, Rng& rng, bool eval_mode) const;
  BeliefState prior_step(const BeliefState& prev, const ad::Tensor& prev_action, Rng& rng,
                         bool eval_mode) const;

  ad::Tensor decode_tokens(const BeliefState& b) const;  // [B, N*E]
  struct RewardOut {
    ad::Tensor mean, std;
  };
  RewardOut reward_head(const BeliefState& b) const;

  struct ElboParts {
    ad::Tensor total;          // scalar, negative ELBO (to minimize), batch-mean
    double recon_nll = 0.0;    // diagnostics, batch-mean sums over the sequence
    double reward_nll = 0.0;
    double kl = 0.0;
    std::vector<double> kl_per_step;  // batch-mean KL per step (pre-floor)
  };
  // Sequence length must equal config().seq_len.
  ElboParts elbo_loss(const SequenceBatch& batch, Rng& rng, bool eval_mode = false) const;

  ImaginedTrajectory imagine(const BeliefState& start, const PolicyFn& policy, int horizon,
                             double price, Rng& rng, bool eval_mode) const;

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

 private:
  WorldModelConfig cfg_;
  nn::ParamStore ps_;
  nn::GruCell gru_;
  nn::GaussianHead post_head_, prior_head_;
  nn::Mlp decoder_;
  nn::GaussianHead reward_head_;
};

// Builds the posterior conditioning row for one slot: received embeddings in
// token-major order, each followed by its presence bit; absent tokens are
// zero-filled with bit 0.
std::vector<double> token_input_row(const ReceivedTokens& rx, int token_count, int embed_dim);
// Reconstruction target and 0/1 per-dim mask (only received dims supervise
// the decoder).
std::vector<double> recon_target_row(const ReceivedTokens& rx, int token_count, int embed_dim,
                                     std::vector<double>* mask_row);

}  // namespace semtwin
