#pragma once

// Agent-side semantic encoder. Produces N = 4*group_slots candidate tokens
// from one observation: sector-risk, sector-gradient, goal-geometry and
// ego/uncertainty groups, each an MLP shared across its slots plus a shared
// context vector built from permutation-invariant observation summaries.
// A TD dynamics head and a return head provide the self-supervised training
// signal; gradients never flow into the prediction target branch.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "semtwin/channel.hpp"
#include "semtwin/env.hpp"
#include "semtwin/nn.hpp"

namespace semtwin {

struct EncoderConfig {
  int sectors = 8;
  int group_slots = 8;  // tokens per group; N = 4 * group_slots
  int embed_dim = 16;
  int ctx_dim = 8;
  int hidden = 32;
  int td_hidden = 128;
  int action_dim = 3;
  int token_bits = 8;
  double beta_value = 0.5;    // weight of the return-prediction term
  double return_scale = 1.0;  // divides G before the value residual (raw by default)

  int num_tokens() const { return 4 * group_slots; }
  int obs_dim() const { return sectors * 2 + 5; }
  int flat_dim() const { return num_tokens() * embed_dim; }
};

struct Transition {
  Observation obs;
  std::vector<double> action;  // length action_dim
  Observation next_obs;
  double ret = 0.0;  // discounted return-to-go target
};

struct PretrainConfig {
  int steps = 2000;
  int batch = 32;
  double lr = 3e-4;
  double heldout_fraction = 0.1;
  uint64_t seed = 0;
};

struct PretrainResult {
  double initial_heldout = 0.0;
  double final_heldout = 0.0;
  int steps = 0;
};

class Encoder {
 public:
  Encoder(EncoderConfig cfg, uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  int num_tokens() const { return cfg_.num_tokens(); }

  // Differentiable flat embedding [N*E] of one observation.
  ad::Tensor encode_flat(const Observation& obs) const;
  // [B, N*E] for a batch.
  ad::Tensor encode_batch(const std::vector<Observation>& batch) const;
  // Pipeline view: plain tokens with bit lengths, no gradient tracking.
  std::vector<SemanticToken> encode(const Observation& obs) const;

  // TD head: predicted next flat embedding from (z, a).
  ad::Tensor td_predict(const ad::Tensor& z_flat, const ad::Tensor& actions) const;
  // Return head.
  ad::Tensor value(const ad::Tensor& z_flat) const;

  // Mean over the batch of ||d(z,a) - sg(z')||^2 + beta*(value(z) - G/scale)^2.
  ad::Tensor loss(const ad::Tensor& z, const ad::Tensor& actions, const ad::Tensor& z_next,
                  const std::vector<double>& returns) const;

  // Stage-1 self-supervised pretraining. Shuffles, holds out a tail split,
  // runs Adam on minibatches. Throws on an empty dataset.
  PretrainResult pretrain(const std::vector<Transition>& dataset, const PretrainConfig& pc);

  double heldout_loss(const std::vector<Transition>& split) const;

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  // token index -> semantic group manifest, for audit tooling
  void write_token_layout(std::ostream& os) const;
  std::string group_name(int token_index) const;

 private:
  ad::Tensor context(const Observation& obs) const;
  ad::Tensor loss_batch(const std::vector<const Transition*>& batch) const;

  EncoderConfig cfg_;
  nn::ParamStore ps_;
  nn::Linear ctx_;
  nn::Mlp sector_group_, gradient_group_, goal_group_, ego_group_;
  nn::Mlp td_head_;
  nn::Mlp value_head_;
};

}  // namespace semtwin
