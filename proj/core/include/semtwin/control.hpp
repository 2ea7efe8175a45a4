#pragma once

// Latent-space actor-critic trained on imagined rollouts, the priced shaped
// reward, the adaptive per-bit price, and a numerical verifier for the
// fractional-objective root characterization.

#include <cstdint>
#include <functional>
#include <vector>

#include "semtwin/env.hpp"
#include "semtwin/nn.hpp"
#include "semtwin/worldmodel.hpp"

namespace semtwin {

struct ControlConfig {
  int h_dim = 128;
  int u_dim = 32;
  int action_dim = 3;
  int hidden = 128;
  double gamma = 0.99;
  double lambda = 0.95;
  double entropy_weight = 0.003;  // beta
};

// tanh-squashed diagonal Gaussian policy over normalized actions in [-1,1].
class Actor {
 public:
  Actor(ControlConfig cfg, uint64_t seed);

  struct Out {
    ad::Tensor action;  // squashed, [B, A]
    ad::Tensor mean, std;
  };
  Out act(const ad::Tensor& h, const ad::Tensor& u, Rng& rng, bool eval_mode) const;
  // base-distribution entropy, averaged over the batch
  ad::Tensor entropy(const ad::Tensor& h, const ad::Tensor& u) const;
  PolicyFn as_policy() const;

  const ControlConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

 private:
  ControlConfig cfg_;
  nn::ParamStore ps_;
  nn::GaussianHead head_;
};

class Critic {
 public:
  Critic(ControlConfig cfg, uint64_t seed);
  ad::Tensor value(const ad::Tensor& h, const ad::Tensor& u) const;  // [B, 1]
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

 private:
  ControlConfig cfg_;
  nn::ParamStore ps_;
  nn::Mlp net_;
};

// r~ = r^ - alpha * bits
double shaped_reward(double reward, double bits, double alpha);

struct LambdaParams {
  double lambda = 0.95;
  double gamma = 0.99;
};

using ValueFn = std::function<ad::Tensor(const ad::Tensor& h, const ad::Tensor& u)>;

// Per-step lambda-return targets along an imagined trajectory, one [B,1]
// tensor per step. Shaped rewards come from the trajectory's price field.
std::vector<ad::Tensor> lambda_returns(const ImaginedTrajectory& traj, const ValueFn& value,
                                       const LambdaParams& p);

// Mean squared error of the critic against fixed targets.
ad::Tensor critic_loss(const ImaginedTrajectory& traj, const Critic& critic,
                       const std::vector<ad::Tensor>& targets);

// -E[sum gamma^tau V_lambda] - beta * E[policy entropy]; V_lambda recomputed
// with gradients flowing through the differentiable rollout.
ad::Tensor actor_loss(const ImaginedTrajectory& traj, const Actor& actor, const Critic& critic,
                      const LambdaParams& p, double entropy_weight);

// Score-function alternative: log-prob weighted advantages on a detached
// rollout (enabled by the control.score_function flag).
ad::Tensor reinforce_actor_loss(const ImaginedTrajectory& detached_traj, const Actor& actor,
                                const Critic& critic, const LambdaParams& p,
                                double entropy_weight);

// ---- adaptive price -----------------------------------------------------------

struct PriceState {
  double alpha = 0.0;
  double r_hat = 0.0;  // running discounted return accumulator
  double c_hat = 0.0;  // running discounted cost accumulator (non-negative)
  double eps = 1e-8;
  double ema = 0.9;
  bool initialized = false;

  // Folds the latest real-batch discounted sums into the running
  // accumulators and replaces alpha by the clipped ratio.
  double update(double batch_return, double batch_cost);
};

// ---- fractional-objective verification ----------------------------------------

struct PolicyPoint {
  double ret = 0.0;
  double cost = 0.0;  // must be > 0
};

double dinkelbach_f(const std::vector<PolicyPoint>& set, double alpha);

struct DinkelbachReport {
  double eta_star = 0.0;
  int ratio_argmax = -1;
  double f_at_eta = 0.0;
  double f_below = 0.0;   // F(eta* - delta)
  double f_above = 0.0;   // F(eta* + delta)
  double priced_gap = 0.0;  // priced objective of the ratio-argmax at eta*
  bool pass = false;
};

// Checks F(eta*) = 0 within tol, the sign pattern around eta*, and that the
// ratio-optimal policy attains zero priced gap.
DinkelbachReport verify_dinkelbach(const std::vector<PolicyPoint>& set, double delta = 1e-3,
                                   double tol = 1e-9);

// Maps a normalized [-1,1]^3 action onto the environment's command bounds.
Action to_env_action(const std::vector<double>& normalized, const NavConfig& cfg);

}  // namespace semtwin
