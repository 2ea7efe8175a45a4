#include "semtwin/control.hpp"

#include <algorithm>
#include <cmath>

namespace semtwin {

using ad::Tensor;

namespace {
constexpr double kTwoPiE = 17.079468445347132;  // 2*pi*e
}

Actor::Actor(ControlConfig cfg, uint64_t seed) : cfg_(cfg), ps_(mix_seed(seed, 0xAC7)) {
  head_ = nn::GaussianHead(ps_, "actor", {cfg_.h_dim + cfg_.u_dim, cfg_.hidden},
                           cfg_.action_dim);
}

Actor::Out Actor::act(const Tensor& h, const Tensor& u, Rng& rng, bool eval_mode) const {
  auto g = head_(ad::concat_cols(h, u));
  Tensor pre = ad::reparam_sample(g.mean, g.std, nn::draw_eps(g.mean.size(), rng, eval_mode));
  Out out;
  out.action = ad::tanh(pre);
  out.mean = g.mean;
  out.std = g.std;
  return out;
}

Tensor Actor::entropy(const Tensor& h, const Tensor& u) const {
  auto g = head_(ad::concat_cols(h, u));
  // H(N(m, diag s^2)) = sum log s + D/2 log(2 pi e), averaged over the batch
  Tensor logs = ad::sum(ad::log(g.std));
  const double constant = 0.5 * cfg_.action_dim * std::log(kTwoPiE) * g.std.rows();
  return ad::mul_scalar(ad::add_scalar(logs, constant), 1.0 / g.std.rows());
}

PolicyFn Actor::as_policy() const {
  return [this](const Tensor& h, const Tensor& u, Rng& rng, bool eval_mode) {
    return act(h, u, rng, eval_mode).action;
  };
}

Critic::Critic(ControlConfig cfg, uint64_t seed) : cfg_(cfg), ps_(mix_seed(seed, 0xC121C)) {
  net_ = nn::Mlp(ps_, "critic", {cfg_.h_dim + cfg_.u_dim, cfg_.hidden, cfg_.hidden, 1});
}

Tensor Critic::value(const Tensor& h, const Tensor& u) const {
  return net_(ad::concat_cols(h, u));
}

double shaped_reward(double reward, double bits, double alpha) {
  SEMTWIN_CHECK(bits >= 0.0, "bit length must be non-negative");
  SEMTWIN_CHECK(alpha >= 0.0, "price must be non-negative");
  return reward - alpha * bits;
}

std::vector<Tensor> lambda_returns(const ImaginedTrajectory& traj, const ValueFn& value,
                                   const LambdaParams& p) {
  SEMTWIN_CHECK(p.lambda >= 0.0 && p.lambda <= 1.0, "lambda must be in [0,1]");
  const int H = traj.horizon();
  SEMTWIN_CHECK(H >= 1, "trajectory must have at least one step");

  std::vector<Tensor> targets(H);
  Tensor next = value(traj.bootstrap_h, traj.bootstrap_u);
  for (int tau = H - 1; tau >= 0; --tau) {
    Tensor r = traj.shaped_reward(tau);
    Tensor bootstrap;
    if (tau == H - 1) {
      bootstrap = next;  // V_lambda(x_H) = V(x_H)
    } else {
      Tensor v_next = value(traj.steps[tau + 1].h, traj.steps[tau + 1].u);
      bootstrap = ad::add(ad::mul_scalar(v_next, 1.0 - p.lambda),
                          ad::mul_scalar(targets[tau + 1], p.lambda));
    }
    targets[tau] = ad::add(r, ad::mul_scalar(bootstrap, p.gamma));
  }
  return targets;
}

Tensor critic_loss(const ImaginedTrajectory& traj, const Critic& critic,
                   const std::vector<Tensor>& targets) {
  const int H = traj.horizon();
  SEMTWIN_CHECK(static_cast<int>(targets.size()) == H, "target count mismatch");
  Tensor total = Tensor::scalar(0.0);
  for (int tau = 0; tau < H; ++tau) {
    Tensor v = critic.value(traj.steps[tau].h, traj.steps[tau].u);
    Tensor d = ad::sub(v, ad::stop_gradient(targets[tau]));
    total = ad::add(total, ad::mean(ad::mul(d, d)));
  }
  return ad::mul_scalar(total, 1.0 / H);
}

Tensor actor_loss(const ImaginedTrajectory& traj, const Actor& actor, const Critic& critic,
                  const LambdaParams& p, double entropy_weight) {
  auto value = [&critic](const Tensor& h, const Tensor& u) { return critic.value(h, u); };
  auto targets = lambda_returns(traj, value, p);
  Tensor total = Tensor::scalar(0.0);
  double gamma_pow = 1.0;
  for (int tau = 0; tau < traj.horizon(); ++tau) {
    total = ad::add(total, ad::mul_scalar(ad::mean(targets[tau]), -gamma_pow));
    gamma_pow *= p.gamma;
  }
  if (entropy_weight != 0.0) {
    Tensor ent = Tensor::scalar(0.0);
    for (int tau = 0; tau < traj.horizon(); ++tau)
      ent = ad::add(ent, actor.entropy(traj.steps[tau].h, traj.steps[tau].u));
    total = ad::add(total, ad::mul_scalar(ent, -entropy_weight / traj.horizon()));
  }
  return total;
}

Tensor reinforce_actor_loss(const ImaginedTrajectory& traj, const Actor& actor,
                            const Critic& critic, const LambdaParams& p,
                            double entropy_weight) {
  auto value = [&critic](const Tensor& h, const Tensor& u) { return critic.value(h, u); };
  auto targets = lambda_returns(traj, value, p);

  Tensor total = Tensor::scalar(0.0);
  double gamma_pow = 1.0;
  for (int tau = 0; tau < traj.horizon(); ++tau) {
    const auto& step = traj.steps[tau];
    Tensor h = step.h.detach();
    Tensor u = step.u.detach();
    // advantage as a constant weight
    Tensor adv = ad::sub(targets[tau], critic.value(h, u)).detach();

    // log-prob of the squashed sample: recover pre-squash from the action
    std::vector<double> pre_vals(step.action.values().size());
    for (size_t i = 0; i < pre_vals.size(); ++i) {
      const double a = std::clamp(step.action.values()[i], -0.999999, 0.999999);
      pre_vals[i] = 0.5 * std::log((1.0 + a) / (1.0 - a));
    }
    Tensor pre = Tensor::from(step.action.shape(), pre_vals);

    static thread_local Rng no_sample(0);  // unused in eval mode
    auto g = actor.act(h, u, no_sample, true);
    Tensor z = ad::div(ad::sub(pre, g.mean), g.std);
    // sum_d [-z^2/2 - log s - log(1 - a^2)] + const; the constant drops in the gradient
    Tensor a2 = ad::mul(step.action.detach(), step.action.detach());
    Tensor logp_terms =
        ad::sub(ad::sub(ad::mul_scalar(ad::mul(z, z), -0.5), ad::log(g.std)),
                ad::log(ad::add_scalar(ad::mul_scalar(a2, -1.0), 1.0)));
    Tensor logp = ad::sum_rows(logp_terms);  // [B,1]
    Tensor weighted = ad::mul(logp, adv);
    total = ad::add(total, ad::mul_scalar(ad::sum(weighted),
                                          -gamma_pow / step.action.rows()));
    gamma_pow *= p.gamma;
  }
  if (entropy_weight != 0.0) {
    Tensor ent = Tensor::scalar(0.0);
    for (int tau = 0; tau < traj.horizon(); ++tau)
      ent = ad::add(ent, actor.entropy(traj.steps[tau].h.detach(), traj.steps[tau].u.detach()));
    total = ad::add(total, ad::mul_scalar(ent, -entropy_weight / traj.horizon()));
  }
  return total;
}

double PriceState::update(double batch_return, double batch_cost) {
  SEMTWIN_CHECK(batch_cost >= 0.0, "discounted cost must be non-negative");
  if (!initialized) {
    r_hat = batch_return;
    c_hat = batch_cost;
    initialized = true;
  } else {
    r_hat = ema * r_hat + (1.0 - ema) * batch_return;
    c_hat = ema * c_hat + (1.0 - ema) * batch_cost;
  }
  alpha = std::max(0.0, r_hat / (c_hat + eps));
  return alpha;
}

double dinkelbach_f(const std::vector<PolicyPoint>& set, double alpha) {
  SEMTWIN_CHECK(!set.empty(), "empty policy set");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& p : set) best = std::max(best, p.ret - alpha * p.cost);
  return best;
}

DinkelbachReport verify_dinkelbach(const std::vector<PolicyPoint>& set, double delta,
                                   double tol) {
  SEMTWIN_CHECK(!set.empty(), "empty policy set");
  for (const auto& p : set)
    SEMTWIN_CHECK(p.cost > 0.0, "every policy must have strictly positive cost");

  DinkelbachReport rep;
  for (size_t i = 0; i < set.size(); ++i) {
    const double eta = set[i].ret / set[i].cost;
    if (rep.ratio_argmax < 0 || eta > rep.eta_star) {
      rep.eta_star = eta;
      rep.ratio_argmax = static_cast<int>(i);
    }
  }
  rep.f_at_eta = dinkelbach_f(set, rep.eta_star);
  rep.f_below = dinkelbach_f(set, rep.eta_star - delta);
  rep.f_above = dinkelbach_f(set, rep.eta_star + delta);
  const auto& star = set[rep.ratio_argmax];
  rep.priced_gap = star.ret - rep.eta_star * star.cost;
  rep.pass = std::abs(rep.f_at_eta) <= tol && rep.f_below > 0.0 && rep.f_above < 0.0 &&
             std::abs(rep.priced_gap) <= tol;
  return rep;
}

Action to_env_action(const std::vector<double>& normalized, const NavConfig& cfg) {
  SEMTWIN_CHECK(normalized.size() == 3, "normalized action must have 3 components");
  Action a;
  a.forward = (normalized[0] + 1.0) * 0.5 * cfg.max_forward;
  a.vertical = normalized[1] * cfg.max_vertical;
  a.yaw_rate = normalized[2] * cfg.max_yaw;
  return a;
}

}  // namespace semtwin
