#include "semtwin/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace semtwin {

using ad::Tensor;

// ---- replay --------------------------------------------------------------------

void ReplayBuffer::add(Episode ep) {
  total_steps_ += static_cast<int>(ep.steps.size());
  episodes_.push_back(std::move(ep));
  while (total_steps_ > capacity_ && episodes_.size() > 1) {
    total_steps_ -= static_cast<int>(episodes_.front().steps.size());
    episodes_.erase(episodes_.begin());
  }
}

bool ReplayBuffer::can_sample(int length) const {
  for (const auto& ep : episodes_)
    if (static_cast<int>(ep.steps.size()) >= length) return true;
  return false;
}

std::vector<ReplayBuffer::Window> ReplayBuffer::sample_windows(int count, int length,
                                                               Rng& rng) const {
  std::vector<int> eligible;
  for (size_t i = 0; i < episodes_.size(); ++i)
    if (static_cast<int>(episodes_[i].steps.size()) >= length)
      eligible.push_back(static_cast<int>(i));
  SEMTWIN_CHECK(!eligible.empty(), "replay holds no episode long enough for a window");
  std::vector<Window> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    const auto& ep = episodes_[eligible[rng.uniform_int(static_cast<int>(eligible.size()))]];
    const int max_start = static_cast<int>(ep.steps.size()) - length;
    out.push_back({&ep, max_start == 0 ? 0 : rng.uniform_int(max_start + 1)});
  }
  return out;
}

double ReplayBuffer::return_to_go(const Episode& ep, int t, double gamma) {
  double g = 0.0;
  for (int tau = static_cast<int>(ep.steps.size()) - 1; tau >= t; --tau)
    g = ep.steps[tau].reward + gamma * g;
  return g;
}

// ---- metrics ------------------------------------------------------------------

namespace {
std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}
}  // namespace

void write_metrics_header(std::ostream& os) {
  os << "iteration,env_steps,elbo,recon_nll,reward_nll,kl,encoder_loss,actor_loss,"
        "critic_loss,selector_loss,alpha,r_hat,c_hat,return_per_kbit,success_rate,"
        "collision_rate,mean_bits,sent_tokens,erased_tokens,aborted\n";
}

void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << r.iteration << ',' << r.env_steps << ',' << fmt(r.elbo) << ',' << fmt(r.recon_nll)
     << ',' << fmt(r.reward_nll) << ',' << fmt(r.kl) << ',' << fmt(r.encoder_loss) << ','
     << fmt(r.actor_loss) << ',' << fmt(r.critic_loss) << ',' << fmt(r.selector_loss) << ','
     << fmt(r.alpha) << ',' << fmt(r.r_hat) << ',' << fmt(r.c_hat) << ','
     << fmt(r.return_per_kbit) << ',' << fmt(r.success_rate) << ',' << fmt(r.collision_rate)
     << ',' << fmt(r.mean_bits) << ',' << r.sent_tokens << ',' << r.erased_tokens << ','
     << r.aborted << '\n';
}

void write_eval_header(std::ostream& os) {
  os << "budget,per,strategy,episodes,mean_return,se_return,mean_kbits,return_per_kbit,"
        "success_rate,collision_rate\n";
}

void write_eval_row(std::ostream& os, const EvalRow& r) {
  os << r.budget << ',' << fmt(r.per) << ',' << r.strategy << ',' << r.episodes << ','
     << fmt(r.mean_return) << ',' << fmt(r.se_return) << ',' << fmt(r.mean_kbits) << ','
     << fmt(r.return_per_kbit) << ',' << fmt(r.success_rate) << ',' << fmt(r.collision_rate)
     << '\n';
}

// ---- trainer -------------------------------------------------------------------

namespace {
const std::vector<int> kBudgetMenu{64, 96, 128, 160, 192};
}

Trainer::Trainer(const Config& cfg, uint64_t seed)
    : cfg_(cfg), seed_(seed), rng_(mix_seed(seed, 0x7124)), replay_(cfg.geti("trainer.buffer_capacity")) {
  env_cfg_.arena = cfg.getd("env.arena");
  env_cfg_.horizon = cfg.geti("env.horizon");
  env_cfg_.num_obstacles = cfg.geti("env.obstacles");
  env_cfg_.sectors = cfg.geti("env.sectors");
  env_cfg_.sensor_range = cfg.getd("env.sensor_range");

  enc_cfg_.sectors = env_cfg_.sectors;
  enc_cfg_.embed_dim = cfg.geti("encoder.embed_dim");
  enc_cfg_.ctx_dim = cfg.geti("encoder.ctx_dim");
  enc_cfg_.hidden = cfg.geti("encoder.hidden");
  enc_cfg_.td_hidden = cfg.geti("encoder.td_hidden");
  enc_cfg_.beta_value = cfg.getd("encoder.beta_value");
  enc_cfg_.return_scale = cfg.getd("encoder.return_scale");
  enc_cfg_.token_bits = cfg.geti("channel.bits");

  wm_cfg_.h_dim = cfg.geti("worldmodel.h_dim");
  wm_cfg_.u_dim = cfg.geti("worldmodel.u_dim");
  wm_cfg_.hidden = cfg.geti("worldmodel.hidden");
  wm_cfg_.free_bits = cfg.getd("worldmodel.free_bits");
  wm_cfg_.seq_len = cfg.geti("worldmodel.seq_len");
  wm_cfg_.token_count = enc_cfg_.num_tokens();
  wm_cfg_.embed_dim = enc_cfg_.embed_dim;

  ctrl_cfg_.h_dim = wm_cfg_.h_dim;
  ctrl_cfg_.u_dim = wm_cfg_.u_dim;
  ctrl_cfg_.hidden = cfg.geti("control.hidden");
  ctrl_cfg_.gamma = cfg.getd("control.gamma");
  ctrl_cfg_.lambda = cfg.getd("control.lambda");
  ctrl_cfg_.entropy_weight = cfg.getd("control.entropy_weight");

  sel_cfg_.token_count = enc_cfg_.num_tokens();
  sel_cfg_.embed_dim = enc_cfg_.embed_dim;
  sel_cfg_.hidden = cfg.geti("selector.hidden");
  sel_cfg_.bits_per_token = cfg.geti("channel.bits");

  const int budget = cfg.geti("trainer.budget");
  SEMTWIN_CHECK(std::find(kBudgetMenu.begin(), kBudgetMenu.end(), budget) != kBudgetMenu.end(),
                "trainer.budget must be one of 64,96,128,160,192");

  encoder_ = std::make_unique<Encoder>(enc_cfg_, mix_seed(seed, 1));
  wm_ = std::make_unique<WorldModel>(wm_cfg_, mix_seed(seed, 2));
  actor_ = std::make_unique<Actor>(ctrl_cfg_, mix_seed(seed, 3));
  critic_ = std::make_unique<Critic>(ctrl_cfg_, mix_seed(seed, 4));
  gate_ = std::make_unique<Gate>(sel_cfg_, mix_seed(seed, 5));

  nn::AdamConfig ac;
  ac.lr = cfg.getd("trainer.lr");
  ac.clip_norm = cfg.getd("trainer.clip_norm");
  enc_opt_ = std::make_unique<nn::Adam>(encoder_->params().params(), ac);
  wm_opt_ = std::make_unique<nn::Adam>(wm_->params().params(), ac);
  actor_opt_ = std::make_unique<nn::Adam>(actor_->params().params(), ac);
  critic_opt_ = std::make_unique<nn::Adam>(critic_->params().params(), ac);
  gate_opt_ = std::make_unique<nn::Adam>(gate_->params().params(), ac);

  price_.ema = cfg.getd("trainer.price_ema");
  trace_stages_ = cfg.getb("trainer.trace_stages");
  train_channel_ = std::make_unique<ErasureChannel>(
      ChannelConfig{cfg.getd("channel.per"), mix_seed(seed, 0xC4A)});
  loop_.env = NavEnv(env_cfg_);
}

void Trainer::trace(const char* stage) {
  if (trace_stages_) stage_trace_.emplace_back(stage);
}

// ---- stage 1 -------------------------------------------------------------------

PretrainResult Trainer::pretrain_stage1() {
  const int samples = cfg_.geti("encoder.pretrain_samples");
  const double gamma = ctrl_cfg_.gamma;

  // random-policy warm-up rollouts
  std::vector<Episode> warmup;
  NavEnv env(env_cfg_);
  int collected = 0, ep_idx = 0;
  while (collected < samples) {
    Episode ep;
    env.reset(mix_seed(seed_, 0x9A3E, ep_idx++));
    StepRecord first;
    first.obs = env.observe();
    first.reward = 0.0;
    first.action_norm = {rng_.uniform(-1.0, 1.0), rng_.uniform(-1.0, 1.0),
                         rng_.uniform(-1.0, 1.0)};
    ep.steps.push_back(first);
    while (true) {
      auto out = env.step(to_env_action(ep.steps.back().action_norm, env_cfg_));
      StepRecord rec;
      rec.obs = env.observe();
      rec.reward = out.reward;
      rec.success = out.success;
      rec.collision = out.collision;
      rec.truncated = out.truncated;
      rec.action_norm = {rng_.uniform(-1.0, 1.0), rng_.uniform(-1.0, 1.0),
                         rng_.uniform(-1.0, 1.0)};
      ep.steps.push_back(rec);
      ++collected;
      if (out.success || out.collision || out.truncated) break;
    }
    warmup.push_back(std::move(ep));
  }

  std::vector<Transition> dataset;
  for (const auto& ep : warmup)
    for (size_t t = 0; t + 1 < ep.steps.size(); ++t) {
      Transition tr;
      tr.obs = ep.steps[t].obs;
      tr.action = ep.steps[t].action_norm;
      tr.next_obs = ep.steps[t + 1].obs;
      tr.ret = ReplayBuffer::return_to_go(ep, static_cast<int>(t), gamma);
      dataset.push_back(std::move(tr));
    }

  PretrainConfig pc;
  pc.steps = cfg_.geti("encoder.pretrain_steps");
  pc.batch = cfg_.geti("encoder.pretrain_batch");
  pc.lr = cfg_.getd("encoder.pretrain_lr");
  pc.seed = mix_seed(seed_, 0x12E);
  auto result = encoder_->pretrain(dataset, pc);

  // codebook on warm-up embeddings, frozen afterwards
  std::vector<std::vector<double>> embeddings;
  const int want = cfg_.geti("channel.kmeans_samples");
  for (const auto& ep : warmup) {
    for (const auto& rec : ep.steps) {
      for (auto& tok : encoder_->encode(rec.obs)) embeddings.push_back(std::move(tok.embedding));
      if (static_cast<int>(embeddings.size()) >= want) break;
    }
    if (static_cast<int>(embeddings.size()) >= want) break;
  }
  codebook_ = std::make_unique<Codebook>(Codebook::fit_kmeans(
      embeddings, cfg_.geti("channel.bits"), cfg_.geti("channel.kmeans_iters"),
      mix_seed(seed_, 0x6B)));
  return result;
}

// ---- closed loop ---------------------------------------------------------------

void Trainer::start_episode(LoopState& ls) {
  ls.env.reset(ls.next_episode_seed);
  ls.belief = wm_->initial(1);
  ls.pending_action = {0.0, 0.0, 0.0};
  ls.episode = Episode{};
  ls.episode_open = true;
}

void Trainer::finish_episode(LoopState& ls) {
  const double gamma = ctrl_cfg_.gamma;
  double r = 0.0, c = 0.0, g = 1.0;
  for (const auto& rec : ls.episode.steps) {
    r += g * rec.reward;
    c += g * rec.bits;
    g *= gamma;
  }
  ls.episode.discounted_return = r;
  ls.episode.discounted_bits = c;
  const auto& last = ls.episode.steps.back();
  ls.episode.success = last.success;
  ls.episode.collision = last.collision;
  ls.episode_open = false;
}

RssmTwin::Snapshot Trainer::make_snapshot(const BeliefState& prev_belief,
                                          const std::vector<double>& prev_action,
                                          const std::vector<SemanticToken>& rx_view) const {
  RssmTwin::Snapshot snap;
  snap.prev = snapshot(prev_belief);
  snap.prev_action = prev_action;
  snap.candidates = rx_view;
  return snap;
}

std::vector<int> Trainer::select_for_slot(const std::vector<SemanticToken>& raw_tokens,
                                          const std::vector<SemanticToken>& rx_view,
                                          const BeliefState& belief,
                                          const std::vector<double>& prev_action,
                                          bool training_mode, int budget,
                                          SelectStrategy strategy, Rng& rng,
                                          SelectionOutcome* outcome) {
  const int bits = sel_cfg_.bits_per_token;
  const int N = sel_cfg_.token_count;
  auto probs = gate_->probabilities(raw_tokens);

  auto run_prune = [&](PruneRule rule, int rollouts) {
    auto proposal = propose(probs, budget, bits);
    RssmTwin twin(*wm_, *actor_, ctrl_cfg_.gamma);
    CivParams p;
    p.rollouts = rollouts;
    p.horizon = cfg_.geti("control.imagine_horizon");
    p.eps_rho = cfg_.getd("valuation.eps_rho");
    p.seed = rng.engine()();
    auto out = counterfactual_select(twin, make_snapshot(belief, prev_action, rx_view),
                                     proposal, price_.alpha, p, bits, N, rule);
    for (double gamma_val : out.final_gammas)
      if (gamma_val <= 0.0) ++nonpositive_retained_;
    if (outcome) *outcome = out;
    return out.selected;
  };

  switch (strategy) {
    case SelectStrategy::Civ: {
      const double frac = cfg_.getd("selector.pruner_fraction");
      const bool pruner_phase =
          training_mode && (iteration_ < frac * cfg_.geti("trainer.iterations") ||
                            cfg_.gets("selector.execution_mode") == "pruner");
      if (pruner_phase) return run_prune(PruneRule::PricedIterative,
                                         cfg_.geti("selector.collect_rollouts"));
      return select_distilled(probs, budget, bits);
    }
    case SelectStrategy::Random:
      return select_random(N, budget, bits, rng);
    case SelectStrategy::FixedTopK:
      return select_topk_scores(probs, budget, bits);
    case SelectStrategy::MyopicVoi:
    case SelectStrategy::SaliencyTopK:
    case SelectStrategy::ConfidenceTopK: {
      NeuralTokenScorer scorer;
      scorer.wm = wm_.get();
      scorer.critic = critic_.get();
      scorer.prev = snapshot(belief);
      scorer.prev_action = prev_action;
      scorer.candidates = &rx_view;
      std::vector<int> context(N);
      std::iota(context.begin(), context.end(), 0);
      std::vector<double> scores(N, 0.0);
      if (strategy == SelectStrategy::SaliencyTopK) {
        scores = scorer.saliency_all(context);
      } else {
        for (int n = 0; n < N; ++n)
          scores[n] = strategy == SelectStrategy::MyopicVoi ? scorer.myopic_voi(context, n)
                                                            : scorer.confidence(context, n);
      }
      return select_topk_scores(scores, budget, bits);
    }
    case SelectStrategy::CivNoPerBit:
      return run_prune(PruneRule::RawCivIterative, cfg_.geti("selector.collect_rollouts"));
    case SelectStrategy::CivNoPrune:
      return run_prune(PruneRule::PricedSinglePass, cfg_.geti("selector.collect_rollouts"));
  }
  throw ContractViolation("unhandled selection strategy");
}

bool Trainer::run_slot(LoopState& ls, bool training_mode, int budget, ErasureChannel& channel,
                       SelectStrategy strategy, Rng& rng, std::ostream* trace_os) {
  if (!ls.episode_open) start_episode(ls);

  double reward = 0.0;
  StepOutcome out{};
  if (!ls.episode.steps.empty()) {
    out = ls.env.step(to_env_action(ls.pending_action, env_cfg_));
    reward = out.reward;
  }
  ++env_steps_;

  StepRecord rec;
  rec.obs = ls.env.observe();
  rec.reward = reward;
  rec.success = out.success;
  rec.collision = out.collision;
  rec.truncated = out.truncated;

  if (out.success || out.collision || out.truncated) {
    rec.action_norm = {0.0, 0.0, 0.0};
    ls.episode.steps.push_back(std::move(rec));
    finish_episode(ls);
    return false;
  }

  // encode and quantize
  auto raw_tokens = encoder_->encode(rec.obs);
  auto quantized = raw_tokens;
  auto rx_view = raw_tokens;
  for (int n = 0; n < static_cast<int>(raw_tokens.size()); ++n) {
    quantized[n].code = codebook_->quantize(raw_tokens[n].embedding);
    rx_view[n].code = quantized[n].code;
    rx_view[n].embedding = codebook_->centroid_vec(quantized[n].code);
  }

  // select, assemble, transmit
  auto selected = select_for_slot(raw_tokens, rx_view, ls.belief, ls.pending_action,
                                  training_mode, budget, strategy, rng, nullptr);
  auto msg = assemble_message(quantized, selected, budget);
  if (msg.total_bits > budget) ++budget_violations_;  // assemble would already have thrown
  auto rx = channel.transmit(msg, *codebook_);

  // belief update then act
  auto row = token_input_row(rx, wm_cfg_.token_count, wm_cfg_.embed_dim);
  Tensor prev_action = Tensor::from({1, ctrl_cfg_.action_dim}, ls.pending_action);
  BeliefState next_belief = wm_->posterior_update(
      ls.belief, prev_action, Tensor::from({1, wm_cfg_.token_input_dim()}, row), rng,
      !training_mode);
  auto act_out = actor_->act(next_belief.h, next_belief.u, rng, !training_mode);

  rec.action_norm = act_out.action.values();
  rec.sent_indices = msg.indices;
  for (int code : msg.codes) rec.sent_codes.push_back(static_cast<uint16_t>(code));
  rec.erased = rx.erased;
  rec.bits = msg.total_bits;

  if (trace_os) {
    *trace_os << ls.episode.steps.size() << ',' << strategy_name(strategy) << ',' << budget
              << ',' << msg.total_bits << ',';
    for (size_t i = 0; i < msg.indices.size(); ++i)
      *trace_os << (i ? ";" : "") << msg.indices[i];
    *trace_os << '\n';
  }

  ls.episode.steps.push_back(std::move(rec));
  ls.belief = next_belief;
  ls.pending_action = act_out.action.values();

  mean_bits_ema_ = mean_bits_init_ ? 0.99 * mean_bits_ema_ + 0.01 * msg.total_bits
                                   : (mean_bits_init_ = true, static_cast<double>(msg.total_bits));
  return true;
}

void Trainer::collect(int slots) {
  for (int s = 0; s < slots; ++s) {
    if (!loop_.episode_open)
      loop_.next_episode_seed = mix_seed(seed_, 0xE115, episode_counter_++);
    const bool alive = run_slot(loop_, true, cfg_.geti("trainer.budget"), *train_channel_,
                                SelectStrategy::Civ, rng_, nullptr);
    if (!alive) {
      const auto& ep = loop_.episode;
      iter_episode_stats_.emplace_back(ep.discounted_return, ep.discounted_bits);
      iter_success_.push_back(ep.success ? 1.0 : 0.0);
      iter_collision_.push_back(ep.collision ? 1.0 : 0.0);
      double mean_bits = 0.0;
      for (const auto& r : ep.steps) mean_bits += r.bits;
      iter_bits_.push_back(mean_bits / ep.steps.size());
      replay_.add(loop_.episode);
    }
  }
}

// ---- batch assembly ---------------------------------------------------------------

SequenceBatch Trainer::build_sequence_batch(
    const std::vector<ReplayBuffer::Window>& windows) const {
  const int B = static_cast<int>(windows.size());
  const int L = wm_cfg_.seq_len;
  const int N = wm_cfg_.token_count, E = wm_cfg_.embed_dim;
  SequenceBatch batch;
  batch.batch = B;
  batch.length = L;
  for (int t = 0; t < L; ++t) {
    std::vector<double> toks, recon, mask, acts, rews;
    for (const auto& w : windows) {
      const auto& rec = w.ep->steps[w.start + t];
      ReceivedTokens rx;
      rx.indices = rec.sent_indices;
      rx.erased = rec.erased;
      for (size_t i = 0; i < rec.sent_indices.size(); ++i)
        rx.embeddings.push_back(rec.erased[i] ? std::vector<double>{}
                                              : codebook_->centroid_vec(rec.sent_codes[i]));
      auto row = token_input_row(rx, N, E);
      toks.insert(toks.end(), row.begin(), row.end());
      std::vector<double> mrow;
      auto target = recon_target_row(rx, N, E, &mrow);
      recon.insert(recon.end(), target.begin(), target.end());
      mask.insert(mask.end(), mrow.begin(), mrow.end());

      const int idx = w.start + t;
      if (idx == 0) {
        acts.insert(acts.end(), {0.0, 0.0, 0.0});
      } else {
        const auto& prev = w.ep->steps[idx - 1].action_norm;
        acts.insert(acts.end(), prev.begin(), prev.end());
      }
      rews.push_back(rec.reward);
    }
    batch.token_inputs.push_back(Tensor::from({B, N * (E + 1)}, toks));
    batch.recon_targets.push_back(Tensor::from({B, N * E}, recon));
    batch.recon_masks.push_back(Tensor::from({B, N * E}, mask));
    batch.actions.push_back(Tensor::from({B, ctrl_cfg_.action_dim}, acts));
    batch.rewards.push_back(rews);
  }
  return batch;
}

namespace {

BeliefSnapshot belief_row(const BeliefState& b, int row) {
  auto take = [&](const Tensor& t) {
    const int c = t.cols();
    return std::vector<double>(t.values().begin() + static_cast<size_t>(row) * c,
                               t.values().begin() + static_cast<size_t>(row + 1) * c);
  };
  BeliefSnapshot s;
  s.batch = 1;
  s.h_dim = b.h.cols();
  s.u_dim = b.u.cols();
  s.h = take(b.h);
  s.u = take(b.u);
  s.post_mean = take(b.post_mean);
  s.post_std = take(b.post_std);
  s.prior_mean = take(b.prior_mean);
  s.prior_std = take(b.prior_std);
  return s;
}

BeliefState stack_beliefs(const WorldModel& wm, const std::vector<BeliefSnapshot>& rows) {
  const int B = static_cast<int>(rows.size());
  const int hd = rows[0].h_dim, ud = rows[0].u_dim;
  std::vector<double> h, u, pm, ps, qm, qs;
  for (const auto& r : rows) {
    h.insert(h.end(), r.h.begin(), r.h.end());
    u.insert(u.end(), r.u.begin(), r.u.end());
    pm.insert(pm.end(), r.post_mean.begin(), r.post_mean.end());
    ps.insert(ps.end(), r.post_std.begin(), r.post_std.end());
    qm.insert(qm.end(), r.prior_mean.begin(), r.prior_mean.end());
    qs.insert(qs.end(), r.prior_std.begin(), r.prior_std.end());
  }
  (void)wm;
  BeliefState b;
  b.h = Tensor::from({B, hd}, h);
  b.u = Tensor::from({B, ud}, u);
  b.post_mean = Tensor::from({B, ud}, pm);
  b.post_std = Tensor::from({B, ud}, ps);
  b.prior_mean = Tensor::from({B, ud}, qm);
  b.prior_std = Tensor::from({B, ud}, qs);
  return b;
}

}  // namespace

// ---- stage 2 iteration --------------------------------------------------------------

MetricsRow Trainer::train_iteration() {
  MetricsRow row;
  row.iteration = iteration_;
  iter_episode_stats_.clear();
  iter_success_.clear();
  iter_collision_.clear();
  iter_bits_.clear();
  const long sent_before = train_channel_->sent_count();
  const long erased_before = train_channel_->erased_count();

  trace("collect");
  collect(cfg_.geti("trainer.steps_per_iteration"));

  trace("sample");
  SEMTWIN_CHECK(replay_.can_sample(wm_cfg_.seq_len),
                "replay buffer holds no length-L sequence yet");
  const int B = cfg_.geti("trainer.batch");
  auto windows = replay_.sample_windows(B, wm_cfg_.seq_len, rng_);
  auto batch = build_sequence_batch(windows);

  // snapshot for non-finite rollback
  auto snap_enc = encoder_->params().snapshot_values();
  auto snap_wm = wm_->params().snapshot_values();
  auto snap_actor = actor_->params().snapshot_values();
  auto snap_critic = critic_->params().snapshot_values();
  auto snap_gate = gate_->params().snapshot_values();

  bool aborted = false;
  auto guard = [&](double v) {
    if (!std::isfinite(v)) aborted = true;
    return v;
  };

  // encoder update on replayed transitions with refreshed return targets
  trace("encoder_update");
  {
    std::vector<Observation> obs, next_obs;
    std::vector<double> acts;
    std::vector<double> rets;
    for (int k = 0; k < B; ++k) {
      const auto& w = windows[k % windows.size()];
      const int t = w.start + rng_.uniform_int(wm_cfg_.seq_len - 1);
      obs.push_back(w.ep->steps[t].obs);
      next_obs.push_back(w.ep->steps[t + 1].obs);
      const auto& a = w.ep->steps[t].action_norm;
      acts.insert(acts.end(), a.begin(), a.end());
      rets.push_back(ReplayBuffer::return_to_go(*w.ep, t, ctrl_cfg_.gamma));
    }
    encoder_->params().zero_grad();
    ad::Tape tape;
    Tensor z = encoder_->encode_batch(obs);
    Tensor zn = encoder_->encode_batch(next_obs);
    Tensor a = Tensor::from({B, ctrl_cfg_.action_dim}, acts);
    Tensor loss = encoder_->loss(z, a, zn, rets);
    row.encoder_loss = guard(loss.item());
    if (!aborted) {
      tape.backward(loss);
      enc_opt_->step();
    }
  }

  // world model update
  trace("worldmodel_update");
  if (!aborted) {
    wm_->params().zero_grad();
    ad::Tape tape;
    auto parts = wm_->elbo_loss(batch, rng_, false);
    row.elbo = guard(parts.total.item());
    row.recon_nll = parts.recon_nll;
    row.reward_nll = parts.reward_nll;
    row.kl = parts.kl;
    if (!aborted) {
      tape.backward(parts.total);
      wm_opt_->step();
    }
  }

  // counterfactual selector targets, then gate distillation
  trace("selector_targets");
  std::vector<std::pair<std::vector<SemanticToken>, std::vector<uint8_t>>> distill;
  if (!aborted) {
    const int slots = cfg_.geti("selector.distill_slots");
    RssmTwin twin(*wm_, *actor_, ctrl_cfg_.gamma);
    for (int s = 0; s < slots; ++s) {
      const auto& w = windows[rng_.uniform_int(static_cast<int>(windows.size()))];
      const int j = 1 + rng_.uniform_int(wm_cfg_.seq_len - 1);
      // rebuild the belief prefix for this window under current parameters
      BeliefState b = wm_->initial(1);
      for (int t = 0; t < j; ++t) {
        const auto& rec = w.ep->steps[w.start + t];
        ReceivedTokens rx;
        rx.indices = rec.sent_indices;
        rx.erased = rec.erased;
        for (size_t i = 0; i < rec.sent_indices.size(); ++i)
          rx.embeddings.push_back(rec.erased[i] ? std::vector<double>{}
                                                : codebook_->centroid_vec(rec.sent_codes[i]));
        auto irow = token_input_row(rx, wm_cfg_.token_count, wm_cfg_.embed_dim);
        std::vector<double> pa = t == 0 ? std::vector<double>{0.0, 0.0, 0.0}
                                        : w.ep->steps[w.start + t - 1].action_norm;
        b = wm_->posterior_update(b, Tensor::from({1, 3}, pa),
                                  Tensor::from({1, wm_cfg_.token_input_dim()}, irow), rng_,
                                  true);
      }
      const auto& rec = w.ep->steps[w.start + j];
      auto raw = encoder_->encode(rec.obs);
      auto rx_view = raw;
      for (auto& tok : rx_view) {
        tok.code = codebook_->quantize(tok.embedding);
        tok.embedding = codebook_->centroid_vec(tok.code);
      }
      auto probs = gate_->probabilities(raw);
      auto proposal = propose(probs, cfg_.geti("trainer.budget"), sel_cfg_.bits_per_token);
      CivParams p;
      p.rollouts = cfg_.geti("selector.distill_rollouts");
      p.horizon = cfg_.geti("control.imagine_horizon");
      p.seed = rng_.engine()();
      RssmTwin::Snapshot snap;
      snap.prev = belief_row(b, 0);
      snap.prev_action = w.ep->steps[w.start + j - 1].action_norm;
      snap.candidates = rx_view;
      auto out = reverse_prune(twin, snap, proposal, price_.alpha, p, sel_cfg_.bits_per_token,
                               sel_cfg_.token_count);
      for (double g : out.final_gammas)
        if (g <= 0.0) ++nonpositive_retained_;
      distill.emplace_back(std::move(raw), out.mask);
    }
  }
  trace("selector_update");
  if (!aborted && !distill.empty()) {
    gate_->params().zero_grad();
    ad::Tape tape;
    Tensor total = Tensor::scalar(0.0);
    for (auto& [tokens, mask] : distill) {
      std::vector<double> flat;
      for (const auto& t : tokens) flat.insert(flat.end(), t.embedding.begin(), t.embedding.end());
      Tensor probs =
          gate_->probs(Tensor::from({sel_cfg_.token_count, sel_cfg_.embed_dim}, flat));
      total = ad::add(total, selector_loss(ad::flatten(probs), mask));
    }
    total = ad::mul_scalar(total, 1.0 / distill.size());
    row.selector_loss = guard(total.item());
    if (!aborted) {
      tape.backward(total);
      gate_opt_->step();
    }
  }

  // imagination-based actor-critic
  trace("imagine");
  BeliefState starts;
  if (!aborted) {
    std::vector<BeliefSnapshot> rows;
    Rng pass_rng(mix_seed(seed_, 0x1417, iteration_));
    BeliefState b = wm_->initial(batch.batch);
    std::vector<BeliefState> states;
    for (int t = 0; t < batch.length; ++t) {
      b = wm_->posterior_update(b, batch.actions[t], batch.token_inputs[t], pass_rng, false);
      states.push_back(b);
    }
    const int want = cfg_.geti("control.imagine_starts");
    for (int k = 0; k < want; ++k) {
      const int t = rng_.uniform_int(batch.length);
      const int r = rng_.uniform_int(batch.batch);
      rows.push_back(belief_row(states[t], r));
    }
    starts = stack_beliefs(*wm_, rows);
  }

  const double price = price_.alpha * mean_bits_ema_;
  const int H = cfg_.geti("control.imagine_horizon");
  LambdaParams lp{ctrl_cfg_.lambda, ctrl_cfg_.gamma};

  trace("critic_update");
  if (!aborted) {
    Rng im_rng(mix_seed(seed_, 0xC217, iteration_));
    auto traj = wm_->imagine(starts, actor_->as_policy(), H, price, im_rng, false);
    auto value = [this](const Tensor& h, const Tensor& u) { return critic_->value(h, u); };
    auto targets = lambda_returns(traj, value, lp);
    critic_->params().zero_grad();
    ad::Tape tape;
    auto loss = critic_loss(traj, *critic_, targets);
    row.critic_loss = guard(loss.item());
    if (!aborted) {
      tape.backward(loss);
      critic_opt_->step();
    }
  }

  trace("actor_update");
  if (!aborted) {
    Rng im_rng(mix_seed(seed_, 0xA217, iteration_));
    actor_->params().zero_grad();
    ad::Tape tape;
    auto traj = wm_->imagine(starts, actor_->as_policy(), H, price, im_rng, false);
    Tensor loss = cfg_.getb("control.score_function")
                      ? reinforce_actor_loss(traj, *actor_, *critic_, lp,
                                             ctrl_cfg_.entropy_weight)
                      : actor_loss(traj, *actor_, *critic_, lp, ctrl_cfg_.entropy_weight);
    row.actor_loss = guard(loss.item());
    if (!aborted) {
      tape.backward(loss);
      actor_opt_->step();
    }
  }

  trace("price_update");
  if (!aborted && !iter_episode_stats_.empty()) {
    double r = 0.0, c = 0.0;
    for (const auto& [er, ec] : iter_episode_stats_) {
      r += er;
      c += ec;
    }
    price_.update(r / iter_episode_stats_.size(), c / iter_episode_stats_.size());
  }

  if (aborted) {
    encoder_->params().restore_values(snap_enc);
    wm_->params().restore_values(snap_wm);
    actor_->params().restore_values(snap_actor);
    critic_->params().restore_values(snap_critic);
    gate_->params().restore_values(snap_gate);
    row.aborted = 1;
  }

  trace("metrics");
  row.env_steps = env_steps_;
  row.alpha = price_.alpha;
  row.r_hat = price_.r_hat;
  row.c_hat = price_.c_hat;
  row.return_per_kbit = price_.c_hat > 1e-9 ? price_.r_hat / (price_.c_hat / 1000.0) : 0.0;
  auto mean_of = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };
  row.success_rate = mean_of(iter_success_);
  row.collision_rate = mean_of(iter_collision_);
  row.mean_bits = mean_of(iter_bits_);
  row.sent_tokens = train_channel_->sent_count() - sent_before;
  row.erased_tokens = train_channel_->erased_count() - erased_before;

  ++iteration_;
  return row;
}

void Trainer::train(std::ostream* metrics) {
  pretrain_stage1();
  // warm start: the first update needs at least one length-L sequence
  while (!replay_.can_sample(wm_cfg_.seq_len)) collect(cfg_.geti("trainer.steps_per_iteration"));
  if (metrics) write_metrics_header(*metrics);
  const int iterations = cfg_.geti("trainer.iterations");
  for (int i = 0; i < iterations; ++i) {
    auto row = train_iteration();
    if (metrics) write_metrics_row(*metrics, row);
  }
}

// ---- evaluation ----------------------------------------------------------------------

std::vector<EvalRow> Trainer::evaluate(const EvalSpec& spec) {
  SEMTWIN_CHECK(codebook_ != nullptr, "evaluate requires a fitted codebook");
  std::vector<EvalRow> rows;
  for (int budget : spec.budgets) {
    SEMTWIN_CHECK(
        std::find(kBudgetMenu.begin(), kBudgetMenu.end(), budget) != kBudgetMenu.end(),
        "evaluation budget outside the menu");
    for (double per : spec.pers) {
      for (auto strategy : spec.strategies) {
        EvalRow row;
        row.budget = budget;
        row.per = per;
        row.strategy = strategy_name(strategy);
        row.episodes = spec.episodes;
        std::vector<double> returns, kbits;
        double succ = 0.0, coll = 0.0;
        double sum_r = 0.0, sum_c = 0.0;
        for (int ep = 0; ep < spec.episodes; ++ep) {
          LoopState ls;
          ls.env = NavEnv(env_cfg_);
          ls.next_episode_seed = mix_seed(spec.seed, 0xEA1, ep);
          ErasureChannel channel({per, mix_seed(spec.seed, 0xC4, ep)});
          Rng ep_rng(mix_seed(spec.seed, 0x51E, ep));
          while (run_slot(ls, false, budget, channel, strategy, ep_rng, spec.selection_trace)) {
          }
          const auto& e = ls.episode;
          returns.push_back(e.discounted_return);
          kbits.push_back(e.discounted_bits / 1000.0);
          sum_r += e.discounted_return;
          sum_c += e.discounted_bits;
          succ += e.success ? 1.0 : 0.0;
          coll += e.collision ? 1.0 : 0.0;
        }
        const double n = spec.episodes;
        row.mean_return = sum_r / n;
        double var = 0.0;
        for (double r : returns) var += (r - row.mean_return) * (r - row.mean_return);
        row.se_return = n > 1 ? std::sqrt(var / (n - 1) / n) : 0.0;
        row.mean_kbits = sum_c / 1000.0 / n;
        row.return_per_kbit = sum_c > 1e-9 ? sum_r / (sum_c / 1000.0) : 0.0;
        row.success_rate = succ / n;
        row.collision_rate = coll / n;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

// ---- checkpoints ---------------------------------------------------------------------

void Trainer::save_checkpoints(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nn::save_checkpoint(dir + "/encoder.ckpt", {&encoder_->params()});
  nn::save_checkpoint(dir + "/worldmodel.ckpt", {&wm_->params()});
  nn::save_checkpoint(dir + "/policy.ckpt", {&actor_->params(), &critic_->params()});
  nn::save_checkpoint(dir + "/gate.ckpt", {&gate_->params()});
  SEMTWIN_CHECK(codebook_ != nullptr, "no codebook to save");
  codebook_->save(dir + "/codebook.ckpt");
  std::ofstream price(dir + "/price.ckpt");
  price << "semtwin-price 1\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %d\n", price_.alpha, price_.r_hat,
                price_.c_hat, price_.ema, price_.initialized ? 1 : 0);
  price << buf;
  std::ofstream layout(dir + "/token_layout.txt");
  encoder_->write_token_layout(layout);
}

void Trainer::load_checkpoints(const std::string& dir) {
  nn::load_checkpoint(dir + "/encoder.ckpt", {&encoder_->params()});
  nn::load_checkpoint(dir + "/worldmodel.ckpt", {&wm_->params()});
  nn::load_checkpoint(dir + "/policy.ckpt", {&actor_->params(), &critic_->params()});
  nn::load_checkpoint(dir + "/gate.ckpt", {&gate_->params()});
  codebook_ = std::make_unique<Codebook>(Codebook::load(dir + "/codebook.ckpt"));
  std::ifstream price(dir + "/price.ckpt");
  SEMTWIN_CHECK(price.good(), "cannot open price checkpoint");
  std::string magic;
  int version = 0, init = 0;
  price >> magic >> version >> price_.alpha >> price_.r_hat >> price_.c_hat >> price_.ema >>
      init;
  SEMTWIN_CHECK(magic == "semtwin-price" && version == 1, "bad price checkpoint header");
  price_.initialized = init != 0;
}

}  // namespace semtwin
