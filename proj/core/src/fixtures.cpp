#include "semtwin/fixtures.hpp"

#include <cmath>

namespace semtwin::fixtures {

std::vector<GeneratedSequence> linear_sequences(const LinearSequenceConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, 0xF1D));
  const int D = cfg.latent_dim, N = cfg.token_count, E = cfg.embed_dim, A = cfg.action_dim;

  // shared system matrices
  std::vector<double> trans(D * D, 0.0), drive(D * A), readout(N * E * D), reward_w(D);
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j)
      trans[i * D + j] = (i == j ? 0.85 : 0.0) + 0.1 * rng.normal() / std::sqrt(D);
  for (auto& x : drive) x = 0.2 * rng.normal();
  for (auto& x : readout) x = cfg.obs_scale * rng.normal() / std::sqrt(D);
  for (auto& x : reward_w) x = 0.3 * rng.normal();

  std::vector<GeneratedSequence> out;
  out.reserve(cfg.num_sequences);
  for (int q = 0; q < cfg.num_sequences; ++q) {
    GeneratedSequence seq;
    std::vector<double> s(D);
    for (double& x : s) x = cfg.start_scale * rng.normal();
    std::vector<double> action(A, 0.0);

    for (int t = 0; t < cfg.length; ++t) {
      if (t > 0) {
        std::vector<double> next(D, 0.0);
        for (int i = 0; i < D; ++i) {
          for (int j = 0; j < D; ++j) next[i] += trans[i * D + j] * s[j];
          for (int j = 0; j < A; ++j) next[i] += drive[i * A + j] * action[j];
          next[i] += cfg.process_noise * rng.normal();
        }
        s = next;
      }
      seq.action_rows.push_back(action);

      std::vector<double> tok_row(static_cast<size_t>(N) * (E + 1), 0.0);
      std::vector<double> recon_row(static_cast<size_t>(N) * E, 0.0);
      for (int n = 0; n < N; ++n) {
        for (int e = 0; e < E; ++e) {
          double v = 0.0;
          for (int j = 0; j < D; ++j) v += readout[(n * E + e) * D + j] * s[j];
          v += cfg.obs_noise * rng.normal();
          tok_row[static_cast<size_t>(n) * (E + 1) + e] = v;
          recon_row[static_cast<size_t>(n) * E + e] = v;
        }
        tok_row[static_cast<size_t>(n) * (E + 1) + E] = 1.0;
      }
      seq.token_rows.push_back(std::move(tok_row));
      seq.recon_rows.push_back(std::move(recon_row));
      seq.mask_rows.emplace_back(static_cast<size_t>(N) * E, 1.0);

      double r = 0.0;
      for (int j = 0; j < D; ++j) r += reward_w[j] * s[j];
      seq.rewards.push_back(r);

      for (double& x : action) x = rng.uniform(-1.0, 1.0);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

SequenceBatch assemble_batch(const std::vector<GeneratedSequence>& seqs,
                             const std::vector<int>& which, int length) {
  SEMTWIN_CHECK(!which.empty(), "assemble_batch: empty selection");
  SequenceBatch b;
  b.batch = static_cast<int>(which.size());
  b.length = length;
  const auto& first = seqs[which[0]];
  const int tok_dim = static_cast<int>(first.token_rows[0].size());
  const int recon_dim = static_cast<int>(first.recon_rows[0].size());
  const int act_dim = static_cast<int>(first.action_rows[0].size());
  for (int t = 0; t < length; ++t) {
    std::vector<double> toks, recon, mask, acts, rews;
    for (int idx : which) {
      const auto& s = seqs[idx];
      SEMTWIN_CHECK(t < static_cast<int>(s.token_rows.size()), "sequence shorter than length");
      toks.insert(toks.end(), s.token_rows[t].begin(), s.token_rows[t].end());
      recon.insert(recon.end(), s.recon_rows[t].begin(), s.recon_rows[t].end());
      mask.insert(mask.end(), s.mask_rows[t].begin(), s.mask_rows[t].end());
      acts.insert(acts.end(), s.action_rows[t].begin(), s.action_rows[t].end());
      rews.push_back(s.rewards[t]);
    }
    b.token_inputs.push_back(ad::Tensor::from({b.batch, tok_dim}, toks));
    b.recon_targets.push_back(ad::Tensor::from({b.batch, recon_dim}, recon));
    b.recon_masks.push_back(ad::Tensor::from({b.batch, recon_dim}, mask));
    b.actions.push_back(ad::Tensor::from({b.batch, act_dim}, acts));
    b.rewards.push_back(rews);
  }
  return b;
}

// ---- tabular fixtures ---------------------------------------------------------

namespace {

TokenModel uniform_noise_token(int states) {
  TokenModel t;
  t.alphabet = 2;
  t.emission.assign(static_cast<size_t>(states) * 2, 0.5);
  return t;
}

// Deterministic binary emission from a per-state bit.
TokenModel bit_token(const std::vector<int>& bit) {
  TokenModel t;
  t.alphabet = 2;
  t.emission.assign(bit.size() * 2, 0.0);
  for (size_t s = 0; s < bit.size(); ++s) t.emission[s * 2 + bit[s]] = 1.0;
  return t;
}

}  // namespace

TabularFixture corridor_fixture(int delay, uint64_t seed) {
  SEMTWIN_CHECK(delay >= 0 && delay <= 3, "corridor delay must be in [0,3]");
  (void)seed;
  TabularFixture f;
  f.name = "corridor-delay" + std::to_string(delay);
  // states: (phase 0..delay) x blocked, then success, crash
  const int chain = delay + 1;
  const int S = 2 * chain + 2;
  const int success = 2 * chain, crash = 2 * chain + 1;
  auto sid = [&](int phase, int blocked) { return 2 * phase + blocked; };

  TabularPomdp& m = f.pomdp;
  m.num_states = S;
  m.num_actions = 2;
  m.horizon = std::min(6, delay + 2);
  m.discount = 0.95;
  m.transition.assign(static_cast<size_t>(S) * 2 * S, 0.0);
  m.reward.assign(static_cast<size_t>(S) * 2, 0.0);

  for (int b = 0; b < 2; ++b) {
    for (int phase = 0; phase < delay; ++phase)
      for (int a = 0; a < 2; ++a) m.trans(sid(phase, b), a, sid(phase + 1, b)) = 1.0;
    for (int a = 0; a < 2; ++a) {
      // junction: entering the blocked corridor crashes
      m.trans(sid(delay, b), a, a == b ? crash : success) = 1.0;
      m.rew(sid(delay, b), a) = a == b ? -1.0 : 1.0;
    }
  }
  for (int a = 0; a < 2; ++a) {
    m.trans(success, a, success) = 1.0;
    m.trans(crash, a, crash) = 1.0;
  }

  std::vector<int> blocked_bit(S, 0);
  for (int phase = 0; phase < chain; ++phase) blocked_bit[sid(phase, 1)] = 1;
  m.tokens.push_back(bit_token(blocked_bit));   // token 0: corridor
  m.tokens.push_back(uniform_noise_token(S));   // token 1: noise
  m.validate();

  const int junction_step = delay;
  f.policy = [junction_step](const Belief& belief, int step) {
    if (step != junction_step) return 0;
    double p_blocked1 = 0.0, p_blocked0 = 0.0;
    for (size_t s = 0; s + 2 < belief.size(); ++s)
      (s % 2 == 1 ? p_blocked1 : p_blocked0) += belief[s];
    return p_blocked0 <= p_blocked1 ? 0 : 1;
  };
  f.schedule.assign(m.horizon, {});
  f.belief.assign(S, 0.0);
  f.belief[sid(0, 0)] = 0.5;
  f.belief[sid(0, 1)] = 0.5;
  f.state_dist = f.belief;
  f.query_subset = {0, 1};
  return f;
}

TabularFixture distractor_fixture(uint64_t seed) {
  (void)seed;
  TabularFixture f;
  f.name = "distractor";
  // states 0..7: phase in {0,1}, blocked, color; 8 success, 9 crash
  const int S = 10;
  auto sid = [](int phase, int blocked, int color) { return phase * 4 + blocked * 2 + color; };
  const int success = 8, crash = 9;

  TabularPomdp& m = f.pomdp;
  m.num_states = S;
  m.num_actions = 2;
  m.horizon = 3;
  m.discount = 0.95;
  m.transition.assign(static_cast<size_t>(S) * 2 * S, 0.0);
  m.reward.assign(static_cast<size_t>(S) * 2, 0.0);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 2; ++c) {
      for (int a = 0; a < 2; ++a) {
        m.trans(sid(0, b, c), a, sid(1, b, c)) = 1.0;
        m.trans(sid(1, b, c), a, a == b ? crash : success) = 1.0;
        m.rew(sid(1, b, c), a) = a == b ? -1.0 : 1.0;
      }
    }
  for (int a = 0; a < 2; ++a) {
    m.trans(success, a, success) = 1.0;
    m.trans(crash, a, crash) = 1.0;
  }

  std::vector<int> blocked_bit(S, 0), color_bit(S, 0);
  for (int phase = 0; phase < 2; ++phase)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        blocked_bit[sid(phase, b, c)] = b;
        color_bit[sid(phase, b, c)] = c;
      }
  m.tokens.push_back(bit_token(blocked_bit));  // 0: corridor
  m.tokens.push_back(uniform_noise_token(S));  // 1: noise
  m.tokens.push_back(bit_token(color_bit));    // 2: distractor (reward-irrelevant)
  m.validate();

  f.policy = [](const Belief& belief, int step) {
    if (step != 1) return 0;
    double p1 = 0.0, p0 = 0.0;
    for (int phase = 0; phase < 2; ++phase)
      for (int c = 0; c < 2; ++c) {
        p0 += belief[phase * 4 + 0 * 2 + c];
        p1 += belief[phase * 4 + 1 * 2 + c];
      }
    return p0 <= p1 ? 0 : 1;
  };
  f.schedule.assign(m.horizon, {});
  f.belief.assign(S, 0.0);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 2; ++c) f.belief[sid(0, b, c)] = 0.25;
  f.state_dist = f.belief;
  f.query_subset = {0, 1, 2};
  return f;
}

TabularFixture redundancy_fixture(uint64_t seed) {
  auto f = corridor_fixture(1, seed);
  f.name = "redundancy";
  // duplicate the corridor token: identical deterministic emissions
  f.pomdp.tokens.insert(f.pomdp.tokens.begin() + 1, f.pomdp.tokens[0]);
  // tokens: 0 corridor, 1 duplicate corridor, 2 noise
  f.pomdp.validate();
  f.query_subset = {0, 1, 2};
  return f;
}

TabularFixture zero_reward_fixture(uint64_t seed) {
  auto f = corridor_fixture(1, seed);
  f.name = "zero-reward";
  f.pomdp.reward.assign(f.pomdp.reward.size(), 0.0);
  return f;
}

std::vector<TabularFixture> audit_suite(uint64_t seed) {
  std::vector<TabularFixture> suite;
  suite.push_back(corridor_fixture(0, seed));
  suite.push_back(corridor_fixture(1, seed));
  suite.push_back(corridor_fixture(2, seed));
  suite.push_back(distractor_fixture(seed));
  suite.push_back(redundancy_fixture(seed));
  suite.push_back(zero_reward_fixture(seed));
  return suite;
}

}  // namespace semtwin::fixtures
