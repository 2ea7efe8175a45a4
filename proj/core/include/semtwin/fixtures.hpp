#pragma once

// Fixture generators used by the audit commands and the verification suites:
// linear-Gaussian latent sequences for world-model training checks, and the
// tabular POMDP suite for counterfactual-value oracles.

#include <cstdint>
#include <string>
#include <vector>

#include "semtwin/tabular.hpp"
#include "semtwin/worldmodel.hpp"

namespace semtwin::fixtures {

// ---- linear-Gaussian sequence fixture ---------------------------------------
// Latent random walk s' = A s + B a + w, token n reads out an embed_dim slice
// C_n s (scaled), reward = c . s. With process noise the tokens carry
// information the prior cannot predict; without it the dynamics are
// deterministic and the prior can match the posterior.

struct LinearSequenceConfig {
  int latent_dim = 4;
  int token_count = 4;
  int embed_dim = 4;
  int action_dim = 3;
  int length = 16;
  int num_sequences = 48;
  double process_noise = 0.3;
  double obs_scale = 3.0;
  double obs_noise = 0.02;
  double start_scale = 0.5;  // 0 pins every sequence to the same start state
  uint64_t seed = 0;
};

struct GeneratedSequence {
  std::vector<std::vector<double>> token_rows;   // posterior conditioning rows
  std::vector<std::vector<double>> recon_rows;   // decoder targets
  std::vector<std::vector<double>> mask_rows;
  std::vector<std::vector<double>> action_rows;  // action entering each step
  std::vector<double> rewards;
};

std::vector<GeneratedSequence> linear_sequences(const LinearSequenceConfig& cfg);

// Assembles steps [0, length) of the selected sequences into one batch.
SequenceBatch assemble_batch(const std::vector<GeneratedSequence>& seqs,
                             const std::vector<int>& which, int length);

// ---- tabular POMDP audit suite -----------------------------------------------

struct TabularFixture {
  std::string name;
  TabularPomdp pomdp;
  TabularPolicy policy;
  Schedule schedule;       // default future transmissions
  Belief belief;           // history snapshot: controller belief
  Belief state_dist;       // true-state distribution at the snapshot
  std::vector<int> query_subset;  // candidate subset at the query step
};

// Two corridors, one blocked; a deterministic corridor token reveals which.
// `delay` >= 0 moves the junction that many steps into the future, which
// defers the token's effect on reward by the same amount.
TabularFixture corridor_fixture(int delay, uint64_t seed);
// Adds a pure-noise token and a belief-moving but reward-irrelevant
// distractor token to the corridor setup.
TabularFixture distractor_fixture(uint64_t seed);
// Two tokens with identical deterministic emissions (perfect redundancy)
// plus the noise token.
TabularFixture redundancy_fixture(uint64_t seed);
// Zero reward table: every token is worthless.
TabularFixture zero_reward_fixture(uint64_t seed);

// The full audit suite in a fixed order.
std::vector<TabularFixture> audit_suite(uint64_t seed);

}  // namespace semtwin::fixtures
