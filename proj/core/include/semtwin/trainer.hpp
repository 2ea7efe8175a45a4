#pragma once

// Closed-loop orchestration: stage-1 encoder pretraining and codebook
// fitting, stage-2 interleaved collection and model/policy/selector/price
// updates, replay buffering, and frozen-parameter evaluation sweeps.

#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "semtwin/channel.hpp"
#include "semtwin/config.hpp"
#include "semtwin/control.hpp"
#include "semtwin/encoder.hpp"
#include "semtwin/env.hpp"
#include "semtwin/selector.hpp"
#include "semtwin/valuation.hpp"
#include "semtwin/worldmodel.hpp"

namespace semtwin {

// One closed-loop slot as stored in replay.
struct StepRecord {
  Observation obs;
  std::vector<double> action_norm;   // normalized action chosen at this slot
  double reward = 0.0;               // reward received entering this slot
  std::vector<int> sent_indices;
  std::vector<uint16_t> sent_codes;
  std::vector<uint8_t> erased;       // aligned with sent_indices
  int bits = 0;
  bool success = false, collision = false, truncated = false;
};

struct Episode {
  std::vector<StepRecord> steps;
  double discounted_return = 0.0;
  double discounted_bits = 0.0;
  bool success = false, collision = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity_steps) : capacity_(capacity_steps) {}

  void add(Episode ep);
  int total_steps() const { return total_steps_; }
  int episode_count() const { return static_cast<int>(episodes_.size()); }
  const Episode& episode(int i) const { return episodes_[i]; }

  struct Window {
    const Episode* ep = nullptr;
    int start = 0;
  };
  // length-L windows that never cross an episode boundary
  bool can_sample(int length) const;
  std::vector<Window> sample_windows(int count, int length, Rng& rng) const;

  // discounted return-to-go inside the episode
  static double return_to_go(const Episode& ep, int t, double gamma);

 private:
  std::vector<Episode> episodes_;
  int capacity_ = 0;
  int total_steps_ = 0;
};

struct MetricsRow {
  int iteration = 0;
  long env_steps = 0;
  double elbo = 0.0, recon_nll = 0.0, reward_nll = 0.0, kl = 0.0;
  double encoder_loss = 0.0, actor_loss = 0.0, critic_loss = 0.0, selector_loss = 0.0;
  double alpha = 0.0, r_hat = 0.0, c_hat = 0.0, return_per_kbit = 0.0;
  double success_rate = 0.0, collision_rate = 0.0, mean_bits = 0.0;
  long sent_tokens = 0, erased_tokens = 0;
  int aborted = 0;  // 1 when a non-finite loss rolled the iteration back
};

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const MetricsRow& row);

struct EvalRow {
  int budget = 0;
  double per = 0.0;
  std::string strategy;
  int episodes = 0;
  double mean_return = 0.0, se_return = 0.0;
  double mean_kbits = 0.0;
  double return_per_kbit = 0.0;
  double success_rate = 0.0, collision_rate = 0.0;
};

void write_eval_header(std::ostream& os);
void write_eval_row(std::ostream& os, const EvalRow& row);

struct EvalSpec {
  int episodes = 50;
  std::vector<int> budgets{96};
  std::vector<double> pers{0.0};
  std::vector<SelectStrategy> strategies{SelectStrategy::Civ};
  uint64_t seed = 0;
  std::ostream* selection_trace = nullptr;  // optional per-slot selection CSV
};

class Trainer {
 public:
  Trainer(const Config& cfg, uint64_t seed);

  // Stage 1: random-policy warm-up, encoder pretraining, codebook fit.
  PretrainResult pretrain_stage1();

  // One Stage-2 iteration in Algorithm order; returns the metrics row.
  MetricsRow train_iteration();
  // Full run: stage 1 + all configured iterations. Metrics stream optional.
  void train(std::ostream* metrics = nullptr);

  std::vector<EvalRow> evaluate(const EvalSpec& spec);

  void save_checkpoints(const std::string& dir) const;
  void load_checkpoints(const std::string& dir);

  // verification surfaces
  const std::vector<std::string>& stage_trace() const { return stage_trace_; }
  long budget_violations() const { return budget_violations_; }
  long nonpositive_retained() const { return nonpositive_retained_; }
  long env_steps() const { return env_steps_; }
  int iteration() const { return iteration_; }
  double alpha() const { return price_.alpha; }
  const PriceState& price() const { return price_; }
  const ReplayBuffer& replay() const { return replay_; }

  Encoder& encoder() { return *encoder_; }
  WorldModel& worldmodel() { return *wm_; }
  Actor& actor() { return *actor_; }
  Critic& critic() { return *critic_; }
  Gate& gate() { return *gate_; }
  const Codebook& codebook() const { return *codebook_; }

  // exposed for tests: collect n slots with the training pipeline
  void collect(int slots);

 private:
  struct LoopState {
    NavEnv env;
    BeliefState belief;
    std::vector<double> pending_action{0.0, 0.0, 0.0};
    Episode episode;
    bool episode_open = false;
    uint64_t next_episode_seed = 0;
  };

  void start_episode(LoopState& ls);
  void finish_episode(LoopState& ls);
  // runs one slot of the closed loop; returns false when the episode ended
  bool run_slot(LoopState& ls, bool training_mode, int budget, ErasureChannel& channel,
                SelectStrategy strategy, Rng& rng, std::ostream* trace);

  std::vector<int> select_for_slot(const std::vector<SemanticToken>& raw_tokens,
                                   const std::vector<SemanticToken>& rx_view,
                                   const BeliefState& belief,
                                   const std::vector<double>& prev_action, bool training_mode,
                                   int budget, SelectStrategy strategy, Rng& rng,
                                   SelectionOutcome* outcome);

  RssmTwin::Snapshot make_snapshot(const BeliefState& prev_belief,
                                   const std::vector<double>& prev_action,
                                   const std::vector<SemanticToken>& rx_view) const;

  SequenceBatch build_sequence_batch(const std::vector<ReplayBuffer::Window>& windows) const;

  void trace(const char* stage);

  Config cfg_;
  uint64_t seed_;
  Rng rng_;

  NavConfig env_cfg_;
  EncoderConfig enc_cfg_;
  WorldModelConfig wm_cfg_;
  ControlConfig ctrl_cfg_;
  SelectorConfig sel_cfg_;

  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Codebook> codebook_;
  std::unique_ptr<WorldModel> wm_;
  std::unique_ptr<Actor> actor_;
  std::unique_ptr<Critic> critic_;
  std::unique_ptr<Gate> gate_;

  std::unique_ptr<nn::Adam> enc_opt_, wm_opt_, actor_opt_, critic_opt_, gate_opt_;

  ReplayBuffer replay_;
  PriceState price_;
  LoopState loop_;
  std::unique_ptr<ErasureChannel> train_channel_;

  int iteration_ = 0;
  uint64_t episode_counter_ = 0;
  long env_steps_ = 0;
  long budget_violations_ = 0;
  long nonpositive_retained_ = 0;
  double mean_bits_ema_ = 0.0;
  bool mean_bits_init_ = false;
  std::vector<std::pair<double, double>> iter_episode_stats_;  // (R, C) per finished episode
  std::vector<double> iter_success_, iter_collision_, iter_bits_;
  std::vector<std::string> stage_trace_;
  bool trace_stages_ = false;
};

}  // namespace semtwin
