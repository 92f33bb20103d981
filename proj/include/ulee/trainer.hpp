#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <vector>

#include "ulee/config.hpp"
#include "ulee/curriculum.hpp"
#include "ulee/optim.hpp"
#include "ulee/pool.hpp"
#include "ulee/ppo.hpp"
#include "ulee/seqpolicy.hpp"
#include "ulee/streams.hpp"

namespace ulee::train {

enum class StepClass : std::uint8_t { Pretrain, GoalSearch, SedExtra, Eval };
inline constexpr int kNumStepClasses = 4;
std::string to_string(StepClass c);

/// Environment steps by purpose. Counters only grow.
class StepLedger {
 public:
  void add(StepClass c, long steps);
  long get(StepClass c) const { return counts_[static_cast<std::size_t>(c)]; }
  long total() const;
  /// Goal-search steps as a fraction of pre-training steps.
  double goal_search_overhead() const;
  nlohmann::json to_json() const;

 private:
  std::array<long, kNumStepClasses> counts_{};
};

/// Goal-search steps one environment adds per batch.
long goal_search_steps_per_env(const config::CurriculumConfig& c, int episode_length, bool trains_search_policy);

/// Appends one JSON object per line.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::filesystem::path& path);
  explicit MetricsWriter(std::ostream& os) : out_(&os) {}
  void write(const nlohmann::json& record);

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* out_ = nullptr;
};

struct StepRecord {
  policy::StepInputs input;  // size 1
  int action = 0;
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;
};

struct LifetimeTranscript {
  std::vector<StepRecord> steps;
  std::vector<std::uint8_t> successes;  // one per completed episode
  std::uint64_t env_id = 0;
  goals::Goal goal;
};

/// H back-to-back episodes with shared memory under a self-imposed goal.
LifetimeTranscript run_lifetime(const rollout::Actor& actor, const env::EnvInstance& env, const goals::Goal& goal,
                                int episodes, Rng& rng);

struct SearchTrainingStats {
  std::vector<rl::PpoStats> updates;
  long steps = 0;
};

/// `rounds` PPO updates of the search policy, each on `episodes` fresh search
/// episodes per environment rewarded by the predictor.
SearchTrainingStats run_goal_search_training(policy::PolicyNet<float>& search_policy, rl::Adam<float>& adam,
                                             rollout::StreamBatch& search, int rounds, int episodes,
                                             const rl::PpoConfig& cfg, Rng& rng);

struct BatchSummary {
  long batch = 0;
  double fallback_fraction = 0.0;
  double mean_predicted_difficulty = 0.0;  // of the sampled goals
  double mean_difficulty = 0.0;            // buffer labels pushed this batch
  double success_rate = 0.0;               // completed training episodes
  double predictor_loss = 0.0;
  int predictor_updates = 0;
};

/// The unsupervised pre-training loop. Each batch: search for candidate goals,
/// sample one goal per environment, train the policy over the lifetimes, label
/// the goals' difficulty, train the predictor, then train the search policy.
class Pretrainer {
 public:
  Pretrainer(config::TrainConfig cfg, env::Pool train_pool, MetricsWriter* metrics = nullptr);

  BatchSummary run_batch();
  /// Runs cfg.batches() batches, writing checkpoints at milestones.
  void run();

  const config::TrainConfig& config() const { return cfg_; }
  const StepLedger& ledger() const { return ledger_; }
  const curriculum::GoalBuffer& buffer() const { return buffer_; }
  const policy::PolicyNet<float>& policy() const { return pi_; }
  const policy::PolicyNet<float>& search_policy() const { return gs_; }
  const curriculum::DifficultyPredictor<float>& predictor() const { return dp_; }
  long batches_done() const { return batch_; }

  void save_checkpoint(const std::filesystem::path& dir) const;

  /// Called once per batch after the policy's lifetimes finish.
  std::function<void(long, const rollout::StreamBatch&)> on_lifetimes_done;

 private:
  BatchSummary run_batch_impl(std::uint64_t batch_seed);

  config::TrainConfig cfg_;
  env::Pool pool_;
  MetricsWriter* metrics_;
  policy::PolicyNet<float> pi_;
  policy::PolicyNet<float> gs_;
  curriculum::DifficultyPredictor<float> dp_;
  rl::Adam<float> adam_pi_, adam_gs_, adam_dp_;
  curriculum::GoalBuffer buffer_;
  StepLedger ledger_;
  goals::GoalMapper mapper_;
  long batch_ = 0;
  std::size_t next_milestone_ = 0;
};

}  // namespace ulee::train
