#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulee/pool.hpp"
#include "ulee/ppo.hpp"
#include "ulee/seqpolicy.hpp"
#include "ulee/streams.hpp"
#include "ulee/trainer.hpp"

namespace ulee::eval {

struct EvalOptions {
  int n_envs = 2048;
  int episodes = 20;
  int last_k = 10;  // adaptation score window
  std::uint64_t seed = 0;
  int block = 256;  // lifetimes stepped together
  bool random_baseline = true;
};

struct TaskRecord {
  std::uint64_t env_id = 0;
  std::vector<double> returns;  // per episode
  std::vector<std::uint8_t> successes;
  double score = 0.0;
};

struct Percentiles {
  double mean = 0.0;
  double p40 = 0.0;
  double p20 = 0.0;
};

/// Nearest rank: the smallest value with at least p% of the scores at or below it.
double nearest_rank(std::span<const double> sorted, double p);
Percentiles percentile_table(std::span<const double> scores);

struct Curves {
  std::vector<double> reached;      // fraction of tasks solved in any episode <= j
  std::vector<double> mean_return;  // per episode
  Percentiles table;                // over per-task scores
};

Curves aggregate(const std::vector<TaskRecord>& tasks, int episodes);

enum class Protocol : std::uint8_t { Exploration, Adaptation };
std::string to_string(Protocol p);

struct EvalReport {
  Protocol protocol = Protocol::Exploration;
  int episodes = 0;
  int last_k = 0;
  std::uint64_t seed = 0;
  std::uint64_t eval_pool_hash = 0;
  std::uint64_t task_hash = 0;  // the drawn task set
  std::vector<TaskRecord> tasks;
  Curves curves;
  std::vector<TaskRecord> random_tasks;
  Curves random;
  nlohmann::json ledger;

  nlohmann::json summary() const;
  /// One "task" record per lifetime followed by one "eval" summary record.
  void write(train::MetricsWriter& out, const nlohmann::json& extra = {}) const;
};

/// Draws the evaluation tasks of one evaluation point.
env::Pool draw_tasks(const env::Pool& pool, int n, std::uint64_t seed);

/// Extrinsic-reward lifetimes of `episodes` episodes, one per task. Scores are
/// the mean return over the last `last_k` episodes, or success within the
/// budget when last_k is 0.
std::vector<TaskRecord> run_extrinsic_lifetimes(const rollout::Actor& actor, const env::Pool& tasks, int episodes,
                                                int last_k, std::uint64_t seed, int block,
                                                train::StepLedger* ledger = nullptr);

/// Throws ContractViolation if `train_pool` shares a task with `eval_pool`.
void check_disjoint(const env::Pool& eval_pool, const env::Pool* train_pool);

EvalReport eval_exploration(const rollout::Actor& actor, const env::Pool& eval_pool, const EvalOptions& opt,
                            const env::Pool* train_pool = nullptr, train::StepLedger* ledger = nullptr);

EvalReport eval_adaptation(const rollout::Actor& actor, const env::Pool& eval_pool, const EvalOptions& opt,
                           const env::Pool* train_pool = nullptr, train::StepLedger* ledger = nullptr);

struct FinetuneConfig {
  rl::PpoConfig ppo;
  int n_envs = 256;  // fixed pool size, or environments per batch for meta
  long steps_per_env = 2560;
  int update_interval = 256;
  long budget_steps = 0;  // extrinsic training steps
  long eval_every = 0;    // 0: only before and after training
  EvalOptions eval;
  std::uint64_t seed = 0;
};

FinetuneConfig fixed_defaults();
FinetuneConfig meta_defaults();

struct EvalPoint {
  long steps = 0;
  EvalReport report;
};

struct FinetuneResult {
  std::vector<EvalPoint> points;
  long train_steps = 0;
  train::StepLedger ledger;  // evaluation steps
  std::uint64_t fixed_pool_hash = 0;
};

/// PPO with extrinsic rewards on a frozen task set drawn from the eval pool,
/// evaluated on that same set.
FinetuneResult finetune_fixed(policy::PolicyNet<float>& net, const env::Pool& eval_pool, const FinetuneConfig& cfg,
                              train::MetricsWriter* metrics = nullptr);

/// Meta-training on lifetimes over the training pool, evaluated on a fresh
/// draw from the eval pool at every evaluation point.
FinetuneResult finetune_meta(policy::PolicyNet<float>& net, const env::Pool& train_pool, const env::Pool& eval_pool,
                             const FinetuneConfig& cfg, train::MetricsWriter* metrics = nullptr);

/// Seed of the task draw at evaluation point i of a meta fine-tuning run.
std::uint64_t meta_eval_seed(std::uint64_t seed, int point);

}  // namespace ulee::eval
