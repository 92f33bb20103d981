#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <span>
#include <vector>

#include "ulee/goals.hpp"
#include "ulee/optim.hpp"
#include "ulee/predictor.hpp"
#include "ulee/streams.hpp"

namespace ulee::curriculum {

/// Candidate goals harvested from one environment, with the snapshots the
/// predictor consumes.
struct CandidateGoalSet {
  std::vector<goals::Goal> goals;                // multiset
  std::vector<goals::GridGoal> source_states;    // f_grid of each goal-defining state
  goals::GridGoal env_info;                      // f_grid(s0)
};

/// ceil(episodes * episode_length / spacing).
int candidate_count(int episodes, int episode_length, int spacing);

/// Takes every `spacing`-th state of a concatenated state stream, starting at
/// the first one.
class CandidateCollector {
 public:
  CandidateCollector(int spacing, goals::GoalMapper mapper, const env::WorldState& s0);
  void observe(const env::WorldState& s);
  CandidateGoalSet& result() { return set_; }
  long stream_length() const { return t_; }

 private:
  int spacing_;
  goals::GoalMapper mapper_;
  CandidateGoalSet set_;
  long t_ = 0;
};

/// Runs `episodes` search episodes in every stream of `search` (continuing
/// its memory) and returns one candidate set per environment. Environments
/// end at their initial state.
std::vector<CandidateGoalSet> collect_candidates(rollout::StreamBatch& search, int episodes, int spacing,
                                                 const goals::GoalMapper& mapper, Rng& rng);

std::vector<double> predict_difficulty(const DifficultyPredictor<float>& dp, const CandidateGoalSet& set);

struct GoalChoice {
  std::size_t index = 0;
  bool fallback = false;  // no candidate was inside the band
};

/// Uniform over candidates whose prediction lies in [lb, ub]; uniform over all
/// candidates when none does.
GoalChoice sample_goal(std::span<const double> predictions, double lb, double ub, Rng& rng);

const goals::Goal& sample_goal(const CandidateGoalSet& set, const DifficultyPredictor<float>& dp, double lb, double ub,
                               Rng& rng);

/// 1 - (successes among the last k episodes) / k.
double empirical_difficulty(std::span<const std::uint8_t> successes, int k);

/// Same shape over episode indices [size-2k, size-k): the window before the
/// last k episodes.
double previous_window_difficulty(std::span<const std::uint8_t> successes, int k);

struct SedResult {
  std::vector<double> difficulty;
  long steps = 0;  // environment steps spent, all streams
};

/// Difficulty from k single-episode lifetimes per environment, each starting
/// with fresh memory.
SedResult single_episode_difficulty(const rollout::Actor& actor, const std::vector<env::EnvInstance>& envs,
                                    const std::vector<goals::Goal>& goal, int k, Rng& rng);

double single_episode_difficulty(const rollout::Actor& actor, const env::EnvInstance& env, const goals::Goal& goal,
                                 int k, Rng& rng);

struct DifficultyRecord {
  goals::GridGoal goal_snapshot;
  goals::GridGoal env_info;
  double difficulty = 0.0;
};

/// Fixed-capacity FIFO; the oldest record is evicted first.
class GoalBuffer {
 public:
  explicit GoalBuffer(std::size_t capacity);

  void push(DifficultyRecord r);
  std::size_t size() const { return records_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return records_.empty(); }
  const DifficultyRecord& operator[](std::size_t i) const { return records_[i]; }  // 0 is the oldest
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

  /// One record per line: difficulty, goal snapshot, initial snapshot.
  void write_text(std::ostream& os) const;

 private:
  std::size_t capacity_;
  std::deque<DifficultyRecord> records_;
};

struct PredictorTraining {
  int epochs = 2;
  int minibatch = 256;
  double lr = 1e-4;
};

struct PredictorReport {
  int updates = 0;
  double mean_loss = 0.0;  // over minibatches
  bool skipped = false;
};

/// Mean squared error of the predictor over every buffered record.
double buffer_loss(DifficultyPredictor<float>& dp, const GoalBuffer& buffer);

/// `epochs` passes over a shuffled buffer, one Adam step per minibatch.
PredictorReport train_difficulty_predictor(DifficultyPredictor<float>& dp, rl::Adam<float>& adam,
                                           const GoalBuffer& buffer, const PredictorTraining& cfg, Rng& rng);

/// r_t = dp(f_grid(s_t), env_info) for every visited state.
std::vector<double> goal_search_rewards(std::span<const env::WorldState> visited, const DifficultyPredictor<float>& dp,
                                        const goals::GridGoal& env_info);

/// Scores the current states of search streams against their environments'
/// initial snapshots.
rollout::StateScorer make_search_scorer(const DifficultyPredictor<float>& dp, const std::vector<env::EnvInstance>& envs);

/// |d_now - d_prev|.
double learning_progress_post(double d_now, double d_prev);

}  // namespace ulee::curriculum
