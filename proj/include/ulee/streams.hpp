#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ulee/env.hpp"
#include "ulee/goals.hpp"
#include "ulee/ppo.hpp"
#include "ulee/seqpolicy.hpp"

namespace ulee::rollout {

using nn::Mat;

struct ActOut {
  std::vector<std::int8_t> actions;
  std::vector<float> log_probs;
  std::vector<float> values;
};

/// Chooses actions for a batch of streams. `states` is the full state behind
/// each input; learned actors ignore it.
class Actor {
 public:
  virtual ~Actor() = default;
  virtual int memory_dim() const { return 1; }
  virtual void act(const policy::StepInputs& in, std::span<const env::WorldState* const> states, Mat<float>& memory,
                   Rng& rng, ActOut& out) const = 0;
  /// Value estimates without advancing memory.
  virtual std::vector<float> peek_values(const policy::StepInputs& in, const Mat<float>& memory) const;
};

class PolicyActor final : public Actor {
 public:
  explicit PolicyActor(const policy::PolicyNet<float>& net) : net_(net) {}
  int memory_dim() const override { return net_.memory_dim(); }
  void act(const policy::StepInputs& in, std::span<const env::WorldState* const> states, Mat<float>& memory, Rng& rng,
           ActOut& out) const override;
  std::vector<float> peek_values(const policy::StepInputs& in, const Mat<float>& memory) const override;

 private:
  const policy::PolicyNet<float>& net_;
};

/// Uniform over the six actions.
class RandomActor final : public Actor {
 public:
  void act(const policy::StepInputs& in, std::span<const env::WorldState* const> states, Mat<float>& memory, Rng& rng,
           ActOut& out) const override;
};

enum class RewardKind : std::uint8_t {
  Extrinsic,  // the spec's own goal, early termination on success
  Goal,       // a self-imposed goal, early termination on success
  Predicted,  // per-step reward from a state scorer; episodes run max_steps
};

/// Scores the pre-action state of each listed stream (stream ids, states, out).
using StateScorer =
    std::function<void(std::span<const int>, std::span<const env::WorldState* const>, std::span<double>)>;

struct LifetimeSpec {
  RewardKind reward = RewardKind::Extrinsic;
  std::vector<goals::Goal> goals;  // one per stream for RewardKind::Goal
  StateScorer scorer;              // for RewardKind::Predicted
  int max_episodes = 0;            // 0: unlimited
  long max_steps = 0;              // 0: unlimited
};

struct StreamStatus {
  std::vector<std::uint8_t> successes;  // completed episodes only
  std::vector<double> returns;          // completed episodes only
  long steps = 0;
  int episode_step = 0;
  double episode_return = 0.0;
  bool finished = false;
  int memory_resets = 0;
};

/// A batch of concurrent lifetimes, one per environment, sharing one actor.
/// Memory is zeroed once when the lifetime starts and persists across its
/// episodes; episodes restart from the fixed initial state.
class StreamBatch {
 public:
  /// `envs` must already hold their lifetime initial state.
  StreamBatch(std::vector<env::EnvInstance> envs, const Actor& actor, LifetimeSpec spec);

  int size() const { return static_cast<int>(envs_.size()); }
  bool all_finished() const;

  /// Steps every unfinished stream once. With a rollout, every stream must be
  /// active and the transition is recorded at step t.
  void step(Rng& rng, rl::Rollout<float>* rollout = nullptr, int t = 0);

  /// Steps `n` times into a freshly allocated rollout and fills its bootstrap
  /// values.
  void collect(rl::Rollout<float>& rollout, int n, int chunk, Rng& rng);

  void run_to_end(Rng& rng);

  /// Called with each stream's state before every action.
  void set_state_observer(std::function<void(int, const env::WorldState&)> fn) { observer_ = std::move(fn); }

  const std::vector<StreamStatus>& status() const { return status_; }
  const std::vector<env::EnvInstance>& envs() const { return envs_; }
  std::vector<env::EnvInstance>& envs() { return envs_; }
  Mat<float>& memory() { return memory_; }
  const LifetimeSpec& spec() const { return spec_; }
  long total_steps() const { return total_steps_; }

  /// Restarts every stream's episode at its initial state while keeping
  /// memory (used between consecutive search phases in one environment).
  void begin_new_phase(int max_episodes, long max_steps);

 private:
  void current_inputs(int i, policy::StepInputs& in, std::size_t slot) const;

  std::vector<env::EnvInstance> envs_;
  const Actor& actor_;
  LifetimeSpec spec_;
  Mat<float> memory_;
  std::vector<StreamStatus> status_;
  std::vector<std::int8_t> prev_action_;
  std::vector<float> prev_reward_;
  std::function<void(int, const env::WorldState&)> observer_;
  long total_steps_ = 0;
};

}  // namespace ulee::rollout
