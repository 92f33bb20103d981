#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ulee/optim.hpp"
#include "ulee/seqpolicy.hpp"

namespace ulee::rl {

using nn::RowVec;

struct PpoConfig {
  double lr = 2e-4;
  double adam_eps = 1e-5;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int epochs = 1;
  int minibatches = 16;
  double clip = 0.2;
  double vf_coef = 0.5;
  double max_grad_norm = 0.5;
  double ent_coef = 0.005;
  int bptt = 64;  // truncated backprop window
  // Stop value bootstrapping at episode ends as well as at lifetime ends.
  bool cut_at_episode_ends = false;
  bool normalize_advantages = true;

  void validate() const;
  AdamConfig adam() const { return {lr, 0.9, 0.999, adam_eps}; }
};

/// n_envs x n_steps transitions, time-major (index t * n_envs + e), plus the
/// memory at the start of every bptt chunk.
template <class T>
struct Rollout {
  int n_envs = 0;
  int n_steps = 0;
  int chunk = 64;
  policy::StepInputs inputs;
  std::vector<std::int8_t> actions;
  std::vector<float> log_probs;
  std::vector<float> values;
  std::vector<float> rewards;
  std::vector<std::uint8_t> lifetime_start;  // memory reset before this step
  std::vector<std::uint8_t> episode_end;     // an episode finished with this step
  std::vector<std::uint8_t> lifetime_end;    // nothing to bootstrap past this step
  std::vector<float> bootstrap_values;       // per env, V after the last step
  std::vector<Mat<T>> memory_snapshots;      // per chunk, memory_dim x n_envs

  void allocate(int envs, int steps, int chunk_length);
  std::size_t index(int t, int e) const { return static_cast<std::size_t>(t) * static_cast<std::size_t>(n_envs) + static_cast<std::size_t>(e); }
  int num_chunks() const { return (n_steps + chunk - 1) / chunk; }
};

struct Advantages {
  std::vector<double> advantages;  // normalized when configured
  std::vector<double> returns;
};

/// Per-env GAE over the rollout, then batch normalization of advantages.
template <class T>
Advantages compute_advantages(const Rollout<T>& rollout, const PpoConfig& cfg);

struct LossTerms {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;    // 0.5 * mean squared error
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

/// Clipped-surrogate loss over a set of samples, summed and divided by `norm`.
/// Fills dL/dlogits and dL/dvalues when requested.
template <class T>
LossTerms ppo_loss(const Mat<T>& logits, const RowVec<T>& values, std::span<const std::int8_t> actions,
                   std::span<const double> old_log_probs, std::span<const double> advantages,
                   std::span<const double> returns, const PpoConfig& cfg, double norm, Mat<T>* d_logits,
                   RowVec<T>* d_values);

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double total_loss = 0.0;
  double grad_norm = 0.0;  // before clipping, mean over minibatches
  int minibatches = 0;
};

/// Full-batch loss of the current parameters on a rollout; no update.
template <class T>
LossTerms evaluate_ppo_loss(policy::PolicyNet<T>& net, const Rollout<T>& rollout, const PpoConfig& cfg);

/// One PPO update: env indices are shuffled into contiguous minibatch shards,
/// each shard is replayed in bptt chunks and followed by one Adam step.
template <class T>
PpoStats ppo_update(policy::PolicyNet<T>& net, Adam<T>& adam, const Rollout<T>& rollout, const PpoConfig& cfg,
                    Rng& rng);

}  // namespace ulee::rl
