#include "ulee/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ulee/distributions.hpp"
#include "ulee/gae.hpp"

namespace ulee::rl {

void PpoConfig::validate() const {
  if (!(lr > 0) || !(adam_eps > 0) || !(gamma > 0) || gamma > 1 || !(gae_lambda >= 0) || gae_lambda > 1)
    throw ConfigError("invalid PPO discounting or optimizer settings");
  if (epochs < 1 || minibatches < 1 || bptt < 1) throw ConfigError("PPO epochs, minibatches and bptt must be positive");
  if (!(clip > 0) || clip >= 1) throw ConfigError("PPO clip must lie in (0, 1)");
  if (!(vf_coef > 0) || !(max_grad_norm > 0) || ent_coef < 0) throw ConfigError("invalid PPO loss coefficients");
}

template <class T>
void Rollout<T>::allocate(int envs, int steps, int chunk_length) {
  n_envs = envs;
  n_steps = steps;
  chunk = chunk_length;
  const auto n = static_cast<std::size_t>(envs) * static_cast<std::size_t>(steps);
  inputs.resize(static_cast<int>(n));
  actions.assign(n, 0);
  log_probs.assign(n, 0.f);
  values.assign(n, 0.f);
  rewards.assign(n, 0.f);
  lifetime_start.assign(n, 0);
  episode_end.assign(n, 0);
  lifetime_end.assign(n, 0);
  bootstrap_values.assign(static_cast<std::size_t>(envs), 0.f);
  memory_snapshots.resize(static_cast<std::size_t>(num_chunks()));
}

template <class T>
Advantages compute_advantages(const Rollout<T>& r, const PpoConfig& cfg) {
  const int n_env = r.n_envs, n_t = r.n_steps;
  Advantages out;
  out.advantages.assign(static_cast<std::size_t>(n_env * n_t), 0.0);
  out.returns.assign(out.advantages.size(), 0.0);
  std::vector<double> rew(static_cast<std::size_t>(n_t)), val(static_cast<std::size_t>(n_t));
  std::vector<std::uint8_t> cut(static_cast<std::size_t>(n_t));
  for (int e = 0; e < n_env; ++e) {
    for (int t = 0; t < n_t; ++t) {
      const auto i = r.index(t, e);
      rew[static_cast<std::size_t>(t)] = r.rewards[i];
      val[static_cast<std::size_t>(t)] = r.values[i];
      cut[static_cast<std::size_t>(t)] = r.lifetime_end[i] || (cfg.cut_at_episode_ends && r.episode_end[i]);
    }
    auto g = compute_gae(rew, val, cut, r.bootstrap_values[static_cast<std::size_t>(e)], cfg.gamma, cfg.gae_lambda);
    for (int t = 0; t < n_t; ++t) {
      out.advantages[r.index(t, e)] = g.advantages[static_cast<std::size_t>(t)];
      out.returns[r.index(t, e)] = g.returns[static_cast<std::size_t>(t)];
    }
  }
  if (cfg.normalize_advantages && !out.advantages.empty()) {
    const double n = static_cast<double>(out.advantages.size());
    const double mean = std::accumulate(out.advantages.begin(), out.advantages.end(), 0.0) / n;
    double var = 0.0;
    for (double a : out.advantages) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / n);
    for (double& a : out.advantages) a = (a - mean) / (sd + 1e-8);
  }
  return out;
}

template <class T>
LossTerms ppo_loss(const Mat<T>& logits, const RowVec<T>& values, std::span<const std::int8_t> actions,
                   std::span<const double> old_log_probs, std::span<const double> advantages,
                   std::span<const double> returns, const PpoConfig& cfg, double norm, Mat<T>* d_logits,
                   RowVec<T>* d_values) {
  const auto n = static_cast<std::size_t>(logits.cols());
  if (actions.size() != n || old_log_probs.size() != n || advantages.size() != n || returns.size() != n ||
      static_cast<std::size_t>(values.cols()) != n)
    throw ContractViolation("ppo_loss: sample count mismatch");
  if (d_logits) d_logits->setZero(logits.rows(), logits.cols());
  if (d_values) d_values->setZero(1, values.cols());
  LossTerms out;
  const double lo = 1.0 - cfg.clip, hi = 1.0 + cfg.clip;
  for (std::size_t i = 0; i < n; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const Eigen::Matrix<T, Eigen::Dynamic, 1> lcol = logits.col(col);
    const auto dist = policy::Categorical::from_logits(std::span<const T>(lcol.data(), static_cast<std::size_t>(lcol.size())));
    const int a = actions[i];
    const double logp = dist.log_prob(a);
    const double log_ratio = logp - old_log_probs[i];
    const double ratio = std::exp(log_ratio);
    const double adv = advantages[i];
    const double unclipped = ratio * adv;
    const double clipped = std::clamp(ratio, lo, hi) * adv;
    out.policy -= std::min(unclipped, clipped);
    const bool clip_active = (adv > 0 && ratio > hi) || (adv < 0 && ratio < lo);
    if (std::abs(ratio - 1.0) > cfg.clip) out.clip_fraction += 1.0;
    out.approx_kl += (ratio - 1.0) - log_ratio;

    const double diff = static_cast<double>(values(0, col)) - returns[i];
    out.value += 0.5 * diff * diff;
    const double h = dist.entropy();
    out.entropy += h;

    if (d_logits) {
      // d/dlogit_j of: -min(...) (through log p_a), and of -ent_coef * H
      const double d_logp = clip_active ? 0.0 : -adv * ratio;
      for (int j = 0; j < env::kNumActions; ++j) {
        const double p = dist.prob(j);
        double g = d_logp * ((j == a ? 1.0 : 0.0) - p);
        g += cfg.ent_coef * p * (dist.log_prob(j) + h);
        (*d_logits)(j, col) = static_cast<T>(g / norm);
      }
    }
    if (d_values) (*d_values)(0, col) = static_cast<T>(cfg.vf_coef * diff / norm);
  }
  out.policy /= norm;
  out.value /= norm;
  out.entropy /= norm;
  out.clip_fraction /= norm;
  out.approx_kl /= norm;
  out.total = out.policy + cfg.vf_coef * out.value - cfg.ent_coef * out.entropy;
  return out;
}

namespace {

template <class T>
policy::SeqBatch<T> gather_chunk(const Rollout<T>& r, std::span<const int> envs, int chunk_index) {
  const int t0 = chunk_index * r.chunk;
  const int len = std::min(r.chunk, r.n_steps - t0);
  const int b_n = static_cast<int>(envs.size());
  policy::SeqBatch<T> batch;
  batch.batch = b_n;
  batch.length = len;
  batch.inputs.resize(b_n * len);
  batch.reset.resize(static_cast<std::size_t>(b_n * len));
  const auto& snap = r.memory_snapshots[static_cast<std::size_t>(chunk_index)];
  batch.init_memory.resize(snap.rows(), b_n);
  for (int b = 0; b < b_n; ++b) batch.init_memory.col(b) = snap.col(envs[static_cast<std::size_t>(b)]);
  for (int t = 0; t < len; ++t)
    for (int b = 0; b < b_n; ++b) {
      const auto src = r.index(t0 + t, envs[static_cast<std::size_t>(b)]);
      const auto dst = static_cast<std::size_t>(t * b_n + b);
      batch.inputs.obs[dst] = r.inputs.obs[src];
      batch.inputs.episode_start[dst] = r.inputs.episode_start[src];
      batch.inputs.prev_action[dst] = r.inputs.prev_action[src];
      batch.inputs.prev_reward[dst] = r.inputs.prev_reward[src];
      batch.reset[dst] = r.lifetime_start[src];
    }
  return batch;
}

template <class T>
struct ChunkTargets {
  std::vector<std::int8_t> actions;
  std::vector<double> old_logp, adv, ret;
};

template <class T>
ChunkTargets<T> gather_targets(const Rollout<T>& r, const Advantages& a, std::span<const int> envs, int chunk_index) {
  const int t0 = chunk_index * r.chunk;
  const int len = std::min(r.chunk, r.n_steps - t0);
  const int b_n = static_cast<int>(envs.size());
  ChunkTargets<T> out;
  const auto n = static_cast<std::size_t>(b_n * len);
  out.actions.resize(n);
  out.old_logp.resize(n);
  out.adv.resize(n);
  out.ret.resize(n);
  for (int t = 0; t < len; ++t)
    for (int b = 0; b < b_n; ++b) {
      const auto src = r.index(t0 + t, envs[static_cast<std::size_t>(b)]);
      const auto dst = static_cast<std::size_t>(t * b_n + b);
      out.actions[dst] = r.actions[src];
      out.old_logp[dst] = r.log_probs[src];
      out.adv[dst] = a.advantages[src];
      out.ret[dst] = a.returns[src];
    }
  return out;
}

void accumulate(LossTerms& acc, const LossTerms& x) {
  acc.total += x.total;
  acc.policy += x.policy;
  acc.value += x.value;
  acc.entropy += x.entropy;
  acc.clip_fraction += x.clip_fraction;
  acc.approx_kl += x.approx_kl;
}

template <class T>
LossTerms run_shard(policy::PolicyNet<T>& net, const Rollout<T>& r, const Advantages& adv, std::span<const int> envs,
                    const PpoConfig& cfg, bool with_grad) {
  const double norm = static_cast<double>(envs.size()) * r.n_steps;
  LossTerms acc;
  for (int c = 0; c < r.num_chunks(); ++c) {
    auto batch = gather_chunk(r, envs, c);
    auto tg = gather_targets(r, adv, envs, c);
    auto out = net.forward_sequence(batch);
    Mat<T> d_logits;
    RowVec<T> d_values;
    auto terms = ppo_loss<T>(out.logits, out.values, tg.actions, tg.old_logp, tg.adv, tg.ret, cfg, norm,
                             with_grad ? &d_logits : nullptr, with_grad ? &d_values : nullptr);
    if (!std::isfinite(terms.total)) throw NumericalFault("PPO loss is not finite");
    accumulate(acc, terms);
    if (with_grad) net.backward_sequence(d_logits, d_values);
  }
  return acc;
}

}  // namespace

template <class T>
LossTerms evaluate_ppo_loss(policy::PolicyNet<T>& net, const Rollout<T>& rollout, const PpoConfig& cfg) {
  const auto adv = compute_advantages(rollout, cfg);
  std::vector<int> envs(static_cast<std::size_t>(rollout.n_envs));
  std::iota(envs.begin(), envs.end(), 0);
  return run_shard(net, rollout, adv, envs, cfg, false);
}

template <class T>
PpoStats ppo_update(policy::PolicyNet<T>& net, Adam<T>& adam, const Rollout<T>& rollout, const PpoConfig& cfg,
                    Rng& rng) {
  cfg.validate();
  require(rollout.chunk == cfg.bptt, "rollout chunking differs from the configured bptt window");
  const auto adv = compute_advantages(rollout, cfg);
  std::vector<int> envs(static_cast<std::size_t>(rollout.n_envs));
  std::iota(envs.begin(), envs.end(), 0);
  const int shards = std::min(cfg.minibatches, rollout.n_envs);
  PpoStats stats;
  auto& params = net.params();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(envs.begin(), envs.end(), rng);
    for (int k = 0; k < shards; ++k) {
      const auto lo = static_cast<std::size_t>(k) * envs.size() / static_cast<std::size_t>(shards);
      const auto hi = static_cast<std::size_t>(k + 1) * envs.size() / static_cast<std::size_t>(shards);
      std::span<const int> shard(envs.data() + lo, hi - lo);
      params.zero_grad();
      auto terms = run_shard(net, rollout, adv, shard, cfg, true);
      stats.grad_norm += clip_grad_norm(params, cfg.max_grad_norm);
      adam.step(params);
      stats.policy_loss += terms.policy;
      stats.value_loss += terms.value;
      stats.entropy += terms.entropy;
      stats.clip_fraction += terms.clip_fraction;
      stats.approx_kl += terms.approx_kl;
      stats.total_loss += terms.total;
      ++stats.minibatches;
    }
  }
  const double m = std::max(1, stats.minibatches);
  stats.policy_loss /= m;
  stats.value_loss /= m;
  stats.entropy /= m;
  stats.clip_fraction /= m;
  stats.approx_kl /= m;
  stats.total_loss /= m;
  stats.grad_norm /= m;
  if (!params.all_finite()) throw NumericalFault("non-finite parameters after PPO update");
  return stats;
}

template struct Rollout<float>;
template struct Rollout<double>;
template Advantages compute_advantages(const Rollout<float>&, const PpoConfig&);
template Advantages compute_advantages(const Rollout<double>&, const PpoConfig&);
template LossTerms ppo_loss(const Mat<float>&, const RowVec<float>&, std::span<const std::int8_t>, std::span<const double>,
                            std::span<const double>, std::span<const double>, const PpoConfig&, double, Mat<float>*,
                            RowVec<float>*);
template LossTerms ppo_loss(const Mat<double>&, const RowVec<double>&, std::span<const std::int8_t>,
                            std::span<const double>, std::span<const double>, std::span<const double>,
                            const PpoConfig&, double, Mat<double>*, RowVec<double>*);
template LossTerms evaluate_ppo_loss(policy::PolicyNet<float>&, const Rollout<float>&, const PpoConfig&);
template LossTerms evaluate_ppo_loss(policy::PolicyNet<double>&, const Rollout<double>&, const PpoConfig&);
template PpoStats ppo_update(policy::PolicyNet<float>&, Adam<float>&, const Rollout<float>&, const PpoConfig&, Rng&);
template PpoStats ppo_update(policy::PolicyNet<double>&, Adam<double>&, const Rollout<double>&, const PpoConfig&, Rng&);

}  // namespace ulee::rl
