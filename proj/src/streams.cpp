#include "ulee/streams.hpp"

#include <algorithm>

#include "ulee/distributions.hpp"

namespace ulee::rollout {

std::vector<float> Actor::peek_values(const policy::StepInputs& in, const Mat<float>&) const {
  return std::vector<float>(static_cast<std::size_t>(in.size()), 0.f);
}

void PolicyActor::act(const policy::StepInputs& in, std::span<const env::WorldState* const>, Mat<float>& memory,
                      Rng& rng, ActOut& out) const {
  auto res = net_.step(in, memory);
  const int n = in.size();
  out.actions.resize(static_cast<std::size_t>(n));
  out.log_probs.resize(static_cast<std::size_t>(n));
  out.values.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto dist = policy::Categorical::from_logits(
        std::span<const float>(res.logits.col(i).data(), static_cast<std::size_t>(env::kNumActions)));
    const int a = dist.sample(rng);
    out.actions[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(a);
    out.log_probs[static_cast<std::size_t>(i)] = static_cast<float>(dist.log_prob(a));
    out.values[static_cast<std::size_t>(i)] = res.values(0, i);
  }
}

std::vector<float> PolicyActor::peek_values(const policy::StepInputs& in, const Mat<float>& memory) const {
  Mat<float> scratch = memory;
  auto res = net_.step(in, scratch);
  return std::vector<float>(res.values.data(), res.values.data() + res.values.size());
}

void RandomActor::act(const policy::StepInputs& in, std::span<const env::WorldState* const>, Mat<float>&, Rng& rng,
                      ActOut& out) const {
  const auto n = static_cast<std::size_t>(in.size());
  out.actions.resize(n);
  out.log_probs.assign(n, static_cast<float>(-std::log(static_cast<double>(env::kNumActions))));
  out.values.assign(n, 0.f);
  for (auto& a : out.actions) a = static_cast<std::int8_t>(uniform_int(rng, env::kNumActions));
}

StreamBatch::StreamBatch(std::vector<env::EnvInstance> envs, const Actor& actor, LifetimeSpec spec)
    : envs_(std::move(envs)), actor_(actor), spec_(std::move(spec)) {
  const int n = size();
  if (spec_.reward == RewardKind::Goal && static_cast<int>(spec_.goals.size()) != n)
    throw ContractViolation("one goal per stream is required");
  if (spec_.reward == RewardKind::Predicted && !spec_.scorer) throw ContractViolation("predicted rewards need a scorer");
  memory_ = Mat<float>::Zero(actor_.memory_dim(), n);
  status_.assign(static_cast<std::size_t>(n), {});
  for (auto& s : status_) s.memory_resets = 1;
  prev_action_.assign(static_cast<std::size_t>(n), -1);
  prev_reward_.assign(static_cast<std::size_t>(n), 0.f);
  for (auto& e : envs_) e.reset_episode();
}

bool StreamBatch::all_finished() const {
  return std::all_of(status_.begin(), status_.end(), [](const StreamStatus& s) { return s.finished; });
}

void StreamBatch::begin_new_phase(int max_episodes, long max_steps) {
  spec_.max_episodes = max_episodes;
  spec_.max_steps = max_steps;
  for (std::size_t i = 0; i < envs_.size(); ++i) {
    envs_[i].reset_episode();
    auto& s = status_[i];
    s.successes.clear();
    s.returns.clear();
    s.steps = 0;
    s.episode_step = 0;
    s.episode_return = 0.0;
    s.finished = false;
  }
}

void StreamBatch::current_inputs(int i, policy::StepInputs& in, std::size_t slot) const {
  const auto k = static_cast<std::size_t>(i);
  in.obs[slot] = envs_[k].observe();
  in.episode_start[slot] = status_[k].episode_step == 0 ? 1 : 0;
  in.prev_action[slot] = prev_action_[k];
  in.prev_reward[slot] = prev_reward_[k];
}

void StreamBatch::step(Rng& rng, rl::Rollout<float>* rollout, int t) {
  std::vector<int> active;
  active.reserve(envs_.size());
  for (int i = 0; i < size(); ++i)
    if (!status_[static_cast<std::size_t>(i)].finished) active.push_back(i);
  if (active.empty()) return;
  const bool full = static_cast<int>(active.size()) == size();
  if (rollout && !full) throw ContractViolation("rollout recording requires every stream to be active");

  const int m = static_cast<int>(active.size());
  policy::StepInputs in;
  in.resize(m);
  std::vector<const env::WorldState*> states(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    current_inputs(active[static_cast<std::size_t>(j)], in, static_cast<std::size_t>(j));
    states[static_cast<std::size_t>(j)] = &envs_[static_cast<std::size_t>(active[static_cast<std::size_t>(j)])].state();
    if (observer_) observer_(active[static_cast<std::size_t>(j)], *states[static_cast<std::size_t>(j)]);
  }

  std::vector<double> scores;
  if (spec_.reward == RewardKind::Predicted) {
    scores.resize(static_cast<std::size_t>(m));
    spec_.scorer(active, states, scores);
  }

  if (rollout && t % rollout->chunk == 0) rollout->memory_snapshots[static_cast<std::size_t>(t / rollout->chunk)] = memory_;

  ActOut out;
  if (full) {
    actor_.act(in, states, memory_, rng, out);
  } else {
    Mat<float> mem(memory_.rows(), m);
    for (int j = 0; j < m; ++j) mem.col(j) = memory_.col(active[static_cast<std::size_t>(j)]);
    actor_.act(in, states, mem, rng, out);
    for (int j = 0; j < m; ++j) memory_.col(active[static_cast<std::size_t>(j)]) = mem.col(j);
  }

  for (int j = 0; j < m; ++j) {
    const int i = active[static_cast<std::size_t>(j)];
    const auto k = static_cast<std::size_t>(i);
    auto& env = envs_[k];
    auto& st = status_[k];
    const auto a = static_cast<env::Action>(out.actions[static_cast<std::size_t>(j)]);
    const int max_steps = env.spec().max_steps;
    double reward = 0.0;
    bool done = false, success = false;
    switch (spec_.reward) {
      case RewardKind::Extrinsic: {
        auto res = env.step(a);
        reward = res.reward;
        done = res.done;
        success = res.success;
        break;
      }
      case RewardKind::Goal: {
        const int t_before = env.state().t;
        env.advance(a);
        success = goals::goal_reached(env.state(), spec_.goals[k]);
        reward = goals::intrinsic_reward(success, t_before, max_steps);
        done = success || env.state().t >= max_steps;
        break;
      }
      case RewardKind::Predicted:
        reward = scores[static_cast<std::size_t>(j)];
        env.advance(a);
        done = env.state().t >= max_steps;
        break;
    }
    const bool lifetime_start = st.steps == 0 && prev_action_[k] < 0;
    ++st.steps;
    ++total_steps_;
    st.episode_return += reward;
    if (done) {
      st.successes.push_back(success ? 1 : 0);
      st.returns.push_back(st.episode_return);
      st.episode_return = 0.0;
      st.episode_step = 0;
      env.reset_episode();
    } else {
      ++st.episode_step;
    }
    if ((spec_.max_episodes > 0 && static_cast<int>(st.successes.size()) >= spec_.max_episodes) ||
        (spec_.max_steps > 0 && st.steps >= spec_.max_steps))
      st.finished = true;

    if (rollout) {
      const auto idx = rollout->index(t, i);
      rollout->inputs.obs[idx] = in.obs[static_cast<std::size_t>(j)];
      rollout->inputs.episode_start[idx] = in.episode_start[static_cast<std::size_t>(j)];
      rollout->inputs.prev_action[idx] = in.prev_action[static_cast<std::size_t>(j)];
      rollout->inputs.prev_reward[idx] = in.prev_reward[static_cast<std::size_t>(j)];
      rollout->actions[idx] = out.actions[static_cast<std::size_t>(j)];
      rollout->log_probs[idx] = out.log_probs[static_cast<std::size_t>(j)];
      rollout->values[idx] = out.values[static_cast<std::size_t>(j)];
      rollout->rewards[idx] = static_cast<float>(reward);
      rollout->lifetime_start[idx] = lifetime_start ? 1 : 0;
      rollout->episode_end[idx] = done ? 1 : 0;
      rollout->lifetime_end[idx] = st.finished ? 1 : 0;
    }
    prev_action_[k] = out.actions[static_cast<std::size_t>(j)];
    prev_reward_[k] = static_cast<float>(reward);
  }
}

void StreamBatch::collect(rl::Rollout<float>& rollout, int n, int chunk, Rng& rng) {
  rollout.allocate(size(), n, chunk);
  for (int t = 0; t < n; ++t) step(rng, &rollout, t);
  policy::StepInputs in;
  in.resize(size());
  for (int i = 0; i < size(); ++i) current_inputs(i, in, static_cast<std::size_t>(i));
  rollout.bootstrap_values = actor_.peek_values(in, memory_);
  for (int i = 0; i < size(); ++i)
    if (status_[static_cast<std::size_t>(i)].finished) rollout.bootstrap_values[static_cast<std::size_t>(i)] = 0.f;
}

void StreamBatch::run_to_end(Rng& rng) {
  if (spec_.max_episodes <= 0 && spec_.max_steps <= 0) throw ContractViolation("unbounded lifetime");
  while (!all_finished()) step(rng);
}

}  // namespace ulee::rollout
