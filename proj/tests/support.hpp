#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <string>
#include <vector>

#include "ulee/common.hpp"
#include "ulee/env.hpp"
#include "ulee/goals.hpp"
#include "ulee/nn.hpp"
#include "ulee/pool.hpp"
#include "ulee/predictor.hpp"
#include "ulee/seqpolicy.hpp"
#include "ulee/streams.hpp"

namespace ulee::testing {

/// One open room with fixed objects and agent pose.
inline std::shared_ptr<const env::EnvSpec> room_spec(int size, std::vector<env::ObjectPlacement> objects,
                                                     env::AgentPose agent, int max_steps = 64) {
  auto s = std::make_shared<env::EnvSpec>();
  s->seed = 42;
  s->layout.grid_size = size;
  s->layout.room_count = 1;
  s->max_steps = max_steps;
  s->initial_objects = std::move(objects);
  s->agent = agent;
  s->goal.type = env::GoalType::AgentHold;
  s->goal.a = env::object_kind(0, 0);
  return s;
}

inline env::EnvInstance instance(std::shared_ptr<const env::EnvSpec> spec, std::uint64_t seed = 1) {
  env::EnvInstance e(std::move(spec));
  Rng rng(seed);
  e.reset_lifetime(rng);
  return e;
}

inline env::KindId random_kind(Rng& rng, int n_shapes) {
  return static_cast<env::KindId>(uniform_int(rng, env::num_kinds(n_shapes)));
}

inline policy::StepInputs random_inputs(int n, int n_shapes, Rng& rng) {
  policy::StepInputs in;
  in.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    for (auto& c : in.obs[k]) c = random_kind(rng, n_shapes);
    in.episode_start[k] = uniform01(rng) < 0.2 ? 1 : 0;
    in.prev_action[k] = static_cast<std::int8_t>(uniform_int(rng, env::kNumActions + 1) - 1);
    in.prev_reward[k] = uniform01(rng) < 0.3 ? static_cast<float>(uniform01(rng)) : 0.0f;
  }
  return in;
}

inline goals::GridGoal random_grid(int size, int n_shapes, Rng& rng) {
  goals::GridGoal g;
  g.size = size;
  g.cells.resize(static_cast<std::size_t>(size * size));
  for (auto& c : g.cells) c = random_kind(rng, n_shapes);
  g.agent = {uniform_int(rng, size), uniform_int(rng, size)};
  return g;
}

/// Central-difference check of one parameter block. Compares the analytic and
/// numeric gradient restricted to `max_entries` random entries (all entries
/// when the block is smaller) and returns the relative error of the two
/// vectors.
inline double block_relative_error(nn::ParamSet<double>& params, int block, const std::function<double()>& loss,
                                   Rng& rng, int max_entries = 32, double eps = 1e-6) {
  const auto n = static_cast<int>(params.value(block).size());
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  if (n > max_entries) {
    shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(max_entries));
  }
  double diff = 0.0, norm_a = 0.0, norm_n = 0.0;
  for (int i : idx) {
    const double analytic = params.grad(block).data()[i];
    double& w = params.value(block).data()[i];
    const double w0 = w;
    w = w0 + eps;
    params.touch();
    const double up = loss();
    w = w0 - eps;
    params.touch();
    const double down = loss();
    w = w0;
    params.touch();
    const double numeric = (up - down) / (2 * eps);
    diff += (analytic - numeric) * (analytic - numeric);
    norm_a += analytic * analytic;
    norm_n += numeric * numeric;
  }
  const double scale = std::max(std::sqrt(norm_a), std::sqrt(norm_n));
  return scale < 1e-10 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

/// Deterministic actor driven by a callback over (inputs, stream slot, state,
/// memory column).
class ScriptedActor final : public rollout::Actor {
 public:
  using Script = std::function<env::Action(const policy::StepInputs&, std::size_t, const env::WorldState&, float*)>;
  ScriptedActor(Script script, int memory_rows = 1) : script_(std::move(script)), rows_(memory_rows) {}
  int memory_dim() const override { return rows_; }
  void act(const policy::StepInputs& in, std::span<const env::WorldState* const> states, nn::Mat<float>& memory,
           Rng&, rollout::ActOut& out) const override {
    const auto n = static_cast<std::size_t>(in.size());
    out.actions.resize(n);
    out.log_probs.assign(n, 0.f);
    out.values.assign(n, 0.f);
    for (std::size_t j = 0; j < n; ++j)
      out.actions[j] = static_cast<std::int8_t>(script_(in, j, *states[j], memory.col(static_cast<int>(j)).data()));
  }

 private:
  Script script_;
  int rows_;
};

inline ScriptedActor constant_actor(env::Action a) {
  return ScriptedActor([a](const policy::StepInputs&, std::size_t, const env::WorldState&, float*) { return a; });
}

inline std::string state_key(const env::WorldState& s) {
  std::string k(s.cells.begin(), s.cells.end());
  k.push_back(static_cast<char>(s.agent.row));
  k.push_back(static_cast<char>(s.agent.col));
  k.push_back(static_cast<char>(s.dir));
  k.push_back(static_cast<char>(s.pocket));
  return k;
}

/// Shortest action sequence reaching extrinsic success from `start`, by
/// breadth-first search over distinct states.
inline std::optional<std::vector<env::Action>> shortest_plan(const env::EnvSpec& spec, const env::WorldState& start,
                                                             std::size_t max_nodes = 2000000) {
  struct Node {
    env::WorldState state;
    int parent;
    env::Action action;
  };
  std::vector<Node> nodes{{start, -1, env::Action::Forward}};
  std::unordered_set<std::string> seen{state_key(start)};
  auto unwind = [&](int i, env::Action last) {
    std::vector<env::Action> plan{last};
    for (; nodes[static_cast<std::size_t>(i)].parent >= 0; i = nodes[static_cast<std::size_t>(i)].parent)
      plan.push_back(nodes[static_cast<std::size_t>(i)].action);
    return std::vector<env::Action>(plan.rbegin(), plan.rend());
  };
  for (std::size_t head = 0; head < nodes.size() && nodes.size() < max_nodes; ++head) {
    for (int a = 0; a < env::kNumActions; ++a) {
      env::WorldState next = nodes[head].state;
      const auto out = env::step(spec, next, static_cast<env::Action>(a));
      if (out.success) return unwind(static_cast<int>(head), static_cast<env::Action>(a));
      if (out.done) continue;
      if (seen.insert(state_key(next)).second)
        nodes.push_back({std::move(next), static_cast<int>(head), static_cast<env::Action>(a)});
    }
  }
  return std::nullopt;
}

/// The lifetimes an evaluation with `seed` runs: its task draw, reset in order.
inline std::vector<env::EnvInstance> evaluation_lifetimes(const env::Pool& pool, int n, std::uint64_t seed) {
  Rng draw(derive_seed(seed, 0x7A5C));
  const auto tasks = env::sample_subset(pool, static_cast<std::size_t>(n), draw);
  Rng reset(derive_seed(seed, 0x5E7));
  std::vector<env::EnvInstance> out;
  for (const auto& s : tasks.specs) {
    out.emplace_back(s);
    out.back().reset_lifetime(reset);
  }
  return out;
}

/// Recognises its task from the lifetime's first state, idles through the
/// first `idle_episodes` episodes, then replays the shortest plan.
class PlanningActor final : public rollout::Actor {
 public:
  PlanningActor(const std::vector<env::EnvInstance>& lifetimes, int idle_episodes)
      : idle_(idle_episodes) {
    for (const auto& e : lifetimes) {
      by_start_[state_key(e.initial_state())] = plans_.size();
      plans_.push_back(shortest_plan(e.spec(), e.initial_state()));
    }
  }
  int memory_dim() const override { return 3; }
  bool all_solvable() const {
    return std::all_of(plans_.begin(), plans_.end(), [](const auto& p) { return p.has_value(); });
  }
  void act(const policy::StepInputs& in, std::span<const env::WorldState* const> states, nn::Mat<float>& memory, Rng&,
           rollout::ActOut& out) const override {
    const auto n = static_cast<std::size_t>(in.size());
    out.actions.resize(n);
    out.log_probs.assign(n, 0.f);
    out.values.assign(n, 0.f);
    for (std::size_t j = 0; j < n; ++j) {
      float* m = memory.col(static_cast<int>(j)).data();
      if (in.prev_action[j] < 0) {
        const auto it = by_start_.find(state_key(*states[j]));
        require(it != by_start_.end(), "planning actor met an unknown task");
        m[0] = static_cast<float>(it->second);
        m[1] = 0.f;
      } else if (in.episode_start[j]) {
        m[1] += 1.f;
      }
      if (in.episode_start[j]) m[2] = 0.f;
      const auto& plan = plans_[static_cast<std::size_t>(m[0])];
      const auto step = static_cast<std::size_t>(m[2]);
      m[2] += 1.f;
      env::Action a = env::Action::TurnLeft;
      if (m[1] >= static_cast<float>(idle_) && plan && step < plan->size()) a = (*plan)[step];
      out.actions[j] = static_cast<std::int8_t>(a);
    }
  }

 private:
  int idle_;
  std::unordered_map<std::string, std::size_t> by_start_;
  std::vector<std::optional<std::vector<env::Action>>> plans_;
};

}  // namespace ulee::testing
