#include "ulee/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <ostream>

namespace ulee::curriculum {

int candidate_count(int episodes, int episode_length, int spacing) {
  require(episodes > 0 && episode_length > 0 && spacing > 0, "candidate_count: arguments must be positive");
  const long total = static_cast<long>(episodes) * episode_length;
  return static_cast<int>((total + spacing - 1) / spacing);
}

CandidateCollector::CandidateCollector(int spacing, goals::GoalMapper mapper, const env::WorldState& s0)
    : spacing_(spacing), mapper_(mapper) {
  require(spacing > 0, "candidate spacing must be positive");
  set_.env_info = goals::f_grid(s0);
}

void CandidateCollector::observe(const env::WorldState& s) {
  if (t_ % spacing_ == 0) {
    set_.goals.push_back(mapper_(s));
    set_.source_states.push_back(goals::f_grid(s));
  }
  ++t_;
}

std::vector<CandidateGoalSet> collect_candidates(rollout::StreamBatch& search, int episodes, int spacing,
                                                 const goals::GoalMapper& mapper, Rng& rng) {
  std::vector<CandidateCollector> collectors;
  collectors.reserve(static_cast<std::size_t>(search.size()));
  for (const auto& e : search.envs()) collectors.emplace_back(spacing, mapper, e.initial_state());
  search.begin_new_phase(episodes, 0);
  search.set_state_observer([&](int i, const env::WorldState& s) { collectors[static_cast<std::size_t>(i)].observe(s); });
  search.run_to_end(rng);
  search.set_state_observer(nullptr);
  std::vector<CandidateGoalSet> out;
  out.reserve(collectors.size());
  for (auto& c : collectors) out.push_back(std::move(c.result()));
  return out;
}

std::vector<double> predict_difficulty(const DifficultyPredictor<float>& dp, const CandidateGoalSet& set) {
  std::vector<PredictorInput> in;
  in.reserve(set.source_states.size());
  for (const auto& s : set.source_states) in.push_back({&s, &set.env_info});
  return dp.predict(in);
}

GoalChoice sample_goal(std::span<const double> predictions, double lb, double ub, Rng& rng) {
  if (predictions.empty()) throw ContractViolation("sample_goal: empty candidate set");
  if (!(lb >= 0.0 && lb <= ub && ub <= 1.0)) throw ContractViolation("sample_goal: bounds must satisfy 0 <= lb <= ub <= 1");
  std::vector<std::size_t> band;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] >= lb && predictions[i] <= ub) band.push_back(i);
  GoalChoice c;
  if (band.empty()) {
    c.fallback = true;
    c.index = static_cast<std::size_t>(uniform_int(rng, static_cast<int>(predictions.size())));
  } else {
    c.index = band[static_cast<std::size_t>(uniform_int(rng, static_cast<int>(band.size())))];
  }
  return c;
}

const goals::Goal& sample_goal(const CandidateGoalSet& set, const DifficultyPredictor<float>& dp, double lb, double ub,
                               Rng& rng) {
  const auto pred = predict_difficulty(dp, set);
  return set.goals[sample_goal(pred, lb, ub, rng).index];
}

double empirical_difficulty(std::span<const std::uint8_t> successes, int k) {
  if (k <= 0) throw ContractViolation("empirical_difficulty: k must be positive");
  if (static_cast<int>(successes.size()) < k) throw ContractViolation("empirical_difficulty: fewer episodes than k");
  const auto tail = successes.last(static_cast<std::size_t>(k));
  const int wins = static_cast<int>(std::count_if(tail.begin(), tail.end(), [](std::uint8_t s) { return s != 0; }));
  return 1.0 - static_cast<double>(wins) / k;
}

double previous_window_difficulty(std::span<const std::uint8_t> successes, int k) {
  if (static_cast<int>(successes.size()) < 2 * k) throw ContractViolation("previous window needs 2k episodes");
  return empirical_difficulty(successes.first(successes.size() - static_cast<std::size_t>(k)), k);
}

SedResult single_episode_difficulty(const rollout::Actor& actor, const std::vector<env::EnvInstance>& envs,
                                    const std::vector<goals::Goal>& goal, int k, Rng& rng) {
  require(envs.size() == goal.size(), "one goal per environment");
  require(k > 0, "single_episode_difficulty: k must be positive");
  SedResult res;
  res.difficulty.assign(envs.size(), 0.0);
  if (envs.empty()) return res;
  // Each of the k repetitions is its own one-episode lifetime.
  std::vector<int> wins(envs.size(), 0);
  for (int rep = 0; rep < k; ++rep) {
    rollout::LifetimeSpec spec;
    spec.reward = rollout::RewardKind::Goal;
    spec.goals = goal;
    spec.max_episodes = 1;
    rollout::StreamBatch batch(envs, actor, spec);
    batch.run_to_end(rng);
    res.steps += batch.total_steps();
    for (std::size_t i = 0; i < envs.size(); ++i) wins[i] += batch.status()[i].successes.front();
  }
  for (std::size_t i = 0; i < envs.size(); ++i) res.difficulty[i] = 1.0 - static_cast<double>(wins[i]) / k;
  return res;
}

double single_episode_difficulty(const rollout::Actor& actor, const env::EnvInstance& env, const goals::Goal& goal,
                                 int k, Rng& rng) {
  return single_episode_difficulty(actor, std::vector<env::EnvInstance>{env}, std::vector<goals::Goal>{goal}, k, rng)
      .difficulty.front();
}

GoalBuffer::GoalBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("goal buffer capacity must be positive");
}

void GoalBuffer::push(DifficultyRecord r) {
  if (records_.size() == capacity_) records_.pop_front();
  records_.push_back(std::move(r));
}

void GoalBuffer::write_text(std::ostream& os) const {
  for (const auto& r : records_)
    os << r.difficulty << ' ' << goals::to_text(r.goal_snapshot) << ' ' << goals::to_text(r.env_info) << '\n';
}

double buffer_loss(DifficultyPredictor<float>& dp, const GoalBuffer& buffer) {
  if (buffer.empty()) return 0.0;
  std::vector<PredictorInput> in;
  std::vector<double> y;
  for (const auto& r : buffer) {
    in.push_back({&r.goal_snapshot, &r.env_info});
    y.push_back(r.difficulty);
  }
  double total = 0.0;
  constexpr std::size_t kBlock = 512;
  for (std::size_t lo = 0; lo < in.size(); lo += kBlock) {
    const auto n = std::min(kBlock, in.size() - lo);
    total += dp.loss(std::span(in).subspan(lo, n), std::span<const double>(y).subspan(lo, n), false) * static_cast<double>(n);
  }
  return total / static_cast<double>(in.size());
}

PredictorReport train_difficulty_predictor(DifficultyPredictor<float>& dp, rl::Adam<float>& adam,
                                           const GoalBuffer& buffer, const PredictorTraining& cfg, Rng& rng) {
  PredictorReport rep;
  if (buffer.empty()) {
    std::cerr << "warning: difficulty predictor training skipped (empty buffer)\n";
    rep.skipped = true;
    return rep;
  }
  require(cfg.epochs > 0 && cfg.minibatch > 0, "predictor training needs positive epochs and minibatch");
  adam.set_lr(cfg.lr);
  std::vector<std::size_t> order(buffer.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<PredictorInput> in;
  std::vector<double> y;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.minibatch)) {
      const auto hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.minibatch));
      in.clear();
      y.clear();
      for (std::size_t j = lo; j < hi; ++j) {
        const auto& r = buffer[order[j]];
        in.push_back({&r.goal_snapshot, &r.env_info});
        y.push_back(r.difficulty);
      }
      dp.params().zero_grad();
      rep.mean_loss += dp.loss(in, y, true);
      adam.step(dp.params());
      ++rep.updates;
    }
  }
  rep.mean_loss /= rep.updates;
  if (!dp.params().all_finite()) throw NumericalFault("non-finite difficulty predictor parameters");
  return rep;
}

std::vector<double> goal_search_rewards(std::span<const env::WorldState> visited, const DifficultyPredictor<float>& dp,
                                        const goals::GridGoal& env_info) {
  std::vector<goals::GridGoal> snaps;
  snaps.reserve(visited.size());
  for (const auto& s : visited) snaps.push_back(goals::f_grid(s));
  std::vector<PredictorInput> in;
  in.reserve(snaps.size());
  for (const auto& g : snaps) in.push_back({&g, &env_info});
  return dp.predict(in);
}

rollout::StateScorer make_search_scorer(const DifficultyPredictor<float>& dp, const std::vector<env::EnvInstance>& envs) {
  auto infos = std::make_shared<std::vector<goals::GridGoal>>();
  for (const auto& e : envs) infos->push_back(goals::f_grid(e.initial_state()));
  return [&dp, infos](std::span<const int> ids, std::span<const env::WorldState* const> states, std::span<double> out) {
    std::vector<goals::GridGoal> snaps;
    snaps.reserve(states.size());
    for (const auto* s : states) snaps.push_back(goals::f_grid(*s));
    std::vector<PredictorInput> in(states.size());
    for (std::size_t j = 0; j < states.size(); ++j) in[j] = {&snaps[j], &(*infos)[static_cast<std::size_t>(ids[j])]};
    const auto pred = dp.predict(in);
    std::copy(pred.begin(), pred.end(), out.begin());
  };
}

double learning_progress_post(double d_now, double d_prev) {
  require(d_now >= 0.0 && d_now <= 1.0 && d_prev >= 0.0 && d_prev <= 1.0, "difficulties must lie in [0, 1]");
  return std::abs(d_now - d_prev);
}

}  // namespace ulee::curriculum
