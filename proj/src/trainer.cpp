#include "ulee/trainer.hpp"

#include <iostream>
#include <numeric>

#include "ulee/checkpoint.hpp"

namespace ulee::train {

using nlohmann::json;

std::string to_string(StepClass c) {
  switch (c) {
    case StepClass::Pretrain: return "pretrain";
    case StepClass::GoalSearch: return "goal_search";
    case StepClass::SedExtra: return "sed_extra";
    case StepClass::Eval: return "eval";
  }
  return "?";
}

void StepLedger::add(StepClass c, long steps) {
  require(steps >= 0, "ledger counters only grow");
  counts_[static_cast<std::size_t>(c)] += steps;
}

long StepLedger::total() const { return std::accumulate(counts_.begin(), counts_.end(), 0L); }

double StepLedger::goal_search_overhead() const {
  const long p = get(StepClass::Pretrain);
  return p == 0 ? 0.0 : static_cast<double>(get(StepClass::GoalSearch)) / static_cast<double>(p);
}

json StepLedger::to_json() const {
  json j;
  for (int c = 0; c < kNumStepClasses; ++c) j[to_string(static_cast<StepClass>(c))] = counts_[static_cast<std::size_t>(c)];
  return j;
}

long goal_search_steps_per_env(const config::CurriculumConfig& c, int episode_length, bool trains_search_policy) {
  long steps = static_cast<long>(c.search_episodes) * episode_length;
  if (trains_search_policy) steps += static_cast<long>(c.num_gs_updates) * c.search_train_episodes * episode_length;
  return steps;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path)
    : file_(std::make_unique<std::ofstream>(path, std::ios::trunc)) {
  if (!*file_) throw std::runtime_error("cannot open metrics file " + path.string());
  out_ = file_.get();
}

void MetricsWriter::write(const json& record) {
  if (!out_) return;
  *out_ << record.dump() << '\n';
  out_->flush();
}

LifetimeTranscript run_lifetime(const rollout::Actor& actor, const env::EnvInstance& env, const goals::Goal& goal,
                                int episodes, Rng& rng) {
  require(episodes > 0, "a lifetime needs at least one episode");
  rollout::LifetimeSpec spec;
  spec.reward = rollout::RewardKind::Goal;
  spec.goals = {goal};
  spec.max_episodes = episodes;
  rollout::StreamBatch batch({env}, actor, spec);
  LifetimeTranscript tr;
  tr.env_id = env.spec().seed;
  tr.goal = goal;
  rl::Rollout<float> r;
  r.allocate(1, 1, 1);
  while (!batch.all_finished()) {
    batch.step(rng, &r, 0);
    StepRecord rec;
    rec.input.resize(1);
    rec.input.obs[0] = r.inputs.obs[0];
    rec.input.episode_start[0] = r.inputs.episode_start[0];
    rec.input.prev_action[0] = r.inputs.prev_action[0];
    rec.input.prev_reward[0] = r.inputs.prev_reward[0];
    rec.action = r.actions[0];
    rec.log_prob = r.log_probs[0];
    rec.value = r.values[0];
    rec.reward = r.rewards[0];
    tr.steps.push_back(std::move(rec));
  }
  tr.successes = batch.status().front().successes;
  return tr;
}

SearchTrainingStats run_goal_search_training(policy::PolicyNet<float>& search_policy, rl::Adam<float>& adam,
                                             rollout::StreamBatch& search, int rounds, int episodes,
                                             const rl::PpoConfig& cfg, Rng& rng) {
  SearchTrainingStats out;
  for (int round = 0; round < rounds; ++round) {
    const int length = search.envs().front().spec().max_steps;
    for (const auto& e : search.envs())
      require(e.spec().max_steps == length, "search training needs a common episode length");
    const long before = search.total_steps();
    search.begin_new_phase(episodes, static_cast<long>(episodes) * length);
    rl::Rollout<float> r;
    search.collect(r, episodes * length, cfg.bptt, rng);
    out.steps += search.total_steps() - before;
    out.updates.push_back(rl::ppo_update(search_policy, adam, r, cfg, rng));
  }
  return out;
}

namespace {

curriculum::PredictorConfig predictor_config(const config::TrainConfig& c) {
  curriculum::PredictorConfig p;
  p.grid_size = c.bench.grid_size;
  p.n_shapes = c.bench.n_shapes;
  p.embed_dim = c.policy.embed_dim;
  p.channels = c.policy.conv_channels;
  p.hidden = c.curriculum.predictor_hidden;
  return p;
}

json ppo_json(const rl::PpoStats& s) {
  return {{"policy_loss", s.policy_loss}, {"value_loss", s.value_loss}, {"entropy", s.entropy},
          {"clip_fraction", s.clip_fraction}, {"approx_kl", s.approx_kl}, {"total_loss", s.total_loss},
          {"grad_norm", s.grad_norm}};
}

// Independent streams per purpose, derived from the batch seed.
enum Stream : std::uint64_t { kEnvs = 1, kActions, kSampling, kPpo, kPredictor, kSearchPpo };

}  // namespace

Pretrainer::Pretrainer(config::TrainConfig cfg, env::Pool train_pool, MetricsWriter* metrics)
    : cfg_(std::move(cfg)),
      pool_(std::move(train_pool)),
      metrics_(metrics),
      pi_(cfg_.policy),
      gs_(cfg_.policy),
      dp_(predictor_config(cfg_)),
      buffer_(static_cast<std::size_t>(cfg_.curriculum.buffer_batches) * static_cast<std::size_t>(cfg_.n_envs)),
      mapper_(cfg_.curriculum.mapping, env::num_kinds(cfg_.bench.n_shapes)) {
  cfg_.validate();
  if (pool_.empty()) throw ConfigError("empty training pool");
  for (const auto& s : pool_.specs)
    if (s->layout.grid_size != cfg_.bench.grid_size || s->n_shapes != cfg_.bench.n_shapes)
      throw ConfigError("training pool does not match the benchmark geometry");
  Rng init(derive_seed(cfg_.seed, 0xC0FFEE));
  pi_.init(init);
  gs_.init(init);
  dp_.init(init);
  adam_pi_ = rl::Adam<float>(pi_.params(), cfg_.ppo.adam());
  adam_gs_ = rl::Adam<float>(gs_.params(), cfg_.gs_ppo.adam());
  adam_dp_ = rl::Adam<float>(dp_.params(), {cfg_.curriculum.predictor.lr, 0.9, 0.999, 1e-5});
}

BatchSummary Pretrainer::run_batch() {
  const std::uint64_t batch_seed = derive_seed(cfg_.seed, static_cast<std::uint64_t>(batch_) + 1);
  try {
    return run_batch_impl(batch_seed);
  } catch (const std::exception& e) {
    throw std::runtime_error("pre-training batch " + std::to_string(batch_) + " failed (batch seed " +
                             std::to_string(batch_seed) + ", replay with the same config and seed): " + e.what());
  }
}

BatchSummary Pretrainer::run_batch_impl(std::uint64_t batch_seed) {
  const auto& cu = cfg_.curriculum;
  const int n = cfg_.n_envs;
  Rng rng_envs(derive_seed(batch_seed, kEnvs));
  Rng rng_act(derive_seed(batch_seed, kActions));
  Rng rng_sample(derive_seed(batch_seed, kSampling));
  Rng rng_ppo(derive_seed(batch_seed, kPpo));
  Rng rng_dp(derive_seed(batch_seed, kPredictor));
  Rng rng_gs(derive_seed(batch_seed, kSearchPpo));

  const auto subset = env::sample_subset(pool_, static_cast<std::size_t>(n), rng_envs);
  std::vector<env::EnvInstance> envs;
  envs.reserve(static_cast<std::size_t>(n));
  for (const auto& spec : subset.specs) {
    envs.emplace_back(spec);
    envs.back().reset_lifetime(rng_envs);
  }

  // Candidate search.
  const bool adversarial = cfg_.variant.search == config::SearchMode::Adversarial;
  rollout::PolicyActor gs_actor(gs_);
  rollout::RandomActor random_actor;
  const rollout::Actor& search_actor = adversarial ? static_cast<const rollout::Actor&>(gs_actor) : random_actor;
  rollout::LifetimeSpec search_spec;
  search_spec.reward = rollout::RewardKind::Predicted;
  if (adversarial)
    search_spec.scorer = curriculum::make_search_scorer(dp_, envs);
  else
    search_spec.scorer = [](std::span<const int>, std::span<const env::WorldState* const>, std::span<double> out) {
      std::fill(out.begin(), out.end(), 0.0);
    };
  rollout::StreamBatch search(envs, search_actor, search_spec);
  auto candidates = curriculum::collect_candidates(search, cu.search_episodes, cu.spacing, mapper_, rng_act);
  ledger_.add(StepClass::GoalSearch, search.total_steps());

  // Goal sampling.
  BatchSummary sum;
  sum.batch = batch_;
  std::vector<goals::Goal> chosen;
  std::vector<const goals::GridGoal*> chosen_snapshots;
  chosen.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& set = candidates[static_cast<std::size_t>(i)];
    const auto pred = curriculum::predict_difficulty(dp_, set);
    curriculum::GoalChoice choice;
    if (cfg_.variant.sampling == config::SamplingMode::Bounded) {
      choice = curriculum::sample_goal(pred, cu.lb, cu.ub, rng_sample);
    } else {
      choice.index = static_cast<std::size_t>(uniform_int(rng_sample, static_cast<int>(set.goals.size())));
    }
    sum.fallback_fraction += choice.fallback ? 1.0 : 0.0;
    sum.mean_predicted_difficulty += pred[choice.index];
    chosen.push_back(set.goals[choice.index]);
    chosen_snapshots.push_back(&set.source_states[choice.index]);
  }
  sum.fallback_fraction /= n;
  sum.mean_predicted_difficulty /= n;

  // Lifetimes with periodic policy updates.
  rollout::PolicyActor pi_actor(pi_);
  rollout::LifetimeSpec life_spec;
  life_spec.reward = rollout::RewardKind::Goal;
  life_spec.goals = chosen;
  life_spec.max_steps = cfg_.steps_per_env;
  rollout::StreamBatch lifetimes(envs, pi_actor, life_spec);
  const long updates = cfg_.steps_per_env / cfg_.update_interval;
  for (long u = 0; u < updates; ++u) {
    rl::Rollout<float> r;
    const long before = lifetimes.total_steps();
    lifetimes.collect(r, cfg_.update_interval, cfg_.ppo.bptt, rng_act);
    ledger_.add(StepClass::Pretrain, lifetimes.total_steps() - before);
    const auto st = rl::ppo_update(pi_, adam_pi_, r, cfg_.ppo, rng_ppo);
    json rec = ppo_json(st);
    rec["type"] = "ppo";
    rec["role"] = "policy";
    rec["batch"] = batch_;
    rec["update"] = u;
    rec["pretrain_steps"] = ledger_.get(StepClass::Pretrain);
    if (metrics_) metrics_->write(rec);
  }
  if (!lifetimes.all_finished()) throw ContractViolation("lifetimes did not consume their step budget");
  if (on_lifetimes_done) on_lifetimes_done(batch_, lifetimes);

  // Difficulty labels.
  std::vector<double> labels(static_cast<std::size_t>(n));
  long completed = 0, wins = 0;
  for (int i = 0; i < n; ++i) {
    const auto& s = lifetimes.status()[static_cast<std::size_t>(i)];
    completed += static_cast<long>(s.successes.size());
    wins += std::count(s.successes.begin(), s.successes.end(), std::uint8_t{1});
    if (cfg_.variant.scorer == config::ScorerMode::LearningProgress)
      labels[static_cast<std::size_t>(i)] = curriculum::learning_progress_post(
          curriculum::empirical_difficulty(s.successes, cu.difficulty_k),
          curriculum::previous_window_difficulty(s.successes, cu.difficulty_k));
    else
      labels[static_cast<std::size_t>(i)] = curriculum::empirical_difficulty(s.successes, cu.difficulty_k);
  }
  sum.success_rate = completed ? static_cast<double>(wins) / static_cast<double>(completed) : 0.0;
  if (cfg_.variant.difficulty == config::DifficultyMode::SingleEpisode) {
    auto sed = curriculum::single_episode_difficulty(pi_actor, envs, chosen, cu.difficulty_k, rng_act);
    ledger_.add(StepClass::SedExtra, sed.steps);
    labels = std::move(sed.difficulty);
  }
  for (int i = 0; i < n; ++i) {
    buffer_.push({*chosen_snapshots[static_cast<std::size_t>(i)], candidates[static_cast<std::size_t>(i)].env_info,
                  labels[static_cast<std::size_t>(i)]});
    sum.mean_difficulty += labels[static_cast<std::size_t>(i)];
  }
  sum.mean_difficulty /= n;

  // Predictor.
  const auto rep = curriculum::train_difficulty_predictor(dp_, adam_dp_, buffer_, cu.predictor, rng_dp);
  sum.predictor_loss = rep.mean_loss;
  sum.predictor_updates = rep.updates;

  // Search policy.
  if (adversarial && cu.num_gs_updates > 0) {
    auto gs = run_goal_search_training(gs_, adam_gs_, search, cu.num_gs_updates, cu.search_train_episodes,
                                       cfg_.gs_ppo, rng_gs);
    ledger_.add(StepClass::GoalSearch, gs.steps);
    for (std::size_t u = 0; u < gs.updates.size(); ++u) {
      json rec = ppo_json(gs.updates[u]);
      rec["type"] = "ppo";
      rec["role"] = "search_policy";
      rec["batch"] = batch_;
      rec["update"] = u;
      rec["pretrain_steps"] = ledger_.get(StepClass::Pretrain);
      if (metrics_) metrics_->write(rec);
    }
  }

  json rec{{"type", "batch"},
           {"batch", batch_},
           {"variant", cfg_.variant.name()},
           {"fallback_fraction", sum.fallback_fraction},
           {"mean_predicted_difficulty", sum.mean_predicted_difficulty},
           {"mean_difficulty", sum.mean_difficulty},
           {"success_rate", sum.success_rate},
           {"predictor_loss", sum.predictor_loss},
           {"predictor_updates", sum.predictor_updates},
           {"buffer_size", buffer_.size()},
           {"ledger", ledger_.to_json()}};
  if (metrics_) metrics_->write(rec);
  ++batch_;
  return sum;
}

void Pretrainer::save_checkpoint(const std::filesystem::path& dir) const {
  io::Bundle meta;
  meta.policy = cfg_.policy;
  meta.predictor = dp_.config();
  meta.pretrain_steps = ledger_.get(StepClass::Pretrain);
  meta.seed = cfg_.seed;
  meta.variant = cfg_.variant.name();
  io::save_bundle(dir, meta, pi_, &gs_, &dp_);
}

void Pretrainer::run() {
  const long total = cfg_.batches();
  while (batch_ < total) {
    run_batch();
    const long steps = ledger_.get(StepClass::Pretrain);
    while (next_milestone_ < cfg_.checkpoint_milestones.size() && steps >= cfg_.checkpoint_milestones[next_milestone_]) {
      if (!cfg_.out_dir.empty())
        save_checkpoint(cfg_.out_dir / ("checkpoint_" + std::to_string(cfg_.checkpoint_milestones[next_milestone_])));
      ++next_milestone_;
    }
  }
  if (!cfg_.out_dir.empty()) save_checkpoint(cfg_.out_dir / "final");
}

}  // namespace ulee::train
