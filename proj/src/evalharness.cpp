#include "ulee/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace ulee::eval {

using nlohmann::json;

double nearest_rank(std::span<const double> sorted, double p) {
  require(!sorted.empty(), "percentile of an empty set");
  require(p >= 0.0 && p <= 100.0, "percentile out of range");
  const auto n = static_cast<double>(sorted.size());
  // p * n is exact for whole percentages, so the division rounds only once
  const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(p * n / 100.0)));
  return sorted[rank - 1];
}

Percentiles percentile_table(std::span<const double> scores) {
  Percentiles out;
  if (scores.empty()) return out;
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double s : scores) sum += s;
  out.mean = sum / static_cast<double>(scores.size());
  out.p40 = nearest_rank(sorted, 40.0);
  out.p20 = nearest_rank(sorted, 20.0);
  return out;
}

Curves aggregate(const std::vector<TaskRecord>& tasks, int episodes) {
  Curves c;
  c.reached.assign(static_cast<std::size_t>(episodes), 0.0);
  c.mean_return.assign(static_cast<std::size_t>(episodes), 0.0);
  std::vector<double> scores;
  scores.reserve(tasks.size());
  for (const auto& t : tasks) {
    require(t.returns.size() == static_cast<std::size_t>(episodes) && t.successes.size() == t.returns.size(),
            "task record does not cover the episode budget");
    bool reached = false;
    for (int j = 0; j < episodes; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      reached = reached || t.successes[sj] != 0;
      c.reached[sj] += reached ? 1.0 : 0.0;
      c.mean_return[sj] += t.returns[sj];
    }
    scores.push_back(t.score);
  }
  if (!tasks.empty()) {
    const auto n = static_cast<double>(tasks.size());
    for (auto& v : c.reached) v /= n;
    for (auto& v : c.mean_return) v /= n;
  }
  c.table = percentile_table(scores);
  return c;
}

std::string to_string(Protocol p) { return p == Protocol::Exploration ? "exploration" : "adaptation"; }

namespace {

json curves_json(const Curves& c) {
  return {{"reached", c.reached},
          {"mean_return", c.mean_return},
          {"mean", c.table.mean},
          {"p40", c.table.p40},
          {"p20", c.table.p20}};
}

json task_json(const TaskRecord& t) {
  return {{"env_id", t.env_id}, {"returns", t.returns}, {"successes", t.successes}, {"score", t.score}};
}

}  // namespace

json EvalReport::summary() const {
  return {{"type", "eval"},
          {"protocol", to_string(protocol)},
          {"episodes", episodes},
          {"last_k", last_k},
          {"seed", seed},
          {"eval_pool_hash", eval_pool_hash},
          {"task_hash", task_hash},
          {"n_tasks", tasks.size()},
          {"policy", curves_json(curves)},
          {"random", curves_json(random)},
          {"ledger", ledger}};
}

void EvalReport::write(train::MetricsWriter& out, const json& extra) const {
  auto emit = [&](const std::vector<TaskRecord>& ts, const char* actor) {
    for (const auto& t : ts) {
      json rec = task_json(t);
      rec["type"] = "task";
      rec["actor"] = actor;
      rec["protocol"] = to_string(protocol);
      rec["seed"] = seed;
      if (extra.is_object()) rec.update(extra);
      out.write(rec);
    }
  };
  emit(tasks, "policy");
  emit(random_tasks, "random");
  json s = summary();
  if (extra.is_object()) s.update(extra);
  out.write(s);
}

env::Pool draw_tasks(const env::Pool& pool, int n, std::uint64_t seed) {
  require(n > 0, "evaluation needs at least one task");
  Rng rng(derive_seed(seed, 0x7A5C));
  return env::sample_subset(pool, static_cast<std::size_t>(n), rng);
}

std::vector<TaskRecord> run_extrinsic_lifetimes(const rollout::Actor& actor, const env::Pool& tasks, int episodes,
                                                int last_k, std::uint64_t seed, int block,
                                                train::StepLedger* ledger) {
  require(episodes > 0 && block > 0, "bad lifetime shape");
  require(last_k >= 0 && last_k <= episodes, "score window exceeds the lifetime");
  Rng rng_reset(derive_seed(seed, 0x5E7));
  Rng rng_act(derive_seed(seed, 0xAC7));
  std::vector<TaskRecord> out;
  out.reserve(tasks.size());
  for (std::size_t lo = 0; lo < tasks.size(); lo += static_cast<std::size_t>(block)) {
    const std::size_t hi = std::min(tasks.size(), lo + static_cast<std::size_t>(block));
    std::vector<env::EnvInstance> envs;
    for (std::size_t i = lo; i < hi; ++i) {
      envs.emplace_back(tasks.specs[i]);
      envs.back().reset_lifetime(rng_reset);
    }
    rollout::LifetimeSpec spec;
    spec.reward = rollout::RewardKind::Extrinsic;
    spec.max_episodes = episodes;
    rollout::StreamBatch batch(std::move(envs), actor, spec);
    batch.run_to_end(rng_act);
    if (ledger) ledger->add(train::StepClass::Eval, batch.total_steps());
    for (int i = 0; i < batch.size(); ++i) {
      const auto& st = batch.status()[static_cast<std::size_t>(i)];
      TaskRecord r;
      r.env_id = batch.envs()[static_cast<std::size_t>(i)].spec().seed;
      r.returns = st.returns;
      r.successes = st.successes;
      if (static_cast<int>(r.returns.size()) != episodes) throw ContractViolation("lifetime ended early");
      if (last_k > 0) {
        double s = 0.0;
        for (int j = episodes - last_k; j < episodes; ++j) s += r.returns[static_cast<std::size_t>(j)];
        r.score = s / last_k;
      } else {
        r.score = std::any_of(r.successes.begin(), r.successes.end(), [](std::uint8_t x) { return x != 0; }) ? 1.0
                                                                                                             : 0.0;
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

void check_disjoint(const env::Pool& eval_pool, const env::Pool* train_pool) {
  if (train_pool && env::pools_overlap(eval_pool, *train_pool))
    throw ContractViolation("evaluation pool overlaps the training pool");
}

namespace {

EvalReport evaluate(Protocol protocol, const rollout::Actor& actor, const env::Pool& eval_pool, const EvalOptions& opt,
                    const env::Pool* train_pool, train::StepLedger* ledger) {
  check_disjoint(eval_pool, train_pool);
  train::StepLedger local;
  train::StepLedger& led = ledger ? *ledger : local;
  const int last_k = protocol == Protocol::Exploration ? 0 : opt.last_k;
  EvalReport rep;
  rep.protocol = protocol;
  rep.episodes = opt.episodes;
  rep.last_k = last_k;
  rep.seed = opt.seed;
  rep.eval_pool_hash = eval_pool.hash();
  const env::Pool tasks = draw_tasks(eval_pool, opt.n_envs, opt.seed);
  rep.task_hash = tasks.hash();
  rep.tasks = run_extrinsic_lifetimes(actor, tasks, opt.episodes, last_k, opt.seed, opt.block, &led);
  rep.curves = aggregate(rep.tasks, opt.episodes);
  if (opt.random_baseline) {
    rollout::RandomActor random;
    rep.random_tasks = run_extrinsic_lifetimes(random, tasks, opt.episodes, last_k, derive_seed(opt.seed, 0x4A4D),
                                               opt.block, &led);
    rep.random = aggregate(rep.random_tasks, opt.episodes);
  }
  rep.ledger = led.to_json();
  return rep;
}

}  // namespace

EvalReport eval_exploration(const rollout::Actor& actor, const env::Pool& eval_pool, const EvalOptions& opt,
                            const env::Pool* train_pool, train::StepLedger* ledger) {
  return evaluate(Protocol::Exploration, actor, eval_pool, opt, train_pool, ledger);
}

EvalReport eval_adaptation(const rollout::Actor& actor, const env::Pool& eval_pool, const EvalOptions& opt,
                           const env::Pool* train_pool, train::StepLedger* ledger) {
  return evaluate(Protocol::Adaptation, actor, eval_pool, opt, train_pool, ledger);
}

FinetuneConfig fixed_defaults() {
  FinetuneConfig c;
  c.n_envs = 256;
  c.eval.episodes = 30;
  c.eval.last_k = 10;
  return c;
}

FinetuneConfig meta_defaults() {
  FinetuneConfig c;
  c.n_envs = 256;
  c.eval.n_envs = 256;
  c.eval.episodes = 25;
  c.eval.last_k = 5;
  return c;
}

std::uint64_t meta_eval_seed(std::uint64_t seed, int point) {
  return derive_seed(seed, 0xE0000000ULL + static_cast<std::uint64_t>(point));
}

namespace {

/// Extrinsic lifetimes over `tasks` with periodic PPO updates. `after_update`
/// sees the running step count; training stops at the budget.
void train_on_tasks(policy::PolicyNet<float>& net, rl::Adam<float>& adam, const env::Pool& tasks,
                    const FinetuneConfig& cfg, std::uint64_t batch_seed, long& steps,
                    const std::function<void(long)>& after_update, train::MetricsWriter* metrics) {
  Rng rng_reset(derive_seed(batch_seed, 1));
  Rng rng_act(derive_seed(batch_seed, 2));
  Rng rng_ppo(derive_seed(batch_seed, 3));
  std::vector<env::EnvInstance> envs;
  for (const auto& s : tasks.specs) {
    envs.emplace_back(s);
    envs.back().reset_lifetime(rng_reset);
  }
  rollout::PolicyActor actor(net);
  rollout::LifetimeSpec spec;
  spec.reward = rollout::RewardKind::Extrinsic;
  spec.max_steps = cfg.steps_per_env;
  rollout::StreamBatch batch(std::move(envs), actor, spec);
  const long updates = cfg.steps_per_env / cfg.update_interval;
  for (long u = 0; u < updates && steps < cfg.budget_steps; ++u) {
    rl::Rollout<float> r;
    const long before = batch.total_steps();
    batch.collect(r, cfg.update_interval, cfg.ppo.bptt, rng_act);
    steps += batch.total_steps() - before;
    const auto st = rl::ppo_update(net, adam, r, cfg.ppo, rng_ppo);
    if (metrics) {
      double ret = 0.0;
      for (float x : r.rewards) ret += x;
      metrics->write({{"type", "ppo"},
                      {"steps", steps},
                      {"reward_per_step", ret / static_cast<double>(r.rewards.size())},
                      {"policy_loss", st.policy_loss},
                      {"value_loss", st.value_loss},
                      {"entropy", st.entropy},
                      {"approx_kl", st.approx_kl}});
    }
    after_update(steps);
  }
}

void validate(const FinetuneConfig& cfg) {
  cfg.ppo.validate();
  if (cfg.n_envs <= 0 || cfg.update_interval <= 0 || cfg.steps_per_env % cfg.update_interval != 0)
    throw ConfigError("fine-tuning lifetimes must be a whole number of update intervals");
  if (cfg.budget_steps < 0 || cfg.eval_every < 0) throw ConfigError("negative fine-tuning budget");
}

void emit_point(train::MetricsWriter* metrics, const EvalPoint& p, int index) {
  if (metrics) p.report.write(*metrics, {{"eval_point", index}, {"steps", p.steps}});
}

}  // namespace

FinetuneResult finetune_fixed(policy::PolicyNet<float>& net, const env::Pool& eval_pool, const FinetuneConfig& cfg,
                              train::MetricsWriter* metrics) {
  validate(cfg);
  FinetuneResult res;
  const env::Pool fixed = draw_tasks(eval_pool, cfg.n_envs, derive_seed(cfg.seed, 0xF1));
  res.fixed_pool_hash = fixed.hash();
  rl::Adam<float> adam(net.params(), cfg.ppo.adam());

  EvalOptions eo = cfg.eval;
  eo.n_envs = static_cast<int>(fixed.size());
  eo.seed = derive_seed(cfg.seed, 0xE7);
  std::optional<EvalReport> baseline;
  auto evaluate_now = [&](long steps) {
    rollout::PolicyActor actor(net);
    EvalOptions o = eo;
    o.random_baseline = !baseline.has_value();
    EvalPoint p{steps, eval_adaptation(actor, fixed, o, nullptr, &res.ledger)};
    if (baseline) {
      p.report.random_tasks = baseline->random_tasks;
      p.report.random = baseline->random;
    } else {
      baseline = p.report;
    }
    res.points.push_back(std::move(p));
    emit_point(metrics, res.points.back(), static_cast<int>(res.points.size()) - 1);
  };

  evaluate_now(0);
  long next_eval = cfg.eval_every > 0 ? cfg.eval_every : cfg.budget_steps + 1;
  auto after = [&](long steps) {
    if (steps >= next_eval && steps < cfg.budget_steps) {
      evaluate_now(steps);
      while (next_eval <= steps) next_eval += cfg.eval_every;
    }
  };
  for (std::uint64_t b = 0; res.train_steps < cfg.budget_steps; ++b)
    train_on_tasks(net, adam, fixed, cfg, derive_seed(cfg.seed, 0x200000 + b), res.train_steps, after, metrics);
  if (res.train_steps > 0) evaluate_now(res.train_steps);
  return res;
}

FinetuneResult finetune_meta(policy::PolicyNet<float>& net, const env::Pool& train_pool, const env::Pool& eval_pool,
                             const FinetuneConfig& cfg, train::MetricsWriter* metrics) {
  validate(cfg);
  check_disjoint(eval_pool, &train_pool);
  FinetuneResult res;
  rl::Adam<float> adam(net.params(), cfg.ppo.adam());
  int point = 0;
  auto evaluate_now = [&](long steps) {
    rollout::PolicyActor actor(net);
    EvalOptions o = cfg.eval;
    o.seed = meta_eval_seed(cfg.seed, point);
    res.points.push_back({steps, eval_adaptation(actor, eval_pool, o, &train_pool, &res.ledger)});
    emit_point(metrics, res.points.back(), point);
    ++point;
  };

  evaluate_now(0);
  long next_eval = cfg.eval_every > 0 ? cfg.eval_every : cfg.budget_steps + 1;
  auto after = [&](long steps) {
    if (steps >= next_eval && steps < cfg.budget_steps) {
      evaluate_now(steps);
      while (next_eval <= steps) next_eval += cfg.eval_every;
    }
  };
  for (std::uint64_t b = 0; res.train_steps < cfg.budget_steps; ++b) {
    const env::Pool tasks = draw_tasks(train_pool, cfg.n_envs, derive_seed(cfg.seed, 0x100000 + b));
    train_on_tasks(net, adam, tasks, cfg, derive_seed(cfg.seed, 0x200000 + b), res.train_steps, after, metrics);
  }
  if (res.train_steps > 0) evaluate_now(res.train_steps);
  return res;
}

}  // namespace ulee::eval
