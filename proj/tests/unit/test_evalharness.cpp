#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "../support.hpp"
#include "ulee/evalharness.hpp"
#include "ulee/report.hpp"

using namespace ulee;
using namespace ulee::eval;

namespace {

env::BenchConfig short_bench() {
  env::BenchConfig b;
  b.max_steps = 64;
  return b;
}

const env::PoolSplit& pools() {
  static const env::PoolSplit split = env::split_pool(env::build_pool(short_bench(), 600, 11), 1.0 / 3.0, 2);
  return split;
}

EvalOptions small_eval(int n, int episodes, std::uint64_t seed) {
  EvalOptions o;
  o.n_envs = n;
  o.episodes = episodes;
  o.seed = seed;
  o.block = 16;
  return o;
}

policy::PolicyConfig tiny_policy() {
  policy::PolicyConfig c;
  c.embed_dim = 4;
  c.conv_channels = 4;
  c.hidden = 16;
  c.head_hidden = {16};
  return c;
}

/// Smallest score with at least p% of scores at or below it, by counting.
double counting_percentile(const std::vector<double>& scores, int p) {
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<long>(sorted.size());
  for (double v : sorted) {
    const long at_or_below = std::count_if(sorted.begin(), sorted.end(), [&](double x) { return x <= v; });
    if (at_or_below * 100 >= p * n) return v;
  }
  return sorted.back();
}

}  // namespace

TEST_CASE("percentiles match a counting oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 1 + uniform_int(rng, 200);
    std::vector<double> s(static_cast<std::size_t>(n));
    for (auto& x : s) x = uniform_int(rng, 4) == 0 ? 0.0 : std::round(uniform01(rng) * 10) / 10;
    const auto t = percentile_table(s);
    CHECK(t.p20 == counting_percentile(s, 20));
    CHECK(t.p40 == counting_percentile(s, 40));
    CHECK(t.p20 <= t.p40);
    double mean = 0.0;
    for (double x : s) mean += x / n;
    CHECK(t.mean == doctest::Approx(mean).epsilon(1e-12));
  }
  const std::vector<double> five{0.5, 0.1, 0.9, 0.3, 0.7};
  CHECK(percentile_table(five).p20 == 0.1);
  CHECK(percentile_table(five).p40 == 0.3);
}

TEST_CASE("scripted solver reaches every goal in its first episode") {
  const auto& p = pools();
  const auto lifetimes = testing::evaluation_lifetimes(p.eval, 48, 3);
  testing::PlanningActor solver(lifetimes, 0);
  REQUIRE(solver.all_solvable());
  train::StepLedger ledger;
  const auto rep = eval_exploration(solver, p.eval, small_eval(48, 20, 3), &p.train, &ledger);
  REQUIRE(rep.tasks.size() == 48);
  for (double r : rep.curves.reached) CHECK(r == 1.0);
  CHECK(rep.curves.table.mean == 1.0);
  CHECK(ledger.get(train::StepClass::Pretrain) == 0);
  CHECK(ledger.get(train::StepClass::Eval) > 0);
  CHECK(rep.ledger == ledger.to_json());
}

TEST_CASE("adaptation: a policy that knows the solution from episode 2 gives a flat curve") {
  const auto& p = pools();
  const auto lifetimes = testing::evaluation_lifetimes(p.eval, 32, 4);
  testing::PlanningActor learner(lifetimes, 1);
  auto opt = small_eval(32, 30, 4);
  opt.last_k = 10;
  const auto rep = eval_adaptation(learner, p.eval, opt);
  const auto& m = rep.curves.mean_return;
  CHECK(m[0] == 0.0);
  for (std::size_t j = 1; j < m.size(); ++j) CHECK(m[j] == m[1]);
  CHECK(m[1] > 0.5);
  for (const auto& t : rep.tasks) {
    CHECK(t.score == doctest::Approx(t.returns[1]).epsilon(1e-12));
    CHECK(t.successes[0] == 0);
  }
}

TEST_CASE("all-fail tasks score zero; curves are monotone and bounded") {
  const auto& p = pools();
  const auto idle = testing::constant_actor(env::Action::TurnLeft);
  auto opt = small_eval(24, 10, 5);
  opt.last_k = 5;
  const auto rep = eval_adaptation(idle, p.eval, opt);
  for (const auto& t : rep.tasks) CHECK(t.score == 0.0);
  CHECK(rep.curves.table.mean == 0.0);

  rollout::RandomActor random;
  const auto ex = eval_exploration(random, p.eval, small_eval(64, 20, 6));
  for (std::size_t j = 0; j < ex.curves.reached.size(); ++j) {
    CHECK(ex.curves.reached[j] >= 0.0);
    CHECK(ex.curves.reached[j] <= 1.0);
    if (j > 0) CHECK(ex.curves.reached[j] >= ex.curves.reached[j - 1]);
  }
  for (const auto& t : ex.tasks)
    for (double r : t.returns) CHECK(r <= 1.0);
}

TEST_CASE("random baseline is reproducible and stable across seeds") {
  const auto& p = pools();
  rollout::RandomActor random;
  auto opt = small_eval(150, 20, 7);
  opt.random_baseline = false;
  const auto a = eval_exploration(random, p.eval, opt);
  CHECK(a.summary() == eval_exploration(random, p.eval, opt).summary());
  opt.seed = 8;
  const auto b = eval_exploration(random, p.eval, opt);
  const double pa = a.curves.reached.back(), pb = b.curves.reached.back();
  const double se = std::sqrt(pa * (1 - pa) / 150 + pb * (1 - pb) / 150);
  MESSAGE("random reach@20: " << pa << " vs " << pb);
  CHECK(std::abs(pa - pb) <= 4 * se + 1e-9);
}

TEST_CASE("overlapping pools abort the evaluation") {
  const auto& p = pools();
  rollout::RandomActor random;
  CHECK_THROWS_AS(eval_exploration(random, p.eval, small_eval(8, 2, 1), &p.eval), ContractViolation);
  env::Pool mixed = p.train;
  mixed.specs.push_back(p.eval.specs.front());
  CHECK_THROWS_AS(eval_adaptation(random, p.eval, small_eval(8, 2, 1), &mixed), ContractViolation);
  CHECK_NOTHROW(check_disjoint(p.eval, &p.train));
}

TEST_CASE("meta fine-tuning with no budget is an adaptation evaluation of the initialisation") {
  const auto& p = pools();
  policy::PolicyNet<float> net(tiny_policy());
  Rng rng(9);
  net.init(rng);
  auto cfg = meta_defaults();
  cfg.eval.n_envs = 16;
  cfg.eval.block = 16;
  cfg.seed = 21;
  const auto res = finetune_meta(net, p.train, p.eval, cfg);
  REQUIRE(res.points.size() == 1);
  CHECK(res.train_steps == 0);
  rollout::PolicyActor actor(net);
  auto o = cfg.eval;
  o.seed = meta_eval_seed(cfg.seed, 0);
  const auto direct = eval_adaptation(actor, p.eval, o, &p.train);
  auto strip = [](nlohmann::json j) {
    j.erase("ledger");
    return j;
  };
  CHECK(strip(res.points[0].report.summary()) == strip(direct.summary()));
  CHECK(res.points[0].report.episodes == 25);
  CHECK(res.points[0].report.last_k == 5);
}

TEST_CASE("meta fine-tuning resamples evaluation tasks at every point") {
  const auto& p = pools();
  policy::PolicyNet<float> net(tiny_policy());
  Rng rng(10);
  net.init(rng);
  auto cfg = meta_defaults();
  cfg.n_envs = 8;
  cfg.steps_per_env = 256;
  cfg.update_interval = 128;
  cfg.ppo.minibatches = 2;
  cfg.ppo.bptt = 64;
  cfg.budget_steps = 4096;
  cfg.eval_every = 2048;
  cfg.eval.n_envs = 8;
  cfg.eval.block = 8;
  cfg.eval.random_baseline = false;
  std::ostringstream os;
  train::MetricsWriter w(os);
  const auto res = finetune_meta(net, p.train, p.eval, cfg, &w);
  REQUIRE(res.points.size() == 3);
  CHECK(res.train_steps == 4096);
  CHECK(res.points[0].steps == 0);
  CHECK(res.points[1].steps == 2048);
  CHECK(res.points[2].steps == 4096);
  CHECK(res.points[0].report.task_hash != res.points[1].report.task_hash);
  CHECK(res.points[1].report.task_hash != res.points[2].report.task_hash);
  CHECK(res.ledger.get(train::StepClass::Pretrain) == 0);
  CHECK(res.ledger.get(train::StepClass::Eval) > 0);
}

TEST_CASE("fixed-set fine-tuning: scratch and initialised runs see the same tasks") {
  const auto& p = pools();
  auto cfg = fixed_defaults();
  cfg.n_envs = 8;
  cfg.steps_per_env = 256;
  cfg.update_interval = 128;
  cfg.ppo.minibatches = 2;
  cfg.ppo.bptt = 64;
  cfg.budget_steps = 2048;
  cfg.eval.block = 8;
  cfg.seed = 4;
  policy::PolicyNet<float> a(tiny_policy()), b(tiny_policy());
  Rng ra(1), rb(2);
  a.init(ra);
  b.init(rb);
  const auto fa = finetune_fixed(a, p.eval, cfg);
  const auto fb = finetune_fixed(b, p.eval, cfg);
  CHECK(fa.fixed_pool_hash == fb.fixed_pool_hash);
  REQUIRE(fa.points.size() == 2);
  REQUIRE(fb.points.size() == 2);
  for (std::size_t i = 0; i < fa.points[0].report.tasks.size(); ++i)
    CHECK(fa.points[0].report.tasks[i].env_id == fb.points[0].report.tasks[i].env_id);
  CHECK(fa.points[0].report.task_hash == fa.points[1].report.task_hash);
  CHECK(fa.points[0].report.random.table.mean == fb.points[0].report.random.table.mean);
  for (const auto& pt : fa.points)
    for (const auto& t : pt.report.tasks) {
      CHECK(t.returns.size() == 30);
      for (double r : t.returns) CHECK(r <= 1.0);
    }
  CHECK(fa.train_steps == 2048);
}

TEST_CASE("report tables reproduce every summary from task records") {
  const auto& p = pools();
  rollout::RandomActor random;
  std::ostringstream os;
  train::MetricsWriter w(os);
  eval_exploration(random, p.eval, small_eval(20, 10, 12)).write(w, {{"eval_point", 0}});
  auto o = small_eval(20, 12, 13);
  o.last_k = 4;
  eval_adaptation(random, p.eval, o).write(w, {{"eval_point", 0}});
  std::istringstream in(os.str());
  const auto t = report::build_tables(in);
  CHECK(t.mismatches.empty());
  CHECK(t.summaries_checked == 4);  // policy and random curves of two summaries
  CHECK(t.csv.count("eval_curves.csv") == 1);
  CHECK(t.csv.count("eval_percentiles.csv") == 1);

  // a tampered summary is caught
  std::string text = os.str();
  const auto pos = text.rfind("\"p40\":");
  REQUIRE(pos != std::string::npos);
  text.insert(pos + 6, "1");
  std::istringstream bad(text);
  CHECK(!report::build_tables(bad).mismatches.empty());
}
