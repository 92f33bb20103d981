#include <doctest.h>

#include <sstream>

#include "../support.hpp"
#include "ulee/pool.hpp"
#include "ulee/trainer.hpp"

using namespace ulee;
using namespace ulee::train;
using env::Action;
using env::Pos;

namespace {

const env::KindId kRedBall = env::object_kind(1, 0);
const env::KindId kBlueKey = env::object_kind(0, 2);

config::TrainConfig tiny_config(const std::string& variant = "ulee") {
  config::TrainConfig c;
  c.bench.max_steps = 32;
  c.policy.embed_dim = 4;
  c.policy.conv_channels = 4;
  c.policy.hidden = 16;
  c.policy.head_hidden = {16};
  c.curriculum.predictor_hidden = {16};
  c.n_envs = 8;
  c.steps_per_env = 256;
  c.update_interval = 128;
  c.ppo.minibatches = 2;
  c.ppo.bptt = 32;
  c.gs_ppo = c.ppo;
  c.variant = config::Variant::parse(variant);
  c.seed = 5;
  return c;
}

env::Pool tiny_pool(const config::TrainConfig& c) { return env::build_pool(c.bench, 64, 3); }

std::vector<nn::Mat<float>> snapshot(const nn::ParamSet<float>& p) {
  std::vector<nn::Mat<float>> out;
  for (int i = 0; i < p.num_blocks(); ++i) out.push_back(p.value(i));
  return out;
}

bool same_params(const nn::ParamSet<float>& p, const std::vector<nn::Mat<float>>& s) {
  for (int i = 0; i < p.num_blocks(); ++i)
    if (p.value(i) != s[static_cast<std::size_t>(i)]) return false;
  return true;
}

std::string run_metrics(const config::TrainConfig& cfg, int batches) {
  std::ostringstream os;
  MetricsWriter w(os);
  Pretrainer p(cfg, tiny_pool(cfg), &w);
  for (int b = 0; b < batches; ++b) p.run_batch();
  return os.str();
}

}  // namespace

TEST_CASE("step ledger arithmetic") {
  StepLedger l;
  l.add(StepClass::Pretrain, 1000);
  l.add(StepClass::GoalSearch, 250);
  l.add(StepClass::Eval, 7);
  CHECK(l.total() == 1257);
  CHECK(l.goal_search_overhead() == 0.25);
  CHECK_THROWS_AS(l.add(StepClass::SedExtra, -1), ContractViolation);
  CHECK(l.to_json()[to_string(StepClass::Pretrain)] == 1000);

  config::CurriculumConfig c;
  CHECK(goal_search_steps_per_env(c, 128, true) == 2 * 128 + 1 * 3 * 128);
  CHECK(goal_search_steps_per_env(c, 128, false) == 256);
  c.num_gs_updates = 3;
  CHECK(goal_search_steps_per_env(c, 256, true) == 2 * 256 + 3 * 3 * 256);
}

TEST_CASE("run_lifetime") {
  auto spec = testing::room_spec(7, {{kRedBall, Pos{2, 3}}, {kBlueKey, Pos{1, 1}}}, {Pos{3, 3}, env::Dir::North}, 16);
  const auto e = testing::instance(spec);
  const int n_kinds = env::num_kinds(env::kMinShapes);
  Rng rng(1);

  SUBCASE("goal f(s0) succeeds at t = 0 in every episode") {
    const goals::Goal g{goals::f_counts(e.initial_state(), n_kinds)};
    const auto turn = testing::constant_actor(Action::TurnLeft);
    const auto tr = run_lifetime(turn, e, g, 4, rng);
    CHECK(tr.successes == std::vector<std::uint8_t>{1, 1, 1, 1});
    REQUIRE(tr.steps.size() == 4);
    CHECK(tr.steps[0].input.prev_action[0] == -1);
    CHECK(tr.steps[0].input.prev_reward[0] == 0.0f);
    for (const auto& s : tr.steps) {
      CHECK(s.input.episode_start[0] == 1);
      CHECK(s.reward == 1.0);
    }
    CHECK(tr.steps[1].input.prev_action[0] == static_cast<int>(Action::TurnLeft));
    CHECK(tr.steps[1].input.prev_reward[0] == 1.0f);
  }

  SUBCASE("a single episode is an ordinary episode") {
    env::EnvInstance picked = e;
    picked.advance(Action::PickUp);
    const goals::Goal g{goals::f_counts(picked.state(), n_kinds)};
    const auto idle = testing::constant_actor(Action::TurnLeft);
    const auto tr = run_lifetime(idle, e, g, 1, rng);
    CHECK(tr.successes == std::vector<std::uint8_t>{0});
    CHECK(tr.steps.size() == 16);
    for (const auto& s : tr.steps) CHECK(s.reward == 0.0);
  }

  SUBCASE("scripted lifetime matches a hand trace") {
    env::EnvInstance picked = e;
    picked.advance(Action::PickUp);
    const goals::Goal g{goals::f_counts(picked.state(), n_kinds)};
    // even episodes pick up the ball ahead; odd episodes face west first,
    // grab nothing, and idle out the episode
    testing::ScriptedActor alternate(
        [](const policy::StepInputs& in, std::size_t j, const env::WorldState&, float* mem) {
          if (in.episode_start[j]) {
            if (in.prev_action[j] >= 0) mem[0] += 1.0f;
            mem[1] = 0.0f;
          }
          const int step = static_cast<int>(mem[1]);
          mem[1] += 1.0f;
          if (static_cast<int>(mem[0]) % 2 == 0) return Action::PickUp;
          return step == 0 ? Action::TurnLeft : (step == 1 ? Action::PickUp : Action::TurnRight);
        },
        2);
    const auto tr = run_lifetime(alternate, e, g, 4, rng);
    CHECK(tr.successes == std::vector<std::uint8_t>{1, 0, 1, 0});
    CHECK(tr.steps.size() == 1 + 16 + 1 + 16);
    CHECK(tr.steps[0].reward == 1.0);
    CHECK(tr.steps[17].reward == 1.0);
    CHECK(tr.steps[17].input.episode_start[0] == 1);
    CHECK(tr.steps[17].input.prev_reward[0] == 0.0f);
    CHECK(tr.steps[1].input.episode_start[0] == 1);
    CHECK(tr.steps[2].input.episode_start[0] == 0);
    double total = 0.0;
    for (const auto& s : tr.steps) total += s.reward;
    CHECK(total == 2.0);
  }
}

TEST_CASE("pretraining batch bookkeeping") {
  const auto cfg = tiny_config();
  Pretrainer p(cfg, tiny_pool(cfg));
  std::vector<long> resets, goals_per_batch;
  long lifetime_steps = 0;
  p.on_lifetimes_done = [&](long, const rollout::StreamBatch& b) {
    for (const auto& s : b.status()) {
      resets.push_back(s.memory_resets);
      CHECK(s.steps == cfg.steps_per_env);
    }
    goals_per_batch.push_back(static_cast<long>(b.spec().goals.size()));
    lifetime_steps += b.total_steps();
  };
  const auto gs_per_env = goal_search_steps_per_env(cfg.curriculum, cfg.bench.max_steps, true);
  for (int batch = 1; batch <= 3; ++batch) {
    p.run_batch();
    const auto& l = p.ledger();
    CHECK(l.get(StepClass::Pretrain) == batch * cfg.n_envs * cfg.steps_per_env);
    CHECK(l.get(StepClass::GoalSearch) == batch * cfg.n_envs * gs_per_env);
    CHECK(l.get(StepClass::SedExtra) == 0);
    CHECK(l.get(StepClass::Eval) == 0);
    CHECK(l.total() == l.get(StepClass::Pretrain) + l.get(StepClass::GoalSearch));
  }
  CHECK(lifetime_steps == p.ledger().get(StepClass::Pretrain));
  for (long r : resets) CHECK(r == 1);
  for (long g : goals_per_batch) CHECK(g == cfg.n_envs);
  CHECK(p.buffer().size() == 3u * cfg.n_envs);
  for (const auto& r : p.buffer()) {
    const double scaled = r.difficulty * cfg.curriculum.difficulty_k;
    CHECK(std::abs(scaled - std::round(scaled)) < 1e-12);
  }
}

TEST_CASE("deterministic runs are identical") {
  const auto cfg = tiny_config();
  const auto a = run_metrics(cfg, 2);
  CHECK(!a.empty());
  CHECK(a == run_metrics(cfg, 2));
  auto other = cfg;
  other.seed = 6;
  CHECK(a != run_metrics(other, 2));
}

TEST_CASE("explicit default flags reproduce the default pipeline") {
  CHECK(config::Variant::parse("adversarial+bounded").name() == config::Variant::parse("ulee").name());
  CHECK(run_metrics(tiny_config("adversarial+bounded"), 2) == run_metrics(tiny_config("ulee"), 2));
}

TEST_CASE("random search with uniform sampling") {
  const auto cfg = tiny_config("random+uniform");
  std::ostringstream os;
  MetricsWriter w(os);
  Pretrainer p(cfg, tiny_pool(cfg), &w);
  const auto gs0 = snapshot(p.search_policy().params());
  p.run_batch();
  p.run_batch();
  CHECK(same_params(p.search_policy().params(), gs0));
  CHECK(p.ledger().get(StepClass::GoalSearch) ==
        2L * cfg.n_envs * goal_search_steps_per_env(cfg.curriculum, cfg.bench.max_steps, false));
  CHECK(os.str().find("search_policy") == std::string::npos);
  CHECK(os.str().find("\"policy\"") != std::string::npos);
}

TEST_CASE("single-episode difficulty books its extra episodes separately") {
  const auto cfg = tiny_config("sed");
  Pretrainer p(cfg, tiny_pool(cfg));
  p.run_batch();
  const long sed = p.ledger().get(StepClass::SedExtra);
  CHECK(sed > 0);
  CHECK(sed <= static_cast<long>(cfg.n_envs) * cfg.curriculum.difficulty_k * cfg.bench.max_steps);
  CHECK(p.ledger().get(StepClass::Pretrain) == static_cast<long>(cfg.n_envs) * cfg.steps_per_env);
}

TEST_CASE("learning-progress labels") {
  auto cfg = tiny_config("lp_post");
  CHECK_THROWS_AS(Pretrainer(cfg, tiny_pool(cfg)), ConfigError);
  cfg.steps_per_env = 384;  // room for 2k full-length episodes
  Pretrainer p(cfg, tiny_pool(cfg));
  p.run_batch();
  for (const auto& r : p.buffer()) {
    CHECK(r.difficulty >= 0.0);
    CHECK(r.difficulty <= 1.0);
  }
}

TEST_CASE("a search policy trained on a corner reward finds the corner more often than random") {
  auto spec = testing::room_spec(7, {{kRedBall, Pos{5, 5}}}, {Pos{3, 3}, env::Dir::North}, 24);
  const auto e = testing::instance(spec);
  const Pos corner{1, 1};
  const int n = 20;
  rollout::StateScorer corner_reward = [&](std::span<const int>, std::span<const env::WorldState* const> states,
                                           std::span<double> out) {
    for (std::size_t j = 0; j < states.size(); ++j) out[j] = states[j]->agent == corner ? 1.0 : 0.0;
  };
  rollout::LifetimeSpec ls;
  ls.reward = rollout::RewardKind::Predicted;
  ls.scorer = corner_reward;

  auto corner_rate = [&](rollout::StreamBatch& b, Rng& rng) {
    std::vector<std::uint8_t> hit(static_cast<std::size_t>(n));
    int episodes = 0, hits = 0;
    b.set_state_observer([&](int i, const env::WorldState& s) {
      if (s.agent == corner) hit[static_cast<std::size_t>(i)] = 1;
    });
    for (int phase = 0; phase < 5; ++phase) {
      std::fill(hit.begin(), hit.end(), std::uint8_t{0});
      b.begin_new_phase(1, spec->max_steps);
      b.run_to_end(rng);
      for (auto h : hit) hits += h;
      episodes += n;
    }
    b.set_state_observer(nullptr);
    return static_cast<double>(hits) / episodes;
  };

  policy::PolicyConfig pc;
  pc.embed_dim = 4;
  pc.conv_channels = 4;
  pc.hidden = 32;
  pc.head_hidden = {32};
  policy::PolicyNet<float> gs(pc);
  Rng rng(17);
  gs.init(rng);
  rl::PpoConfig ppo;
  ppo.lr = 1e-3;
  ppo.minibatches = 4;
  ppo.bptt = 24;
  rl::Adam<float> adam(gs.params(), ppo.adam());
  rollout::PolicyActor actor(gs);
  rollout::StreamBatch search(std::vector<env::EnvInstance>(n, e), actor, ls);
  const auto stats = run_goal_search_training(gs, adam, search, 150, 3, ppo, rng);
  CHECK(stats.updates.size() == 150);
  CHECK(stats.steps == 150L * n * 3 * spec->max_steps);
  const double trained = corner_rate(search, rng);

  rollout::RandomActor random;
  rollout::StreamBatch baseline(std::vector<env::EnvInstance>(n, e), random, ls);
  const double chance = corner_rate(baseline, rng);
  MESSAGE("corner reached: trained " << trained << ", random " << chance);
  CHECK(trained > chance);
}
