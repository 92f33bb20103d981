#include <doctest.h>

#include <deque>
#include <map>
#include <sstream>

#include "../support.hpp"
#include "ulee/curriculum.hpp"

using namespace ulee;
using namespace ulee::curriculum;
using env::Action;
using env::Pos;

namespace {

const env::KindId kRedBall = env::object_kind(1, 0);
const env::KindId kBlueKey = env::object_kind(0, 2);

PredictorConfig small_predictor(int grid) {
  PredictorConfig c;
  c.grid_size = grid;
  c.embed_dim = 3;
  c.channels = 2;
  c.hidden = {4};
  return c;
}

/// Open 9x9 room with a few objects and the agent somewhere on the floor.
goals::GridGoal random_room(Rng& rng, int objects) {
  goals::GridGoal g;
  g.size = 9;
  g.cells.assign(81, env::kFloor);
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c)
      if (r == 0 || c == 0 || r == 8 || c == 8) g.cells[static_cast<std::size_t>(r * 9 + c)] = env::kWall;
  for (int placed = 0; placed < objects;) {
    const int cell = 10 + uniform_int(rng, 61);
    auto& k = g.cells[static_cast<std::size_t>(cell)];
    if (k != env::kFloor) continue;
    k = static_cast<env::KindId>(env::kFirstObject + uniform_int(rng, env::kMinShapes * env::kNumColors));
    ++placed;
  }
  g.agent = {4, 4};
  return g;
}

/// Moves `m` distinct objects to free floor cells.
goals::GridGoal displace(const goals::GridGoal& base, int m, Rng& rng) {
  goals::GridGoal g = base;
  std::vector<int> objs;
  for (int i = 0; i < 81; ++i)
    if (env::is_object(g.cells[static_cast<std::size_t>(i)])) objs.push_back(i);
  shuffle(objs.begin(), objs.end(), rng);
  for (int j = 0; j < m; ++j) {
    int to;
    do to = 10 + uniform_int(rng, 61);
    while (base.cells[static_cast<std::size_t>(to)] != env::kFloor || g.cells[static_cast<std::size_t>(to)] != env::kFloor ||
           to == 40);
    g.cells[static_cast<std::size_t>(to)] = g.cells[static_cast<std::size_t>(objs[static_cast<std::size_t>(j)])];
    g.cells[static_cast<std::size_t>(objs[static_cast<std::size_t>(j)])] = env::kFloor;
  }
  return g;
}

DifficultyRecord record(const goals::GridGoal& goal, const goals::GridGoal& info, double d) {
  return {goal, info, d};
}

}  // namespace

TEST_CASE("candidate count and spacing") {
  CHECK(candidate_count(2, 128, 15) == 18);
  CHECK(candidate_count(2, 128, 1) == 256);
  CHECK(candidate_count(1, 30, 15) == 2);
  CHECK_THROWS_AS(candidate_count(0, 128, 15), ContractViolation);

  auto spec = testing::room_spec(7, {{kRedBall, Pos{1, 3}}}, {Pos{3, 3}, env::Dir::North}, 128);
  auto e = testing::instance(spec);
  const goals::GoalMapper counts(goals::Mapping::Counts, env::num_kinds(env::kMinShapes));

  SUBCASE("stationary search yields f(s0) everywhere and leaves s0 untouched") {
    // toggling an empty floor cell changes nothing
    auto still = testing::constant_actor(Action::Toggle);
    rollout::StreamBatch search({e}, still, rollout::LifetimeSpec{});
    Rng rng(1);
    const auto sets = collect_candidates(search, 2, 15, counts, rng);
    REQUIRE(sets.size() == 1);
    CHECK(sets[0].goals.size() == 18);
    for (const auto& g : sets[0].goals) CHECK(g == counts(e.initial_state()));
    CHECK(sets[0].env_info == goals::f_grid(e.initial_state()));
    CHECK(search.envs()[0].initial_state() == e.initial_state());
  }

  SUBCASE("candidates sit at t = 0, n, 2n, ... of the concatenated stream") {
    Rng script_rng(7);
    std::vector<Action> script(256);
    for (auto& a : script) a = static_cast<Action>(uniform_int(script_rng, env::kNumActions));
    long cursor = 0;
    testing::ScriptedActor scripted([&](const policy::StepInputs&, std::size_t, const env::WorldState&, float*) {
      return script[static_cast<std::size_t>(cursor++)];
    });
    for (int spacing : {1, 15}) {
      cursor = 0;
      rollout::StreamBatch search({e}, scripted, rollout::LifetimeSpec{});
      Rng rng(1);
      const auto sets = collect_candidates(search, 2, spacing, counts, rng);
      CHECK(static_cast<int>(sets[0].goals.size()) == candidate_count(2, 128, spacing));
      // replay: the episode ends at step 128 and restarts from s0
      env::EnvInstance replay = e;
      for (int t = 0; t < 256; ++t) {
        if (t == 128) replay.reset_episode();
        if (t % spacing == 0) {
          const auto idx = static_cast<std::size_t>(t / spacing);
          CHECK(sets[0].source_states[idx] == goals::f_grid(replay.state()));
          CHECK(sets[0].goals[idx] == counts(replay.state()));
        }
        replay.advance(script[static_cast<std::size_t>(t)]);
      }
    }
  }
}

TEST_CASE("predictor: untrained output, determinism, squashing, geometry") {
  Rng rng(3);
  DifficultyPredictor<float> dp(PredictorConfig{});
  dp.init(rng);
  for (int i = 0; i < 50; ++i) {
    const auto g = testing::random_grid(9, env::kMinShapes, rng);
    const auto info = testing::random_grid(9, env::kMinShapes, rng);
    CHECK(dp.predict(g, info) == 0.5);
  }
  // perturb all weights so the output is not the constant 0.5
  for (int b = 0; b < dp.params().num_blocks(); ++b)
    dp.params().value(b) += nn::Mat<float>::Random(dp.params().value(b).rows(), dp.params().value(b).cols()) * 3.0f;
  for (int i = 0; i < 200; ++i) {
    const auto g = testing::random_grid(9, env::kMinShapes, rng);
    const auto info = testing::random_grid(9, env::kMinShapes, rng);
    const double p = dp.predict(g, info);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(dp.predict(g, info) == p);
  }
  const auto small = testing::random_grid(7, env::kMinShapes, rng);
  const auto big = testing::random_grid(9, env::kMinShapes, rng);
  CHECK_THROWS_AS(dp.predict(small, big), ContractViolation);
}

TEST_CASE("predictor gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    DifficultyPredictor<double> dp(small_predictor(5));
    dp.init(rng);
    for (int b = 0; b < dp.params().num_blocks(); ++b)
      dp.params().value(b) += nn::Mat<double>::Random(dp.params().value(b).rows(), dp.params().value(b).cols()) * 0.3;
    std::vector<goals::GridGoal> g, info;
    std::vector<double> y;
    for (int i = 0; i < 4; ++i) {
      g.push_back(testing::random_grid(5, env::kMinShapes, rng));
      info.push_back(testing::random_grid(5, env::kMinShapes, rng));
      y.push_back(uniform01(rng));
    }
    std::vector<PredictorInput> in;
    for (int i = 0; i < 4; ++i) in.push_back({&g[static_cast<std::size_t>(i)], &info[static_cast<std::size_t>(i)]});
    dp.params().zero_grad();
    dp.loss(in, y, true);
    for (int b = 0; b < dp.params().num_blocks(); ++b) {
      const double err = testing::block_relative_error(dp.params(), b, [&] { return dp.loss(in, y, false); }, rng);
      CHECK_MESSAGE(err < 1e-5, dp.params().name(b));
    }
  }
}

TEST_CASE("predictor loss is the mean squared residual") {
  Rng rng(5);
  DifficultyPredictor<double> dp(small_predictor(9));
  dp.init(rng);
  for (int b = 0; b < dp.params().num_blocks(); ++b)
    dp.params().value(b) += nn::Mat<double>::Random(dp.params().value(b).rows(), dp.params().value(b).cols()) * 0.5;
  std::vector<goals::GridGoal> g, info;
  for (int i = 0; i < 3; ++i) {
    g.push_back(random_room(rng, 4));
    info.push_back(random_room(rng, 4));
  }
  const std::vector<double> y{0.2, 0.6, 1.0};
  double want = 0.0;
  std::vector<PredictorInput> in;
  for (int i = 0; i < 3; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double r = dp.predict(g[k], info[k]) - y[k];
    want += r * r / 3.0;
    in.push_back({&g[k], &info[k]});
  }
  CHECK(std::abs(dp.loss(in, y, false) - want) <= 1e-10);
}

TEST_CASE("predictor training schedule and convergence") {
  Rng rng(6);
  SUBCASE("update counts") {
    DifficultyPredictor<float> dp(small_predictor(9));
    dp.init(rng);
    rl::Adam<float> adam(dp.params(), rl::AdamConfig{});
    GoalBuffer buf(1000);
    const auto room = random_room(rng, 3);
    for (int i = 0; i < 10; ++i) buf.push(record(room, room, 0.4));
    CHECK(train_difficulty_predictor(dp, adam, buf, PredictorTraining{}, rng).updates == 2);
    for (int i = 0; i < 590; ++i) buf.push(record(room, room, 0.4));
    CHECK(train_difficulty_predictor(dp, adam, buf, PredictorTraining{}, rng).updates == 6);
    CHECK(adam.steps() == 8);
    GoalBuffer empty(4);
    const auto rep = train_difficulty_predictor(dp, adam, empty, PredictorTraining{}, rng);
    CHECK(rep.skipped);
    CHECK(rep.updates == 0);
  }
  SUBCASE("constant target") {
    DifficultyPredictor<float> dp(PredictorConfig{});
    dp.init(rng);
    rl::Adam<float> adam(dp.params(), rl::AdamConfig{});
    GoalBuffer buf(16);
    const auto room = random_room(rng, 5);
    const auto info = random_room(rng, 5);
    for (int i = 0; i < 16; ++i) buf.push(record(room, info, 0.6));
    PredictorTraining cfg;
    cfg.epochs = 200;
    const auto rep = train_difficulty_predictor(dp, adam, buf, cfg, rng);
    CHECK(rep.updates == 200);
    CHECK(buffer_loss(dp, buf) < 0.01);
    CHECK(std::abs(dp.predict(room, info) - 0.6) < 0.1);
  }
}

TEST_CASE("predictor learns a displacement-count labelling") {
  Rng rng(8);
  auto make = [&](int n, GoalBuffer& buf) {
    for (int i = 0; i < n; ++i) {
      const auto base = random_room(rng, 6);
      const int m = uniform_int(rng, 5);
      buf.push(record(displace(base, m, rng), base, m / 4.0));
    }
  };
  GoalBuffer train(3000), held(500);
  make(3000, train);
  make(500, held);
  DifficultyPredictor<float> dp(PredictorConfig{});
  dp.init(rng);
  rl::Adam<float> adam(dp.params(), rl::AdamConfig{});
  PredictorTraining cfg;
  cfg.epochs = 30;
  cfg.minibatch = 64;
  cfg.lr = 1e-3;
  const double before = buffer_loss(dp, held);
  train_difficulty_predictor(dp, adam, train, cfg, rng);
  const double after = buffer_loss(dp, held);
  MESSAGE("held-out mse " << before << " -> " << after);
  CHECK(after < 0.05);
}

TEST_CASE("bounded goal sampling") {
  Rng rng(9);
  const std::vector<double> three{0.05, 0.5, 0.95};
  for (int i = 0; i < 100; ++i) {
    const auto c = sample_goal(three, 0.1, 0.9, rng);
    CHECK(c.index == 1);
    CHECK(!c.fallback);
  }

  // binomial check on two in-band goals
  const std::vector<double> two_in{0.5, 0.5, 0.05};
  std::array<int, 3> hits{};
  for (int i = 0; i < 10000; ++i) ++hits[sample_goal(two_in, 0.1, 0.9, rng).index];
  CHECK(hits[2] == 0);
  CHECK(std::abs(hits[0] - 5000) <= 150);  // 3 sigma

  // fallback: uniform over all, chi-square with 2 dof at p = 0.001
  const std::vector<double> none{0.95, 0.95, 0.95};
  std::array<int, 3> fb{};
  for (int i = 0; i < 10000; ++i) {
    const auto c = sample_goal(none, 0.1, 0.9, rng);
    CHECK(c.fallback);
    ++fb[c.index];
  }
  double chi = 0.0;
  for (int h : fb) chi += (h - 10000.0 / 3) * (h - 10000.0 / 3) / (10000.0 / 3);
  CHECK(chi < 13.82);

  // all in band: uniform over the multiset, 4 dof at p = 0.001
  const std::vector<double> band{0.1, 0.3, 0.5, 0.7, 0.9};
  std::array<int, 5> u{};
  for (int i = 0; i < 10000; ++i) ++u[sample_goal(band, 0.1, 0.9, rng).index];
  chi = 0.0;
  for (int h : u) chi += (h - 2000.0) * (h - 2000.0) / 2000.0;
  CHECK(chi < 18.47);

  CHECK_THROWS_AS(sample_goal(std::vector<double>{}, 0.1, 0.9, rng), ContractViolation);
  CHECK_THROWS_AS(sample_goal(three, 0.9, 0.1, rng), ContractViolation);
  CHECK_THROWS_AS(sample_goal(three, -0.1, 0.9, rng), ContractViolation);
}

TEST_CASE("duplicate candidates weight the draw") {
  Rng rng(10);
  DifficultyPredictor<float> dp(small_predictor(7));
  dp.init(rng);  // constant 0.5, every candidate in band
  auto spec = testing::room_spec(7, {{kRedBall, Pos{1, 3}}}, {Pos{3, 3}, env::Dir::North});
  auto e = testing::instance(spec);
  const goals::GoalMapper counts(goals::Mapping::Counts, env::num_kinds(env::kMinShapes));
  CandidateCollector col(1, counts, e.initial_state());
  col.observe(e.state());
  col.observe(e.state());
  env::EnvInstance moved = e;
  moved.advance(Action::Forward);
  moved.advance(Action::PickUp);
  col.observe(moved.state());
  const auto& set = col.result();
  REQUIRE(set.goals.size() == 3);
  REQUIRE(!(set.goals[0] == set.goals[2]));
  int first = 0;
  for (int i = 0; i < 9000; ++i) {
    const auto& g = sample_goal(set, dp, 0.1, 0.9, rng);
    CHECK((g == set.goals[0] || g == set.goals[2]));
    first += g == set.goals[0];
  }
  CHECK(std::abs(first - 6000) <= 3 * std::sqrt(9000 * 2.0 / 9));
}

TEST_CASE("empirical difficulty") {
  using S = std::vector<std::uint8_t>;
  CHECK(empirical_difficulty(S{1, 1, 1, 1, 1}, 5) == 0.0);
  CHECK(empirical_difficulty(S{0, 0, 0, 0, 0, 1, 0, 1, 0, 0}, 5) == doctest::Approx(0.6));
  CHECK(empirical_difficulty(S{1, 1, 1, 0, 0, 0, 0, 0}, 5) == 1.0);
  CHECK_THROWS_AS(empirical_difficulty(S{1, 1}, 5), ContractViolation);
  CHECK(previous_window_difficulty(S{1, 1, 0, 0, 0, 0}, 3) == doctest::Approx(1.0 / 3));
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 1 + uniform_int(rng, 8);
    S s(static_cast<std::size_t>(k + uniform_int(rng, 10)));
    for (auto& x : s) x = static_cast<std::uint8_t>(uniform_int(rng, 2));
    const double d = empirical_difficulty(s, k);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    CHECK(std::abs(d * k - std::round(d * k)) < 1e-12);
  }
}

TEST_CASE("learning progress") {
  CHECK(learning_progress_post(0.3, 0.3) == 0.0);
  CHECK(learning_progress_post(0.2, 0.9) == doctest::Approx(0.7));
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const double a = uniform01(rng), b = uniform01(rng);
    CHECK(learning_progress_post(a, b) == learning_progress_post(b, a));
  }
  CHECK_THROWS_AS(learning_progress_post(1.5, 0.2), ContractViolation);
}

TEST_CASE("goal buffer is a FIFO") {
  Rng rng(13);
  for (int trial = 0; trial < 100000; ++trial) {
    const auto cap = static_cast<std::size_t>(1 + uniform_int(rng, 8));
    GoalBuffer buf(cap);
    std::deque<double> oracle;
    const int pushes = uniform_int(rng, 24);
    for (int i = 0; i < pushes; ++i) {
      const double id = trial * 100.0 + i;
      buf.push({goals::GridGoal{}, goals::GridGoal{}, id});
      oracle.push_back(id);
      if (oracle.size() > cap) oracle.pop_front();
    }
    REQUIRE(buf.size() == oracle.size());
    REQUIRE(buf.size() <= buf.capacity());
    for (std::size_t i = 0; i < oracle.size(); ++i) REQUIRE(buf[i].difficulty == oracle[i]);
  }
  CHECK_THROWS_AS(GoalBuffer(0), ConfigError);

  GoalBuffer buf(2);
  Rng r2(1);
  const auto room = random_room(r2, 2);
  buf.push(record(room, room, 0.2));
  std::ostringstream os;
  buf.write_text(os);
  const std::string text = os.str();
  CHECK(text.rfind("0.2 ", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1);
}

TEST_CASE("search rewards equal pointwise predictions") {
  Rng rng(14);
  DifficultyPredictor<float> dp(small_predictor(7));
  dp.init(rng);
  for (int b = 0; b < dp.params().num_blocks(); ++b)
    dp.params().value(b) += nn::Mat<float>::Random(dp.params().value(b).rows(), dp.params().value(b).cols());
  auto spec = testing::room_spec(7, {{kRedBall, Pos{1, 3}}, {kBlueKey, Pos{4, 4}}}, {Pos{3, 3}, env::Dir::North});
  auto e = testing::instance(spec);
  std::vector<env::WorldState> visited;
  for (int t = 0; t < 40; ++t) {
    visited.push_back(e.state());
    e.advance(static_cast<Action>(uniform_int(rng, env::kNumActions)));
  }
  const auto info = goals::f_grid(e.initial_state());
  const auto r = goal_search_rewards(visited, dp, info);
  REQUIRE(r.size() == visited.size());
  for (std::size_t t = 0; t < visited.size(); ++t) CHECK(r[t] == dp.predict(goals::f_grid(visited[t]), info));

  // the stream scorer uses each stream's own initial snapshot
  const auto scorer = make_search_scorer(dp, std::vector<env::EnvInstance>{e, e});
  std::vector<int> ids{1};
  std::vector<const env::WorldState*> states{&visited[5]};
  std::vector<double> out(1);
  scorer(ids, states, out);
  CHECK(out[0] == r[5]);

  // stationary trajectory: constant rewards
  std::vector<env::WorldState> still(10, e.initial_state());
  const auto flat = goal_search_rewards(still, dp, info);
  for (double x : flat) CHECK(x == flat[0]);
}

namespace {

/// Two objects flank the agent; the goal is holding one of them. The actor
/// first tries the object ahead and switches to the one behind after an
/// unrewarded episode, remembering the switch for the rest of its lifetime.
struct FlankTask {
  std::shared_ptr<const env::EnvSpec> spec;
  env::EnvInstance env;
  goals::Goal goal;
};

FlankTask flank_task(bool goal_behind) {
  auto spec = testing::room_spec(7, {{kRedBall, Pos{2, 3}}, {kBlueKey, Pos{4, 3}}}, {Pos{3, 3}, env::Dir::North}, 16);
  auto e = testing::instance(spec);
  env::EnvInstance probe = e;
  if (goal_behind) {
    probe.advance(Action::TurnLeft);
    probe.advance(Action::TurnLeft);
  }
  probe.advance(Action::PickUp);
  return {spec, e, goals::Goal{goals::f_counts(probe.state(), env::num_kinds(env::kMinShapes))}};
}

testing::ScriptedActor switching_actor() {
  return testing::ScriptedActor(
      [](const policy::StepInputs& in, std::size_t j, const env::WorldState&, float* mem) {
        if (in.episode_start[j]) {
          if (in.prev_action[j] >= 0 && in.prev_reward[j] == 0.0f) mem[0] = 1.0f - mem[0];
          mem[1] = 0.0f;
        }
        const int step = static_cast<int>(mem[1]);
        mem[1] += 1.0f;
        if (mem[0] == 0.0f) return step == 0 ? Action::PickUp : Action::TurnLeft;
        return step == 2 ? Action::PickUp : Action::TurnLeft;
      },
      2);
}

double post_adaptation_difficulty(const rollout::Actor& actor, const FlankTask& task, int H, int K) {
  rollout::LifetimeSpec ls;
  ls.reward = rollout::RewardKind::Goal;
  ls.goals = {task.goal};
  ls.max_episodes = H;
  rollout::StreamBatch b({task.env}, actor, ls);
  Rng rng(0);
  b.run_to_end(rng);
  return empirical_difficulty(b.status()[0].successes, K);
}

}  // namespace

TEST_CASE("single-episode difficulty against post-adaptation difficulty") {
  const auto actor = switching_actor();
  Rng rng(15);
  SUBCASE("a task solved only after exploring") {
    const auto task = flank_task(true);
    CHECK(post_adaptation_difficulty(actor, task, 10, 5) == 0.0);
    const auto sed = single_episode_difficulty(actor, std::vector<env::EnvInstance>{task.env},
                                               std::vector<goals::Goal>{task.goal}, 5, rng);
    CHECK(sed.difficulty[0] == 1.0);
    CHECK(sed.steps == 5 * 16);
  }
  SUBCASE("a memoryless-optimal task") {
    const auto task = flank_task(false);
    CHECK(post_adaptation_difficulty(actor, task, 10, 5) == 0.0);
    CHECK(single_episode_difficulty(actor, task.env, task.goal, 5, rng) == 0.0);
    CHECK(single_episode_difficulty(actor, task.env, task.goal, 1, rng) == 0.0);
  }
}
