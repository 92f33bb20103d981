#include <doctest.h>

#include "../support.hpp"
#include "ulee/distributions.hpp"

using namespace ulee;
using namespace ulee::policy;
using nn::Mat;
using nn::RowVec;

namespace {

PolicyConfig small_config(CoreKind core) {
  PolicyConfig c;
  c.embed_dim = 3;
  c.conv_channels = 2;
  c.hidden = 5;
  c.head_hidden = {4};
  c.core = core;
  c.attention_window = 4;
  c.attention_blocks = 2;
  return c;
}

template <class T>
Mat<T> warm_memory(const PolicyNet<T>& net, int batch, Rng& rng, int steps) {
  Mat<T> m = net.initial_memory(batch);
  for (int i = 0; i < steps; ++i) net.step(testing::random_inputs(batch, net.config().n_shapes, rng), m);
  return m;
}

template <class T>
SeqBatch<T> random_batch(const PolicyNet<T>& net, int batch, int length, Rng& rng) {
  SeqBatch<T> b;
  b.batch = batch;
  b.length = length;
  b.inputs = testing::random_inputs(batch * length, net.config().n_shapes, rng);
  b.reset.assign(static_cast<std::size_t>(batch * length), 0);
  for (auto& r : b.reset) r = uniform01(rng) < 0.15 ? 1 : 0;
  b.init_memory = warm_memory(net, batch, rng, 3);
  return b;
}

/// Outputs of a step-by-step rollout over one stream.
std::vector<std::vector<float>> run_steps(const PolicyNet<float>& net, const StepInputs& seq) {
  std::vector<std::vector<float>> out;
  Mat<float> m = net.initial_memory(1);
  for (int t = 0; t < seq.size(); ++t) {
    StepInputs in;
    in.resize(1);
    in.obs[0] = seq.obs[static_cast<std::size_t>(t)];
    in.episode_start[0] = seq.episode_start[static_cast<std::size_t>(t)];
    in.prev_action[0] = seq.prev_action[static_cast<std::size_t>(t)];
    in.prev_reward[0] = seq.prev_reward[static_cast<std::size_t>(t)];
    const auto o = net.step(in, m);
    std::vector<float> v(o.logits.data(), o.logits.data() + o.logits.size());
    v.push_back(o.values(0));
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

TEST_CASE("policy gradients match central differences") {
  for (auto core : {CoreKind::Gru, CoreKind::Attention}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      CAPTURE(to_string(core));
      CAPTURE(seed);
      Rng rng(seed);
      PolicyNet<double> net(small_config(core));
      net.init(rng);
      // move off the small-output init so every block carries signal
      for (int i = 0; i < net.params().num_blocks(); ++i)
        net.params().value(i) += 0.3 * Mat<double>::Random(net.params().value(i).rows(), net.params().value(i).cols());
      const auto batch = random_batch(net, 2, 7, rng);
      Mat<double> wl = Mat<double>::Random(env::kNumActions, 14);
      RowVec<double> wv = RowVec<double>::Random(14);
      auto loss = [&] {
        const auto o = net.forward_sequence(batch);
        return o.logits.cwiseProduct(wl).sum() + o.values.cwiseProduct(wv).sum();
      };
      net.params().zero_grad();
      net.forward_sequence(batch);
      net.backward_sequence(wl, wv);
      for (int b = 0; b < net.params().num_blocks(); ++b) {
        CAPTURE(net.params().name(b));
        CHECK(testing::block_relative_error(net.params(), b, loss, rng) < 1e-4);
      }
    }
  }
}

TEST_CASE("step-by-step inference matches the training forward pass") {
  for (auto core : {CoreKind::Gru, CoreKind::Attention}) {
    Rng rng(3);
    PolicyNet<double> net(small_config(core));
    net.init(rng);
    auto batch = random_batch(net, 3, 9, rng);
    const auto seq = net.forward_sequence(batch);
    Mat<double> m = batch.init_memory;
    for (int t = 0; t < batch.length; ++t) {
      StepInputs in;
      in.resize(batch.batch);
      for (int b = 0; b < batch.batch; ++b) {
        const auto src = static_cast<std::size_t>(t * batch.batch + b), dst = static_cast<std::size_t>(b);
        in.obs[dst] = batch.inputs.obs[src];
        in.episode_start[dst] = batch.inputs.episode_start[src];
        in.prev_action[dst] = batch.inputs.prev_action[src];
        in.prev_reward[dst] = batch.inputs.prev_reward[src];
        if (batch.reset[src]) m.col(b).setZero();
      }
      const auto o = net.step(in, m);
      CHECK((o.logits - seq.logits.middleCols(t * batch.batch, batch.batch)).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((o.values - seq.values.middleCols(t * batch.batch, batch.batch)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("lifetimes are isolated by the memory reset") {
  for (auto core : {CoreKind::Gru, CoreKind::Attention}) {
    Rng rng(8);
    PolicyConfig cfg = small_config(core);
    cfg.hidden = 16;
    PolicyNet<float> net(cfg);
    net.init(rng);
    const auto life = testing::random_inputs(12, cfg.n_shapes, rng);

    // inference: the same lifetime after different histories
    Mat<float> fresh = net.initial_memory(1);
    Mat<float> used = warm_memory(net, 1, rng, 20);
    used.setZero();  // lifetime start
    const auto a = run_steps(net, life);
    StepInputs in;
    in.resize(1);
    std::vector<std::vector<float>> b;
    for (int t = 0; t < life.size(); ++t) {
      const auto k = static_cast<std::size_t>(t);
      in.obs[0] = life.obs[k];
      in.episode_start[0] = life.episode_start[k];
      in.prev_action[0] = life.prev_action[k];
      in.prev_reward[0] = life.prev_reward[k];
      const auto o = net.step(in, used);
      std::vector<float> v(o.logits.data(), o.logits.data() + o.logits.size());
      v.push_back(o.values(0));
      b.push_back(std::move(v));
    }
    CHECK(a == b);

    // training: a reset inside the sequence hides everything before it
    for (int trial = 0; trial < 2; ++trial) {
      SeqBatch<float> s1, s2;
      for (auto* s : {&s1, &s2}) {
        s->batch = 1;
        s->length = 20;
        s->inputs = testing::random_inputs(20, cfg.n_shapes, rng);
        s->reset.assign(20, 0);
        s->reset[8] = 1;
        s->init_memory = warm_memory(net, 1, rng, 5);
        for (int t = 8; t < 20; ++t) {
          const auto k = static_cast<std::size_t>(t), j = static_cast<std::size_t>(t - 8);
          s->inputs.obs[k] = life.obs[j];
          s->inputs.episode_start[k] = life.episode_start[j];
          s->inputs.prev_action[k] = life.prev_action[j];
          s->inputs.prev_reward[k] = life.prev_reward[j];
        }
      }
      const auto o1 = net.forward_sequence(s1);
      const auto o2 = net.forward_sequence(s2);
      const bool same = o1.logits.rightCols(12) == o2.logits.rightCols(12) && o1.values.rightCols(12) == o2.values.rightCols(12);
      CHECK(same);
    }
  }
}

TEST_CASE("batch columns do not interact") {
  Rng rng(12);
  PolicyNet<float> net(small_config(CoreKind::Attention));
  net.init(rng);
  Mat<float> m = net.initial_memory(4);
  Mat<float> solo = net.initial_memory(1);
  for (int t = 0; t < 10; ++t) {
    auto in = testing::random_inputs(4, env::kMinShapes, rng);
    StepInputs first;
    first.resize(1);
    first.obs[0] = in.obs[0];
    first.episode_start[0] = in.episode_start[0];
    first.prev_action[0] = in.prev_action[0];
    first.prev_reward[0] = in.prev_reward[0];
    const auto all = net.step(in, m);
    const auto one = net.step(first, solo);
    CHECK((all.logits.col(0) - one.logits.col(0)).cwiseAbs().maxCoeff() < 1e-6f);
  }
}

TEST_CASE("in-window past inputs change the output; inputs beyond the horizon do not") {
  Rng rng(21);
  PolicyConfig cfg = small_config(CoreKind::Attention);
  cfg.hidden = 8;
  PolicyNet<double> net(cfg);
  net.init(rng);
  const int horizon = *cfg.memory_horizon();
  const int len = horizon + 6;
  const auto base = testing::random_inputs(len, cfg.n_shapes, rng);
  SeqBatch<double> b;
  b.batch = 1;
  b.length = len;
  b.inputs = base;
  b.reset.assign(static_cast<std::size_t>(len), 0);
  b.reset[0] = 1;
  b.init_memory = net.initial_memory(1);
  const auto ref = net.forward_sequence(b);
  const int t = len - 1;

  auto perturbed_output = [&](int at) {
    SeqBatch<double> p = b;
    auto& o = p.inputs.obs[static_cast<std::size_t>(at)];
    for (auto& c : o) c = static_cast<env::KindId>((c + 7) % env::num_kinds(cfg.n_shapes));
    p.inputs.prev_reward[static_cast<std::size_t>(at)] += 0.5f;
    return net.forward_sequence(p);
  };
  const auto inside = perturbed_output(t - horizon);
  CHECK((inside.logits.col(t) - ref.logits.col(t)).cwiseAbs().maxCoeff() > 0.0);
  const auto outside = perturbed_output(t - horizon - 1);
  CHECK(outside.logits.col(t) == ref.logits.col(t));

  // the recurrent core has no horizon
  CHECK(!small_config(CoreKind::Gru).memory_horizon().has_value());
  PolicyNet<double> gru(small_config(CoreKind::Gru));
  gru.init(rng);
  SeqBatch<double> gb = b;
  gb.init_memory = gru.initial_memory(1);
  CHECK_THROWS_AS(gru.forward_sequence(b), ContractViolation);
  const auto gref = gru.forward_sequence(gb);
  SeqBatch<double> g = gb;
  g.inputs.prev_reward[0] += 1.0f;
  CHECK((gru.forward_sequence(g).logits.col(t) - gref.logits.col(t)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("initial outputs are near-uniform and finite") {
  Rng rng(1);
  PolicyNet<float> net(PolicyConfig{});
  net.init(rng);
  Mat<float> m = net.initial_memory(8);
  auto in = testing::random_inputs(8, env::kMinShapes, rng);
  for (auto& a : in.prev_action) a = -1;
  const auto o = net.step(in, m);
  for (int b = 0; b < 8; ++b) {
    std::span<const float> col(o.logits.col(b).data(), env::kNumActions);
    CHECK(entropy(col) > std::log(6.0) - 0.01);
  }
}

TEST_CASE("non-finite parameters raise a numerical fault") {
  Rng rng(1);
  PolicyNet<float> net(small_config(CoreKind::Gru));
  net.init(rng);
  net.params().value(0)(0, 0) = std::numeric_limits<float>::quiet_NaN();
  Mat<float> m = net.initial_memory(1);
  auto in = testing::random_inputs(1, env::kMinShapes, rng);
  bool threw = false;
  try {
    // the NaN may sit in an unused embedding row; poison every block
    for (int i = 0; i < net.params().num_blocks(); ++i) net.params().value(i).array() = std::numeric_limits<float>::quiet_NaN();
    net.step(in, m);
  } catch (const NumericalFault&) {
    threw = true;
  }
  CHECK(threw);
}

TEST_CASE("categorical sampling matches the softmax") {
  Rng rng(77);
  const std::array<double, env::kNumActions> logits{0.3, -1.0, 2.0, 0.0, 0.5, -0.2};
  const auto dist = Categorical::from_logits(std::span<const double>(logits));
  double z = 0;
  for (double l : logits) z += std::exp(l);
  for (int a = 0; a < env::kNumActions; ++a) CHECK(dist.prob(a) == doctest::Approx(std::exp(logits[static_cast<std::size_t>(a)]) / z));
  std::array<int, env::kNumActions> counts{};
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(dist.sample(rng))];
  double chi2 = 0;
  for (int a = 0; a < env::kNumActions; ++a) {
    const double e = n * dist.prob(a);
    chi2 += (counts[static_cast<std::size_t>(a)] - e) * (counts[static_cast<std::size_t>(a)] - e) / e;
  }
  CHECK(chi2 < 20.5);  // chi-square, 5 dof, p = 0.001
  CHECK(dist.mode() == 2);
  double h = 0;
  for (int a = 0; a < env::kNumActions; ++a) h -= dist.prob(a) * dist.log_prob(a);
  CHECK(dist.entropy() == doctest::Approx(h).epsilon(1e-12));
}
