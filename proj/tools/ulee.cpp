#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ulee/checkpoint.hpp"
#include "ulee/config.hpp"
#include "ulee/evalharness.hpp"
#include "ulee/pool.hpp"
#include "ulee/report.hpp"
#include "ulee/trainer.hpp"

namespace fs = std::filesystem;
using namespace ulee;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = false;
  std::string variant;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "INI config file");
  app->add_option("--set", c.overrides, "section.key=value override")->take_all();
  app->add_option("--seed", c.seed, "master seed");
  app->add_flag("--deterministic", c.deterministic, "single-threaded bit-reproducible run");
  app->add_option("--variant", c.variant, "adversarial|random + bounded|uniform [+sed] [+lp_post]");
}

config::Settings settings(const Common& c, CLI::App* app) {
  config::Settings s = c.config.empty() ? config::Settings{} : config::Settings::load(c.config);
  for (const auto& o : c.overrides) s.apply_override(o);
  if (app->count("--seed")) s.set("train.seed", std::to_string(c.seed));
  if (c.deterministic) s.set("train.deterministic", "true");
  if (!c.variant.empty()) s.set("train.variant", c.variant);
  return s;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream os(p);
  os << j.dump(2) << '\n';
}

policy::PolicyNet<float> policy_for(const std::string& checkpoint, const config::TrainConfig& cfg) {
  if (!checkpoint.empty()) return io::load_policy(checkpoint);
  policy::PolicyNet<float> net(cfg.policy);
  Rng rng(derive_seed(cfg.seed, 0xC0FFEE));
  net.init(rng);
  return net;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised pre-training of in-context exploration policies"};
  app.require_subcommand(1);

  // pool
  auto* pool = app.add_subcommand("pool", "benchmark pools");
  pool->require_subcommand(1);
  Common pool_common;
  std::string pool_out, pool_in, train_out, eval_out;
  long pool_count = 0;
  auto* pool_build = pool->add_subcommand("build", "sample a task pool");
  add_common(pool_build, pool_common);
  pool_build->add_option("--out", pool_out)->required();
  pool_build->add_option("--count", pool_count, "tasks (default pool.size)");
  double eval_fraction = -1.0;
  auto* pool_split = pool->add_subcommand("split", "split a pool into train and eval");
  pool_split->add_option("--in", pool_in)->required();
  pool_split->add_option("--train-out", train_out)->required();
  pool_split->add_option("--eval-out", eval_out)->required();
  pool_split->add_option("--eval-fraction", eval_fraction);
  std::uint64_t split_seed = 0;
  pool_split->add_option("--seed", split_seed);

  // pretrain
  Common pre_common;
  std::string pre_out;
  auto* pretrain = app.add_subcommand("pretrain", "unsupervised pre-training");
  add_common(pretrain, pre_common);
  pretrain->add_option("--out", pre_out, "output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "evaluation protocols");
  eval->require_subcommand(1);
  std::string ev_ckpt, ev_pool, ev_train_pool, ev_out;
  bool ev_random = false;
  eval::EvalOptions ev_opt;
  std::vector<CLI::App*> eval_cmds{eval->add_subcommand("explore", "goals reached within an episode budget"),
                                   eval->add_subcommand("adapt", "mean return over the last episodes")};
  for (auto* c : eval_cmds) {
    c->add_option("--checkpoint", ev_ckpt, "bundle directory");
    c->add_flag("--random", ev_random, "evaluate the uniform-random policy");
    c->add_option("--pool", ev_pool, "eval pool file")->required();
    c->add_option("--train-pool", ev_train_pool, "training pool, checked for overlap");
    c->add_option("--n-envs", ev_opt.n_envs);
    c->add_option("--episodes", ev_opt.episodes);
    c->add_option("--last-k", ev_opt.last_k);
    c->add_option("--seed", ev_opt.seed);
    c->add_option("--out", ev_out, "JSONL output")->required();
  }
  eval_cmds[0]->callback([&] { ev_opt.episodes = eval_cmds[0]->count("--episodes") ? ev_opt.episodes : 20; });
  eval_cmds[1]->callback([&] { ev_opt.episodes = eval_cmds[1]->count("--episodes") ? ev_opt.episodes : 30; });

  // finetune
  auto* finetune = app.add_subcommand("finetune", "extrinsic-reward training");
  finetune->require_subcommand(1);
  Common ft_common;
  std::string ft_ckpt, ft_eval_pool, ft_train_pool, ft_out;
  long ft_budget = 0, ft_eval_every = 0, ft_steps_per_env = 0;
  int ft_envs = 0, ft_eval_envs = 0;
  std::vector<CLI::App*> ft_cmds{finetune->add_subcommand("fixed", "fixed task set from the eval pool"),
                                 finetune->add_subcommand("meta", "meta-training on the training pool")};
  for (auto* c : ft_cmds) {
    add_common(c, ft_common);
    c->add_option("--checkpoint", ft_ckpt, "bundle directory; omit to start from scratch");
    c->add_option("--eval-pool", ft_eval_pool)->required();
    c->add_option("--train-pool", ft_train_pool);
    c->add_option("--budget", ft_budget, "extrinsic training steps")->required();
    c->add_option("--eval-every", ft_eval_every);
    c->add_option("--n-envs", ft_envs);
    c->add_option("--eval-envs", ft_eval_envs);
    c->add_option("--steps-per-env", ft_steps_per_env);
    c->add_option("--out", ft_out, "JSONL output")->required();
  }

  // report
  std::string rep_in, rep_out;
  auto* report = app.add_subcommand("report", "metrics JSONL to CSV tables");
  report->add_option("--in", rep_in)->required();
  report->add_option("--out-dir", rep_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (pool_build->parsed()) {
      const auto cfg = config::train_config_from(settings(pool_common, pool_build));
      const auto p = env::build_pool(cfg.bench, pool_count > 0 ? static_cast<std::size_t>(pool_count) : cfg.pool_size,
                                     cfg.pool_seed);
      env::save_pool(p, pool_out);
      std::cout << "pool " << pool_out << " tasks=" << p.size() << " hash=" << p.hash() << "\n";
    } else if (pool_split->parsed()) {
      const auto p = env::load_pool(pool_in);
      const auto s = env::split_pool(p, eval_fraction >= 0 ? eval_fraction : config::TrainConfig{}.eval_fraction, split_seed);
      env::save_pool(s.train, train_out);
      env::save_pool(s.eval, eval_out);
      std::cout << "train=" << s.train.size() << " eval=" << s.eval.size() << "\n";
    } else if (pretrain->parsed()) {
      auto s = settings(pre_common, pretrain);
      s.set("train.out_dir", pre_out);
      const auto cfg = config::train_config_from(s);
      fs::create_directories(cfg.out_dir);
      env::Pool train_pool;
      if (!cfg.train_pool.empty()) {
        train_pool = env::load_pool(cfg.train_pool);
      } else {
        const auto split =
            env::split_pool(env::build_pool(cfg.bench, cfg.pool_size, cfg.pool_seed), cfg.eval_fraction, cfg.pool_seed);
        env::save_pool(split.train, cfg.out_dir / "train_pool.txt");
        env::save_pool(split.eval, cfg.out_dir / "eval_pool.txt");
        train_pool = split.train;
      }
      train::MetricsWriter metrics(cfg.out_dir / "metrics.jsonl");
      train::Pretrainer trainer(cfg, train_pool, &metrics);
      trainer.run();
      write_json(cfg.out_dir / "ledger.json", trainer.ledger().to_json());
      std::cout << "pretrain steps=" << trainer.ledger().get(train::StepClass::Pretrain)
                << " goal_search=" << trainer.ledger().get(train::StepClass::GoalSearch) << "\n";
    } else if (eval->parsed()) {
      const bool explore = eval_cmds[0]->parsed();
      const auto pool_eval = env::load_pool(ev_pool);
      std::optional<env::Pool> pool_train;
      if (!ev_train_pool.empty()) pool_train = env::load_pool(ev_train_pool);
      std::optional<policy::PolicyNet<float>> net;
      std::unique_ptr<rollout::Actor> actor;
      if (ev_random) {
        actor = std::make_unique<rollout::RandomActor>();
      } else {
        if (ev_ckpt.empty()) throw ConfigError("--checkpoint or --random is required");
        net.emplace(io::load_policy(ev_ckpt));
        actor = std::make_unique<rollout::PolicyActor>(*net);
      }
      train::StepLedger ledger;
      const auto rep = explore ? eval::eval_exploration(*actor, pool_eval, ev_opt, pool_train ? &*pool_train : nullptr,
                                                        &ledger)
                               : eval::eval_adaptation(*actor, pool_eval, ev_opt, pool_train ? &*pool_train : nullptr,
                                                       &ledger);
      train::MetricsWriter out(ev_out);
      rep.write(out, {{"checkpoint", ev_ckpt}});
      const auto& c = rep.curves;
      if (explore)
        std::cout << "reached@1=" << c.reached.front() << " reached@" << c.reached.size() << "=" << c.reached.back()
                  << " random@" << c.reached.size() << "=" << (rep.random.reached.empty() ? 0.0 : rep.random.reached.back())
                  << "\n";
      else
        std::cout << "mean=" << c.table.mean << " p40=" << c.table.p40 << " p20=" << c.table.p20
                  << " random_mean=" << rep.random.table.mean << "\n";
    } else if (finetune->parsed()) {
      const bool fixed = ft_cmds[0]->parsed();
      auto* cmd = fixed ? ft_cmds[0] : ft_cmds[1];
      const auto cfg = config::train_config_from(settings(ft_common, cmd));
      auto net = policy_for(ft_ckpt, cfg);
      auto fc = fixed ? eval::fixed_defaults() : eval::meta_defaults();
      fc.ppo = cfg.ppo;
      fc.seed = cfg.seed;
      fc.budget_steps = ft_budget;
      fc.eval_every = ft_eval_every;
      fc.update_interval = cfg.update_interval;
      fc.steps_per_env = ft_steps_per_env > 0 ? ft_steps_per_env : cfg.steps_per_env;
      if (ft_envs > 0) fc.n_envs = ft_envs;
      if (ft_eval_envs > 0) fc.eval.n_envs = ft_eval_envs;
      const auto pool_eval = env::load_pool(ft_eval_pool);
      train::MetricsWriter out(ft_out);
      eval::FinetuneResult res;
      if (fixed) {
        res = eval::finetune_fixed(net, pool_eval, fc, &out);
      } else {
        if (ft_train_pool.empty()) throw ConfigError("finetune meta needs --train-pool");
        res = eval::finetune_meta(net, env::load_pool(ft_train_pool), pool_eval, fc, &out);
      }
      for (const auto& p : res.points)
        std::cout << "steps=" << p.steps << " mean=" << p.report.curves.table.mean << " p40=" << p.report.curves.table.p40
                  << " p20=" << p.report.curves.table.p20 << "\n";
    } else if (report->parsed()) {
      std::ifstream in(rep_in);
      if (!in) throw ConfigError("cannot read " + rep_in);
      const auto t = report::build_tables(in);
      fs::create_directories(rep_out);
      for (const auto& [name, body] : t.csv) std::ofstream(fs::path(rep_out) / name) << body;
      std::cout << "checked " << t.summaries_checked << " summaries\n";
      for (const auto& m : t.mismatches) std::cerr << "mismatch: " << m << "\n";
      if (!t.mismatches.empty()) return 3;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ContractViolation& e) {
    std::cerr << "invariant violated: " << e.what() << "\n";
    return 3;
  } catch (const NumericalFault& e) {
    std::cerr << "numerical fault: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
