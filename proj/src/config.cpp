#include "ulee/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace ulee::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Settings Settings::parse(const std::string& text) {
  Settings s;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    s.values_[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
  }
  return s;
}

Settings Settings::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void Settings::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like section.key=value: " + assignment);
  values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

std::vector<std::string> Settings::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!read_.count(k)) out.push_back(k);
  return out;
}

std::string Settings::get_string(const std::string& key, const std::string& fallback) const {
  read_[key] = true;
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long Settings::get_int(const std::string& key, long fallback) const {
  read_[key] = true;
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    // accept 5e7-style literals for step counts
    const double d = std::stod(it->second, &used);
    if (used != it->second.size() || d != static_cast<double>(static_cast<long>(d))) throw std::invalid_argument("");
    return static_cast<long>(d);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + it->second + "'");
  }
}

double Settings::get_double(const std::string& key, double fallback) const {
  read_[key] = true;
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + it->second + "'");
  }
}

bool Settings::get_bool(const std::string& key, bool fallback) const {
  read_[key] = true;
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::vector<long> Settings::get_longs(const std::string& key, const std::vector<long>& fallback) const {
  read_[key] = true;
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<long> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(static_cast<long>(std::stod(item, &used)));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a comma-separated integer list");
    }
  }
  return out;
}

std::vector<int> Settings::get_ints(const std::string& key, const std::vector<int>& fallback) const {
  if (!has(key)) {
    read_[key] = true;
    return fallback;
  }
  std::vector<int> out;
  for (long v : get_longs(key, {})) out.push_back(static_cast<int>(v));
  return out;
}

Variant Variant::parse(const std::string& s) {
  Variant v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, '+')) {
    tok = trim(tok);
    if (tok == "ulee" || tok == "adversarial" || tok == "bounded") continue;
    if (tok == "random")
      v.search = SearchMode::Random;
    else if (tok == "uniform")
      v.sampling = SamplingMode::Uniform;
    else if (tok == "sed")
      v.difficulty = DifficultyMode::SingleEpisode;
    else if (tok == "lp_post")
      v.scorer = ScorerMode::LearningProgress;
    else
      throw ConfigError("unknown variant '" + s + "'");
  }
  return v;
}

std::string Variant::name() const {
  std::string n = std::string(search == SearchMode::Adversarial ? "adversarial" : "random") + "+" +
                  (sampling == SamplingMode::Bounded ? "bounded" : "uniform");
  if (difficulty == DifficultyMode::SingleEpisode) n += "+sed";
  if (scorer == ScorerMode::LearningProgress) n += "+lp_post";
  return n;
}

void TrainConfig::validate() const {
  env::validate(bench);
  ppo.validate();
  gs_ppo.validate();
  if (n_envs < 1) throw ConfigError("n_envs must be positive");
  if (update_interval < 1 || steps_per_env % update_interval != 0)
    throw ConfigError("steps_per_env must be a multiple of the update interval");
  const auto& c = curriculum;
  if (c.search_episodes < 1 || c.spacing < 1 || c.search_train_episodes < 1 || c.num_gs_updates < 0)
    throw ConfigError("invalid goal-search settings");
  if (c.difficulty_k < 1) throw ConfigError("difficulty_k must be positive");
  if (!(c.lb >= 0 && c.lb <= c.ub && c.ub <= 1)) throw ConfigError("difficulty bounds must satisfy 0 <= lb <= ub <= 1");
  if (c.buffer_batches < 1) throw ConfigError("buffer_batches must be positive");
  // at least k complete episodes are needed for the difficulty estimate
  const int k_needed = variant.scorer == ScorerMode::LearningProgress ? 2 * c.difficulty_k : c.difficulty_k;
  if (steps_per_env < static_cast<long>(k_needed) * bench.max_steps)
    throw ConfigError("steps_per_env too small to complete the episodes the difficulty estimate needs");
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (eval_fraction <= 0 || eval_fraction >= 1) throw ConfigError("eval_fraction must lie in (0, 1)");
}

long TrainConfig::batches() const {
  const long per_batch = steps_per_env * n_envs;
  if (total_steps <= 0) return 1;
  return (total_steps + per_batch - 1) / per_batch;
}

std::vector<long> default_milestones(long limit) {
  std::vector<long> out;
  for (long base = 1000000; base <= limit; base *= 10) {
    out.push_back(base);
    if (3 * base <= limit) out.push_back(3 * base);
  }
  return out;
}

namespace {

rl::PpoConfig ppo_from(const Settings& s, const std::string& sec, rl::PpoConfig p) {
  p.lr = s.get_double(sec + ".lr", p.lr);
  p.adam_eps = s.get_double(sec + ".adam_eps", p.adam_eps);
  p.gamma = s.get_double(sec + ".gamma", p.gamma);
  p.gae_lambda = s.get_double(sec + ".gae_lambda", p.gae_lambda);
  p.epochs = static_cast<int>(s.get_int(sec + ".epochs", p.epochs));
  p.minibatches = static_cast<int>(s.get_int(sec + ".minibatches", p.minibatches));
  p.clip = s.get_double(sec + ".clip", p.clip);
  p.vf_coef = s.get_double(sec + ".vf_coef", p.vf_coef);
  p.max_grad_norm = s.get_double(sec + ".max_grad_norm", p.max_grad_norm);
  p.ent_coef = s.get_double(sec + ".ent_coef", p.ent_coef);
  p.bptt = static_cast<int>(s.get_int(sec + ".bptt", p.bptt));
  p.cut_at_episode_ends = s.get_bool(sec + ".cut_at_episode_ends", p.cut_at_episode_ends);
  p.normalize_advantages = s.get_bool(sec + ".normalize_advantages", p.normalize_advantages);
  return p;
}

}  // namespace

TrainConfig train_config_from(const Settings& s) {
  TrainConfig c;
  auto& b = c.bench;
  const auto diff = s.get_string("bench.difficulty", "trivial");
  auto d = env::parse_difficulty(diff);
  if (!d) throw ConfigError("unknown benchmark difficulty '" + diff + "'");
  b.difficulty = *d;
  b.grid_size = static_cast<int>(s.get_int("bench.grid_size", b.grid_size));
  b.room_count = static_cast<int>(s.get_int("bench.room_count", b.room_count));
  b.max_steps = static_cast<int>(s.get_int("bench.max_steps", b.max_steps));
  b.n_shapes = static_cast<int>(s.get_int("bench.n_shapes", b.n_shapes));
  const auto doors = s.get_string("bench.doors", "random");
  if (doors == "open")
    b.doors = env::DoorInit::Open;
  else if (doors == "closed")
    b.doors = env::DoorInit::Closed;
  else if (doors == "random")
    b.doors = env::DoorInit::Random;
  else
    throw ConfigError("bench.doors must be open, closed or random");

  c.pool_size = static_cast<std::size_t>(s.get_int("pool.size", static_cast<long>(c.pool_size)));
  c.eval_fraction = s.get_double("pool.eval_fraction", c.eval_fraction);
  c.pool_seed = static_cast<std::uint64_t>(s.get_int("pool.seed", static_cast<long>(c.pool_seed)));
  c.train_pool = s.get_string("pool.train_file", "");

  auto& p = c.policy;
  p.n_shapes = b.n_shapes;
  p.embed_dim = static_cast<int>(s.get_int("policy.embed_dim", p.embed_dim));
  p.conv_channels = static_cast<int>(s.get_int("policy.conv_channels", p.conv_channels));
  p.hidden = static_cast<int>(s.get_int("policy.hidden", p.hidden));
  p.head_hidden = s.get_ints("policy.head_hidden", p.head_hidden);
  const auto core = s.get_string("policy.core", "gru");
  auto ck = policy::parse_core(core);
  if (!ck) throw ConfigError("policy.core must be gru or attention");
  p.core = *ck;
  p.attention_window = static_cast<int>(s.get_int("policy.attention_window", p.attention_window));
  p.attention_blocks = static_cast<int>(s.get_int("policy.attention_blocks", p.attention_blocks));

  c.ppo = ppo_from(s, "ppo", c.ppo);
  rl::PpoConfig gs_default;
  gs_default.ent_coef = 0.01;
  gs_default.cut_at_episode_ends = true;
  c.gs_ppo = ppo_from(s, "gs_ppo", gs_default);

  auto& cu = c.curriculum;
  const auto mapping = s.get_string("curriculum.mapping", "counts");
  auto m = goals::parse_mapping(mapping);
  if (!m) throw ConfigError("curriculum.mapping must be counts or grid");
  cu.mapping = *m;
  cu.search_episodes = static_cast<int>(s.get_int("curriculum.search_episodes", cu.search_episodes));
  cu.spacing = static_cast<int>(s.get_int("curriculum.spacing", cu.spacing));
  cu.search_train_episodes = static_cast<int>(s.get_int("curriculum.search_train_episodes", cu.search_train_episodes));
  cu.num_gs_updates = static_cast<int>(s.get_int("curriculum.num_gs_updates", cu.num_gs_updates));
  cu.difficulty_k = static_cast<int>(s.get_int("curriculum.difficulty_k", cu.difficulty_k));
  cu.lb = s.get_double("curriculum.lb", cu.lb);
  cu.ub = s.get_double("curriculum.ub", cu.ub);
  cu.buffer_batches = static_cast<int>(s.get_int("curriculum.buffer_batches", cu.buffer_batches));
  cu.predictor.epochs = static_cast<int>(s.get_int("curriculum.predictor_epochs", cu.predictor.epochs));
  cu.predictor.minibatch = static_cast<int>(s.get_int("curriculum.predictor_minibatch", cu.predictor.minibatch));
  cu.predictor.lr = s.get_double("curriculum.predictor_lr", cu.predictor.lr);
  cu.predictor_hidden = s.get_ints("curriculum.predictor_hidden", cu.predictor_hidden);

  c.variant = Variant::parse(s.get_string("train.variant", "ulee"));
  c.n_envs = static_cast<int>(s.get_int("train.n_envs", c.n_envs));
  c.steps_per_env = s.get_int("train.steps_per_env", c.steps_per_env);
  c.update_interval = static_cast<int>(s.get_int("train.update_interval", c.update_interval));
  c.total_steps = s.get_int("train.total_steps", c.total_steps);
  c.seed = static_cast<std::uint64_t>(s.get_int("train.seed", 0));
  c.deterministic = s.get_bool("train.deterministic", c.deterministic);
  c.out_dir = s.get_string("train.out_dir", "");
  c.checkpoint_milestones = s.get_longs("train.checkpoint_milestones", default_milestones(std::max(c.total_steps, 1L)));

  if (auto extra = s.unused(); !extra.empty()) throw ConfigError("unknown config key '" + extra.front() + "'");
  c.validate();
  return c;
}

}  // namespace ulee::config
