#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ulee/curriculum.hpp"
#include "ulee/env.hpp"
#include "ulee/goals.hpp"
#include "ulee/ppo.hpp"
#include "ulee/seqpolicy.hpp"

namespace ulee::config {

/// Flat "section.key" -> value table read from an INI-style file:
///
///   # comment
///   [section]
///   key = value
class Settings {
 public:
  static Settings parse(const std::string& text);
  static Settings load(const std::filesystem::path& path);

  /// "section.key=value"
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Keys never read by a get_* call.
  std::vector<std::string> unused() const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;
  /// Accepts scientific notation ("1e6").
  std::vector<long> get_longs(const std::string& key, const std::vector<long>& fallback) const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> read_;
};

enum class SearchMode : std::uint8_t { Adversarial, Random };
enum class SamplingMode : std::uint8_t { Bounded, Uniform };
enum class DifficultyMode : std::uint8_t { PostAdaptation, SingleEpisode };
enum class ScorerMode : std::uint8_t { Difficulty, LearningProgress };

struct Variant {
  SearchMode search = SearchMode::Adversarial;
  SamplingMode sampling = SamplingMode::Bounded;
  DifficultyMode difficulty = DifficultyMode::PostAdaptation;
  ScorerMode scorer = ScorerMode::Difficulty;

  /// '+'-separated tokens: adversarial|random, bounded|uniform, sed, lp_post; "ulee" is the default.
  static Variant parse(const std::string& s);
  std::string name() const;
};

struct CurriculumConfig {
  goals::Mapping mapping = goals::Mapping::Counts;
  int search_episodes = 2;        // k
  int spacing = 15;               // n
  int search_train_episodes = 3;  // per search-policy update round
  int num_gs_updates = 1;
  int difficulty_k = 5;
  double lb = 0.1;
  double ub = 0.9;
  int buffer_batches = 5;
  curriculum::PredictorTraining predictor;
  std::vector<int> predictor_hidden{128, 128};
};

struct TrainConfig {
  env::BenchConfig bench;
  std::size_t pool_size = 112500;  // eval split of 12 500
  double eval_fraction = 1.0 / 9.0;
  std::uint64_t pool_seed = 1;
  std::filesystem::path train_pool;  // optional; built from the bench otherwise

  policy::PolicyConfig policy;
  rl::PpoConfig ppo;             // pre-trained policy
  rl::PpoConfig gs_ppo;          // goal-search policy
  CurriculumConfig curriculum;
  Variant variant;

  int n_envs = 256;
  long steps_per_env = 2560;  // lifetime budget before resampling
  int update_interval = 256;
  long total_steps = 0;       // pretrain steps; 0 = one batch
  std::uint64_t seed = 0;
  bool deterministic = true;

  std::filesystem::path out_dir;           // checkpoints + metrics; empty = none
  std::vector<long> checkpoint_milestones;  // pretrain steps

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  long batches() const;
};

TrainConfig train_config_from(const Settings& s);

/// Geometric milestones 1e6, 3e6, 1e7, ... up to `limit`.
std::vector<long> default_milestones(long limit);

}  // namespace ulee::config
