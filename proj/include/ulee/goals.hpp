#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ulee/env.hpp"

namespace ulee::goals {

enum class Mapping : std::uint8_t { Counts, Grid };

std::string to_string(Mapping m);
std::optional<Mapping> parse_mapping(const std::string& s);

/// Occurrences of each kind id over grid cells; the pocket is not counted
/// and the agent's own cell contributes its floor kind.
struct CountsGoal {
  std::vector<std::int32_t> counts;
  bool operator==(const CountsGoal&) const = default;
};

/// Grid cells plus agent position; orientation and pocket are dropped.
struct GridGoal {
  int size = 0;
  std::vector<env::KindId> cells;
  env::Pos agent;
  bool operator==(const GridGoal&) const = default;
};

struct Goal {
  std::variant<CountsGoal, GridGoal> value;

  Mapping mapping() const { return std::holds_alternative<CountsGoal>(value) ? Mapping::Counts : Mapping::Grid; }
  bool operator==(const Goal&) const = default;
};

struct GoalOutcome {
  bool reached = false;
  std::optional<int> reach_step;
};

CountsGoal f_counts(const env::WorldState& state, int n_kinds);
GridGoal f_grid(const env::WorldState& state);

/// f: S -> G for a configured mapping.
class GoalMapper {
 public:
  GoalMapper(Mapping mapping, int n_kinds) : mapping_(mapping), n_kinds_(n_kinds) {}
  Goal operator()(const env::WorldState& s) const;
  Mapping mapping() const { return mapping_; }
  int n_kinds() const { return n_kinds_; }

 private:
  Mapping mapping_;
  int n_kinds_;
};

/// f(next_state) == g, exact. Allocation-free.
bool goal_reached(const env::WorldState& next_state, const Goal& g);

/// Same, with an explicit expected mapping; a mismatch is a contract violation.
bool goal_reached(const env::WorldState& next_state, const Goal& g, Mapping expected);

/// 1 - 0.9 * t / max_steps on first success, else 0.
double intrinsic_reward(bool reached_first_time, int t, int max_steps);

std::string to_text(const Goal& g);
Goal goal_from_text(const std::string& s);
std::string to_text(const GridGoal& g);
GridGoal grid_from_text(const std::string& s);

}  // namespace ulee::goals
