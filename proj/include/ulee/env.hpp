#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulee/common.hpp"

namespace ulee::env {

// ---------------------------------------------------------------------------
// Cell kinds
//
// Every grid cell holds one KindId. Ids 0..4 are structural; objects follow as
// kFirstObject + shape * kNumColors + color. Each kind maps to a (shape, color)
// pair for the learned embedding tables: structural kinds use shape ids 0..4
// with the "none" color 0, objects use shape 5 + s and color 1 + c.
// ---------------------------------------------------------------------------

using KindId = std::uint8_t;

inline constexpr KindId kFloor = 0;
inline constexpr KindId kWall = 1;
inline constexpr KindId kDoorClosed = 2;
inline constexpr KindId kDoorOpen = 3;
inline constexpr KindId kOutOfBounds = 4;
inline constexpr KindId kFirstObject = 5;
inline constexpr KindId kNoKind = 255;

inline constexpr int kNumColors = 6;
inline constexpr int kMinShapes = 5;
inline constexpr int kMaxShapes = 12;
inline constexpr int kNumStructural = 5;

constexpr int num_kinds(int n_shapes) { return kNumStructural + n_shapes * kNumColors; }
constexpr int shape_vocab(int n_shapes) { return kNumStructural + n_shapes; }
constexpr int color_vocab() { return 1 + kNumColors; }

constexpr KindId object_kind(int shape, int color) {
  return static_cast<KindId>(kFirstObject + shape * kNumColors + color);
}
constexpr bool is_object(KindId k) { return k >= kFirstObject && k != kNoKind; }
constexpr int shape_index(KindId k) {
  return is_object(k) ? kNumStructural + (k - kFirstObject) / kNumColors : k;
}
constexpr int color_index(KindId k) { return is_object(k) ? 1 + (k - kFirstObject) % kNumColors : 0; }

std::string kind_name(KindId k);

// ---------------------------------------------------------------------------
// Geometry and actions
// ---------------------------------------------------------------------------

struct Pos {
  int row = 0;
  int col = 0;
  bool operator==(const Pos&) const = default;
};

enum class Dir : std::uint8_t { North = 0, East = 1, South = 2, West = 3 };

constexpr Pos delta(Dir d) {
  switch (d) {
    case Dir::North: return {-1, 0};
    case Dir::East: return {0, 1};
    case Dir::South: return {1, 0};
    case Dir::West: return {0, -1};
  }
  return {0, 0};
}
constexpr Dir turn_left(Dir d) { return static_cast<Dir>((static_cast<int>(d) + 3) % 4); }
constexpr Dir turn_right(Dir d) { return static_cast<Dir>((static_cast<int>(d) + 1) % 4); }

enum class Action : std::uint8_t { Forward = 0, TurnLeft, TurnRight, PickUp, PutDown, Toggle };
inline constexpr int kNumActions = 6;

// ---------------------------------------------------------------------------
// Rules and goals
// ---------------------------------------------------------------------------

enum class RuleType : std::uint8_t { AgentHold, TileNear, TileNearLeft, TileNearRight, TileNearUp, TileNearDown };
inline constexpr int kNumRuleTypes = 6;

/// AgentHold: pocket == a becomes c. TileNear*: a with b at the given side
/// turns the a-cell into c and clears the b-cell.
struct Rule {
  RuleType type = RuleType::AgentHold;
  KindId a = kNoKind;
  KindId b = kNoKind;
  KindId c = kNoKind;
  bool operator==(const Rule&) const = default;
};

enum class GoalType : std::uint8_t {
  AgentHold,
  TileOnPosition,
  TileNear,
  TileNearLeft,
  TileNearRight,
  TileNearUp,
  TileNearDown
};
inline constexpr int kNumGoalTypes = 7;

struct ExtrinsicGoal {
  GoalType type = GoalType::AgentHold;
  KindId a = kNoKind;
  KindId b = kNoKind;
  Pos position{};  // TileOnPosition only
  bool operator==(const ExtrinsicGoal&) const = default;
};

std::string to_string(RuleType t);
std::string to_string(GoalType t);
std::optional<RuleType> parse_rule_type(const std::string& s);
std::optional<GoalType> parse_goal_type(const std::string& s);

// ---------------------------------------------------------------------------
// Task description
// ---------------------------------------------------------------------------

struct Door {
  Pos pos;
  bool open = false;
  bool operator==(const Door&) const = default;
};

struct Layout {
  int grid_size = 9;
  int room_count = 4;
  std::vector<Door> doors;
  bool operator==(const Layout&) const = default;
};

struct ObjectPlacement {
  KindId kind = kNoKind;
  std::optional<Pos> pos;  // nullopt: resolved at reset_lifetime
  bool operator==(const ObjectPlacement&) const = default;
};

struct AgentPose {
  Pos pos;
  Dir dir = Dir::North;
  bool operator==(const AgentPose&) const = default;
};

struct EnvSpec {
  static constexpr int kFormatVersion = 1;

  std::uint64_t seed = 0;
  Layout layout;
  int n_shapes = kMinShapes;
  int max_steps = 128;
  ExtrinsicGoal goal;
  std::vector<Rule> prerequisite_rules;
  std::vector<Rule> distractor_rules;
  std::vector<ObjectPlacement> initial_objects;
  std::optional<AgentPose> agent;

  bool operator==(const EnvSpec&) const = default;
};

/// Structural grid (walls, floor, doors) for a layout.
std::vector<KindId> build_structure(const Layout& layout);

// ---------------------------------------------------------------------------
// State, observation, stepping
// ---------------------------------------------------------------------------

struct WorldState {
  int size = 0;
  std::vector<KindId> cells;  // row-major size*size
  Pos agent;
  Dir dir = Dir::North;
  KindId pocket = kNoKind;
  int t = 0;
  bool goal_achieved = false;

  KindId at(Pos p) const { return cells[static_cast<std::size_t>(p.row * size + p.col)]; }
  KindId& at(Pos p) { return cells[static_cast<std::size_t>(p.row * size + p.col)]; }
  bool inside(Pos p) const { return p.row >= 0 && p.col >= 0 && p.row < size && p.col < size; }
  Pos front() const {
    auto d = delta(dir);
    return {agent.row + d.row, agent.col + d.col};
  }

  bool operator==(const WorldState&) const = default;
};

inline constexpr int kViewSize = 5;
inline constexpr int kViewCells = kViewSize * kViewSize;

/// Egocentric window. Row 0 is farthest ahead; the agent sits at row 4,
/// column 2, facing up the window.
using Observation = std::array<KindId, kViewCells>;

Observation observe(const WorldState& state);

/// Success reward 1 - 0.9 * t / max_steps.
double success_reward(int t, int max_steps);

bool extrinsic_goal_satisfied(const ExtrinsicGoal& goal, const WorldState& state);

/// Applies the action and then every rule in spec order (prerequisites first,
/// then distractors). Returns the rule-firing count.
int apply_action_and_rules(const EnvSpec& spec, WorldState& state, Action action);

struct StepOutcome {
  Observation obs{};
  bool done = false;
  double reward = 0.0;
  bool success = false;
  bool timeout = false;
  int rules_fired = 0;
};

/// Extrinsic-task step. Invalid moves are no-ops.
StepOutcome step(const EnvSpec& spec, WorldState& state, Action action);

/// Resolves random placements. Throws SamplerError after bounded retries.
WorldState reset_lifetime(const EnvSpec& spec, Rng& rng);

/// A spec plus its fixed lifetime start state; the value-state machine the
/// trainers step.
class EnvInstance {
 public:
  EnvInstance() = default;
  explicit EnvInstance(std::shared_ptr<const EnvSpec> spec) : spec_(std::move(spec)) {}

  void reset_lifetime(Rng& rng);
  /// Restores s0 exactly.
  void reset_episode() { state_ = s0_; }

  StepOutcome step(Action a) { return env::step(*spec_, state_, a); }
  /// Mechanics only (no extrinsic termination); used with intrinsic goals.
  void advance(Action a) { apply_action_and_rules(*spec_, state_, a); }

  Observation observe() const { return env::observe(state_); }
  const WorldState& state() const { return state_; }
  WorldState& mutable_state() { return state_; }
  const WorldState& initial_state() const { return s0_; }
  const EnvSpec& spec() const { return *spec_; }
  std::shared_ptr<const EnvSpec> spec_ptr() const { return spec_; }

 private:
  std::shared_ptr<const EnvSpec> spec_;
  WorldState s0_;
  WorldState state_;
};

// ---------------------------------------------------------------------------
// Procedural benchmark sampler
// ---------------------------------------------------------------------------

enum class Difficulty : std::uint8_t { Trivial, Small };
enum class DoorInit : std::uint8_t { Open, Closed, Random };

struct BenchConfig {
  Difficulty difficulty = Difficulty::Trivial;
  int grid_size = 9;
  int room_count = 4;
  int max_steps = 128;
  int n_shapes = kMinShapes;  // 5 shapes x 6 colors = 30 object kinds
  DoorInit doors = DoorInit::Random;
};

std::string to_string(Difficulty d);
std::optional<Difficulty> parse_difficulty(const std::string& s);

/// Throws ConfigError when the grid cannot hold the rooms and objects.
void validate(const BenchConfig& bench);

/// Goal first, then the prerequisite chain backwards, then distractors.
EnvSpec sample_env_spec(Rng& rng, const BenchConfig& bench);

/// Object kinds present on the grid (or pocket) in a state.
std::vector<KindId> object_multiset(const WorldState& state);

}  // namespace ulee::env
