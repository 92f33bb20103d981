#include "ulee/env.hpp"

#include <algorithm>
#include <array>

namespace ulee::env {

namespace {

constexpr std::array<const char*, kMaxShapes> kShapeNames = {
    "key", "ball", "pyramid", "square", "star", "hex", "diamond", "circle", "triangle", "cross", "heart", "moon"};
constexpr std::array<const char*, kNumColors> kColorNames = {"red", "green", "blue", "yellow", "purple", "grey"};

struct RoomGrid {
  int rows = 1;
  int cols = 1;
};

RoomGrid room_grid(int room_count) {
  switch (room_count) {
    case 1: return {1, 1};
    case 2: return {1, 2};
    case 4: return {2, 2};
    case 6: return {2, 3};
    default: throw ConfigError("room_count must be one of 1, 2, 4, 6; got " + std::to_string(room_count));
  }
}

// Wall-line coordinates, including the two borders.
std::vector<int> wall_lines(int grid_size, int parts) {
  std::vector<int> lines{0};
  for (int i = 1; i < parts; ++i) lines.push_back(i * (grid_size - 1) / parts);
  lines.push_back(grid_size - 1);
  return lines;
}

bool walkable(KindId k) { return k == kFloor || k == kDoorOpen; }

bool tile_near_match(const WorldState& s, KindId a, KindId b, std::span<const Dir> dirs, Pos* site, Pos* other) {
  for (int r = 0; r < s.size; ++r) {
    for (int c = 0; c < s.size; ++c) {
      if (s.cells[static_cast<std::size_t>(r * s.size + c)] != a) continue;
      for (Dir d : dirs) {
        Pos q{r + delta(d).row, c + delta(d).col};
        if (s.inside(q) && s.at(q) == b) {
          if (site) *site = {r, c};
          if (other) *other = q;
          return true;
        }
      }
    }
  }
  return false;
}

constexpr std::array<Dir, 4> kAllDirs = {Dir::North, Dir::East, Dir::South, Dir::West};
constexpr std::array<Dir, 1> kLeft = {Dir::West};
constexpr std::array<Dir, 1> kRight = {Dir::East};
constexpr std::array<Dir, 1> kUp = {Dir::North};
constexpr std::array<Dir, 1> kDown = {Dir::South};

std::span<const Dir> rule_dirs(RuleType t) {
  switch (t) {
    case RuleType::TileNearLeft: return kLeft;
    case RuleType::TileNearRight: return kRight;
    case RuleType::TileNearUp: return kUp;
    case RuleType::TileNearDown: return kDown;
    default: return kAllDirs;
  }
}

std::span<const Dir> goal_dirs(GoalType t) {
  switch (t) {
    case GoalType::TileNearLeft: return kLeft;
    case GoalType::TileNearRight: return kRight;
    case GoalType::TileNearUp: return kUp;
    case GoalType::TileNearDown: return kDown;
    default: return kAllDirs;
  }
}

bool fire(const Rule& rule, WorldState& s) {
  if (rule.type == RuleType::AgentHold) {
    if (s.pocket != rule.a) return false;
    s.pocket = rule.c;
    return true;
  }
  Pos site, other;
  if (!tile_near_match(s, rule.a, rule.b, rule_dirs(rule.type), &site, &other)) return false;
  s.at(site) = rule.c;
  s.at(other) = kFloor;
  return true;
}

std::vector<Pos> floor_cells(const std::vector<KindId>& cells, int size) {
  std::vector<Pos> out;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      if (cells[static_cast<std::size_t>(r * size + c)] == kFloor) out.push_back({r, c});
  return out;
}

}  // namespace

std::string kind_name(KindId k) {
  switch (k) {
    case kFloor: return "floor";
    case kWall: return "wall";
    case kDoorClosed: return "door_closed";
    case kDoorOpen: return "door_open";
    case kOutOfBounds: return "out_of_bounds";
    case kNoKind: return "none";
    default: break;
  }
  int idx = k - kFirstObject;
  int shape = idx / kNumColors;
  if (shape >= kMaxShapes) return "kind" + std::to_string(k);
  return std::string(kColorNames[static_cast<std::size_t>(idx % kNumColors)]) + "_" +
         kShapeNames[static_cast<std::size_t>(shape)];
}

std::string to_string(RuleType t) {
  switch (t) {
    case RuleType::AgentHold: return "AgentHold";
    case RuleType::TileNear: return "TileNear";
    case RuleType::TileNearLeft: return "TileNearLeft";
    case RuleType::TileNearRight: return "TileNearRight";
    case RuleType::TileNearUp: return "TileNearUp";
    case RuleType::TileNearDown: return "TileNearDown";
  }
  return "?";
}

std::string to_string(GoalType t) {
  switch (t) {
    case GoalType::AgentHold: return "AgentHold";
    case GoalType::TileOnPosition: return "TileOnPosition";
    case GoalType::TileNear: return "TileNear";
    case GoalType::TileNearLeft: return "TileNearLeft";
    case GoalType::TileNearRight: return "TileNearRight";
    case GoalType::TileNearUp: return "TileNearUp";
    case GoalType::TileNearDown: return "TileNearDown";
  }
  return "?";
}

std::optional<RuleType> parse_rule_type(const std::string& s) {
  for (int i = 0; i < kNumRuleTypes; ++i)
    if (to_string(static_cast<RuleType>(i)) == s) return static_cast<RuleType>(i);
  return std::nullopt;
}

std::optional<GoalType> parse_goal_type(const std::string& s) {
  for (int i = 0; i < kNumGoalTypes; ++i)
    if (to_string(static_cast<GoalType>(i)) == s) return static_cast<GoalType>(i);
  return std::nullopt;
}

std::string to_string(Difficulty d) { return d == Difficulty::Trivial ? "trivial" : "small"; }

std::optional<Difficulty> parse_difficulty(const std::string& s) {
  if (s == "trivial") return Difficulty::Trivial;
  if (s == "small") return Difficulty::Small;
  return std::nullopt;
}

std::vector<KindId> build_structure(const Layout& layout) {
  const int n = layout.grid_size;
  auto rg = room_grid(layout.room_count);
  std::vector<KindId> cells(static_cast<std::size_t>(n * n), kFloor);
  auto set = [&](int r, int c, KindId k) { cells[static_cast<std::size_t>(r * n + c)] = k; };
  for (int r : wall_lines(n, rg.rows))
    for (int c = 0; c < n; ++c) set(r, c, kWall);
  for (int c : wall_lines(n, rg.cols))
    for (int r = 0; r < n; ++r) set(r, c, kWall);
  for (const auto& d : layout.doors) set(d.pos.row, d.pos.col, d.open ? kDoorOpen : kDoorClosed);
  return cells;
}

Observation observe(const WorldState& s) {
  Observation obs{};
  const Pos fwd = delta(s.dir);
  const Pos right = delta(turn_right(s.dir));
  for (int i = 0; i < kViewSize; ++i) {
    const int ahead = kViewSize - 1 - i;
    for (int j = 0; j < kViewSize; ++j) {
      const int side = j - kViewSize / 2;
      Pos p{s.agent.row + ahead * fwd.row + side * right.row, s.agent.col + ahead * fwd.col + side * right.col};
      obs[static_cast<std::size_t>(i * kViewSize + j)] = s.inside(p) ? s.at(p) : kOutOfBounds;
    }
  }
  return obs;
}

double success_reward(int t, int max_steps) {
  return 1.0 - 0.9 * (static_cast<double>(t) / static_cast<double>(max_steps));
}

bool extrinsic_goal_satisfied(const ExtrinsicGoal& goal, const WorldState& s) {
  switch (goal.type) {
    case GoalType::AgentHold: return s.pocket == goal.a;
    case GoalType::TileOnPosition: return s.inside(goal.position) && s.at(goal.position) == goal.a;
    default: return tile_near_match(s, goal.a, goal.b, goal_dirs(goal.type), nullptr, nullptr);
  }
}

int apply_action_and_rules(const EnvSpec& spec, WorldState& s, Action action) {
  const Pos front = s.front();
  const bool front_inside = s.inside(front);
  switch (action) {
    case Action::Forward:
      if (front_inside && walkable(s.at(front))) s.agent = front;
      break;
    case Action::TurnLeft: s.dir = turn_left(s.dir); break;
    case Action::TurnRight: s.dir = turn_right(s.dir); break;
    case Action::PickUp:
      if (front_inside && s.pocket == kNoKind && is_object(s.at(front))) {
        s.pocket = s.at(front);
        s.at(front) = kFloor;
      }
      break;
    case Action::PutDown:
      if (front_inside && s.pocket != kNoKind && s.at(front) == kFloor) {
        s.at(front) = s.pocket;
        s.pocket = kNoKind;
      }
      break;
    case Action::Toggle:
      if (front_inside) {
        if (s.at(front) == kDoorClosed)
          s.at(front) = kDoorOpen;
        else if (s.at(front) == kDoorOpen)
          s.at(front) = kDoorClosed;
      }
      break;
  }
  int fired = 0;
  for (const auto& r : spec.prerequisite_rules) fired += fire(r, s) ? 1 : 0;
  for (const auto& r : spec.distractor_rules) fired += fire(r, s) ? 1 : 0;
  ++s.t;
  return fired;
}

StepOutcome step(const EnvSpec& spec, WorldState& s, Action action) {
  if (s.t >= spec.max_steps || s.goal_achieved) throw ContractViolation("step called on a finished episode");
  StepOutcome out;
  const int t = s.t;
  out.rules_fired = apply_action_and_rules(spec, s, action);
  if (extrinsic_goal_satisfied(spec.goal, s)) {
    out.success = true;
    out.reward = success_reward(t, spec.max_steps);
    s.goal_achieved = true;
  }
  out.timeout = s.t >= spec.max_steps;
  out.done = out.success || out.timeout;
  out.obs = observe(s);
  return out;
}

WorldState reset_lifetime(const EnvSpec& spec, Rng& rng) {
  constexpr int kMaxAttempts = 100;
  const auto structure = build_structure(spec.layout);
  const int n = spec.layout.grid_size;
  const auto free_cells = floor_cells(structure, n);

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    WorldState s;
    s.size = n;
    s.cells = structure;
    std::vector<char> taken(structure.size(), 0);
    auto idx = [n](Pos p) { return static_cast<std::size_t>(p.row * n + p.col); };

    bool ok = true;
    for (const auto& o : spec.initial_objects) {
      if (!o.pos) continue;
      if (!s.inside(*o.pos) || s.at(*o.pos) != kFloor || taken[idx(*o.pos)]) {
        ok = false;
        break;
      }
      s.at(*o.pos) = o.kind;
      taken[idx(*o.pos)] = 1;
    }
    if (!ok) throw SamplerError("fixed object placement is invalid", spec.seed);

    auto draw_free = [&]() -> std::optional<Pos> {
      std::vector<Pos> avail;
      for (const auto& p : free_cells)
        if (!taken[idx(p)]) avail.push_back(p);
      if (avail.empty()) return std::nullopt;
      return avail[static_cast<std::size_t>(uniform_int(rng, static_cast<int>(avail.size())))];
    };

    for (const auto& o : spec.initial_objects) {
      if (o.pos) continue;
      auto p = draw_free();
      if (!p) throw SamplerError("no free cell for object placement", spec.seed);
      s.at(*p) = o.kind;
      taken[idx(*p)] = 1;
    }
    if (spec.agent) {
      if (!s.inside(spec.agent->pos) || !walkable(s.at(spec.agent->pos)))
        throw SamplerError("fixed agent pose is not walkable", spec.seed);
      s.agent = spec.agent->pos;
      s.dir = spec.agent->dir;
    } else {
      auto p = draw_free();
      if (!p) throw SamplerError("no free cell for the agent", spec.seed);
      s.agent = *p;
      s.dir = static_cast<Dir>(uniform_int(rng, 4));
    }
    if (extrinsic_goal_satisfied(spec.goal, s)) {
      if (spec.agent && std::all_of(spec.initial_objects.begin(), spec.initial_objects.end(),
                                    [](const ObjectPlacement& o) { return o.pos.has_value(); }))
        return s;  // fully fixed layouts are returned as given
      continue;
    }
    return s;
  }
  throw SamplerError("placement failed after bounded retries", spec.seed);
}

void EnvInstance::reset_lifetime(Rng& rng) {
  s0_ = env::reset_lifetime(*spec_, rng);
  state_ = s0_;
}

std::vector<KindId> object_multiset(const WorldState& s) {
  std::vector<KindId> out;
  for (auto k : s.cells)
    if (is_object(k)) out.push_back(k);
  if (s.pocket != kNoKind) out.push_back(s.pocket);
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Sampler
// ---------------------------------------------------------------------------

namespace {

int max_objects(const BenchConfig& b) {
  // goal operands + prerequisite inputs + distractors
  return b.difficulty == Difficulty::Trivial ? 2 + 3 : 2 + 4 + 2;
}

}  // namespace

void validate(const BenchConfig& b) {
  if (b.grid_size < 7 || b.grid_size % 2 == 0)
    throw ConfigError("grid_size must be odd and >= 7; got " + std::to_string(b.grid_size));
  if (b.n_shapes < kMinShapes || b.n_shapes > kMaxShapes)
    throw ConfigError("n_shapes must lie in [5, 12]; got " + std::to_string(b.n_shapes));
  if (b.max_steps < 1) throw ConfigError("max_steps must be positive");
  auto rg = room_grid(b.room_count);
  for (auto [parts, what] : {std::pair{rg.rows, "rows"}, std::pair{rg.cols, "cols"}}) {
    auto lines = wall_lines(b.grid_size, parts);
    for (std::size_t i = 0; i + 1 < lines.size(); ++i)
      if (lines[i + 1] - lines[i] - 1 < 2)
        throw ConfigError(std::string("grid too small for room layout (") + what + ")");
  }
  Layout probe{b.grid_size, b.room_count, {}};
  auto cells = build_structure(probe);
  int floors = static_cast<int>(floor_cells(cells, b.grid_size).size());
  if (floors < 2 * (max_objects(b) + 1))
    throw ConfigError("grid too small to place all objects: " + std::to_string(floors) + " floor cells");
}

EnvSpec sample_env_spec(Rng& rng, const BenchConfig& b) {
  validate(b);
  EnvSpec spec;
  spec.n_shapes = b.n_shapes;
  spec.max_steps = b.max_steps;
  spec.layout.grid_size = b.grid_size;
  spec.layout.room_count = b.room_count;

  // Doors: one per pair of adjacent rooms, placed inside the shared wall span.
  const auto rg = room_grid(b.room_count);
  const auto ys = wall_lines(b.grid_size, rg.rows);
  const auto xs = wall_lines(b.grid_size, rg.cols);
  auto door_open = [&]() {
    switch (b.doors) {
      case DoorInit::Open: return true;
      case DoorInit::Closed: return false;
      case DoorInit::Random: return uniform_int(rng, 2) == 1;
    }
    return false;
  };
  auto between = [&](int lo, int hi) { return lo + 1 + uniform_int(rng, hi - lo - 1); };
  for (int rr = 0; rr < rg.rows; ++rr)
    for (int cc = 0; cc + 1 < rg.cols; ++cc) {
      Pos p{between(ys[static_cast<std::size_t>(rr)], ys[static_cast<std::size_t>(rr + 1)]),
            xs[static_cast<std::size_t>(cc + 1)]};
      spec.layout.doors.push_back({p, door_open()});
    }
  for (int rr = 0; rr + 1 < rg.rows; ++rr)
    for (int cc = 0; cc < rg.cols; ++cc) {
      Pos p{ys[static_cast<std::size_t>(rr + 1)],
            between(xs[static_cast<std::size_t>(cc)], xs[static_cast<std::size_t>(cc + 1)])};
      spec.layout.doors.push_back({p, door_open()});
    }

  const int n_obj_kinds = b.n_shapes * kNumColors;
  std::vector<char> used(static_cast<std::size_t>(n_obj_kinds), 0);
  auto fresh = [&]() {
    int k;
    do {
      k = uniform_int(rng, n_obj_kinds);
    } while (used[static_cast<std::size_t>(k)]);
    used[static_cast<std::size_t>(k)] = 1;
    return static_cast<KindId>(kFirstObject + k);
  };

  // Goal.
  spec.goal.type = static_cast<GoalType>(uniform_int(rng, kNumGoalTypes));
  spec.goal.a = fresh();
  std::vector<KindId> needed{spec.goal.a};
  if (spec.goal.type == GoalType::TileOnPosition) {
    auto floors = floor_cells(build_structure(spec.layout), b.grid_size);
    spec.goal.position = floors[static_cast<std::size_t>(uniform_int(rng, static_cast<int>(floors.size())))];
  } else if (spec.goal.type != GoalType::AgentHold) {
    spec.goal.b = fresh();
    needed.push_back(spec.goal.b);
  }
  const std::vector<KindId> goal_operands = needed;

  // Prerequisite chain, built backwards from the goal operands.
  std::vector<KindId> produced;
  if (b.difficulty == Difficulty::Small) {
    const int n_rules = uniform_int(rng, 3);
    for (int i = 0; i < n_rules; ++i) {
      KindId target = kNoKind;
      for (auto k : goal_operands)
        if (std::find(produced.begin(), produced.end(), k) == produced.end()) {
          target = k;
          break;
        }
      if (target == kNoKind) target = spec.prerequisite_rules.back().a;  // chain deeper
      Rule r;
      r.type = static_cast<RuleType>(uniform_int(rng, kNumRuleTypes));
      r.a = fresh();
      r.c = target;
      needed.push_back(r.a);
      if (r.type != RuleType::AgentHold) {
        r.b = fresh();
        needed.push_back(r.b);
      }
      produced.push_back(target);
      spec.prerequisite_rules.push_back(r);
    }
  }
  for (auto k : needed)
    if (std::find(produced.begin(), produced.end(), k) == produced.end()) spec.initial_objects.push_back({k, {}});

  // Distractors.
  const int n_distractors = b.difficulty == Difficulty::Trivial ? 3 : 2;
  std::vector<KindId> distractors;
  for (int i = 0; i < n_distractors; ++i) {
    distractors.push_back(fresh());
    spec.initial_objects.push_back({distractors.back(), {}});
  }
  if (b.difficulty == Difficulty::Small) {
    const int n_drules = uniform_int(rng, 3);
    for (int i = 0; i < n_drules; ++i) {
      Rule r;
      r.type = static_cast<RuleType>(uniform_int(rng, kNumRuleTypes));
      r.a = distractors[static_cast<std::size_t>(uniform_int(rng, static_cast<int>(distractors.size())))];
      if (r.type != RuleType::AgentHold) {
        std::vector<KindId> others;
        for (const auto& o : spec.initial_objects)
          if (o.kind != r.a) others.push_back(o.kind);
        r.b = others[static_cast<std::size_t>(uniform_int(rng, static_cast<int>(others.size())))];
      }
      r.c = fresh();  // never a goal operand
      spec.distractor_rules.push_back(r);
    }
  }
  return spec;
}

}  // namespace ulee::env
