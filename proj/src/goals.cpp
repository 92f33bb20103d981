#include "ulee/goals.hpp"

#include <array>
#include <charconv>
#include <sstream>

namespace ulee::goals {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

int to_int(const std::string& s) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError("bad integer in goal record: '" + s + "'");
  return v;
}

}  // namespace

std::string to_string(Mapping m) { return m == Mapping::Counts ? "counts" : "grid"; }

std::optional<Mapping> parse_mapping(const std::string& s) {
  if (s == "counts") return Mapping::Counts;
  if (s == "grid") return Mapping::Grid;
  return std::nullopt;
}

CountsGoal f_counts(const env::WorldState& s, int n_kinds) {
  CountsGoal g;
  g.counts.assign(static_cast<std::size_t>(n_kinds), 0);
  for (auto k : s.cells) {
    if (k >= n_kinds) throw ContractViolation("cell kind outside the count vocabulary");
    ++g.counts[k];
  }
  return g;
}

GridGoal f_grid(const env::WorldState& s) { return GridGoal{s.size, s.cells, s.agent}; }

Goal GoalMapper::operator()(const env::WorldState& s) const {
  if (mapping_ == Mapping::Counts) return Goal{f_counts(s, n_kinds_)};
  return Goal{f_grid(s)};
}

bool goal_reached(const env::WorldState& s, const Goal& g) {
  if (const auto* c = std::get_if<CountsGoal>(&g.value)) {
    std::array<std::int32_t, 256> tally{};
    for (auto k : s.cells) ++tally[k];
    for (std::size_t k = 0; k < tally.size(); ++k) {
      const std::int32_t want = k < c->counts.size() ? c->counts[k] : 0;
      if (tally[k] != want) return false;
    }
    return true;
  }
  const auto& gg = std::get<GridGoal>(g.value);
  return gg.size == s.size && gg.agent == s.agent && gg.cells == s.cells;
}

bool goal_reached(const env::WorldState& s, const Goal& g, Mapping expected) {
  if (g.mapping() != expected) throw ContractViolation("goal variant does not match the configured mapping");
  return goal_reached(s, g);
}

double intrinsic_reward(bool reached_first_time, int t, int max_steps) {
  if (t < 0 || t > max_steps) throw ContractViolation("intrinsic_reward: t outside [0, max_steps]");
  return reached_first_time ? env::success_reward(t, max_steps) : 0.0;
}

std::string to_text(const GridGoal& g) {
  std::ostringstream os;
  os << "grid:" << g.size << ':' << g.agent.row << ',' << g.agent.col << ':';
  for (std::size_t i = 0; i < g.cells.size(); ++i) os << (i ? "," : "") << int(g.cells[i]);
  return os.str();
}

std::string to_text(const Goal& g) {
  if (const auto* c = std::get_if<CountsGoal>(&g.value)) {
    std::ostringstream os;
    os << "counts:" << c->counts.size() << ':';
    for (std::size_t i = 0; i < c->counts.size(); ++i) os << (i ? "," : "") << c->counts[i];
    return os.str();
  }
  return to_text(std::get<GridGoal>(g.value));
}

GridGoal grid_from_text(const std::string& s) {
  auto parts = split(s, ':');
  if (parts.size() != 4 || parts[0] != "grid") throw ConfigError("bad grid goal record");
  GridGoal g;
  g.size = to_int(parts[1]);
  auto pos = split(parts[2], ',');
  if (pos.size() != 2) throw ConfigError("bad agent position in grid goal");
  g.agent = {to_int(pos[0]), to_int(pos[1])};
  for (const auto& v : split(parts[3], ',')) g.cells.push_back(static_cast<env::KindId>(to_int(v)));
  if (static_cast<int>(g.cells.size()) != g.size * g.size) throw ConfigError("grid goal cell count mismatch");
  return g;
}

Goal goal_from_text(const std::string& s) {
  if (s.rfind("grid:", 0) == 0) return Goal{grid_from_text(s)};
  auto parts = split(s, ':');
  if (parts.size() != 3 || parts[0] != "counts") throw ConfigError("bad goal record");
  CountsGoal c;
  const int n = to_int(parts[1]);
  if (n > 0)
    for (const auto& v : split(parts[2], ',')) c.counts.push_back(to_int(v));
  if (static_cast<int>(c.counts.size()) != n) throw ConfigError("counts goal length mismatch");
  return Goal{c};
}

}  // namespace ulee::goals
