#include "ulee/spec_io.hpp"

#include <charconv>
#include <map>
#include <sstream>

namespace ulee::env {

namespace {

constexpr const char* kMagic = "ulee-spec/";

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

template <class Int>
Int parse_int(const std::string& s, const char* what) {
  Int v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ConfigError(std::string("bad integer for ") + what + ": '" + s + "'");
  return v;
}

KindId parse_kind(const std::string& s) {
  int v = parse_int<int>(s, "kind");
  if (v < 0 || v >= kNoKind) throw ConfigError("kind id out of range: " + s);
  return static_cast<KindId>(v);
}

Pos parse_pos(const std::string& s) {
  auto parts = split(s, ',');
  if (parts.size() != 2) throw ConfigError("bad position: " + s);
  return {parse_int<int>(parts[0], "row"), parse_int<int>(parts[1], "col")};
}

char dir_char(Dir d) { return "NESW"[static_cast<int>(d)]; }

Dir parse_dir(const std::string& s) {
  static const std::string kDirs = "NESW";
  if (s.size() != 1 || kDirs.find(s[0]) == std::string::npos) throw ConfigError("bad direction: " + s);
  return static_cast<Dir>(kDirs.find(s[0]));
}

std::string rules_text(const std::vector<Rule>& rules) {
  if (rules.empty()) return "-";
  std::ostringstream os;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    const auto& r = rules[i];
    if (i) os << ';';
    os << to_string(r.type) << ':' << int(r.a);
    if (r.type != RuleType::AgentHold) os << ',' << int(r.b);
    os << '>' << int(r.c);
  }
  return os.str();
}

std::vector<Rule> parse_rules(const std::string& s) {
  std::vector<Rule> out;
  if (s == "-") return out;
  for (const auto& item : split(s, ';')) {
    auto colon = item.find(':');
    auto arrow = item.find('>');
    if (colon == std::string::npos || arrow == std::string::npos || arrow < colon)
      throw ConfigError("bad rule: " + item);
    auto type = parse_rule_type(item.substr(0, colon));
    if (!type) throw ConfigError("unknown rule type: " + item);
    Rule r;
    r.type = *type;
    auto operands = split(item.substr(colon + 1, arrow - colon - 1), ',');
    const std::size_t expected = r.type == RuleType::AgentHold ? 1 : 2;
    if (operands.size() != expected) throw ConfigError("wrong operand count: " + item);
    r.a = parse_kind(operands[0]);
    if (expected == 2) r.b = parse_kind(operands[1]);
    r.c = parse_kind(item.substr(arrow + 1));
    out.push_back(r);
  }
  return out;
}

}  // namespace

std::string to_text(const EnvSpec& spec) {
  std::ostringstream os;
  os << kMagic << EnvSpec::kFormatVersion << " seed=" << spec.seed << " grid=" << spec.layout.grid_size
     << " rooms=" << spec.layout.room_count << " shapes=" << spec.n_shapes << " max_steps=" << spec.max_steps;

  os << " doors=";
  if (spec.layout.doors.empty()) os << '-';
  for (std::size_t i = 0; i < spec.layout.doors.size(); ++i) {
    const auto& d = spec.layout.doors[i];
    os << (i ? ";" : "") << d.pos.row << ',' << d.pos.col << ',' << (d.open ? 'o' : 'c');
  }

  const auto& g = spec.goal;
  os << " goal=" << to_string(g.type) << ':' << int(g.a);
  if (g.type == GoalType::TileOnPosition)
    os << '@' << g.position.row << ',' << g.position.col;
  else if (g.type != GoalType::AgentHold)
    os << ',' << int(g.b);

  os << " rules=" << rules_text(spec.prerequisite_rules) << " drules=" << rules_text(spec.distractor_rules);

  os << " objects=";
  if (spec.initial_objects.empty()) os << '-';
  for (std::size_t i = 0; i < spec.initial_objects.size(); ++i) {
    const auto& o = spec.initial_objects[i];
    os << (i ? ";" : "") << int(o.kind) << '@';
    if (o.pos)
      os << o.pos->row << ',' << o.pos->col;
    else
      os << '*';
  }

  os << " agent=";
  if (spec.agent)
    os << spec.agent->pos.row << ',' << spec.agent->pos.col << ',' << dir_char(spec.agent->dir);
  else
    os << '*';
  return os.str();
}

EnvSpec spec_from_text(const std::string& line) {
  std::istringstream is(line);
  std::string head;
  is >> head;
  if (head.rfind(kMagic, 0) != 0) throw ConfigError("not a spec record: '" + head + "'");
  int version = parse_int<int>(head.substr(std::string(kMagic).size()), "version");
  if (version != EnvSpec::kFormatVersion) throw ConfigError("unsupported spec version " + std::to_string(version));

  std::map<std::string, std::string> kv;
  std::string tok;
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw ConfigError("bad field: " + tok);
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto field = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(std::string("missing field: ") + key);
    return it->second;
  };

  EnvSpec spec;
  spec.seed = parse_int<std::uint64_t>(field("seed"), "seed");
  spec.layout.grid_size = parse_int<int>(field("grid"), "grid");
  spec.layout.room_count = parse_int<int>(field("rooms"), "rooms");
  spec.n_shapes = parse_int<int>(field("shapes"), "shapes");
  spec.max_steps = parse_int<int>(field("max_steps"), "max_steps");

  if (field("doors") != "-")
    for (const auto& item : split(field("doors"), ';')) {
      auto parts = split(item, ',');
      if (parts.size() != 3 || (parts[2] != "o" && parts[2] != "c")) throw ConfigError("bad door: " + item);
      spec.layout.doors.push_back(
          {{parse_int<int>(parts[0], "door row"), parse_int<int>(parts[1], "door col")}, parts[2] == "o"});
    }

  {
    const auto& g = field("goal");
    auto colon = g.find(':');
    if (colon == std::string::npos) throw ConfigError("bad goal: " + g);
    auto type = parse_goal_type(g.substr(0, colon));
    if (!type) throw ConfigError("unknown goal type: " + g);
    spec.goal.type = *type;
    auto rest = g.substr(colon + 1);
    if (*type == GoalType::TileOnPosition) {
      auto at = rest.find('@');
      if (at == std::string::npos) throw ConfigError("TileOnPosition needs a position: " + g);
      spec.goal.a = parse_kind(rest.substr(0, at));
      spec.goal.position = parse_pos(rest.substr(at + 1));
    } else if (*type == GoalType::AgentHold) {
      spec.goal.a = parse_kind(rest);
    } else {
      auto ops = split(rest, ',');
      if (ops.size() != 2) throw ConfigError("goal needs two operands: " + g);
      spec.goal.a = parse_kind(ops[0]);
      spec.goal.b = parse_kind(ops[1]);
    }
  }

  spec.prerequisite_rules = parse_rules(field("rules"));
  spec.distractor_rules = parse_rules(field("drules"));

  if (field("objects") != "-")
    for (const auto& item : split(field("objects"), ';')) {
      auto at = item.find('@');
      if (at == std::string::npos) throw ConfigError("bad object: " + item);
      ObjectPlacement o;
      o.kind = parse_kind(item.substr(0, at));
      auto where = item.substr(at + 1);
      if (where != "*") o.pos = parse_pos(where);
      spec.initial_objects.push_back(o);
    }

  if (field("agent") != "*") {
    auto parts = split(field("agent"), ',');
    if (parts.size() != 3) throw ConfigError("bad agent pose: " + field("agent"));
    spec.agent = AgentPose{{parse_int<int>(parts[0], "agent row"), parse_int<int>(parts[1], "agent col")},
                           parse_dir(parts[2])};
  }
  return spec;
}

}  // namespace ulee::env
