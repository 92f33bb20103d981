#pragma once

#include <string>

#include "ulee/env.hpp"

namespace ulee::env {

/// Canonical one-line record, e.g.
///   ulee-spec/1 seed=17 grid=9 rooms=4 shapes=5 max_steps=128 doors=4,2,o;2,4,c
///   goal=TileNear:7,12 rules=AgentHold:9>7 drules=- objects=9@*;12@* agent=*
/// (wrapped here; the record itself is a single line).
std::string to_text(const EnvSpec& spec);

/// Inverse of to_text; throws ConfigError on malformed or wrong-version input.
EnvSpec spec_from_text(const std::string& line);

}  // namespace ulee::env
