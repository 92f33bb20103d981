#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ulee::rl {

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Generalized advantage estimation over one stream. `cut[t]` stops
/// bootstrapping from step t + 1 into step t (the stream restarts there);
/// `bootstrap_value` is V of the state following the last step.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> cut, double bootstrap_value, double gamma, double lambda);

/// Discounted lifetime return with exponent (j * T + t) for step t of the
/// zero-based episode j. Episodes may be shorter than T (early termination).
double lifetime_return(const std::vector<std::vector<double>>& episode_rewards, int episode_length, double gamma);

}  // namespace ulee::rl
