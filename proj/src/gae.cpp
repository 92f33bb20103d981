#include "ulee/gae.hpp"

#include <cmath>

#include "ulee/common.hpp"

namespace ulee::rl {

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> cut, double bootstrap_value, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || cut.size() != n) throw ContractViolation("compute_gae: length mismatch");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_value = bootstrap_value;
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double mask = cut[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * mask * next_value - values[i];
    next_adv = delta + gamma * lambda * mask * next_adv;
    out.advantages[i] = next_adv;
    out.returns[i] = next_adv + values[i];
    next_value = values[i];
  }
  return out;
}

double lifetime_return(const std::vector<std::vector<double>>& episode_rewards, int episode_length, double gamma) {
  double total = 0.0;
  for (std::size_t j = 0; j < episode_rewards.size(); ++j) {
    const auto& ep = episode_rewards[j];
    if (static_cast<int>(ep.size()) > episode_length) throw ContractViolation("episode longer than its nominal length");
    double disc = std::pow(gamma, static_cast<double>(j) * episode_length);
    for (double r : ep) {
      total += disc * r;
      disc *= gamma;
    }
  }
  return total;
}

}  // namespace ulee::rl
