#pragma once

#include <array>
#include <span>

#include "ulee/common.hpp"
#include "ulee/env.hpp"

namespace ulee::policy {

/// Categorical distribution over the action logits (softmax), evaluated in
/// double precision.
struct Categorical {
  std::array<double, env::kNumActions> log_probs{};

  template <class T>
  static Categorical from_logits(std::span<const T> logits);

  double prob(int a) const { return std::exp(log_probs[static_cast<std::size_t>(a)]); }
  double log_prob(int a) const { return log_probs[static_cast<std::size_t>(a)]; }
  double entropy() const;
  int sample(Rng& rng) const;
  int mode() const;
};

template <class T>
int sample_action(std::span<const T> logits, Rng& rng) {
  return Categorical::from_logits(logits).sample(rng);
}

template <class T>
double log_prob(std::span<const T> logits, int a) {
  return Categorical::from_logits(logits).log_prob(a);
}

template <class T>
double entropy(std::span<const T> logits) {
  return Categorical::from_logits(logits).entropy();
}

}  // namespace ulee::policy
