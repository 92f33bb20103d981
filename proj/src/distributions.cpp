#include "ulee/distributions.hpp"

#include <algorithm>
#include <cmath>

namespace ulee::policy {

template <class T>
Categorical Categorical::from_logits(std::span<const T> logits) {
  require(logits.size() == static_cast<std::size_t>(env::kNumActions), "expected one logit per action");
  double mx = -std::numeric_limits<double>::infinity();
  for (T l : logits) mx = std::max(mx, static_cast<double>(l));
  double sum = 0.0;
  for (T l : logits) sum += std::exp(static_cast<double>(l) - mx);
  const double lse = mx + std::log(sum);
  Categorical c;
  for (std::size_t i = 0; i < logits.size(); ++i) c.log_probs[i] = static_cast<double>(logits[i]) - lse;
  return c;
}

double Categorical::entropy() const {
  double h = 0.0;
  for (double lp : log_probs) h -= std::exp(lp) * lp;
  return h;
}

int Categorical::sample(Rng& rng) const {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (int a = 0; a < env::kNumActions; ++a) {
    acc += prob(a);
    if (u < acc) return a;
  }
  // u landed in the rounding gap above the cumulative sum
  for (int a = env::kNumActions - 1; a >= 0; --a)
    if (prob(a) > 0.0) return a;
  return env::kNumActions - 1;
}

int Categorical::mode() const {
  return static_cast<int>(std::max_element(log_probs.begin(), log_probs.end()) - log_probs.begin());
}

template Categorical Categorical::from_logits<float>(std::span<const float>);
template Categorical Categorical::from_logits<double>(std::span<const double>);

}  // namespace ulee::policy
