#pragma once

#include <vector>

#include "ulee/nn.hpp"

namespace ulee::rl {

using nn::Mat;
using nn::ParamSet;

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
};

/// Adam with bias correction. Moments are kept per parameter block.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParamSet<T>& params, AdamConfig cfg);

  void step(ParamSet<T>& params);

  long steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  const std::vector<Mat<T>>& first_moments() const { return m_; }
  const std::vector<Mat<T>>& second_moments() const { return v_; }
  void restore(long steps, std::vector<Mat<T>> m, std::vector<Mat<T>> v);

 private:
  AdamConfig cfg_;
  std::vector<Mat<T>> m_, v_;
  long steps_ = 0;
};

/// Scales gradients so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
template <class T>
double clip_grad_norm(ParamSet<T>& params, double max_norm) {
  const double norm = params.grad_norm();
  if (norm > max_norm) params.scale_grad(static_cast<T>(max_norm / (norm + 1e-12)));
  return norm;
}

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace ulee::rl
