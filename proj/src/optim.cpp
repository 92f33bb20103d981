#include "ulee/optim.hpp"

#include <cmath>

namespace ulee::rl {

template <class T>
Adam<T>::Adam(const ParamSet<T>& params, AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg.lr > 0) || !(cfg.eps > 0) || cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1)
    throw ConfigError("invalid Adam configuration");
  for (int i = 0; i < params.num_blocks(); ++i) {
    m_.push_back(Mat<T>::Zero(params.value(i).rows(), params.value(i).cols()));
    v_.push_back(Mat<T>::Zero(params.value(i).rows(), params.value(i).cols()));
  }
}

template <class T>
void Adam<T>::step(ParamSet<T>& params) {
  require(static_cast<int>(m_.size()) == params.num_blocks(), "optimizer state does not match parameters");
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T step_size = static_cast<T>(cfg_.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg_.eps);
  for (int i = 0; i < params.num_blocks(); ++i) {
    const auto& g = params.grad(i);
    auto& m = m_[static_cast<std::size_t>(i)];
    auto& v = v_[static_cast<std::size_t>(i)];
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    params.value(i).array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

template <class T>
void Adam<T>::restore(long steps, std::vector<Mat<T>> m, std::vector<Mat<T>> v) {
  require(m.size() == m_.size() && v.size() == v_.size(), "optimizer state layout mismatch");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace ulee::rl
