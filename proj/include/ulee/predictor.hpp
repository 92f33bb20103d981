#pragma once

#include <span>
#include <vector>

#include "ulee/encoder.hpp"
#include "ulee/goals.hpp"
#include "ulee/nn.hpp"

namespace ulee::curriculum {

using nn::Mat;
using nn::ParamSet;

struct PredictorConfig {
  int grid_size = 9;
  int n_shapes = env::kMinShapes;
  int embed_dim = 16;
  int channels = 16;
  std::vector<int> hidden{128, 128};
};

/// (goal-defining snapshot, initial-state snapshot) pair with an optional
/// regression target.
struct PredictorInput {
  const goals::GridGoal* goal = nullptr;
  const goals::GridGoal* env_info = nullptr;
};

/// Regresses a goal's difficulty from the goal snapshot and the lifetime's
/// initial snapshot, stacked as two grids under one encoder. The output is
/// logistic, so predictions stay in [0, 1].
template <class T>
class DifficultyPredictor {
 public:
  explicit DifficultyPredictor(const PredictorConfig& cfg);

  /// The output layer starts at zero, so an untrained predictor returns 0.5.
  void init(Rng& rng);

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const PredictorConfig& config() const { return cfg_; }
  std::uint64_t architecture_hash() const { return params_.architecture_hash(); }

  std::vector<double> predict(std::span<const PredictorInput> inputs) const;
  double predict(const goals::GridGoal& goal, const goals::GridGoal& env_info) const;

  /// Mean squared error against `targets`; accumulates gradients when asked.
  double loss(std::span<const PredictorInput> inputs, std::span<const double> targets, bool accumulate_grad);

 private:
  void gather(std::span<const PredictorInput> inputs, std::vector<env::KindId>& kinds, std::vector<int>& agents) const;
  Mat<T> logits(std::span<const PredictorInput> inputs, typename nn::GridEncoder<T>::Cache* enc_cache,
                std::vector<Mat<T>>* acts) const;

  PredictorConfig cfg_;
  ParamSet<T> params_;
  nn::GridEncoder<T> encoder_;
  nn::Mlp<T> head_;
};

extern template class DifficultyPredictor<float>;
extern template class DifficultyPredictor<double>;

}  // namespace ulee::curriculum
