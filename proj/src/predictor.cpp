#include "ulee/predictor.hpp"

namespace ulee::curriculum {

template <class T>
DifficultyPredictor<T>::DifficultyPredictor(const PredictorConfig& cfg) : cfg_(cfg) {
  nn::GridEncoderConfig ec;
  ec.height = cfg.grid_size;
  ec.width = cfg.grid_size;
  ec.n_grids = 2;
  ec.agent_channel = true;
  ec.embed_dim = cfg.embed_dim;
  ec.channels = cfg.channels;
  ec.n_shapes = cfg.n_shapes;
  encoder_ = nn::GridEncoder<T>(params_, "dp.enc", ec);
  head_ = nn::Mlp<T>(params_, "dp.head", encoder_.output_dim(), cfg.hidden, 1);
}

template <class T>
void DifficultyPredictor<T>::init(Rng& rng) {
  encoder_.init(params_, rng);
  head_.init(params_, std::sqrt(2.0), 0.0, rng);
}

template <class T>
void DifficultyPredictor<T>::gather(std::span<const PredictorInput> inputs, std::vector<env::KindId>& kinds,
                                    std::vector<int>& agents) const {
  const int n = cfg_.grid_size;
  const auto cells = static_cast<std::size_t>(n * n);
  kinds.resize(inputs.size() * 2 * cells);
  agents.resize(inputs.size() * 2);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const goals::GridGoal* grids[2] = {inputs[i].goal, inputs[i].env_info};
    for (std::size_t g = 0; g < 2; ++g) {
      const auto* s = grids[g];
      if (!s || s->size != n || s->cells.size() != cells)
        throw ContractViolation("predictor input geometry does not match the configured grid");
      std::copy(s->cells.begin(), s->cells.end(), kinds.begin() + static_cast<std::ptrdiff_t>((i * 2 + g) * cells));
      agents[i * 2 + g] = s->agent.row * n + s->agent.col;
    }
  }
}

template <class T>
Mat<T> DifficultyPredictor<T>::logits(std::span<const PredictorInput> inputs,
                                      typename nn::GridEncoder<T>::Cache* enc_cache, std::vector<Mat<T>>* acts) const {
  std::vector<env::KindId> kinds;
  std::vector<int> agents;
  gather(inputs, kinds, agents);
  Mat<T> enc = enc_cache ? encoder_.forward(params_, kinds, agents, enc_cache)
                         : encoder_.forward_cached(params_, kinds, agents);
  return head_.forward(params_, enc, acts, enc_cache == nullptr);
}

template <class T>
std::vector<double> DifficultyPredictor<T>::predict(std::span<const PredictorInput> inputs) const {
  std::vector<double> out(inputs.size());
  constexpr std::size_t kBlock = 512;
  for (std::size_t lo = 0; lo < inputs.size(); lo += kBlock) {
    const auto n = std::min(kBlock, inputs.size() - lo);
    Mat<T> z = logits(inputs.subspan(lo, n), nullptr, nullptr);
    for (std::size_t i = 0; i < n; ++i) out[lo + i] = nn::sigmoid(static_cast<double>(z(0, static_cast<Eigen::Index>(i))));
  }
  return out;
}

template <class T>
double DifficultyPredictor<T>::predict(const goals::GridGoal& goal, const goals::GridGoal& env_info) const {
  PredictorInput in{&goal, &env_info};
  return predict(std::span<const PredictorInput>(&in, 1)).front();
}

template <class T>
double DifficultyPredictor<T>::loss(std::span<const PredictorInput> inputs, std::span<const double> targets,
                                    bool accumulate_grad) {
  require(inputs.size() == targets.size(), "one target per predictor input");
  require(!inputs.empty(), "empty predictor batch");
  typename nn::GridEncoder<T>::Cache cache;
  std::vector<Mat<T>> acts;
  Mat<T> z = logits(inputs, accumulate_grad ? &cache : nullptr, accumulate_grad ? &acts : nullptr);
  const double n = static_cast<double>(inputs.size());
  double total = 0.0;
  Mat<T> dz(1, z.cols());
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    const double p = nn::sigmoid(static_cast<double>(z(0, i)));
    const double r = p - targets[static_cast<std::size_t>(i)];
    total += r * r;
    dz(0, i) = static_cast<T>(2.0 * r * p * (1.0 - p) / n);
  }
  if (accumulate_grad) {
    Mat<T> d_enc = head_.backward(params_, acts, dz);
    encoder_.backward(params_, cache, d_enc);
  }
  return total / n;
}

template class DifficultyPredictor<float>;
template class DifficultyPredictor<double>;

}  // namespace ulee::curriculum
