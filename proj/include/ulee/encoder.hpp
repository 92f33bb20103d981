#pragma once

#include <span>
#include <vector>

#include "ulee/env.hpp"
#include "ulee/nn.hpp"

namespace ulee::nn {

struct GridEncoderConfig {
  int height = env::kViewSize;
  int width = env::kViewSize;
  int n_grids = 1;             // grids stacked along the channel axis
  bool agent_channel = false;  // one extra binary channel per grid
  int embed_dim = 16;
  int channels = 16;
  int n_shapes = env::kMinShapes;
};

/// Symbolic grid encoder: per-cell shape and color embeddings followed by a
/// 3x3 same-padded convolution, ReLU, and flatten.
///
/// Embedding and convolution are both linear, so the convolution is evaluated
/// through per-(offset, kind) lookup tables W_off * e(kind). The backward pass
/// accumulates table gradients and folds them into the conv weights and the
/// embedding tables; the result is the exact gradient of the composed map.
template <class T>
class GridEncoder {
 public:
  GridEncoder() = default;
  GridEncoder(ParamSet<T>& params, const std::string& prefix, const GridEncoderConfig& cfg);

  void init(ParamSet<T>& params, Rng& rng) const;

  int cells() const { return cfg_.height * cfg_.width; }
  int output_dim() const { return cells() * cfg_.channels; }
  const GridEncoderConfig& config() const { return cfg_; }

  struct Cache {
    std::vector<env::KindId> kinds;
    std::vector<int> agents;
    Mat<T> out;  // post-ReLU
    int batch = 0;
  };

  /// kinds: batch x n_grids x cells (sample-major); agents: batch x n_grids cell
  /// index or -1 (ignored without an agent channel). Returns output_dim x batch.
  Mat<T> forward(const ParamSet<T>& params, std::span<const env::KindId> kinds, std::span<const int> agents,
                 Cache* cache) const;

  /// Forward that reuses lookup tables across calls while parameters are
  /// unchanged. For inference only.
  Mat<T> forward_cached(const ParamSet<T>& params, std::span<const env::KindId> kinds,
                        std::span<const int> agents) const;

  void backward(ParamSet<T>& params, const Cache& cache, const Mat<T>& d_out) const;

 private:
  Mat<T> embedding_matrix(const ParamSet<T>& params) const;  // 2E x n_kinds
  Mat<T> build_table(const ParamSet<T>& params, const Mat<T>& emb) const;
  Mat<T> apply(const ParamSet<T>& params, const Mat<T>& table, std::span<const env::KindId> kinds,
               std::span<const int> agents) const;

  GridEncoderConfig cfg_;
  int n_kinds_ = 0;
  int shape_emb_ = -1, color_emb_ = -1, conv_w_ = -1, conv_agent_ = -1, conv_b_ = -1;

  mutable Mat<T> cached_table_;
  mutable std::uint64_t cached_version_ = ~0ULL;
  mutable const void* cached_owner_ = nullptr;
};

extern template class GridEncoder<float>;
extern template class GridEncoder<double>;

}  // namespace ulee::nn
