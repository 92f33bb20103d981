#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ulee/encoder.hpp"
#include "ulee/env.hpp"
#include "ulee/nn.hpp"

namespace ulee::policy {

using nn::Mat;
using nn::ParamSet;
using nn::RowVec;
using nn::Vec;

enum class CoreKind : std::uint8_t { Gru, Attention };

std::string to_string(CoreKind k);
std::optional<CoreKind> parse_core(const std::string& s);

struct PolicyConfig {
  int n_shapes = env::kMinShapes;
  int embed_dim = 16;
  int conv_channels = 16;
  int hidden = 64;
  std::vector<int> head_hidden{128, 128};
  CoreKind core = CoreKind::Gru;
  int attention_window = 32;  // steps attended per block, current step included
  int attention_blocks = 2;

  /// Number of past steps that can influence the current output; unbounded
  /// (nullopt) for the recurrent core.
  std::optional<int> memory_horizon() const;
};

inline constexpr int kDummyAction = env::kNumActions;  // lifetime-start placeholder

/// Per-step inputs {o_t, d_t, a_{t-1}, r_{t-1}} for a batch of streams.
struct StepInputs {
  std::vector<env::Observation> obs;
  std::vector<std::uint8_t> episode_start;
  std::vector<std::int8_t> prev_action;  // -1 at lifetime start
  std::vector<float> prev_reward;

  int size() const { return static_cast<int>(obs.size()); }
  void resize(int n) {
    obs.resize(static_cast<std::size_t>(n));
    episode_start.resize(static_cast<std::size_t>(n));
    prev_action.resize(static_cast<std::size_t>(n));
    prev_reward.resize(static_cast<std::size_t>(n));
  }
};

/// B sequences of L steps, time-major (index t * B + b).
template <class T>
struct SeqBatch {
  int batch = 0;
  int length = 0;
  StepInputs inputs;
  std::vector<std::uint8_t> reset;  // memory zeroed before this step
  Mat<T> init_memory;               // memory_dim x B
};

// ---------------------------------------------------------------------------
// Sequence cores
// ---------------------------------------------------------------------------

/// Gated recurrent cell (r, z, n gate order).
template <class T>
class GruCore {
 public:
  GruCore() = default;
  GruCore(ParamSet<T>& params, int hidden);
  void init(ParamSet<T>& params, Rng& rng) const;
  int memory_dim() const { return hidden_; }

  Mat<T> step(const ParamSet<T>& params, const Mat<T>& x, Mat<T>& memory) const;
  std::vector<Mat<T>> forward_sequence(const ParamSet<T>& params, const std::vector<Mat<T>>& xs,
                                       std::span<const std::uint8_t> reset, const Mat<T>& init_memory);
  std::vector<Mat<T>> backward_sequence(ParamSet<T>& params, const std::vector<Mat<T>>& dys);

 private:
  struct StepCache {
    Mat<T> x, h_prev, r, z, n, gh_n;
  };
  int hidden_ = 0;
  int wi_ = -1, wh_ = -1, bi_ = -1, bh_ = -1;
  std::vector<StepCache> cache_;
  std::vector<std::uint8_t> reset_;
  int batch_ = 0;
};

/// Stack of causal sliding-window self-attention blocks. Each block attends
/// over its own last `window` inputs (keys/values of earlier steps come from
/// the memory cache and are treated as constants), adds a learned relative
/// position bias, and applies a residual ReLU feed-forward layer.
///
/// Memory column layout: [valid_count, block0 K slots, block0 V slots, ...],
/// slots right-aligned in chronological order (newest last).
template <class T>
class AttentionCore {
 public:
  AttentionCore() = default;
  AttentionCore(ParamSet<T>& params, int hidden, int window, int blocks);
  void init(ParamSet<T>& params, Rng& rng) const;
  int memory_dim() const { return 1 + blocks_ * 2 * slots() * hidden_; }

  Mat<T> step(const ParamSet<T>& params, const Mat<T>& x, Mat<T>& memory) const;
  std::vector<Mat<T>> forward_sequence(const ParamSet<T>& params, const std::vector<Mat<T>>& xs,
                                       std::span<const std::uint8_t> reset, const Mat<T>& init_memory);
  std::vector<Mat<T>> backward_sequence(ParamSet<T>& params, const std::vector<Mat<T>>& dys);

 private:
  struct BlockParams {
    int wq, wk, wv, wo, pos, w1, b1, w2, b2;
  };
  struct BlockCache {
    Mat<T> u, q, k, v, z, y, h1;  // H x (L*B), time-major columns
    // per (t, b): attention weights over the context, in context order
    std::vector<std::vector<T>> attn;
  };
  int slots() const { return window_ - 1; }
  int k_offset(int block) const { return 1 + block * 2 * slots() * hidden_; }
  int v_offset(int block) const { return k_offset(block) + slots() * hidden_; }

  int hidden_ = 0, window_ = 0, blocks_ = 0;
  std::vector<BlockParams> bp_;
  // training cache
  std::vector<BlockCache> cache_;
  std::vector<int> seq_start_;  // per (t, b): first in-sequence step visible (after resets)
  std::vector<int> mem_count_;  // per (t, b): memory entries visible
  Mat<T> init_memory_;
  int batch_ = 0, length_ = 0;
};

// ---------------------------------------------------------------------------
// Policy network
// ---------------------------------------------------------------------------

/// Actor-critic over per-step inputs with a shared sequence core and two
/// independent MLP heads.
template <class T>
class PolicyNet {
 public:
  explicit PolicyNet(const PolicyConfig& cfg);

  /// Orthogonal weights, zero biases, actor output layer scaled by 0.01.
  void init(Rng& rng);

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const PolicyConfig& config() const { return cfg_; }
  int memory_dim() const;
  int feature_dim() const { return cfg_.hidden; }
  std::uint64_t architecture_hash() const { return params_.architecture_hash(); }

  /// Canonical zero memory for `batch` fresh lifetimes.
  Mat<T> initial_memory(int batch) const { return Mat<T>::Zero(memory_dim(), batch); }

  struct Output {
    Mat<T> logits;    // kNumActions x B
    RowVec<T> values; // 1 x B
  };

  /// Step features (hidden x B), before the sequence core.
  Mat<T> encode(const StepInputs& in) const;

  /// One step for B streams; memory (memory_dim x B) is advanced in place.
  /// Throws NumericalFault on non-finite output.
  Output step(const StepInputs& in, Mat<T>& memory) const;

  /// Training forward over a sequence batch; keeps the activations needed by
  /// backward_sequence. Outputs are time-major (column t * B + b).
  Output forward_sequence(const SeqBatch<T>& batch);

  /// Accumulates parameter gradients for dL/dlogits and dL/dvalues.
  void backward_sequence(const Mat<T>& d_logits, const RowVec<T>& d_values);

 private:
  Mat<T> assemble(const StepInputs& in, const Mat<T>& enc) const;
  Mat<T> core_step(const Mat<T>& x, Mat<T>& memory) const;

  PolicyConfig cfg_;
  ParamSet<T> params_;
  nn::GridEncoder<T> encoder_;
  int action_emb_ = -1, done_emb_ = -1, proj_w_ = -1, proj_b_ = -1;
  std::variant<GruCore<T>, AttentionCore<T>> core_;
  nn::Mlp<T> actor_;
  nn::Mlp<T> critic_;

  struct TrainCache {
    typename nn::GridEncoder<T>::Cache enc;
    StepInputs inputs;
    Mat<T> feat_in, x;
    std::vector<Mat<T>> actor_acts, critic_acts;
    int batch = 0, length = 0;
  } cache_;
};

extern template class GruCore<float>;
extern template class GruCore<double>;
extern template class AttentionCore<float>;
extern template class AttentionCore<double>;
extern template class PolicyNet<float>;
extern template class PolicyNet<double>;

}  // namespace ulee::policy
