#include "ulee/encoder.hpp"

namespace ulee::nn {

namespace {
constexpr int kTaps = 9;
}

template <class T>
GridEncoder<T>::GridEncoder(ParamSet<T>& params, const std::string& prefix, const GridEncoderConfig& cfg)
    : cfg_(cfg), n_kinds_(env::num_kinds(cfg.n_shapes)) {
  const int e = cfg.embed_dim;
  shape_emb_ = params.add(prefix + ".shape_emb", e, env::shape_vocab(cfg.n_shapes));
  color_emb_ = params.add(prefix + ".color_emb", e, env::color_vocab());
  conv_w_ = params.add(prefix + ".conv_w", cfg.channels, cfg.n_grids * kTaps * 2 * e);
  if (cfg.agent_channel) conv_agent_ = params.add(prefix + ".conv_agent", cfg.channels, cfg.n_grids * kTaps);
  conv_b_ = params.add(prefix + ".conv_b", cfg.channels, 1);
}

template <class T>
void GridEncoder<T>::init(ParamSet<T>& params, Rng& rng) const {
  normal_init(params.value(shape_emb_), 1.0, rng);
  normal_init(params.value(color_emb_), 1.0, rng);
  // The embedding stack has unit-variance entries; scale the conv so the
  // pre-activation stays O(1).
  const double fan_in = static_cast<double>(params.value(conv_w_).cols());
  orthogonal_init(params.value(conv_w_), std::sqrt(2.0) * std::sqrt(static_cast<double>(cfg_.channels) / fan_in), rng);
  if (conv_agent_ >= 0) normal_init(params.value(conv_agent_), 1.0 / std::sqrt(kTaps), rng);
  params.value(conv_b_).setZero();
}

template <class T>
Mat<T> GridEncoder<T>::embedding_matrix(const ParamSet<T>& params) const {
  const int e = cfg_.embed_dim;
  Mat<T> emb(2 * e, n_kinds_);
  for (int k = 0; k < n_kinds_; ++k) {
    const auto kind = static_cast<env::KindId>(k);
    emb.col(k).head(e) = params.value(shape_emb_).col(env::shape_index(kind));
    emb.col(k).tail(e) = params.value(color_emb_).col(env::color_index(kind));
  }
  return emb;
}

template <class T>
Mat<T> GridEncoder<T>::build_table(const ParamSet<T>& params, const Mat<T>& emb) const {
  const int e2 = 2 * cfg_.embed_dim;
  const int taps = cfg_.n_grids * kTaps;
  Mat<T> table(cfg_.channels, taps * n_kinds_);
  const auto& w = params.value(conv_w_);
  for (int tap = 0; tap < taps; ++tap) table.middleCols(tap * n_kinds_, n_kinds_).noalias() = w.middleCols(tap * e2, e2) * emb;
  return table;
}

template <class T>
Mat<T> GridEncoder<T>::apply(const ParamSet<T>& params, const Mat<T>& table, std::span<const env::KindId> kinds,
                             std::span<const int> agents) const {
  const int hw = cells(), c = cfg_.channels, ng = cfg_.n_grids;
  const int h = cfg_.height, w = cfg_.width;
  if (kinds.size() % static_cast<std::size_t>(ng * hw) != 0) throw ContractViolation("encoder input size mismatch");
  const int batch = static_cast<int>(kinds.size() / static_cast<std::size_t>(ng * hw));
  if (cfg_.agent_channel && agents.size() != static_cast<std::size_t>(batch * ng))
    throw ContractViolation("encoder agent input size mismatch");

  Mat<T> out(hw * c, batch);
  const auto& bias = params.value(conv_b_);
  for (int b = 0; b < batch; ++b) {
    T* ob = out.col(b).data();
    for (int p = 0; p < hw; ++p) Eigen::Map<Vec<T>>(ob + p * c, c) = bias.col(0);
    for (int g = 0; g < ng; ++g) {
      const env::KindId* base = kinds.data() + static_cast<std::size_t>((b * ng + g) * hw);
      const int agent = cfg_.agent_channel ? agents[static_cast<std::size_t>(b * ng + g)] : -1;
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
          Eigen::Map<Vec<T>> o(ob + (r * w + col) * c, c);
          for (int dr = -1; dr <= 1; ++dr) {
            const int rr = r + dr;
            if (rr < 0 || rr >= h) continue;
            for (int dc = -1; dc <= 1; ++dc) {
              const int cc = col + dc;
              if (cc < 0 || cc >= w) continue;
              const int tap = g * kTaps + (dr + 1) * 3 + (dc + 1);
              const int q = rr * w + cc;
              o += table.col(tap * n_kinds_ + base[q]);
              if (q == agent) o += params.value(conv_agent_).col(tap);
            }
          }
        }
    }
  }
  return out.cwiseMax(T(0));
}

template <class T>
Mat<T> GridEncoder<T>::forward(const ParamSet<T>& params, std::span<const env::KindId> kinds,
                               std::span<const int> agents, Cache* cache) const {
  Mat<T> table = build_table(params, embedding_matrix(params));
  Mat<T> out = apply(params, table, kinds, agents);
  if (cache) {
    cache->kinds.assign(kinds.begin(), kinds.end());
    cache->agents.assign(agents.begin(), agents.end());
    cache->out = out;
    cache->batch = static_cast<int>(out.cols());
  }
  return out;
}

template <class T>
Mat<T> GridEncoder<T>::forward_cached(const ParamSet<T>& params, std::span<const env::KindId> kinds,
                                      std::span<const int> agents) const {
  if (cached_owner_ != &params || cached_version_ != params.version() || cached_table_.size() == 0) {
    cached_table_ = build_table(params, embedding_matrix(params));
    cached_version_ = params.version();
    cached_owner_ = &params;
  }
  return apply(params, cached_table_, kinds, agents);
}

template <class T>
void GridEncoder<T>::backward(ParamSet<T>& params, const Cache& cache, const Mat<T>& d_out) const {
  const int hw = cells(), c = cfg_.channels, ng = cfg_.n_grids;
  const int h = cfg_.height, w = cfg_.width;
  const int e = cfg_.embed_dim, e2 = 2 * e;
  const int taps = ng * kTaps;
  const int batch = cache.batch;

  Mat<T> d_pre = d_out.cwiseProduct((cache.out.array() > T(0)).matrix().template cast<T>());
  {
    Eigen::Map<const Mat<T>> flat(d_pre.data(), c, static_cast<Eigen::Index>(hw) * batch);
    params.grad(conv_b_).col(0) += flat.rowwise().sum();
  }

  Mat<T> d_table = Mat<T>::Zero(c, taps * n_kinds_);
  Mat<T>* d_agent = cfg_.agent_channel ? &params.grad(conv_agent_) : nullptr;
  for (int b = 0; b < batch; ++b) {
    const T* db = d_pre.col(b).data();
    for (int g = 0; g < ng; ++g) {
      const env::KindId* base = cache.kinds.data() + static_cast<std::size_t>((b * ng + g) * hw);
      const int agent = cfg_.agent_channel ? cache.agents[static_cast<std::size_t>(b * ng + g)] : -1;
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
          Eigen::Map<const Vec<T>> d(db + (r * w + col) * c, c);
          for (int dr = -1; dr <= 1; ++dr) {
            const int rr = r + dr;
            if (rr < 0 || rr >= h) continue;
            for (int dc = -1; dc <= 1; ++dc) {
              const int cc = col + dc;
              if (cc < 0 || cc >= w) continue;
              const int tap = g * kTaps + (dr + 1) * 3 + (dc + 1);
              const int q = rr * w + cc;
              d_table.col(tap * n_kinds_ + base[q]) += d;
              if (q == agent) d_agent->col(tap) += d;
            }
          }
        }
    }
  }

  const Mat<T> emb = embedding_matrix(params);
  Mat<T> d_emb = Mat<T>::Zero(e2, n_kinds_);
  const Mat<T>& wconv = params.value(conv_w_);
  Mat<T>& d_w = params.grad(conv_w_);
  for (int tap = 0; tap < taps; ++tap) {
    auto dt = d_table.middleCols(tap * n_kinds_, n_kinds_);
    d_w.middleCols(tap * e2, e2).noalias() += dt * emb.transpose();
    d_emb.noalias() += wconv.middleCols(tap * e2, e2).transpose() * dt;
  }
  for (int k = 0; k < n_kinds_; ++k) {
    const auto kind = static_cast<env::KindId>(k);
    params.grad(shape_emb_).col(env::shape_index(kind)) += d_emb.col(k).head(e);
    params.grad(color_emb_).col(env::color_index(kind)) += d_emb.col(k).tail(e);
  }
}

template class GridEncoder<float>;
template class GridEncoder<double>;

}  // namespace ulee::nn
