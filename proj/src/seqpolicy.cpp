#include "ulee/seqpolicy.hpp"

#include <algorithm>
#include <cmath>

namespace ulee::policy {

static_assert(sizeof(env::Observation) == env::kViewCells, "observations must be tightly packed");

std::string to_string(CoreKind k) { return k == CoreKind::Gru ? "gru" : "attention"; }

std::optional<CoreKind> parse_core(const std::string& s) {
  if (s == "gru") return CoreKind::Gru;
  if (s == "attention") return CoreKind::Attention;
  return std::nullopt;
}

std::optional<int> PolicyConfig::memory_horizon() const {
  if (core == CoreKind::Gru) return std::nullopt;
  return attention_blocks * (attention_window - 1);
}

namespace {

template <class T>
Mat<T> sigmoid_m(const Mat<T>& x) {
  return x.unaryExpr([](T v) { return nn::sigmoid(v); });
}

template <class T>
std::span<const env::KindId> flat_kinds(const StepInputs& in) {
  return {in.obs.empty() ? nullptr : in.obs.front().data(), in.obs.size() * env::kViewCells};
}

}  // namespace

// ---------------------------------------------------------------------------
// GRU
// ---------------------------------------------------------------------------

template <class T>
GruCore<T>::GruCore(ParamSet<T>& params, int hidden) : hidden_(hidden) {
  wi_ = params.add("core.gru.wi", 3 * hidden, hidden);
  wh_ = params.add("core.gru.wh", 3 * hidden, hidden);
  bi_ = params.add("core.gru.bi", 3 * hidden, 1);
  bh_ = params.add("core.gru.bh", 3 * hidden, 1);
}

template <class T>
void GruCore<T>::init(ParamSet<T>& params, Rng& rng) const {
  const int h = hidden_;
  for (int w : {wi_, wh_}) {
    Mat<T>& m = params.value(w);
    for (int g = 0; g < 3; ++g) {
      Mat<T> block(h, h);
      nn::orthogonal_init(block, 1.0, rng);
      m.middleRows(g * h, h) = block;
    }
  }
  params.value(bi_).setZero();
  params.value(bh_).setZero();
}

template <class T>
Mat<T> GruCore<T>::step(const ParamSet<T>& params, const Mat<T>& x, Mat<T>& h) const {
  const int n = hidden_;
  Mat<T> gi = params.value(wi_) * x;
  gi.colwise() += params.value(bi_).col(0);
  Mat<T> gh = params.value(wh_) * h;
  gh.colwise() += params.value(bh_).col(0);
  Mat<T> r = sigmoid_m<T>(gi.topRows(n) + gh.topRows(n));
  Mat<T> z = sigmoid_m<T>(gi.middleRows(n, n) + gh.middleRows(n, n));
  Mat<T> cand = (gi.bottomRows(n) + r.cwiseProduct(gh.bottomRows(n))).array().tanh().matrix();
  h = (Mat<T>::Ones(n, x.cols()) - z).cwiseProduct(cand) + z.cwiseProduct(h);
  return h;
}

template <class T>
std::vector<Mat<T>> GruCore<T>::forward_sequence(const ParamSet<T>& params, const std::vector<Mat<T>>& xs,
                                                 std::span<const std::uint8_t> reset, const Mat<T>& init_memory) {
  const int n = hidden_;
  const int len = static_cast<int>(xs.size());
  batch_ = len ? static_cast<int>(xs[0].cols()) : 0;
  reset_.assign(reset.begin(), reset.end());
  cache_.assign(static_cast<std::size_t>(len), {});
  std::vector<Mat<T>> ys(static_cast<std::size_t>(len));
  Mat<T> h = init_memory;
  for (int t = 0; t < len; ++t) {
    for (int b = 0; b < batch_; ++b)
      if (reset_[static_cast<std::size_t>(t * batch_ + b)]) h.col(b).setZero();
    auto& c = cache_[static_cast<std::size_t>(t)];
    c.x = xs[static_cast<std::size_t>(t)];
    c.h_prev = h;
    Mat<T> gi = params.value(wi_) * c.x;
    gi.colwise() += params.value(bi_).col(0);
    Mat<T> gh = params.value(wh_) * h;
    gh.colwise() += params.value(bh_).col(0);
    c.r = sigmoid_m<T>(gi.topRows(n) + gh.topRows(n));
    c.z = sigmoid_m<T>(gi.middleRows(n, n) + gh.middleRows(n, n));
    c.gh_n = gh.bottomRows(n);
    c.n = (gi.bottomRows(n) + c.r.cwiseProduct(c.gh_n)).array().tanh().matrix();
    h = (Mat<T>::Ones(n, batch_) - c.z).cwiseProduct(c.n) + c.z.cwiseProduct(h);
    ys[static_cast<std::size_t>(t)] = h;
  }
  return ys;
}

template <class T>
std::vector<Mat<T>> GruCore<T>::backward_sequence(ParamSet<T>& params, const std::vector<Mat<T>>& dys) {
  const int n = hidden_;
  const int len = static_cast<int>(cache_.size());
  std::vector<Mat<T>> dxs(static_cast<std::size_t>(len));
  Mat<T> dh_next = Mat<T>::Zero(n, batch_);
  const Mat<T>& wi = params.value(wi_);
  const Mat<T>& wh = params.value(wh_);
  Mat<T> d_wi = Mat<T>::Zero(wi.rows(), wi.cols());
  Mat<T> d_wh = Mat<T>::Zero(wh.rows(), wh.cols());
  Vec<T> d_bi = Vec<T>::Zero(3 * n), d_bh = Vec<T>::Zero(3 * n);
  Mat<T> dgi(3 * n, batch_), dgh(3 * n, batch_);
  for (int t = len - 1; t >= 0; --t) {
    const auto& c = cache_[static_cast<std::size_t>(t)];
    Mat<T> dh = dys[static_cast<std::size_t>(t)] + dh_next;
    Mat<T> dz = dh.cwiseProduct(c.h_prev - c.n);
    Mat<T> dn = dh.cwiseProduct(Mat<T>::Ones(n, batch_) - c.z);
    Mat<T> dhp = dh.cwiseProduct(c.z);
    Mat<T> dn_pre = dn.cwiseProduct((T(1) - c.n.array().square()).matrix());
    Mat<T> dr = dn_pre.cwiseProduct(c.gh_n);
    dgi.topRows(n) = dr.cwiseProduct(c.r.cwiseProduct((T(1) - c.r.array()).matrix()));
    dgi.middleRows(n, n) = dz.cwiseProduct(c.z.cwiseProduct((T(1) - c.z.array()).matrix()));
    dgi.bottomRows(n) = dn_pre;
    dgh.topRows(2 * n) = dgi.topRows(2 * n);
    dgh.bottomRows(n) = dn_pre.cwiseProduct(c.r);
    d_wi.noalias() += dgi * c.x.transpose();
    d_wh.noalias() += dgh * c.h_prev.transpose();
    d_bi += dgi.rowwise().sum();
    d_bh += dgh.rowwise().sum();
    dxs[static_cast<std::size_t>(t)] = wi.transpose() * dgi;
    dhp.noalias() += wh.transpose() * dgh;
    for (int b = 0; b < batch_; ++b)
      if (reset_[static_cast<std::size_t>(t * batch_ + b)]) dhp.col(b).setZero();
    dh_next = std::move(dhp);
  }
  params.grad(wi_) += d_wi;
  params.grad(wh_) += d_wh;
  params.grad(bi_).col(0) += d_bi;
  params.grad(bh_).col(0) += d_bh;
  return dxs;
}

// ---------------------------------------------------------------------------
// Sliding-window attention
// ---------------------------------------------------------------------------

template <class T>
AttentionCore<T>::AttentionCore(ParamSet<T>& params, int hidden, int window, int blocks)
    : hidden_(hidden), window_(window), blocks_(blocks) {
  if (window < 2) throw ConfigError("attention window must be at least 2");
  if (blocks < 1) throw ConfigError("attention needs at least one block");
  for (int l = 0; l < blocks; ++l) {
    const std::string p = "core.attn" + std::to_string(l) + ".";
    BlockParams b{};
    b.wq = params.add(p + "wq", hidden, hidden);
    b.wk = params.add(p + "wk", hidden, hidden);
    b.wv = params.add(p + "wv", hidden, hidden);
    b.wo = params.add(p + "wo", hidden, hidden);
    b.pos = params.add(p + "pos_bias", window, 1);
    b.w1 = params.add(p + "ff.w1", hidden, hidden);
    b.b1 = params.add(p + "ff.b1", hidden, 1);
    b.w2 = params.add(p + "ff.w2", hidden, hidden);
    b.b2 = params.add(p + "ff.b2", hidden, 1);
    bp_.push_back(b);
  }
}

template <class T>
void AttentionCore<T>::init(ParamSet<T>& params, Rng& rng) const {
  for (const auto& b : bp_) {
    for (int w : {b.wq, b.wk, b.wv}) nn::orthogonal_init(params.value(w), 1.0, rng);
    nn::orthogonal_init(params.value(b.wo), 0.5, rng);
    nn::orthogonal_init(params.value(b.w1), std::sqrt(2.0), rng);
    nn::orthogonal_init(params.value(b.w2), 0.5, rng);
    for (int z : {b.pos, b.b1, b.b2}) params.value(z).setZero();
  }
}

template <class T>
Mat<T> AttentionCore<T>::step(const ParamSet<T>& params, const Mat<T>& x, Mat<T>& memory) const {
  const int h = hidden_, s_n = slots(), batch = static_cast<int>(x.cols());
  const T scale = T(1) / std::sqrt(static_cast<T>(h));
  Mat<T> u = x;
  std::vector<Mat<T>> new_k(static_cast<std::size_t>(blocks_)), new_v(static_cast<std::size_t>(blocks_));
  std::vector<T> scores(static_cast<std::size_t>(window_));
  for (int l = 0; l < blocks_; ++l) {
    const auto& b = bp_[static_cast<std::size_t>(l)];
    Mat<T> q = params.value(b.wq) * u;
    Mat<T> k = params.value(b.wk) * u;
    Mat<T> v = params.value(b.wv) * u;
    Mat<T> z(h, batch);
    const auto& pos = params.value(b.pos);
    for (int j = 0; j < batch; ++j) {
      const int count = static_cast<int>(memory(0, j));
      const int first = s_n - count;
      Eigen::Map<const Mat<T>> mk(memory.col(j).data() + k_offset(l), h, s_n);
      Eigen::Map<const Mat<T>> mv(memory.col(j).data() + v_offset(l), h, s_n);
      T mx = -std::numeric_limits<T>::infinity();
      int ctx = 0;
      for (int s = first; s < s_n; ++s, ++ctx) {
        scores[static_cast<std::size_t>(ctx)] = mk.col(s).dot(q.col(j)) * scale + pos(s_n - s, 0);
        mx = std::max(mx, scores[static_cast<std::size_t>(ctx)]);
      }
      scores[static_cast<std::size_t>(ctx)] = k.col(j).dot(q.col(j)) * scale + pos(0, 0);
      mx = std::max(mx, scores[static_cast<std::size_t>(ctx)]);
      ++ctx;
      T sum = 0;
      for (int i = 0; i < ctx; ++i) {
        scores[static_cast<std::size_t>(i)] = std::exp(scores[static_cast<std::size_t>(i)] - mx);
        sum += scores[static_cast<std::size_t>(i)];
      }
      Vec<T> acc = (scores[static_cast<std::size_t>(ctx - 1)] / sum) * v.col(j);
      for (int s = first, i = 0; s < s_n; ++s, ++i) acc += (scores[static_cast<std::size_t>(i)] / sum) * mv.col(s);
      z.col(j) = acc;
    }
    Mat<T> y = u + params.value(b.wo) * z;
    Mat<T> h1 = params.value(b.w1) * y;
    h1.colwise() += params.value(b.b1).col(0);
    h1 = h1.cwiseMax(T(0));
    Mat<T> out = y + params.value(b.w2) * h1;
    out.colwise() += params.value(b.b2).col(0);
    new_k[static_cast<std::size_t>(l)] = std::move(k);
    new_v[static_cast<std::size_t>(l)] = std::move(v);
    u = std::move(out);
  }
  // Shift the caches and append this step.
  for (int j = 0; j < batch; ++j) {
    for (int l = 0; l < blocks_; ++l) {
      for (int off : {k_offset(l), v_offset(l)}) {
        T* base = memory.col(j).data() + off;
        if (s_n > 1) std::copy(base + h, base + s_n * h, base);
        const Mat<T>& src = off == k_offset(l) ? new_k[static_cast<std::size_t>(l)] : new_v[static_cast<std::size_t>(l)];
        Eigen::Map<Vec<T>>(base + (s_n - 1) * h, h) = src.col(j);
      }
    }
    memory(0, j) = std::min<T>(memory(0, j) + T(1), static_cast<T>(s_n));
  }
  return u;
}

template <class T>
std::vector<Mat<T>> AttentionCore<T>::forward_sequence(const ParamSet<T>& params, const std::vector<Mat<T>>& xs,
                                                       std::span<const std::uint8_t> reset,
                                                       const Mat<T>& init_memory) {
  const int h = hidden_, s_n = slots();
  length_ = static_cast<int>(xs.size());
  batch_ = length_ ? static_cast<int>(xs[0].cols()) : 0;
  const int n = length_ * batch_;
  const T scale = T(1) / std::sqrt(static_cast<T>(h));
  init_memory_ = init_memory;

  // Visibility: in-sequence steps from seq_start_, memory slots from mem_count_.
  seq_start_.assign(static_cast<std::size_t>(n), 0);
  mem_count_.assign(static_cast<std::size_t>(n), 0);
  for (int b = 0; b < batch_; ++b) {
    int start = 0;
    bool mem_valid = true;
    const int count = static_cast<int>(init_memory(0, b));
    for (int t = 0; t < length_; ++t) {
      const auto idx = static_cast<std::size_t>(t * batch_ + b);
      if (reset[idx]) {
        start = t;
        mem_valid = false;
      }
      seq_start_[idx] = std::max(start, t - s_n);
      // memory slot s is visible at step t iff s >= max(s_n - count, t)
      mem_count_[idx] = mem_valid ? std::max(0, s_n - std::max(s_n - count, t)) : 0;
    }
  }

  Mat<T> u(h, n);
  for (int t = 0; t < length_; ++t) u.middleCols(t * batch_, batch_) = xs[static_cast<std::size_t>(t)];

  cache_.assign(static_cast<std::size_t>(blocks_), {});
  std::vector<T> scores(static_cast<std::size_t>(2 * window_));
  for (int l = 0; l < blocks_; ++l) {
    const auto& bp = bp_[static_cast<std::size_t>(l)];
    auto& c = cache_[static_cast<std::size_t>(l)];
    c.u = u;
    c.q = params.value(bp.wq) * u;
    c.k = params.value(bp.wk) * u;
    c.v = params.value(bp.wv) * u;
    c.z.resize(h, n);
    c.attn.assign(static_cast<std::size_t>(n), {});
    const auto& pos = params.value(bp.pos);
    for (int t = 0; t < length_; ++t)
      for (int b = 0; b < batch_; ++b) {
        const int idx = t * batch_ + b;
        const int mcount = mem_count_[static_cast<std::size_t>(idx)];
        const int start = seq_start_[static_cast<std::size_t>(idx)];
        Eigen::Map<const Mat<T>> mk(init_memory_.col(b).data() + k_offset(l), h, s_n);
        Eigen::Map<const Mat<T>> mv(init_memory_.col(b).data() + v_offset(l), h, s_n);
        auto qv = c.q.col(idx);
        T mx = -std::numeric_limits<T>::infinity();
        int ctx = 0;
        for (int s = s_n - mcount; s < s_n; ++s, ++ctx) {
          scores[static_cast<std::size_t>(ctx)] = mk.col(s).dot(qv) * scale + pos(s_n - s + t, 0);
          mx = std::max(mx, scores[static_cast<std::size_t>(ctx)]);
        }
        for (int tp = start; tp <= t; ++tp, ++ctx) {
          scores[static_cast<std::size_t>(ctx)] = c.k.col(tp * batch_ + b).dot(qv) * scale + pos(t - tp, 0);
          mx = std::max(mx, scores[static_cast<std::size_t>(ctx)]);
        }
        T sum = 0;
        for (int i = 0; i < ctx; ++i) {
          scores[static_cast<std::size_t>(i)] = std::exp(scores[static_cast<std::size_t>(i)] - mx);
          sum += scores[static_cast<std::size_t>(i)];
        }
        auto& a = c.attn[static_cast<std::size_t>(idx)];
        a.resize(static_cast<std::size_t>(ctx));
        Vec<T> acc = Vec<T>::Zero(h);
        int i = 0;
        for (int s = s_n - mcount; s < s_n; ++s, ++i) {
          a[static_cast<std::size_t>(i)] = scores[static_cast<std::size_t>(i)] / sum;
          acc += a[static_cast<std::size_t>(i)] * mv.col(s);
        }
        for (int tp = start; tp <= t; ++tp, ++i) {
          a[static_cast<std::size_t>(i)] = scores[static_cast<std::size_t>(i)] / sum;
          acc += a[static_cast<std::size_t>(i)] * c.v.col(tp * batch_ + b);
        }
        c.z.col(idx) = acc;
      }
    c.y = u + params.value(bp.wo) * c.z;
    c.h1 = params.value(bp.w1) * c.y;
    c.h1.colwise() += params.value(bp.b1).col(0);
    c.h1 = c.h1.cwiseMax(T(0));
    Mat<T> out = c.y + params.value(bp.w2) * c.h1;
    out.colwise() += params.value(bp.b2).col(0);
    u = std::move(out);
  }
  std::vector<Mat<T>> ys(static_cast<std::size_t>(length_));
  for (int t = 0; t < length_; ++t) ys[static_cast<std::size_t>(t)] = u.middleCols(t * batch_, batch_);
  return ys;
}

template <class T>
std::vector<Mat<T>> AttentionCore<T>::backward_sequence(ParamSet<T>& params, const std::vector<Mat<T>>& dys) {
  const int h = hidden_, s_n = slots();
  const int n = length_ * batch_;
  const T scale = T(1) / std::sqrt(static_cast<T>(h));
  Mat<T> d_out(h, n);
  for (int t = 0; t < length_; ++t) d_out.middleCols(t * batch_, batch_) = dys[static_cast<std::size_t>(t)];

  for (int l = blocks_ - 1; l >= 0; --l) {
    const auto& bp = bp_[static_cast<std::size_t>(l)];
    const auto& c = cache_[static_cast<std::size_t>(l)];
    params.grad(bp.w2).noalias() += d_out * c.h1.transpose();
    params.grad(bp.b2).col(0) += d_out.rowwise().sum();
    Mat<T> d_h1 = (params.value(bp.w2).transpose() * d_out).cwiseProduct((c.h1.array() > T(0)).matrix().template cast<T>());
    params.grad(bp.w1).noalias() += d_h1 * c.y.transpose();
    params.grad(bp.b1).col(0) += d_h1.rowwise().sum();
    Mat<T> d_y = d_out + params.value(bp.w1).transpose() * d_h1;
    params.grad(bp.wo).noalias() += d_y * c.z.transpose();
    Mat<T> d_z = params.value(bp.wo).transpose() * d_y;

    Mat<T> d_q = Mat<T>::Zero(h, n), d_k = Mat<T>::Zero(h, n), d_v = Mat<T>::Zero(h, n);
    auto& d_pos = params.grad(bp.pos);
    std::vector<T> da(static_cast<std::size_t>(2 * window_));
    for (int t = 0; t < length_; ++t)
      for (int b = 0; b < batch_; ++b) {
        const int idx = t * batch_ + b;
        const int mcount = mem_count_[static_cast<std::size_t>(idx)];
        const int start = seq_start_[static_cast<std::size_t>(idx)];
        Eigen::Map<const Mat<T>> mk(init_memory_.col(b).data() + k_offset(l), h, s_n);
        Eigen::Map<const Mat<T>> mv(init_memory_.col(b).data() + v_offset(l), h, s_n);
        const auto& a = c.attn[static_cast<std::size_t>(idx)];
        auto dz = d_z.col(idx);
        T dot_sum = 0;
        int i = 0;
        for (int s = s_n - mcount; s < s_n; ++s, ++i) {
          da[static_cast<std::size_t>(i)] = dz.dot(mv.col(s));
          dot_sum += a[static_cast<std::size_t>(i)] * da[static_cast<std::size_t>(i)];
        }
        for (int tp = start; tp <= t; ++tp, ++i) {
          da[static_cast<std::size_t>(i)] = dz.dot(c.v.col(tp * batch_ + b));
          dot_sum += a[static_cast<std::size_t>(i)] * da[static_cast<std::size_t>(i)];
        }
        auto qv = c.q.col(idx);
        i = 0;
        for (int s = s_n - mcount; s < s_n; ++s, ++i) {
          const T ds = a[static_cast<std::size_t>(i)] * (da[static_cast<std::size_t>(i)] - dot_sum);
          d_q.col(idx) += (ds * scale) * mk.col(s);
          d_pos(s_n - s + t, 0) += ds;
        }
        for (int tp = start; tp <= t; ++tp, ++i) {
          const T ai = a[static_cast<std::size_t>(i)];
          const T ds = ai * (da[static_cast<std::size_t>(i)] - dot_sum);
          const int j = tp * batch_ + b;
          d_q.col(idx) += (ds * scale) * c.k.col(j);
          d_k.col(j) += (ds * scale) * qv;
          d_v.col(j) += ai * dz;
          d_pos(t - tp, 0) += ds;
        }
      }
    params.grad(bp.wq).noalias() += d_q * c.u.transpose();
    params.grad(bp.wk).noalias() += d_k * c.u.transpose();
    params.grad(bp.wv).noalias() += d_v * c.u.transpose();
    Mat<T> d_u = d_y;
    d_u.noalias() += params.value(bp.wq).transpose() * d_q;
    d_u.noalias() += params.value(bp.wk).transpose() * d_k;
    d_u.noalias() += params.value(bp.wv).transpose() * d_v;
    d_out = std::move(d_u);
  }
  std::vector<Mat<T>> dxs(static_cast<std::size_t>(length_));
  for (int t = 0; t < length_; ++t) dxs[static_cast<std::size_t>(t)] = d_out.middleCols(t * batch_, batch_);
  return dxs;
}

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

template <class T>
PolicyNet<T>::PolicyNet(const PolicyConfig& cfg) : cfg_(cfg) {
  nn::GridEncoderConfig ec;
  ec.height = env::kViewSize;
  ec.width = env::kViewSize;
  ec.n_grids = 1;
  ec.agent_channel = false;
  ec.embed_dim = cfg.embed_dim;
  ec.channels = cfg.conv_channels;
  ec.n_shapes = cfg.n_shapes;
  encoder_ = nn::GridEncoder<T>(params_, "enc", ec);
  action_emb_ = params_.add("action_emb", cfg.embed_dim, env::kNumActions + 1);
  done_emb_ = params_.add("done_emb", cfg.embed_dim, 2);
  const int in_dim = encoder_.output_dim() + 2 * cfg.embed_dim + 1;
  proj_w_ = params_.add("proj.w", cfg.hidden, in_dim);
  proj_b_ = params_.add("proj.b", cfg.hidden, 1);
  if (cfg.core == CoreKind::Gru)
    core_ = GruCore<T>(params_, cfg.hidden);
  else
    core_ = AttentionCore<T>(params_, cfg.hidden, cfg.attention_window, cfg.attention_blocks);
  actor_ = nn::Mlp<T>(params_, "actor", cfg.hidden, cfg.head_hidden, env::kNumActions);
  critic_ = nn::Mlp<T>(params_, "critic", cfg.hidden, cfg.head_hidden, 1);
}

template <class T>
void PolicyNet<T>::init(Rng& rng) {
  encoder_.init(params_, rng);
  nn::normal_init(params_.value(action_emb_), 1.0, rng);
  nn::normal_init(params_.value(done_emb_), 1.0, rng);
  nn::orthogonal_init(params_.value(proj_w_), std::sqrt(2.0), rng);
  params_.value(proj_b_).setZero();
  std::visit([&](auto& core) { core.init(params_, rng); }, core_);
  actor_.init(params_, std::sqrt(2.0), 0.01, rng);
  critic_.init(params_, std::sqrt(2.0), 1.0, rng);
}

template <class T>
int PolicyNet<T>::memory_dim() const {
  return std::visit([](const auto& core) { return core.memory_dim(); }, core_);
}

template <class T>
Mat<T> PolicyNet<T>::assemble(const StepInputs& in, const Mat<T>& enc) const {
  const int e = cfg_.embed_dim;
  const int enc_dim = encoder_.output_dim();
  const int n = in.size();
  Mat<T> feat(enc_dim + 2 * e + 1, n);
  feat.topRows(enc_dim) = enc;
  const auto& aemb = params_.value(action_emb_);
  const auto& demb = params_.value(done_emb_);
  for (int i = 0; i < n; ++i) {
    const int a = in.prev_action[static_cast<std::size_t>(i)];
    feat.col(i).segment(enc_dim, e) = aemb.col(a < 0 ? kDummyAction : a);
    feat.col(i).segment(enc_dim + e, e) = demb.col(in.episode_start[static_cast<std::size_t>(i)] ? 1 : 0);
    feat(enc_dim + 2 * e, i) = static_cast<T>(in.prev_reward[static_cast<std::size_t>(i)]);
  }
  return feat;
}

template <class T>
Mat<T> PolicyNet<T>::encode(const StepInputs& in) const {
  Mat<T> enc = encoder_.forward_cached(params_, flat_kinds<T>(in), {});
  Mat<T> x = params_.value(proj_w_) * assemble(in, enc);
  x.colwise() += params_.value(proj_b_).col(0);
  return x.cwiseMax(T(0));
}

template <class T>
Mat<T> PolicyNet<T>::core_step(const Mat<T>& x, Mat<T>& memory) const {
  return std::visit([&](const auto& core) { return core.step(params_, x, memory); }, core_);
}

template <class T>
typename PolicyNet<T>::Output PolicyNet<T>::step(const StepInputs& in, Mat<T>& memory) const {
  if (memory.rows() != memory_dim() || memory.cols() != in.size())
    throw ContractViolation("memory shape does not match the input batch");
  Mat<T> y = core_step(encode(in), memory);
  Output out;
  out.logits = actor_.forward(params_, y, nullptr);
  out.values = critic_.forward(params_, y, nullptr);
  if (!out.logits.allFinite() || !out.values.allFinite())
    throw NumericalFault("policy_step produced non-finite output (params finite: " +
                         std::string(params_.all_finite() ? "yes" : "no") + ")");
  return out;
}

template <class T>
typename PolicyNet<T>::Output PolicyNet<T>::forward_sequence(const SeqBatch<T>& batch) {
  const int bsz = batch.batch, len = batch.length;
  if (batch.inputs.size() != bsz * len || static_cast<int>(batch.reset.size()) != bsz * len)
    throw ContractViolation("sequence batch size mismatch");
  if (batch.init_memory.rows() != memory_dim() || batch.init_memory.cols() != bsz)
    throw ContractViolation("initial memory shape does not match the sequence batch");
  cache_.batch = bsz;
  cache_.length = len;
  cache_.inputs = batch.inputs;
  Mat<T> enc = encoder_.forward(params_, flat_kinds<T>(batch.inputs), {}, &cache_.enc);
  cache_.feat_in = assemble(batch.inputs, enc);
  Mat<T> x = params_.value(proj_w_) * cache_.feat_in;
  x.colwise() += params_.value(proj_b_).col(0);
  cache_.x = x.cwiseMax(T(0));

  std::vector<Mat<T>> xs(static_cast<std::size_t>(len));
  for (int t = 0; t < len; ++t) xs[static_cast<std::size_t>(t)] = cache_.x.middleCols(t * bsz, bsz);
  auto ys = std::visit(
      [&](auto& core) { return core.forward_sequence(params_, xs, batch.reset, batch.init_memory); }, core_);
  Mat<T> y(cfg_.hidden, bsz * len);
  for (int t = 0; t < len; ++t) y.middleCols(t * bsz, bsz) = ys[static_cast<std::size_t>(t)];

  Output out;
  out.logits = actor_.forward(params_, y, &cache_.actor_acts);
  out.values = critic_.forward(params_, y, &cache_.critic_acts);
  return out;
}

template <class T>
void PolicyNet<T>::backward_sequence(const Mat<T>& d_logits, const RowVec<T>& d_values) {
  const int bsz = cache_.batch, len = cache_.length;
  Mat<T> dy = actor_.backward(params_, cache_.actor_acts, d_logits);
  dy += critic_.backward(params_, cache_.critic_acts, Mat<T>(d_values));

  std::vector<Mat<T>> dys(static_cast<std::size_t>(len));
  for (int t = 0; t < len; ++t) dys[static_cast<std::size_t>(t)] = dy.middleCols(t * bsz, bsz);
  auto dxs = std::visit([&](auto& core) { return core.backward_sequence(params_, dys); }, core_);
  Mat<T> dx(cfg_.hidden, bsz * len);
  for (int t = 0; t < len; ++t) dx.middleCols(t * bsz, bsz) = dxs[static_cast<std::size_t>(t)];

  Mat<T> d_pre = dx.cwiseProduct((cache_.x.array() > T(0)).matrix().template cast<T>());
  params_.grad(proj_w_).noalias() += d_pre * cache_.feat_in.transpose();
  params_.grad(proj_b_).col(0) += d_pre.rowwise().sum();
  Mat<T> d_feat = params_.value(proj_w_).transpose() * d_pre;

  const int e = cfg_.embed_dim;
  const int enc_dim = encoder_.output_dim();
  encoder_.backward(params_, cache_.enc, d_feat.topRows(enc_dim));
  auto& g_a = params_.grad(action_emb_);
  auto& g_d = params_.grad(done_emb_);
  for (int i = 0; i < bsz * len; ++i) {
    const int a = cache_.inputs.prev_action[static_cast<std::size_t>(i)];
    g_a.col(a < 0 ? kDummyAction : a) += d_feat.col(i).segment(enc_dim, e);
    g_d.col(cache_.inputs.episode_start[static_cast<std::size_t>(i)] ? 1 : 0) += d_feat.col(i).segment(enc_dim + e, e);
  }
  if (auto bad = params_.nonfinite_grad_blocks(); !bad.empty())
    throw NumericalFault("non-finite gradient in block " + bad.front());
}

template class GruCore<float>;
template class GruCore<double>;
template class AttentionCore<float>;
template class AttentionCore<double>;
template class PolicyNet<float>;
template class PolicyNet<double>;

}  // namespace ulee::policy
