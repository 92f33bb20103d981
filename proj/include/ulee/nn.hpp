#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ulee/common.hpp"

namespace ulee::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Ordered named parameter blocks with congruent gradient storage.
///
/// Mutable access through value() bumps version(), so derived caches (encoder
/// lookup tables) can tell when to rebuild.
template <class T>
class ParamSet {
 public:
  struct Block {
    std::string name;
    Mat<T> value;
    Mat<T> grad;
  };

  int add(std::string name, int rows, int cols) {
    blocks_.push_back({std::move(name), Mat<T>::Zero(rows, cols), Mat<T>::Zero(rows, cols)});
    ++version_;
    return static_cast<int>(blocks_.size()) - 1;
  }

  const Mat<T>& value(int i) const { return blocks_[static_cast<std::size_t>(i)].value; }
  Mat<T>& value(int i) {
    ++version_;
    return blocks_[static_cast<std::size_t>(i)].value;
  }
  const Mat<T>& grad(int i) const { return blocks_[static_cast<std::size_t>(i)].grad; }
  Mat<T>& grad(int i) { return blocks_[static_cast<std::size_t>(i)].grad; }
  const std::string& name(int i) const { return blocks_[static_cast<std::size_t>(i)].name; }

  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += static_cast<std::size_t>(b.value.size());
    return n;
  }
  std::uint64_t version() const { return version_; }
  void touch() { ++version_; }

  void zero_grad() {
    for (auto& b : blocks_) b.grad.setZero();
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& b : blocks_) s += static_cast<double>(b.grad.squaredNorm());
    return std::sqrt(s);
  }

  void scale_grad(T factor) {
    for (auto& b : blocks_) b.grad *= factor;
  }

  bool all_finite() const {
    for (const auto& b : blocks_)
      if (!b.value.allFinite()) return false;
    return true;
  }

  /// Names of blocks holding a non-finite gradient.
  std::vector<std::string> nonfinite_grad_blocks() const {
    std::vector<std::string> out;
    for (const auto& b : blocks_)
      if (!b.grad.allFinite()) out.push_back(b.name);
    return out;
  }

  /// Names and shapes in declaration order.
  std::uint64_t architecture_hash() const {
    std::uint64_t h = fnv1a("ulee-params");
    for (const auto& b : blocks_) {
      h = fnv1a(b.name, h);
      h = fnv1a(std::to_string(b.value.rows()) + "x" + std::to_string(b.value.cols()), h);
    }
    return h;
  }

  template <class U>
  void copy_values_from(const ParamSet<U>& other) {
    if (other.num_blocks() != num_blocks()) throw ContractViolation("parameter layouts differ");
    for (int i = 0; i < num_blocks(); ++i) {
      if (other.value(i).rows() != value(i).rows() || other.value(i).cols() != value(i).cols())
        throw ContractViolation("parameter block shapes differ: " + name(i));
      value(i) = other.value(i).template cast<T>();
    }
  }

  void set_zero() {
    for (auto& b : blocks_) b.value.setZero();
    ++version_;
  }

 private:
  std::vector<Block> blocks_;
  std::uint64_t version_ = 0;
};

/// Orthogonal init scaled by gain (rows x cols, semi-orthogonal when not square).
template <class T>
void orthogonal_init(Mat<T>& m, double gain, Rng& rng) {
  const auto rows = m.rows(), cols = m.cols();
  const bool tall = rows >= cols;
  const auto big = tall ? rows : cols, small = tall ? cols : rows;
  Mat<double> a(big, small);
  for (Eigen::Index j = 0; j < small; ++j)
    for (Eigen::Index i = 0; i < big; ++i) a(i, j) = standard_normal(rng);
  Eigen::HouseholderQR<Mat<double>> qr(a);
  Mat<double> q = qr.householderQ() * Mat<double>::Identity(big, small);
  Mat<double> r = qr.matrixQR().topLeftCorner(small, small);
  for (Eigen::Index j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  Mat<double> out = tall ? q : Mat<double>(q.transpose());
  m = (gain * out).template cast<T>();
}

template <class T>
void normal_init(Mat<T>& m, double stddev, Rng& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>(stddev * standard_normal(rng));
}

template <class T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

/// Fully connected stack with ReLU between layers; the last layer is linear.
template <class T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamSet<T>& params, const std::string& prefix, int in, const std::vector<int>& hidden, int out) {
    int prev = in;
    std::vector<int> sizes = hidden;
    sizes.push_back(out);
    for (std::size_t l = 0; l < sizes.size(); ++l) {
      weights_.push_back(params.add(prefix + ".w" + std::to_string(l), sizes[l], prev));
      biases_.push_back(params.add(prefix + ".b" + std::to_string(l), sizes[l], 1));
      prev = sizes[l];
    }
  }

  void init(ParamSet<T>& params, double hidden_gain, double out_gain, Rng& rng) const {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      const bool last = l + 1 == weights_.size();
      orthogonal_init(params.value(weights_[l]), last ? out_gain : hidden_gain, rng);
      params.value(biases_[l]).setZero();
    }
  }

  int num_layers() const { return static_cast<int>(weights_.size()); }
  int weight(int l) const { return weights_[static_cast<std::size_t>(l)]; }
  int bias(int l) const { return biases_[static_cast<std::size_t>(l)]; }

  /// activations[0] = x, activations[l+1] = layer l output (post-ReLU for hidden).
  /// With column_invariant, every output column is computed by the same
  /// fixed-order dot products regardless of batch size or position.
  Mat<T> forward(const ParamSet<T>& params, const Mat<T>& x, std::vector<Mat<T>>* activations,
                 bool column_invariant = false) const {
    Mat<T> h = x;
    if (activations) {
      activations->clear();
      activations->push_back(x);
    }
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Mat<T> z = column_invariant ? Mat<T>(params.value(weights_[l]).lazyProduct(h)) : Mat<T>(params.value(weights_[l]) * h);
      z.colwise() += params.value(biases_[l]).col(0);
      if (l + 1 < weights_.size()) z = z.cwiseMax(T(0));
      h = std::move(z);
      if (activations) activations->push_back(h);
    }
    return h;
  }

  /// Accumulates parameter gradients; returns dL/dx.
  Mat<T> backward(ParamSet<T>& params, const std::vector<Mat<T>>& activations, Mat<T> dy) const {
    for (std::size_t l = weights_.size(); l-- > 0;) {
      if (l + 1 < weights_.size()) dy = dy.cwiseProduct((activations[l + 1].array() > T(0)).matrix().template cast<T>());
      params.grad(weights_[l]).noalias() += dy * activations[l].transpose();
      params.grad(biases_[l]).col(0) += dy.rowwise().sum();
      dy = params.value(weights_[l]).transpose() * dy;
    }
    return dy;
  }

 private:
  std::vector<int> weights_;
  std::vector<int> biases_;
};

}  // namespace ulee::nn
