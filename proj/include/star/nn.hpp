#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "star/errors.hpp"

namespace star::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

struct TensorSpec {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
  std::size_t offset;
};

class ParameterLayout {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    tensors_.push_back({std::move(name), rows, cols, size_});
    size_ += static_cast<std::size_t>(rows * cols);
    return tensors_.size() - 1;
  }
  std::size_t size() const { return size_; }
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  const TensorSpec& operator[](std::size_t i) const { return tensors_[i]; }

 private:
  std::vector<TensorSpec> tensors_;
  std::size_t size_ = 0;
};

// All tensors of a model in one contiguous buffer. Gradients use the same type.
class Parameters {
 public:
  Parameters() = default;
  explicit Parameters(std::shared_ptr<const ParameterLayout> layout)
      : layout_(std::move(layout)), data_(layout_->size(), 0.0) {}

  MatrixMap operator[](std::size_t i) {
    const auto& t = (*layout_)[i];
    return MatrixMap(data_.data() + t.offset, t.rows, t.cols);
  }
  ConstMatrixMap operator[](std::size_t i) const {
    const auto& t = (*layout_)[i];
    return ConstMatrixMap(data_.data() + t.offset, t.rows, t.cols);
  }

  const ParameterLayout& layout() const { return *layout_; }
  std::shared_ptr<const ParameterLayout> layout_ptr() const { return layout_; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  std::size_t size() const { return data_.size(); }

  void zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  Parameters zeros_like() const { return Parameters(layout_); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::shared_ptr<const ParameterLayout> layout_;
  std::vector<double> data_;
};

inline void fill_normal(MatrixMap m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

// tanh approximation of GELU and its derivative
inline double gelu(double u) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * u * (1.0 + std::tanh(c * (u + 0.044715 * u * u * u)));
}

inline double gelu_grad(double u) {
  constexpr double c = 0.7978845608028654;
  const double t = std::tanh(c * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * u * u);
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Numerically stable softmax over a vector.
inline Vector softmax(const Vector& z) {
  Vector e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

inline void softmax_rows(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    row = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
}

struct LayerNormCache {
  Matrix xhat;
  Vector rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

inline Matrix layer_norm(const Matrix& x, const ConstMatrixMap& gamma, const ConstMatrixMap& beta,
                         LayerNormCache* cache) {
  const auto n = static_cast<double>(x.cols());
  Matrix xhat(x.rows(), x.cols());
  Vector rstd(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).sum() / n;
    auto centered = x.row(i).array() - mean;
    const double var = centered.square().sum() / n;
    rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = centered * rstd(i);
  }
  Matrix y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

// Returns dx; accumulates into dgamma/dbeta.
inline Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& c, const ConstMatrixMap& gamma,
                                  MatrixMap dgamma, MatrixMap dbeta) {
  dgamma.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbeta.row(0) += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
  const auto n = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_d = dxhat.row(i).sum() / n;
    const double mean_dx = dxhat.row(i).dot(c.xhat.row(i)) / n;
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - mean_d - c.xhat.row(i).array() * mean_dx);
  }
  return dx;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(Parameters& params, const Parameters& grad) {
    auto& p = params.data();
    const auto& g = grad.data();
    if (p.size() != m_.size() || g.size() != m_.size()) throw ValidationError("optimizer size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      p[i] -= cfg_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace star::nn
