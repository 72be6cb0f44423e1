#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedseries {

/// Row-major dense matrix; vectors and scalars are stored as 1×n and 1×1.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixXr = Matrix<double>;
using VectorXr = Vector<double>;
using Index = Eigen::Index;

/// Logical tensor shape. Parameters are rank 1 or 2; rank-1 tensors live in a 1×n matrix.
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename A, typename B>
Matrix<typename A::Scalar> matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
  Matrix<typename A::Scalar> out(a.rows(), b.cols());
  out.noalias() = a * b;
  return out;
}

/// Softmax along each row, stabilised by subtracting the row maximum.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar peak = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - peak).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

/// Given y = softmax_rows(x) and dL/dy, returns dL/dx.
template <typename Scalar>
Matrix<Scalar> softmax_rows_backward(const Matrix<Scalar>& y, const Matrix<Scalar>& dy) {
  Matrix<Scalar> dx(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    const Scalar dot = y.row(r).dot(dy.row(r));
    dx.row(r) = (y.row(r).array() * (dy.row(r).array() - dot)).matrix();
  }
  return dx;
}

template <typename Derived>
Matrix<typename Derived::Scalar> relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(typename Derived::Scalar(0));
}

/// Intermediate results of a layer normalisation kept for the backward pass.
template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> normalized;  // (x - mean) * inv_std, before gain/bias
  Vector<Scalar> inv_std;
};

/// Normalises each row to zero mean and unit (biased) variance, then applies gain and bias.
template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& x, const RowVector<Scalar>& gain,
                          const RowVector<Scalar>& bias, Scalar eps = Scalar(1e-5),
                          LayerNormCache<Scalar>* cache = nullptr) {
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw ShapeError("layer_norm: gain/bias width does not match input");
  }
  const Index d = x.cols();
  Matrix<Scalar> normalized(x.rows(), d);
  Vector<Scalar> inv_std(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).sum() / Scalar(d);
    const auto centered = (x.row(r).array() - mean).eval();
    const Scalar var = centered.square().sum() / Scalar(d);
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    normalized.row(r) = (centered * inv_std(r)).matrix();
  }
  Matrix<Scalar> out = (normalized.array().rowwise() * gain.array()).rowwise() + bias.array();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

/// Scaled dot-product attention for one sequence: softmax(q kᵀ / sqrt(d)) v.
/// When `weights` is non-null it receives the L×L attention matrix.
template <typename Scalar>
Matrix<Scalar> scaled_dot_product_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                                            const Matrix<Scalar>& v,
                                            Matrix<Scalar>* weights = nullptr) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || q.rows() != k.rows()) {
    throw ShapeError("attention: q/k/v shapes disagree");
  }
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(q.cols()));
  Matrix<Scalar> scores(q.rows(), k.rows());
  scores.noalias() = (q * k.transpose()) * scale;
  Matrix<Scalar> w = softmax_rows(scores);
  Matrix<Scalar> out(q.rows(), v.cols());
  out.noalias() = w * v;
  if (weights) *weights = std::move(w);
  return out;
}

inline bool all_finite(const MatrixXr& m) { return m.allFinite(); }

}  // namespace fedseries
