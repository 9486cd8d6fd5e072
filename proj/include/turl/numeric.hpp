#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace turl::numeric {

/// Dense row-major matrix value.
template <typename Real>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Real> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, Real fill = Real(0)) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<Real> values);

  Real& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  Real operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  Real* row(std::size_t i) { return data.data() + i * cols; }
  const Real* row(std::size_t i) const { return data.data() + i * cols; }
  std::size_t size() const { return data.size(); }

  template <typename Other>
  Matrix<Other> cast() const {
    Matrix<Other> out(rows, cols);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
    return out;
  }

  bool operator==(const Matrix&) const = default;
};

/// A learned parameter: named value plus a same-shaped gradient accumulator.
template <typename Real>
struct Tensor {
  std::string name;
  Matrix<Real> value;
  Matrix<Real> grad;

  Tensor() = default;
  Tensor(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols) {}

  std::size_t rows() const { return value.rows; }
  std::size_t cols() const { return value.cols; }
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), Real(0)); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.name = name;
    out.value = value.template cast<Other>();
    out.grad = Matrix<Other>(value.rows, value.cols);
    return out;
  }
};

inline constexpr double kLayerNormEps = 1e-12;
inline constexpr double kLogitClamp = 30.0;

// Forward kernels. All loops run in a fixed order so results are reproducible.
namespace kernels {

/// c (+)= a[n x k] * b[k x m]
template <typename Real>
void matmul(const Real* a, const Real* b, Real* c, std::size_t n, std::size_t k, std::size_t m, bool accumulate);
/// c[k x m] += a[n x k]^T * g[n x m]
template <typename Real>
void matmul_at_b(const Real* a, const Real* g, Real* c, std::size_t n, std::size_t k, std::size_t m);
/// c (+)= a[n x k] * b[m x k]^T
template <typename Real>
void matmul_a_bt(const Real* a, const Real* b, Real* c, std::size_t n, std::size_t k, std::size_t m, bool accumulate);

/// Row-wise softmax. Where mask(i,j)==0 the logit is treated as -inf and the
/// output weight is exactly 0. mask may be null (all visible).
template <typename Real>
void softmax_rows(const Real* in, Real* out, std::size_t rows, std::size_t cols, const std::uint8_t* mask);

template <typename Real>
Matrix<Real> masked_softmax(const Matrix<Real>& logits, std::span<const std::uint8_t> mask);

template <typename Real>
Matrix<Real> affine(const Matrix<Real>& x, const Matrix<Real>& w, const Matrix<Real>& b);

template <typename Real>
Matrix<Real> layer_norm(const Matrix<Real>& x, const Matrix<Real>& gamma, const Matrix<Real>& beta,
                        Real eps = Real(kLayerNormEps));

template <typename Real>
Real gelu(Real x);

template <typename Real>
Real sigmoid(Real x);

/// -log softmax(logits)[gold]
template <typename Real>
Real cross_entropy(std::span<const Real> logits, std::size_t gold);

/// -[y ln p + (1-y) ln(1-p)] for p = sigmoid(clamp(logit, +-30)).
template <typename Real>
Real binary_cross_entropy_logit(Real logit, Real label);

template <typename Real>
Real binary_cross_entropy(Real probability, Real label);

}  // namespace kernels

/// Tape of differentiable operations on 2-D matrices. Parameters are Tensors
/// owned elsewhere; backward() accumulates into their grad buffers.
template <typename Real>
class Graph {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  /// With track_gradients=false nothing is recorded for backward (inference).
  explicit Graph(bool track_gradients = true) : track_(track_gradients) {}

  Var constant(Matrix<Real> value);
  Var parameter(Tensor<Real>& tensor);
  /// Rows of an embedding table; gradient scatters back into the table.
  Var embedding(Tensor<Real>& table, std::vector<int> ids);
  /// Row i is the mean of table rows ids[i] (zero row when ids[i] is empty).
  Var embedding_mean(Tensor<Real>& table, std::vector<std::vector<int>> ids);

  Var matmul(Var a, Var b);
  Var matmul_transposed(Var a, Var b);  // a * b^T
  Var affine(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a 1 x cols row over every row of a
  Var scale(Var a, Real s);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, std::size_t start, std::size_t width);
  Var gather_rows(Var a, std::vector<int> rows);
  Var mean_rows(Var a);
  /// n x cols output where rows of parts[p].first land at parts[p].second.
  Var assemble_rows(std::size_t n, const std::vector<std::pair<Var, std::vector<int>>>& parts);
  Var softmax_rows(Var a, const std::uint8_t* mask);
  Var layer_norm(Var x, Var gamma, Var beta, Real eps = Real(kLayerNormEps));
  Var gelu(Var x);
  /// Sum over rows of -log softmax(row)[gold[row]]; 1 x 1.
  Var cross_entropy(Var logits, std::vector<int> gold);
  /// Sum of clamped-logit binary cross-entropy against targets; 1 x 1.
  Var bce_with_logits(Var logits, Matrix<Real> targets);
  Var sum(Var a);

  const Matrix<Real>& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  Real scalar(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss);

 private:
  struct Node {
    Matrix<Real> value;
    Matrix<Real> grad;
    bool needs_grad = false;
    std::function<void()> backprop;
  };

  Var push(Matrix<Real> value, bool needs_grad, std::function<void()> backprop = {});
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
  bool needs(Var v) const { return node(v).needs_grad; }
  Matrix<Real>& grad(Var v) { return node(v).grad; }

  bool track_ = true;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<Real>*, int> parameter_nodes_;
};

template <typename Real>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Matrix<Real>> first_moment;
  std::vector<Matrix<Real>> second_moment;
};

/// lr0 * max(0, 1 - step / total_steps)
double linear_decay_lr(double lr0, std::int64_t step, std::int64_t total_steps);

/// One bias-corrected Adam update over params using their accumulated grads.
template <typename Real>
void adam_step(std::span<Tensor<Real>* const> params, AdamState<Real>& state, double lr);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of a scalar graph against central
/// differences (f(x+eps) - f(x-eps)) / 2eps. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const std::function<Graph<double>::Var(Graph<double>&)>& loss_fn,
                           std::span<Tensor<double>* const> params, double eps = 1e-6, double floor = 1e-3);

}  // namespace turl::numeric
