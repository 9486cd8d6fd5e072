#include "turl/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "turl/errors.hpp"

namespace turl::numeric {

template <typename Real>
Matrix<Real>::Matrix(std::size_t r, std::size_t c, std::vector<Real> values) : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw ShapeMismatch("matrix data does not match " + std::to_string(r) + "x" + std::to_string(c));
}

namespace kernels {

template <typename Real>
void matmul(const Real* a, const Real* b, Real* c, std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
  if (!accumulate) std::fill(c, c + n * m, Real(0));
  for (std::size_t i = 0; i < n; ++i) {
    Real* ci = c + i * m;
    const Real* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = ai[p];
      const Real* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename Real>
void matmul_at_b(const Real* a, const Real* g, Real* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const Real* ai = a + i * k;
    const Real* gi = g + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = ai[p];
      Real* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * gi[j];
    }
  }
}

template <typename Real>
void matmul_a_bt(const Real* a, const Real* b, Real* c, std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    const Real* ai = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const Real* bj = b + j * k;
      Real s = 0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      if (accumulate)
        c[i * m + j] += s;
      else
        c[i * m + j] = s;
    }
  }
}

template <typename Real>
void softmax_rows(const Real* in, Real* out, std::size_t rows, std::size_t cols, const std::uint8_t* mask) {
  for (std::size_t i = 0; i < rows; ++i) {
    const Real* x = in + i * cols;
    Real* y = out + i * cols;
    const std::uint8_t* mrow = mask ? mask + i * cols : nullptr;
    Real mx = -std::numeric_limits<Real>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j) {
      if (mrow && !mrow[j]) continue;
      any = true;
      mx = std::max(mx, x[j]);
    }
    if (!any) throw AllMaskedRow("row " + std::to_string(i) + " has no visible entries");
    Real total = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (mrow && !mrow[j]) {
        y[j] = Real(0);
        continue;
      }
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[j] /= total;
  }
}

template <typename Real>
Matrix<Real> masked_softmax(const Matrix<Real>& logits, std::span<const std::uint8_t> mask) {
  if (mask.size() != logits.size()) throw ShapeMismatch("mask size differs from logits");
  Matrix<Real> out(logits.rows, logits.cols);
  softmax_rows(logits.data.data(), out.data.data(), logits.rows, logits.cols, mask.data());
  return out;
}

template <typename Real>
Matrix<Real> affine(const Matrix<Real>& x, const Matrix<Real>& w, const Matrix<Real>& b) {
  if (x.cols != w.rows || b.rows != 1 || b.cols != w.cols) throw ShapeMismatch("affine operand shapes");
  Matrix<Real> y(x.rows, w.cols);
  matmul(x.data.data(), w.data.data(), y.data.data(), x.rows, x.cols, w.cols, false);
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = 0; j < y.cols; ++j) y(i, j) += b(0, j);
  return y;
}

template <typename Real>
Matrix<Real> layer_norm(const Matrix<Real>& x, const Matrix<Real>& gamma, const Matrix<Real>& beta, Real eps) {
  if (gamma.size() != x.cols || beta.size() != x.cols) throw ShapeMismatch("layer_norm parameter width");
  Matrix<Real> y(x.rows, x.cols);
  const Real d = static_cast<Real>(x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const Real* xi = x.row(i);
    Real mean = 0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += xi[j];
    mean /= d;
    Real var = 0;
    for (std::size_t j = 0; j < x.cols; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= d;
    const Real inv = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x.cols; ++j) y(i, j) = gamma.data[j] * ((xi[j] - mean) * inv) + beta.data[j];
  }
  return y;
}

template <typename Real>
Real gelu(Real x) {
  return Real(0.5) * x * (Real(1) + std::erf(x / std::sqrt(Real(2))));
}

template <typename Real>
Real sigmoid(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

template <typename Real>
Real cross_entropy(std::span<const Real> logits, std::size_t gold) {
  if (gold >= logits.size()) throw IndexOutOfRange("gold index " + std::to_string(gold));
  const Real mx = *std::max_element(logits.begin(), logits.end());
  Real total = 0;
  for (Real z : logits) total += std::exp(z - mx);
  return std::log(total) + mx - logits[gold];
}

template <typename Real>
Real binary_cross_entropy_logit(Real logit, Real label) {
  const Real z = std::clamp(logit, Real(-kLogitClamp), Real(kLogitClamp));
  // max(z,0) - z*y + log(1 + exp(-|z|))
  return std::max(z, Real(0)) - z * label + std::log1p(std::exp(-std::abs(z)));
}

template <typename Real>
Real binary_cross_entropy(Real p, Real y) {
  const Real lo = sigmoid(Real(-kLogitClamp));
  p = std::clamp(p, lo, Real(1) - lo);
  return -(y * std::log(p) + (Real(1) - y) * std::log(Real(1) - p));
}

}  // namespace kernels

// ---------------------------------------------------------------- Graph

template <typename Real>
typename Graph<Real>::Var Graph<Real>::push(Matrix<Real> value, bool needs_grad, std::function<void()> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad && track_;
  if (n.needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::constant(Matrix<Real> value) {
  return push(std::move(value), false);
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::parameter(Tensor<Real>& tensor) {
  if (auto it = parameter_nodes_.find(&tensor); it != parameter_nodes_.end()) return Var{it->second};
  Tensor<Real>* t = &tensor;
  const int id = static_cast<int>(nodes_.size());
  Var v = push(tensor.value, true, [this, t, id] {
    const auto& g = nodes_[static_cast<std::size_t>(id)].grad;
    for (std::size_t i = 0; i < g.data.size(); ++i) t->grad.data[i] += g.data[i];
  });
  parameter_nodes_.emplace(t, v.id);
  return v;
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::embedding(Tensor<Real>& table, std::vector<int> ids) {
  const std::size_t d = table.cols();
  Matrix<Real> out(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows())
      throw IndexOutOfRange(table.name + " row " + std::to_string(ids[i]));
    std::copy_n(table.value.row(static_cast<std::size_t>(ids[i])), d, out.row(i));
  }
  Tensor<Real>* t = &table;
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), true, [this, t, id, ids = std::move(ids), d] {
    const auto& g = nodes_[static_cast<std::size_t>(id)].grad;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Real* dst = t->grad.row(static_cast<std::size_t>(ids[i]));
      const Real* src = g.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::embedding_mean(Tensor<Real>& table, std::vector<std::vector<int>> ids) {
  const std::size_t d = table.cols();
  Matrix<Real> out(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].empty()) continue;
    Real* dst = out.row(i);
    for (int r : ids[i]) {
      if (r < 0 || static_cast<std::size_t>(r) >= table.rows()) throw IndexOutOfRange(table.name + " row " + std::to_string(r));
      const Real* src = table.value.row(static_cast<std::size_t>(r));
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    const Real inv = Real(1) / static_cast<Real>(ids[i].size());
    for (std::size_t j = 0; j < d; ++j) dst[j] *= inv;
  }
  Tensor<Real>* t = &table;
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), true, [this, t, id, ids = std::move(ids), d] {
    const auto& g = nodes_[static_cast<std::size_t>(id)].grad;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i].empty()) continue;
      const Real inv = Real(1) / static_cast<Real>(ids[i].size());
      const Real* src = g.row(i);
      for (int r : ids[i]) {
        Real* dst = t->grad.row(static_cast<std::size_t>(r));
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j] * inv;
      }
    }
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols != B.rows)
    throw ShapeMismatch("matmul " + std::to_string(A.rows) + "x" + std::to_string(A.cols) + " * " +
                        std::to_string(B.rows) + "x" + std::to_string(B.cols));
  Matrix<Real> out(A.rows, B.cols);
  kernels::matmul(A.data.data(), B.data.data(), out.data.data(), A.rows, A.cols, B.cols, false);
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [this, a, b, id] {
    const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
    const auto& A = value(a);
    const auto& B = value(b);
    if (needs(a)) kernels::matmul_a_bt(G.data.data(), B.data.data(), grad(a).data.data(), A.rows, B.cols, A.cols, true);
    if (needs(b)) kernels::matmul_at_b(A.data.data(), G.data.data(), grad(b).data.data(), A.rows, A.cols, B.cols);
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::matmul_transposed(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols != B.cols) throw ShapeMismatch("matmul_transposed inner dimensions");
  Matrix<Real> out(A.rows, B.rows);
  kernels::matmul_a_bt(A.data.data(), B.data.data(), out.data.data(), A.rows, A.cols, B.rows, false);
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [this, a, b, id] {
    const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
    const auto& A = value(a);
    const auto& B = value(b);
    if (needs(a)) kernels::matmul(G.data.data(), B.data.data(), grad(a).data.data(), A.rows, B.rows, A.cols, true);
    if (needs(b)) kernels::matmul_at_b(G.data.data(), A.data.data(), grad(b).data.data(), A.rows, B.rows, A.cols);
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.rows != B.rows || A.cols != B.cols) throw ShapeMismatch("add operand shapes");
  Matrix<Real> out = A;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [this, a, b, id] {
    const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
    for (Var v : {a, b}) {
      if (!needs(v)) continue;
      auto& dst = grad(v);
      for (std::size_t i = 0; i < G.data.size(); ++i) dst.data[i] += G.data[i];
    }
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::add_row(Var a, Var r) {
  const auto& A = value(a);
  const auto& R = value(r);
  if (R.rows != 1 || R.cols != A.cols) throw ShapeMismatch("add_row expects a 1 x cols row");
  Matrix<Real> out = A;
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += R.data[j];
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a) || needs(r), [this, a, r, id] {
    const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
    if (needs(a)) {
      auto& dst = grad(a);
      for (std::size_t i = 0; i < G.data.size(); ++i) dst.data[i] += G.data[i];
    }
    if (needs(r)) {
      auto& dst = grad(r);
      for (std::size_t i = 0; i < G.rows; ++i)
        for (std::size_t j = 0; j < G.cols; ++j) dst.data[j] += G(i, j);
    }
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::scale(Var a, Real s) {
  Matrix<Real> out = value(a);
  for (auto& x : out.data) x *= s;
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, s, id] {
    const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
    auto& dst = grad(a);
    for (std::size_t i = 0; i < G.data.size(); ++i) dst.data[i] += G.data[i] * s;
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
  const std::size_t rows = value(parts.front()).rows;
  std::size_t cols = 0;
  bool any = false;
  for (Var p : parts) {
    if (value(p).rows != rows) throw ShapeMismatch("concat_cols row counts differ");
    cols += value(p).cols;
    any = any || needs(p);
  }
  Matrix<Real> out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const auto& P = value(p);
    for (std::size_t i = 0; i < rows; ++i) std::copy_n(P.row(i), P.cols, out.row(i) + off);
    off += P.cols;
  }
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), any, [this, parts, id] {
    const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
    std::size_t off = 0;
    for (Var p : parts) {
      const std::size_t w = value(p).cols;
      if (needs(p)) {
        auto& dst = grad(p);
        for (std::size_t i = 0; i < G.rows; ++i)
          for (std::size_t j = 0; j < w; ++j) dst(i, j) += G(i, off + j);
      }
      off += w;
    }
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::slice_cols(Var a, std::size_t start, std::size_t width) {
  const auto& A = value(a);
  if (start + width > A.cols) throw ShapeMismatch("slice_cols out of range");
  Matrix<Real> out(A.rows, width);
  for (std::size_t i = 0; i < A.rows; ++i) std::copy_n(A.row(i) + start, width, out.row(i));
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, start, width, id] {
    const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
    auto& dst = grad(a);
    for (std::size_t i = 0; i < G.rows; ++i)
      for (std::size_t j = 0; j < width; ++j) dst(i, start + j) += G(i, j);
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::gather_rows(Var a, std::vector<int> rows) {
  const auto& A = value(a);
  Matrix<Real> out(rows.size(), A.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= A.rows) throw IndexOutOfRange("gather_rows index");
    std::copy_n(A.row(static_cast<std::size_t>(rows[i])), A.cols, out.row(i));
  }
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, rows = std::move(rows), id] {
    const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
    auto& dst = grad(a);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Real* d = dst.row(static_cast<std::size_t>(rows[i]));
      const Real* s = G.row(i);
      for (std::size_t j = 0; j < G.cols; ++j) d[j] += s[j];
    }
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::mean_rows(Var a) {
  const auto& A = value(a);
  if (A.rows == 0) throw ShapeMismatch("mean_rows of an empty matrix");
  Matrix<Real> out(1, A.cols);
  for (std::size_t i = 0; i < A.rows; ++i)
    for (std::size_t j = 0; j < A.cols; ++j) out.data[j] += A(i, j);
  const Real inv = Real(1) / static_cast<Real>(A.rows);
  for (auto& x : out.data) x *= inv;
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, inv, id] {
    const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
    auto& dst = grad(a);
    for (std::size_t i = 0; i < dst.rows; ++i)
      for (std::size_t j = 0; j < dst.cols; ++j) dst(i, j) += G.data[j] * inv;
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::assemble_rows(std::size_t n,
                                                     const std::vector<std::pair<Var, std::vector<int>>>& parts) {
  std::size_t cols = 0;
  bool any = false;
  for (const auto& [v, pos] : parts) {
    if (value(v).rows != pos.size()) throw ShapeMismatch("assemble_rows position count");
    if (value(v).rows == 0) continue;
    if (cols == 0) cols = value(v).cols;
    if (value(v).cols != cols) throw ShapeMismatch("assemble_rows column widths differ");
    any = any || needs(v);
  }
  Matrix<Real> out(n, cols);
  std::vector<std::uint8_t> filled(n, 0);
  for (const auto& [v, pos] : parts) {
    const auto& P = value(v);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const auto r = static_cast<std::size_t>(pos[i]);
      if (r >= n || filled[r]) throw IndexOutOfRange("assemble_rows position " + std::to_string(pos[i]));
      filled[r] = 1;
      std::copy_n(P.row(i), cols, out.row(r));
    }
  }
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), any, [this, parts, id] {
    const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
    for (const auto& [v, pos] : parts) {
      if (!needs(v)) continue;
      auto& dst = grad(v);
      for (std::size_t i = 0; i < pos.size(); ++i) {
        const Real* s = G.row(static_cast<std::size_t>(pos[i]));
        Real* d = dst.row(i);
        for (std::size_t j = 0; j < G.cols; ++j) d[j] += s[j];
      }
    }
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::softmax_rows(Var a, const std::uint8_t* mask) {
  const auto& A = value(a);
  Matrix<Real> out(A.rows, A.cols);
  kernels::softmax_rows(A.data.data(), out.data.data(), A.rows, A.cols, mask);
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, id] {
    const auto& Y = nodes_[static_cast<std::size_t>(id)].value;
    const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
    auto& dst = grad(a);
    for (std::size_t i = 0; i < Y.rows; ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < Y.cols; ++j) dot += Y(i, j) * G(i, j);
      for (std::size_t j = 0; j < Y.cols; ++j) dst(i, j) += Y(i, j) * (G(i, j) - dot);
    }
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::layer_norm(Var x, Var gamma, Var beta, Real eps) {
  const auto& X = value(x);
  const auto& Gm = value(gamma);
  const auto& Bt = value(beta);
  if (Gm.size() != X.cols || Bt.size() != X.cols) throw ShapeMismatch("layer_norm parameter width");
  const std::size_t n = X.rows;
  const std::size_t d = X.cols;
  Matrix<Real> xhat(n, d);
  std::vector<Real> inv_std(n);
  Matrix<Real> out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* xi = X.row(i);
    Real mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<Real>(d);
    inv_std[i] = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (xi[j] - mean) * inv_std[i];
      out(i, j) = Gm.data[j] * xhat(i, j) + Bt.data[j];
    }
  }
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
              [this, x, gamma, beta, id, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
                const auto& Gm = value(gamma);
                const std::size_t n = G.rows;
                const std::size_t d = G.cols;
                if (needs(gamma) || needs(beta)) {
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) {
                      if (needs(gamma)) grad(gamma).data[j] += G(i, j) * xhat(i, j);
                      if (needs(beta)) grad(beta).data[j] += G(i, j);
                    }
                }
                if (!needs(x)) return;
                auto& dx = grad(x);
                std::vector<Real> dxhat(d);
                for (std::size_t i = 0; i < n; ++i) {
                  Real sum = 0;
                  Real sum_xhat = 0;
                  for (std::size_t j = 0; j < d; ++j) {
                    dxhat[j] = G(i, j) * Gm.data[j];
                    sum += dxhat[j];
                    sum_xhat += dxhat[j] * xhat(i, j);
                  }
                  const Real dd = static_cast<Real>(d);
                  for (std::size_t j = 0; j < d; ++j)
                    dx(i, j) += inv_std[i] / dd * (dd * dxhat[j] - sum - xhat(i, j) * sum_xhat);
                }
              });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::gelu(Var x) {
  Matrix<Real> out = value(x);
  for (auto& v : out.data) v = kernels::gelu(v);
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(x), [this, x, id] {
    const auto& G = nodes_[static_cast<std::size_t>(id)].grad;
    const auto& X = value(x);
    auto& dst = grad(x);
    const Real inv_sqrt2 = Real(1) / std::sqrt(Real(2));
    const Real inv_sqrt2pi = Real(1) / std::sqrt(Real(2) * Real(3.14159265358979323846));
    for (std::size_t i = 0; i < X.data.size(); ++i) {
      const Real v = X.data[i];
      const Real cdf = Real(0.5) * (Real(1) + std::erf(v * inv_sqrt2));
      const Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * v * v);
      dst.data[i] += G.data[i] * (cdf + v * pdf);
    }
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::cross_entropy(Var logits, std::vector<int> gold) {
  const auto& Z = value(logits);
  if (gold.size() != Z.rows) throw ShapeMismatch("cross_entropy gold count differs from rows");
  Matrix<Real> probs(Z.rows, Z.cols);
  Real loss = 0;
  for (std::size_t i = 0; i < Z.rows; ++i) {
    if (gold[i] < 0 || static_cast<std::size_t>(gold[i]) >= Z.cols)
      throw IndexOutOfRange("gold index " + std::to_string(gold[i]));
    kernels::softmax_rows(Z.row(i), probs.row(i), 1, Z.cols, nullptr);
    loss += kernels::cross_entropy(std::span<const Real>(Z.row(i), Z.cols), static_cast<std::size_t>(gold[i]));
  }
  const int id = static_cast<int>(nodes_.size());
  return push(Matrix<Real>(1, 1, loss), needs(logits),
              [this, logits, id, gold = std::move(gold), probs = std::move(probs)] {
                const Real g = nodes_[static_cast<std::size_t>(id)].grad.data[0];
                auto& dst = grad(logits);
                for (std::size_t i = 0; i < probs.rows; ++i)
                  for (std::size_t j = 0; j < probs.cols; ++j)
                    dst(i, j) += g * (probs(i, j) - (static_cast<int>(j) == gold[i] ? Real(1) : Real(0)));
              });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::bce_with_logits(Var logits, Matrix<Real> targets) {
  const auto& Z = value(logits);
  if (targets.rows != Z.rows || targets.cols != Z.cols) throw ShapeMismatch("bce targets shape");
  Real loss = 0;
  for (std::size_t i = 0; i < Z.data.size(); ++i) loss += kernels::binary_cross_entropy_logit(Z.data[i], targets.data[i]);
  const int id = static_cast<int>(nodes_.size());
  return push(Matrix<Real>(1, 1, loss), needs(logits), [this, logits, id, targets = std::move(targets)] {
    const Real g = nodes_[static_cast<std::size_t>(id)].grad.data[0];
    const auto& Z = value(logits);
    auto& dst = grad(logits);
    for (std::size_t i = 0; i < Z.data.size(); ++i) {
      const Real z = Z.data[i];
      if (std::abs(z) > Real(kLogitClamp)) continue;  // clamped region is flat
      dst.data[i] += g * (kernels::sigmoid(z) - targets.data[i]);
    }
  });
}

template <typename Real>
typename Graph<Real>::Var Graph<Real>::sum(Var a) {
  Real total = 0;
  for (Real v : value(a).data) total += v;
  const int id = static_cast<int>(nodes_.size());
  return push(Matrix<Real>(1, 1, total), needs(a), [this, a, id] {
    const Real g = nodes_[static_cast<std::size_t>(id)].grad.data[0];
    for (auto& v : grad(a).data) v += g;
  });
}

template <typename Real>
Real Graph<Real>::scalar(Var v) const {
  const auto& m = value(v);
  if (m.size() != 1) throw ShapeMismatch("scalar() on a non-1x1 value");
  return m.data[0];
}

template <typename Real>
void Graph<Real>::backward(Var loss) {
  if (value(loss).size() != 1) throw ShapeMismatch("backward() needs a scalar loss");
  for (auto& n : nodes_)
    if (n.needs_grad) n.grad = Matrix<Real>(n.value.rows, n.value.cols);
  if (!node(loss).needs_grad) return;
  node(loss).grad.data[0] = Real(1);
  for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.needs_grad && n.backprop) n.backprop();
  }
}

// ---------------------------------------------------------------- Adam

double linear_decay_lr(double lr0, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return lr0;
  return lr0 * std::max(0.0, 1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

template <typename Real>
void adam_step(std::span<Tensor<Real>* const> params, AdamState<Real>& state, double lr) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (auto* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols());
      state.second_moment.emplace_back(p->rows(), p->cols());
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const Real b1 = static_cast<Real>(state.beta1);
  const Real b2 = static_cast<Real>(state.beta2);
  const Real step_size = static_cast<Real>(lr / bc1);
  const Real inv_bc2 = static_cast<Real>(1.0 / bc2);
  const Real eps = static_cast<Real>(state.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.first_moment[k].data;
    auto& v = state.second_moment[k].data;
    if (m.size() != p.value.size()) throw ShapeMismatch("Adam moment shape differs from " + p.name);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const Real g = p.grad.data[i];
      m[i] = b1 * m[i] + (Real(1) - b1) * g;
      v[i] = b2 * v[i] + (Real(1) - b2) * g * g;
      p.value.data[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
}

// ---------------------------------------------------------------- gradient check

GradCheckResult grad_check(const std::function<Graph<double>::Var(Graph<double>&)>& loss_fn,
                           std::span<Tensor<double>* const> params, double eps, double floor) {
  for (auto* p : params) p->zero_grad();
  {
    Graph<double> g;
    const auto loss = loss_fn(g);
    g.backward(loss);
  }
  const auto evaluate = [&] {
    Graph<double> g(false);
    return g.scalar(loss_fn(g));
  };
  GradCheckResult result;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.data.size(); ++i) {
      const double saved = p->value.data[i];
      p->value.data[i] = saved + eps;
      const double up = evaluate();
      p->value.data[i] = saved - eps;
      const double down = evaluate();
      p->value.data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad.data[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.coordinates;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = p->name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------- instantiations

#define TURL_INSTANTIATE(Real)                                                                                   \
  template struct Matrix<Real>;                                                                                  \
  template class Graph<Real>;                                                                                    \
  template void adam_step<Real>(std::span<Tensor<Real>* const>, AdamState<Real>&, double);                       \
  namespace kernels {                                                                                            \
  template void matmul<Real>(const Real*, const Real*, Real*, std::size_t, std::size_t, std::size_t, bool);      \
  template void matmul_at_b<Real>(const Real*, const Real*, Real*, std::size_t, std::size_t, std::size_t);       \
  template void matmul_a_bt<Real>(const Real*, const Real*, Real*, std::size_t, std::size_t, std::size_t, bool); \
  template void softmax_rows<Real>(const Real*, Real*, std::size_t, std::size_t, const std::uint8_t*);           \
  template Matrix<Real> masked_softmax<Real>(const Matrix<Real>&, std::span<const std::uint8_t>);               \
  template Matrix<Real> affine<Real>(const Matrix<Real>&, const Matrix<Real>&, const Matrix<Real>&);             \
  template Matrix<Real> layer_norm<Real>(const Matrix<Real>&, const Matrix<Real>&, const Matrix<Real>&, Real);   \
  template Real gelu<Real>(Real);                                                                                \
  template Real sigmoid<Real>(Real);                                                                             \
  template Real cross_entropy<Real>(std::span<const Real>, std::size_t);                                         \
  template Real binary_cross_entropy_logit<Real>(Real, Real);                                                    \
  template Real binary_cross_entropy<Real>(Real, Real);                                                          \
  }

TURL_INSTANTIATE(float)
TURL_INSTANTIATE(double)

#undef TURL_INSTANTIATE

}  // namespace turl::numeric
