#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "turl/errors.hpp"
#include "turl/numeric.hpp"
#include "turl/rng.hpp"

using namespace turl;
using namespace turl::numeric;
using G = Graph<double>;

namespace {

Tensor<double> random_tensor(const std::string& name, std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor<double> t(name, r, c);
  for (auto& x : t.value.data) x = scale * rng.normal();
  return t;
}

// Every op is checked with the library grad_check and the test-side oracle.
void check_grad(const std::function<G::Var(G&)>& fn, std::vector<Tensor<double>*> params, double tol = 1e-6) {
  const auto lib = grad_check(fn, params);
  CHECK(lib.max_relative_error < tol);
  const auto f = [&] {
    G g(false);
    return g.scalar(fn(g));
  };
  const auto a = [&] {
    G g;
    g.backward(fn(g));
  };
  const auto ours = oracle::finite_difference(f, a, params, 1e-6, 1e-3);
  CHECK(ours.max_rel < tol);
  CHECK(ours.coords == lib.coordinates);
}

// Generic scalar readout: sum(gelu(x * P)) for a fixed P.
G::Var weighted(G& g, G::Var x) {
  const auto& v = g.value(x);
  Matrix<double> proj(v.cols, 3);
  for (std::size_t i = 0; i < proj.size(); ++i) proj.data[i] = std::cos(0.3 + 1.1 * static_cast<double>(i));
  return g.sum(g.gelu(g.matmul(x, g.constant(proj))));
}

}  // namespace

TEST_CASE("matmul kernels agree with plain loops") {
  Rng rng(1);
  Matrix<double> a(3, 4), b(4, 5), bt(5, 4);
  for (auto& x : a.data) x = rng.normal();
  for (auto& x : b.data) x = rng.normal();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) bt(i, j) = b(j, i);
  const auto ref = oracle::mm(a, b);
  Matrix<double> c(3, 5), d(3, 5), e(4, 5, 0.0);
  kernels::matmul(a.data.data(), b.data.data(), c.data.data(), 3, 4, 5, false);
  kernels::matmul_a_bt(a.data.data(), bt.data.data(), d.data.data(), 3, 4, 5, false);
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(c.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
    CHECK(d.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
  }
  // a^T * c accumulates
  Matrix<double> at(4, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) at(j, i) = a(i, j);
  kernels::matmul_at_b(a.data.data(), c.data.data(), e.data.data(), 3, 4, 5);
  const auto ref2 = oracle::mm(at, c);
  for (std::size_t i = 0; i < e.size(); ++i) CHECK(e.data[i] == doctest::Approx(ref2.data[i]).epsilon(1e-12));
  kernels::matmul(a.data.data(), b.data.data(), c.data.data(), 3, 4, 5, true);
  CHECK(c.data[0] == doctest::Approx(2 * ref.data[0]));
}

TEST_CASE("masked softmax matches direct normalisation over visible entries") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix<double> x(4, 4);
    std::vector<std::uint8_t> mask(16);
    for (auto& v : x.data) v = 3 * rng.normal();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) mask[i * 4 + j] = (i == j || rng.uniform() < 0.5) ? 1 : 0;
    const auto y = kernels::masked_softmax(x, mask);
    for (std::size_t i = 0; i < 4; ++i) {
      double z = 0;
      for (std::size_t j = 0; j < 4; ++j)
        if (mask[i * 4 + j]) z += std::exp(x(i, j));
      double row = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        const double want = mask[i * 4 + j] ? std::exp(x(i, j)) / z : 0.0;
        CHECK(y(i, j) == doctest::Approx(want).epsilon(1e-12));
        if (!mask[i * 4 + j]) CHECK(y(i, j) == 0.0);
        row += y(i, j);
      }
      CHECK(row == doctest::Approx(1.0));
    }
  }
  SUBCASE("a fully masked row is an error") {
    Matrix<double> x(1, 2);
    std::vector<std::uint8_t> mask = {0, 0};
    CHECK_THROWS_AS(kernels::masked_softmax(x, mask), AllMaskedRow);
  }
  SUBCASE("a wrong mask size is an error") {
    Matrix<double> x(2, 2);
    std::vector<std::uint8_t> mask = {1};
    CHECK_THROWS_AS(kernels::masked_softmax(x, mask), ShapeMismatch);
  }
  SUBCASE("large logits do not overflow") {
    Matrix<double> x(1, 2, std::vector<double>{1000.0, 999.0});
    std::vector<std::uint8_t> mask = {1, 1};
    const auto y = kernels::masked_softmax(x, mask);
    CHECK(y(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  }
}

TEST_CASE("scalar kernels") {
  CHECK(kernels::gelu(0.0) == 0.0);
  CHECK(kernels::gelu(1.0) == doctest::Approx(0.8413447460685429));
  CHECK(kernels::sigmoid(0.0) == 0.5);
  CHECK(kernels::sigmoid(-800.0) >= 0.0);
  const std::vector<double> logits = {1.0, 2.0, 3.0};
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(kernels::cross_entropy<double>(logits, 2) == doctest::Approx(lse - 3.0));
  CHECK_THROWS_AS(kernels::cross_entropy<double>(logits, 3), IndexOutOfRange);
  CHECK(kernels::binary_cross_entropy_logit(0.0, 1.0) == doctest::Approx(std::log(2.0)));
  // clamped at +-30
  CHECK(kernels::binary_cross_entropy_logit(100.0, 0.0) == doctest::Approx(30.0));
  CHECK(std::isfinite(kernels::binary_cross_entropy(0.0, 1.0)));
  CHECK(kernels::binary_cross_entropy(0.25, 1.0) == doctest::Approx(-std::log(0.25)));
}

TEST_CASE("layer norm kernel") {
  Matrix<double> x(1, 4, std::vector<double>{1, 2, 3, 4});
  Matrix<double> g(1, 4, 1.0), b(1, 4, 0.0);
  const auto y = kernels::layer_norm(x, g, b);
  const double sd = std::sqrt(1.25);
  CHECK(y(0, 0) == doctest::Approx(-1.5 / sd));
  CHECK(y(0, 3) == doctest::Approx(1.5 / sd));
  Matrix<double> bad(1, 3, 1.0);
  CHECK_THROWS_AS(kernels::layer_norm(x, bad, b), ShapeMismatch);
}

TEST_CASE("per-op gradients") {
  Rng rng(3);
  auto a = random_tensor("a", 3, 4, rng);
  auto b = random_tensor("b", 4, 2, rng);
  auto c = random_tensor("c", 3, 4, rng);
  auto row = random_tensor("row", 1, 4, rng);
  auto gamma = random_tensor("gamma", 1, 4, rng);
  auto beta = random_tensor("beta", 1, 4, rng);
  auto table = random_tensor("table", 5, 4, rng);

  SUBCASE("matmul") { check_grad([&](G& g) { return weighted(g, g.matmul(g.parameter(a), g.parameter(b))); }, {&a, &b}); }
  SUBCASE("matmul_transposed") {
    check_grad([&](G& g) { return weighted(g, g.matmul_transposed(g.parameter(a), g.parameter(c))); }, {&a, &c});
  }
  SUBCASE("add, add_row, scale") {
    check_grad([&](G& g) {
      return weighted(g, g.scale(g.add_row(g.add(g.parameter(a), g.parameter(c)), g.parameter(row)), -0.7));
    }, {&a, &c, &row});
  }
  SUBCASE("concat, slice, gather, mean, assemble") {
    check_grad([&](G& g) {
      auto x = g.concat_cols({g.parameter(a), g.parameter(c)});
      auto s = g.slice_cols(x, 2, 4);
      auto r = g.gather_rows(s, {2, 0, 2});
      auto m = g.mean_rows(g.parameter(c));
      auto z = g.assemble_rows(4, {{r, {0, 1, 3}}, {m, {2}}});
      return weighted(g, z);
    }, {&a, &c});
  }
  SUBCASE("softmax with and without mask") {
    const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1};
    check_grad([&](G& g) { return weighted(g, g.softmax_rows(g.parameter(a), mask.data())); }, {&a});
    check_grad([&](G& g) { return weighted(g, g.softmax_rows(g.parameter(a), nullptr)); }, {&a});
  }
  SUBCASE("layer norm") {
    check_grad([&](G& g) { return weighted(g, g.layer_norm(g.parameter(a), g.parameter(gamma), g.parameter(beta))); },
               {&a, &gamma, &beta});
  }
  SUBCASE("gelu") { check_grad([&](G& g) { return weighted(g, g.parameter(a)); }, {&a}); }
  SUBCASE("embeddings") {
    check_grad([&](G& g) {
      auto e = g.embedding(table, {1, 3, 1});
      auto m = g.embedding_mean(table, {{0, 2}, {}, {4, 4, 1}});
      return weighted(g, g.add(e, m));
    }, {&table});
  }
  SUBCASE("cross entropy") {
    check_grad([&](G& g) { return g.cross_entropy(g.parameter(a), {3, 0, 1}); }, {&a});
  }
  SUBCASE("bce with logits") {
    Matrix<double> targets(3, 4);
    for (std::size_t i = 0; i < targets.size(); ++i) targets.data[i] = i % 3 == 0 ? 1.0 : 0.0;
    check_grad([&](G& g) { return g.bce_with_logits(g.parameter(a), targets); }, {&a});
  }
}

TEST_CASE("graph bookkeeping") {
  Rng rng(4);
  auto a = random_tensor("a", 2, 2, rng);
  G g;
  auto p1 = g.parameter(a);
  auto p2 = g.parameter(a);
  CHECK(p1.id == p2.id);  // one node per tensor
  CHECK_THROWS_AS(g.matmul(p1, g.constant(Matrix<double>(3, 1))), ShapeMismatch);
  CHECK_THROWS_AS(g.embedding(a, {5}), IndexOutOfRange);
  auto loss = g.sum(g.add(p1, p2));
  a.zero_grad();
  g.backward(loss);
  for (double x : a.grad.data) CHECK(x == 2.0);
  G frozen(false);
  auto v = frozen.sum(frozen.parameter(a));
  CHECK(frozen.scalar(v) == doctest::Approx(a.value.data[0] + a.value.data[1] + a.value.data[2] + a.value.data[3]));
}

TEST_CASE("adam step matches a hand-written update") {
  Tensor<double> p("p", 1, 2);
  p.value.data = {1.0, -2.0};
  AdamState<double> st;
  const double lr = 0.1;
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
  std::vector<Tensor<double>*> params = {&p};
  for (int t = 1; t <= 3; ++t) {
    const double grads[2] = {0.5 * t, -1.5};
    p.grad.data = {grads[0], grads[1]};
    adam_step<double>(params, st, lr);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grads[i];
      v[i] = 0.999 * v[i] + 0.001 * grads[i] * grads[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.value.data[i] == doctest::Approx(x[i]).epsilon(1e-12));
    }
  }
  CHECK(st.step == 3);
}

TEST_CASE("linear decay schedule") {
  CHECK(linear_decay_lr(1.0, 0, 10) == 1.0);
  CHECK(linear_decay_lr(1.0, 5, 10) == 0.5);
  CHECK(linear_decay_lr(1.0, 20, 10) == 0.0);
  CHECK(linear_decay_lr(0.3, 4, 0) == 0.3);
}

TEST_CASE("rng is reproducible and unbiased enough") {
  Rng a(9), b(9);
  for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
  Rng r(1);
  double sum = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto k = r.below(10);
    CHECK(k < 10);
    sum += static_cast<double>(k);
  }
  CHECK(sum / 10000 == doctest::Approx(4.5).epsilon(0.03));
  for (int i = 0; i < 1000; ++i) CHECK(std::abs(r.truncated_normal(0.02)) <= 0.04);
  CHECK(a.derive(1).next() == b.derive(1).next());
  CHECK(a.derive(1).next() != a.derive(2).next());
}
