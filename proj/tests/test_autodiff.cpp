#include <doctest.h>

#include <cmath>

#include "prsr/autodiff.hpp"
#include "prsr/errors.hpp"
#include "prsr/rng.hpp"

using namespace prsr;
using ad::Graph;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_tensor(Rng& rng, int rows, int cols, bool grad = true) {
  Tensor t(rows, cols);
  for (double& v : t.data) v = rng.normal(0.0, 1.0);
  t.set_requires_grad(grad);
  return t;
}

Tensor identity(int n) {
  Tensor t(n, n);
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

}  // namespace

TEST_CASE("matmul forward matches a hand-multiplied fixture and the identity") {
  Tensor a(2, 3);
  a.data = {1, 2, 3, 4, 5, 6};
  Tensor b(3, 4);
  b.data = {1, 0, 2, -1, 0, 1, -2, 3, 2, 2, 0, 1};

  // Independent triple loop.
  Tensor expected(2, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int p = 0; p < 3; ++p) acc += a.at(i, p) * b.at(p, j);
      expected.at(i, j) = acc;
    }

  Graph g;
  const Tensor& got = g.value(g.matmul(g.constant(a), g.constant(b)));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) CHECK(got.at(i, j) == expected.at(i, j));

  Tensor x(3, 5);
  Rng rng(3);
  for (double& v : x.data) v = rng.uniform();
  Graph g2;
  const Tensor& same = g2.value(g2.matmul(g2.constant(identity(3)), g2.constant(x)));
  for (size_t i = 0; i < x.data.size(); ++i) CHECK(same.data[i] == x.data[i]);

  Graph g3;
  CHECK_THROWS_AS(g3.matmul(g3.constant(Tensor(2, 3)), g3.constant(Tensor(2, 3))), Error);
}

TEST_CASE("transpose is an involution") {
  Rng rng(5);
  Tensor x = random_tensor(rng, 4, 7, false);
  Graph g;
  const Tensor& back = g.value(g.transpose(g.transpose(g.constant(x))));
  for (size_t i = 0; i < x.data.size(); ++i) CHECK(back.data[i] == x.data[i]);
}

TEST_CASE("softmax rows normalize and hit closed forms") {
  Graph g;
  Tensor even(1, 4, 0.37);
  const Tensor& uniform = g.value(g.softmax_rows(g.constant(even)));
  for (double v : uniform.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  Tensor pair(1, 2);
  pair.data = {0.0, std::log(3.0)};
  const Tensor& q = g.value(g.softmax_rows(g.constant(pair)));
  CHECK(q.data[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(q.data[1] == doctest::Approx(0.75).epsilon(1e-14));

  Rng rng(9);
  Tensor wide = random_tensor(rng, 5, 7, false);
  const Tensor& soft = g.value(g.softmax_rows(g.constant(wide)));
  for (int i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 7; ++j) sum += soft.at(i, j);
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("sigmoid anchors and symmetry") {
  Graph g;
  Tensor x(1, 3);
  x.data = {0.0, 1.0, -1.0};
  const Tensor& y = g.value(g.sigmoid(g.constant(x)));
  CHECK(y.data[0] == 0.5);
  CHECK(y.data[1] == doctest::Approx(0.7310585786300049).epsilon(1e-15));
  CHECK(y.data[1] + y.data[2] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("backward rejects non-scalar losses") {
  Graph g;
  Tensor x(2, 2, 1.0);
  x.set_requires_grad(true);
  Var leaf = g.leaf(x);
  CHECK_THROWS_AS(g.backward(leaf), Error);
}

TEST_CASE("gradient accumulates additively across fan-out") {
  // f = sum(x) + sum(x) means df/dx = 2 everywhere.
  Tensor x(2, 3, 1.5);
  x.set_requires_grad(true);
  Graph g;
  Var leaf = g.leaf(x);
  Var loss = g.add(g.sum_all(leaf), g.sum_all(leaf));
  x.zero_grad();
  g.backward(loss);
  for (double v : x.grad) CHECK(v == 2.0);
}

TEST_CASE("backward linearity: grad of f+g equals sum of separate grads") {
  Rng rng(21);
  Tensor x = random_tensor(rng, 3, 3);
  Tensor w = random_tensor(rng, 3, 3);

  auto grad_of = [&](int which) {
    x.zero_grad();
    w.zero_grad();
    Graph g;
    Var xl = g.leaf(x), wl = g.leaf(w);
    Var f = g.sum_all(g.matmul(xl, wl));
    Var h = g.sum_all(g.mul(xl, xl));
    Var loss = which == 0 ? f : which == 1 ? h : g.add(f, h);
    g.backward(loss);
    return x.grad;
  };

  const std::vector<double> gf = grad_of(0);
  const std::vector<double> gh = grad_of(1);
  const std::vector<double> gsum = grad_of(2);
  for (size_t i = 0; i < gsum.size(); ++i) {
    CHECK(gsum[i] == doctest::Approx(gf[i] + gh[i]).epsilon(1e-12));
  }
}

TEST_CASE("finite differences confirm every primitive's gradient") {
  Rng rng(33);
  Tensor a = random_tensor(rng, 3, 4);
  Tensor b = random_tensor(rng, 4, 5);
  Tensor s = random_tensor(rng, 3, 1);
  for (double& v : s.data) v = 1.5 + std::fabs(v);  // keep divisors away from zero

  // One scalar objective exercising matmul, transpose, softmax, sigmoid,
  // row/col selection, concatenation, row scaling and division, means.
  auto build = [&](Graph& g) {
    Var av = g.leaf(a), bv = g.leaf(b), sv = g.leaf(s);
    Var prod = g.matmul(av, bv);                         // 3x5
    Var soft = g.softmax_rows(g.col_slice(prod, 0, 3));  // 3x3
    Var act = g.sigmoid(g.transpose(prod));              // 5x3
    Var picked = g.row_select(act, {0, 2, 2, 4});        // 4x3
    std::vector<Var> cols = {g.mean_rows(picked), g.mean_rows(soft)};
    Var joined = g.concat_cols(cols);                    // 1x6
    std::vector<Var> rows = {joined, joined};
    Var stacked = g.concat_rows(rows);                   // 2x6
    Var scaled = g.rows_scale(g.matmul(av, bv), sv);     // 3x5
    Var divided = g.rows_div(g.matmul(av, bv), sv);      // 3x5
    Var total = g.add(g.sum_all(stacked), g.add(g.sum_all(scaled), g.sum_all(divided)));
    return g.scale(g.sub(total, g.scale(g.sum_all(soft), 0.25)), 0.7);
  };

  a.zero_grad();
  b.zero_grad();
  s.zero_grad();
  {
    Graph g;
    g.backward(build(g));
  }

  std::vector<Tensor*> params = {&a, &b, &s};
  const ad::FdReport report = ad::finite_diff_check(
      [&]() {
        Graph g;
        return g.scalar(build(g));
      },
      params, 1e-5);
  CHECK(report.skipped == 0);
  CHECK(report.checked == a.data.size() + b.data.size() + s.data.size());
  CHECK(report.max_rel_err < 1e-9);
}

TEST_CASE("finite differences on a pure quadratic are near exact") {
  Rng rng(41);
  Tensor theta = random_tensor(rng, 4, 4);
  theta.zero_grad();
  {
    Graph g;
    Var t = g.leaf(theta);
    g.backward(g.sum_all(g.mul(t, t)));
  }
  std::vector<Tensor*> params = {&theta};
  const ad::FdReport report = ad::finite_diff_check(
      [&]() {
        Graph g;
        Var t = g.leaf(theta);
        return g.scalar(g.sum_all(g.mul(t, t)));
      },
      params, 1e-5);
  CHECK(report.max_rel_err < 1e-9);
}

TEST_CASE("finite differences on a constant objective see zero gradients") {
  Tensor theta(2, 2, 3.0);
  theta.set_requires_grad(true);
  theta.zero_grad();
  std::vector<Tensor*> params = {&theta};
  const ad::FdReport report =
      ad::finite_diff_check([]() { return 42.0; }, params, 1e-5);
  CHECK(report.max_rel_err == 0.0);
}

TEST_CASE("coordinates whose discrete selection flips are skipped, not compared") {
  // f(x) = sum over coords of max(x, 0). One coordinate sits within the
  // finite-difference step of the kink, where the central difference would
  // disagree with the (sub)gradient; the signature detects the flip.
  Tensor theta(1, 3);
  theta.data = {0.8, -0.9, 3e-6};
  theta.set_requires_grad(true);
  theta.grad = {1.0, 0.0, 1.0};  // analytic gradient of the smooth branch

  auto value = [&]() {
    double acc = 0.0;
    for (double v : theta.data) acc += std::max(v, 0.0);
    return acc;
  };
  auto signature = [&]() {
    std::string sig;
    for (double v : theta.data) sig.push_back(v >= 0.0 ? '+' : '-');
    return sig;
  };

  std::vector<Tensor*> params = {&theta};
  const ad::FdReport report = ad::finite_diff_check(value, params, 1e-5, signature);
  CHECK(report.skipped == 1);
  CHECK(report.checked == 2);
  CHECK(report.max_rel_err < 1e-9);

  // Without the signature the kink coordinate is compared and flagged.
  const ad::FdReport blind = ad::finite_diff_check(value, params, 1e-5);
  CHECK(blind.skipped == 0);
  CHECK(blind.max_rel_err > 0.1);
}

TEST_CASE("leaf values are read through to the parameter") {
  Tensor x(1, 1, 2.0);
  x.set_requires_grad(true);
  Graph g;
  Var loss = g.mul(g.leaf(x), g.leaf(x));
  CHECK(g.scalar(loss) == 4.0);
  x.zero_grad();
  g.backward(loss);
  CHECK(x.grad[0] == 4.0);  // d(x^2)/dx = 2x accumulated over both leaves
}
