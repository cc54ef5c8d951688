#include <cmath>
#include <string>

#include <doctest.h>

#include "cl3r/autodiff.hpp"
#include "cl3r/autodiff/grad_check.hpp"
#include "cl3r/error.hpp"
#include "cl3r/rng.hpp"

using namespace cl3r;
using namespace cl3r::ad;

namespace {

Vec<double> random_values(Rng& rng, Index n) {
  Vec<double> v(n);
  for (Index i = 0; i < n; ++i) v[i] = uniform(rng, -1, 1);
  return v;
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("matmul shape algebra") {
  Graph<double> g;
  const auto c = matmul(g.constant({2, 3}, 1.0), g.constant({3, 4}, 1.0));
  CHECK(c.shape() == Shape{2, 4});
  CHECK((c.value() == 3.0).all());
}

TEST_CASE("shape mismatch reports both shapes") {
  Graph<double> g;
  try {
    matmul(g.constant({2, 3}, 1.0), g.constant({2, 3}, 1.0));
    FAIL("expected rejection");
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(g.constant({2, 3}, 1.0), g.constant({4}, 1.0)), InvalidArgument);
}

TEST_CASE("softmax rows are distributions") {
  Rng rng = make_rng(1);
  Graph<double> g;
  const auto s = softmax(g.constant({5, 7}, Vec<double>(20.0 * random_values(rng, 35))), 1);
  for (Index r = 0; r < 5; ++r) {
    const auto row = s.value().segment(r * 7, 7);
    CHECK((row > 0).all());
    CHECK((row < 1).all());
    CHECK(std::abs(row.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("layer_norm of a constant row is zero") {
  Graph<double> g;
  const auto y = layer_norm(g.constant({2, 6}, 3.5), -1);
  CHECK((y.value().abs() == 0.0).all());
}

TEST_CASE("backward of a sum is all ones") {
  Graph<double> g;
  const auto x = g.variable({3, 2}, Vec<double>::LinSpaced(6, -1, 1));
  g.backward(sum(x));
  CHECK((x.grad() == 1.0).all());
}

TEST_CASE("backward of a sum of squares is 2x") {
  Graph<double> g;
  const Vec<double> v = Vec<double>::LinSpaced(5, -2, 2);
  const auto x = g.variable({5}, v);
  g.backward(sum(x * x));
  CHECK(((x.grad() - 2.0 * v).abs() < 1e-15).all());
}

TEST_CASE("matmul gradient is ones times B transpose") {
  Rng rng = make_rng(2);
  Graph<double> g;
  const auto a = g.variable({2, 3}, random_values(rng, 6));
  const Vec<double> bv = random_values(rng, 12);
  const auto b = g.constant({3, 4}, bv);
  g.backward(sum(matmul(a, b)));
  const RowMat<double> bm = Eigen::Map<const RowMat<double>>(bv.data(), 3, 4);
  const RowMat<double> expect = RowMat<double>::Ones(2, 4) * bm.transpose();
  for (Index i = 0; i < 6; ++i) CHECK(std::abs(a.grad()[i] - expect.data()[i]) < 1e-14);

  const double err = grad_check([](Graph<double>&, const std::vector<Tensor<double>>& in) { return sum(matmul(in[0], in[1])); },
                                {{{2, 3}, random_values(rng, 6)}, {{3, 4}, bv}});
  CHECK(err < 1e-8);
}

TEST_CASE("backward contract") {
  Graph<double> g;
  const auto x = g.variable({3}, Vec<double>::Ones(3));
  CHECK_THROWS_AS(g.backward(x * 2.0), InvalidArgument);
  const auto loss = sum(x);
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), InvalidArgument);
  CHECK_THROWS_AS(x * 2.0, InvalidArgument);
}

TEST_CASE("parameter gradients accumulate into the store") {
  ParameterStore<double> store;
  auto& p = store.add("w", {2});
  p.value << 1.0, 2.0;
  for (int pass = 0; pass < 2; ++pass) {
    Graph<double> g;
    const auto w = g.param(p);
    CHECK(g.param(p).node() == w.node());
    g.backward(sum(w * w));
  }
  CHECK(p.grad[0] == doctest::Approx(4.0));
  CHECK(p.grad[1] == doctest::Approx(8.0));
  store.zero_grad();
  CHECK((p.grad == 0.0).all());
}

TEST_CASE("no-grad graphs record constants") {
  ParameterStore<double> store;
  auto& p = store.add("w", {2});
  Graph<double> g(false);
  const auto y = sum(g.param(p) * 3.0);
  CHECK(!y.requires_grad());
  g.backward(y);
  CHECK((p.grad == 0.0).all());
}

TEST_CASE("linear programs are exact under finite differences") {
  Rng rng = make_rng(3);
  const double err = grad_check(
      [](Graph<double>&, const std::vector<Tensor<double>>& in) { return sum(in[0] * 3.0 - in[1] * 0.5); },
      {{{4, 3}, random_values(rng, 12)}, {{4, 3}, random_values(rng, 12)}});
  CHECK(err < 1e-10);
}

TEST_CASE("gelu derivative at zero is one half") {
  Graph<double> g;
  const auto x = g.variable({1}, Vec<double>::Zero(1));
  const auto y = gelu(x);
  CHECK(std::isfinite(y.item()));
  CHECK(y.item() == 0.0);
  g.backward(sum(y));
  CHECK(std::abs(x.grad()[0] - 0.5) < 1e-6);
}

TEST_CASE("min reduction routes the gradient to the lowest tied index") {
  Graph<double> g;
  Vec<double> v(4);
  v << 2.0, 1.0, 1.0, 3.0;
  const auto x = g.variable({4}, v);
  g.backward(reduce_min(x, 0));
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("log is floored") {
  Graph<double> g;
  const auto y = log(g.constant({1}, 0.0));
  CHECK(std::isfinite(y.item()));
  CHECK(y.item() == doctest::Approx(std::log(1e-12)));
}

TEST_CASE("every op passes finite differences on random shapes") {
  Rng rng = make_rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Index r = static_cast<Index>(uniform_index(rng, 1, 4));
    const Index c = static_cast<Index>(uniform_index(rng, 2, 5));
    const std::vector<TensorData> in{{{r, c}, random_values(rng, r * c)}, {{r, c}, random_values(rng, r * c)}};
    auto check = [&](TensorProgram f) { CHECK(grad_check(f, in) < 1e-4); };
    check([](auto&, const auto& x) { return sum(softmax(x[0], 1) * x[1]); });
    check([](auto&, const auto& x) { return sum(layer_norm(x[0], -1) * x[1]); });
    check([](auto&, const auto& x) { return sum(gelu(x[0]) * x[1]); });
    check([](auto&, const auto& x) { return sum(exp(x[0]) * x[1]); });
    check([](auto&, const auto& x) { return sum(log(exp(x[0]) + exp(x[1]))); });
    check([](auto&, const auto& x) { return sum(sqrt(x[0] * x[0] + exp(x[1]))); });
    check([](auto&, const auto& x) { return sum(matmul(x[0], transpose(x[1]))); });
    check([](auto&, const auto& x) { return sum(reduce_max(x[0], 1) * reduce_mean(x[1], 1)); });
    check([](auto&, const auto& x) { return sum(concat<double>({x[0], x[1]}, 1) * concat<double>({x[1], x[0]}, 1)); });
    check([](auto&, const auto& x) { return sum(slice(x[0], 1, 1, 1) * slice(x[1], 1, 0, 1)); });
    check([](auto&, const auto& x) { return sum(logsumexp(x[0], 1) * reduce_sum(x[1], 1)); });
    check([](auto&, const auto& x) { return sum(normalize_rows(x[0]) * x[1]); });
    check([](auto&, const auto& x) { return sum(reduce_min(pairwise_sq_dist(x[0], x[1]), 1)); });
  }
}

}  // TEST_SUITE
