#include <cmath>

#include <doctest.h>

#include "cl3r/error.hpp"
#include "cl3r/optimizer.hpp"

using namespace cl3r;

namespace {

struct Scalar {
  ad::ParameterStore<double> store;
  AdamState<double> state;

  Scalar(double value, bool decay = true) {
    store.add("p", {1}, decay).value[0] = value;
    state = AdamState<double>::zeros(store);
  }
  double value() const { return store[0].value[0]; }
  void grad(double g) { store[0].grad[0] = g; }
};

}  // namespace

TEST_SUITE("optimizer") {

TEST_CASE("zero gradient and zero decay leaves parameters unchanged") {
  Scalar s(1.25);
  for (int i = 0; i < 5; ++i) optimizer_step(s.store, s.state, {0.9, 0.999, 1e-8, 0.0}, 0.1);
  CHECK(s.value() == 1.25);
}

TEST_CASE("first bias-corrected step moves by about the learning rate") {
  Scalar s(1.0);
  s.grad(1.0);
  optimizer_step(s.store, s.state, {0.9, 0.999, 1e-8, 0.0}, 0.1);
  CHECK(std::abs(s.value() - 0.9) < 1e-6);
  CHECK(s.state.step == 1);
}

TEST_CASE("decoupled decay applies without gradient") {
  Scalar s(1.0);
  optimizer_step(s.store, s.state, {0.9, 0.999, 1e-8, 0.01}, 0.1);
  CHECK(std::abs(s.value() - 0.999) < 1e-12);
  Scalar exempt(1.0, false);
  optimizer_step(exempt.store, exempt.state, {0.9, 0.999, 1e-8, 0.01}, 0.1);
  CHECK(exempt.value() == 1.0);
}

TEST_CASE("non-finite gradients reject the whole step") {
  ad::ParameterStore<double> store;
  store.add("a", {2}).grad << 1.0, 1.0;
  store.add("b", {1}).grad << NAN;
  auto state = AdamState<double>::zeros(store);
  CHECK_THROWS_AS(optimizer_step(store, state, {}, 0.1), NumericError);
  CHECK((store.at("a").value == 0.0).all());
  CHECK(state.step == 0);
}

TEST_CASE("frozen parameters are skipped") {
  ad::ParameterStore<double> store;
  store.add("enc.w", {1}).grad << 1.0;
  store.add("dec.w", {1}).grad << 1.0;
  auto state = AdamState<double>::zeros(store);
  optimizer_step(store, state, {}, 0.1, [](const std::string& n) { return n.rfind("dec.", 0) == 0; });
  CHECK(store.at("enc.w").value[0] == 0.0);
  CHECK(store.at("dec.w").value[0] < 0.0);
}

TEST_CASE("mismatched state is rejected") {
  ad::ParameterStore<double> store;
  store.add("a", {2});
  AdamState<double> empty;
  CHECK_THROWS_AS(optimizer_step(store, empty, {}, 0.1), InvalidArgument);
}

TEST_CASE("warmup schedule") {
  CHECK(learning_rate_at(0, 100, 1e-3, 0.05) == doctest::Approx(2e-4));
  CHECK(learning_rate_at(4, 100, 1e-3, 0.05) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(50, 100, 1e-3, 0.05) == 1e-3);
  CHECK(learning_rate_at(0, 100, 1e-3, 0.0) == 1e-3);
}

}  // TEST_SUITE
