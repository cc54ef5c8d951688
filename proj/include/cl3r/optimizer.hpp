#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cl3r/autodiff/tensor.hpp"
#include "cl3r/error.hpp"

namespace cl3r {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

// First/second moment buffers, one per parameter in store order.
template <typename S>
struct AdamState {
  std::int64_t step = 0;
  std::vector<ad::Vec<S>> m;
  std::vector<ad::Vec<S>> v;

  static AdamState zeros(const ad::ParameterStore<S>& store) {
    AdamState s;
    for (std::size_t i = 0; i < store.size(); ++i) {
      s.m.push_back(ad::Vec<S>::Zero(store[i].size()));
      s.v.push_back(ad::Vec<S>::Zero(store[i].size()));
    }
    return s;
  }
};

using TrainablePredicate = std::function<bool(const std::string&)>;

// Bias-corrected adaptive-moment update with decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + decay * p)
// Rejects the whole step, leaving every parameter untouched, if any gradient is non-finite.
template <typename S>
void optimizer_step(ad::ParameterStore<S>& store, AdamState<S>& state, const AdamConfig& hyper, double lr,
                    const TrainablePredicate& trainable = {}) {
  if (state.m.size() != store.size()) throw InvalidArgument("optimizer_step: state does not match parameter store");
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].grad.size() != store[i].value.size()) {
      throw InvalidArgument("optimizer_step: gradient shape mismatch for '" + store[i].name + "'");
    }
    if (!store[i].grad.isFinite().all()) throw NumericError("optimizer_step: non-finite gradient in '" + store[i].name + "'");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(hyper.beta1), b2 = static_cast<S>(hyper.beta2);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    if (trainable && !trainable(p.name)) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (S(1) - b1) * p.grad;
    v = b2 * v + (S(1) - b2) * p.grad.square();
    const ad::Vec<S> step = (m / static_cast<S>(c1)) / ((v / static_cast<S>(c2)).sqrt() + static_cast<S>(hyper.eps));
    const S decay = p.decay ? static_cast<S>(hyper.weight_decay) : S(0);
    p.value -= static_cast<S>(lr) * (step + decay * p.value);
  }
}

// Constant rate after a linear warmup over the first `warmup_fraction` of the run.
inline double learning_rate_at(std::int64_t step, std::int64_t total_steps, double base_lr, double warmup_fraction) {
  const auto warmup = static_cast<std::int64_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (warmup <= 0 || step >= warmup) return base_lr;
  return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

}  // namespace cl3r
