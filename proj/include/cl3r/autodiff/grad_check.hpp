#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cl3r/autodiff/tensor.hpp"

namespace cl3r::ad {

struct TensorData {
  Shape shape;
  Vec<double> values;
};

using TensorProgram = std::function<Tensor<double>(Graph<double>&, const std::vector<Tensor<double>>&)>;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

namespace detail {
inline double evaluate(const TensorProgram& f, const std::vector<TensorData>& inputs) {
  Graph<double> g;
  std::vector<Tensor<double>> leaves;
  for (const auto& in : inputs) leaves.push_back(g.constant(in.shape, in.values));
  const Tensor<double> out = f(g, leaves);
  if (out.size() != 1) throw InvalidArgument("grad_check: program must be scalar-valued");
  return out.item();
}
}  // namespace detail

// Central finite differences against reverse-mode gradients for every input coordinate.
// Returns the max of |a - n| / max(1, |a|, |n|).
inline double grad_check(const TensorProgram& f, std::vector<TensorData> inputs, double eps = 1e-5) {
  std::vector<Vec<double>> analytic;
  {
    Graph<double> g;
    std::vector<Tensor<double>> leaves;
    for (const auto& in : inputs) leaves.push_back(g.variable(in.shape, in.values));
    const Tensor<double> out = f(g, leaves);
    g.backward(out);
    for (const auto& leaf : leaves) analytic.push_back(leaf.grad());
  }
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (Index i = 0; i < inputs[t].values.size(); ++i) {
      const double saved = inputs[t].values[i];
      inputs[t].values[i] = saved + eps;
      const double up = detail::evaluate(f, inputs);
      inputs[t].values[i] = saved - eps;
      const double down = detail::evaluate(f, inputs);
      inputs[t].values[i] = saved;
      worst = std::max(worst, relative_error(analytic[t][i], (up - down) / (2 * eps)));
    }
  }
  return worst;
}

using ParameterProgram = std::function<Tensor<double>(Graph<double>&)>;

struct ParamCheckResult {
  double max_error = 0.0;
  std::string worst_parameter;
  Index coordinates = 0;
};

// Same check over the values of a parameter store. `stride` > 1 checks every stride-th
// coordinate of each parameter (the first always included).
inline ParamCheckResult grad_check_params(ParameterStore<double>& store, const ParameterProgram& f, double eps = 1e-5,
                                          Index stride = 1) {
  store.zero_grad();
  {
    Graph<double> g;
    g.backward(f(g));
  }
  std::vector<Vec<double>> analytic;
  for (std::size_t p = 0; p < store.size(); ++p) analytic.push_back(store[p].grad);
  ParamCheckResult result;
  const auto eval = [&] {
    Graph<double> g;
    return f(g).item();
  };
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& param = store[p];
    for (Index i = 0; i < param.size(); i += stride) {
      const double saved = param.value[i];
      param.value[i] = saved + eps;
      const double up = eval();
      param.value[i] = saved - eps;
      const double down = eval();
      param.value[i] = saved;
      const double err = relative_error(analytic[p][i], (up - down) / (2 * eps));
      ++result.coordinates;
      if (err > result.max_error) {
        result.max_error = err;
        result.worst_parameter = param.name;
      }
    }
  }
  store.zero_grad();
  return result;
}

}  // namespace cl3r::ad
