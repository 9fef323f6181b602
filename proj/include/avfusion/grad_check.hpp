#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "avfusion/graph.hpp"
#include "avfusion/rng.hpp"

namespace avf {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

using GraphFn = std::function<Var(Graph<double>&, std::span<const Var>)>;

inline double grad_check_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Compares reverse-mode gradients with central differences
/// (f(x+h) - f(x-h)) / 2h, coordinate by coordinate. Non-scalar outputs are
/// reduced to the scalar <output, u> with a fixed random probe u. `checked`
/// selects which inputs to differentiate (all when empty).
inline GradCheckResult grad_check(const GraphFn& fn, std::vector<Tensor<double>> inputs,
                                  double h = 1e-5, std::vector<bool> checked = {},
                                  std::uint64_t probe_seed = 0x9a3c) {
  if (checked.empty()) checked.assign(inputs.size(), true);

  Tensor<double> probe;
  auto evaluate = [&](bool with_grad, std::vector<Tensor<double>>* grads) {
    Graph<double> g;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      vars.push_back(g.leaf(inputs[i], with_grad && checked[i]));
    const Var out = fn(g, vars);
    if (probe.empty()) {
      Rng rng(probe_seed);
      probe = Tensor<double>(g.value(out).shape());
      for (auto& v : probe.data()) v = rng.uniform(-1.0, 1.0);
    }
    const double value = dot(g.value(out), probe);
    if (with_grad) {
      g.backward(out, probe);
      for (std::size_t i = 0; i < inputs.size(); ++i) grads->push_back(g.grad(vars[i]));
    }
    return value;
  };

  std::vector<Tensor<double>> analytic;
  evaluate(true, &analytic);

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!checked[i]) continue;
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double saved = inputs[i][j];
      inputs[i][j] = saved + h;
      const double up = evaluate(false, nullptr);
      inputs[i][j] = saved - h;
      const double down = evaluate(false, nullptr);
      inputs[i][j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = grad_check_relative_error(analytic[i][j], numeric);
      ++result.coordinates;
      if (result.coordinates == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = i;
        result.worst_index = j;
        result.analytic = analytic[i][j];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace avf
