#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "satqa/autograd.hpp"

namespace satqa::testing {

// Central-difference check of d f / d inputs for a graph-building scalar f.
// Returns the worst relative error |a - n| / max(|a|, |n|, floor).
inline double gradcheck(const std::function<ag::Var(ag::Graph&, const std::vector<ag::Var>&)>& f,
                        std::vector<Tensor> inputs, double step = 1e-5, double floor = 1e-6) {
  std::vector<Tensor> analytic;
  {
    ag::Graph g;
    std::vector<ag::Var> vars;
    for (auto& t : inputs) vars.push_back(g.input(t, true));
    ag::Var out = f(g, vars);
    g.backward(out);
    for (auto v : vars) analytic.push_back(g.has_grad(v) ? g.grad(v) : Tensor::zeros(v.shape()));
  }
  auto eval = [&](const std::vector<Tensor>& in) {
    ag::Graph g(false);
    std::vector<ag::Var> vars;
    for (auto& t : in) vars.push_back(g.input(t, false));
    return f(g, vars).value()[0];
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k][i] += step;
      minus[k][i] -= step;
      const double num = (eval(plus) - eval(minus)) / (2 * step);
      const double a = analytic[k][i];
      const double err = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, scale);
  for (double& v : t.storage()) v = d(rng);
  return t;
}

// Weighted sum with fixed random weights so every output element matters.
inline ag::Var probe(ag::Graph& g, ag::Var x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(x.shape(), rng);
  return ag::sum(ag::mul(x, g.constant(std::move(w))));
}

}  // namespace satqa::testing
