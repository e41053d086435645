#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "flood/models.hpp"
#include "flood/tensor.hpp"
#include "support.hpp"

namespace flood::test {

struct Shape {
  std::size_t rows, cols;
};

using Builder = std::function<nn::Var(nn::Tape<double>&, const std::vector<nn::Var>&)>;

/// Central-difference check of d(sum(out ⊙ w))/d(inputs) for random w.
/// `kink_margin` keeps inputs away from non-differentiable points at 0.
inline double fd_max_rel_err(const std::vector<Shape>& shapes, const Builder& build, std::uint64_t seed,
                             double kink_margin = 0.0) {
  using namespace flood::nn;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::vector<double>> inputs;
  for (const auto& s : shapes) {
    std::vector<double> v(s.rows * s.cols);
    for (auto& x : v) {
      x = u(rng);
      if (kink_margin > 0 && std::abs(x) < kink_margin) x = x < 0 ? -kink_margin : kink_margin;
    }
    inputs.push_back(std::move(v));
  }
  std::vector<double> weights;

  auto eval = [&](bool with_grad, std::vector<std::vector<double>>* grads) {
    Tape<double> t;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < shapes.size(); ++i)
      vars.push_back(t.leaf(shapes[i].rows, shapes[i].cols, inputs[i], with_grad));
    const Var out = build(t, vars);
    const std::size_t n = t.rows(out) * t.cols(out);
    if (weights.empty()) {
      weights.resize(n);
      for (auto& w : weights) w = u(rng);
    }
    const Var w = t.leaf(t.rows(out), t.cols(out), weights);
    const Var loss = t.sum(t.mul(out, w));
    const double value = t.value(loss)[0];
    if (with_grad) {
      t.backward(loss);
      for (std::size_t i = 0; i < vars.size(); ++i) {
        const auto g = t.grad(vars[i]);
        grads->emplace_back(g.begin(), g.end());
      }
    }
    return value;
  };

  std::vector<std::vector<double>> analytic;
  eval(true, &analytic);
  const double eps = 1e-4;
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double x0 = inputs[i][k];
      inputs[i][k] = x0 + eps;
      const double fp = eval(false, nullptr);
      inputs[i][k] = x0 - eps;
      const double fm = eval(false, nullptr);
      inputs[i][k] = x0;
      const double numeric = (fp - fm) / (2 * eps);
      worst = std::max(worst, rel_err(analytic[i][k], numeric, 1e-6));
    }
  return worst;
}

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  Builder build;
  double kink_margin = 0.0;
};

/// One entry per differentiable tape op, plus a composed dense layer.
inline std::vector<OpCase> op_cases() {
  using nn::Tape;
  using nn::Var;
  using V = const std::vector<Var>&;
  return {
      {"matmul", {{3, 4}, {4, 5}}, [](Tape<double>& t, V v) { return t.matmul(v[0], v[1]); }},
      {"add", {{3, 4}, {3, 4}}, [](Tape<double>& t, V v) { return t.add(v[0], v[1]); }},
      {"add_row", {{3, 4}, {1, 4}}, [](Tape<double>& t, V v) { return t.add_row(v[0], v[1]); }},
      {"sub", {{2, 5}, {2, 5}}, [](Tape<double>& t, V v) { return t.sub(v[0], v[1]); }},
      {"mul", {{3, 3}, {3, 3}}, [](Tape<double>& t, V v) { return t.mul(v[0], v[1]); }},
      {"relu", {{4, 4}}, [](Tape<double>& t, V v) { return t.relu(v[0]); }, 1e-3},
      {"tanh", {{3, 4}}, [](Tape<double>& t, V v) { return t.tanh(v[0]); }},
      {"sigmoid", {{3, 4}}, [](Tape<double>& t, V v) { return t.sigmoid(v[0]); }},
      {"exp", {{3, 4}}, [](Tape<double>& t, V v) { return t.exp(v[0]); }},
      {"concat",
       {{3, 2}, {3, 4}},
       [](Tape<double>& t, V v) {
         const Var parts[] = {v[1], v[0], v[1]};
         return t.concat_cols(parts);
       }},
      {"slice", {{3, 6}}, [](Tape<double>& t, V v) { return t.slice_cols(v[0], 2, 3); }},
      {"gather", {{3, 4}}, [](Tape<double>& t, V v) { return t.gather_cols(v[0], {3, 0, 0, 2, 3}); }},
      {"sum and mean", {{3, 4}}, [](Tape<double>& t, V v) { return t.mean(t.mul(v[0], v[0])); }},
      {"mse", {{3, 4}, {3, 4}}, [](Tape<double>& t, V v) { return t.mse(v[0], v[1]); }},
      {"composed layer",
       {{5, 3}, {3, 4}, {1, 4}},
       [](Tape<double>& t, V v) { return t.tanh(t.add_row(t.matmul(v[0], v[1]), v[2])); }},
  };
}

/// Worst relative error over `trials` seeded input draws.
inline double op_fd_worst(const OpCase& c, std::size_t trials = 100) {
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < trials; ++trial)
    worst = std::max(worst, fd_max_rel_err(c.shapes, c.build, trial, c.kink_margin));
  return worst;
}

/// Small instance of `kind` for gradient checks.
inline ModelSpec gradcheck_spec(ModelKind kind) {
  ModelSpec s;
  s.kind = kind;
  s.lookahead = 2;
  s.depth = 2;
  s.width = 8;
  s.branch_depth = kind == ModelKind::PhyDnn ? 1 : 0;
  s.bnn_sigma_init = -2.0;
  return s;
}

/// Full-model check: `trials` seeded single-parameter central differences of
/// sum(out ⊙ w) against reverse mode, in double precision.
inline double model_fd_worst(ModelKind kind, std::size_t trials = 100) {
  using namespace flood::nn;
  const ModelSpec s = gradcheck_spec(kind);
  ParamStore st;
  declare_parameters(s, st);
  st.initialize(41);
  ParamBuffer<double> buf(st);
  std::mt19937_64 draw(13);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x(3 * s.input_len()), wts(3 * s.output_len());
  for (auto& v : x) v = u(draw);
  for (auto& v : wts) v = u(draw);
  auto loss_of = [&](bool grad) {
    Tape<double> t;
    std::mt19937_64 rng(99);
    if (grad) buf.zero_grads();
    const Var out = forward(t, s, buf.bind(), t.leaf(3, s.input_len(), x), &rng);
    const Var l = t.sum(t.mul(out, t.leaf(3, s.output_len(), wts)));
    const double v = t.value(l)[0];
    if (grad) t.backward(l);
    return v;
  };
  loss_of(true);
  const auto grads = buf.grads;
  std::mt19937_64 pick(7);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t p = pick() % buf.values.size();
    const std::size_t e = pick() % buf.values[p].size();
    const double x0 = buf.values[p][e], h = 1e-5;
    buf.values[p][e] = x0 + h;
    const double fp = loss_of(false);
    buf.values[p][e] = x0 - h;
    const double fm = loss_of(false);
    buf.values[p][e] = x0;
    worst = std::max(worst, rel_err(grads[p][e], (fp - fm) / (2 * h), 1e-6));
  }
  return worst;
}

}  // namespace flood::test
