#include "rc3d/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rc3d/error.hpp"
#include "rc3d/ops.hpp"

namespace rc3d::gradcheck {

namespace {

std::vector<double> projection(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<double> r(s.numel());
  for (auto& x : r) x = u(rng);
  return r;
}

double scalarize(const Tensor<double>& out, const std::vector<double>& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) acc += r[i] * out[i];
  return acc;
}

}  // namespace

Result check(const Function& f, const std::vector<Tensor<double>>& inputs, const Options& options) {
  if (!(options.step > 0)) throw ConfigError("gradcheck: step must be > 0");
  std::vector<double> weights;
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    const Var<double> out = f(tape, vars);
    weights = projection(out.shape(), options.seed);
    const Tensor<double> w(out.shape(), weights);
    const Var<double> loss = ops::sum(ops::mul_broadcast(out, tape.constant(w)));
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : xs) vars.push_back(tape.leaf(t, false));
    return scalarize(f(tape, vars).value(), weights);
  };

  Result res;
  std::mt19937_64 rng(options.seed);
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t n = inputs[i].numel();
    std::vector<std::size_t> entries(n);
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries && options.max_entries < n) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries);
    }
    std::vector<double> base = inputs[i].to_vector();
    for (std::size_t k : entries) {
      std::vector<double> x = base;
      x[k] = base[k] + options.step;
      probe[i] = Tensor<double>(inputs[i].shape(), x);
      const double up = evaluate(probe);
      x[k] = base[k] - options.step;
      probe[i] = Tensor<double>(inputs[i].shape(), x);
      const double down = evaluate(probe);
      const double numeric = (up - down) / (2 * options.step);
      const double a = analytic[i][k];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      if (rel > res.max_rel_error || res.checked == 0) {
        res.max_rel_error = std::max(res.max_rel_error, rel);
        if (rel >= res.max_rel_error) res.worst = "input " + std::to_string(i) + ", entry " + std::to_string(k);
      }
      ++res.checked;
    }
    probe[i] = inputs[i];
  }
  return res;
}

}  // namespace rc3d::gradcheck
