#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lrd/core/rng.hpp"
#include "lrd/nn/mlp.hpp"
#include "lrd/testfn/toy.hpp"

namespace lrd::harness {

/// |a - b| / max(|a|, |b|, floor). The floor keeps entries whose true value
/// is (numerically) zero from dominating the maximum: below it the check is
/// an absolute one at tolerance * floor.
inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline constexpr double gradcheck_floor = 1e-4;

struct GradCheckReport {
  std::size_t evaluations = 0;
  double max_relative_error = 0.0;
};

/// Analytic toy gradient against central differences at `n` uniform points
/// of the standard box.
inline GradCheckReport toy_gradient_check(std::size_t n, std::uint64_t seed, double h = 1e-6,
                                          double floor = gradcheck_floor) {
  Rng rng(seed);
  const auto& box = testfn::ToyProblem::domain;
  GradCheckReport r;
  for (std::size_t i = 0; i < n; ++i) {
    const testfn::Point p{box.x_min + (box.x_max - box.x_min) * rng.uniform(),
                          box.y_min + (box.y_max - box.y_min) * rng.uniform()};
    const auto g = testfn::toy_gradient(p);
    const double nx = (testfn::toy_value({p.x + h, p.y}) - testfn::toy_value({p.x - h, p.y})) / (2.0 * h);
    const double ny = (testfn::toy_value({p.x, p.y + h}) - testfn::toy_value({p.x, p.y - h})) / (2.0 * h);
    r.max_relative_error = std::max({r.max_relative_error, relative_error(g.dx, nx, floor), relative_error(g.dy, ny, floor)});
    r.evaluations += 2;
  }
  return r;
}

/// Backprop against central differences for every parameter of a random
/// MLP. In train mode one dropout mask set is sampled and held fixed for
/// both the analytic and the numerical gradient.
inline GradCheckReport mlp_gradient_check(const std::vector<std::size_t>& sizes, std::size_t batch, std::uint64_t seed,
                                          nn::Mode mode, double keep_prob = 1.0, double h = 1e-5,
                                          double floor = gradcheck_floor) {
  Rng rng(seed);
  nn::Mlp model = nn::Mlp::he_uniform(sizes, rng, keep_prob);
  for (auto& p : model.parameters())
    for (double& v : p.data()) v += 0.1 * rng.normal();  // non-zero biases too
  Tensor x({batch, sizes.front()});
  for (double& v : x.data()) v = rng.normal();
  std::vector<int> labels(batch);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_index(sizes.back()));

  std::vector<Tensor> masks;
  if (mode == nn::Mode::train && keep_prob < 1.0) masks = nn::sample_dropout_masks(model, batch, rng);
  const auto loss_at = [&](const nn::Mlp& m) {
    return nn::softmax_cross_entropy(nn::forward_with_masks(m, x, masks).logits, labels);
  };
  const auto analytic = nn::backward(model, nn::forward_with_masks(model, x, masks), labels);

  GradCheckReport r;
  for (std::size_t k = 0; k < model.parameters().size(); ++k) {
    for (std::size_t i = 0; i < model.parameters()[k].size(); ++i) {
      nn::Mlp plus = model, minus = model;
      plus.parameters()[k][i] += h;
      minus.parameters()[k][i] -= h;
      const double numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
      r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic.grads[k][i], numeric, floor));
      ++r.evaluations;
    }
  }
  return r;
}

}  // namespace lrd::harness
