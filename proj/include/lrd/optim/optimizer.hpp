#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lrd/core/checkpoint.hpp"
#include "lrd/core/error.hpp"
#include "lrd/core/rng.hpp"
#include "lrd/core/tensor.hpp"
#include "lrd/optim/rule.hpp"

namespace lrd::optim {

/// Per-parameter accumulators. `v` is empty for SGDM and `v_max` is only
/// populated for AMSGrad.
struct OptimizerState {
  std::uint64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::vector<Tensor> v_max;

  static OptimizerState init(const OptimizerRule& rule, std::span<const Tensor> params) {
    OptimizerState s;
    for (const auto& p : params) {
      s.m.push_back(Tensor::zeros_like(p));
      if (rule.adaptive()) s.v.push_back(Tensor::zeros_like(p));
      if (rule.kind == RuleKind::amsgrad) s.v_max.push_back(Tensor::zeros_like(p));
    }
    return s;
  }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Independent streams for gradient noise and Bernoulli masks, so enabling
/// one never shifts the draws of the other.
struct StepStreams {
  Rng noise;
  Rng mask;

  static StepStreams from(const Rng& parent) { return {parent.child(1), parent.child(2)}; }
};

/// Optional per-step diagnostics: the direction Delta W_t, the sampled mask
/// D_t (all ones unless variant = lrd) and the applied update U_t.
struct StepTrace {
  std::vector<Tensor> direction;
  std::vector<Tensor> mask;
  std::vector<Tensor> update;
};

namespace detail {

inline void check_step_inputs(const OptimizerState& state, std::span<const Tensor> params,
                              std::span<const Tensor> grads) {
  if (params.size() != grads.size())
    throw ShapeError("step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  if (state.m.size() != params.size())
    throw ShapeError("step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " tensors, got " + std::to_string(params.size()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_shape(params[k], grads[k], "step gradient");
    require_same_shape(params[k], state.m[k], "step state");
    const auto g = grads[k].data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i])) throw NonFiniteError(k, i, g[i]);
  }
}

struct Corrections {
  double bias1 = 1.0;  // 1 - beta^t
  double bias2 = 1.0;  // 1 - beta2^t
  bool rectified = true;
  double rectifier = 1.0;
};

inline Corrections corrections(const OptimizerRule& rule, std::uint64_t t) {
  Corrections c;
  const double td = static_cast<double>(t);
  c.bias1 = 1.0 - std::pow(rule.beta, td);
  c.bias2 = 1.0 - std::pow(rule.beta2, td);
  if (rule.kind == RuleKind::radam) {
    // Variance rectification; below rho_t = 4 the adaptive term is skipped.
    const double rho_inf = 2.0 / (1.0 - rule.beta2) - 1.0;
    const double beta2_t = std::pow(rule.beta2, td);
    const double rho_t = rho_inf - 2.0 * td * beta2_t / (1.0 - beta2_t);
    c.rectified = rho_t > 4.0;
    if (c.rectified) {
      c.rectifier = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                              ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    }
  }
  return c;
}

}  // namespace detail

/// One optimizer step over every parameter tensor, in this order:
///   1. coupled weight decay       G += lambda * W
///   2. gradient noise             G += n,  n ~ N(0, s_t)
///   3. dropout on gradient (DG)   G  = D' o G
///   4. accumulate M_t (and V_t) from G, unaffected by the learning-rate mask
///   5. direction Delta W_t
///   6. learning-rate mask         A_t = alpha * D_t (lrd) or alpha
///   7. W -= A_t o Delta W_t
/// Gradients are validated before any state changes.
inline void step(const OptimizerRule& rule, OptimizerState& state, std::span<Tensor> params,
                 std::vector<Tensor> grads, const LrdConfig& cfg, StepStreams& streams,
                 StepTrace* trace = nullptr) {
  rule.validate();
  cfg.validate();
  detail::check_step_inputs(state, params, grads);

  const std::uint64_t completed = state.t;
  state.t += 1;
  const auto corr = detail::corrections(rule, state.t);
  const double noise_sd = cfg.noise ? std::sqrt(cfg.noise->variance_at(completed)) : 0.0;
  const double p = cfg.keep_prob;
  const double alpha = cfg.learning_rate;

  if (trace) {
    trace->direction.clear();
    trace->mask.clear();
    trace->update.clear();
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].data();
    auto g = grads[k].data();
    auto m = state.m[k].data();
    const std::size_t n = w.size();

    if (cfg.weight_decay > 0.0)
      for (std::size_t i = 0; i < n; ++i) g[i] += cfg.weight_decay * w[i];
    if (cfg.noise)
      for (std::size_t i = 0; i < n; ++i) g[i] += noise_sd * streams.noise.normal();
    if (cfg.variant == Variant::dg)
      for (std::size_t i = 0; i < n; ++i) g[i] = streams.mask.bernoulli(p) ? g[i] : 0.0;

    for (std::size_t i = 0; i < n; ++i) m[i] = rule.beta * m[i] + rule.eta * g[i];

    Tensor direction(params[k].shape());
    auto d = direction.data();
    switch (rule.kind) {
      case RuleKind::sgdm:
        std::copy(m.begin(), m.end(), d.begin());
        break;
      case RuleKind::rmsprop: {
        auto v = state.v[k].data();
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = rule.beta2 * v[i] + (1.0 - rule.beta2) * g[i] * g[i];
          d[i] = m[i] / (std::sqrt(v[i]) + rule.eps);
        }
        break;
      }
      case RuleKind::adam: {
        auto v = state.v[k].data();
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = rule.beta2 * v[i] + (1.0 - rule.beta2) * g[i] * g[i];
          d[i] = (m[i] / corr.bias1) / (std::sqrt(v[i] / corr.bias2) + rule.eps);
        }
        break;
      }
      case RuleKind::amsgrad: {
        auto v = state.v[k].data();
        auto vmax = state.v_max[k].data();
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = rule.beta2 * v[i] + (1.0 - rule.beta2) * g[i] * g[i];
          vmax[i] = std::max(vmax[i], v[i]);
          d[i] = (m[i] / corr.bias1) / (std::sqrt(vmax[i] / corr.bias2) + rule.eps);
        }
        break;
      }
      case RuleKind::radam: {
        auto v = state.v[k].data();
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = rule.beta2 * v[i] + (1.0 - rule.beta2) * g[i] * g[i];
          const double m_hat = m[i] / corr.bias1;
          d[i] = corr.rectified ? corr.rectifier * m_hat / (std::sqrt(v[i] / corr.bias2) + rule.eps) : m_hat;
        }
        break;
      }
    }

    const bool masked =
        cfg.variant == Variant::lrd && std::find(cfg.unmasked.begin(), cfg.unmasked.end(), k) == cfg.unmasked.end();
    Tensor mask, update;
    if (trace) {
      mask = Tensor(params[k].shape(), 1.0);
      update = Tensor(params[k].shape());
    }
    for (std::size_t i = 0; i < n; ++i) {
      double rate = alpha;
      if (masked) {
        const double keep = streams.mask.bernoulli(p) ? 1.0 : 0.0;
        rate = alpha * keep;
        if (trace) mask[i] = keep;
      }
      const double u = rate * d[i];
      w[i] -= u;
      if (trace) update[i] = u;
    }
    if (trace) {
      trace->direction.push_back(std::move(direction));
      trace->mask.push_back(std::move(mask));
      trace->update.push_back(std::move(update));
    }
  }
}

/// Multiplicative step schedule: alpha * factor^(number of milestones <= epoch).
inline double lr_schedule(double base, std::uint64_t epoch, std::span<const std::uint64_t> milestones,
                          double factor = 0.1) {
  double lr = base;
  for (auto m : milestones)
    if (epoch >= m) lr *= factor;
  return lr;
}

struct ExpectedUpdateReport {
  std::size_t draws = 0;
  std::size_t elements_checked = 0;
  double max_relative_deviation = 0.0;
};

/// Monte-Carlo check of E[U_t] = p * alpha * Delta W_t. Every draw restarts
/// from the same (state, params) snapshot and differs only in its mask.
/// Elements with |Delta W_t| <= floor are excluded from the deviation.
inline ExpectedUpdateReport expected_update_check(const OptimizerRule& rule, const OptimizerState& snapshot,
                                                  std::span<const Tensor> params,
                                                  std::span<const Tensor> grads, const LrdConfig& cfg,
                                                  std::size_t n_draws, Rng rng, double floor = 1e-12) {
  if (cfg.variant != Variant::lrd) throw DomainError("expected_update_check requires variant=lrd");
  if (cfg.noise) throw DomainError("expected_update_check requires gradient noise to be disabled");
  if (n_draws < 100) throw DomainError("expected_update_check needs at least 100 draws, got " + std::to_string(n_draws));

  const std::vector<Tensor> grad_copy(grads.begin(), grads.end());
  std::vector<std::vector<std::uint64_t>> kept(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) kept[k].assign(params[k].size(), 0);

  std::vector<Tensor> direction;
  StepStreams streams = StepStreams::from(rng);
  for (std::size_t draw = 0; draw < n_draws; ++draw) {
    OptimizerState state = snapshot;
    std::vector<Tensor> w(params.begin(), params.end());
    StepTrace trace;
    step(rule, state, w, grad_copy, cfg, streams, &trace);
    if (draw == 0) direction = trace.direction;
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < params[k].size(); ++i) {
        const double u = trace.update[k][i];
        const double full = cfg.learning_rate * direction[k][i];
        if (trace.direction[k][i] != direction[k][i] || !(u == full || u == 0.0))
          throw Error("expected_update_check: update is not alpha * D * direction");
        if (u == full && full != 0.0) kept[k][i] += 1;
      }
    }
  }

  ExpectedUpdateReport report;
  report.draws = n_draws;
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (std::find(cfg.unmasked.begin(), cfg.unmasked.end(), k) != cfg.unmasked.end()) continue;
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double dw = direction[k][i];
      if (!(std::abs(dw) > floor)) continue;
      const double fraction = static_cast<double>(kept[k][i]) / static_cast<double>(n_draws);
      const double mean_update = (cfg.learning_rate * fraction) * dw;
      const double expected = (cfg.learning_rate * cfg.keep_prob) * dw;
      report.max_relative_deviation =
          std::max(report.max_relative_deviation, std::abs(mean_update - expected) / std::abs(expected));
      ++report.elements_checked;
    }
  }
  return report;
}

/// Owns rule, configuration, accumulators and random streams for one model.
class Optimizer {
 public:
  Optimizer(OptimizerRule rule, LrdConfig cfg, std::span<const Tensor> params, const Rng& rng)
      : rule_(rule), cfg_(cfg), state_(OptimizerState::init(rule, params)), streams_(StepStreams::from(rng)) {
    rule_.validate();
    cfg_.validate();
  }

  void step(std::span<Tensor> params, std::vector<Tensor> grads, StepTrace* trace = nullptr) {
    optim::step(rule_, state_, params, std::move(grads), cfg_, streams_, trace);
  }

  void set_learning_rate(double lr) {
    cfg_.learning_rate = lr;
    cfg_.validate();
  }

  const OptimizerRule& rule() const noexcept { return rule_; }
  const LrdConfig& config() const noexcept { return cfg_; }
  const OptimizerState& state() const noexcept { return state_; }
  OptimizerState& state() noexcept { return state_; }

 private:
  OptimizerRule rule_;
  LrdConfig cfg_;
  OptimizerState state_;
  StepStreams streams_;
};

/// Optimizer-state checkpoint. Header words: rule kind, t, tensor count,
/// has_v, has_v_max. Scalars: beta, beta2, eps, eta. Tensors: M..., V..., V_max....
inline Container to_container(const OptimizerRule& rule, const OptimizerState& state) {
  Container c;
  c.kind = PayloadKind::optimizer_state;
  c.header = {static_cast<std::uint64_t>(rule.kind), state.t, state.m.size(), state.v.empty() ? 0u : 1u,
              state.v_max.empty() ? 0u : 1u};
  c.scalars = {rule.beta, rule.beta2, rule.eps, rule.eta};
  for (const auto& t : state.m) c.tensors.push_back(t);
  for (const auto& t : state.v) c.tensors.push_back(t);
  for (const auto& t : state.v_max) c.tensors.push_back(t);
  return c;
}

inline std::pair<OptimizerRule, OptimizerState> from_container(const Container& c) {
  if (c.kind != PayloadKind::optimizer_state) throw FormatError("checkpoint does not hold optimizer state", 12);
  if (c.header.size() != 5 || c.scalars.size() != 4) throw FormatError("malformed optimizer-state header", 16);
  if (c.header[0] > static_cast<std::uint64_t>(RuleKind::radam)) throw FormatError("unknown rule kind", 20);
  OptimizerRule rule{static_cast<RuleKind>(c.header[0]), c.scalars[0], c.scalars[1], c.scalars[2], c.scalars[3]};
  OptimizerState s;
  s.t = c.header[1];
  const auto n = static_cast<std::size_t>(c.header[2]);
  const std::size_t expected = n * (1 + c.header[3] + c.header[4]);
  if (c.tensors.size() != expected)
    throw FormatError("optimizer checkpoint holds " + std::to_string(c.tensors.size()) + " tensors, expected " +
                          std::to_string(expected),
                      0);
  auto it = c.tensors.begin();
  s.m.assign(it, it + static_cast<std::ptrdiff_t>(n));
  it += static_cast<std::ptrdiff_t>(n);
  if (c.header[3]) {
    s.v.assign(it, it + static_cast<std::ptrdiff_t>(n));
    it += static_cast<std::ptrdiff_t>(n);
  }
  if (c.header[4]) s.v_max.assign(it, it + static_cast<std::ptrdiff_t>(n));
  return {rule, std::move(s)};
}

inline void save_state(const std::filesystem::path& path, const OptimizerRule& rule, const OptimizerState& state) {
  save_container(path, to_container(rule, state));
}

inline std::pair<OptimizerRule, OptimizerState> load_state(const std::filesystem::path& path) {
  return from_container(load_container(path));
}

}  // namespace lrd::optim
