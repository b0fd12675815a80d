#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lrd/core/error.hpp"

namespace lrd::optim {

enum class RuleKind : std::uint32_t { sgdm = 0, rmsprop = 1, adam = 2, amsgrad = 3, radam = 4 };

inline constexpr RuleKind all_rules[] = {RuleKind::sgdm, RuleKind::rmsprop, RuleKind::adam,
                                         RuleKind::amsgrad, RuleKind::radam};

inline std::string_view to_string(RuleKind k) {
  switch (k) {
    case RuleKind::sgdm: return "sgdm";
    case RuleKind::rmsprop: return "rmsprop";
    case RuleKind::adam: return "adam";
    case RuleKind::amsgrad: return "amsgrad";
    case RuleKind::radam: return "radam";
  }
  return "?";
}

/// Display name used in arm labels ("Adam", "Adam_LRD", ...).
inline std::string_view display_name(RuleKind k) {
  switch (k) {
    case RuleKind::sgdm: return "SGDM";
    case RuleKind::rmsprop: return "RMSprop";
    case RuleKind::adam: return "Adam";
    case RuleKind::amsgrad: return "AMSGrad";
    case RuleKind::radam: return "RAdam";
  }
  return "?";
}

inline RuleKind parse_rule(std::string_view name) {
  std::string lower(name);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (auto k : all_rules)
    if (lower == to_string(k)) return k;
  throw ValidationError("optimizer.rule", "unknown rule '" + std::string(name) +
                                              "' (expected sgdm|rmsprop|adam|amsgrad|radam)");
}

/// Accumulator hyperparameters of one update rule.
///
///   M_t = beta * M_{t-1} + eta * G_t
///   V_t = beta2 * V_{t-1} + (1 - beta2) * G_t^2        (adaptive rules)
///
/// Adam-family rules use eta = 1 - beta so that M_t is an exponential moving
/// average; SGDM and RMSprop use eta = 1.
struct OptimizerRule {
  RuleKind kind = RuleKind::adam;
  double beta = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double eta = 0.1;

  bool adaptive() const noexcept { return kind != RuleKind::sgdm; }

  void validate() const {
    if (!(beta >= 0.0 && beta < 1.0)) throw DomainError("beta must lie in [0,1), got " + std::to_string(beta));
    if (!(beta2 >= 0.0 && beta2 < 1.0))
      throw DomainError("beta2 must lie in [0,1), got " + std::to_string(beta2));
    if (!(eps > 0.0)) throw DomainError("eps must be positive, got " + std::to_string(eps));
    if (!(eta > 0.0)) throw DomainError("eta must be positive, got " + std::to_string(eta));
  }

  /// Published default hyperparameters of each rule.
  static OptimizerRule defaults(RuleKind kind) {
    switch (kind) {
      case RuleKind::sgdm: return {kind, 0.9, 0.0, 1e-8, 1.0};
      case RuleKind::rmsprop: return {kind, 0.0, 0.99, 1e-8, 1.0};
      case RuleKind::adam:
      case RuleKind::amsgrad:
      case RuleKind::radam: return {kind, 0.9, 0.999, 1e-8, 0.1};
    }
    return {};
  }

  /// Initial learning rates used for the benchmark runs.
  static double default_learning_rate(RuleKind kind) {
    switch (kind) {
      case RuleKind::sgdm: return 0.1;
      case RuleKind::rmsprop:
      case RuleKind::adam:
      case RuleKind::amsgrad: return 0.001;
      case RuleKind::radam: return 0.03;
    }
    return 0.001;
  }
};

enum class Variant : std::uint32_t {
  none,  // plain optimizer
  lrd,   // learning-rate dropout: mask the update U_t
  dg,    // dropout on the raw gradient before accumulation
};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::none: return "none";
    case Variant::lrd: return "lrd";
    case Variant::dg: return "dg";
  }
  return "?";
}

/// Additive gradient noise n ~ N(0, s_t) with variance
/// s_t = variance0 / (1 + t)^gamma, t = number of completed steps.
struct GradientNoise {
  double variance0 = 0.1;
  double gamma = 0.55;

  double variance_at(std::uint64_t completed_steps) const {
    return variance0 / std::pow(1.0 + static_cast<double>(completed_steps), gamma);
  }
};

struct LrdConfig {
  double learning_rate = 0.001;
  double keep_prob = 0.5;
  Variant variant = Variant::none;
  std::optional<GradientNoise> noise;
  double weight_decay = 0.0;
  std::vector<std::size_t> unmasked;  // parameter tensors the LRD mask skips

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw DomainError("learning rate must be positive, got " + std::to_string(learning_rate));
    if (!(keep_prob >= 0.0 && keep_prob <= 1.0))
      throw DomainError("keep probability p=" + std::to_string(keep_prob) + " outside [0,1]");
    if (!(weight_decay >= 0.0)) throw DomainError("weight decay must be non-negative");
    if (noise && (!(noise->variance0 >= 0.0) || !(noise->gamma >= 0.0)))
      throw DomainError("gradient noise variance0 and gamma must be non-negative");
  }
};

}  // namespace lrd::optim
