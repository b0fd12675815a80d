#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "lrd/core/stats.hpp"
#include "lrd/optim/optimizer.hpp"
#include "lrd/testfn/toy.hpp"

using namespace lrd;
using namespace lrd::optim;

namespace {

// Scalar transcription of each rule's published recurrence. Powers of beta
// are tracked as running products rather than std::pow.
struct ScalarOracle {
  RuleKind kind;
  double alpha, b1, b2, eps;
  double m = 0, v = 0, vmax = 0, b1t = 1, b2t = 1;
  int t = 0;

  double step(double w, double g) {
    ++t;
    b1t *= b1;
    b2t *= b2;
    switch (kind) {
      case RuleKind::sgdm:
        m = b1 * m + g;
        return w - alpha * m;
      case RuleKind::rmsprop:
        v = b2 * v + (1 - b2) * g * g;
        return w - alpha * g / (std::sqrt(v) + eps);
      case RuleKind::adam:
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        return w - alpha * (m / (1 - b1t)) / (std::sqrt(v / (1 - b2t)) + eps);
      case RuleKind::amsgrad:
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        vmax = std::max(vmax, v);
        return w - alpha * (m / (1 - b1t)) / (std::sqrt(vmax / (1 - b2t)) + eps);
      case RuleKind::radam: {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - b1t);
        const double rho_inf = 2 / (1 - b2) - 1;
        const double rho = rho_inf - 2 * t * b2t / (1 - b2t);
        if (rho > 4) {
          const double r = std::sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho));
          return w - alpha * r * mhat / (std::sqrt(v / (1 - b2t)) + eps);
        }
        return w - alpha * mhat;
      }
    }
    return w;
  }
};

LrdConfig plain(double lr) {
  LrdConfig c;
  c.learning_rate = lr;
  c.variant = Variant::none;
  return c;
}

LrdConfig with_variant(double lr, Variant v, double p) {
  LrdConfig c = plain(lr);
  c.variant = v;
  c.keep_prob = p;
  return c;
}

std::vector<Tensor> toy_grad(const std::vector<Tensor>& w) {
  const auto g = testfn::toy_gradient({w[0][0], w[0][1]});
  return {Tensor::vector({g.dx, g.dy})};
}

// Small learning rates keep every rule inside the box for 100 steps.
double toy_lr(RuleKind k) { return k == RuleKind::sgdm ? 1e-4 : 1e-3; }

}  // namespace

TEST(Rule, DefaultsAndParsing) {
  EXPECT_EQ(OptimizerRule::default_learning_rate(RuleKind::sgdm), 0.1);
  EXPECT_EQ(OptimizerRule::default_learning_rate(RuleKind::rmsprop), 0.001);
  EXPECT_EQ(OptimizerRule::default_learning_rate(RuleKind::adam), 0.001);
  EXPECT_EQ(OptimizerRule::default_learning_rate(RuleKind::amsgrad), 0.001);
  EXPECT_EQ(OptimizerRule::default_learning_rate(RuleKind::radam), 0.03);
  EXPECT_EQ(OptimizerRule::defaults(RuleKind::sgdm).beta, 0.9);
  EXPECT_EQ(OptimizerRule::defaults(RuleKind::sgdm).eta, 1.0);
  EXPECT_EQ(OptimizerRule::defaults(RuleKind::adam).beta2, 0.999);
  EXPECT_DOUBLE_EQ(OptimizerRule::defaults(RuleKind::adam).eta, 1.0 - 0.9);
  for (auto k : all_rules) EXPECT_EQ(parse_rule(to_string(k)), k);
  EXPECT_EQ(parse_rule("Adam"), RuleKind::adam);
  EXPECT_THROW(parse_rule("adagrad"), ValidationError);
}

TEST(Step, AdamFirstStepMatchesScalarOracle) {
  const auto rule = OptimizerRule::defaults(RuleKind::adam);
  std::vector<Tensor> w{Tensor::vector({0.0})};
  auto state = OptimizerState::init(rule, w);
  StepStreams streams = StepStreams::from(Rng(0));
  step(rule, state, w, {Tensor::vector({1.0})}, plain(0.001), streams);
  ScalarOracle o{RuleKind::adam, 0.001, 0.9, 0.999, 1e-8};
  EXPECT_NEAR(w[0][0], o.step(0.0, 1.0), 1e-15);
  EXPECT_NEAR(w[0][0], -0.001 / (1 + 1e-8), 1e-15);
}

TEST(Step, SgdmTwoStepsHandUnrolled) {
  const auto rule = OptimizerRule::defaults(RuleKind::sgdm);
  std::vector<Tensor> w{Tensor::vector({0.0})};
  auto state = OptimizerState::init(rule, w);
  StepStreams streams = StepStreams::from(Rng(0));
  step(rule, state, w, {Tensor::vector({1.0})}, plain(0.1), streams);
  step(rule, state, w, {Tensor::vector({1.0})}, plain(0.1), streams);
  EXPECT_NEAR(w[0][0], -0.29, 1e-15);
}

TEST(Step, EveryRuleMatchesScalarOracleOver1000RandomSteps) {
  for (auto kind : all_rules) {
    const auto rule = OptimizerRule::defaults(kind);
    const double lr = OptimizerRule::default_learning_rate(kind);
    std::vector<Tensor> w{Tensor::vector({0.3, -0.7})};
    auto state = OptimizerState::init(rule, w);
    StepStreams streams = StepStreams::from(Rng(0));
    ScalarOracle o0{kind, lr, rule.beta, rule.beta2, rule.eps}, o1 = o0;
    double r0 = 0.3, r1 = -0.7;
    Rng g(static_cast<std::uint64_t>(kind) + 1);
    for (int t = 0; t < 1000; ++t) {
      const double g0 = g.normal(), g1 = 3.0 * g.normal();
      step(rule, state, w, {Tensor::vector({g0, g1})}, plain(lr), streams);
      r0 = o0.step(r0, g0);
      r1 = o1.step(r1, g1);
      ASSERT_NEAR(w[0][0], r0, 1e-12 * std::max(1.0, std::abs(r0))) << to_string(kind) << " step " << t;
      ASSERT_NEAR(w[0][1], r1, 1e-12 * std::max(1.0, std::abs(r1))) << to_string(kind) << " step " << t;
    }
  }
}

TEST(Step, RadamUsesMomentumStepDuringWarmup) {
  const auto rule = OptimizerRule::defaults(RuleKind::radam);
  // rho_t exceeds 4 from t = 5 on with beta2 = 0.999 (rho_4 = 3.9975, rho_5 = 4.996).
  EXPECT_FALSE(optim::detail::corrections(rule, 4).rectified);
  EXPECT_TRUE(optim::detail::corrections(rule, 5).rectified);
  std::vector<Tensor> w{Tensor::vector({0.0})};
  auto state = OptimizerState::init(rule, w);
  StepStreams streams = StepStreams::from(Rng(0));
  step(rule, state, w, {Tensor::vector({2.0})}, plain(0.03), streams);
  EXPECT_NEAR(w[0][0], -0.03 * 2.0, 1e-15);  // m_hat = g on the first step
}

TEST(Step, LrdKeepAllIsBitIdenticalForEveryRuleAndVariant) {
  for (auto kind : all_rules) {
    const auto rule = OptimizerRule::defaults(kind);
    for (auto variant : {Variant::lrd, Variant::dg}) {
      std::vector<Tensor> a{Tensor::vector({-2.0, 1.0})}, b = a;
      auto sa = OptimizerState::init(rule, a), sb = sa;
      StepStreams ra = StepStreams::from(Rng(1)), rb = StepStreams::from(Rng(2));
      for (int t = 0; t < 100; ++t) {
        step(rule, sa, a, toy_grad(a), plain(toy_lr(kind)), ra);
        step(rule, sb, b, toy_grad(b), with_variant(toy_lr(kind), variant, 1.0), rb);
        ASSERT_EQ(a, b) << to_string(kind) << " " << to_string(variant) << " step " << t;
      }
      EXPECT_EQ(sa, sb);
    }
  }
}

TEST(Step, LrdKeepNoneFreezesParametersButNotState) {
  for (auto kind : all_rules) {
    const auto rule = OptimizerRule::defaults(kind);
    std::vector<Tensor> frozen{Tensor::vector({-2.0, 1.0})}, live = frozen;
    const auto initial = frozen;
    auto sf = OptimizerState::init(rule, frozen), sl = sf;
    StepStreams rf = StepStreams::from(Rng(1)), rl = StepStreams::from(Rng(1));
    for (int t = 0; t < 50; ++t) {
      const auto g = toy_grad(live);  // both runs see the same gradients
      step(rule, sl, live, g, plain(toy_lr(kind)), rl);
      step(rule, sf, frozen, g, with_variant(toy_lr(kind), Variant::lrd, 0.0), rf);
      ASSERT_EQ(frozen, initial);
      ASSERT_EQ(sf, sl) << to_string(kind) << " step " << t;
    }
  }
}

TEST(Step, MaskNeverAffectsAccumulators) {
  Rng gen(5);
  std::vector<std::vector<Tensor>> grads;
  for (int t = 0; t < 200; ++t) grads.push_back({gaussian_sample(gen, {3, 4}, 0, 1), gaussian_sample(gen, {4}, 0, 1)});
  for (auto kind : all_rules) {
    const auto rule = OptimizerRule::defaults(kind);
    std::vector<Tensor> a{Tensor({3, 4}, 0.5), Tensor({4}, -0.5)}, b = a;
    auto sa = OptimizerState::init(rule, a), sb = sa;
    StepStreams ra = StepStreams::from(Rng(1)), rb = StepStreams::from(Rng(9));
    for (const auto& g : grads) {
      step(rule, sa, a, g, plain(0.01), ra);
      step(rule, sb, b, g, with_variant(0.01, Variant::lrd, 0.3), rb);
    }
    EXPECT_EQ(sa, sb) << to_string(kind);
    EXPECT_NE(a, b);
  }
}

TEST(Step, UnmaskedTensorsAlwaysMove) {
  const auto rule = OptimizerRule::defaults(RuleKind::adam);
  Rng gen(6);
  std::vector<Tensor> masked{Tensor({3, 4}, 0.5), Tensor({4}, -0.5)}, plain_run = masked;
  auto sm = OptimizerState::init(rule, masked), sp = sm;
  StepStreams rm = StepStreams::from(Rng(1)), rp = StepStreams::from(Rng(1));
  auto cfg = with_variant(0.01, Variant::lrd, 0.0);
  cfg.unmasked = {1};
  for (int t = 0; t < 10; ++t) {
    const std::vector<Tensor> g{gaussian_sample(gen, {3, 4}, 0, 1), gaussian_sample(gen, {4}, 0, 1)};
    step(rule, sm, masked, g, cfg, rm);
    step(rule, sp, plain_run, g, plain(0.01), rp);
  }
  EXPECT_EQ(masked[0], Tensor({3, 4}, 0.5));
  EXPECT_EQ(masked[1], plain_run[1]);
  EXPECT_EQ(sm, sp);
}

TEST(Step, DroppedCoordinatesUnchanged) {
  for (auto kind : all_rules) {
    const auto rule = OptimizerRule::defaults(kind);
    std::vector<Tensor> w{Tensor({10, 10}, 1.0)};
    auto state = OptimizerState::init(rule, w);
    StepStreams streams = StepStreams::from(Rng(3));
    Rng gen(4);
    for (int t = 0; t < 20; ++t) {
      const auto before = w;
      StepTrace trace;
      step(rule, state, w, {gaussian_sample(gen, {10, 10}, 0, 1)}, with_variant(0.01, Variant::lrd, 0.5), streams,
           &trace);
      std::size_t dropped = 0;
      for (std::size_t i = 0; i < 100; ++i) {
        if (trace.mask[0][i] == 0.0) {
          ASSERT_EQ(w[0][i], before[0][i]);
          ++dropped;
        } else {
          ASSERT_EQ(trace.mask[0][i], 1.0);
          ASSERT_EQ(w[0][i], before[0][i] - 0.01 * trace.direction[0][i]);
        }
      }
      EXPECT_GT(dropped, 0u);
    }
  }
}

TEST(Step, AmsgradMaxIsMonotone) {
  const auto rule = OptimizerRule::defaults(RuleKind::amsgrad);
  std::vector<Tensor> w{Tensor({50}, 0.0)};
  auto state = OptimizerState::init(rule, w);
  StepStreams streams = StepStreams::from(Rng(3));
  Rng gen(8);
  Tensor prev = state.v_max[0];
  for (int t = 0; t < 300; ++t) {
    // Large early gradients, then small ones, so V falls below V_max.
    const double s = t < 20 ? 10.0 : 0.1;
    step(rule, state, w, {gaussian_sample(gen, {50}, 0, s)}, with_variant(0.001, Variant::lrd, 0.5), streams);
    for (std::size_t i = 0; i < 50; ++i) {
      ASSERT_GE(state.v_max[0][i], prev[i]);
      ASSERT_GE(state.v_max[0][i], state.v[0][i]);
    }
    prev = state.v_max[0];
  }
  EXPECT_LT(state.v[0][0], state.v_max[0][0]);
}

TEST(Step, DgMasksGradientBeforeAccumulation) {
  const auto rule = OptimizerRule::defaults(RuleKind::sgdm);
  std::vector<Tensor> w{Tensor({1000}, 0.0)};
  auto state = OptimizerState::init(rule, w);
  StepStreams streams = StepStreams::from(Rng(3));
  step(rule, state, w, {Tensor({1000}, 1.0)}, with_variant(0.1, Variant::dg, 0.5), streams);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    ASSERT_TRUE(state.m[0][i] == 0.0 || state.m[0][i] == 1.0);
    ASSERT_EQ(w[0][i], -0.1 * state.m[0][i]);
    kept += state.m[0][i] == 1.0;
  }
  EXPECT_GT(kept, 400u);
  EXPECT_LT(kept, 600u);
}

TEST(Step, WeightDecayIsCoupled) {
  const auto rule = OptimizerRule::defaults(RuleKind::sgdm);
  std::vector<Tensor> w{Tensor::vector({2.0})};
  auto state = OptimizerState::init(rule, w);
  StepStreams streams = StepStreams::from(Rng(0));
  LrdConfig cfg = plain(0.1);
  cfg.weight_decay = 0.5;
  step(rule, state, w, {Tensor::vector({1.0})}, cfg, streams);
  EXPECT_EQ(state.m[0][0], 1.0 + 0.5 * 2.0);
  EXPECT_EQ(w[0][0], 2.0 - 0.1 * 2.0);
}

TEST(Step, RejectsBadInputsWithoutMutating) {
  const auto rule = OptimizerRule::defaults(RuleKind::adam);
  std::vector<Tensor> w{Tensor::vector({1.0, 2.0})};
  auto state = OptimizerState::init(rule, w);
  const auto w0 = w;
  const auto s0 = state;
  StepStreams streams = StepStreams::from(Rng(0));
  try {
    step(rule, state, w, {Tensor::vector({0.5, NAN})}, plain(0.1), streams);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_EQ(e.tensor_index(), 0u);
    EXPECT_EQ(e.element_index(), 1u);
  }
  EXPECT_THROW(step(rule, state, w, {Tensor::vector({1.0})}, plain(0.1), streams), ShapeError);
  EXPECT_THROW(step(rule, state, w, {}, plain(0.1), streams), ShapeError);
  EXPECT_THROW(step(rule, state, w, {Tensor::vector({1.0, 1.0})}, with_variant(0.1, Variant::lrd, 1.5), streams),
               DomainError);
  EXPECT_THROW(step(rule, state, w, {Tensor::vector({1.0, 1.0})}, plain(-1.0), streams), DomainError);
  EXPECT_EQ(w, w0);
  EXPECT_EQ(state, s0);
}

TEST(Noise, VarianceScheduleAndFirstStep) {
  const GradientNoise n;
  EXPECT_EQ(n.variance_at(0), 0.1);
  for (std::uint64_t t = 0; t < 100; ++t) ASSERT_LT(n.variance_at(t + 1), n.variance_at(t));
  EXPECT_NEAR(n.variance_at(9), 0.1 / std::pow(10.0, 0.55), 1e-15);

  const auto rule = OptimizerRule::defaults(RuleKind::sgdm);
  std::vector<Tensor> w{Tensor({100000}, 0.0)};
  auto state = OptimizerState::init(rule, w);
  StepStreams streams = StepStreams::from(Rng(3));
  LrdConfig cfg = plain(0.1);
  cfg.noise = n;
  step(rule, state, w, {Tensor({100000}, 0.0)}, cfg, streams);
  EXPECT_NEAR(variance(state.m[0].data()), 0.1, 0.01);
}

TEST(Noise, NoiseStreamIndependentOfMaskStream) {
  const auto rule = OptimizerRule::defaults(RuleKind::adam);
  LrdConfig lrd = with_variant(0.01, Variant::lrd, 0.5);
  LrdConfig noisy = lrd;
  noisy.noise = GradientNoise{};
  std::vector<Tensor> a{Tensor({20}, 0.0)}, b = a;
  auto sa = OptimizerState::init(rule, a), sb = sa;
  StepStreams ra = StepStreams::from(Rng(1)), rb = StepStreams::from(Rng(1));
  StepTrace ta, tb;
  step(rule, sa, a, {Tensor({20}, 1.0)}, lrd, ra, &ta);
  step(rule, sb, b, {Tensor({20}, 1.0)}, noisy, rb, &tb);
  EXPECT_EQ(ta.mask, tb.mask);
}

TEST(ExpectedUpdate, HalfKeepWithinFivePercent) {
  const auto rule = OptimizerRule::defaults(RuleKind::adam);
  std::vector<Tensor> w{Tensor::vector({-2.0, 1.0})};
  auto state = OptimizerState::init(rule, w);
  StepStreams streams = StepStreams::from(Rng(0));
  for (int t = 0; t < 10; ++t) step(rule, state, w, toy_grad(w), plain(0.01), streams);
  const auto r =
      expected_update_check(rule, state, w, toy_grad(w), with_variant(0.01, Variant::lrd, 0.5), 10000, Rng(1));
  EXPECT_EQ(r.draws, 10000u);
  EXPECT_EQ(r.elements_checked, 2u);
  EXPECT_LE(r.max_relative_deviation, 0.05);
}

TEST(ExpectedUpdate, KeepAllIsExact) {
  const auto rule = OptimizerRule::defaults(RuleKind::sgdm);
  std::vector<Tensor> w{Tensor::vector({-2.0, 1.0})};
  const auto state = OptimizerState::init(rule, w);
  const auto r = expected_update_check(rule, state, w, toy_grad(w), with_variant(0.1, Variant::lrd, 1.0), 100, Rng(1));
  EXPECT_EQ(r.max_relative_deviation, 0.0);
}

TEST(ExpectedUpdate, ZeroDirectionGivesZeroUpdates) {
  const auto rule = OptimizerRule::defaults(RuleKind::adam);
  std::vector<Tensor> w{Tensor({5}, 1.0)};
  const auto state = OptimizerState::init(rule, w);
  const auto cfg = with_variant(0.1, Variant::lrd, 0.5);
  const std::vector<Tensor> zero{Tensor({5}, 0.0)};
  const auto r = expected_update_check(rule, state, w, zero, cfg, 100, Rng(1));
  EXPECT_EQ(r.elements_checked, 0u);
  auto s = state;
  auto w2 = w;
  StepStreams streams = StepStreams::from(Rng(1));
  for (int i = 0; i < 100; ++i) {
    StepTrace trace;
    step(rule, s, w2, {Tensor({5}, 0.0)}, cfg, streams, &trace);
    for (double u : trace.update[0].data()) ASSERT_EQ(u, 0.0);
  }
  EXPECT_THROW(expected_update_check(rule, state, w, zero, cfg, 10, Rng(1)), DomainError);
  EXPECT_THROW(expected_update_check(rule, state, w, zero, plain(0.1), 100, Rng(1)), DomainError);
}

TEST(Schedule, Milestones) {
  const std::vector<std::uint64_t> ms{100, 150};
  EXPECT_EQ(lr_schedule(0.1, 0, ms), 0.1);
  EXPECT_NEAR(lr_schedule(0.1, 120, ms), 0.01, 1e-17);
  EXPECT_NEAR(lr_schedule(0.1, 150, ms), 0.001, 1e-18);
  EXPECT_EQ(lr_schedule(0.1, 99, ms), 0.1);
  for (std::uint64_t e : {0u, 10u, 1000u}) EXPECT_EQ(lr_schedule(0.3, e, {}), 0.3);
}

TEST(Optimizer, ClassWrapsStepAndLearningRate) {
  const auto rule = OptimizerRule::defaults(RuleKind::sgdm);
  std::vector<Tensor> w{Tensor::vector({0.0})};
  Optimizer opt(rule, plain(0.1), w, Rng(0));
  opt.step(w, {Tensor::vector({1.0})});
  opt.set_learning_rate(0.01);
  opt.step(w, {Tensor::vector({1.0})});
  EXPECT_NEAR(w[0][0], -(0.1 + 0.01 * 1.9), 1e-15);
  EXPECT_EQ(opt.state().t, 2u);
  EXPECT_THROW(opt.set_learning_rate(0.0), DomainError);
}

TEST(Optimizer, StateCheckpointRoundTripAndResume) {
  for (auto kind : all_rules) {
    const auto rule = OptimizerRule::defaults(kind);
    std::vector<Tensor> w{Tensor({2, 3}, 0.1), Tensor({3}, 0.2)};
    auto state = OptimizerState::init(rule, w);
    StepStreams streams = StepStreams::from(Rng(0));
    Rng gen(1);
    for (int t = 0; t < 7; ++t)
      step(rule, state, w, {gaussian_sample(gen, {2, 3}, 0, 1), gaussian_sample(gen, {3}, 0, 1)}, plain(0.01),
           streams);
    const auto dir = std::filesystem::temp_directory_path() / "lrd_test_optstate";
    save_state(dir / "s.ckpt", rule, state);
    const auto [rule2, state2] = load_state(dir / "s.ckpt");
    EXPECT_EQ(rule2.kind, rule.kind);
    EXPECT_EQ(rule2.beta2, rule.beta2);
    EXPECT_EQ(state2, state);
    EXPECT_EQ(state2.t, 7u);
  }
  Container junk;
  junk.kind = PayloadKind::mlp;
  EXPECT_THROW(from_container(junk), FormatError);
}
