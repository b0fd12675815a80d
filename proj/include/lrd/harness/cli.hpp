#pragma once

// Command-line front end. Exit codes: 0 success, 1 runtime failure (missing
// data, I/O, failed verification), 2 usage error or invalid spec.

#include <exception>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lrd/harness/gradcheck.hpp"
#include "lrd/harness/runner.hpp"
#include "lrd/harness/spec.hpp"

namespace lrd::harness {

inline constexpr int exit_ok = 0;
inline constexpr int exit_failure = 1;
inline constexpr int exit_usage = 2;

inline constexpr double gradcheck_tolerance = 1e-6;

struct VerifyReport {
  testfn::GridReport grid;
  GradCheckReport toy;
  GradCheckReport mlp_eval;
  GradCheckReport mlp_train;

  bool grid_ok() const {
    return grid.distance_to_reference <= testfn::ToyProblem::success_radius && !grid.on_boundary();
  }
  bool passed() const {
    return grid_ok() && toy.max_relative_error < gradcheck_tolerance &&
           mlp_eval.max_relative_error < gradcheck_tolerance && mlp_train.max_relative_error < gradcheck_tolerance;
  }
};

inline VerifyReport verify(std::size_t grid_n = 2000, std::size_t toy_points = 1000, std::uint64_t seed = 0) {
  VerifyReport r;
  r.grid = testfn::verify_reference_optimum(grid_n);
  r.toy = toy_gradient_check(toy_points, seed);
  r.mlp_eval = mlp_gradient_check({6, 5, 4, 3}, 4, seed, nn::Mode::eval);
  r.mlp_train = mlp_gradient_check({6, 5, 4, 3}, 4, seed, nn::Mode::train, 0.7);
  return r;
}

namespace detail {

inline void print_records(std::ostream& out, const std::vector<RunRecord>& records) {
  for (const auto& r : records)
    out << r.arm << (r.param_value.empty() ? "" : " " + r.param_value) << " seed " << r.seed
        << ": final test accuracy " << format_number(r.final_test_acc()) << '\n';
}

}  // namespace detail

inline int cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learning-rate dropout experiments", "lrd"};
  app.require_subcommand(1);

  std::string spec_path, output, param, report_dir;
  std::optional<unsigned> jobs;
  std::vector<double> values;
  bool checkpoints = false;
  std::size_t grid_n = 2000, toy_points = 1000;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("spec", spec_path, "experiment spec (JSON)")->required();
    sub->add_option("-o,--output", output, "override output_dir");
    sub->add_option("-j,--jobs", jobs, "override jobs")->check(CLI::PositiveNumber);
  };
  auto* run = app.add_subcommand("run", "train every arm of a spec over every seed");
  add_common(run);
  run->add_flag("--checkpoints", checkpoints, "also write final model and optimizer checkpoints");
  auto* sweep = app.add_subcommand("sweep", "sweep LRD keep probability (p) or dropout retention (p_sd)");
  add_common(sweep);
  sweep->add_option("--param", param, "p or p_sd")->required();
  sweep->add_option("--values", values, "values in (0,1]")->required();
  sweep->add_flag("--checkpoints", checkpoints, "also write final model and optimizer checkpoints");
  auto* toy = app.add_subcommand("toy", "optimize the 2-D toy objective");
  add_common(toy);
  auto* ver = app.add_subcommand("verify", "grid check of the toy optimum and gradient checks");
  ver->add_option("--grid", grid_n, "grid points per axis")->check(CLI::Range(2, 100000));
  ver->add_option("--points", toy_points, "toy gradient-check points")->check(CLI::PositiveNumber);
  auto* rep = app.add_subcommand("report", "aggregate per-run CSVs into report.csv");
  rep->add_option("dir", report_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    const auto load = [&] {
      auto spec = load_spec(spec_path);
      if (!output.empty()) spec.output_dir = output;
      if (jobs) spec.jobs = *jobs;
      validate(spec);
      return spec;
    };
    if (*run || *sweep || *toy) {
      const auto spec = load();
      const RunOptions opts{true, checkpoints};
      if (*toy || (*run && spec.problem == Problem::toy)) {
        if (spec.problem != Problem::toy) throw ValidationError("problem", "the toy command needs problem \"toy\"");
        const auto result = run_toy(spec, opts);
        for (const auto& r : result.reach)
          out << r.arm << ": reached " << r.reached << "/" << r.runs << " (" << format_number(r.fraction()) << ")\n";
      } else if (*run) {
        detail::print_records(out, run_classification(spec, opts));
      } else {
        const auto p = parse_sweep_param(param);
        const auto result = run_sweep(spec, p, values, opts);
        detail::print_records(out, result.records);
        out << result.stats_csv(p);
      }
      out << "wrote " << spec.output_dir << '\n';
      return exit_ok;
    }
    if (*ver) {
      const auto r = verify(grid_n, toy_points);
      out << "grid argmin (" << format_number(r.grid.argmin.x) << ", " << format_number(r.grid.argmin.y)
          << ") f=" << format_number(r.grid.value) << " distance to reference "
          << format_number(r.grid.distance_to_reference) << (r.grid_ok() ? " ok" : " FAIL") << '\n';
      const auto line = [&](const char* name, const GradCheckReport& g) {
        out << name << ": max relative error " << format_number(g.max_relative_error) << " over " << g.evaluations
            << " entries" << (g.max_relative_error < gradcheck_tolerance ? " ok" : " FAIL") << '\n';
      };
      line("toy gradient", r.toy);
      line("mlp gradient (eval)", r.mlp_eval);
      line("mlp gradient (train, fixed masks)", r.mlp_train);
      return r.passed() ? exit_ok : exit_failure;
    }
    const auto rows = report_directory(report_dir);
    out << "arm,runs,mean_final_test_acc,std_final_test_acc\n";
    for (const auto& r : rows)
      out << r.arm << ',' << r.final_test_acc.count << ',' << format_number(r.final_test_acc.mean) << ','
          << format_number(r.final_test_acc.stddev) << '\n';
    return exit_ok;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_failure;
  }
}

}  // namespace lrd::harness
