#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lrd/core/error.hpp"
#include "lrd/core/io.hpp"
#include "lrd/core/rng.hpp"
#include "lrd/core/stats.hpp"
#include "lrd/data/dataset.hpp"
#include "lrd/data/idx.hpp"
#include "lrd/harness/spec.hpp"
#include "lrd/nn/mlp.hpp"
#include "lrd/optim/optimizer.hpp"
#include "lrd/testfn/toy.hpp"

namespace lrd::harness {

namespace fs = std::filesystem;

/// Child-stream indices of a run's root generator Rng(seed). Streams depend
/// only on the seed, never on the arm, so every arm of a study starts from
/// the same weights and sees the same batch order.
enum Stream : std::uint64_t { init = 1, optimizer = 2, dropout = 3, shuffle = 4, labels = 5, toy = 6 };

/// One configuration of a study: optimizer variant plus optional
/// regularizers. Labels follow "<Rule>[_LRD|_DG][_SD][_NL][_NG]".
struct Arm {
  std::string label;
  optim::Variant variant = optim::Variant::none;
  double keep_prob = 1.0;
  bool standard_dropout = false;
  double sd_keep_prob = 1.0;
  bool noisy_label = false;
  double nl_prob = 0.0;
  bool noisy_gradient = false;
  optim::GradientNoise noise;
  std::string param_value;  // filled by sweeps
};

/// Parses an arm token: "baseline", or "LRD", "DG", "SD", "NL", "NG" joined
/// by '_' or '+'.
inline Arm make_arm(std::string_view token, const ExperimentSpec& spec) {
  Arm arm;
  std::string label(optim::display_name(spec.rule.kind));
  if (token != "baseline") {
    std::string part;
    std::vector<std::string> parts;
    for (char c : std::string(token) + "_") {
      if (c == '_' || c == '+') {
        if (part.empty()) throw ValidationError("arms", "empty component in arm '" + std::string(token) + "'");
        parts.push_back(part);
        part.clear();
      } else {
        part.push_back(c);
      }
    }
    for (const auto& p : parts) {
      if (p == "LRD" || p == "DG") {
        if (arm.variant != optim::Variant::none)
          throw ValidationError("arms", "arm '" + std::string(token) + "' combines LRD and DG");
        arm.variant = p == "LRD" ? optim::Variant::lrd : optim::Variant::dg;
        arm.keep_prob = spec.keep_prob;
      } else if (p == "SD") {
        arm.standard_dropout = true;
        arm.sd_keep_prob = spec.regularizers.sd_keep_prob;
      } else if (p == "NL") {
        arm.noisy_label = true;
        arm.nl_prob = spec.regularizers.nl_prob;
      } else if (p == "NG") {
        arm.noisy_gradient = true;
        arm.noise = {spec.regularizers.ng_variance, spec.regularizers.ng_gamma};
      } else {
        throw ValidationError("arms", "unknown component '" + p + "' in arm '" + std::string(token) +
                                          "' (expected baseline or LRD|DG|SD|NL|NG)");
      }
    }
    // Canonical order regardless of how the token was written.
    if (arm.variant == optim::Variant::lrd) label += "_LRD";
    if (arm.variant == optim::Variant::dg) label += "_DG";
    if (arm.standard_dropout) label += "_SD";
    if (arm.noisy_label) label += "_NL";
    if (arm.noisy_gradient) label += "_NG";
  }
  arm.label = std::move(label);
  return arm;
}

inline std::vector<Arm> make_arms(const ExperimentSpec& spec) {
  std::vector<Arm> arms;
  for (const auto& t : spec.arms) {
    auto arm = make_arm(t, spec);
    for (const auto& other : arms)
      if (other.label == arm.label) throw ValidationError("arms", "duplicate arm " + arm.label);
    arms.push_back(std::move(arm));
  }
  return arms;
}

inline optim::LrdConfig lrd_config(const ExperimentSpec& spec, const Arm& arm) {
  optim::LrdConfig cfg;
  cfg.learning_rate = spec.learning_rate;
  cfg.keep_prob = arm.variant == optim::Variant::none ? 1.0 : arm.keep_prob;
  cfg.variant = arm.variant;
  cfg.weight_decay = spec.weight_decay;
  if (arm.noisy_gradient) cfg.noise = arm.noise;
  return cfg;
}

// ---------------------------------------------------------------------------
// Classification

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

inline constexpr const char* classification_header = "epoch,train_loss,train_acc,test_acc";
inline constexpr const char* summary_header = "arm,param_value,seed,final_test_acc";

struct RunRecord {
  std::string arm;
  std::string param_value;
  std::uint64_t seed = 0;
  std::vector<EpochRow> rows;
  std::size_t corrupted_labels = 0;
  double wall_seconds = 0.0;

  double final_test_acc() const { return rows.back().test_acc; }

  std::string csv() const {
    std::ostringstream ss;
    ss << classification_header << '\n';
    for (const auto& r : rows)
      ss << r.epoch << ',' << format_number(r.train_loss) << ',' << format_number(r.train_acc) << ','
         << format_number(r.test_acc) << '\n';
    return ss.str();
  }
};

struct ProblemData {
  data::Dataset train;
  data::Dataset test;
};

inline ProblemData load_problem_data(const ExperimentSpec& spec) {
  ProblemData pd;
  if (spec.problem == Problem::synth) {
    const auto& s = spec.synth;
    pd.train = data::synth_blobs(s.classes, s.per_class, s.dims, s.spread, s.seed);
    pd.test = data::synth_blobs(s.classes, s.test_per_class, s.dims, s.spread, mix64(s.seed));
  } else if (spec.problem == Problem::mnist) {
    const auto root = spec.mnist.resolved_root();
    const auto paths = data::MnistPaths::under(root);
    if (const auto missing = paths.missing(); !missing.empty()) {
      std::string msg = "MNIST files not found under " + root.string() + " (set mnist.root in the spec or $" +
                        data_dir_env + "); missing:";
      for (const auto& m : missing) msg += "\n  " + m.string();
      throw Error(msg);
    }
    data::IdxOptions opt;
    opt.standardize = spec.mnist.standardize;
    opt.max_samples = spec.mnist.train_subset;
    pd.train = data::load_idx(paths.train_images, paths.train_labels, opt);
    opt.max_samples = spec.mnist.test_subset;
    pd.test = data::load_idx(paths.test_images, paths.test_labels, opt);
  } else {
    throw ValidationError("problem", "classification runs need problem mnist or synth");
  }
  pd.train.validate();
  pd.test.validate();
  return pd;
}

struct TrainedRun {
  RunRecord record;
  nn::Mlp model;
  optim::OptimizerState state;
};

/// Trains one (arm, seed) pair. Row 0 evaluates the untrained model (eval
/// mode, whole training set); row e >= 1 reports the running mean of the
/// epoch's mini-batch loss and accuracy (train mode, before each update)
/// and the eval-mode test accuracy after the epoch.
inline TrainedRun train_classifier(const ExperimentSpec& spec, const Arm& arm, std::uint64_t seed,
                                   const ProblemData& pd) {
  const auto t0 = std::chrono::steady_clock::now();
  const Rng root(seed);
  Rng init_rng = root.child(Stream::init);
  Rng dropout_rng = root.child(Stream::dropout);
  const std::uint64_t shuffle_seed = root.child(Stream::shuffle).key();

  const data::Dataset* train = &pd.train;
  data::Dataset noisy;
  TrainedRun out;
  if (arm.noisy_label) {
    const auto view = data::corrupt_labels(pd.train, arm.nl_prob, root.child(Stream::labels).key());
    noisy = view.apply(pd.train);
    train = &noisy;
    out.record.corrupted_labels = view.corrupted_count();
  }

  const auto sizes = spec.model.layer_sizes(train->dims(), static_cast<std::size_t>(train->num_classes));
  out.model = nn::Mlp::he_uniform(sizes, init_rng, arm.standard_dropout ? arm.sd_keep_prob : 1.0);
  auto cfg = lrd_config(spec, arm);
  if (!spec.mask_biases)
    for (std::size_t k = 1; k < out.model.parameters().size(); k += 2) cfg.unmasked.push_back(k);
  optim::Optimizer opt(spec.rule, cfg, out.model.parameters(), root.child(Stream::optimizer));

  out.record.arm = arm.label;
  out.record.param_value = arm.param_value;
  out.record.seed = seed;
  const auto initial_train = nn::evaluate(out.model, *train);
  out.record.rows.push_back({0, initial_train.loss, initial_train.accuracy, nn::accuracy(out.model, pd.test)});

  for (std::size_t epoch = 1; epoch <= spec.epochs; ++epoch) {
    opt.set_learning_rate(optim::lr_schedule(spec.learning_rate, epoch - 1, spec.lr_milestones, spec.lr_factor));
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (const auto& idx : data::batches(*train, spec.batch_size, shuffle_seed, epoch - 1)) {
      const auto batch = data::gather(*train, idx);
      const auto fwd = nn::forward(out.model, batch.inputs, nn::Mode::train, dropout_rng);
      auto lg = nn::backward(out.model, fwd, batch.labels);
      loss_sum += lg.loss * static_cast<double>(batch.size());
      const auto pred = nn::predict(fwd.logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
      seen += batch.size();
      opt.step(out.model.parameters(), std::move(lg.grads));
    }
    out.record.rows.push_back({epoch, loss_sum / static_cast<double>(seen),
                               static_cast<double>(correct) / static_cast<double>(seen),
                               nn::accuracy(out.model, pd.test)});
  }
  out.state = opt.state();
  out.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// Runs `tasks` on up to `jobs` threads; rethrows the first failure.
inline void run_parallel(std::size_t count, unsigned jobs, const std::function<void(std::size_t)>& task) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> workers;
    for (unsigned w = 0; w < std::min<std::size_t>(jobs, count); ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            task(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

inline std::string summary_csv(const std::vector<RunRecord>& records) {
  std::ostringstream ss;
  ss << summary_header << '\n';
  for (const auto& r : records)
    ss << r.arm << ',' << r.param_value << ',' << r.seed << ',' << format_number(r.final_test_acc()) << '\n';
  return ss.str();
}

inline std::string timing_json(const std::vector<RunRecord>& records) {
  json j = json::array();
  for (const auto& r : records)
    j.push_back({{"arm", r.arm}, {"param_value", r.param_value}, {"seed", r.seed}, {"wall_seconds", r.wall_seconds}});
  return j.dump(2) + "\n";
}

struct RunOptions {
  bool write = true;
  bool checkpoints = false;
};

/// Trains every (arm, seed) pair; arm-major, seed-minor order. With
/// `subdir` empty each arm writes to <output>/<arm label>/seed<k>.csv.
inline std::vector<RunRecord> run_arm_set(const ExperimentSpec& spec, const std::vector<Arm>& arms,
                                          const ProblemData& pd, const std::vector<std::string>& subdirs,
                                          const RunOptions& opts) {
  const std::size_t n = arms.size() * spec.seeds.size();
  std::vector<RunRecord> records(n);
  run_parallel(n, spec.jobs, [&](std::size_t i) {
    const auto& arm = arms[i / spec.seeds.size()];
    const auto seed = spec.seeds[i % spec.seeds.size()];
    auto run = train_classifier(spec, arm, seed, pd);
    if (opts.write) {
      const fs::path dir = fs::path(spec.output_dir) / subdirs[i / spec.seeds.size()];
      const std::string stem = "seed" + std::to_string(seed);
      write_file_atomic(dir / (stem + ".csv"), run.record.csv());
      if (opts.checkpoints) {
        nn::save_checkpoint(dir / (stem + ".model.ckpt"), run.model);
        optim::save_state(dir / (stem + ".optim.ckpt"), spec.rule, run.state);
      }
    }
    records[i] = std::move(run.record);
  });
  return records;
}

inline void write_spec_echo(const ExperimentSpec& spec) {
  write_file_atomic(fs::path(spec.output_dir) / "spec.json", to_json(spec).dump(2) + "\n");
}

/// All arms of the spec over all seeds. Writes per-run CSVs, summary.csv,
/// spec.json and timing.json (the only non-deterministic file).
inline std::vector<RunRecord> run_classification(const ExperimentSpec& spec, const RunOptions& opts = {}) {
  validate(spec);
  if (spec.problem == Problem::toy) throw ValidationError("problem", "use run_toy for the toy problem");
  const auto arms = make_arms(spec);
  const auto pd = load_problem_data(spec);
  std::vector<std::string> subdirs;
  for (const auto& a : arms) subdirs.push_back(a.label);
  auto records = run_arm_set(spec, arms, pd, subdirs, opts);
  if (opts.write) {
    write_spec_echo(spec);
    write_file_atomic(fs::path(spec.output_dir) / "summary.csv", summary_csv(records));
    write_file_atomic(fs::path(spec.output_dir) / "timing.json", timing_json(records));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepParam { p, p_sd };

inline SweepParam parse_sweep_param(std::string_view s) {
  if (s == "p") return SweepParam::p;
  if (s == "p_sd") return SweepParam::p_sd;
  throw ValidationError("--param", "expected p or p_sd, got '" + std::string(s) + "'");
}

inline std::string_view to_string(SweepParam p) { return p == SweepParam::p ? "p" : "p_sd"; }

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct SweepRow {
  std::string param_value;
  Summary final_test_acc;
};

struct SweepResult {
  std::vector<RunRecord> records;  // value-major, seed-minor
  std::vector<SweepRow> rows;      // one per value

  std::string stats_csv(SweepParam param) const {
    std::ostringstream ss;
    ss << "param,param_value,runs,mean_final_test_acc,std_final_test_acc\n";
    for (const auto& r : rows)
      ss << to_string(param) << ',' << r.param_value << ',' << r.final_test_acc.count << ','
         << format_number(r.final_test_acc.mean) << ',' << format_number(r.final_test_acc.stddev) << '\n';
    return ss.str();
  }
};

/// One arm per value: LRD with keep probability p, or standard dropout with
/// retention p_sd. Value 1 therefore reproduces the plain optimizer.
inline SweepResult run_sweep(const ExperimentSpec& spec, SweepParam param, const std::vector<double>& values,
                             const RunOptions& opts = {}) {
  validate(spec);
  if (spec.problem == Problem::toy) throw ValidationError("problem", "sweeps need problem mnist or synth");
  if (values.empty()) throw ValidationError("--values", "at least one value required");
  for (double v : values)
    if (!(v > 0.0 && v <= 1.0)) throw ValidationError("--values", "value " + format_value(v) + " outside (0,1]");

  std::vector<Arm> arms;
  std::vector<std::string> subdirs;
  for (double v : values) {
    ExperimentSpec s = spec;
    Arm arm;
    if (param == SweepParam::p) {
      s.keep_prob = v;
      arm = make_arm("LRD", s);
    } else {
      s.regularizers.sd_keep_prob = v;
      arm = make_arm("SD", s);
    }
    arm.param_value = format_value(v);
    subdirs.push_back(std::string(to_string(param)) + "=" + arm.param_value);
    for (const auto& d : subdirs)
      if (&d != &subdirs.back() && d == subdirs.back()) throw ValidationError("--values", "duplicate value");
    arms.push_back(std::move(arm));
  }
  const auto pd = load_problem_data(spec);
  SweepResult result;
  result.records = run_arm_set(spec, arms, pd, subdirs, opts);
  for (std::size_t v = 0; v < values.size(); ++v) {
    std::vector<double> finals;
    for (std::size_t s = 0; s < spec.seeds.size(); ++s)
      finals.push_back(result.records[v * spec.seeds.size() + s].final_test_acc());
    result.rows.push_back({arms[v].param_value, summarize(finals)});
  }
  if (opts.write) {
    write_spec_echo(spec);
    write_file_atomic(fs::path(spec.output_dir) / "summary.csv", summary_csv(result.records));
    write_file_atomic(fs::path(spec.output_dir) / "summary_stats.csv", result.stats_csv(param));
    write_file_atomic(fs::path(spec.output_dir) / "timing.json", timing_json(result.records));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Toy problem

struct ToyRun {
  std::string arm;
  std::uint64_t seed = 0;
  std::size_t init_index = 0;
  testfn::Point start;
  testfn::Point end;
  double final_value = 0.0;
  bool reached = false;
  bool diverged = false;
  testfn::Trajectory trajectory;
};

/// Optimizes the toy objective from `start` for `steps` steps. Step 0 and
/// every `record_every`-th step are recorded, plus the final step.
inline ToyRun run_toy_single(const optim::OptimizerRule& rule, const optim::LrdConfig& cfg, testfn::Point start,
                             std::size_t steps, const Rng& rng, std::size_t record_every = 1,
                             double radius = testfn::ToyProblem::success_radius) {
  ToyRun run;
  run.start = start;
  std::vector<Tensor> params{Tensor::vector({start.x, start.y})};
  optim::Optimizer opt(rule, cfg, params, rng);
  run.trajectory.record(0, start);
  testfn::Point current = start;
  for (std::size_t t = 1; t <= steps; ++t) {
    const auto g = testfn::toy_gradient(current);
    try {
      opt.step(params, {Tensor::vector({g.dx, g.dy})});
    } catch (const NonFiniteError&) {
      run.diverged = true;
      break;
    }
    current = {params[0][0], params[0][1]};
    if (!std::isfinite(current.x) || !std::isfinite(current.y)) {
      run.diverged = true;
      break;
    }
    if (t % record_every == 0 || t == steps) run.trajectory.record(t, current);
  }
  run.end = current;
  run.final_value = testfn::toy_value(current);
  run.reached = !run.diverged && testfn::ToyProblem::reached(current, radius);
  return run;
}

struct ArmReach {
  std::string arm;
  std::size_t runs = 0;
  std::size_t reached = 0;
  double fraction() const { return runs ? static_cast<double>(reached) / static_cast<double>(runs) : 0.0; }
};

struct ToyResult {
  std::vector<ToyRun> runs;  // arm-major, then seed, then initial point
  std::vector<ArmReach> reach;

  std::string summary_csv() const {
    std::ostringstream ss;
    ss << "arm,seed,init,x0,y0,x,y,f,reached\n";
    for (const auto& r : runs)
      ss << r.arm << ',' << r.seed << ',' << r.init_index << ',' << format_number(r.start.x) << ','
         << format_number(r.start.y) << ',' << format_number(r.end.x) << ',' << format_number(r.end.y) << ','
         << format_number(r.final_value) << ',' << (r.reached ? 1 : 0) << '\n';
    return ss.str();
  }

  std::string reach_csv() const {
    std::ostringstream ss;
    ss << "arm,runs,reached,fraction\n";
    for (const auto& r : reach)
      ss << r.arm << ',' << r.runs << ',' << r.reached << ',' << format_number(r.fraction()) << '\n';
    return ss.str();
  }
};

/// Every arm from every initial point under every seed. The random stream of
/// a run depends on (seed, initial point) only.
inline ToyResult run_toy(const ExperimentSpec& spec, const RunOptions& opts = {}) {
  validate(spec);
  if (spec.problem != Problem::toy) throw ValidationError("problem", "toy runs need problem toy");
  const auto arms = make_arms(spec);
  for (const auto& a : arms)
    if (a.standard_dropout || a.noisy_label)
      throw ValidationError("arms", "arm " + a.label + " uses SD or NL, which need a network");
  const auto inits = spec.toy.initial_points();
  const std::size_t per_arm = spec.seeds.size() * inits.size();
  ToyResult result;
  result.runs.resize(arms.size() * per_arm);
  run_parallel(result.runs.size(), spec.jobs, [&](std::size_t i) {
    const auto& arm = arms[i / per_arm];
    const auto seed = spec.seeds[(i % per_arm) / inits.size()];
    const auto init = (i % per_arm) % inits.size();
    const Rng rng = Rng(seed).child(Stream::toy).child(init);
    auto run = run_toy_single(spec.rule, lrd_config(spec, arm), inits[init], spec.steps, rng, spec.toy.record_every,
                              spec.toy.radius);
    run.arm = arm.label;
    run.seed = seed;
    run.init_index = init;
    if (opts.write && spec.toy.write_trajectories) {
      write_file_atomic(fs::path(spec.output_dir) / arm.label /
                            ("seed" + std::to_string(seed) + "_init" + std::to_string(init) + ".csv"),
                        run.trajectory.to_csv());
    }
    result.runs[i] = std::move(run);
  });
  for (std::size_t a = 0; a < arms.size(); ++a) {
    ArmReach r{arms[a].label, per_arm, 0};
    for (std::size_t k = 0; k < per_arm; ++k) r.reached += result.runs[a * per_arm + k].reached;
    result.reach.push_back(r);
  }
  if (opts.write) {
    write_spec_echo(spec);
    write_file_atomic(fs::path(spec.output_dir) / "toy_summary.csv", result.summary_csv());
    write_file_atomic(fs::path(spec.output_dir) / "toy_reach.csv", result.reach_csv());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string arm;
  Summary final_test_acc;
};

/// Aggregates every classification CSV below `dir` (files whose header is
/// the classification schema). The arm is the CSV's parent directory
/// relative to `dir`. Writes <dir>/report.csv.
inline std::vector<ReportRow> report_directory(const fs::path& dir, bool write = true) {
  if (!fs::is_directory(dir)) throw Error("report: not a directory: " + dir.string());
  std::map<std::string, std::vector<double>> finals;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::istringstream in(read_file(path));
    std::string line, last;
    if (!std::getline(in, line) || line != classification_header) continue;
    while (std::getline(in, line))
      if (!line.empty()) last = line;
    if (last.empty()) throw Error("report: " + path.string() + " has no data rows");
    const auto comma = last.rfind(',');
    double acc = 0.0;
    try {
      acc = std::stod(last.substr(comma + 1));
    } catch (const std::exception&) {
      throw Error("report: malformed row in " + path.string() + ": " + last);
    }
    auto arm = fs::relative(path.parent_path(), dir).generic_string();
    if (arm == ".") arm = path.stem().string();
    finals[arm].push_back(acc);
  }
  if (finals.empty()) throw Error("report: no classification CSVs found under " + dir.string());
  std::vector<ReportRow> rows;
  for (const auto& [arm, values] : finals) rows.push_back({arm, summarize(values)});
  if (write) {
    std::ostringstream ss;
    ss << "arm,runs,mean_final_test_acc,std_final_test_acc,min_final_test_acc,max_final_test_acc\n";
    for (const auto& r : rows)
      ss << r.arm << ',' << r.final_test_acc.count << ',' << format_number(r.final_test_acc.mean) << ','
         << format_number(r.final_test_acc.stddev) << ',' << format_number(r.final_test_acc.min) << ','
         << format_number(r.final_test_acc.max) << '\n';
    write_file_atomic(dir / "report.csv", ss.str());
  }
  return rows;
}

}  // namespace lrd::harness
