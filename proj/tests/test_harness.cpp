#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "lrd/harness/cli.hpp"
#include "lrd/harness/runner.hpp"
#include "lrd/harness/spec.hpp"

namespace fs = std::filesystem;
using namespace lrd;
using namespace lrd::harness;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("lrd_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentSpec synth_spec(const fs::path& out) {
  auto s = parse_spec_text(R"({"version": 1, "problem": "synth", "epochs": 3, "batch_size": 32,
                               "optimizer": {"rule": "adam", "learning_rate": 0.01},
                               "synth": {"per_class": 40, "test_per_class": 40}})");
  s.output_dir = out.string();
  return s;
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "lrd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

}  // namespace

// --- Spec ----------------------------------------------------------------

TEST(Spec, MinimalDefaults) {
  const auto s = parse_spec_text(R"({"version": 1, "problem": "mnist"})");
  EXPECT_EQ(s.rule.kind, optim::RuleKind::adam);
  EXPECT_EQ(s.learning_rate, 0.001);
  EXPECT_EQ(s.keep_prob, 0.5);
  EXPECT_EQ(s.model.layer_sizes(784, 10), (std::vector<std::size_t>{784, 256, 256, 10}));
  const auto toy = parse_spec_text(R"({"version": 1, "problem": "toy"})");
  EXPECT_EQ(toy.learning_rate, 0.01);
  EXPECT_EQ(toy.steps, 3000u);
  EXPECT_EQ(toy.toy.initial_points().size(), 16u);
}

TEST(Spec, RuleSelectsPublishedLearningRate) {
  EXPECT_EQ(parse_spec_text(R"({"version":1,"problem":"synth","optimizer":{"rule":"sgdm"}})").learning_rate, 0.1);
  EXPECT_EQ(parse_spec_text(R"({"version":1,"problem":"synth","optimizer":{"rule":"radam"}})").learning_rate, 0.03);
  EXPECT_EQ(parse_spec_text(R"({"version":1,"problem":"synth","optimizer":{"rule":"radam","learning_rate":0.5}})")
                .learning_rate,
            0.5);
}

TEST(Spec, RoundTripsThroughJson) {
  const auto s = parse_spec_text(R"({"version": 1, "problem": "toy", "seeds": [3, 4],
      "toy": {"inits": [[-1, 2], [-3, 0]], "record_every": 5}, "lr_milestones": [10]})");
  const auto j = to_json(s);
  EXPECT_EQ(to_json(parse_spec(j)), j);
  const auto m = parse_spec_text(R"({"version": 1, "problem": "mnist", "model": {"preset": "mnist-paper"}})");
  EXPECT_EQ(to_json(parse_spec(to_json(m))), to_json(m));
}

TEST(Spec, ValidationNamesTheField) {
  const auto field_of = [](const char* text) {
    try {
      parse_spec_text(text);
    } catch (const ValidationError& e) {
      return e.field();
    }
    return std::string("(none)");
  };
  EXPECT_EQ(field_of(R"({"problem": "toy"})"), "version");
  EXPECT_EQ(field_of(R"({"version": 2, "problem": "toy"})"), "version");
  EXPECT_EQ(field_of(R"({"version": 1})"), "problem");
  EXPECT_EQ(field_of(R"({"version": 1, "problem": "cifar"})"), "problem");
  EXPECT_EQ(field_of(R"({"version": 1, "problem": "toy", "bogus": 1})"), "bogus");
  EXPECT_EQ(field_of(R"({"version": 1, "problem": "toy", "lrd": {"keep_prob": 2}})"), "lrd.keep_prob");
  EXPECT_EQ(field_of(R"({"version": 1, "problem": "toy", "seeds": []})"), "seeds");
  EXPECT_EQ(field_of(R"({"version": 1, "problem": "toy", "seeds": [1, 1]})"), "seeds");
  EXPECT_EQ(field_of(R"({"version": 1, "problem": "toy", "epochs": "ten"})"), "epochs");
  EXPECT_EQ(field_of(R"({"version": 1, "problem": "toy", "epochs": -1})"), "epochs");
  EXPECT_EQ(field_of(R"({"version": 1, "problem": "toy", "epochs": 2.5})"), "epochs");
  EXPECT_EQ(field_of(R"({"version": 1, "problem": "toy", "seeds": [0, -3]})"), "seeds");
  EXPECT_EQ(field_of(R"({"version": 1, "problem": "toy", "optimizer": {"rule": "adagrad"}})"), "optimizer.rule");
  EXPECT_EQ(field_of(R"({"version": 1, "problem": "synth", "regularizers": {"sd_keep_prob": 0}})"),
            "regularizers.sd_keep_prob");
  EXPECT_EQ(field_of("{not json"), "(file)");
  EXPECT_THROW(load_spec("/nonexistent/spec.json"), ValidationError);
}

TEST(Spec, MaskBiasesSwitch) {
  EXPECT_TRUE(parse_spec_text(R"({"version": 1, "problem": "synth"})").mask_biases);
  const auto s = parse_spec_text(R"({"version": 1, "problem": "synth", "lrd": {"mask_biases": false}})");
  EXPECT_FALSE(s.mask_biases);
  EXPECT_FALSE(parse_spec(to_json(s)).mask_biases);
}

TEST(Arms, ParsingAndLabels) {
  const auto s = parse_spec_text(R"({"version": 1, "problem": "synth"})");
  EXPECT_EQ(make_arm("baseline", s).label, "Adam");
  EXPECT_EQ(make_arm("LRD", s).label, "Adam_LRD");
  const auto combo = make_arm("SD+LRD", s);
  EXPECT_EQ(combo.label, "Adam_LRD_SD");
  EXPECT_EQ(combo.variant, optim::Variant::lrd);
  EXPECT_EQ(combo.sd_keep_prob, 0.9);
  EXPECT_EQ(make_arm("NL", s).nl_prob, 0.05);
  EXPECT_EQ(make_arm("NG", s).noise.variance0, 0.1);
  EXPECT_THROW(make_arm("LRD_DG", s), ValidationError);
  EXPECT_THROW(make_arm("XYZ", s), ValidationError);
  EXPECT_THROW(make_arm("LRD__SD", s), ValidationError);
  auto dup = s;
  dup.arms = {"LRD_SD", "SD_LRD"};
  EXPECT_THROW(make_arms(dup), ValidationError);
}

// --- Classification ------------------------------------------------------

TEST(Classification, RowCountsAndSchema) {
  const auto dir = scratch_dir("cls");
  auto s = synth_spec(dir);
  s.seeds = {0, 1};
  const auto records = run_classification(s);
  ASSERT_EQ(records.size(), 4u);
  for (const auto& r : records) {
    ASSERT_EQ(r.rows.size(), 4u);
    for (std::size_t e = 0; e < r.rows.size(); ++e) EXPECT_EQ(r.rows[e].epoch, e);
  }
  const auto csv = read_file(dir / "Adam_LRD" / "seed1.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,train_acc,test_acc");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const auto summary = read_file(dir / "summary.csv");
  EXPECT_EQ(summary.substr(0, summary.find('\n')), "arm,param_value,seed,final_test_acc");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 5);
  EXPECT_TRUE(fs::exists(dir / "spec.json"));
  EXPECT_TRUE(fs::exists(dir / "timing.json"));
  EXPECT_EQ(to_json(load_spec(dir / "spec.json")), to_json(s));
}

TEST(Classification, ZeroEpochsGivesOnlyEvaluationRow) {
  auto s = synth_spec(scratch_dir("cls0"));
  s.epochs = 0;
  const auto records = run_classification(s, {false, false});
  for (const auto& r : records) {
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(r.rows[0].epoch, 0u);
  }
  // Both arms start from the same weights.
  EXPECT_EQ(records[0].rows[0].test_acc, records[1].rows[0].test_acc);
}

TEST(Classification, IdenticalSpecGivesIdenticalFiles) {
  const auto a = scratch_dir("det_a"), b = scratch_dir("det_b");
  auto sa = synth_spec(a), sb = synth_spec(b);
  sa.arms = sb.arms = {"baseline", "LRD", "SD", "NL", "NG", "DG"};
  sb.jobs = 3;  // parallel execution does not change results
  run_classification(sa);
  run_classification(sb);
  for (const auto& arm : {"Adam", "Adam_LRD", "Adam_SD", "Adam_NL", "Adam_NG", "Adam_DG"})
    EXPECT_EQ(read_file(a / arm / "seed0.csv"), read_file(b / arm / "seed0.csv")) << arm;
  EXPECT_EQ(read_file(a / "summary.csv"), read_file(b / "summary.csv"));
}

TEST(Classification, AddingAnArmDoesNotChangeOthers) {
  auto one = synth_spec(scratch_dir("iso"));
  one.arms = {"LRD"};
  auto two = one;
  two.arms = {"NG", "baseline", "LRD"};
  const auto r1 = run_classification(one, {false, false});
  const auto r2 = run_classification(two, {false, false});
  EXPECT_EQ(r1[0].csv(), r2[2].csv());
}

TEST(Classification, KeepAllEqualsBaseline) {
  auto s = synth_spec(scratch_dir("keepall"));
  s.keep_prob = 1.0;
  s.arms = {"baseline", "LRD", "DG"};
  const auto r = run_classification(s, {false, false});
  EXPECT_EQ(r[0].csv(), r[1].csv());
  EXPECT_EQ(r[0].csv(), r[2].csv());
}

TEST(Classification, NoisyLabelArmReportsCorruption) {
  auto s = synth_spec(scratch_dir("nl"));
  s.arms = {"NL"};
  s.regularizers.nl_prob = 0.5;
  const auto r = run_classification(s, {false, false});
  EXPECT_GT(r[0].corrupted_labels, 30u);
  EXPECT_LT(r[0].corrupted_labels, 90u);
}

TEST(Classification, CheckpointsRestoreTheModel) {
  const auto dir = scratch_dir("cls_ckpt");
  auto s = synth_spec(dir);
  s.arms = {"LRD"};
  run_classification(s, {true, true});
  const auto model = nn::load_checkpoint(dir / "Adam_LRD" / "seed0.model.ckpt");
  const auto pd = load_problem_data(s);
  const auto csv = read_file(dir / "Adam_LRD" / "seed0.csv");
  const auto last = csv.substr(csv.rfind(',', csv.size() - 2) + 1);
  EXPECT_EQ(format_number(nn::accuracy(model, pd.test)) + "\n", last);
  const auto [rule, state] = optim::load_state(dir / "Adam_LRD" / "seed0.optim.ckpt");
  EXPECT_EQ(state.t, 3u * ((120 + 31) / 32));
}

TEST(Classification, MissingMnistNamesExpectedPaths) {
  auto s = parse_spec_text(R"({"version": 1, "problem": "mnist", "mnist": {"root": "/nonexistent/mnist"}})");
  try {
    run_classification(s, {false, false});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/mnist/train-images-idx3-ubyte"), std::string::npos);
  }
}

// --- Sweeps --------------------------------------------------------------

TEST(Sweep, KeepOneRowEqualsBaseline) {
  const auto dir = scratch_dir("sweep1");
  auto s = synth_spec(dir);
  const auto res = run_sweep(s, SweepParam::p, {0.5, 1.0});
  ASSERT_EQ(res.rows.size(), 2u);
  s.arms = {"baseline"};
  const auto base = run_classification(s, {false, false});
  EXPECT_EQ(res.records[1].csv(), base[0].csv());
  EXPECT_NE(res.records[0].csv(), base[0].csv());
  EXPECT_TRUE(fs::exists(dir / "p=0.5" / "seed0.csv"));
  EXPECT_TRUE(fs::exists(dir / "p=1" / "seed0.csv"));
}

TEST(Sweep, DropoutRetentionOneEqualsBaseline) {
  auto s = synth_spec(scratch_dir("sweep_sd"));
  const auto res = run_sweep(s, SweepParam::p_sd, {1.0, 0.8}, {false, false});
  s.arms = {"baseline"};
  EXPECT_EQ(res.records[0].csv(), run_classification(s, {false, false})[0].csv());
}

TEST(Sweep, CountingContract) {
  const auto dir = scratch_dir("sweep3");
  auto s = synth_spec(dir);
  s.seeds = {0, 1, 2};
  const auto res = run_sweep(s, SweepParam::p, {0.3, 0.5, 0.7});
  EXPECT_EQ(res.records.size(), 9u);
  EXPECT_EQ(res.rows.size(), 3u);
  for (const auto& row : res.rows) EXPECT_EQ(row.final_test_acc.count, 3u);
  const auto stats = read_file(dir / "summary_stats.csv");
  EXPECT_EQ(std::count(stats.begin(), stats.end(), '\n'), 4);
  EXPECT_THROW(run_sweep(s, SweepParam::p, {}), ValidationError);
  EXPECT_THROW(run_sweep(s, SweepParam::p, {0.0}), ValidationError);
  EXPECT_THROW(run_sweep(s, SweepParam::p, {0.5, 0.5}), ValidationError);
  EXPECT_THROW(parse_sweep_param("q"), ValidationError);
}

TEST(Report, OneRowPerArm) {
  const auto dir = scratch_dir("report");
  auto s = synth_spec(dir);
  s.seeds = {0, 1};
  run_sweep(s, SweepParam::p, {0.5, 1.0});
  const auto rows = report_directory(dir);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].arm, "p=0.5");
  EXPECT_EQ(rows[0].final_test_acc.count, 2u);
  const auto csv = read_file(dir / "report.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_THROW(report_directory(dir / "missing"), Error);
  EXPECT_THROW(report_directory(scratch_dir("report_empty")), Error);
}

// --- Toy -----------------------------------------------------------------

TEST(Toy, StartAtReferenceStaysClose) {
  const auto rule = optim::OptimizerRule::defaults(optim::RuleKind::adam);
  optim::LrdConfig cfg;
  cfg.learning_rate = 0.01;
  const auto run = run_toy_single(rule, cfg, testfn::ToyProblem::reference_optimum, 3000, Rng(0));
  EXPECT_TRUE(run.reached);
  for (const auto& row : run.trajectory.rows())
    ASSERT_LE(testfn::distance(row.point, testfn::ToyProblem::reference_optimum), 0.05);
}

TEST(Toy, ZeroStepsKeepsOnlyTheStart) {
  const auto rule = optim::OptimizerRule::defaults(optim::RuleKind::adam);
  const auto run = run_toy_single(rule, {}, {-2, 1}, 0, Rng(0));
  ASSERT_EQ(run.trajectory.size(), 1u);
  EXPECT_EQ(run.trajectory.back().point, (testfn::Point{-2, 1}));
}

TEST(Toy, RecordingCadence) {
  const auto rule = optim::OptimizerRule::defaults(optim::RuleKind::adam);
  const auto run = run_toy_single(rule, {}, {-2, 1}, 25, Rng(0), 10);
  ASSERT_EQ(run.trajectory.size(), 4u);  // 0, 10, 20, 25
  EXPECT_EQ(run.trajectory.back().step, 25u);
}

TEST(Toy, DivergenceIsFlagged) {
  const auto rule = optim::OptimizerRule::defaults(optim::RuleKind::sgdm);
  optim::LrdConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.variant = optim::Variant::none;
  const auto run = run_toy_single(rule, cfg, {-3.5, 2.5}, 200, Rng(0));
  EXPECT_TRUE(run.diverged);
  EXPECT_FALSE(run.reached);
}

TEST(Toy, FilesAndReach) {
  const auto dir = scratch_dir("toy");
  auto s = parse_spec_text(R"({"version": 1, "problem": "toy", "steps": 50, "seeds": [0, 1],
                               "toy": {"grid": {"x": [-3, -1, 2], "y": [0, 2, 2]}, "record_every": 10}})");
  s.output_dir = dir.string();
  const auto res = run_toy(s);
  EXPECT_EQ(res.runs.size(), 2u * 2 * 4);
  ASSERT_EQ(res.reach.size(), 2u);
  EXPECT_EQ(res.reach[0].runs, 8u);
  const auto traj = read_file(dir / "Adam_LRD" / "seed1_init3.csv");
  EXPECT_EQ(traj.substr(0, 11), "step,x,y,f\n");
  EXPECT_EQ(std::count(traj.begin(), traj.end(), '\n'), 7);
  EXPECT_TRUE(fs::exists(dir / "toy_reach.csv"));
  EXPECT_TRUE(fs::exists(dir / "toy_summary.csv"));
  s.arms = {"SD"};
  EXPECT_THROW(run_toy(s), ValidationError);
}

// --- CLI -----------------------------------------------------------------

TEST(Cli, VerifySucceeds) {
  std::string out;
  EXPECT_EQ(run_cli({"verify", "--grid", "400", "--points", "200"}, &out), 0);
  EXPECT_NE(out.find("grid argmin"), std::string::npos);
  EXPECT_NE(out.find("max relative error"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  std::string err;
  EXPECT_EQ(run_cli({"run", "missing.spec"}, nullptr, &err), 2);
  EXPECT_NE(err.find("missing.spec"), std::string::npos);
  EXPECT_EQ(run_cli({"run"}), 2);
  EXPECT_EQ(run_cli({"frobnicate"}), 2);
  EXPECT_EQ(run_cli({"verify", "--bogus"}), 2);
  EXPECT_EQ(run_cli({}), 2);
  const auto dir = scratch_dir("cli_bad");
  write_file_atomic(dir / "bad.json", R"({"version": 1, "problem": "synth", "epochs": -1})");
  EXPECT_EQ(run_cli({"run", (dir / "bad.json").string()}), 2);
  write_file_atomic(dir / "toy.json", R"({"version": 1, "problem": "synth"})");
  EXPECT_EQ(run_cli({"toy", (dir / "toy.json").string()}), 2);
  EXPECT_EQ(run_cli({"sweep", (dir / "toy.json").string(), "--param", "q", "--values", "0.5"}), 2);
}

TEST(Cli, MissingDatasetExitsOne) {
  const auto dir = scratch_dir("cli_mnist");
  write_file_atomic(dir / "m.json", R"({"version": 1, "problem": "mnist", "mnist": {"root": "/nonexistent/x"}})");
  std::string err;
  EXPECT_EQ(run_cli({"run", (dir / "m.json").string()}, nullptr, &err), 1);
  EXPECT_NE(err.find("t10k-labels-idx1-ubyte"), std::string::npos);
}

TEST(Cli, RunSweepToyAndReport) {
  const auto dir = scratch_dir("cli_flow");
  write_file_atomic(dir / "s.json", R"({"version": 1, "problem": "synth", "epochs": 2, "batch_size": 32,
                                         "synth": {"per_class": 20, "test_per_class": 20}})");
  EXPECT_EQ(run_cli({"run", (dir / "s.json").string(), "-o", (dir / "run").string(), "-j", "2"}), 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "Adam_LRD" / "seed0.csv"));
  EXPECT_EQ(run_cli({"sweep", (dir / "s.json").string(), "--param", "p", "--values", "0.5", "1", "-o",
                     (dir / "sweep").string()}),
            0);
  std::string out;
  EXPECT_EQ(run_cli({"report", (dir / "sweep").string()}, &out), 0);
  EXPECT_NE(out.find("p=0.5,1,"), std::string::npos) << out;
  EXPECT_TRUE(fs::exists(dir / "sweep" / "report.csv"));
  write_file_atomic(dir / "t.json", R"({"version": 1, "problem": "toy", "steps": 20, "toy": {"inits": [[-1, 1]]}})");
  EXPECT_EQ(run_cli({"toy", (dir / "t.json").string(), "-o", (dir / "toy").string()}, &out), 0);
  EXPECT_NE(out.find("Adam_LRD: reached"), std::string::npos);
  EXPECT_EQ(run_cli({"run", (dir / "t.json").string(), "-o", (dir / "toy2").string()}), 0);
  EXPECT_EQ(run_cli({"report", (dir / "nothing").string()}), 1);
}

TEST(Cli, SampleSpecsParse) {
  for (const auto& e : fs::directory_iterator(fs::path(LRD_SOURCE_DIR) / "specs"))
    EXPECT_NO_THROW(load_spec(e.path())) << e.path();
}
