#pragma once

// Experiment spec: a versioned JSON document describing one study. Unknown
// keys are rejected. The schema is documented in docs/spec-format.md.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrd/core/error.hpp"
#include "lrd/core/io.hpp"
#include "lrd/optim/rule.hpp"
#include "lrd/testfn/toy.hpp"

namespace lrd::harness {

using json = nlohmann::json;

inline constexpr int spec_version = 1;
inline constexpr const char* data_dir_env = "LRD_DATA_DIR";

enum class Problem { toy, mnist, synth };

inline std::string_view to_string(Problem p) {
  switch (p) {
    case Problem::toy: return "toy";
    case Problem::mnist: return "mnist";
    case Problem::synth: return "synth";
  }
  return "?";
}

struct ModelSpec {
  /// "mnist-reduced" (784-256-256-10), "mnist-paper" (784-1000-1000-10) or
  /// "custom" (input/output widths from the data, hidden widths below).
  std::string preset = "mnist-reduced";
  std::vector<std::size_t> hidden;

  std::vector<std::size_t> layer_sizes(std::size_t inputs, std::size_t classes) const {
    std::vector<std::size_t> sizes{inputs};
    if (preset == "mnist-reduced") {
      sizes.insert(sizes.end(), {256, 256});
    } else if (preset == "mnist-paper") {
      sizes.insert(sizes.end(), {1000, 1000});
    } else {
      sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    }
    sizes.push_back(classes);
    return sizes;
  }
};

struct Regularizers {
  double sd_keep_prob = 0.9;  // standard dropout retention
  double nl_prob = 0.05;      // noisy-label corruption probability
  double ng_variance = 0.1;   // noisy-gradient initial variance
  double ng_gamma = 0.55;     // noisy-gradient decay exponent
};

struct SynthSettings {
  int classes = 3;
  std::size_t per_class = 100;
  std::size_t test_per_class = 100;
  std::size_t dims = 10;
  double spread = 0.1;
  std::uint64_t seed = 2024;
};

struct MnistSettings {
  std::string root;  // empty: $LRD_DATA_DIR
  std::size_t train_subset = 0;  // 0: all
  std::size_t test_subset = 0;
  bool standardize = false;

  std::filesystem::path resolved_root() const {
    if (!root.empty()) return root;
    if (const char* env = std::getenv(data_dir_env); env && *env) return env;
    return "data/mnist";
  }
};

/// Toy-run settings. Not taken from any published protocol: step count,
/// learning rate and keep probability default to 3000, 0.01 and 0.5.
struct ToySettings {
  std::vector<testfn::Point> inits;  // explicit initial points; if empty the grid is used
  double grid_x_min = -3.5, grid_x_max = -0.5;
  double grid_y_min = -1.5, grid_y_max = 2.5;
  std::size_t grid_nx = 4, grid_ny = 4;
  double radius = testfn::ToyProblem::success_radius;
  std::size_t record_every = 1;
  bool write_trajectories = true;

  std::vector<testfn::Point> initial_points() const {
    if (!inits.empty()) return inits;
    std::vector<testfn::Point> pts;
    auto lin = [](double lo, double hi, std::size_t n, std::size_t i) {
      return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    };
    for (std::size_t i = 0; i < grid_nx; ++i)
      for (std::size_t j = 0; j < grid_ny; ++j)
        pts.push_back({lin(grid_x_min, grid_x_max, grid_nx, i), lin(grid_y_min, grid_y_max, grid_ny, j)});
    return pts;
  }
};

struct ExperimentSpec {
  int version = spec_version;
  std::string name = "experiment";
  Problem problem = Problem::synth;
  ModelSpec model;
  optim::OptimizerRule rule = optim::OptimizerRule::defaults(optim::RuleKind::adam);
  double learning_rate = 0.001;
  double keep_prob = 0.5;
  double weight_decay = 0.0;
  bool mask_biases = true;
  std::vector<std::string> arms{"baseline", "LRD"};
  Regularizers regularizers;
  std::size_t epochs = 10;
  std::size_t steps = 3000;
  std::size_t batch_size = 128;
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::uint64_t> lr_milestones;
  double lr_factor = 0.1;
  std::string output_dir = "runs/experiment";
  unsigned jobs = 1;
  SynthSettings synth;
  MnistSettings mnist;
  ToySettings toy;
};

namespace detail {

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<std::string_view> known) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw ValidationError(where.empty() ? key : where + "." + key, "unknown key");
  }
}

template <typename T>
struct is_vector : std::false_type {};
template <typename T, typename A>
struct is_vector<std::vector<T, A>> : std::true_type {};

// json's get<> turns -1 into a huge size_t and 2.5 into 2 without complaint.
template <typename T>
void check_integral(const json& v, const std::string& field) {
  if constexpr (is_vector<T>::value) {
    if (v.is_array())
      for (const auto& e : v) check_integral<typename T::value_type>(e, field);
  } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
    if (v.is_number_float()) throw ValidationError(field, "must be an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
        throw ValidationError(field, "must not be negative");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  check_integral<T>(j.at(key), where.empty() ? key : where + "." + key);
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where.empty() ? key : where + "." + key, std::string("wrong type: ") + e.what());
  }
}

inline const json& object_at(const json& j, const char* key, const std::string& where) {
  const auto& sub = j.at(key);
  if (!sub.is_object()) throw ValidationError(where.empty() ? key : where + "." + key, "must be an object");
  return sub;
}

}  // namespace detail

inline void validate(const ExperimentSpec& s) {
  if (s.version != spec_version)
    throw ValidationError("version", "unsupported spec version " + std::to_string(s.version) + " (expected " +
                                         std::to_string(spec_version) + ")");
  if (s.name.empty()) throw ValidationError("name", "must not be empty");
  try {
    s.rule.validate();
  } catch (const DomainError& e) {
    throw ValidationError("optimizer", e.what());
  }
  if (!(s.learning_rate > 0.0)) throw ValidationError("optimizer.learning_rate", "must be positive");
  if (!(s.keep_prob >= 0.0 && s.keep_prob <= 1.0)) throw ValidationError("lrd.keep_prob", "must lie in [0,1]");
  if (!(s.weight_decay >= 0.0)) throw ValidationError("lrd.weight_decay", "must be non-negative");
  if (s.arms.empty()) throw ValidationError("arms", "at least one arm required");
  if (s.seeds.empty()) throw ValidationError("seeds", "at least one seed required");
  if (std::set<std::uint64_t>(s.seeds.begin(), s.seeds.end()).size() != s.seeds.size())
    throw ValidationError("seeds", "duplicate seed");
  if (s.batch_size == 0) throw ValidationError("batch_size", "must be at least 1");
  if (!(s.lr_factor > 0.0)) throw ValidationError("lr_factor", "must be positive");
  if (s.output_dir.empty()) throw ValidationError("output_dir", "must not be empty");
  if (s.jobs == 0) throw ValidationError("jobs", "must be at least 1");
  const auto& r = s.regularizers;
  if (!(r.sd_keep_prob > 0.0 && r.sd_keep_prob <= 1.0))
    throw ValidationError("regularizers.sd_keep_prob", "must lie in (0,1]");
  if (!(r.nl_prob >= 0.0 && r.nl_prob <= 1.0)) throw ValidationError("regularizers.nl_prob", "must lie in [0,1]");
  if (!(r.ng_variance >= 0.0)) throw ValidationError("regularizers.ng_variance", "must be non-negative");
  if (!(r.ng_gamma >= 0.0)) throw ValidationError("regularizers.ng_gamma", "must be non-negative");
  const auto& m = s.model;
  if (m.preset != "mnist-reduced" && m.preset != "mnist-paper" && m.preset != "custom")
    throw ValidationError("model.preset", "expected mnist-reduced|mnist-paper|custom, got '" + m.preset + "'");
  for (auto h : m.hidden)
    if (h == 0) throw ValidationError("model.hidden", "hidden widths must be positive");
  if (s.problem == Problem::synth) {
    if (s.synth.classes < 2) throw ValidationError("synth.classes", "must be at least 2");
    if (s.synth.dims < 2) throw ValidationError("synth.dims", "must be at least 2");
    if (s.synth.per_class == 0) throw ValidationError("synth.per_class", "must be at least 1");
    if (s.synth.test_per_class == 0) throw ValidationError("synth.test_per_class", "must be at least 1");
    if (!(s.synth.spread >= 0.0)) throw ValidationError("synth.spread", "must be non-negative");
  }
  if (s.problem == Problem::toy) {
    if (s.toy.record_every == 0) throw ValidationError("toy.record_every", "must be at least 1");
    if (!(s.toy.radius > 0.0)) throw ValidationError("toy.radius", "must be positive");
    if (s.toy.inits.empty() && (s.toy.grid_nx == 0 || s.toy.grid_ny == 0))
      throw ValidationError("toy.grid", "grid needs at least one point per axis");
  }
}

inline ExperimentSpec parse_spec(const json& j) {
  if (!j.is_object()) throw ValidationError("(root)", "spec must be a JSON object");
  detail::reject_unknown(j, "", {"version", "name", "problem", "model", "optimizer", "lrd", "arms", "regularizers",
                                 "epochs", "steps", "batch_size", "seeds", "lr_milestones", "lr_factor",
                                 "output_dir", "jobs", "synth", "mnist", "toy"});
  if (!j.contains("version")) throw ValidationError("version", "required");
  ExperimentSpec s;
  detail::read(j, "version", s.version, "");
  if (s.version != spec_version)
    throw ValidationError("version", "unsupported spec version " + std::to_string(s.version));
  detail::read(j, "name", s.name, "");

  if (!j.contains("problem")) throw ValidationError("problem", "required");
  std::string problem;
  detail::read(j, "problem", problem, "");
  if (problem == "toy") s.problem = Problem::toy;
  else if (problem == "mnist") s.problem = Problem::mnist;
  else if (problem == "synth") s.problem = Problem::synth;
  else throw ValidationError("problem", "expected toy|mnist|synth, got '" + problem + "'");

  if (s.problem == Problem::synth) s.model.preset = "custom", s.model.hidden = {32, 32};
  if (s.problem == Problem::toy) {
    s.learning_rate = 0.01;
    s.arms = {"baseline", "LRD"};
  }

  if (j.contains("model")) {
    const auto& m = detail::object_at(j, "model", "");
    detail::reject_unknown(m, "model", {"preset", "hidden"});
    detail::read(m, "preset", s.model.preset, "model");
    detail::read(m, "hidden", s.model.hidden, "model");
    if (m.contains("hidden") && !m.contains("preset")) s.model.preset = "custom";
  }

  if (j.contains("optimizer")) {
    const auto& o = detail::object_at(j, "optimizer", "");
    detail::reject_unknown(o, "optimizer", {"rule", "learning_rate", "beta", "beta2", "eps", "eta"});
    if (o.contains("rule")) {
      std::string rule;
      detail::read(o, "rule", rule, "optimizer");
      s.rule = optim::OptimizerRule::defaults(optim::parse_rule(rule));
      if (s.problem != Problem::toy) s.learning_rate = optim::OptimizerRule::default_learning_rate(s.rule.kind);
    }
    detail::read(o, "learning_rate", s.learning_rate, "optimizer");
    detail::read(o, "beta", s.rule.beta, "optimizer");
    detail::read(o, "beta2", s.rule.beta2, "optimizer");
    detail::read(o, "eps", s.rule.eps, "optimizer");
    detail::read(o, "eta", s.rule.eta, "optimizer");
  }

  if (j.contains("lrd")) {
    const auto& l = detail::object_at(j, "lrd", "");
    detail::reject_unknown(l, "lrd", {"keep_prob", "weight_decay", "mask_biases"});
    detail::read(l, "keep_prob", s.keep_prob, "lrd");
    detail::read(l, "weight_decay", s.weight_decay, "lrd");
    detail::read(l, "mask_biases", s.mask_biases, "lrd");
  }

  detail::read(j, "arms", s.arms, "");

  if (j.contains("regularizers")) {
    const auto& r = detail::object_at(j, "regularizers", "");
    detail::reject_unknown(r, "regularizers", {"sd_keep_prob", "nl_prob", "ng_variance", "ng_gamma"});
    detail::read(r, "sd_keep_prob", s.regularizers.sd_keep_prob, "regularizers");
    detail::read(r, "nl_prob", s.regularizers.nl_prob, "regularizers");
    detail::read(r, "ng_variance", s.regularizers.ng_variance, "regularizers");
    detail::read(r, "ng_gamma", s.regularizers.ng_gamma, "regularizers");
  }

  detail::read(j, "epochs", s.epochs, "");
  detail::read(j, "steps", s.steps, "");
  detail::read(j, "batch_size", s.batch_size, "");
  detail::read(j, "seeds", s.seeds, "");
  detail::read(j, "lr_milestones", s.lr_milestones, "");
  detail::read(j, "lr_factor", s.lr_factor, "");
  detail::read(j, "output_dir", s.output_dir, "");
  detail::read(j, "jobs", s.jobs, "");

  if (j.contains("synth")) {
    const auto& y = detail::object_at(j, "synth", "");
    detail::reject_unknown(y, "synth", {"classes", "per_class", "test_per_class", "dims", "spread", "seed"});
    detail::read(y, "classes", s.synth.classes, "synth");
    detail::read(y, "per_class", s.synth.per_class, "synth");
    detail::read(y, "test_per_class", s.synth.test_per_class, "synth");
    detail::read(y, "dims", s.synth.dims, "synth");
    detail::read(y, "spread", s.synth.spread, "synth");
    detail::read(y, "seed", s.synth.seed, "synth");
  }

  if (j.contains("mnist")) {
    const auto& m = detail::object_at(j, "mnist", "");
    detail::reject_unknown(m, "mnist", {"root", "train_subset", "test_subset", "standardize"});
    detail::read(m, "root", s.mnist.root, "mnist");
    detail::read(m, "train_subset", s.mnist.train_subset, "mnist");
    detail::read(m, "test_subset", s.mnist.test_subset, "mnist");
    detail::read(m, "standardize", s.mnist.standardize, "mnist");
  }

  if (j.contains("toy")) {
    const auto& t = detail::object_at(j, "toy", "");
    detail::reject_unknown(t, "toy", {"inits", "grid", "radius", "record_every", "write_trajectories"});
    if (t.contains("inits")) {
      std::vector<std::vector<double>> pts;
      detail::read(t, "inits", pts, "toy");
      for (const auto& p : pts) {
        if (p.size() != 2) throw ValidationError("toy.inits", "each initial point must be [x, y]");
        s.toy.inits.push_back({p[0], p[1]});
      }
    }
    if (t.contains("grid")) {
      const auto& g = detail::object_at(t, "grid", "toy");
      detail::reject_unknown(g, "toy.grid", {"x", "y"});
      for (const char* axis : {"x", "y"}) {
        if (!g.contains(axis)) continue;
        std::vector<double> v;
        detail::read(g, axis, v, "toy.grid");
        if (v.size() != 3 || v[2] < 1.0 || v[2] != static_cast<double>(static_cast<std::size_t>(v[2])))
          throw ValidationError(std::string("toy.grid.") + axis, "expected [min, max, count]");
        auto& lo = axis[0] == 'x' ? s.toy.grid_x_min : s.toy.grid_y_min;
        auto& hi = axis[0] == 'x' ? s.toy.grid_x_max : s.toy.grid_y_max;
        auto& n = axis[0] == 'x' ? s.toy.grid_nx : s.toy.grid_ny;
        lo = v[0];
        hi = v[1];
        n = static_cast<std::size_t>(v[2]);
      }
    }
    detail::read(t, "radius", s.toy.radius, "toy");
    detail::read(t, "record_every", s.toy.record_every, "toy");
    detail::read(t, "write_trajectories", s.toy.write_trajectories, "toy");
  }

  validate(s);
  return s;
}

inline ExperimentSpec parse_spec_text(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("(file)", std::string("malformed JSON: ") + e.what());
  }
  return parse_spec(j);
}

inline ExperimentSpec load_spec(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("(file)", "spec file not found: " + path.string());
  return parse_spec_text(read_file(path));
}

/// Canonical JSON form; parse_spec(to_json(s)) reproduces s.
inline json to_json(const ExperimentSpec& s) {
  json j;
  j["version"] = s.version;
  j["name"] = s.name;
  j["problem"] = std::string(to_string(s.problem));
  j["model"] = {{"preset", s.model.preset}, {"hidden", s.model.hidden}};
  j["optimizer"] = {{"rule", std::string(optim::to_string(s.rule.kind))},
                    {"learning_rate", s.learning_rate},
                    {"beta", s.rule.beta},
                    {"beta2", s.rule.beta2},
                    {"eps", s.rule.eps},
                    {"eta", s.rule.eta}};
  j["lrd"] = {{"keep_prob", s.keep_prob}, {"weight_decay", s.weight_decay}, {"mask_biases", s.mask_biases}};
  j["arms"] = s.arms;
  j["regularizers"] = {{"sd_keep_prob", s.regularizers.sd_keep_prob},
                       {"nl_prob", s.regularizers.nl_prob},
                       {"ng_variance", s.regularizers.ng_variance},
                       {"ng_gamma", s.regularizers.ng_gamma}};
  j["epochs"] = s.epochs;
  j["steps"] = s.steps;
  j["batch_size"] = s.batch_size;
  j["seeds"] = s.seeds;
  j["lr_milestones"] = s.lr_milestones;
  j["lr_factor"] = s.lr_factor;
  j["output_dir"] = s.output_dir;
  j["jobs"] = s.jobs;
  j["synth"] = {{"classes", s.synth.classes},         {"per_class", s.synth.per_class},
                {"test_per_class", s.synth.test_per_class}, {"dims", s.synth.dims},
                {"spread", s.synth.spread},           {"seed", s.synth.seed}};
  j["mnist"] = {{"root", s.mnist.root},
                {"train_subset", s.mnist.train_subset},
                {"test_subset", s.mnist.test_subset},
                {"standardize", s.mnist.standardize}};
  json inits = json::array();
  for (const auto& p : s.toy.inits) inits.push_back({p.x, p.y});
  j["toy"] = {{"inits", inits},
              {"grid",
               {{"x", {s.toy.grid_x_min, s.toy.grid_x_max, static_cast<double>(s.toy.grid_nx)}},
                {"y", {s.toy.grid_y_min, s.toy.grid_y_max, static_cast<double>(s.toy.grid_ny)}}}},
              {"radius", s.toy.radius},
              {"record_every", s.toy.record_every},
              {"write_trajectories", s.toy.write_trajectories}};
  return j;
}

}  // namespace lrd::harness
