#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lrd/core/error.hpp"
#include "lrd/core/rng.hpp"
#include "lrd/core/tensor.hpp"

namespace lrd::data {

/// Labelled samples: one input row per sample, labels in [0, num_classes).
struct Dataset {
  Tensor inputs;  // n x d
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dims() const noexcept { return inputs.cols(); }

  void validate() const {
    if (labels.empty()) throw DomainError("dataset is empty");
    if (inputs.rank() != 2 || inputs.rows() != labels.size())
      throw ShapeError("dataset inputs " + to_string(inputs.shape()) + " do not match " +
                       std::to_string(labels.size()) + " labels");
    if (num_classes < 1) throw DomainError("dataset needs at least one class");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0 || labels[i] >= num_classes)
        throw DomainError("label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                          " outside [0," + std::to_string(num_classes) + ")");
  }

  /// First `n` samples (all of them if n >= size()).
  Dataset head(std::size_t n) const {
    if (n == 0 || n >= size()) return *this;
    Dataset out;
    out.num_classes = num_classes;
    out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
    const auto first = inputs.data().subspan(0, n * dims());
    out.inputs = Tensor({n, dims()}, std::vector<double>(first.begin(), first.end()));
    return out;
  }
};

/// A mini-batch gathered from a dataset.
struct Batch {
  Tensor inputs;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

inline Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t d = ds.dims();
  Batch b;
  b.inputs = Tensor({indices.size(), d});
  b.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = ds.inputs.row(indices[r]);
    std::copy(src.begin(), src.end(), b.inputs.row(r).begin());
    b.labels.push_back(ds.labels[indices[r]]);
  }
  return b;
}

inline Batch as_batch(const Dataset& ds) { return {ds.inputs, ds.labels}; }

/// Epoch order: a permutation of [0, n) that depends only on (seed, epoch),
/// cut into consecutive batches; the last batch may be short.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                     std::uint64_t epoch) {
  if (batch_size == 0) throw DomainError("batch size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng(seed).child(epoch);
  shuffle(std::span<std::size_t>(order), rng);
  std::vector<std::vector<std::size_t>> out;
  out.reserve((n + batch_size - 1) / batch_size);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                                     std::uint64_t epoch) {
  return batches(ds.size(), batch_size, seed, epoch);
}

/// Class means used by `synth_blobs`. With d >= C the means are the scaled
/// basis vectors e_c / sqrt(2) (a regular simplex, unit pairwise distance);
/// otherwise they sit on a circle in the first two coordinates with unit
/// distance between neighbours.
inline Tensor blob_means(int classes, std::size_t dims) {
  Tensor means({static_cast<std::size_t>(classes), dims});
  if (dims >= static_cast<std::size_t>(classes)) {
    for (int c = 0; c < classes; ++c) means(static_cast<std::size_t>(c), static_cast<std::size_t>(c)) = std::numbers::sqrt2 / 2.0;
  } else {
    const double radius = 0.5 / std::sin(std::numbers::pi / classes);
    for (int c = 0; c < classes; ++c) {
      const double angle = 2.0 * std::numbers::pi * c / classes;
      means(static_cast<std::size_t>(c), 0) = radius * std::cos(angle);
      means(static_cast<std::size_t>(c), 1) = radius * std::sin(angle);
    }
  }
  return means;
}

/// Gaussian clusters around `blob_means`: sample = mean + spread * N(0, I).
/// Samples are stored class by class.
inline Dataset synth_blobs(int classes, std::size_t per_class, std::size_t dims, double spread, std::uint64_t seed) {
  if (classes < 2) throw DomainError("synth_blobs needs at least 2 classes");
  if (dims < 2) throw DomainError("synth_blobs needs at least 2 dimensions");
  if (per_class == 0) throw DomainError("synth_blobs needs at least 1 sample per class");
  if (!(spread >= 0.0)) throw DomainError("synth_blobs spread must be non-negative");
  const Tensor means = blob_means(classes, dims);
  Rng rng(seed);
  Dataset ds;
  ds.num_classes = classes;
  ds.inputs = Tensor({static_cast<std::size_t>(classes) * per_class, dims});
  ds.labels.reserve(static_cast<std::size_t>(classes) * per_class);
  std::size_t r = 0;
  for (int c = 0; c < classes; ++c) {
    const auto mu = means.row(static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < per_class; ++i, ++r) {
      auto x = ds.inputs.row(r);
      for (std::size_t j = 0; j < dims; ++j) x[j] = mu[j] + (spread > 0.0 ? spread * rng.normal() : 0.0);
      ds.labels.push_back(c);
    }
  }
  return ds;
}

/// Labels after per-sample corruption. The pattern is fixed by the seed: a
/// sample keeps the same observed label for the lifetime of the view.
struct NoisyLabelView {
  double q = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> observed;
  std::vector<bool> corrupted;

  std::size_t corrupted_count() const {
    return static_cast<std::size_t>(std::count(corrupted.begin(), corrupted.end(), true));
  }

  /// Copy of `base` with the observed labels substituted.
  Dataset apply(const Dataset& base) const {
    Dataset out = base;
    out.labels = observed;
    return out;
  }
};

/// Flags each sample with probability q and relabels flagged samples
/// uniformly over the other C-1 classes.
inline NoisyLabelView corrupt_labels(const Dataset& ds, double q, std::uint64_t seed) {
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("label corruption probability must lie in [0,1]");
  if (q > 0.0 && ds.num_classes < 2) throw DomainError("label corruption needs at least 2 classes");
  NoisyLabelView view;
  view.q = q;
  view.seed = seed;
  view.observed = ds.labels;
  view.corrupted.assign(ds.size(), false);
  Rng rng(seed);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!rng.bernoulli(q)) continue;
    const int original = ds.labels[i];
    int wrong = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(ds.num_classes - 1)));
    if (wrong >= original) ++wrong;
    view.observed[i] = wrong;
    view.corrupted[i] = true;
  }
  return view;
}

}  // namespace lrd::data
