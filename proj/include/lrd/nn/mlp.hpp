#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lrd/core/checkpoint.hpp"
#include "lrd/core/error.hpp"
#include "lrd/core/rng.hpp"
#include "lrd/core/tensor.hpp"
#include "lrd/data/dataset.hpp"

namespace lrd::nn {

enum class Mode { train, eval };

/// Fully connected ReLU network. Layer i maps size_i -> size_{i+1} through
/// a (size_i x size_{i+1}) weight and a bias of length size_{i+1}; every
/// layer but the last is followed by ReLU and, in train mode with
/// keep_prob < 1, inverted dropout.
///
/// Parameters are stored as [W0, b0, W1, b1, ...] so that optimizers can
/// address them as one flat list.
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<std::size_t> layer_sizes, double keep_prob = 1.0)
      : sizes_(std::move(layer_sizes)), keep_prob_(keep_prob) {
    if (sizes_.size() < 2) throw ShapeError("Mlp needs at least input and output sizes");
    check_keep_prob(keep_prob_);
    for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
      params_.emplace_back(Shape{sizes_[i], sizes_[i + 1]});
      params_.emplace_back(Shape{sizes_[i + 1]});
    }
  }

  /// He-uniform weights, U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero biases.
  static Mlp he_uniform(std::vector<std::size_t> layer_sizes, Rng& rng, double keep_prob = 1.0) {
    Mlp m(std::move(layer_sizes), keep_prob);
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
      const double limit = std::sqrt(6.0 / static_cast<double>(m.sizes_[l]));
      for (double& w : m.weight(l).data()) w = (2.0 * rng.uniform() - 1.0) * limit;
    }
    return m;
  }

  const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }
  std::size_t num_layers() const noexcept { return sizes_.empty() ? 0 : sizes_.size() - 1; }
  std::size_t input_size() const noexcept { return sizes_.front(); }
  std::size_t output_size() const noexcept { return sizes_.back(); }

  double keep_prob() const noexcept { return keep_prob_; }
  void set_keep_prob(double p) {
    check_keep_prob(p);
    keep_prob_ = p;
  }

  std::vector<Tensor>& parameters() noexcept { return params_; }
  const std::vector<Tensor>& parameters() const noexcept { return params_; }

  Tensor& weight(std::size_t layer) { return params_[2 * layer]; }
  const Tensor& weight(std::size_t layer) const { return params_[2 * layer]; }
  Tensor& bias(std::size_t layer) { return params_[2 * layer + 1]; }
  const Tensor& bias(std::size_t layer) const { return params_[2 * layer + 1]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  static void check_keep_prob(double p) {
    if (!(p > 0.0 && p <= 1.0)) throw DomainError("dropout keep probability must lie in (0,1], got " + std::to_string(p));
  }

  std::vector<std::size_t> sizes_;
  double keep_prob_ = 1.0;
  std::vector<Tensor> params_;
};

/// Activations kept for backpropagation.
struct ForwardResult {
  Tensor logits;
  std::vector<Tensor> layer_inputs;  // input of each affine layer (after ReLU and dropout)
  std::vector<Tensor> pre_activations;  // hidden-layer pre-activations
  std::vector<Tensor> masks;  // per hidden layer: 0 or 1/keep_prob; empty when no dropout ran
};

struct LossGrad {
  double loss = 0.0;
  std::vector<Tensor> grads;  // same order and shapes as Mlp::parameters()
};

/// Inverted-dropout masks for a batch of `rows` samples: each element is
/// 1/keep_prob with probability keep_prob and 0 otherwise.
inline std::vector<Tensor> sample_dropout_masks(const Mlp& model, std::size_t rows, Rng& rng) {
  std::vector<Tensor> masks;
  const double p = model.keep_prob();
  for (std::size_t l = 0; l + 1 < model.num_layers(); ++l) {
    Tensor m({rows, model.layer_sizes()[l + 1]});
    for (double& v : m.data()) v = rng.bernoulli(p) ? 1.0 / p : 0.0;
    masks.push_back(std::move(m));
  }
  return masks;
}

/// Forward pass with explicitly supplied dropout masks (empty span: none).
inline ForwardResult forward_with_masks(const Mlp& model, const Tensor& inputs, std::span<const Tensor> masks) {
  if (inputs.rank() != 2 || inputs.cols() != model.input_size())
    throw ShapeError("forward: input " + to_string(inputs.shape()) + " does not match input width " +
                     std::to_string(model.input_size()));
  const std::size_t hidden_layers = model.num_layers() - 1;
  if (!masks.empty() && masks.size() != hidden_layers)
    throw ShapeError("forward: expected " + std::to_string(hidden_layers) + " dropout masks, got " +
                     std::to_string(masks.size()));

  ForwardResult out;
  const std::size_t n = inputs.rows();
  out.layer_inputs.push_back(inputs);
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    Tensor z = matmul(out.layer_inputs.back(), model.weight(l));
    const auto b = model.bias(l).data();
    for (std::size_t r = 0; r < n; ++r) {
      auto row = z.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    }
    if (l + 1 == model.num_layers()) {
      out.logits = std::move(z);
      break;
    }
    Tensor a(z.shape());
    if (!masks.empty()) require_same_shape(z, masks[l], "dropout mask");
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double relu = z[i] > 0.0 ? z[i] : 0.0;
      a[i] = masks.empty() ? relu : relu * masks[l][i];
    }
    out.pre_activations.push_back(std::move(z));
    out.layer_inputs.push_back(std::move(a));
  }
  out.masks.assign(masks.begin(), masks.end());
  return out;
}

/// Eval mode never drops units; train mode samples fresh masks from `rng`
/// unless keep_prob == 1.
inline ForwardResult forward(const Mlp& model, const Tensor& inputs, Mode mode, Rng& rng) {
  if (mode == Mode::train && model.keep_prob() < 1.0) {
    const auto masks = sample_dropout_masks(model, inputs.rows(), rng);
    return forward_with_masks(model, inputs, masks);
  }
  return forward_with_masks(model, inputs, {});
}

/// Mean softmax cross-entropy. When `dlogits` is non-null it receives
/// d(loss)/d(logits).
inline double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* dlogits = nullptr) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n)
    throw ShapeError("cross-entropy: " + std::to_string(n) + " logit rows but " + std::to_string(labels.size()) +
                     " labels");
  if (dlogits) *dlogits = Tensor(logits.shape());
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= c)
      throw DomainError("label " + std::to_string(label) + " outside [0," + std::to_string(c) + ")");
    const auto z = logits.row(r);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double log_sum = zmax + std::log(sum);
    total += log_sum - z[static_cast<std::size_t>(label)];
    if (dlogits) {
      auto d = dlogits->row(r);
      for (std::size_t j = 0; j < c; ++j) d[j] = std::exp(z[j] - log_sum) * inv_n;
      d[static_cast<std::size_t>(label)] -= inv_n;
    }
  }
  return total * inv_n;
}

/// Backpropagation through a cached forward pass; dropout masks recorded in
/// `fwd` are reused.
inline LossGrad backward(const Mlp& model, const ForwardResult& fwd, std::span<const int> labels) {
  LossGrad out;
  Tensor dz;
  out.loss = softmax_cross_entropy(fwd.logits, labels, &dz);
  out.grads.resize(model.parameters().size());
  for (std::size_t l = model.num_layers(); l-- > 0;) {
    out.grads[2 * l] = matmul_tn(fwd.layer_inputs[l], dz);
    Tensor db({model.layer_sizes()[l + 1]});
    for (std::size_t r = 0; r < dz.rows(); ++r) {
      const auto row = dz.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) db[j] += row[j];
    }
    out.grads[2 * l + 1] = std::move(db);
    if (l == 0) break;
    Tensor dh = matmul_nt(dz, model.weight(l));
    const Tensor& pre = fwd.pre_activations[l - 1];
    for (std::size_t i = 0; i < dh.size(); ++i) {
      double g = pre[i] > 0.0 ? dh[i] : 0.0;
      if (!fwd.masks.empty()) g *= fwd.masks[l - 1][i];
      dh[i] = g;
    }
    dz = std::move(dh);
  }
  return out;
}

inline LossGrad loss_and_grad(const Mlp& model, const data::Batch& batch, Mode mode, Rng& rng) {
  return backward(model, forward(model, batch.inputs, mode, rng), batch.labels);
}

/// Index of the largest logit per row; the lowest index wins ties.
inline std::vector<int> predict(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < z.size(); ++j)
      if (z[j] > z[best]) best = j;
    out[r] = static_cast<int>(best);
  }
  return out;
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Eval-mode loss and accuracy over a whole dataset, in chunks.
inline Evaluation evaluate(const Mlp& model, const data::Dataset& ds, std::size_t chunk = 1000) {
  if (ds.size() == 0) throw DomainError("cannot evaluate on an empty dataset");
  Evaluation ev;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t end = std::min(ds.size(), start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const auto batch = data::gather(ds, idx);
    const auto fwd = forward_with_masks(model, batch.inputs, {});
    loss_sum += softmax_cross_entropy(fwd.logits, batch.labels) * static_cast<double>(batch.size());
    const auto pred = predict(fwd.logits);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
  }
  ev.loss = loss_sum / static_cast<double>(ds.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  return ev;
}

inline double accuracy(const Mlp& model, const data::Dataset& ds) { return evaluate(model, ds).accuracy; }

/// Model checkpoint: header words are the layer sizes, the single scalar is
/// keep_prob, tensors are [W0, b0, W1, b1, ...].
inline Container to_container(const Mlp& model) {
  Container c;
  c.kind = PayloadKind::mlp;
  c.header.assign(model.layer_sizes().begin(), model.layer_sizes().end());
  c.scalars = {model.keep_prob()};
  c.tensors = model.parameters();
  return c;
}

inline Mlp from_container(const Container& c) {
  if (c.kind != PayloadKind::mlp) throw FormatError("checkpoint does not hold a model", 12);
  if (c.scalars.size() != 1) throw FormatError("model checkpoint must carry exactly one scalar", 16);
  Mlp m(std::vector<std::size_t>(c.header.begin(), c.header.end()), c.scalars[0]);
  if (c.tensors.size() != m.parameters().size())
    throw FormatError("model checkpoint holds " + std::to_string(c.tensors.size()) + " tensors, expected " +
                          std::to_string(m.parameters().size()),
                      0);
  for (std::size_t k = 0; k < c.tensors.size(); ++k) {
    if (c.tensors[k].shape() != m.parameters()[k].shape())
      throw FormatError("tensor " + std::to_string(k) + " has shape " + to_string(c.tensors[k].shape()) +
                            ", expected " + to_string(m.parameters()[k].shape()),
                        0);
    m.parameters()[k] = c.tensors[k];
  }
  return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const Mlp& model) {
  save_container(path, to_container(model));
}

inline Mlp load_checkpoint(const std::filesystem::path& path) { return from_container(load_container(path)); }

}  // namespace lrd::nn
