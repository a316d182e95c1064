#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sevtrain/rng.hpp"
#include "sevtrain/util.hpp"

namespace sevtrain {

template <typename T>
struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;

  std::size_t size() const { return data.size(); }
};

// Ordered collection of named tensors; the order is the canonical parameter
// order used for initialization, checkpoints and checksums.
template <typename T>
class ParamSet {
 public:
  NamedTensor<T>& add(std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    tensors_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T{0})});
    return tensors_.back();
  }

  NamedTensor<T>& at(std::string_view name) {
    for (auto& t : tensors_) {
      if (t.name == name) return t;
    }
    throw std::runtime_error("params: no tensor named '" + std::string(name) + "'");
  }
  const NamedTensor<T>& at(std::string_view name) const {
    return const_cast<ParamSet*>(this)->at(name);
  }

  std::vector<NamedTensor<T>>& tensors() { return tensors_; }
  const std::vector<NamedTensor<T>>& tensors() const { return tensors_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void zero() {
    for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), T{0});
  }

  // Structural copy with zeroed data (gradient / momentum buffers).
  static ParamSet zeros_like(const ParamSet& other) {
    ParamSet out;
    for (const auto& t : other.tensors_) out.add(t.name, t.shape);
    return out;
  }

  void accumulate(const ParamSet& other) {
    check_same_structure(other);
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      T* a = tensors_[i].data.data();
      const T* b = other.tensors_[i].data.data();
      const std::size_t n = tensors_[i].size();
      for (std::size_t k = 0; k < n; ++k) a[k] += b[k];
    }
  }

  void scale(T s) {
    for (auto& t : tensors_) {
      for (auto& v : t.data) v *= s;
    }
  }

  bool all_finite() const {
    for (const auto& t : tensors_) {
      for (T v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) return false;
      }
    }
    return true;
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const auto& t : tensors_) {
      h = fnv1a(t.name.data(), t.name.size(), h);
      h = fnv1a(t.data.data(), t.data.size() * sizeof(T), h);
    }
    return h;
  }

 private:
  void check_same_structure(const ParamSet& other) const {
    if (tensors_.size() != other.tensors_.size()) {
      throw std::runtime_error("params: structure mismatch");
    }
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].name != other.tensors_[i].name || tensors_[i].size() != other.tensors_[i].size()) {
        throw std::runtime_error("params: structure mismatch at tensor '" + tensors_[i].name + "'");
      }
    }
  }

  std::vector<NamedTensor<T>> tensors_;
};

// Soft label over the fine classes: nonnegative, sums to 1 (within 1e-6).
struct LabelDistribution {
  std::vector<float> weights;
};

LabelDistribution validated_label(std::vector<float> weights);

// --- Cross-entropy over softmax (log-sum-exp stabilized) ---------------------

template <typename T>
T log_sum_exp(std::span<const T> logits) {
  T m = -std::numeric_limits<T>::infinity();
  for (T v : logits) m = std::max(m, v);
  T s = T{0};
  for (T v : logits) s += std::exp(v - m);
  return m + std::log(s);
}

// -sum_i q_i log softmax(logits)_i for one sample.
template <typename T>
T cross_entropy(std::span<const T> logits, std::span<const T> target) {
  if (logits.size() != target.size()) {
    throw std::runtime_error("cross_entropy: shape mismatch");
  }
  for (T v : logits) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw std::runtime_error("cross_entropy: non-finite logit");
    }
  }
  const T lse = log_sum_exp(logits);
  T loss = T{0};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    loss += target[i] * (lse - logits[i]);
  }
  return loss;
}

// Mean loss over a batch of n rows of f logits / targets.
template <typename T>
T cross_entropy_mean(std::span<const T> logits, std::span<const T> targets, int n, int f) {
  T total = T{0};
  for (int i = 0; i < n; ++i) {
    total += cross_entropy<T>(logits.subspan(static_cast<std::size_t>(i) * static_cast<std::size_t>(f), static_cast<std::size_t>(f)),
                              targets.subspan(static_cast<std::size_t>(i) * static_cast<std::size_t>(f), static_cast<std::size_t>(f)));
  }
  return total / static_cast<T>(n);
}

// d(cross_entropy)/d(logits) = softmax(logits) - target, for one sample.
template <typename T>
void cross_entropy_grad(std::span<const T> logits, std::span<const T> target, std::span<T> dlogits) {
  const T lse = log_sum_exp(logits);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    dlogits[i] = std::exp(logits[i] - lse) - target[i];
  }
}

// --- Classifier interface -----------------------------------------------------

// Differentiable classifier over channel-planar images. Forward is
// deterministic given the parameters (evaluation-mode semantics); gradients
// are exact for the soft-label cross-entropy loss.
template <typename T>
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::string architecture() const = 0;          // JSON descriptor
  virtual std::array<int, 3> input_shape() const = 0;    // {channels, h, w}
  virtual int num_classes() const = 0;
  virtual ParamSet<T>& params() = 0;
  virtual const ParamSet<T>& params() const = 0;

  // Logits for one image (pixels of size c*h*w, logits of size num_classes).
  virtual void forward_one(const T* pixels, T* logits) const = 0;

  // Loss and gradients for one image against a soft target (length F).
  // Any of input_grad / param_grad_acc / pred may be null; param gradients
  // are ACCUMULATED into param_grad_acc.
  virtual T loss_grad_one(const T* pixels, const T* target, T* input_grad,
                          ParamSet<T>* param_grad_acc, int* pred) const = 0;
};

// Batched forward; logits_out must hold n*num_classes values.
template <typename T>
void forward(const Classifier<T>& model, std::span<const T> pixels, int n, std::span<T> logits_out);

// Argmax with ties broken by lowest class index.
template <typename T>
int argmax_class(std::span<const T> logits) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
    if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

// --- DeskNet ------------------------------------------------------------------

// Small norm-free convnet: two 3x3 conv/ReLU pairs and a 2x2 maxpool, twice,
// then a 256-wide hidden affine layer and the class head. He-initialized from
// a seeded stream.
template <typename T>
class DeskNet final : public Classifier<T> {
 public:
  DeskNet(int num_classes, int image_size, std::uint64_t init_seed);

  std::string architecture() const override;
  std::array<int, 3> input_shape() const override { return {3, image_size_, image_size_}; }
  int num_classes() const override { return num_classes_; }
  ParamSet<T>& params() override { return params_; }
  const ParamSet<T>& params() const override { return params_; }

  void forward_one(const T* pixels, T* logits) const override;
  T loss_grad_one(const T* pixels, const T* target, T* input_grad,
                  ParamSet<T>* param_grad_acc, int* pred) const override;

  static std::size_t expected_param_count(int num_classes, int image_size);

 private:
  int num_classes_;
  int image_size_;
  ParamSet<T> params_;
};

std::unique_ptr<Classifier<float>> build_reference_net(int num_classes, int image_size,
                                                       std::uint64_t init_seed);

// --- Linear softmax model (flat input), used for analytic checks --------------

template <typename T>
class LinearModel final : public Classifier<T> {
 public:
  LinearModel(int num_classes, std::array<int, 3> input_shape, std::uint64_t init_seed,
              T init_scale = T{0.1});

  std::string architecture() const override;
  std::array<int, 3> input_shape() const override { return shape_; }
  int num_classes() const override { return num_classes_; }
  ParamSet<T>& params() override { return params_; }
  const ParamSet<T>& params() const override { return params_; }

  void forward_one(const T* pixels, T* logits) const override;
  T loss_grad_one(const T* pixels, const T* target, T* input_grad,
                  ParamSet<T>* param_grad_acc, int* pred) const override;

 private:
  int num_classes_;
  std::array<int, 3> shape_;
  std::size_t input_size_;
  ParamSet<T> params_;
};

// --- Optimizer and training state ----------------------------------------------

struct OptimizerConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

struct TrainState {
  std::unique_ptr<Classifier<float>> model;
  ParamSet<float> momentum;  // same structure as model->params()
  int epoch = 0;
  Rng rng{0};

  static TrainState create(std::unique_ptr<Classifier<float>> model, std::uint64_t seed);
};

// Momentum SGD with decoupled-from-nothing classic L2 term:
//   buffer <- mu*buffer + grad + wd*theta ; theta <- theta - lr*buffer.
// Throws on non-finite gradients.
void sgd_step(TrainState& state, const ParamSet<float>& grads, const OptimizerConfig& opt);

// --- Batched loss/gradient with deterministic reduction ------------------------

struct BatchPassStats {
  double loss_sum = 0.0;
};

// Mean-loss parameter gradients over a batch. Work is split into fixed-size
// sample chunks processed in parallel; per-chunk gradient buffers are reduced
// in chunk order, so results do not depend on the worker count. When
// preds_out is non-empty it receives the argmax prediction per sample.
BatchPassStats batch_param_grads(const Classifier<float>& model, std::span<const float> pixels,
                                 std::span<const float> targets, int n,
                                 ParamSet<float>& grads_out, std::span<int> preds_out = {});

// --- Checkpoints ---------------------------------------------------------------
// JSON manifest + flat little-endian float32 blob holding parameters and
// momentum buffers, with a name -> (offset, shape) table in the manifest.

void save_checkpoint(const TrainState& state, const std::filesystem::path& manifest_path,
                     const OptimizerConfig& opt);
TrainState load_checkpoint(const std::filesystem::path& manifest_path,
                           OptimizerConfig* opt_out = nullptr);

}  // namespace sevtrain
