#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <new>
#include <span>
#include <vector>

#include "timflow/grid.hpp"

namespace timflow {

/// Architecture and optimiser settings. `conv_layers` counts the hidden
/// ReLU convolutions; the 1-filter 3x3 logistic output convolution is always
/// appended after them.
struct Hyperparams {
  int conv_layers = 3;
  int filters = 32;
  int kernel = 5;
  int dense_layers = 0;
  /// 0 means H*W. Dense outputs are reshaped to one H x W channel, so any
  /// other value is rejected.
  std::size_t dense_width = 0;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int epochs = 20;

  void validate() const;
  bool operator==(const Hyperparams&) const = default;
};

struct LayerShape {
  enum class Kind { Conv, Dense };
  Kind kind = Kind::Conv;
  std::size_t in = 0;   // channels (conv) or features (dense)
  std::size_t out = 0;
  std::size_t kernel = 0;  // conv only
  bool logistic = false;   // otherwise ReLU
};

/// 64-byte aligned storage. Eigen picks its vectorised peeling from buffer
/// addresses, so fixed alignment keeps float results independent of where
/// the heap happens to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  AlignedVector<T> values;
};

/// Convolutional surrogate. Weight tensors are ordered layer by layer as
/// (kernel or matrix, bias); conv kernels are [out, in, k, k] and dense
/// matrices [out, in].
template <typename T>
class Network {
 public:
  /// All weights zero.
  Network(const Hyperparams& hp, const GridSpec& resolution, double input_scale);

  /// He-uniform for ReLU layers, Glorot-uniform for the output layer,
  /// zero biases.
  static Network initialized(const Hyperparams& hp, const GridSpec& resolution,
                             double input_scale, std::uint64_t seed);

  const Hyperparams& hyperparams() const noexcept { return hp_; }
  Hyperparams& hyperparams() noexcept { return hp_; }
  const GridSpec& resolution() const noexcept { return resolution_; }
  double input_scale() const noexcept { return input_scale_; }
  const std::vector<LayerShape>& layers() const noexcept { return layers_; }
  const std::vector<Tensor<T>>& weights() const noexcept { return weights_; }
  std::vector<Tensor<T>>& weights() noexcept { return weights_; }
  std::size_t parameter_count() const noexcept;

  template <typename U>
  Network<U> cast() const {
    Network<U> out(hp_, resolution_, input_scale_);
    for (std::size_t i = 0; i < weights_.size(); ++i)
      for (std::size_t j = 0; j < weights_[i].values.size(); ++j)
        out.weights()[i].values[j] = static_cast<U>(weights_[i].values[j]);
    return out;
  }

  bool operator==(const Network&) const;

 private:
  Hyperparams hp_;
  GridSpec resolution_;
  double input_scale_;
  std::vector<LayerShape> layers_;
  std::vector<Tensor<T>> weights_;
};

using SurrogateModel = Network<float>;

/// Layer list implied by hyperparameters at a given resolution.
std::vector<LayerShape> layer_shapes(const Hyperparams& hp, const GridSpec& resolution);

/// Reusable scratch state for one network evaluation at a time. Not
/// thread-safe; inference helpers below create one per call.
template <typename T>
class Evaluator {
 public:
  explicit Evaluator(const Network<T>& net);
  ~Evaluator();
  Evaluator(Evaluator&&) noexcept;
  Evaluator& operator=(Evaluator&&) noexcept;

  /// Runs the forward pass on a pre-scaled input of H*W values; returns the
  /// logistic output (H*W values, owned by the evaluator).
  std::span<const T> forward(std::span<const T> scaled_input);

  /// Forward + reverse pass against target; adds d(loss)/d(weights) into
  /// grads and returns the sample's clamped BCE loss.
  double accumulate_gradients(std::span<const T> scaled_input, std::span<const T> target,
                              std::vector<Tensor<T>>& grads);

 private:
  struct State;
  const Network<T>* net_;
  std::unique_ptr<State> state_;
};

/// Divides amounts by the model's input scale after checking resolution.
template <typename T>
std::vector<T> scaled_input(const Network<T>& net, const TimGrid& input);

/// Logistic output grid with cells in (0, 1). Throws ShapeMismatch.
template <typename T>
TimGrid forward(const Network<T>& net, const TimGrid& input);

/// Mean over cells of -[t ln p + (1 - t) ln(1 - p)], p clamped to
/// [1e-7, 1 - 1e-7].
double loss_bce(const TimGrid& prediction, const TimGrid& target);

template <typename T>
struct Gradients {
  std::vector<Tensor<T>> tensors;  // same layout as Network::weights()
  double loss = 0.0;
};

/// Gradient of loss_bce(forward(net, input), target) with respect to every
/// weight tensor. The logistic-output gradient is taken unclamped, p - t.
template <typename T>
Gradients<T> backward(const Network<T>& net, const TimGrid& input, const TimGrid& target);

template <typename T>
std::vector<Tensor<T>> zeros_like(const std::vector<Tensor<T>>& tensors);

}  // namespace timflow
