#include "timflow/network.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "timflow/error.hpp"

namespace timflow {

namespace {

constexpr double kBceEpsilon = 1e-7;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
T logistic(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

double bce_term(double p, double t) {
  p = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  return -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
}

// Unfolds a [channels, H, W] image into a [channels*k*k, H*W] matrix for
// same-size zero-padded convolution.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t H, std::size_t W, std::size_t k,
            T* col) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t hw = H * W;
  for (std::size_t ci = 0; ci < channels; ++ci) {
    const T* src = image + ci * hw;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((ci * k + ky) * k + kx) * hw;
        const long dy = static_cast<long>(ky) - pad;
        const long dx = static_cast<long>(kx) - pad;
        const long x_lo = std::max(0L, -dx);
        const long x_hi = std::min(static_cast<long>(W), static_cast<long>(W) - dx);
        for (long y = 0; y < static_cast<long>(H); ++y) {
          T* out = row + y * static_cast<long>(W);
          const long sy = y + dy;
          if (sy < 0 || sy >= static_cast<long>(H) || x_lo >= x_hi) {
            std::fill(out, out + W, T(0));
            continue;
          }
          std::fill(out, out + x_lo, T(0));
          const T* in = src + sy * static_cast<long>(W) + dx;
          std::copy(in + x_lo, in + x_hi, out + x_lo);
          std::fill(out + x_hi, out + W, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto the image.
template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t H, std::size_t W, std::size_t k,
            T* image) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t hw = H * W;
  std::fill(image, image + channels * hw, T(0));
  for (std::size_t ci = 0; ci < channels; ++ci) {
    T* dst = image + ci * hw;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((ci * k + ky) * k + kx) * hw;
        const long dy = static_cast<long>(ky) - pad;
        const long dx = static_cast<long>(kx) - pad;
        const long x_lo = std::max(0L, -dx);
        const long x_hi = std::min(static_cast<long>(W), static_cast<long>(W) - dx);
        for (long y = 0; y < static_cast<long>(H); ++y) {
          const long sy = y + dy;
          if (sy < 0 || sy >= static_cast<long>(H)) continue;
          const T* in = row + y * static_cast<long>(W);
          T* out = dst + sy * static_cast<long>(W) + dx;
          for (long x = x_lo; x < x_hi; ++x) out[x] += in[x];
        }
      }
    }
  }
}

}  // namespace

void Hyperparams::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidArgument, what); };
  if (conv_layers < 0) fail("conv_layers must be non-negative");
  if (conv_layers > 0 && filters < 1) fail("filters must be positive");
  if (kernel < 1 || kernel % 2 == 0) fail("kernel must be a positive odd number");
  if (dense_layers < 0) fail("dense_layers must be non-negative");
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be >= 0");
  if (epochs < 0) fail("epochs must be non-negative");
}

std::vector<LayerShape> layer_shapes(const Hyperparams& hp, const GridSpec& resolution) {
  hp.validate();
  resolution.validate();
  const std::size_t hw = resolution.height * resolution.width;
  if (hp.dense_layers > 0 && hp.dense_width != 0 && hp.dense_width != hw) {
    throw Error(ErrorKind::InvalidArgument,
                "dense_width must equal H*W = " + std::to_string(hw) + " to reshape onto the grid");
  }
  std::vector<LayerShape> layers;
  std::size_t channels = 1;
  for (int i = 0; i < hp.conv_layers; ++i) {
    layers.push_back({LayerShape::Kind::Conv, channels, static_cast<std::size_t>(hp.filters),
                      static_cast<std::size_t>(hp.kernel), false});
    channels = static_cast<std::size_t>(hp.filters);
  }
  std::size_t features = channels * hw;
  for (int i = 0; i < hp.dense_layers; ++i) {
    layers.push_back({LayerShape::Kind::Dense, features, hw, 0, false});
    features = hw;
    channels = 1;
  }
  layers.push_back({LayerShape::Kind::Conv, channels, 1, 3, true});
  return layers;
}

template <typename T>
Network<T>::Network(const Hyperparams& hp, const GridSpec& resolution, double input_scale)
    : hp_(hp), resolution_(resolution), input_scale_(input_scale), layers_(layer_shapes(hp, resolution)) {
  if (!(input_scale > 0.0) || !std::isfinite(input_scale)) {
    throw Error(ErrorKind::InvalidArgument, "input_scale must be positive");
  }
  for (const LayerShape& l : layers_) {
    if (l.kind == LayerShape::Kind::Conv) {
      weights_.push_back({{l.out, l.in, l.kernel, l.kernel},
                          AlignedVector<T>(l.out * l.in * l.kernel * l.kernel, T(0))});
    } else {
      weights_.push_back({{l.out, l.in}, AlignedVector<T>(l.out * l.in, T(0))});
    }
    weights_.push_back({{l.out}, AlignedVector<T>(l.out, T(0))});
  }
}

template <typename T>
Network<T> Network<T>::initialized(const Hyperparams& hp, const GridSpec& resolution,
                                   double input_scale, std::uint64_t seed) {
  Network net(hp, resolution, input_scale);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x1a17u};
  std::mt19937_64 rng(seq);
  for (std::size_t i = 0; i < net.layers_.size(); ++i) {
    const LayerShape& l = net.layers_[i];
    const double taps = l.kind == LayerShape::Kind::Conv ? double(l.kernel * l.kernel) : 1.0;
    const double fan_in = double(l.in) * taps;
    const double fan_out = double(l.out) * taps;
    const double limit = l.logistic ? std::sqrt(6.0 / (fan_in + fan_out)) : std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (T& w : net.weights_[2 * i].values) w = static_cast<T>(dist(rng));
  }
  return net;
}

template <typename T>
std::size_t Network<T>::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : weights_) n += t.values.size();
  return n;
}

template <typename T>
bool Network<T>::operator==(const Network& other) const {
  if (!(hp_ == other.hp_) || !(resolution_ == other.resolution_) ||
      input_scale_ != other.input_scale_ || weights_.size() != other.weights_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (weights_[i].shape != other.weights_[i].shape ||
        weights_[i].values != other.weights_[i].values) {
      return false;
    }
  }
  return true;
}

template <typename T>
struct Evaluator<T>::State {
  // acts[l] is the input of layer l; acts.back() is the network output.
  std::vector<AlignedVector<T>> acts;
  std::vector<AlignedVector<T>> pre;
  std::vector<AlignedVector<T>> cols;
  AlignedVector<T> dcol;
  AlignedVector<T> grad_a;
  AlignedVector<T> grad_b;
};

template <typename T>
Evaluator<T>::Evaluator(const Network<T>& net) : net_(&net), state_(std::make_unique<State>()) {
  const std::size_t hw = net.resolution().height * net.resolution().width;
  const auto& layers = net.layers();
  state_->acts.resize(layers.size() + 1);
  state_->pre.resize(layers.size());
  state_->cols.resize(layers.size());
  state_->acts[0].resize(hw);
  std::size_t max_feat = hw;
  std::size_t max_col = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerShape& l = layers[i];
    const std::size_t out_size = l.kind == LayerShape::Kind::Conv ? l.out * hw : l.out;
    state_->pre[i].resize(out_size);
    state_->acts[i + 1].resize(out_size);
    if (l.kind == LayerShape::Kind::Conv) {
      state_->cols[i].resize(l.in * l.kernel * l.kernel * hw);
      max_col = std::max(max_col, state_->cols[i].size());
    }
    max_feat = std::max({max_feat, out_size, state_->acts[i].size()});
  }
  state_->dcol.resize(max_col);
  state_->grad_a.resize(max_feat);
  state_->grad_b.resize(max_feat);
}

template <typename T>
Evaluator<T>::~Evaluator() = default;
template <typename T>
Evaluator<T>::Evaluator(Evaluator&&) noexcept = default;
template <typename T>
Evaluator<T>& Evaluator<T>::operator=(Evaluator&&) noexcept = default;

template <typename T>
std::span<const T> Evaluator<T>::forward(std::span<const T> scaled_input) {
  const Network<T>& net = *net_;
  const std::size_t H = net.resolution().height;
  const std::size_t W = net.resolution().width;
  const std::size_t hw = H * W;
  if (scaled_input.size() != hw) throw Error(ErrorKind::ShapeMismatch, "input size does not match model");
  State& s = *state_;
  std::copy(scaled_input.begin(), scaled_input.end(), s.acts[0].begin());

  const auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerShape& l = layers[i];
    const T* wdata = net.weights()[2 * i].values.data();
    const T* bdata = net.weights()[2 * i + 1].values.data();
    Eigen::Map<const Vec<T>> bias(bdata, static_cast<Eigen::Index>(l.out));
    if (l.kind == LayerShape::Kind::Conv) {
      const auto K = static_cast<Eigen::Index>(l.in * l.kernel * l.kernel);
      im2col(s.acts[i].data(), l.in, H, W, l.kernel, s.cols[i].data());
      Eigen::Map<const RowMat<T>> wm(wdata, static_cast<Eigen::Index>(l.out), K);
      Eigen::Map<const RowMat<T>> col(s.cols[i].data(), K, static_cast<Eigen::Index>(hw));
      Eigen::Map<RowMat<T>> z(s.pre[i].data(), static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(hw));
      z.noalias() = wm * col;
      z.colwise() += bias;
    } else {
      Eigen::Map<const RowMat<T>> wm(wdata, static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
      Eigen::Map<const Vec<T>> x(s.acts[i].data(), static_cast<Eigen::Index>(l.in));
      Eigen::Map<Vec<T>> z(s.pre[i].data(), static_cast<Eigen::Index>(l.out));
      z.noalias() = wm * x;
      z += bias;
    }
    const AlignedVector<T>& z = s.pre[i];
    AlignedVector<T>& a = s.acts[i + 1];
    if (l.logistic) {
      // Keep outputs strictly inside (0, 1) even where the logistic saturates.
      constexpr T lo = std::numeric_limits<T>::min();
      constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / 2;
      for (std::size_t j = 0; j < z.size(); ++j) a[j] = std::clamp(logistic(z[j]), lo, hi);
    } else {
      for (std::size_t j = 0; j < z.size(); ++j) a[j] = z[j] > T(0) ? z[j] : T(0);
    }
  }
  return s.acts.back();
}

template <typename T>
double Evaluator<T>::accumulate_gradients(std::span<const T> scaled_input, std::span<const T> target,
                                          std::vector<Tensor<T>>& grads) {
  const Network<T>& net = *net_;
  const std::size_t H = net.resolution().height;
  const std::size_t W = net.resolution().width;
  const std::size_t hw = H * W;
  if (target.size() != hw) throw Error(ErrorKind::ShapeMismatch, "target size does not match model");
  const std::span<const T> out = forward(scaled_input);
  State& s = *state_;

  double loss = 0.0;
  // d(loss)/dz at the logistic output; grad_a holds dz for the current layer.
  const T inv_n = T(1) / static_cast<T>(hw);
  for (std::size_t j = 0; j < hw; ++j) {
    loss += bce_term(static_cast<double>(out[j]), static_cast<double>(target[j]));
    s.grad_a[j] = (out[j] - target[j]) * inv_n;
  }
  loss /= static_cast<double>(hw);

  const auto& layers = net.layers();
  for (std::size_t ii = layers.size(); ii-- > 0;) {
    const LayerShape& l = layers[ii];
    const std::size_t out_size = s.pre[ii].size();
    // grad_a currently holds d(loss)/d(activation) of layer ii (or dz for the
    // output layer). Convert to dz through the ReLU mask.
    if (!l.logistic) {
      for (std::size_t j = 0; j < out_size; ++j)
        if (!(s.pre[ii][j] > T(0))) s.grad_a[j] = T(0);
    }
    T* gw = grads[2 * ii].values.data();
    T* gb = grads[2 * ii + 1].values.data();
    const T* wdata = net.weights()[2 * ii].values.data();
    Eigen::Map<Vec<T>> db(gb, static_cast<Eigen::Index>(l.out));

    if (l.kind == LayerShape::Kind::Conv) {
      const auto K = static_cast<Eigen::Index>(l.in * l.kernel * l.kernel);
      Eigen::Map<const RowMat<T>> dz(s.grad_a.data(), static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(hw));
      Eigen::Map<const RowMat<T>> col(s.cols[ii].data(), K, static_cast<Eigen::Index>(hw));
      Eigen::Map<RowMat<T>> dw(gw, static_cast<Eigen::Index>(l.out), K);
      dw.noalias() += dz * col.transpose();
      db += dz.rowwise().sum();
      if (ii > 0) {
        Eigen::Map<const RowMat<T>> wm(wdata, static_cast<Eigen::Index>(l.out), K);
        Eigen::Map<RowMat<T>> dcol(s.dcol.data(), K, static_cast<Eigen::Index>(hw));
        dcol.noalias() = wm.transpose() * dz;
        col2im(s.dcol.data(), l.in, H, W, l.kernel, s.grad_b.data());
      }
    } else {
      Eigen::Map<const Vec<T>> dz(s.grad_a.data(), static_cast<Eigen::Index>(l.out));
      Eigen::Map<const Vec<T>> x(s.acts[ii].data(), static_cast<Eigen::Index>(l.in));
      Eigen::Map<RowMat<T>> dw(gw, static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
      dw.noalias() += dz * x.transpose();
      db += dz;
      if (ii > 0) {
        Eigen::Map<const RowMat<T>> wm(wdata, static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
        Eigen::Map<Vec<T>> dx(s.grad_b.data(), static_cast<Eigen::Index>(l.in));
        dx.noalias() = wm.transpose() * dz;
      }
    }
    std::swap(s.grad_a, s.grad_b);
  }
  return loss;
}

template <typename T>
std::vector<T> scaled_input(const Network<T>& net, const TimGrid& input) {
  if (input.height() != net.resolution().height || input.width() != net.resolution().width) {
    throw Error(ErrorKind::ShapeMismatch,
                "model expects " + std::to_string(net.resolution().height) + "x" +
                    std::to_string(net.resolution().width) + ", got " + std::to_string(input.height()) +
                    "x" + std::to_string(input.width()));
  }
  std::vector<T> x(input.size());
  const double inv = 1.0 / net.input_scale();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(input.amounts()[i] * inv);
  return x;
}

template <typename T>
TimGrid forward(const Network<T>& net, const TimGrid& input) {
  const std::vector<T> x = scaled_input(net, input);
  Evaluator<T> eval(net);
  const std::span<const T> y = eval.forward(x);
  std::vector<double> out(y.begin(), y.end());
  return TimGrid(input.height(), input.width(), std::move(out));
}

double loss_bce(const TimGrid& prediction, const TimGrid& target) {
  if (prediction.height() != target.height() || prediction.width() != target.width()) {
    throw Error(ErrorKind::ShapeMismatch, "prediction and target resolutions differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    total += bce_term(prediction.amounts()[i], target.amounts()[i]);
  }
  return total / static_cast<double>(prediction.size());
}

template <typename T>
std::vector<Tensor<T>> zeros_like(const std::vector<Tensor<T>>& tensors) {
  std::vector<Tensor<T>> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back({t.shape, AlignedVector<T>(t.values.size(), T(0))});
  return out;
}

template <typename T>
Gradients<T> backward(const Network<T>& net, const TimGrid& input, const TimGrid& target) {
  if (target.height() != input.height() || target.width() != input.width()) {
    throw Error(ErrorKind::ShapeMismatch, "input and target resolutions differ");
  }
  const std::vector<T> x = scaled_input(net, input);
  std::vector<T> t(target.amounts().begin(), target.amounts().end());
  Gradients<T> g{zeros_like(net.weights()), 0.0};
  Evaluator<T> eval(net);
  g.loss = eval.accumulate_gradients(x, t, g.tensors);
  return g;
}

template class Network<float>;
template class Network<double>;
template class Evaluator<float>;
template class Evaluator<double>;
template std::vector<float> scaled_input(const Network<float>&, const TimGrid&);
template std::vector<double> scaled_input(const Network<double>&, const TimGrid&);
template TimGrid forward(const Network<float>&, const TimGrid&);
template TimGrid forward(const Network<double>&, const TimGrid&);
template Gradients<float> backward(const Network<float>&, const TimGrid&, const TimGrid&);
template Gradients<double> backward(const Network<double>&, const TimGrid&, const TimGrid&);
template std::vector<Tensor<float>> zeros_like(const std::vector<Tensor<float>>&);
template std::vector<Tensor<double>> zeros_like(const std::vector<Tensor<double>>&);

}  // namespace timflow
