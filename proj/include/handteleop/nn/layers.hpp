#pragma once

// Layers with explicit forward/backward. Parameters carry their gradient
// buffers; activations needed by backward are passed back in by the caller.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "handteleop/nn/kernels.hpp"
#include "handteleop/nn/tensor.hpp"

namespace handteleop::nn {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  /// Gradient storage is allocated lazily by ensure_grad().
  void init(std::string n, std::vector<int> shape) {
    name = std::move(n);
    value = Tensor<T>(std::move(shape));
    grad = Tensor<T>();
  }
  void ensure_grad() {
    if (grad.shape != value.shape) grad = Tensor<T>(value.shape);
  }
  void zero_grad() {
    ensure_grad();
    grad.fill(T(0));
  }
};

/// Non-learned state saved with a model (normalization statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

/// Multiply-accumulate tally of one forward call.
struct MacCounter {
  std::uint64_t macs = 0;
};

void normal_fill(std::span<float> out, double std, std::mt19937_64& rng);
void normal_fill(std::span<double> out, double std, std::mt19937_64& rng);

/// Throws NumericalFailure naming `layer` if any element is NaN or infinite.
template <typename T>
void check_finite(const Tensor<T>& t, const std::string& layer);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad, bool bias);

  void forward(const Tensor<T>& x, Tensor<T>& y, MacCounter& counter) const;
  /// Accumulates parameter gradients; writes dx when non-null.
  void backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx);

  Param<T> weight;  // [out, in*k*k]
  Param<T> bias;    // [out] or empty
  int in_channels = 0, out_channels = 0, kernel = 0, stride = 1, pad = 0;

 private:
  ConvGeometry geometry(const Tensor<T>& x) const;
};

/// Transposed convolution, the adjoint of a conv with the same hyper-parameters.
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad);

  void forward(const Tensor<T>& x, Tensor<T>& y, MacCounter& counter) const;
  void backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx);

  Param<T> weight;  // [in, out*k*k]
  int in_channels = 0, out_channels = 0, kernel = 0, stride = 1, pad = 0;

 private:
  ConvGeometry out_geometry(const Tensor<T>& x) const;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features);

  void forward(const Tensor<T>& x, Tensor<T>& y, MacCounter& counter) const;
  void backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx);

  Param<T> weight;  // [out, in]
  Param<T> bias;    // [out]
  int in_features = 0, out_features = 0;
};

/// Per-channel batch normalization over N, H, W.
template <typename T>
class BatchNorm2d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  struct Cache {
    std::vector<double> mean;
    std::vector<double> inv_std;
  };

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  /// Batch statistics; updates the running estimates.
  void forward_train(const Tensor<T>& x, Tensor<T>& y, Cache& cache);
  void forward_eval(const Tensor<T>& x, Tensor<T>& y) const;
  void backward(const Tensor<T>& x, const Cache& cache, const Tensor<T>& dy, Tensor<T>& dx);

  Param<T> gamma;
  Param<T> beta;
  Buffer<T> running_mean;
  Buffer<T> running_var;
  int channels = 0;
};

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y);
/// dx = dy where y > 0; dx may alias dy.
template <typename T>
void relu_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx);
template <typename T>
void tanh_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void tanh_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx);

/// Affine resampling of single-channel images. theta is N x 6, row-major 2x3 per sample.
/// Source column = t00*u + t01*v + t02*W/2 + (W-1)/2 with u, v centered pixel coordinates,
/// so the identity matrix reproduces the input exactly. Outside samples read `background`.
template <typename T>
void affine_sample(const Tensor<T>& image, const Tensor<T>& theta, T background, Tensor<T>& out);
/// Gradient with respect to theta only.
template <typename T>
void affine_sample_backward(const Tensor<T>& image, const Tensor<T>& theta, T background, const Tensor<T>& dout,
                            Tensor<T>& dtheta);
/// Integer source cell (floor x, floor y) of every output pixel, appended to `cells`.
template <typename T>
void affine_sample_cells(const Tensor<T>& theta, int height, int width, std::vector<std::int32_t>& cells);

}  // namespace handteleop::nn
