#include "handteleop/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "handteleop/errors.hpp"

namespace handteleop::nn {

namespace kp = kernels::parallel;

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

template <typename T>
void fill_normal_impl(std::span<T> out, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, std);
  for (auto& v : out) v = static_cast<T>(d(rng));
}

template <typename T>
void expect_shape(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.shape.size() != rank) throw ContractError(std::string(what) + ": unexpected tensor rank " + shape_string(t.shape));
}

}  // namespace

void normal_fill(std::span<float> out, double std, std::mt19937_64& rng) { fill_normal_impl(out, std, rng); }
void normal_fill(std::span<double> out, double std, std::mt19937_64& rng) { fill_normal_impl(out, std, rng); }

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& layer) {
  const std::size_t n = t.size();
  const T* p = t.data.data();
  bool bad = false;
#pragma omp parallel for reduction(|| : bad) schedule(static)
  for (std::size_t i = 0; i < n; ++i) bad = bad || !std::isfinite(p[i]);
  if (bad) throw NumericalFailure("non-finite activation in layer " + layer);
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_c, int out_c, int k, int s, int p, bool with_bias)
    : in_channels(in_c), out_channels(out_c), kernel(k), stride(s), pad(p) {
  weight.init(name + ".weight", {out_c, in_c * k * k});
  if (with_bias) bias.init(name + ".bias", {out_c});
}

template <typename T>
ConvGeometry Conv2d<T>::geometry(const Tensor<T>& x) const {
  expect_shape(x, 4, "conv2d");
  if (x.dim(1) != in_channels) throw ContractError("conv2d: channel mismatch " + shape_string(x.shape));
  return {in_channels, x.dim(2), x.dim(3), kernel, stride, pad};
}

template <typename T>
void Conv2d<T>::forward(const Tensor<T>& x, Tensor<T>& y, MacCounter& counter) const {
  const auto g = geometry(x);
  const int n = x.dim(0);
  const int hw = static_cast<int>(g.col_cols());
  const int kk = static_cast<int>(g.col_rows());
  y.resize({n, out_channels, g.out_height(), g.out_width()});
  std::vector<T> col(g.col_rows() * g.col_cols());
  for (int b = 0; b < n; ++b) {
    kp::im2col<T>(g, x.sample(b), col);
    auto yb = y.sample(b);
    kp::gemm<T>(Trans::kNo, Trans::kNo, out_channels, hw, kk, T(1), weight.value.span(), kk, col, hw, T(0), yb, hw);
    if (!bias.value.empty())
      for (int c = 0; c < out_channels; ++c)
        for (int i = 0; i < hw; ++i) yb[static_cast<std::size_t>(c) * hw + i] += bias.value.data[c];
  }
  counter.macs += static_cast<std::uint64_t>(n) * out_channels * hw * kk;
}

template <typename T>
void Conv2d<T>::backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx) {
  const auto g = geometry(x);
  const int n = x.dim(0);
  const int hw = static_cast<int>(g.col_cols());
  const int kk = static_cast<int>(g.col_rows());
  std::vector<T> col(g.col_rows() * g.col_cols());
  if (dx) dx->resize(x.shape);
  for (int b = 0; b < n; ++b) {
    const auto dyb = dy.sample(b);
    kp::im2col<T>(g, x.sample(b), col);
    kp::gemm<T>(Trans::kNo, Trans::kYes, out_channels, kk, hw, T(1), dyb, hw, col, hw, T(1), weight.grad.span(), kk);
    if (!bias.value.empty())
      for (int c = 0; c < out_channels; ++c) {
        T s = 0;
        for (int i = 0; i < hw; ++i) s += dyb[static_cast<std::size_t>(c) * hw + i];
        bias.grad.data[c] += s;
      }
    if (dx) {
      kp::gemm<T>(Trans::kYes, Trans::kNo, kk, hw, out_channels, T(1), weight.value.span(), kk, dyb, hw, T(0), col, hw);
      kp::col2im<T>(g, col, dx->sample(b));
    }
  }
}

// ---------------------------------------------------------------------------
// ConvTranspose2d

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(const std::string& name, int in_c, int out_c, int k, int s, int p)
    : in_channels(in_c), out_channels(out_c), kernel(k), stride(s), pad(p) {
  weight.init(name + ".weight", {in_c, out_c * k * k});
}

template <typename T>
ConvGeometry ConvTranspose2d<T>::out_geometry(const Tensor<T>& x) const {
  expect_shape(x, 4, "conv_transpose2d");
  if (x.dim(1) != in_channels) throw ContractError("conv_transpose2d: channel mismatch " + shape_string(x.shape));
  const int oh = (x.dim(2) - 1) * stride - 2 * pad + kernel;
  const int ow = (x.dim(3) - 1) * stride - 2 * pad + kernel;
  ConvGeometry g{out_channels, oh, ow, kernel, stride, pad};
  if (g.out_height() != x.dim(2) || g.out_width() != x.dim(3)) throw ContractError("conv_transpose2d: bad geometry");
  return g;
}

template <typename T>
void ConvTranspose2d<T>::forward(const Tensor<T>& x, Tensor<T>& y, MacCounter& counter) const {
  const auto g = out_geometry(x);
  const int n = x.dim(0);
  const int hw = x.dim(2) * x.dim(3);
  const int rows = static_cast<int>(g.col_rows());
  y.resize({n, out_channels, g.height, g.width});
  std::vector<T> col(g.col_rows() * g.col_cols());
  for (int b = 0; b < n; ++b) {
    kp::gemm<T>(Trans::kYes, Trans::kNo, rows, hw, in_channels, T(1), weight.value.span(), rows, x.sample(b), hw, T(0),
                col, hw);
    kp::col2im<T>(g, col, y.sample(b));
  }
  counter.macs += static_cast<std::uint64_t>(n) * rows * hw * in_channels;
}

template <typename T>
void ConvTranspose2d<T>::backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx) {
  const auto g = out_geometry(x);
  const int n = x.dim(0);
  const int hw = x.dim(2) * x.dim(3);
  const int rows = static_cast<int>(g.col_rows());
  std::vector<T> col(g.col_rows() * g.col_cols());
  if (dx) dx->resize(x.shape);
  for (int b = 0; b < n; ++b) {
    kp::im2col<T>(g, dy.sample(b), col);
    kp::gemm<T>(Trans::kNo, Trans::kYes, in_channels, rows, hw, T(1), x.sample(b), hw, col, hw, T(1),
                weight.grad.span(), rows);
    if (dx)
      kp::gemm<T>(Trans::kNo, Trans::kNo, in_channels, hw, rows, T(1), weight.value.span(), rows, col, hw, T(0),
                  dx->sample(b), hw);
  }
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(const std::string& name, int in_f, int out_f) : in_features(in_f), out_features(out_f) {
  weight.init(name + ".weight", {out_f, in_f});
  bias.init(name + ".bias", {out_f});
}

template <typename T>
void Linear<T>::forward(const Tensor<T>& x, Tensor<T>& y, MacCounter& counter) const {
  const int n = x.dim(0);
  if (static_cast<int>(x.stride0()) != in_features)
    throw ContractError("linear: expected " + std::to_string(in_features) + " inputs, got " + shape_string(x.shape));
  y.resize({n, out_features});
  for (int b = 0; b < n; ++b) std::copy(bias.value.data.begin(), bias.value.data.end(), y.sample(b).begin());
  kp::gemm<T>(Trans::kNo, Trans::kYes, n, out_features, in_features, T(1), x.span(), in_features, weight.value.span(),
              in_features, T(1), y.span(), out_features);
  counter.macs += static_cast<std::uint64_t>(n) * out_features * in_features;
}

template <typename T>
void Linear<T>::backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx) {
  const int n = x.dim(0);
  kp::gemm<T>(Trans::kYes, Trans::kNo, out_features, in_features, n, T(1), dy.span(), out_features, x.span(),
              in_features, T(1), weight.grad.span(), in_features);
  for (int b = 0; b < n; ++b) {
    const auto d = dy.sample(b);
    for (int o = 0; o < out_features; ++o) bias.grad.data[o] += d[o];
  }
  if (dx) {
    dx->resize(x.shape);
    kp::gemm<T>(Trans::kNo, Trans::kNo, n, in_features, out_features, T(1), dy.span(), out_features,
                weight.value.span(), in_features, T(0), dx->span(), in_features);
  }
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int c) : channels(c) {
  gamma.init(name + ".gamma", {c});
  gamma.value.fill(T(1));
  beta.init(name + ".beta", {c});
  running_mean = {name + ".running_mean", Tensor<T>({c}, T(0))};
  running_var = {name + ".running_var", Tensor<T>({c}, T(1))};
}

template <typename T>
void BatchNorm2d<T>::forward_train(const Tensor<T>& x, Tensor<T>& y, Cache& cache) {
  expect_shape(x, 4, "batchnorm");
  const int n = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(n) * hw;
  y.resize(x.shape);
  cache.mean.assign(channels, 0.0);
  cache.inv_std.assign(channels, 0.0);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (int b = 0; b < n; ++b) {
      const T* p = x.data.data() + (static_cast<std::size_t>(b) * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) sum += p[i];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (int b = 0; b < n; ++b) {
      const T* p = x.data.data() + (static_cast<std::size_t>(b) * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / count;
    const double inv_std = 1.0 / std::sqrt(var + kEps);
    cache.mean[c] = mean;
    cache.inv_std[c] = inv_std;
    const double g = gamma.value.data[c], bt = beta.value.data[c];
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) y.data[off + i] = static_cast<T>(g * ((x.data[off + i] - mean) * inv_std) + bt);
    }
    const double unbiased = count > 1 ? sq / (count - 1) : var;
    running_mean.value.data[c] = static_cast<T>((1 - kMomentum) * running_mean.value.data[c] + kMomentum * mean);
    running_var.value.data[c] = static_cast<T>((1 - kMomentum) * running_var.value.data[c] + kMomentum * unbiased);
  }
}

template <typename T>
void BatchNorm2d<T>::forward_eval(const Tensor<T>& x, Tensor<T>& y) const {
  expect_shape(x, 4, "batchnorm");
  const int n = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  y.resize(x.shape);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const double inv_std = 1.0 / std::sqrt(static_cast<double>(running_var.value.data[c]) + kEps);
    const double scale = gamma.value.data[c] * inv_std;
    const double shift = beta.value.data[c] - running_mean.value.data[c] * scale;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) y.data[off + i] = static_cast<T>(x.data[off + i] * scale + shift);
    }
  }
}

template <typename T>
void BatchNorm2d<T>::backward(const Tensor<T>& x, const Cache& cache, const Tensor<T>& dy, Tensor<T>& dx) {
  const int n = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(n) * hw;
  dx.resize(x.shape);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const double mean = cache.mean[c], inv_std = cache.inv_std[c];
    double dgamma = 0.0, dbeta = 0.0;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double xhat = (x.data[off + i] - mean) * inv_std;
        dgamma += dy.data[off + i] * xhat;
        dbeta += dy.data[off + i];
      }
    }
    gamma.grad.data[c] += static_cast<T>(dgamma);
    beta.grad.data[c] += static_cast<T>(dbeta);
    const double k = gamma.value.data[c] * inv_std / count;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double xhat = (x.data[off + i] - mean) * inv_std;
        dx.data[off + i] = static_cast<T>(k * (count * dy.data[off + i] - dbeta - xhat * dgamma));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Element-wise

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y) {
  if (&x != &y) y.resize(x.shape);
  const std::size_t n = x.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
}

template <typename T>
void relu_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx) {
  if (&dx != &dy) dx.resize(dy.shape);
  const std::size_t n = y.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) dx.data[i] = y.data[i] > T(0) ? dy.data[i] : T(0);
}

template <typename T>
void tanh_forward(const Tensor<T>& x, Tensor<T>& y) {
  if (&x != &y) y.resize(x.shape);
  const std::size_t n = x.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) y.data[i] = std::tanh(x.data[i]);
}

template <typename T>
void tanh_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx) {
  if (&dx != &dy) dx.resize(dy.shape);
  const std::size_t n = y.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) dx.data[i] = dy.data[i] * (T(1) - y.data[i] * y.data[i]);
}

// ---------------------------------------------------------------------------
// Affine sampling

namespace {

template <typename T>
struct SamplePoint {
  T sx, sy;  // source column, row
};

template <typename T>
inline SamplePoint<T> source_point(const T* th, int row, int col, int h, int w) {
  const T cu = T(w - 1) / 2, cv = T(h - 1) / 2;
  const T u = T(col) - cu, v = T(row) - cv;
  return {th[0] * u + th[1] * v + th[2] * (T(w) / 2) + cu, th[3] * u + th[4] * v + th[5] * (T(h) / 2) + cv};
}

template <typename T>
inline T pixel_or(const T* img, int r, int c, int h, int w, T background) {
  return (r >= 0 && r < h && c >= 0 && c < w) ? img[static_cast<std::size_t>(r) * w + c] : background;
}

}  // namespace

template <typename T>
void affine_sample(const Tensor<T>& image, const Tensor<T>& theta, T background, Tensor<T>& out) {
  expect_shape(image, 4, "affine_sample");
  if (image.dim(1) != 1 || theta.size() != static_cast<std::size_t>(image.dim(0)) * 6)
    throw ContractError("affine_sample expects N x 1 x H x W images and N x 6 parameters");
  const int n = image.dim(0), h = image.dim(2), w = image.dim(3);
  out.resize(image.shape);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b)
    for (int r = 0; r < h; ++r) {
      const T* img = image.data.data() + static_cast<std::size_t>(b) * h * w;
      const T* th = theta.data.data() + static_cast<std::size_t>(b) * 6;
      T* o = out.data.data() + static_cast<std::size_t>(b) * h * w + static_cast<std::size_t>(r) * w;
      for (int c = 0; c < w; ++c) {
        const auto p = source_point(th, r, c, h, w);
        const T fx0 = std::floor(p.sx), fy0 = std::floor(p.sy);
        const T ax = p.sx - fx0, ay = p.sy - fy0;
        // far outside: avoid int overflow
        if (!(fx0 > T(-2) && fx0 < T(w + 1) && fy0 > T(-2) && fy0 < T(h + 1))) {
          o[c] = background;
          continue;
        }
        const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
        const T top = (T(1) - ax) * pixel_or(img, y0, x0, h, w, background) + ax * pixel_or(img, y0, x0 + 1, h, w, background);
        const T bot =
            (T(1) - ax) * pixel_or(img, y0 + 1, x0, h, w, background) + ax * pixel_or(img, y0 + 1, x0 + 1, h, w, background);
        o[c] = (T(1) - ay) * top + ay * bot;
      }
    }
}

template <typename T>
void affine_sample_backward(const Tensor<T>& image, const Tensor<T>& theta, T background, const Tensor<T>& dout,
                            Tensor<T>& dtheta) {
  const int n = image.dim(0), h = image.dim(2), w = image.dim(3);
  dtheta.resize({n, 6});
#pragma omp parallel for schedule(static)
  for (int b = 0; b < n; ++b) {
    const T* img = image.data.data() + static_cast<std::size_t>(b) * h * w;
    const T* th = theta.data.data() + static_cast<std::size_t>(b) * 6;
    const T* d = dout.data.data() + static_cast<std::size_t>(b) * h * w;
    double g[6] = {0, 0, 0, 0, 0, 0};
    const double cu = (w - 1) / 2.0, cv = (h - 1) / 2.0;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const auto p = source_point(th, r, c, h, w);
        const T fx0 = std::floor(p.sx), fy0 = std::floor(p.sy);
        if (!(fx0 > T(-2) && fx0 < T(w + 1) && fy0 > T(-2) && fy0 < T(h + 1))) continue;
        const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
        const double ax = p.sx - fx0, ay = p.sy - fy0;
        const double i00 = pixel_or(img, y0, x0, h, w, background), i01 = pixel_or(img, y0, x0 + 1, h, w, background);
        const double i10 = pixel_or(img, y0 + 1, x0, h, w, background), i11 = pixel_or(img, y0 + 1, x0 + 1, h, w, background);
        const double dsx = (1 - ay) * (i01 - i00) + ay * (i11 - i10);
        const double dsy = (1 - ax) * (i10 - i00) + ax * (i11 - i01);
        const double go = d[static_cast<std::size_t>(r) * w + c];
        const double u = c - cu, v = r - cv;
        g[0] += go * dsx * u;
        g[1] += go * dsx * v;
        g[2] += go * dsx * (w / 2.0);
        g[3] += go * dsy * u;
        g[4] += go * dsy * v;
        g[5] += go * dsy * (h / 2.0);
      }
    for (int k = 0; k < 6; ++k) dtheta.data[static_cast<std::size_t>(b) * 6 + k] = static_cast<T>(g[k]);
  }
}

template <typename T>
void affine_sample_cells(const Tensor<T>& theta, int height, int width, std::vector<std::int32_t>& cells) {
  const int n = static_cast<int>(theta.size() / 6);
  cells.reserve(cells.size() + static_cast<std::size_t>(n) * height * width * 2);
  for (int b = 0; b < n; ++b)
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) {
        const auto p = source_point(theta.data.data() + static_cast<std::size_t>(b) * 6, r, c, height, width);
        const T fx = std::clamp(std::floor(p.sx), T(-2), T(width + 1)), fy = std::clamp(std::floor(p.sy), T(-2), T(height + 1));
        cells.push_back(static_cast<std::int32_t>(fx));
        cells.push_back(static_cast<std::int32_t>(fy));
      }
}

#define HT_INSTANTIATE(T)                                                                                   \
  template void check_finite<T>(const Tensor<T>&, const std::string&);                                      \
  template class Conv2d<T>;                                                                                 \
  template class ConvTranspose2d<T>;                                                                        \
  template class Linear<T>;                                                                                 \
  template class BatchNorm2d<T>;                                                                            \
  template void relu_forward<T>(const Tensor<T>&, Tensor<T>&);                                              \
  template void relu_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                           \
  template void tanh_forward<T>(const Tensor<T>&, Tensor<T>&);                                              \
  template void tanh_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                           \
  template void affine_sample<T>(const Tensor<T>&, const Tensor<T>&, T, Tensor<T>&);                        \
  template void affine_sample_backward<T>(const Tensor<T>&, const Tensor<T>&, T, const Tensor<T>&, Tensor<T>&); \
  template void affine_sample_cells<T>(const Tensor<T>&, int, int, std::vector<std::int32_t>&);

HT_INSTANTIATE(float)
HT_INSTANTIATE(double)

}  // namespace handteleop::nn
