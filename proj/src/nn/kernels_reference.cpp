#include "handteleop/nn/kernels.hpp"

namespace handteleop::nn::kernels::reference {

template <typename T>
void gemm(Trans trans_a, Trans trans_b, int m, int n, int k, T alpha, std::span<const T> a, int lda,
          std::span<const T> b, int ldb, T beta, std::span<T> c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T sum = T(0);
      for (int p = 0; p < k; ++p) {
        const T av = trans_a == Trans::kNo ? a[i * lda + p] : a[p * lda + i];
        const T bv = trans_b == Trans::kNo ? b[p * ldb + j] : b[j * ldb + p];
        sum += av * bv;
      }
      T& out = c[i * ldc + j];
      out = (beta == T(0) ? T(0) : beta * out) + alpha * sum;
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> image, std::span<T> col) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  for (int ch = 0; ch < g.channels; ++ch)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const int row = (ch * g.kernel + ky) * g.kernel + kx;
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const int iy = oy * g.stride - g.pad + ky;
            const int ix = ox * g.stride - g.pad + kx;
            const bool inside = iy >= 0 && iy < g.height && ix >= 0 && ix < g.width;
            col[(row * ho + oy) * wo + ox] = inside ? image[(ch * g.height + iy) * g.width + ix] : T(0);
          }
      }
}

template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> image) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  for (auto& v : image) v = T(0);
  for (int ch = 0; ch < g.channels; ++ch)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const int row = (ch * g.kernel + ky) * g.kernel + kx;
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const int iy = oy * g.stride - g.pad + ky;
            const int ix = ox * g.stride - g.pad + kx;
            if (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width)
              image[(ch * g.height + iy) * g.width + ix] += col[(row * ho + oy) * wo + ox];
          }
      }
}

template void gemm<float>(Trans, Trans, int, int, int, float, std::span<const float>, int, std::span<const float>,
                          int, float, std::span<float>, int);
template void gemm<double>(Trans, Trans, int, int, int, double, std::span<const double>, int,
                           std::span<const double>, int, double, std::span<double>, int);
template void im2col<float>(const ConvGeometry&, std::span<const float>, std::span<float>);
template void im2col<double>(const ConvGeometry&, std::span<const double>, std::span<double>);
template void col2im<float>(const ConvGeometry&, std::span<const float>, std::span<float>);
template void col2im<double>(const ConvGeometry&, std::span<const double>, std::span<double>);

}  // namespace handteleop::nn::kernels::reference
