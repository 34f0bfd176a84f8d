#pragma once

// Dense kernels behind the network layers.
//
// Two implementations share each signature:
//   kernels::parallel   packed, cache-blocked, OpenMP over output blocks
//   kernels::reference  straight loops, single-threaded, kept for testing
//
// Matrices are row-major. Every output element of the parallel GEMM is owned
// by exactly one thread and its k-accumulation order does not depend on the
// thread count, so results are reproducible run to run.

#include <cstddef>
#include <span>

namespace handteleop::nn {

enum class Trans { kNo, kYes };

/// 2-D convolution geometry for one image (channels x height x width).
struct ConvGeometry {
  int channels = 1;
  int height = 1;
  int width = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t col_rows() const { return static_cast<std::size_t>(channels) * kernel * kernel; }
  std::size_t col_cols() const { return static_cast<std::size_t>(out_height()) * out_width(); }
};

namespace kernels::parallel {

/// C = alpha * op(A) * op(B) + beta * C, op(A) is m x k, op(B) is k x n.
template <typename T>
void gemm(Trans trans_a, Trans trans_b, int m, int n, int k, T alpha, std::span<const T> a, int lda,
          std::span<const T> b, int ldb, T beta, std::span<T> c, int ldc);

/// Unfolds one image into a (C*k*k) x (Ho*Wo) column matrix. Padding reads as zero.
template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> image, std::span<T> col);

/// Adjoint of im2col: scatters-adds columns back into the image (image is overwritten).
template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> image);

}  // namespace kernels::parallel

namespace kernels::reference {

template <typename T>
void gemm(Trans trans_a, Trans trans_b, int m, int n, int k, T alpha, std::span<const T> a, int lda,
          std::span<const T> b, int ldb, T beta, std::span<T> c, int ldc);

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> image, std::span<T> col);

template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> image);

}  // namespace kernels::reference

}  // namespace handteleop::nn
