#include <algorithm>
#include <cstdint>
#include <vector>

#include "handteleop/nn/kernels.hpp"
#include "handteleop/parallel.hpp"

namespace handteleop::nn::kernels::parallel {

namespace {

// Register tile: MR rows of A against NR columns of B. NR spans two 512-bit
// vectors for either precision.
template <typename T>
struct Tile;
template <>
struct Tile<float> {
  static constexpr int kMr = 6;
  static constexpr int kNr = 32;
};
template <>
struct Tile<double> {
  static constexpr int kMr = 6;
  static constexpr int kNr = 16;
};

constexpr int kKc = 256;
constexpr int kMc = 96;
constexpr int kNc = 1024;

template <typename T>
struct MatView {
  const T* data;
  int ld;
  bool transposed;

  T operator()(int row, int col) const {
    return transposed ? data[static_cast<std::ptrdiff_t>(col) * ld + row]
                      : data[static_cast<std::ptrdiff_t>(row) * ld + col];
  }
};

template <typename T>
void pack_a(const MatView<T>& a, int i0, int mc, int p0, int kc, T* out) {
  constexpr int kMr = Tile<T>::kMr;
  for (int ir = 0; ir < mc; ir += kMr) {
    const int rows = std::min(kMr, mc - ir);
    for (int p = 0; p < kc; ++p) {
      for (int r = 0; r < rows; ++r) out[r] = a(i0 + ir + r, p0 + p);
      for (int r = rows; r < kMr; ++r) out[r] = T(0);
      out += kMr;
    }
  }
}

template <typename T>
void pack_b_panel(const MatView<T>& b, int p0, int kc, int j0, int cols, T* out) {
  constexpr int kNr = Tile<T>::kNr;
  if (!b.transposed && cols == kNr) {
    for (int p = 0; p < kc; ++p) {
      const T* src = b.data + static_cast<std::ptrdiff_t>(p0 + p) * b.ld + j0;
      std::copy(src, src + kNr, out + static_cast<std::ptrdiff_t>(p) * kNr);
    }
    return;
  }
  for (int p = 0; p < kc; ++p) {
    T* dst = out + static_cast<std::ptrdiff_t>(p) * kNr;
    for (int c = 0; c < cols; ++c) dst[c] = b(p0 + p, j0 + c);
    for (int c = cols; c < kNr; ++c) dst[c] = T(0);
  }
}

template <typename T>
inline void micro_kernel(int kc, const T* __restrict ap, const T* __restrict bp, T alpha, T* c, int ldc,
                         int rows, int cols) {
  constexpr int kMr = Tile<T>::kMr;
  constexpr int kNr = Tile<T>::kNr;
  T acc[kMr][kNr] = {};
  for (int p = 0; p < kc; ++p) {
    const T* b = bp + static_cast<std::ptrdiff_t>(p) * kNr;
    const T* a = ap + static_cast<std::ptrdiff_t>(p) * kMr;
#pragma GCC unroll 6
    for (int r = 0; r < kMr; ++r) {
      const T ar = a[r];
#pragma GCC unroll 32
      for (int j = 0; j < kNr; ++j) acc[r][j] += ar * b[j];
    }
  }
  for (int r = 0; r < rows; ++r) {
    T* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
    for (int j = 0; j < cols; ++j) crow[j] += alpha * acc[r][j];
  }
}

// Few output rows: packing would dominate, so go straight to dot products.
template <typename T>
void skinny_gemm(const MatView<T>& a, const MatView<T>& b, int m, int n, int k, T alpha, T* c, int ldc) {
  if (b.transposed) {
    // B stored n x k: each output is a contiguous dot product.
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n; ++j) {
      const T* brow = b.data + static_cast<std::ptrdiff_t>(j) * b.ld;
      for (int i = 0; i < m; ++i) {
        T sum = T(0);
        if (!a.transposed) {
          const T* arow = a.data + static_cast<std::ptrdiff_t>(i) * a.ld;
          for (int p = 0; p < k; ++p) sum += arow[p] * brow[p];
        } else {
          for (int p = 0; p < k; ++p) sum += a(i, p) * brow[p];
        }
        c[static_cast<std::ptrdiff_t>(i) * ldc + j] += alpha * sum;
      }
    }
    return;
  }
  constexpr int kBlock = 256;
  const int blocks = (n + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < blocks; ++blk) {
    const int j0 = blk * kBlock;
    const int cols = std::min(kBlock, n - j0);
    T acc[kBlock];
    for (int i = 0; i < m; ++i) {
      std::fill(acc, acc + cols, T(0));
      for (int p = 0; p < k; ++p) {
        const T av = a(i, p);
        const T* brow = b.data + static_cast<std::ptrdiff_t>(p) * b.ld + j0;
        for (int j = 0; j < cols; ++j) acc[j] += av * brow[j];
      }
      T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc + j0;
      for (int j = 0; j < cols; ++j) crow[j] += alpha * acc[j];
    }
  }
}

}  // namespace

template <typename T>
void gemm(Trans trans_a, Trans trans_b, int m, int n, int k, T alpha, std::span<const T> a, int lda,
          std::span<const T> b, int ldb, T beta, std::span<T> c, int ldc) {
  if (m <= 0 || n <= 0) return;
  T* cdata = c.data();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(m) * n > 16384)
  for (int i = 0; i < m; ++i) {
    T* row = cdata + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == T(0)) {
      std::fill(row, row + n, T(0));
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (k <= 0 || alpha == T(0)) return;

  const MatView<T> av{a.data(), lda, trans_a == Trans::kYes};
  const MatView<T> bv{b.data(), ldb, trans_b == Trans::kYes};
  if (m <= 4) {
    skinny_gemm(av, bv, m, n, k, alpha, cdata, ldc);
    return;
  }

  constexpr int kMr = Tile<T>::kMr;
  constexpr int kNr = Tile<T>::kNr;
  std::vector<T> bpack(static_cast<std::size_t>(kKc) * kNc);
  for (int jc = 0; jc < n; jc += kNc) {
    const int nc = std::min(kNc, n - jc);
    const int panels = (nc + kNr - 1) / kNr;
    for (int pc = 0; pc < k; pc += kKc) {
      const int kc = std::min(kKc, k - pc);
#pragma omp parallel for schedule(static) if (panels > 1)
      for (int jp = 0; jp < panels; ++jp) {
        const int cols = std::min(kNr, nc - jp * kNr);
        pack_b_panel(bv, pc, kc, jc + jp * kNr, cols, bpack.data() + static_cast<std::size_t>(jp) * kc * kNr);
      }
      const int mblocks = (m + kMc - 1) / kMc;
#pragma omp parallel for schedule(static)
      for (int mb = 0; mb < mblocks; ++mb) {
        thread_local std::vector<T> apack;
        apack.resize(static_cast<std::size_t>(kMc) * kKc);
        const int ic = mb * kMc;
        const int mc = std::min(kMc, m - ic);
        pack_a(av, ic, mc, pc, kc, apack.data());
        for (int jp = 0; jp < panels; ++jp) {
          const int cols = std::min(kNr, nc - jp * kNr);
          const T* bp = bpack.data() + static_cast<std::size_t>(jp) * kc * kNr;
          for (int ir = 0; ir < mc; ir += kMr) {
            const int rows = std::min(kMr, mc - ir);
            T* cblock = cdata + static_cast<std::ptrdiff_t>(ic + ir) * ldc + jc + jp * kNr;
            micro_kernel<T>(kc, apack.data() + static_cast<std::size_t>(ir) * kc, bp, alpha, cblock, ldc, rows,
                            cols);
          }
        }
      }
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> image, std::span<T> col) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  const int kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < g.channels; ++ch) {
    const T* plane = image.data() + static_cast<std::ptrdiff_t>(ch) * g.height * g.width;
    for (int kidx = 0; kidx < kk; ++kidx) {
      const int ky = kidx / g.kernel;
      const int kx = kidx % g.kernel;
      T* out = col.data() + (static_cast<std::ptrdiff_t>(ch) * kk + kidx) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        const int iy = oy * g.stride - g.pad + ky;
        T* orow = out + static_cast<std::ptrdiff_t>(oy) * wo;
        if (iy < 0 || iy >= g.height) {
          std::fill(orow, orow + wo, T(0));
          continue;
        }
        const T* irow = plane + static_cast<std::ptrdiff_t>(iy) * g.width;
        for (int ox = 0; ox < wo; ++ox) {
          const int ix = ox * g.stride - g.pad + kx;
          orow[ox] = (ix >= 0 && ix < g.width) ? irow[ix] : T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> image) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  const int kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < g.channels; ++ch) {
    T* plane = image.data() + static_cast<std::ptrdiff_t>(ch) * g.height * g.width;
    std::fill(plane, plane + static_cast<std::ptrdiff_t>(g.height) * g.width, T(0));
    for (int kidx = 0; kidx < kk; ++kidx) {
      const int ky = kidx / g.kernel;
      const int kx = kidx % g.kernel;
      const T* in = col.data() + (static_cast<std::ptrdiff_t>(ch) * kk + kidx) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.height) continue;
        T* irow = plane + static_cast<std::ptrdiff_t>(iy) * g.width;
        const T* crow = in + static_cast<std::ptrdiff_t>(oy) * wo;
        for (int ox = 0; ox < wo; ++ox) {
          const int ix = ox * g.stride - g.pad + kx;
          if (ix >= 0 && ix < g.width) irow[ix] += crow[ox];
        }
      }
    }
  }
}

#define HANDTELEOP_INSTANTIATE(T)                                                                          \
  template void gemm<T>(Trans, Trans, int, int, int, T, std::span<const T>, int, std::span<const T>, int, T, \
                        std::span<T>, int);                                                                 \
  template void im2col<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                           \
  template void col2im<T>(const ConvGeometry&, std::span<const T>, std::span<T>);

HANDTELEOP_INSTANTIATE(float)
HANDTELEOP_INSTANTIATE(double)
#undef HANDTELEOP_INSTANTIATE

}  // namespace handteleop::nn::kernels::parallel
