#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "handteleop/nn/kernels.hpp"

namespace nn = handteleop::nn;
namespace par = handteleop::nn::kernels::parallel;
namespace ref = handteleop::nn::kernels::reference;

namespace {

template <typename T>
std::vector<T> random_vector(std::size_t n, std::mt19937& rng) {
  std::uniform_real_distribution<T> d(T(-1), T(1));
  std::vector<T> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

TEST_CASE_TEMPLATE("parallel gemm matches reference for every transpose combination", T, float, double) {
  std::mt19937 rng(11);
  const double tol = std::is_same_v<T, float> ? 2e-4 : 1e-12;
  // Shapes straddle the register tile and cache-block edges.
  const int shapes[][3] = {{1, 7, 5}, {3, 100, 33}, {7, 33, 300}, {97, 65, 257}, {130, 1030, 40}};
  for (const auto& s : shapes) {
    const int m = s[0], n = s[1], k = s[2];
    for (auto ta : {nn::Trans::kNo, nn::Trans::kYes})
      for (auto tb : {nn::Trans::kNo, nn::Trans::kYes}) {
        const auto a = random_vector<T>(static_cast<std::size_t>(m) * k, rng);
        const auto b = random_vector<T>(static_cast<std::size_t>(k) * n, rng);
        auto c1 = random_vector<T>(static_cast<std::size_t>(m) * n, rng);
        auto c2 = c1;
        const int lda = ta == nn::Trans::kNo ? k : m;
        const int ldb = tb == nn::Trans::kNo ? n : k;
        par::gemm<T>(ta, tb, m, n, k, T(0.5), a, lda, b, ldb, T(0.25), c1, n);
        ref::gemm<T>(ta, tb, m, n, k, T(0.5), a, lda, b, ldb, T(0.25), c2, n);
        CHECK(max_abs_diff(c1, c2) < tol);
      }
  }
}

TEST_CASE("gemm with beta zero ignores NaN garbage in C") {
  std::mt19937 rng(3);
  const auto a = random_vector<float>(12 * 9, rng);
  const auto b = random_vector<float>(9 * 40, rng);
  std::vector<float> c(12 * 40, std::nanf(""));
  par::gemm<float>(nn::Trans::kNo, nn::Trans::kNo, 12, 40, 9, 1.0f, a, 9, b, 40, 0.0f, c, 40);
  for (float v : c) CHECK(std::isfinite(v));
}

TEST_CASE("parallel gemm is reproducible bit for bit") {
  std::mt19937 rng(5);
  const auto a = random_vector<float>(200 * 300, rng);
  const auto b = random_vector<float>(300 * 150, rng);
  std::vector<float> c1(200 * 150), c2(200 * 150);
  par::gemm<float>(nn::Trans::kNo, nn::Trans::kYes, 200, 150, 300, 1.0f, a, 300, b, 300, 0.0f, c1, 150);
  par::gemm<float>(nn::Trans::kNo, nn::Trans::kYes, 200, 150, 300, 1.0f, a, 300, b, 300, 0.0f, c2, 150);
  CHECK(c1 == c2);
}

TEST_CASE_TEMPLATE("im2col and col2im agree with the reference", T, float, double) {
  std::mt19937 rng(7);
  const nn::ConvGeometry geoms[] = {{3, 11, 9, 4, 2, 1}, {2, 6, 6, 3, 1, 1}, {1, 96, 96, 4, 2, 1}};
  for (const auto& g : geoms) {
    const auto image = random_vector<T>(static_cast<std::size_t>(g.channels) * g.height * g.width, rng);
    std::vector<T> c1(g.col_rows() * g.col_cols()), c2(c1.size());
    par::im2col<T>(g, image, c1);
    ref::im2col<T>(g, image, c2);
    CHECK(c1 == c2);

    const auto col = random_vector<T>(c1.size(), rng);
    std::vector<T> i1(image.size()), i2(image.size());
    par::col2im<T>(g, col, i1);
    ref::col2im<T>(g, col, i2);
    CHECK(max_abs_diff(i1, i2) < 1e-5);
  }
}

TEST_CASE("col2im is the adjoint of im2col") {
  // <im2col(x), y> == <x, col2im(y)>
  std::mt19937 rng(9);
  const nn::ConvGeometry g{2, 10, 10, 4, 2, 1};
  const auto x = random_vector<double>(static_cast<std::size_t>(2) * 100, rng);
  const auto y = random_vector<double>(g.col_rows() * g.col_cols(), rng);
  std::vector<double> cx(y.size()), ty(x.size());
  par::im2col<double>(g, x, cx);
  par::col2im<double>(g, y, ty);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}
