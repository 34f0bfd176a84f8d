#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace handteleop::nn {

/// Dense row-major tensor. Images are NCHW, feature vectors are N x F.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)), data(count(shape), fill) {}

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  int dim(std::size_t i) const { return shape.at(i); }
  /// Elements per leading index.
  std::size_t stride0() const { return shape.empty() || shape[0] == 0 ? 0 : data.size() / static_cast<std::size_t>(shape[0]); }

  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }
  std::span<T> sample(int n) { return std::span<T>(data).subspan(n * stride0(), stride0()); }
  std::span<const T> sample(int n) const { return std::span<const T>(data).subspan(n * stride0(), stride0()); }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  void resize(std::vector<int> s) {
    shape = std::move(s);
    data.assign(count(shape), T(0));
  }
  Tensor reshaped(std::vector<int> s) const {
    Tensor t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }

  bool operator==(const Tensor&) const = default;
};

std::string shape_string(const std::vector<int>& shape);

}  // namespace handteleop::nn
