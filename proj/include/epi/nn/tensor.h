#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace epi::nn {

// Dense row-major array. Feature maps are [C, H, W]; token sets share that
// layout as [C, N], so a linear layer is a left matrix product.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(numel(shape), fill);
  }

  static std::size_t numel(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  // Element (c, i) of a rank-2 tensor or (c, y, x) of a rank-3 tensor.
  T& at(int c, int i) { return data[static_cast<std::size_t>(c) * static_cast<std::size_t>(shape[1]) + static_cast<std::size_t>(i)]; }
  T at(int c, int i) const { return data[static_cast<std::size_t>(c) * static_cast<std::size_t>(shape[1]) + static_cast<std::size_t>(i)]; }
  T& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * static_cast<std::size_t>(shape[1]) + static_cast<std::size_t>(y)) *
                    static_cast<std::size_t>(shape[2]) +
                static_cast<std::size_t>(x)];
  }
  T at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * static_cast<std::size_t>(shape[1]) + static_cast<std::size_t>(y)) *
                    static_cast<std::size_t>(shape[2]) +
                static_cast<std::size_t>(x)];
  }

  Tensor reshaped(std::vector<int> s) const {
    Tensor out = *this;
    out.shape = std::move(s);
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

std::string shape_string(const std::vector<int>& shape);

}  // namespace epi::nn
