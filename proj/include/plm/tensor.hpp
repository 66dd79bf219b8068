#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace plm {

/// Dense row-major tensor templated on scalar type (float in production,
/// double for finite-difference work).
template <typename T>
struct Tensor {
  std::vector<int> dims;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> d) : dims(std::move(d)), data(numel_of(dims), T(0)) {}

  static std::size_t numel_of(const std::vector<int>& d) {
    std::size_t n = 1;
    for (int v : d) {
      if (v <= 0) throw std::invalid_argument("tensor dims must be positive");
      n *= static_cast<std::size_t>(v);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }
};

}  // namespace plm
