#pragma once

#include <cassert>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace formlink {

/// Dense row-major n-d array. Rank is dynamic; most of the pipeline uses
/// rank-3 (channels, height, width) tensors.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)), data(static_cast<size_t>(count(shape)), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (count(shape) != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("Tensor: shape does not match data length");
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    for (auto& e : t.data) e = v;
    return t;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // rank-3 accessors (c, y, x)
  T& at(int c, int y, int x) {
    assert(rank() == 3);
    return data[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
  }
  T at(int c, int y, int x) const {
    assert(rank() == 3);
    return data[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
  }

  // rank-2 accessors (y, x)
  T& at(int y, int x) {
    assert(rank() == 2);
    return data[static_cast<size_t>(y) * dim(1) + x];
  }
  T at(int y, int x) const {
    assert(rank() == 2);
    return data[static_cast<size_t>(y) * dim(1) + x];
  }

  T* row(int c, int y) {
    assert(rank() == 3);
    return data.data() + (static_cast<size_t>(c) * dim(1) + y) * dim(2);
  }
  const T* row(int c, int y) const {
    assert(rank() == 3);
    return data.data() + (static_cast<size_t>(c) * dim(1) + y) * dim(2);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  void fill(T v) {
    for (auto& e : data) e = v;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string r = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

}  // namespace formlink
