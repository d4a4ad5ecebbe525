#pragma once

#include <cstddef>
#include <new>
#include <numeric>
#include <string>
#include <vector>

#include "saliency_audit/common.hpp"

namespace sa::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + "]";
}

/// 64-byte aligned allocation. Eigen picks its vectorized code path from the
/// pointer alignment, so unaligned buffers make float sums depend on heap state.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor. data.size() == element_count(dims) always.
template <typename T>
struct Tensor {
  Shape dims;
  AlignedVector<T> data;

  Tensor() = default;
  explicit Tensor(Shape d, T fill = T(0)) : dims(std::move(d)), data(element_count(dims), fill) {}
  Tensor(Shape d, AlignedVector<T> values) : dims(std::move(d)), data(std::move(values)) { check(); }
  Tensor(Shape d, const std::vector<T>& values)
      : dims(std::move(d)), data(values.begin(), values.end()) {
    check();
  }

  void check() const {
    if (data.size() != element_count(dims))
      throw InvalidInput("tensor: " + std::to_string(data.size()) +
                         " values do not fill shape " + shape_string(dims));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return dims.size(); }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(dims, AlignedVector<U>(data.begin(), data.end()));
  }
};

inline Tensor<double> from_matrix(const Matrix& m) {
  return Tensor<double>({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                        AlignedVector<double>(m.data(), m.data() + m.size()));
}

template <typename T>
Matrix to_matrix(const Tensor<T>& t) {
  if (t.rank() != 2) throw InvalidInput("to_matrix: expected a rank-2 tensor, got " + shape_string(t.dims));
  Matrix m(t.dims[0], t.dims[1]);
  for (std::size_t i = 0; i < t.size(); ++i) m.data()[i] = static_cast<double>(t.data[i]);
  return m;
}

}  // namespace sa::nn
