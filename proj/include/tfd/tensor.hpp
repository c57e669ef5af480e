#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfd/errors.hpp"

namespace tfd {

using Shape = std::vector<std::size_t>;

/// 64-byte aligned allocation. Vectorized kernels peel a scalar prologue
/// that depends on the address, so unaligned buffers can change summation
/// order (and the last bit of results) from one allocation to the next.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Tensors are plain values. A Tensor with `requires_grad` set acts as a
/// trainable leaf: when it is registered in a Graph, backward() accumulates
/// into its `grad` buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Buffer data);
  Tensor(Shape shape, std::initializer_list<double> data);
  Tensor(Shape shape, const std::vector<double>& data);

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  Buffer& storage() { return data_; }
  const Buffer& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);

  bool has_grad() const { return grad_.has_value(); }
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

 private:
  Shape shape_;
  Buffer data_;
  bool requires_grad_ = false;
  std::optional<Buffer> grad_;
};

}  // namespace tfd
