#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "sfv/error.hpp"

namespace sfv {

// Element type. The numeric codes are the ones written to disk.
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);
const char* dtype_name(DType dtype);

namespace autograd {
struct Node;
}

using Storage = std::variant<std::vector<float>, std::vector<double>>;

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  std::shared_ptr<Storage> storage;
  bool requires_grad = false;
  std::shared_ptr<autograd::Node> grad_fn;
};

// Dense row-major tensor with shared, immutable-by-convention storage.
// Copies are shallow; use clone() for a deep copy. Only optimizers and
// checkpoint loading write into existing storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, DType dtype);

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor scalar(double value, DType dtype = DType::f32);
  static Tensor from_values(Shape shape, std::span<const double> values, DType dtype = DType::f32);
  static Tensor from_floats(Shape shape, std::vector<float> values);
  static Tensor from_doubles(Shape shape, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  // Negative indices count from the back.
  std::int64_t size(int dim) const;
  std::int64_t numel() const { return numel_of(shape()); }
  DType dtype() const;

  template <class T>
  T* data();
  template <class T>
  const T* data() const;

  double item() const;
  double flat(std::int64_t i) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& requires_grad_(bool on = true);
  const std::shared_ptr<autograd::Node>& grad_fn() const;

  // Same storage, no autograd history.
  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;

  // In-place overwrite of values; shapes must match. Never recorded.
  void assign(const Tensor& src);
  bool bit_equal(const Tensor& other) const;

  TensorImpl* impl() const { return impl_.get(); }
  static Tensor from_impl(std::shared_ptr<TensorImpl> impl);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

template <class T>
inline constexpr DType dtype_of = std::is_same_v<T, float> ? DType::f32 : DType::f64;

template <class T>
T* Tensor::data() {
  require(defined(), "data() on undefined tensor");
  return std::get<std::vector<T>>(*impl_->storage).data();
}

template <class T>
const T* Tensor::data() const {
  require(defined(), "data() on undefined tensor");
  return std::get<std::vector<T>>(*impl_->storage).data();
}

// Calls fn.template operator()<T>() with T matching the dtype.
template <class F>
decltype(auto) dispatch(DType dtype, F&& fn) {
  if (dtype == DType::f32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

}  // namespace sfv
