#include "sfv/tensor.hpp"

#include <cstring>
#include <sstream>

#include "sfv/autograd.hpp"

namespace sfv {

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

namespace {

std::shared_ptr<Storage> make_storage(DType dtype, std::int64_t n) {
  if (dtype == DType::f32) return std::make_shared<Storage>(std::vector<float>(n, 0.0f));
  return std::make_shared<Storage>(std::vector<double>(n, 0.0));
}

}  // namespace

Tensor::Tensor(Shape shape, DType dtype) {
  for (auto d : shape) SFV_REQUIRE(d >= 0, "negative tensor extent in " + shape_str(shape));
  impl_ = std::make_shared<TensorImpl>();
  impl_->storage = make_storage(dtype, numel_of(shape));
  impl_->shape = std::move(shape);
  impl_->dtype = dtype;
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  dispatch(dtype, [&]<class T>() {
    T* p = t.data<T>();
    for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(value);
  });
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  SFV_REQUIRE(static_cast<std::int64_t>(values.size()) == numel_of(shape),
          "value count does not match shape " + shape_str(shape));
  Tensor t(std::move(shape), dtype);
  dispatch(dtype, [&]<class T>() {
    T* p = t.data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) p[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from_floats(Shape shape, std::vector<float> values) {
  SFV_REQUIRE(static_cast<std::int64_t>(values.size()) == numel_of(shape),
          "value count does not match shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = DType::f32;
  impl->storage = std::make_shared<Storage>(std::move(values));
  return from_impl(std::move(impl));
}

Tensor Tensor::from_doubles(Shape shape, std::vector<double> values) {
  SFV_REQUIRE(static_cast<std::int64_t>(values.size()) == numel_of(shape),
          "value count does not match shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = DType::f64;
  impl->storage = std::make_shared<Storage>(std::move(values));
  return from_impl(std::move(impl));
}

Tensor Tensor::from_impl(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

const Shape& Tensor::shape() const {
  SFV_REQUIRE(defined(), "shape() on undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::size(int dim) const {
  const int r = rank();
  if (dim < 0) dim += r;
  SFV_REQUIRE(dim >= 0 && dim < r, "dimension index out of range for " + shape_str(shape()));
  return impl_->shape[dim];
}

DType Tensor::dtype() const {
  SFV_REQUIRE(defined(), "dtype() on undefined tensor");
  return impl_->dtype;
}

double Tensor::flat(std::int64_t i) const {
  SFV_REQUIRE(i >= 0 && i < numel(), "flat index out of range");
  return dispatch(dtype(), [&]<class T>() { return static_cast<double>(data<T>()[i]); });
}

double Tensor::item() const {
  SFV_REQUIRE(numel() == 1, "item() needs a single-element tensor, got " + shape_str(shape()));
  return flat(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(numel());
  dispatch(dtype(), [&]<class T>() {
    const T* p = data<T>();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i];
  });
  return out;
}

bool Tensor::requires_grad() const { return defined() && impl_->requires_grad; }

Tensor& Tensor::requires_grad_(bool on) {
  SFV_REQUIRE(defined(), "requires_grad_ on undefined tensor");
  SFV_REQUIRE(!on || impl_->grad_fn == nullptr, "requires_grad_ is only valid on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

const std::shared_ptr<autograd::Node>& Tensor::grad_fn() const {
  static const std::shared_ptr<autograd::Node> none;
  return defined() ? impl_->grad_fn : none;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape();
  impl->dtype = dtype();
  impl->storage = impl_->storage;
  return from_impl(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape();
  impl->dtype = dtype();
  impl->storage = std::make_shared<Storage>(*impl_->storage);
  return from_impl(std::move(impl));
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  Tensor out(shape(), target);
  dispatch(dtype(), [&]<class S>() {
    dispatch(target, [&]<class D>() {
      const S* src = data<S>();
      D* dst = out.data<D>();
      for (std::int64_t i = 0; i < numel(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return out;
}

void Tensor::assign(const Tensor& src) {
  SFV_REQUIRE(src.shape() == shape(), "assign shape mismatch: " + shape_str(src.shape()) + " vs " +
                                      shape_str(shape()));
  if (src.dtype() == dtype()) {
    dispatch(dtype(), [&]<class T>() {
      std::memcpy(data<T>(), src.data<T>(), sizeof(T) * static_cast<std::size_t>(numel()));
    });
  } else {
    assign(src.to(dtype()));
  }
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (!defined() || !other.defined()) return defined() == other.defined();
  if (shape() != other.shape() || dtype() != other.dtype()) return false;
  return dispatch(dtype(), [&]<class T>() {
    return std::memcmp(data<T>(), other.data<T>(), sizeof(T) * static_cast<std::size_t>(numel())) ==
           0;
  });
}

}  // namespace sfv
