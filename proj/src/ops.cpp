#include "sfv/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <numeric>

#include "sfv/autograd.hpp"

namespace sfv {

using autograd::record;
using Grads = std::vector<Tensor>;
using Inputs = std::vector<Tensor>;
using Needs = std::vector<bool>;

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;

void same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  SFV_REQUIRE(a.dtype() == b.dtype(), std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) +
                                      " vs " + dtype_name(b.dtype()) + ")");
}

std::vector<std::int64_t> contiguous_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
    st[d] = acc;
    acc *= s[d];
  }
  return st;
}

// Strides of `src` viewed in the index space of `out` (0 on broadcast axes).
std::vector<std::int64_t> aligned_strides(const Shape& src, const Shape& out) {
  const std::size_t r = out.size();
  const std::size_t off = r - src.size();
  auto st = contiguous_strides(src);
  std::vector<std::int64_t> res(r, 0);
  for (std::size_t d = 0; d < src.size(); ++d) res[off + d] = (src[d] == 1) ? 0 : st[d];
  return res;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    SFV_REQUIRE(da == db || da == 1 || db == 1,
            "shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

template <std::size_t K>
struct Plan {
  std::vector<std::int64_t> ext;
  std::array<std::vector<std::int64_t>, K> st;
};

// Drops unit axes and merges axes that are contiguous for every operand.
template <std::size_t K>
Plan<K> make_plan(const Shape& shape, const std::array<std::vector<std::int64_t>, K>& strides) {
  Plan<K> p;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] == 1) continue;
    if (!p.ext.empty()) {
      bool merge = true;
      for (std::size_t k = 0; k < K; ++k) merge = merge && p.st[k].back() == strides[k][d] * shape[d];
      if (merge) {
        p.ext.back() *= shape[d];
        for (std::size_t k = 0; k < K; ++k) p.st[k].back() = strides[k][d];
        continue;
      }
    }
    p.ext.push_back(shape[d]);
    for (std::size_t k = 0; k < K; ++k) p.st[k].push_back(strides[k][d]);
  }
  if (p.ext.empty()) {
    p.ext.push_back(1);
    for (std::size_t k = 0; k < K; ++k) p.st[k].push_back(0);
  }
  return p;
}

template <std::size_t K, class F>
void for_each_run(const Plan<K>& p, F&& body) {
  const int r = static_cast<int>(p.ext.size());
  const std::int64_t n = p.ext[r - 1];
  std::array<std::int64_t, K> inner{};
  for (std::size_t k = 0; k < K; ++k) inner[k] = p.st[k][r - 1];
  std::int64_t outer = 1;
  for (int d = 0; d < r - 1; ++d) outer *= p.ext[d];
  std::vector<std::int64_t> idx(std::max(r - 1, 0), 0);
  std::array<std::int64_t, K> off{};
  for (std::int64_t o = 0; o < outer; ++o) {
    body(off, n, inner);
    for (int d = r - 2; d >= 0; --d) {
      ++idx[d];
      for (std::size_t k = 0; k < K; ++k) off[k] += p.st[k][d];
      if (idx[d] < p.ext[d]) break;
      for (std::size_t k = 0; k < K; ++k) off[k] -= p.st[k][d] * p.ext[d];
      idx[d] = 0;
    }
  }
}

template <class F>
Tensor binary_kernel(const Tensor& a, const Tensor& b, const char* name, F f) {
  same_dtype(a, b, name);
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor out(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    if (a.shape() == b.shape()) {
      const std::int64_t n = out.numel();
      for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
      return;
    }
    auto plan = make_plan<3>(out_shape, {contiguous_strides(out_shape),
                                         aligned_strides(a.shape(), out_shape),
                                         aligned_strides(b.shape(), out_shape)});
    for_each_run(plan, [&](const std::array<std::int64_t, 3>& off, std::int64_t n,
                           const std::array<std::int64_t, 3>& st) {
      T* o = po + off[0];
      const T* x = pa + off[1];
      const T* y = pb + off[2];
      if (st[1] == 1 && st[2] == 1) {
        for (std::int64_t j = 0; j < n; ++j) o[j] = f(x[j], y[j]);
      } else if (st[1] == 1 && st[2] == 0) {
        const T yv = *y;
        for (std::int64_t j = 0; j < n; ++j) o[j] = f(x[j], yv);
      } else if (st[1] == 0 && st[2] == 1) {
        const T xv = *x;
        for (std::int64_t j = 0; j < n; ++j) o[j] = f(xv, y[j]);
      } else {
        for (std::int64_t j = 0; j < n; ++j) o[j * st[0]] = f(x[j * st[1]], y[j * st[2]]);
      }
    });
  });
  return out;
}

template <class F>
Tensor unary_kernel(const Tensor& a, F f) {
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = a.data<T>();
    T* po = out.data<T>();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  });
  return out;
}

// out[i] = exp(sign * x[i]) through an aligned, padded buffer so that every
// element takes Eigen's packet path. With unaligned maps Eigen peels scalar
// head/tail elements, which makes results depend on the buffer address.
template <class T>
void vexp(const T* x, T* out, std::int64_t n, T sign) {
  constexpr std::int64_t kChunk = 1024;
  using Arr = Eigen::Array<T, kChunk, 1>;
  alignas(64) thread_local Arr in, res;
  for (std::int64_t o = 0; o < n; o += kChunk) {
    const std::int64_t m = std::min(kChunk, n - o);
    for (std::int64_t i = 0; i < m; ++i) in[i] = sign * x[o + i];
    for (std::int64_t i = m; i < kChunk; ++i) in[i] = T(0);
    res = in.exp();
    std::copy(res.data(), res.data() + m, out + o);
  }
}

// Elementwise f(x, exp(-x)).
template <class F>
Tensor exp_neg_kernel(const Tensor& a, F f) {
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const std::int64_t n = a.numel();
    const T* px = a.data<T>();
    T* po = out.data<T>();
    vexp(px, po, n, T(-1));
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(px[i], po[i]);
  });
  return out;
}

// d/dx silu and d2/dx2 silu.
Tensor silu_grad(const Tensor& a);
Tensor silu_grad2(const Tensor& a) {
  return exp_neg_kernel(a, []<class T>(T x, T e) {
    const T s = T(1) / (T(1) + e);
    return s * (T(1) - s) * (T(2) + x * (T(1) - T(2) * s));
  });
}
Tensor silu_grad(const Tensor& a) {
  Tensor out = exp_neg_kernel(a, []<class T>(T x, T e) {
    const T s = T(1) / (T(1) + e);
    return s * (T(1) + x * (T(1) - s));
  });
  return record("silu_grad", {a}, out, [](const Tensor& g, const Inputs& in, const Needs&) {
    return Grads{mul(g, silu_grad2(in[0]))};
  });
}

int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  SFV_REQUIRE(axis >= 0 && axis < rank, "axis out of range");
  return axis;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = binary_kernel(a, b, "add", []<class T>(T x, T y) { return x + y; });
  return record("add", {a, b}, out, [](const Tensor& g, const Inputs& in, const Needs& needs) {
    Grads r(2);
    if (needs[0]) r[0] = sum_to(g, in[0].shape());
    if (needs[1]) r[1] = sum_to(g, in[1].shape());
    return r;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = binary_kernel(a, b, "sub", []<class T>(T x, T y) { return x - y; });
  return record("sub", {a, b}, out, [](const Tensor& g, const Inputs& in, const Needs& needs) {
    Grads r(2);
    if (needs[0]) r[0] = sum_to(g, in[0].shape());
    if (needs[1]) r[1] = sum_to(neg(g), in[1].shape());
    return r;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = binary_kernel(a, b, "mul", []<class T>(T x, T y) { return x * y; });
  return record("mul", {a, b}, out, [](const Tensor& g, const Inputs& in, const Needs& needs) {
    Grads r(2);
    if (needs[0]) r[0] = sum_to(mul(g, in[1]), in[0].shape());
    if (needs[1]) r[1] = sum_to(mul(g, in[0]), in[1].shape());
    return r;
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tensor out = binary_kernel(a, b, "div", []<class T>(T x, T y) { return x / y; });
  return record("div", {a, b}, out, [](const Tensor& g, const Inputs& in, const Needs& needs) {
    Grads r(2);
    if (needs[0]) r[0] = sum_to(div(g, in[1]), in[0].shape());
    if (needs[1]) r[1] = sum_to(neg(div(mul(g, in[0]), square(in[1]))), in[1].shape());
    return r;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = unary_kernel(a, [s]<class T>(T x) { return x + static_cast<T>(s); });
  return record("add_scalar", {a}, out,
                [](const Tensor& g, const Inputs&, const Needs&) { return Grads{g}; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  Tensor out = unary_kernel(a, [s]<class T>(T x) { return x * static_cast<T>(s); });
  return record("mul_scalar", {a}, out, [s](const Tensor& g, const Inputs&, const Needs&) {
    return Grads{mul_scalar(g, s)};
  });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() { vexp(a.data<T>(), out.data<T>(), a.numel(), T(1)); });
  return record("exp", {a}, out, [](const Tensor& g, const Inputs& in, const Needs&) {
    return Grads{mul(g, exp(in[0]))};
  });
}

Tensor log(const Tensor& a) {
  Tensor out = unary_kernel(a, []<class T>(T x) { return std::log(x); });
  return record("log", {a}, out, [](const Tensor& g, const Inputs& in, const Needs&) {
    return Grads{div(g, in[0])};
  });
}

Tensor pow_scalar(const Tensor& a, double p) {
  Tensor out = unary_kernel(a, [p]<class T>(T x) { return std::pow(x, static_cast<T>(p)); });
  return record("pow_scalar", {a}, out, [p](const Tensor& g, const Inputs& in, const Needs&) {
    return Grads{mul(g, mul_scalar(pow_scalar(in[0], p - 1.0), p))};
  });
}

Tensor sqrt(const Tensor& a) { return pow_scalar(a, 0.5); }

Tensor square(const Tensor& a) {
  Tensor out = unary_kernel(a, []<class T>(T x) { return x * x; });
  return record("square", {a}, out, [](const Tensor& g, const Inputs& in, const Needs&) {
    return Grads{mul(g, mul_scalar(in[0], 2.0))};
  });
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = exp_neg_kernel(a, []<class T>(T, T e) { return T(1) / (T(1) + e); });
  return record("sigmoid", {a}, out, [](const Tensor& g, const Inputs& in, const Needs&) {
    Tensor s = sigmoid(in[0]);
    return Grads{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
  });
}

Tensor silu(const Tensor& a) {
  Tensor out = exp_neg_kernel(a, []<class T>(T x, T e) { return x / (T(1) + e); });
  return record("silu", {a}, out, [](const Tensor& g, const Inputs& in, const Needs&) {
    return Grads{mul(g, silu_grad(in[0]))};
  });
}

Tensor step(const Tensor& a) {
  return unary_kernel(a, []<class T>(T x) { return x > T(0) ? T(1) : T(0); });
}

Tensor relu(const Tensor& a) {
  Tensor out = unary_kernel(a, []<class T>(T x) { return x > T(0) ? x : T(0); });
  return record("relu", {a}, out, [](const Tensor& g, const Inputs& in, const Needs&) {
    return Grads{mul(g, step(in[0]))};
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::zeros({}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* p = a.data<T>();
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) acc += p[i];
    out.data<T>()[0] = static_cast<T>(acc);
  });
  return record("sum", {a}, out, [](const Tensor& g, const Inputs& in, const Needs&) {
    return Grads{broadcast_to(g, in[0].shape())};
  });
}

Tensor mean(const Tensor& a) {
  SFV_REQUIRE(a.numel() > 0, "mean of an empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_to(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  SFV_REQUIRE(broadcast_shape(shape, a.shape()) == a.shape(),
          "sum_to: " + shape_str(a.shape()) + " cannot reduce to " + shape_str(shape));
  Tensor out(shape, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = a.data<T>();
    T* po = out.data<T>();
    auto plan =
        make_plan<2>(a.shape(), {contiguous_strides(a.shape()), aligned_strides(shape, a.shape())});
    for_each_run(plan, [&](const std::array<std::int64_t, 2>& off, std::int64_t n,
                           const std::array<std::int64_t, 2>& st) {
      const T* x = pa + off[0];
      T* o = po + off[1];
      if (st[1] == 0) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < n; ++j) acc += x[j * st[0]];
        *o += static_cast<T>(acc);
      } else {
        for (std::int64_t j = 0; j < n; ++j) o[j * st[1]] += x[j * st[0]];
      }
    });
  });
  return record("sum_to", {a}, out, [](const Tensor& g, const Inputs& in, const Needs&) {
    return Grads{broadcast_to(g, in[0].shape())};
  });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  SFV_REQUIRE(broadcast_shape(a.shape(), shape) == shape,
          "broadcast_to: " + shape_str(a.shape()) + " cannot expand to " + shape_str(shape));
  Tensor out(shape, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = a.data<T>();
    T* po = out.data<T>();
    auto plan =
        make_plan<2>(shape, {contiguous_strides(shape), aligned_strides(a.shape(), shape)});
    for_each_run(plan, [&](const std::array<std::int64_t, 2>& off, std::int64_t n,
                           const std::array<std::int64_t, 2>& st) {
      T* o = po + off[0];
      const T* x = pa + off[1];
      if (st[1] == 0) {
        for (std::int64_t j = 0; j < n; ++j) o[j * st[0]] = *x;
      } else {
        for (std::int64_t j = 0; j < n; ++j) o[j * st[0]] = x[j * st[1]];
      }
    });
  });
  return record("broadcast_to", {a}, out, [](const Tensor& g, const Inputs& in, const Needs&) {
    return Grads{sum_to(g, in[0].shape())};
  });
}

Tensor sum_axis(const Tensor& a, int axis) {
  axis = norm_axis(axis, a.rank());
  Shape s = a.shape();
  s[axis] = 1;
  return sum_to(a, s);
}

Tensor mean_axis(const Tensor& a, int axis) {
  axis = norm_axis(axis, a.rank());
  return mul_scalar(sum_axis(a, axis), 1.0 / static_cast<double>(a.size(axis)));
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& a, const Shape& shape) {
  Shape s = shape;
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == -1) {
      SFV_REQUIRE(infer < 0, "reshape: more than one inferred axis");
      infer = static_cast<int>(i);
    } else {
      known *= s[i];
    }
  }
  if (infer >= 0) {
    SFV_REQUIRE(known > 0 && a.numel() % known == 0, "reshape: cannot infer axis");
    s[infer] = a.numel() / known;
  }
  SFV_REQUIRE(numel_of(s) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " has a different size than " + shape_str(s));
  if (s == a.shape()) return a;
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = s;
  impl->dtype = a.dtype();
  impl->storage = a.impl()->storage;
  Tensor out = Tensor::from_impl(std::move(impl));
  return record("reshape", {a}, out, [](const Tensor& g, const Inputs& in, const Needs&) {
    return Grads{reshape(g, in[0].shape())};
  });
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  const int r = a.rank();
  SFV_REQUIRE(static_cast<int>(perm.size()) == r, "permute: wrong number of axes");
  std::vector<int> inv(r, -1);
  for (int i = 0; i < r; ++i) {
    SFV_REQUIRE(perm[i] >= 0 && perm[i] < r && inv[perm[i]] < 0, "permute: not a permutation");
    inv[perm[i]] = i;
  }
  Shape out_shape(r);
  const auto src_st = contiguous_strides(a.shape());
  std::vector<std::int64_t> st(r);
  for (int i = 0; i < r; ++i) {
    out_shape[i] = a.shape()[perm[i]];
    st[i] = src_st[perm[i]];
  }
  Tensor out(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = a.data<T>();
    T* po = out.data<T>();
    auto plan = make_plan<2>(out_shape, {contiguous_strides(out_shape), st});
    for_each_run(plan, [&](const std::array<std::int64_t, 2>& off, std::int64_t n,
                           const std::array<std::int64_t, 2>& s) {
      T* o = po + off[0];
      const T* x = pa + off[1];
      for (std::int64_t j = 0; j < n; ++j) o[j * s[0]] = x[j * s[1]];
    });
  });
  return record("permute", {a}, out, [inv](const Tensor& g, const Inputs&, const Needs&) {
    return Grads{permute(g, inv)};
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  SFV_REQUIRE(!parts.empty(), "concat of nothing");
  const int r = parts[0].rank();
  axis = norm_axis(axis, r);
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    same_dtype(p, parts[0], "concat");
    SFV_REQUIRE(p.rank() == r, "concat: rank mismatch");
    for (int d = 0; d < r; ++d) {
      if (d != axis) SFV_REQUIRE(p.shape()[d] == parts[0].shape()[d], "concat: shape mismatch");
    }
    out_shape[axis] += p.shape()[axis];
  }
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[d];
  for (int d = axis + 1; d < r; ++d) inner *= out_shape[d];
  Tensor out(out_shape, parts[0].dtype());
  dispatch(out.dtype(), [&]<class T>() {
    T* po = out.data<T>();
    const std::int64_t row = out_shape[axis] * inner;
    std::int64_t at = 0;
    for (const auto& p : parts) {
      const std::int64_t chunk = p.shape()[axis] * inner;
      const T* pp = p.data<T>();
      for (std::int64_t o = 0; o < outer; ++o) {
        std::memcpy(po + o * row + at, pp + o * chunk, sizeof(T) * chunk);
      }
      at += chunk;
    }
  });
  std::vector<std::int64_t> starts;
  std::int64_t at = 0;
  for (const auto& p : parts) {
    starts.push_back(at);
    at += p.shape()[axis];
  }
  return record("concat", parts, out,
                [axis, starts](const Tensor& g, const Inputs& in, const Needs& needs) {
                  Grads r(in.size());
                  for (std::size_t i = 0; i < in.size(); ++i) {
                    if (needs[i]) r[i] = slice(g, axis, starts[i], in[i].shape()[axis]);
                  }
                  return r;
                });
}

namespace {

// Copies between a tensor and a [start, start+len) window of a larger one.
template <class T>
void window_copy(const Shape& big, int axis, std::int64_t start, std::int64_t len, T* big_data,
                 T* small_data, bool to_small) {
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= big[d];
  for (int d = axis + 1; d < static_cast<int>(big.size()); ++d) inner *= big[d];
  const std::int64_t big_row = big[axis] * inner;
  const std::int64_t small_row = len * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    T* b = big_data + o * big_row + start * inner;
    T* s = small_data + o * small_row;
    if (to_small) {
      std::memcpy(s, b, sizeof(T) * small_row);
    } else {
      std::memcpy(b, s, sizeof(T) * small_row);
    }
  }
}

}  // namespace

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length) {
  axis = norm_axis(axis, a.rank());
  const std::int64_t full = a.shape()[axis];
  SFV_REQUIRE(start >= 0 && length >= 0 && start + length <= full, "slice out of range");
  Shape s = a.shape();
  s[axis] = length;
  Tensor out(s, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    window_copy<T>(a.shape(), axis, start, length, const_cast<T*>(a.data<T>()), out.data<T>(), true);
  });
  return record("slice", {a}, out, [axis, start, full](const Tensor& g, const Inputs&, const Needs&) {
    return Grads{embed_slice(g, axis, start, full)};
  });
}

Tensor embed_slice(const Tensor& a, int axis, std::int64_t start, std::int64_t full) {
  axis = norm_axis(axis, a.rank());
  const std::int64_t length = a.shape()[axis];
  SFV_REQUIRE(start >= 0 && start + length <= full, "embed_slice out of range");
  Shape s = a.shape();
  s[axis] = full;
  Tensor out(s, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    window_copy<T>(s, axis, start, length, out.data<T>(), const_cast<T*>(a.data<T>()), false);
  });
  return record("embed_slice", {a}, out,
                [axis, start, length](const Tensor& g, const Inputs&, const Needs&) {
                  return Grads{slice(g, axis, start, length)};
                });
}

// ---------------------------------------------------------------------------
// Matrix product

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  same_dtype(a, b, "matmul");
  SFV_REQUIRE(a.rank() == 2 && b.rank() == 2, "matmul expects 2-D operands");
  const std::int64_t m = trans_a ? a.size(1) : a.size(0);
  const std::int64_t k = trans_a ? a.size(0) : a.size(1);
  const std::int64_t k2 = trans_b ? b.size(1) : b.size(0);
  const std::int64_t n = trans_b ? b.size(0) : b.size(1);
  SFV_REQUIRE(k == k2, "matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
  Tensor out({m, n}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    CMatMap<T> am(a.data<T>(), a.size(0), a.size(1));
    CMatMap<T> bm(b.data<T>(), b.size(0), b.size(1));
    MatMap<T> om(out.data<T>(), m, n);
    if (!trans_a && !trans_b) om.noalias() = am * bm;
    if (!trans_a && trans_b) om.noalias() = am * bm.transpose();
    if (trans_a && !trans_b) om.noalias() = am.transpose() * bm;
    if (trans_a && trans_b) om.noalias() = am.transpose() * bm.transpose();
  });
  return record("matmul", {a, b}, out,
                [trans_a, trans_b](const Tensor& g, const Inputs& in, const Needs& needs) {
                  Grads r(2);
                  const Tensor& A = in[0];
                  const Tensor& B = in[1];
                  if (needs[0]) r[0] = trans_a ? matmul(B, g, trans_b, true) : matmul(g, B, false, !trans_b);
                  if (needs[1]) r[1] = trans_b ? matmul(g, A, true, trans_a) : matmul(A, g, !trans_a, false);
                  return r;
                });
}

// ---------------------------------------------------------------------------
// 2-D convolution via im2col

namespace {

struct ConvDims {
  std::int64_t n, ci, h, w, co, kh, kw, ho, wo;
  ConvGeom g;
  std::int64_t k() const { return ci * kh * kw; }
  std::int64_t p() const { return ho * wo; }
};

ConvDims conv_dims(const Shape& x, const Shape& w, ConvGeom g) {
  SFV_REQUIRE(x.size() == 4 && w.size() == 4, "conv2d expects 4-D input and weight");
  SFV_REQUIRE(x[1] == w[1], "conv2d channel mismatch: input " + shape_str(x) + ", weight " + shape_str(w));
  SFV_REQUIRE(g.stride_h > 0 && g.stride_w > 0 && g.pad_h >= 0 && g.pad_w >= 0, "conv2d bad geometry");
  ConvDims d{x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0, 0, g};
  d.ho = (d.h + 2 * g.pad_h - d.kh) / g.stride_h + 1;
  d.wo = (d.w + 2 * g.pad_w - d.kw) / g.stride_w + 1;
  SFV_REQUIRE(d.ho > 0 && d.wo > 0, "conv2d output would be empty");
  return d;
}

// Valid output range [lo, hi) along one axis for kernel tap `k`.
inline void tap_range(std::int64_t k, std::int64_t stride, std::int64_t pad, std::int64_t in,
                      std::int64_t out, std::int64_t& lo, std::int64_t& hi) {
  // need 0 <= o*stride - pad + k < in
  lo = pad - k <= 0 ? 0 : (pad - k + stride - 1) / stride;
  const std::int64_t top = in - 1 + pad - k;
  hi = top < 0 ? 0 : std::min(out, top / stride + 1);
  if (hi < lo) hi = lo;
}

// col [K, S*P] for samples [n0, n0+S).
template <class T>
void im2col(const T* x, const ConvDims& d, std::int64_t s_count, T* col) {
  const std::int64_t P = d.p();
  const std::int64_t ld = s_count * P;
  for (std::int64_t s = 0; s < s_count; ++s) {
    const T* xs = x + s * d.ci * d.h * d.w;
    for (std::int64_t c = 0; c < d.ci; ++c) {
      for (std::int64_t ky = 0; ky < d.kh; ++ky) {
        std::int64_t ylo, yhi;
        tap_range(ky, d.g.stride_h, d.g.pad_h, d.h, d.ho, ylo, yhi);
        for (std::int64_t kx = 0; kx < d.kw; ++kx) {
          std::int64_t xlo, xhi;
          tap_range(kx, d.g.stride_w, d.g.pad_w, d.w, d.wo, xlo, xhi);
          T* dst = col + ((c * d.kh + ky) * d.kw + kx) * ld + s * P;
          std::fill(dst, dst + P, T(0));
          for (std::int64_t oy = ylo; oy < yhi; ++oy) {
            const std::int64_t iy = oy * d.g.stride_h - d.g.pad_h + ky;
            const T* src = xs + (c * d.h + iy) * d.w - d.g.pad_w + kx;
            T* row = dst + oy * d.wo;
            if (d.g.stride_w == 1) {
              for (std::int64_t ox = xlo; ox < xhi; ++ox) row[ox] = src[ox];
            } else {
              for (std::int64_t ox = xlo; ox < xhi; ++ox) row[ox] = src[ox * d.g.stride_w];
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const ConvDims& d, std::int64_t s_count, T* x) {
  const std::int64_t P = d.p();
  const std::int64_t ld = s_count * P;
  for (std::int64_t s = 0; s < s_count; ++s) {
    T* xs = x + s * d.ci * d.h * d.w;
    for (std::int64_t c = 0; c < d.ci; ++c) {
      for (std::int64_t ky = 0; ky < d.kh; ++ky) {
        std::int64_t ylo, yhi;
        tap_range(ky, d.g.stride_h, d.g.pad_h, d.h, d.ho, ylo, yhi);
        for (std::int64_t kx = 0; kx < d.kw; ++kx) {
          std::int64_t xlo, xhi;
          tap_range(kx, d.g.stride_w, d.g.pad_w, d.w, d.wo, xlo, xhi);
          const T* src = col + ((c * d.kh + ky) * d.kw + kx) * ld + s * P;
          for (std::int64_t oy = ylo; oy < yhi; ++oy) {
            const std::int64_t iy = oy * d.g.stride_h - d.g.pad_h + ky;
            T* dst = xs + (c * d.h + iy) * d.w - d.g.pad_w + kx;
            const T* row = src + oy * d.wo;
            if (d.g.stride_w == 1) {
              for (std::int64_t ox = xlo; ox < xhi; ++ox) dst[ox] += row[ox];
            } else {
              for (std::int64_t ox = xlo; ox < xhi; ++ox) dst[ox * d.g.stride_w] += row[ox];
            }
          }
        }
      }
    }
  }
}

// Samples per im2col chunk: enough columns for an efficient GEMM while
// keeping the column buffer around 8 MB.
std::int64_t chunk_samples(const ConvDims& d, std::size_t elem) {
  const std::int64_t per = d.k() * d.p() * static_cast<std::int64_t>(elem);
  const std::int64_t budget = std::int64_t{8} << 20;
  std::int64_t s = std::max<std::int64_t>(1, budget / std::max<std::int64_t>(per, 1));
  return std::min(s, d.n);
}

template <class T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> bufs[3];
  return bufs[slot];
}

template <class T>
void conv_forward_impl(const T* x, const T* w, T* y, const ConvDims& d) {
  const std::int64_t K = d.k(), P = d.p();
  CMatMap<T> wm(w, d.co, K);
  const std::int64_t S = chunk_samples(d, sizeof(T));
  auto& col = scratch<T>(0);
  auto& tmp = scratch<T>(1);
  for (std::int64_t n0 = 0; n0 < d.n; n0 += S) {
    const std::int64_t s = std::min(S, d.n - n0);
    col.resize(static_cast<std::size_t>(K * s * P));
    im2col(x + n0 * d.ci * d.h * d.w, d, s, col.data());
    CMatMap<T> cm(col.data(), K, s * P);
    if (s == 1) {
      MatMap<T> ym(y + n0 * d.co * P, d.co, P);
      ym.noalias() = wm * cm;
    } else {
      tmp.resize(static_cast<std::size_t>(d.co * s * P));
      MatMap<T> tm(tmp.data(), d.co, s * P);
      tm.noalias() = wm * cm;
      for (std::int64_t i = 0; i < s; ++i) {
        for (std::int64_t c = 0; c < d.co; ++c) {
          std::memcpy(y + ((n0 + i) * d.co + c) * P, tmp.data() + c * s * P + i * P, sizeof(T) * P);
        }
      }
    }
  }
}

// Gathers g[n0:n0+s] into [Co, s*P] (or maps it directly when s == 1).
template <class T>
const T* gather_out(const T* g, const ConvDims& d, std::int64_t n0, std::int64_t s,
                    std::vector<T>& buf) {
  const std::int64_t P = d.p();
  if (s == 1) return g + n0 * d.co * P;
  buf.resize(static_cast<std::size_t>(d.co * s * P));
  for (std::int64_t i = 0; i < s; ++i) {
    for (std::int64_t c = 0; c < d.co; ++c) {
      std::memcpy(buf.data() + c * s * P + i * P, g + ((n0 + i) * d.co + c) * P, sizeof(T) * P);
    }
  }
  return buf.data();
}

template <class T>
void conv_input_grad_impl(const T* g, const T* w, T* dx, const ConvDims& d) {
  const std::int64_t K = d.k(), P = d.p();
  CMatMap<T> wm(w, d.co, K);
  const std::int64_t S = chunk_samples(d, sizeof(T));
  auto& col = scratch<T>(0);
  auto& gbuf = scratch<T>(1);
  for (std::int64_t n0 = 0; n0 < d.n; n0 += S) {
    const std::int64_t s = std::min(S, d.n - n0);
    CMatMap<T> gm(gather_out(g, d, n0, s, gbuf), d.co, s * P);
    col.resize(static_cast<std::size_t>(K * s * P));
    MatMap<T> cm(col.data(), K, s * P);
    cm.noalias() = wm.transpose() * gm;
    col2im(col.data(), d, s, dx + n0 * d.ci * d.h * d.w);
  }
}

template <class T>
void conv_weight_grad_impl(const T* x, const T* g, T* dw, const ConvDims& d) {
  const std::int64_t K = d.k(), P = d.p();
  MatMap<T> dwm(dw, d.co, K);
  dwm.setZero();
  const std::int64_t S = chunk_samples(d, sizeof(T));
  auto& col = scratch<T>(0);
  auto& gbuf = scratch<T>(1);
  for (std::int64_t n0 = 0; n0 < d.n; n0 += S) {
    const std::int64_t s = std::min(S, d.n - n0);
    col.resize(static_cast<std::size_t>(K * s * P));
    im2col(x + n0 * d.ci * d.h * d.w, d, s, col.data());
    CMatMap<T> cm(col.data(), K, s * P);
    CMatMap<T> gm(gather_out(g, d, n0, s, gbuf), d.co, s * P);
    dwm.noalias() += gm * cm.transpose();
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, ConvGeom geom) {
  same_dtype(x, w, "conv2d");
  const ConvDims d = conv_dims(x.shape(), w.shape(), geom);
  Tensor y({d.n, d.co, d.ho, d.wo}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() { conv_forward_impl(x.data<T>(), w.data<T>(), y.data<T>(), d); });
  return record("conv2d", {x, w}, y, [geom](const Tensor& g, const Inputs& in, const Needs& needs) {
    Grads r(2);
    if (needs[0]) r[0] = conv2d_input_grad(g, in[1], in[0].shape(), geom);
    if (needs[1]) r[1] = conv2d_weight_grad(in[0], g, in[1].shape(), geom);
    return r;
  });
}

Tensor conv2d_input_grad(const Tensor& g, const Tensor& w, const Shape& x_shape, ConvGeom geom) {
  same_dtype(g, w, "conv2d_input_grad");
  const ConvDims d = conv_dims(x_shape, w.shape(), geom);
  SFV_REQUIRE(g.shape() == Shape({d.n, d.co, d.ho, d.wo}), "conv2d_input_grad: gradient shape mismatch");
  Tensor dx(x_shape, g.dtype());
  dispatch(g.dtype(), [&]<class T>() { conv_input_grad_impl(g.data<T>(), w.data<T>(), dx.data<T>(), d); });
  return record("conv2d_input_grad", {g, w}, dx,
                [geom](const Tensor& gz, const Inputs& in, const Needs& needs) {
                  Grads r(2);
                  if (needs[0]) r[0] = conv2d(gz, in[1], geom);
                  if (needs[1]) r[1] = conv2d_weight_grad(gz, in[0], in[1].shape(), geom);
                  return r;
                });
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& g, const Shape& w_shape, ConvGeom geom) {
  same_dtype(x, g, "conv2d_weight_grad");
  const ConvDims d = conv_dims(x.shape(), w_shape, geom);
  SFV_REQUIRE(g.shape() == Shape({d.n, d.co, d.ho, d.wo}), "conv2d_weight_grad: gradient shape mismatch");
  Tensor dw(w_shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>() { conv_weight_grad_impl(x.data<T>(), g.data<T>(), dw.data<T>(), d); });
  return record("conv2d_weight_grad", {x, g}, dw,
                [geom](const Tensor& gz, const Inputs& in, const Needs& needs) {
                  Grads r(2);
                  if (needs[0]) r[0] = conv2d_input_grad(in[1], gz, in[0].shape(), geom);
                  if (needs[1]) r[1] = conv2d(in[0], gz, geom);
                  return r;
                });
}

// ---------------------------------------------------------------------------
// Frame-axis convolution

namespace {

struct FrameDims {
  std::int64_t b, n, ci, s, co, k, pad;
};

FrameDims frame_dims(const Shape& x, const Shape& w) {
  SFV_REQUIRE(x.size() >= 3, "frame_conv expects [B, N, C, ...] input");
  SFV_REQUIRE(w.size() == 3, "frame_conv expects [Co, Ci, K] weight");
  SFV_REQUIRE(x[2] == w[1], "frame_conv channel mismatch: input " + shape_str(x) + ", weight " + shape_str(w));
  SFV_REQUIRE(w[2] % 2 == 1, "frame_conv kernel must be odd");
  std::int64_t s = 1;
  for (std::size_t d = 3; d < x.size(); ++d) s *= x[d];
  return {x[0], x[1], x[2], s, w[0], w[2], w[2] / 2};
}

// Per-tap weight matrices [K][Co, Ci].
template <class T>
std::vector<RowMat<T>> tap_matrices(const T* w, const FrameDims& d) {
  std::vector<RowMat<T>> taps(d.k, RowMat<T>(d.co, d.ci));
  for (std::int64_t o = 0; o < d.co; ++o)
    for (std::int64_t i = 0; i < d.ci; ++i)
      for (std::int64_t t = 0; t < d.k; ++t) taps[t](o, i) = w[(o * d.ci + i) * d.k + t];
  return taps;
}

}  // namespace

Tensor frame_conv(const Tensor& x, const Tensor& w) {
  same_dtype(x, w, "frame_conv");
  const FrameDims d = frame_dims(x.shape(), w.shape());
  Shape ys = x.shape();
  ys[2] = d.co;
  Tensor y(ys, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto taps = tap_matrices(w.data<T>(), d);
    const T* px = x.data<T>();
    T* py = y.data<T>();
    for (std::int64_t b = 0; b < d.b; ++b) {
      for (std::int64_t n = 0; n < d.n; ++n) {
        MatMap<T> ym(py + (b * d.n + n) * d.co * d.s, d.co, d.s);
        for (std::int64_t t = 0; t < d.k; ++t) {
          const std::int64_t src = n + t - d.pad;
          if (src < 0 || src >= d.n) continue;
          CMatMap<T> xm(px + (b * d.n + src) * d.ci * d.s, d.ci, d.s);
          ym.noalias() += taps[t] * xm;
        }
      }
    }
  });
  return record("frame_conv", {x, w}, y, [](const Tensor& g, const Inputs& in, const Needs& needs) {
    Grads r(2);
    if (needs[0]) r[0] = frame_conv_input_grad(g, in[1], in[0].shape());
    if (needs[1]) r[1] = frame_conv_weight_grad(in[0], g, in[1].shape());
    return r;
  });
}

Tensor frame_conv_input_grad(const Tensor& g, const Tensor& w, const Shape& x_shape) {
  same_dtype(g, w, "frame_conv_input_grad");
  const FrameDims d = frame_dims(x_shape, w.shape());
  Tensor dx(x_shape, g.dtype());
  dispatch(g.dtype(), [&]<class T>() {
    auto taps = tap_matrices(w.data<T>(), d);
    const T* pg = g.data<T>();
    T* pdx = dx.data<T>();
    for (std::int64_t b = 0; b < d.b; ++b) {
      for (std::int64_t n = 0; n < d.n; ++n) {
        CMatMap<T> gm(pg + (b * d.n + n) * d.co * d.s, d.co, d.s);
        for (std::int64_t t = 0; t < d.k; ++t) {
          const std::int64_t src = n + t - d.pad;
          if (src < 0 || src >= d.n) continue;
          MatMap<T> xm(pdx + (b * d.n + src) * d.ci * d.s, d.ci, d.s);
          xm.noalias() += taps[t].transpose() * gm;
        }
      }
    }
  });
  return record("frame_conv_input_grad", {g, w}, dx,
                [](const Tensor& gz, const Inputs& in, const Needs& needs) {
                  Grads r(2);
                  if (needs[0]) r[0] = frame_conv(gz, in[1]);
                  if (needs[1]) r[1] = frame_conv_weight_grad(gz, in[0], in[1].shape());
                  return r;
                });
}

Tensor frame_conv_weight_grad(const Tensor& x, const Tensor& g, const Shape& w_shape) {
  same_dtype(x, g, "frame_conv_weight_grad");
  const FrameDims d = frame_dims(x.shape(), w_shape);
  Tensor dw(w_shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    std::vector<RowMat<T>> taps(d.k, RowMat<T>::Zero(d.co, d.ci));
    const T* px = x.data<T>();
    const T* pg = g.data<T>();
    for (std::int64_t b = 0; b < d.b; ++b) {
      for (std::int64_t n = 0; n < d.n; ++n) {
        CMatMap<T> gm(pg + (b * d.n + n) * d.co * d.s, d.co, d.s);
        for (std::int64_t t = 0; t < d.k; ++t) {
          const std::int64_t src = n + t - d.pad;
          if (src < 0 || src >= d.n) continue;
          CMatMap<T> xm(px + (b * d.n + src) * d.ci * d.s, d.ci, d.s);
          taps[t].noalias() += gm * xm.transpose();
        }
      }
    }
    T* pw = dw.data<T>();
    for (std::int64_t o = 0; o < d.co; ++o)
      for (std::int64_t i = 0; i < d.ci; ++i)
        for (std::int64_t t = 0; t < d.k; ++t) pw[(o * d.ci + i) * d.k + t] = taps[t](o, i);
  });
  return record("frame_conv_weight_grad", {x, g}, dw,
                [](const Tensor& gz, const Inputs& in, const Needs& needs) {
                  Grads r(2);
                  if (needs[0]) r[0] = frame_conv_input_grad(in[1], gz, in[0].shape());
                  if (needs[1]) r[1] = frame_conv(in[0], gz);
                  return r;
                });
}

// ---------------------------------------------------------------------------
// Resampling

Tensor upsample2x(const Tensor& a) {
  SFV_REQUIRE(a.rank() >= 2, "upsample2x expects at least 2 axes");
  const std::int64_t h = a.size(-2), w = a.size(-1);
  const std::int64_t planes = a.numel() / (h * w);
  Shape s = a.shape();
  s[s.size() - 2] = 2 * h;
  s[s.size() - 1] = 2 * w;
  Tensor out(s, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = a.data<T>();
    T* po = out.data<T>();
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* src = pa + p * h * w;
      T* dst = po + p * 4 * h * w;
      for (std::int64_t y = 0; y < h; ++y) {
        T* r0 = dst + (2 * y) * 2 * w;
        for (std::int64_t x = 0; x < w; ++x) r0[2 * x] = r0[2 * x + 1] = src[y * w + x];
        std::memcpy(r0 + 2 * w, r0, sizeof(T) * 2 * w);
      }
    }
  });
  return record("upsample2x", {a}, out, [](const Tensor& g, const Inputs&, const Needs&) {
    return Grads{sum_pool2x(g)};
  });
}

Tensor sum_pool2x(const Tensor& a) {
  SFV_REQUIRE(a.rank() >= 2 && a.size(-2) % 2 == 0 && a.size(-1) % 2 == 0,
          "sum_pool2x expects even trailing extents");
  const std::int64_t h = a.size(-2) / 2, w = a.size(-1) / 2;
  const std::int64_t planes = a.numel() / (4 * h * w);
  Shape s = a.shape();
  s[s.size() - 2] = h;
  s[s.size() - 1] = w;
  Tensor out(s, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = a.data<T>();
    T* po = out.data<T>();
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* src = pa + p * 4 * h * w;
      T* dst = po + p * h * w;
      for (std::int64_t y = 0; y < h; ++y) {
        const T* r0 = src + (2 * y) * 2 * w;
        const T* r1 = r0 + 2 * w;
        for (std::int64_t x = 0; x < w; ++x)
          dst[y * w + x] = r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
      }
    }
  });
  return record("sum_pool2x", {a}, out, [](const Tensor& g, const Inputs&, const Needs&) {
    return Grads{upsample2x(g)};
  });
}

Tensor avg_pool(const Tensor& a, std::int64_t f) {
  SFV_REQUIRE(!(a.requires_grad() && autograd::grad_enabled()), "avg_pool is not differentiable");
  SFV_REQUIRE(a.rank() >= 2 && f > 0 && a.size(-2) % f == 0 && a.size(-1) % f == 0,
          "avg_pool factor must divide the trailing extents");
  const std::int64_t H = a.size(-2), W = a.size(-1);
  const std::int64_t h = H / f, w = W / f;
  const std::int64_t planes = a.numel() / (H * W);
  Shape s = a.shape();
  s[s.size() - 2] = h;
  s[s.size() - 1] = w;
  Tensor out(s, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = a.data<T>();
    T* po = out.data<T>();
    const double inv = 1.0 / static_cast<double>(f * f);
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (std::int64_t dy = 0; dy < f; ++dy)
            for (std::int64_t dx = 0; dx < f; ++dx) acc += pa[p * H * W + (y * f + dy) * W + x * f + dx];
          po[p * h * w + y * w + x] = static_cast<T>(acc * inv);
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::int64_t groups,
                  double eps) {
  SFV_REQUIRE(x.rank() >= 2, "group_norm expects [M, C, ...]");
  const std::int64_t m = x.size(0), c = x.size(1);
  SFV_REQUIRE(groups > 0 && c % groups == 0, "group_norm: groups must divide channels");
  SFV_REQUIRE(gamma.numel() == c && beta.numel() == c, "group_norm: affine size mismatch");
  Tensor xr = reshape(x, {m, groups, -1});
  Tensor mu = mean_axis(xr, 2);
  Tensor xc = sub(xr, mu);
  Tensor var = mean_axis(square(xc), 2);
  Tensor y = reshape(mul(xc, pow_scalar(add_scalar(var, eps), -0.5)), x.shape());
  Shape ps(x.rank(), 1);
  ps[1] = c;
  return add(mul(y, reshape(gamma, ps)), reshape(beta, ps));
}

}  // namespace sfv
