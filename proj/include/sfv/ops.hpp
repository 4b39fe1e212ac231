#pragma once

#include <vector>

#include "sfv/tensor.hpp"

// Differentiable tensor operations. Every op records a backward rule that is
// itself built from ops in this header, so gradients can be differentiated
// again (first derivatives of the backward rules are all that is supported
// for silu and relu).
namespace sfv {

// Broadcasting elementwise arithmetic (numpy rules).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(neg(a), s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double p);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor relu(const Tensor& a);
// Heaviside step (x > 0); not differentiable.
Tensor step(const Tensor& a);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sum over broadcast dimensions so the result has `shape`.
Tensor sum_to(const Tensor& a, const Shape& shape);
Tensor broadcast_to(const Tensor& a, const Shape& shape);
// Sum / mean over one axis, keeping it with extent 1.
Tensor sum_axis(const Tensor& a, int axis);
Tensor mean_axis(const Tensor& a, int axis);

// Layout.
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length);
// Zero tensor of extent `full` along `axis` with `a` placed at `start`.
Tensor embed_slice(const Tensor& a, int axis, std::int64_t start, std::int64_t full);

// 2-D matrix product with optional transposes: op(a)[m,k] x op(b)[k,n].
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

struct ConvGeom {
  std::int64_t stride_h = 1, stride_w = 1;
  std::int64_t pad_h = 0, pad_w = 0;
};

// x [N, Ci, H, W], w [Co, Ci, kh, kw] -> [N, Co, Ho, Wo]; no bias.
Tensor conv2d(const Tensor& x, const Tensor& w, ConvGeom geom);
// Adjoint of conv2d in x (transposed convolution) and in w.
Tensor conv2d_input_grad(const Tensor& g, const Tensor& w, const Shape& x_shape, ConvGeom geom);
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& g, const Shape& w_shape, ConvGeom geom);

// Convolution along the frame axis of x [B, N, Ci, ...] with w [Co, Ci, K],
// K odd, zero padding K/2 in time -> [B, N, Co, ...].
Tensor frame_conv(const Tensor& x, const Tensor& w);
Tensor frame_conv_input_grad(const Tensor& g, const Tensor& w, const Shape& x_shape);
Tensor frame_conv_weight_grad(const Tensor& x, const Tensor& g, const Shape& w_shape);

// Nearest-neighbour 2x upsampling of the last two axes and its adjoint.
Tensor upsample2x(const Tensor& a);
Tensor sum_pool2x(const Tensor& a);
// Mean over f x f blocks of the last two axes (not differentiable through f).
Tensor avg_pool(const Tensor& a, std::int64_t factor);

// x [M, C, ...] normalized per (sample, group) then scaled by gamma/beta [C].
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::int64_t groups,
                  double eps = 1e-5);

}  // namespace sfv
