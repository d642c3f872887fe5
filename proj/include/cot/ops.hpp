#pragma once

// Differentiable operators. Image-like tensors are NCHW.
//
// Binary elementwise ops accept either equal shapes or one operand with a
// single element (broadcast as a scalar); there is no other broadcasting.

#include "cot/tensor.hpp"

namespace cot {

// Elementwise binary.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// Throws DivisionByNearZero if any |b| < 1e-12.
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
// On ties the gradient goes to `a`.
template <typename T> Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b);

// Tensor-scalar.
template <typename T> Tensor<T> add(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul(const Tensor<T>& a, T s);
template <typename T> Tensor<T> rsub(T s, const Tensor<T>& a);  // s - a
template <typename T> Tensor<T> div(const Tensor<T>& a, T s);
template <typename T> Tensor<T> minimum(const Tensor<T>& a, T s);
template <typename T> Tensor<T> maximum(const Tensor<T>& a, T s);

// Comparison: 1 where a > b, else 0. Never differentiable.
template <typename T> Tensor<T> greater(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> greater(const Tensor<T>& a, T s);

// Elementwise unary.
template <typename T> Tensor<T> neg(const Tensor<T>& a);
// d|x|/dx = sign(x), with sign(0) = 0.
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T negative_slope);
// Gradient passes where lo <= x <= hi.
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

// Identity forward, exactly zero gradient backward.
template <typename T> Tensor<T> stop_gradient(const Tensor<T>& a);

// Reductions. The full reductions return a rank-0 scalar.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a, int axis, bool keepdim = true);
template <typename T> Tensor<T> mean(const Tensor<T>& a, int axis, bool keepdim = true);

// Cross-correlation with zero padding. input NCHW, weight OCKhKw, bias O or
// undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding);

template <typename T>
struct WarpResult {
    Tensor<T> output;
    // N x 1 x H x W, 1 where the sample position x - d lies in [0, W-1].
    Tensor<T> valid;
};

// output(n,c,y,x) = linear interpolation of source(n,c,y,.) at x - disparity(n,0,y,x).
// Out-of-range positions are clamped to the border and flagged invalid.
// Throws NonFiniteDisparity.
template <typename T>
WarpResult<T> warp_horizontal(const Tensor<T>& source, const Tensor<T>& disparity);

// cost N x D x H x W -> N x 1 x H x W, sum_d d * softmax(-cost)_d.
template <typename T> Tensor<T> soft_argmin(const Tensor<T>& cost);

template <typename T>
struct CostVolumeResult {
    Tensor<T> cost;   // N x D x H x W
    Tensor<T> valid;  // 1 x D x H x W: 0 where x - d < 0 was clamped
};

// cost(n,d,y,x) = mean_c |left(n,c,y,x) - right(n,c,y,max(x-d,0))|.
template <typename T>
CostVolumeResult<T> cost_volume_absdiff(const Tensor<T>& left, const Tensor<T>& right, int num_disparities);

// Bilinear upsampling by an integer factor (half-pixel centers, edge clamp).
template <typename T> Tensor<T> upsample_bilinear(const Tensor<T>& a, int factor);

template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

// 3x3 mean filter with replicated borders; output shape equals input shape.
template <typename T> Tensor<T> box_filter3(const Tensor<T>& a);

// Forward differences along W (diff_x) or H (diff_y); last column/row is 0.
template <typename T> Tensor<T> diff_x(const Tensor<T>& a);
template <typename T> Tensor<T> diff_y(const Tensor<T>& a);

template <typename T> Tensor<T> flip_horizontal(const Tensor<T>& a);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }
template <typename T> Tensor<T> operator+(const Tensor<T>& a, T s) { return add(a, s); }
template <typename T> Tensor<T> operator+(T s, const Tensor<T>& a) { return add(a, s); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, T s) { return add(a, -s); }
template <typename T> Tensor<T> operator-(T s, const Tensor<T>& a) { return rsub(s, a); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, T s) { return mul(a, s); }
template <typename T> Tensor<T> operator*(T s, const Tensor<T>& a) { return mul(a, s); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, T s) { return div(a, s); }

}  // namespace cot
