#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vmbh/tensor.hpp"

namespace vmbh {

// ---- elementwise, with trailing-dimension broadcasting -------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor abs(const Tensor& x);  // subgradient 0 at 0
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);

// ---- reductions ----------------------------------------------------------
// `axes` empty means all axes. Negative axes count from the back.

Tensor sum(const Tensor& x, std::vector<int> axes = {}, bool keepdim = false);
Tensor mean(const Tensor& x, std::vector<int> axes = {}, bool keepdim = false);
// Gradient flows to the first maximal element (lowest linear index).
Tensor max(const Tensor& x, std::vector<int> axes = {}, bool keepdim = false);

// ---- shape manipulation (always copies) ----------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // 2-D
Tensor permute(const Tensor& x, std::vector<std::size_t> order);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);

// ---- linear algebra and fused kernels ------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor softmax(const Tensor& x, int axis);
// (x - mean) / sqrt(var + eps) over the trailing axis, biased variance.
Tensor normalize_last(const Tensor& x, double eps);

// Cross-correlation. x [in_c,h,w], weight [out_c,in_c,kh,kw], bias [out_c]
// or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

// Causal depthwise 1-D convolution over the sequence axis.
// x [seq,channels], weight [channels,width], bias [channels] or undefined.
// y[t,c] = bias[c] + sum_j weight[c,j] * x[t - (width-1) + j, c], zero padded.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Bilinear sampling of f [c,h,w] at continuous pixel coordinates
// points [n,2] (x = column, y = row). Coordinates are clamped to the border.
// Returns [n,c].
Tensor grid_sample(const Tensor& f, const Tensor& points);

// Axis-angle [3] to rotation matrix [3,3].
Tensor rodrigues(const Tensor& axis_angle);

}  // namespace vmbh
