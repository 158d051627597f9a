#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "pgfwi/tensor.hpp"

// Differentiable tensor operations. Image ops accept (C,H,W) or (N,C,H,W)
// and return the same rank. All inputs are f64, row-major.
namespace pgfwi::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

// (m,k) x (k,n) -> (m,n)
Tensor matmul(const Tensor& a, const Tensor& b);

// weight (C_out, C_in, kh, kw); bias (C_out) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride = 1, std::size_t pad = 0);

// weight (C_in, C_out, kh, kw); output size stride*(in-1) + k - 2*pad.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride = 1, std::size_t pad = 0);

// kernel = stride = k, floor on odd sizes; ties go to the first row-major element.
Tensor maxpool2d(const Tensor& x, std::size_t k = 2);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sqrt(const Tensor& x);
// Gradient passes only strictly inside (lo, hi).
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Concatenation along the channel axis (dim 0 for CHW, dim 1 for NCHW).
Tensor concat_channels(std::span<const Tensor> xs);

// Align-corners bilinear interpolation of the two trailing axes.
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);

// Gathers rows (second-to-last axis) by index.
Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows);

Tensor reshape(const Tensor& x, Shape shape);
// Merges all axes from start_dim onward.
Tensor flatten(const Tensor& x, std::size_t start_dim = 1);

// x (B, in), weight (out, in), bias (out) or undefined -> (B, out).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

enum class OpKind {
    Add, Sub, Mul, ScalarMul, Matmul, Conv2d, ConvTranspose2d, MaxPool2d,
    Relu, LeakyRelu, Sigmoid, Mean, Sum, Square, Log, Abs, Concat,
    BilinearResize, Flatten, Linear,
};

struct OpAttrs {
    double scalar = 1.0;  // scalar-mul factor, leaky-relu slope
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t kernel = 2;  // maxpool
    std::size_t out_h = 0;
    std::size_t out_w = 0;
    std::size_t start_dim = 1;
};

std::string_view op_name(OpKind kind);

// Uniform entry point over the kinds above. Conv/linear take
// {x, weight[, bias]}; concat takes any number of inputs.
Tensor op_forward(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

} // namespace pgfwi::ops
