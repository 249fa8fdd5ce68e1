#pragma once

#include <vector>

#include "srlab/tensor.hpp"

// Differentiable operators. Image tensors are N x C x H x W; all padding is zero padding.
namespace srlab::ops {

/// Cross-correlation. weight is Cout x Cin x k x k, bias is Cout (may be undefined).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1,
              int padding = 0);

/// Linear adjoint of conv2d. weight is Cin x Cout x k x k; output extent
/// (H - 1) * stride - 2 * padding + k.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        int stride = 1, int padding = 0);

/// out[n, c, h*r + i, w*r + j] = in[n, c*r*r + i*r + j, h, w]
Tensor pixel_shuffle(const Tensor& input, int factor);
Tensor pixel_unshuffle(const Tensor& input, int factor);

Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double factor);
/// x scaled by a one-element (typically learned) tensor.
Tensor mul_learned(const Tensor& x, const Tensor& scale);
Tensor concat_channels(const std::vector<Tensor>& parts);
/// Mean over every element; returns a one-element tensor.
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);

/// Per-channel Sobel gradient magnitude sqrt(Gx^2 + Gy^2), zero padding.
/// Gx uses [[-1,0,1],[-2,0,2],[-1,0,1]], Gy its transpose.
Tensor sobel(const Tensor& x);

/// Stacks same-shaped 1 x C x H x W tensors along the batch axis (not differentiable).
Tensor stack_batch(const std::vector<Tensor>& items);
/// Batch item `index` as a 1 x C x H x W tensor (not differentiable).
Tensor batch_item(const Tensor& batch, std::int64_t index);

}  // namespace srlab::ops
