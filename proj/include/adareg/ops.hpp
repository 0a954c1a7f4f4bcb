#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "adareg/tape.hpp"

namespace adareg::ad {

// Binary ops take identical shapes, or a rank-1 `b` broadcast along the channel
// axis (axis 1) of a rank-2 or rank-4 `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, double factor);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
/// Gradient is 1 on the closed interval [lo, hi] and 0 strictly outside.
Var clamp(Var a, double lo, double hi);

Var matmul(Var a, Var b);

enum class Reduce { sum, mean };
/// Reduced axes are removed; reducing every axis yields a length-1 tensor.
Var reduce(Reduce op, Var a, std::vector<std::size_t> axes);
Var sum(Var a);
Var mean(Var a);
/// Sum of squares of all entries, accumulated in storage order.
Var sum_squares(Var a);

Var reshape(Var a, Shape shape);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t count);
Var concat(std::span<const Var> parts, std::size_t axis);

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

std::size_t conv_output_size(std::size_t in, std::size_t kernel, ConvGeometry g);

/// Direct cross-correlation over NCHW input with an (out, in, kh, kw) kernel.
Var conv2d(Var x, Var kernel, std::optional<Var> bias, ConvGeometry geometry);

/// Non-overlapping k x k average pooling; H and W must be divisible by k.
Var avg_pool2d(Var x, std::size_t k);

struct BatchMoments {
  Tensor mean;
  Tensor var;  // biased
};

/// Normalizes B x C or N x C x H x W input with batch statistics. The input
/// gradient of every channel sums to exactly zero in (n, h, w) order, as the
/// output is invariant to a per-channel shift of the input.
Var batch_norm_train(Var x, Var gamma, Var beta, double epsilon, BatchMoments* moments = nullptr);
Var batch_norm_infer(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var,
                     double epsilon);

}  // namespace adareg::ad
