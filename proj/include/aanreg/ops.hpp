#pragma once

#include "aanreg/graph.hpp"

namespace aanreg::nn {

/// 3x3x3 cross-correlation with zero padding 1. Stride 2 halves each
/// spatial dim and needs even dims. kernel: {out, in, 3, 3, 3}; bias: {out}.
Var conv3d(const Var& x, const Var& kernel, const Var& bias, int stride);

/// y = x for x >= 0, slope*x otherwise; the derivative at 0 is `slope`.
Var leaky_relu(const Var& x, double slope = 0.2);

/// Nearest-neighbour upsampling by 2 along every spatial axis.
Var upsample_nearest(const Var& x);

/// 2x2x2 mean pooling (the adjoint-up-to-scale of upsample_nearest).
Var avg_pool2(const Var& x);

/// Stacks channels of `a` then `b`.
Var concat_channels(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var sum(const Var& x);

/// Sum of w_i * term_i over scalar terms.
Var weighted_sum(const std::vector<std::pair<double, Var>>& terms);

/// Differentiable trilinear warp of a 1-channel image by a 3-channel
/// displacement field, border-replicating like warp_image.
Var warp_layer(const Var& image, const Var& ddf);

}  // namespace aanreg::nn
