#pragma once

#include "aanreg/volume.hpp"

namespace aanreg {

struct Gradient3 {
    Volume gx, gy, gz;
    Volume magnitude() const;
};

/// Separable Gaussian blur with border replication. The kernel is truncated at
/// radius ceil(3*sigma) and normalized to sum 1; sigma == 0 returns the input.
Volume gaussian_smooth(const Volume& v, double sigma);

/// 1D kernel used by gaussian_smooth (length 2*ceil(3*sigma)+1).
std::vector<double> gaussian_kernel(double sigma);

/// Central differences inside, one-sided differences on the faces.
Gradient3 gradient_3d(const Volume& v);

struct CannyParams {
    double low = 0.1;
    double high = 0.2;
    double sigma = 1.0;
};

/// 3D Canny: smooth, gradient, non-maximum suppression along the continuous
/// gradient direction, then double-threshold hysteresis with 26-connectivity.
/// Thresholds apply to the gradient magnitude divided by its global maximum.
EdgeMap canny_3d(const Volume& v, const CannyParams& params);

/// Pieces of canny_3d exposed for audits.
Volume suppress_non_maxima(const Gradient3& g, const Volume& magnitude);
EdgeMap hysteresis(const Volume& normalized_magnitude, double low, double high);

}  // namespace aanreg
