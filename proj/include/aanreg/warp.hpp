#pragma once

#include "aanreg/volume.hpp"

#include <array>

namespace aanreg {

using Point3 = std::array<double, 3>;

/// Trilinear interpolation weights for one continuous coordinate after
/// clamping to [0, n-1]. `lo` + 1 is the upper neighbour (equal to `lo`
/// when n == 1). `slope_ok` is false when clamping saturated the coordinate.
struct AxisSample {
    std::size_t lo = 0;
    std::size_t hi = 0;
    double frac = 0;
    bool slope_ok = false;
};
AxisSample axis_sample(double c, std::size_t n);

/// Border-replicating trilinear interpolation.
double trilinear_sample(const Volume& v, const Point3& p);

/// out(x) = v(x + u(x)), trilinear.
Volume warp_image(const Volume& v, const DisplacementField& ddf);

/// Nearest-neighbour warp for categorical labels.
LabelMap warp_labels(const LabelMap& m, const DisplacementField& ddf);

/// Spatial derivatives of u at a voxel: J[i][j] = du_i/dx_j, forward
/// differences with a backward difference on the far face.
std::array<std::array<double, 3>, 3> displacement_gradient(const DisplacementField& ddf, std::size_t x,
                                                           std::size_t y, std::size_t z);

double det3(const std::array<std::array<double, 3>, 3>& m);

/// det(I + grad u) per voxel. Requires at least 2 voxels per axis.
JacobianField jacobian_determinants(const DisplacementField& ddf);

/// Number of voxels (boundary included) with det(I + grad u) < 0.
std::size_t count_negative_jacobians(const DisplacementField& ddf);

}  // namespace aanreg
