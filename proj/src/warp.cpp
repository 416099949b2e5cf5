#include "aanreg/warp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aanreg {

AxisSample axis_sample(double c, std::size_t n) {
    AxisSample s;
    if (n == 1) return s;
    const double top = static_cast<double>(n - 1);
    s.slope_ok = c >= 0 && c <= top;
    const double cc = std::clamp(c, 0.0, top);
    const auto f = static_cast<std::size_t>(std::floor(cc));
    s.lo = std::min(f, n - 2);
    s.hi = s.lo + 1;
    s.frac = cc - static_cast<double>(s.lo);
    return s;
}

double trilinear_sample(const Volume& v, const Point3& p) {
    const Dims& d = v.dims();
    const AxisSample sx = axis_sample(p[0], d.nx), sy = axis_sample(p[1], d.ny), sz = axis_sample(p[2], d.nz);
    const double wx[2] = {1 - sx.frac, sx.frac}, wy[2] = {1 - sy.frac, sy.frac}, wz[2] = {1 - sz.frac, sz.frac};
    const std::size_t ix[2] = {sx.lo, sx.hi}, iy[2] = {sy.lo, sy.hi}, iz[2] = {sz.lo, sz.hi};
    double acc = 0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) {
                const double w = wx[a] * wy[b] * wz[c];
                if (w != 0) acc += w * v(ix[a], iy[b], iz[c]);
            }
    return acc;
}

Volume warp_image(const Volume& v, const DisplacementField& ddf) {
    require_same_dims(v.dims(), ddf.dims(), "warp_image");
    const Dims& d = v.dims();
    Volume out(d);
    for (std::size_t x = 0; x < d.nx; ++x)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t z = 0; z < d.nz; ++z) {
                const std::size_t i = d.offset(x, y, z);
                const auto u = ddf.at(i);
                out[i] = trilinear_sample(v, {x + u[0], y + u[1], z + u[2]});
            }
    return out;
}

LabelMap warp_labels(const LabelMap& m, const DisplacementField& ddf) {
    require_same_dims(m.dims(), ddf.dims(), "warp_labels");
    const Dims& d = m.dims();
    auto nearest = [](double c, std::size_t n) {
        const double cc = std::clamp(c, 0.0, static_cast<double>(n - 1));
        return static_cast<std::size_t>(std::floor(cc + 0.5));
    };
    LabelMap out(d);
    for (std::size_t x = 0; x < d.nx; ++x)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t z = 0; z < d.nz; ++z) {
                const std::size_t i = d.offset(x, y, z);
                const auto u = ddf.at(i);
                out[i] = m(nearest(x + u[0], d.nx), nearest(y + u[1], d.ny), nearest(z + u[2], d.nz));
            }
    return out;
}

std::array<std::array<double, 3>, 3> displacement_gradient(const DisplacementField& ddf, std::size_t x,
                                                           std::size_t y, std::size_t z) {
    const Dims& d = ddf.dims();
    std::array<std::array<double, 3>, 3> g{};
    const std::array<std::size_t, 3> p{x, y, z};
    for (int j = 0; j < 3; ++j) {
        auto lo = p, hi = p;
        if (p[static_cast<std::size_t>(j)] + 1 < d[j])
            ++hi[static_cast<std::size_t>(j)];
        else
            --lo[static_cast<std::size_t>(j)];
        const std::size_t ilo = d.offset(lo[0], lo[1], lo[2]), ihi = d.offset(hi[0], hi[1], hi[2]);
        for (int i = 0; i < 3; ++i) g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = ddf.component(i)[ihi] - ddf.component(i)[ilo];
    }
    return g;
}

double det3(const std::array<std::array<double, 3>, 3>& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

JacobianField jacobian_determinants(const DisplacementField& ddf) {
    const Dims& d = ddf.dims();
    if (d.nx < 2 || d.ny < 2 || d.nz < 2)
        throw std::invalid_argument("jacobian_determinants needs at least 2 voxels per axis");
    JacobianField det(d);
    for (std::size_t x = 0; x < d.nx; ++x)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t z = 0; z < d.nz; ++z) {
                auto j = displacement_gradient(ddf, x, y, z);
                for (int k = 0; k < 3; ++k) j[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)] += 1.0;
                det(x, y, z) = det3(j);
            }
    return det;
}

std::size_t count_negative_jacobians(const DisplacementField& ddf) {
    const JacobianField det = jacobian_determinants(ddf);
    return static_cast<std::size_t>(std::count_if(det.storage().begin(), det.storage().end(), [](double v) { return v < 0; }));
}

}  // namespace aanreg
