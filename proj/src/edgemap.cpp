#include "aanreg/edgemap.hpp"

#include "aanreg/warp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aanreg {

Volume Gradient3::magnitude() const {
    Volume m(gx.dims());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i] + gz[i] * gz[i]);
    return m;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma >= 0)) throw std::invalid_argument("gaussian sigma must be non-negative");
    if (sigma == 0) return {1.0};
    const auto radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * i * i / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

namespace {

// One pass of a 1D kernel along `axis` with clamped indices.
Volume convolve_axis(const Volume& v, const std::vector<double>& k, int axis) {
    const Dims& d = v.dims();
    const auto radius = static_cast<long>(k.size() / 2);
    const auto n = static_cast<long>(d[axis]);
    Volume out(d);
    for (std::size_t x = 0; x < d.nx; ++x) {
        for (std::size_t y = 0; y < d.ny; ++y) {
            for (std::size_t z = 0; z < d.nz; ++z) {
                std::array<long, 3> p{static_cast<long>(x), static_cast<long>(y), static_cast<long>(z)};
                const long c = p[static_cast<std::size_t>(axis)];
                double acc = 0;
                for (long i = -radius; i <= radius; ++i) {
                    p[static_cast<std::size_t>(axis)] = std::clamp(c + i, 0L, n - 1);
                    acc += k[static_cast<std::size_t>(i + radius)] *
                           v(static_cast<std::size_t>(p[0]), static_cast<std::size_t>(p[1]),
                             static_cast<std::size_t>(p[2]));
                }
                out(x, y, z) = acc;
            }
        }
    }
    return out;
}

}  // namespace

Volume gaussian_smooth(const Volume& v, double sigma) {
    const auto k = gaussian_kernel(sigma);
    if (k.size() == 1) return v;
    Volume out = v;
    for (int axis = 0; axis < 3; ++axis) out = convolve_axis(out, k, axis);
    return out;
}

Gradient3 gradient_3d(const Volume& v) {
    const Dims& d = v.dims();
    if (d.nx < 2 || d.ny < 2 || d.nz < 2) throw std::invalid_argument("gradient_3d needs at least 2 voxels per axis");
    Gradient3 g{Volume(d), Volume(d), Volume(d)};
    Volume* comps[3] = {&g.gx, &g.gy, &g.gz};
    for (std::size_t x = 0; x < d.nx; ++x) {
        for (std::size_t y = 0; y < d.ny; ++y) {
            for (std::size_t z = 0; z < d.nz; ++z) {
                const std::array<std::size_t, 3> p{x, y, z};
                for (int a = 0; a < 3; ++a) {
                    const std::size_t n = d[a];
                    auto lo = p, hi = p;
                    double scale = 0.5;
                    if (p[static_cast<std::size_t>(a)] == 0) {
                        hi[static_cast<std::size_t>(a)] = 1;
                        scale = 1.0;
                    } else if (p[static_cast<std::size_t>(a)] == n - 1) {
                        lo[static_cast<std::size_t>(a)] = n - 2;
                        scale = 1.0;
                    } else {
                        --lo[static_cast<std::size_t>(a)];
                        ++hi[static_cast<std::size_t>(a)];
                    }
                    (*comps[a])(x, y, z) = scale * (v(hi[0], hi[1], hi[2]) - v(lo[0], lo[1], lo[2]));
                }
            }
        }
    }
    return g;
}

Volume suppress_non_maxima(const Gradient3& g, const Volume& magnitude) {
    const Dims& d = magnitude.dims();
    Volume out(d, 0.0);
    for (std::size_t x = 0; x < d.nx; ++x) {
        for (std::size_t y = 0; y < d.ny; ++y) {
            for (std::size_t z = 0; z < d.nz; ++z) {
                const std::size_t i = d.offset(x, y, z);
                const double m = magnitude[i];
                if (m <= 0) continue;
                const double ux = g.gx[i] / m, uy = g.gy[i] / m, uz = g.gz[i] / m;
                const double fwd = trilinear_sample(magnitude, {x + ux, y + uy, z + uz});
                const double bwd = trilinear_sample(magnitude, {x - ux, y - uy, z - uz});
                if (m >= fwd && m >= bwd) out[i] = m;
            }
        }
    }
    return out;
}

EdgeMap hysteresis(const Volume& mag, double low, double high) {
    const Dims& d = mag.dims();
    EdgeMap edges(d, 0);
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < mag.size(); ++i) {
        if (mag[i] >= high && mag[i] > 0) {
            edges[i] = 1;
            stack.push_back(i);
        }
    }
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        const auto [x, y, z] = d.coords(i);
        for (int dx = -1; dx <= 1; ++dx) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dz = -1; dz <= 1; ++dz) {
                    const long qx = static_cast<long>(x) + dx, qy = static_cast<long>(y) + dy,
                               qz = static_cast<long>(z) + dz;
                    if (qx < 0 || qy < 0 || qz < 0 || qx >= static_cast<long>(d.nx) ||
                        qy >= static_cast<long>(d.ny) || qz >= static_cast<long>(d.nz))
                        continue;
                    const std::size_t j = d.offset(static_cast<std::size_t>(qx), static_cast<std::size_t>(qy),
                                                   static_cast<std::size_t>(qz));
                    if (edges[j] == 0 && mag[j] >= low && mag[j] > 0) {
                        edges[j] = 1;
                        stack.push_back(j);
                    }
                }
            }
        }
    }
    return edges;
}

EdgeMap canny_3d(const Volume& v, const CannyParams& params) {
    if (!(params.low >= 0) || !(params.low <= params.high))
        throw std::invalid_argument("canny thresholds must satisfy 0 <= low <= high");
    const Volume smooth = gaussian_smooth(v, params.sigma);
    const Gradient3 g = gradient_3d(smooth);
    const Volume mag = g.magnitude();
    const double peak = *std::max_element(mag.storage().begin(), mag.storage().end());
    if (!(peak > 0)) return EdgeMap(v.dims(), 0);
    Volume thin = suppress_non_maxima(g, mag);
    for (double& m : thin.storage()) m /= peak;
    return hysteresis(thin, params.low, params.high);
}

}  // namespace aanreg
