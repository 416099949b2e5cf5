#pragma once

// Shared helpers for the unit tests and the acceptance runner: random
// instances, a finite-difference gradient checker, and exhaustive-loop
// oracles written independently of the library code.

#include "aanreg/graph.hpp"
#include "aanreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <vector>

namespace testing_support {

using aanreg::Dims;
using aanreg::nn::Shape;
using aanreg::nn::Var;

inline std::vector<double> uniform_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

inline Dims random_dims(std::mt19937_64& rng, std::size_t lo, std::size_t hi, bool even = false) {
    std::uniform_int_distribution<std::size_t> u(lo, hi);
    auto pick = [&] {
        std::size_t v = u(rng);
        if (even && v % 2) v = v + 1 <= hi ? v + 1 : v - 1;
        return v;
    };
    const std::size_t a = pick(), b = pick(), c = pick();
    return {a, b, c};
}

inline aanreg::Volume random_volume(const Dims& d, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    aanreg::Volume v(d);
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& x : v.storage()) x = u(rng);
    return v;
}

inline aanreg::DisplacementField random_field(const Dims& d, std::mt19937_64& rng, double amp) {
    aanreg::DisplacementField f(d);
    for (int c = 0; c < 3; ++c) f.component(c) = random_volume(d, rng, -amp, amp);
    return f;
}

/// sum_i r_i * v_i as a scalar node, so a whole tensor output can be checked
/// through one random projection.
inline Var project(const Var& v, std::vector<double> r) {
    double acc = 0;
    for (std::size_t i = 0; i < r.size(); ++i) acc += r[i] * v->value[i];
    return aanreg::nn::make_op("project", {1}, {acc}, {v}, [r = std::move(r)](aanreg::nn::Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < r.size(); ++i) g[i] += self.grad[0] * r[i];
    });
}

/// Compares backprop gradients of `f(inputs)` with central differences at up
/// to `max_coords` random coordinates per input. Returns the largest
/// ||analytic - numeric|| / max(||analytic||, ||numeric||) over inputs.
inline double gradient_check(const std::function<Var(const std::vector<Var>&)>& f, const std::vector<Var>& inputs,
                             std::mt19937_64& rng, std::size_t max_coords = 96, double h = 1e-5) {
    for (const Var& v : inputs) v->zero_grad();
    aanreg::nn::backward(f(inputs));
    double worst = 0;
    for (const Var& v : inputs) {
        std::vector<std::size_t> idx(v->value.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        if (idx.size() > max_coords) idx.resize(max_coords);
        double diff2 = 0, a2 = 0, n2 = 0;
        for (std::size_t i : idx) {
            const double keep = v->value[i];
            v->value[i] = keep + h;
            const double up = f(inputs)->value[0];
            v->value[i] = keep - h;
            const double down = f(inputs)->value[0];
            v->value[i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double analytic = v->grad_buffer()[i];
            diff2 += (analytic - numeric) * (analytic - numeric);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
        }
        const double denom = std::sqrt(std::max(a2, n2));
        if (denom == 0) continue;  // both exactly zero: nothing to compare
        worst = std::max(worst, std::sqrt(diff2) / denom);
    }
    return worst;
}

// Oracles ---------------------------------------------------------------------

/// Exhaustive 3x3x3 cross-correlation, zero padding 1. x: {cin, d}; k: {cout, cin, 3,3,3}.
inline std::vector<double> conv_oracle(const std::vector<double>& x, std::size_t cin, const Dims& d,
                                       const std::vector<double>& k, const std::vector<double>& b, std::size_t cout,
                                       int stride) {
    const Dims o = stride == 1 ? d : Dims{d.nx / 2, d.ny / 2, d.nz / 2};
    std::vector<double> y(cout * o.count(), 0.0);
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t i = 0; i < o.nx; ++i)
            for (std::size_t j = 0; j < o.ny; ++j)
                for (std::size_t l = 0; l < o.nz; ++l) {
                    double acc = b[co];
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (int a = 0; a < 3; ++a)
                            for (int bb = 0; bb < 3; ++bb)
                                for (int c = 0; c < 3; ++c) {
                                    const long xi = static_cast<long>(i) * stride + a - 1;
                                    const long yi = static_cast<long>(j) * stride + bb - 1;
                                    const long zi = static_cast<long>(l) * stride + c - 1;
                                    if (xi < 0 || yi < 0 || zi < 0 || xi >= static_cast<long>(d.nx) ||
                                        yi >= static_cast<long>(d.ny) || zi >= static_cast<long>(d.nz))
                                        continue;
                                    const double xv = x[ci * d.count() +
                                                        (static_cast<std::size_t>(xi) * d.ny + static_cast<std::size_t>(yi)) * d.nz +
                                                        static_cast<std::size_t>(zi)];
                                    acc += k[(((co * cin + ci) * 3 + static_cast<std::size_t>(a)) * 3 + static_cast<std::size_t>(bb)) * 3 +
                                             static_cast<std::size_t>(c)] *
                                           xv;
                                }
                    y[co * o.count() + (i * o.ny + j) * o.nz + l] = acc;
                }
    return y;
}

/// Window statistics at voxel (x, y, z) over an n^3 clamped window, counting
/// duplicates: sums of f, w, f^2, w^2 and f*w.
struct WindowSums {
    double f = 0, w = 0, ff = 0, ww = 0, fw = 0;
};

inline WindowSums window_oracle(const aanreg::Volume& f, const aanreg::Volume& w, std::size_t x, std::size_t y,
                                std::size_t z, int n) {
    const Dims& d = f.dims();
    auto clampi = [](long v, std::size_t hi) { return static_cast<std::size_t>(std::clamp(v, 0L, static_cast<long>(hi) - 1)); };
    WindowSums s;
    const long r = n / 2;
    for (long a = -r; a <= r; ++a)
        for (long b = -r; b <= r; ++b)
            for (long c = -r; c <= r; ++c) {
                const std::size_t i = clampi(static_cast<long>(x) + a, d.nx), j = clampi(static_cast<long>(y) + b, d.ny),
                                  k = clampi(static_cast<long>(z) + c, d.nz);
                const double fv = f(i, j, k), wv = w(i, j, k);
                s.f += fv;
                s.w += wv;
                s.ff += fv * fv;
                s.ww += wv * wv;
                s.fw += fv * wv;
            }
    return s;
}

/// Per-voxel squared local correlation from the mean-centred form
/// (sum (f - fbar)(w - wbar))^2 / (sum (f - fbar)^2 sum (w - wbar)^2 + eps).
inline double lcc_term_oracle(const aanreg::Volume& f, const aanreg::Volume& w, std::size_t x, std::size_t y,
                              std::size_t z, int n, double eps) {
    const Dims& d = f.dims();
    const WindowSums s = window_oracle(f, w, x, y, z, n);
    const double cnt = static_cast<double>(n) * n * n;
    const double fm = s.f / cnt, wm = s.w / cnt;
    auto clampi = [](long v, std::size_t hi) { return static_cast<std::size_t>(std::clamp(v, 0L, static_cast<long>(hi) - 1)); };
    double cross = 0, vf = 0, vw = 0;
    const long r = n / 2;
    for (long a = -r; a <= r; ++a)
        for (long b = -r; b <= r; ++b)
            for (long c = -r; c <= r; ++c) {
                const std::size_t i = clampi(static_cast<long>(x) + a, d.nx), j = clampi(static_cast<long>(y) + b, d.ny),
                                  k = clampi(static_cast<long>(z) + c, d.nz);
                const double df = f(i, j, k) - fm, dw = w(i, j, k) - wm;
                cross += df * dw;
                vf += df * df;
                vw += dw * dw;
            }
    return cross * cross / (vf * vw + eps);
}

/// Dice by direct voxel counting per label.
inline std::map<std::uint16_t, double> dice_oracle(const aanreg::LabelMap& a, const aanreg::LabelMap& b) {
    std::map<std::uint16_t, double> out;
    std::vector<std::uint16_t> labels;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i]) labels.push_back(a[i]);
        if (b[i]) labels.push_back(b[i]);
    }
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    for (auto l : labels) {
        double na = 0, nb = 0, both = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            na += a[i] == l;
            nb += b[i] == l;
            both += a[i] == l && b[i] == l;
        }
        out[l] = 2 * both / (na + nb);
    }
    return out;
}

/// det(I + grad u) at (x, y, z): forward differences, backward on the last
/// slice of an axis, zero on a length-1 axis; determinant by the rule of Sarrus.
inline double jacobian_oracle(const aanreg::DisplacementField& u, std::size_t x, std::size_t y, std::size_t z) {
    const Dims& d = u.dims();
    const std::size_t p[3] = {x, y, z};
    double J[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const aanreg::Volume& c = u.component(i);
            std::size_t q[3] = {x, y, z}, r[3] = {x, y, z};
            const std::size_t n = d[j];
            double g = 0;
            if (n > 1) {
                if (p[j] + 1 < n) {
                    q[j] = p[j] + 1;
                } else {
                    r[j] = p[j] - 1;
                }
                g = c(q[0], q[1], q[2]) - c(r[0], r[1], r[2]);
            }
            J[i][j] = (i == j ? 1.0 : 0.0) + g;
        }
    return J[0][0] * J[1][1] * J[2][2] + J[0][1] * J[1][2] * J[2][0] + J[0][2] * J[1][0] * J[2][1] -
           J[0][2] * J[1][1] * J[2][0] - J[0][0] * J[1][2] * J[2][1] - J[0][1] * J[1][0] * J[2][2];
}

}  // namespace testing_support
