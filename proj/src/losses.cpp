#include "aanreg/losses.hpp"

#include "aanreg/ops.hpp"
#include "aanreg/unet.hpp"
#include "aanreg/warp.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace aanreg {

std::string to_string(SimKind k) { return k == SimKind::MSE ? "mse" : "lcc"; }

SimKind parse_sim_kind(const std::string& s) {
    if (s == "mse" || s == "MSE") return SimKind::MSE;
    if (s == "lcc" || s == "LCC") return SimKind::LCC;
    throw std::invalid_argument("unknown similarity '" + s + "' (expected mse or lcc)");
}

void LossConfig::validate() const {
    if (lcc_window < 1 || lcc_window % 2 == 0) throw std::invalid_argument("lcc_window must be a positive odd integer");
    for (double w : {lambda_structure, mu_smooth, mu_antifold, epsilon})
        if (!std::isfinite(w) || w < 0) throw std::invalid_argument("loss weights must be finite and non-negative");
}

LossConfig default_loss_config(SimKind kind) {
    LossConfig c;
    c.sim_kind = kind;
    c.mu_smooth = kind == SimKind::MSE ? 1.0 : 1.5;
    return c;
}

namespace losses {

using nn::Node;
using nn::Var;

namespace {

void require_scalar_image(const Var& v, const char* what) {
    if (v->shape.size() != 4 || v->shape[0] != 1)
        throw std::invalid_argument(std::string(what) + ": expected a 1-channel image, got " + nn::to_string(v->shape));
}

void require_field(const Var& v, const char* what) {
    if (v->shape.size() != 4 || v->shape[0] != 3)
        throw std::invalid_argument(std::string(what) + ": expected a 3-channel field, got " + nn::to_string(v->shape));
}

// 1D clamped window sum along `axis` (and its adjoint when `adjoint`).
void box_pass(const double* in, double* out, const Dims& d, int axis, int r, bool adjoint) {
    const std::size_t n = d[axis];
    const std::size_t stride = axis == 0 ? d.ny * d.nz : axis == 1 ? d.nz : 1;
    const std::size_t total = d.count();
    std::fill(out, out + total, 0.0);
    for (std::size_t base = 0; base < total; ++base) {
        // Visit each line once, from its first element.
        const std::size_t pos = (base / stride) % n;
        if (pos != 0) continue;
        for (std::size_t i = 0; i < n; ++i) {
            for (int k = -r; k <= r; ++k) {
                const auto j = static_cast<std::size_t>(std::clamp(static_cast<long>(i) + k, 0L, static_cast<long>(n) - 1));
                if (adjoint)
                    out[base + j * stride] += in[base + i * stride];
                else
                    out[base + i * stride] += in[base + j * stride];
            }
        }
    }
}

std::vector<double> box_apply(std::span<const double> v, const Dims& d, int n, bool adjoint) {
    const int r = n / 2;
    std::vector<double> a(v.begin(), v.end()), b(v.size());
    for (int axis = 0; axis < 3; ++axis) {
        box_pass(a.data(), b.data(), d, axis, r, adjoint);
        a.swap(b);
    }
    return a;
}

}  // namespace

int effective_lcc_window(int n, const Dims& d) {
    if (n < 1 || n % 2 == 0) throw std::invalid_argument("LCC window must be a positive odd integer");
    const auto smallest = static_cast<int>(std::min({d.nx, d.ny, d.nz}));
    if (n <= smallest) return n;
    const int fit = smallest % 2 == 1 ? smallest : smallest - 1;
    std::cerr << "warning: LCC window " << n << " exceeds smallest axis " << smallest << ", using " << fit << "\n";
    return fit;
}

double local_mean(const Volume& v, std::size_t x, std::size_t y, std::size_t z, int n) {
    const Dims& d = v.dims();
    const long r = n / 2;
    double acc = 0;
    for (long i = -r; i <= r; ++i)
        for (long j = -r; j <= r; ++j)
            for (long k = -r; k <= r; ++k)
                acc += v(static_cast<std::size_t>(std::clamp(static_cast<long>(x) + i, 0L, static_cast<long>(d.nx) - 1)),
                         static_cast<std::size_t>(std::clamp(static_cast<long>(y) + j, 0L, static_cast<long>(d.ny) - 1)),
                         static_cast<std::size_t>(std::clamp(static_cast<long>(z) + k, 0L, static_cast<long>(d.nz) - 1)));
    return acc / static_cast<double>(n * n * n);
}

std::vector<double> box_sum(std::span<const double> v, const Dims& d, int n) { return box_apply(v, d, n, false); }

namespace {

struct LccStats {
    std::vector<double> sf, sw, sff, sww, sfw;
};

LccStats lcc_stats(std::span<const double> f, std::span<const double> w, const Dims& d, int n) {
    std::vector<double> ff(f.size()), ww(f.size()), fw(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        ff[i] = f[i] * f[i];
        ww[i] = w[i] * w[i];
        fw[i] = f[i] * w[i];
    }
    return {box_sum(f, d, n), box_sum(w, d, n), box_sum(ff, d, n), box_sum(ww, d, n), box_sum(fw, d, n)};
}

}  // namespace

Volume lcc_terms(const Volume& fixed, const Volume& warped, int n, double eps) {
    require_same_dims(fixed.dims(), warped.dims(), "lcc_terms");
    const Dims& d = fixed.dims();
    n = effective_lcc_window(n, d);
    const double count = static_cast<double>(n) * n * n;
    const LccStats s = lcc_stats(fixed.data(), warped.data(), d, n);
    Volume t(d);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double cross = s.sfw[i] - s.sf[i] * s.sw[i] / count;
        const double vf = s.sff[i] - s.sf[i] * s.sf[i] / count;
        const double vw = s.sww[i] - s.sw[i] * s.sw[i] / count;
        t[i] = cross * cross / (vf * vw + eps);
    }
    return t;
}

Var mse(const Var& fixed, const Var& warped) {
    require_scalar_image(fixed, "mse");
    require_scalar_image(warped, "mse");
    require_same_dims(nn::spatial_dims(fixed->shape), nn::spatial_dims(warped->shape), "mse");
    const std::size_t n = fixed->value.size();
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = fixed->value[i] - warped->value[i];
        acc += r * r;
    }
    return nn::make_op("mse", {1}, {acc / static_cast<double>(n)}, {fixed, warped}, [n](Node& self) {
        const double g = 2.0 * self.grad[0] / static_cast<double>(n);
        const Var& f = self.parents[0];
        const Var& w = self.parents[1];
        for (int side = 0; side < 2; ++side) {
            const Var& p = self.parents[static_cast<std::size_t>(side)];
            if (!p->requires_grad) continue;
            auto& d = p->grad_buffer();
            const double sign = side == 0 ? 1.0 : -1.0;
            for (std::size_t i = 0; i < n; ++i) d[i] += sign * g * (f->value[i] - w->value[i]);
        }
    });
}

Var lcc(const Var& fixed, const Var& warped, int n, double eps) {
    require_scalar_image(fixed, "lcc");
    require_scalar_image(warped, "lcc");
    const Dims d = nn::spatial_dims(fixed->shape);
    require_same_dims(d, nn::spatial_dims(warped->shape), "lcc");
    n = effective_lcc_window(n, d);
    const double count = static_cast<double>(n) * n * n;
    LccStats s = lcc_stats(fixed->value, warped->value, d, n);
    double acc = 0;
    for (std::size_t i = 0; i < fixed->value.size(); ++i) {
        const double cross = s.sfw[i] - s.sf[i] * s.sw[i] / count;
        const double vf = s.sff[i] - s.sf[i] * s.sf[i] / count;
        const double vw = s.sww[i] - s.sw[i] * s.sw[i] / count;
        acc += cross * cross / (vf * vw + eps);
    }
    return nn::make_op("lcc", {1}, {-acc}, {fixed, warped}, [s = std::move(s), d, n, count, eps](Node& self) {
        const Var& f = self.parents[0];
        const std::size_t len = f->value.size();
        // Per-window partial derivatives of each term, then the adjoint box
        // filter spreads them back to the voxels that contributed.
        std::vector<double> a_f(len), b_f(len), a_w(len), b_w(len), c(len);
        for (std::size_t i = 0; i < len; ++i) {
            const double cross = s.sfw[i] - s.sf[i] * s.sw[i] / count;
            const double vf = s.sff[i] - s.sf[i] * s.sf[i] / count;
            const double vw = s.sww[i] - s.sw[i] * s.sw[i] / count;
            const double den = vf * vw + eps;
            const double c2 = cross * cross;
            c[i] = 2 * cross / den;
            b_w[i] = -c2 * vf / (den * den);
            b_f[i] = -c2 * vw / (den * den);
            a_w[i] = -2 * cross * s.sf[i] / (count * den) + 2 * c2 * vf * s.sw[i] / (count * den * den);
            a_f[i] = -2 * cross * s.sw[i] / (count * den) + 2 * c2 * vw * s.sf[i] / (count * den * den);
        }
        const double g = -self.grad[0];
        const std::vector<double> cc = box_apply(c, d, n, true);
        for (int side = 0; side < 2; ++side) {
            const Var& p = self.parents[static_cast<std::size_t>(side)];
            if (!p->requires_grad) continue;
            const Var& other = self.parents[static_cast<std::size_t>(1 - side)];
            const std::vector<double> aa = box_apply(side == 0 ? a_f : a_w, d, n, true);
            const std::vector<double> bb = box_apply(side == 0 ? b_f : b_w, d, n, true);
            auto& dp = p->grad_buffer();
            for (std::size_t i = 0; i < len; ++i)
                dp[i] += g * (aa[i] + 2 * p->value[i] * bb[i] + other->value[i] * cc[i]);
        }
    });
}

Var structure(const Var& phi, const EdgeMap& edges) {
    require_scalar_image(phi, "structure");
    const Dims d = nn::spatial_dims(phi->shape);
    require_same_dims(d, edges.dims(), "structure");
    const std::size_t n = d.count();
    const std::size_t strides[3] = {d.ny * d.nz, d.nz, 1};
    const double root_eps = std::sqrt(kStructureNormEps);
    // coef[i] = (1 - E) / (|g| smoothed) / N, reused by the backward pass.
    std::vector<double> coef(n, 0.0);
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (edges[i] != 0) continue;
        const auto p = d.coords(i);
        double g2 = 0;
        for (int a = 0; a < 3; ++a)
            if (p[static_cast<std::size_t>(a)] + 1 < d[a]) {
                const double g = phi->value[i + strides[a]] - phi->value[i];
                g2 += g * g;
            }
        const double norm = std::sqrt(g2 + kStructureNormEps);
        acc += norm - root_eps;
        coef[i] = 1.0 / (norm * static_cast<double>(n));
    }
    return nn::make_op("structure", {1}, {acc / static_cast<double>(n)}, {phi},
                       [coef = std::move(coef), d](Node& self) {
                           const Var& phi = self.parents[0];
                           auto& dp = phi->grad_buffer();
                           const std::size_t strides[3] = {d.ny * d.nz, d.nz, 1};
                           for (std::size_t i = 0; i < coef.size(); ++i) {
                               if (coef[i] == 0) continue;
                               const auto p = d.coords(i);
                               const double k = self.grad[0] * coef[i];
                               for (int a = 0; a < 3; ++a)
                                   if (p[static_cast<std::size_t>(a)] + 1 < d[a]) {
                                       const double g = phi->value[i + strides[a]] - phi->value[i];
                                       dp[i + strides[a]] += k * g;
                                       dp[i] -= k * g;
                                   }
                           }
                       });
}

Var diffusion(const Var& ddf) {
    require_field(ddf, "diffusion");
    const Dims d = nn::spatial_dims(ddf->shape);
    const std::size_t n = d.count();
    const std::size_t strides[3] = {d.ny * d.nz, d.nz, 1};
    double acc = 0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) {
            const auto p = d.coords(i);
            for (int a = 0; a < 3; ++a)
                if (p[static_cast<std::size_t>(a)] + 1 < d[a]) {
                    const double g = ddf->value[c * n + i + strides[a]] - ddf->value[c * n + i];
                    acc += g * g;
                }
        }
    return nn::make_op("diffusion", {1}, {acc / static_cast<double>(n)}, {ddf}, [d, n](Node& self) {
        const Var& u = self.parents[0];
        auto& du = u->grad_buffer();
        const std::size_t strides[3] = {d.ny * d.nz, d.nz, 1};
        const double k = 2.0 * self.grad[0] / static_cast<double>(n);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < n; ++i) {
                const auto p = d.coords(i);
                for (int a = 0; a < 3; ++a)
                    if (p[static_cast<std::size_t>(a)] + 1 < d[a]) {
                        const std::size_t j = c * n + i;
                        const double g = u->value[j + strides[a]] - u->value[j];
                        du[j + strides[a]] += k * g;
                        du[j] -= k * g;
                    }
            }
    });
}

namespace {

// Offsets of the two samples whose difference forms du/dx_a at voxel p.
std::pair<std::size_t, std::size_t> jacobian_stencil(const Dims& d, const std::array<std::size_t, 3>& p, int a) {
    const std::size_t strides[3] = {d.ny * d.nz, d.nz, 1};
    const std::size_t i = d.offset(p[0], p[1], p[2]);
    if (p[static_cast<std::size_t>(a)] + 1 < d[a]) return {i + strides[a], i};
    return {i, i - strides[a]};
}

}  // namespace

Var antifold(const Var& ddf) {
    require_field(ddf, "antifold");
    const Dims d = nn::spatial_dims(ddf->shape);
    if (d.nx < 2 || d.ny < 2 || d.nz < 2) throw std::invalid_argument("antifold needs at least 2 voxels per axis");
    const std::size_t n = d.count();
    const double* u = ddf->value.data();
    std::vector<double> neg(n, 0.0);
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto p = d.coords(i);
        std::array<std::array<double, 3>, 3> m{};
        for (int a = 0; a < 3; ++a) {
            const auto [hi, lo] = jacobian_stencil(d, p, a);
            for (std::size_t c = 0; c < 3; ++c) m[c][static_cast<std::size_t>(a)] = u[c * n + hi] - u[c * n + lo];
        }
        for (std::size_t c = 0; c < 3; ++c) m[c][c] += 1.0;
        const double det = det3(m);
        if (det < 0) {
            neg[i] = -det;
            acc += det * det;
        }
    }
    return nn::make_op("antifold", {1}, {acc}, {ddf}, [neg = std::move(neg), d, n](Node& self) {
        const Var& field = self.parents[0];
        const double* u = field->value.data();
        auto& du = field->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            if (neg[i] == 0) continue;
            const auto p = d.coords(i);
            std::array<std::array<double, 3>, 3> m{};
            std::pair<std::size_t, std::size_t> st[3];
            for (int a = 0; a < 3; ++a) {
                st[a] = jacobian_stencil(d, p, a);
                for (std::size_t c = 0; c < 3; ++c)
                    m[c][static_cast<std::size_t>(a)] = u[c * n + st[a].first] - u[c * n + st[a].second];
            }
            for (std::size_t c = 0; c < 3; ++c) m[c][c] += 1.0;
            // d(det)/d(m_ij) is the (i,j) cofactor; d(neg^2)/d(det) = -2 neg.
            const double k = -2.0 * neg[i] * self.grad[0];
            for (std::size_t r = 0; r < 3; ++r) {
                for (std::size_t c = 0; c < 3; ++c) {
                    const std::size_t r1 = (r + 1) % 3, r2 = (r + 2) % 3, c1 = (c + 1) % 3, c2 = (c + 2) % 3;
                    const double cof = m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
                    du[r * n + st[c].first] += k * cof;
                    du[r * n + st[c].second] -= k * cof;
                }
            }
        }
    });
}

Var similarity(const Var& fixed, const Var& warped, const LossConfig& cfg) {
    return cfg.sim_kind == SimKind::MSE ? mse(fixed, warped) : lcc(fixed, warped, cfg.lcc_window, cfg.epsilon);
}

Breakdown total(const Var& fixed, const Var& moving, const Var& phi, const Var& ddf, const EdgeMap& edges,
                const LossConfig& cfg) {
    cfg.validate();
    const Dims d = nn::spatial_dims(fixed->shape);
    require_same_dims(d, nn::spatial_dims(moving->shape), "total_loss moving");
    require_same_dims(d, nn::spatial_dims(phi->shape), "total_loss phi");
    require_same_dims(d, nn::spatial_dims(ddf->shape), "total_loss ddf");
    require_same_dims(d, edges.dims(), "total_loss edges");

    Breakdown b;
    b.warped = nn::warp_layer(nn::add(moving, phi), ddf);
    const Var sim = similarity(fixed, b.warped, cfg);
    const Var smooth = diffusion(ddf);
    const Var fold = antifold(ddf);
    const Var st = structure(phi, edges);
    b.total = nn::weighted_sum({{1.0, sim}, {cfg.mu_smooth, smooth}, {cfg.mu_antifold, fold}, {cfg.lambda_structure, st}});
    b.sim = sim->value[0];
    b.smooth = smooth->value[0];
    b.antifold = fold->value[0];
    b.structure = st->value[0];
    b.total_value = b.total->value[0];
    return b;
}

double mse_loss(const Volume& fixed, const Volume& warped) {
    return mse(nn::from_volume(fixed), nn::from_volume(warped))->value[0];
}

double lcc_loss(const Volume& fixed, const Volume& warped, int n, double eps) {
    return lcc(nn::from_volume(fixed), nn::from_volume(warped), n, eps)->value[0];
}

double structure_loss(const Volume& phi, const EdgeMap& edges) { return structure(nn::from_volume(phi), edges)->value[0]; }

double diffusion_regularizer(const DisplacementField& ddf) { return diffusion(nn::from_ddf(ddf))->value[0]; }

double antifold_regularizer(const DisplacementField& ddf) { return antifold(nn::from_ddf(ddf))->value[0]; }

}  // namespace losses
}  // namespace aanreg
