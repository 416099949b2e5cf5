#include "aanreg/ops.hpp"

#include "aanreg/warp.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <memory>
#include <stdexcept>

namespace aanreg::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedRowMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedRowMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

struct ConvGeometry {
    std::size_t cin, cout;
    Dims in, out;
    int stride;
    std::size_t k() const { return cin * 27; }
    std::size_t plane() const { return out.ny * out.nz; }
};

// Valid output range [lo, hi) along one axis for kernel tap k: the input
// index o*stride + k - 1 must land inside [0, n_in).
struct TapRange {
    std::size_t lo, hi;
};

TapRange tap_range(std::size_t n_out, std::size_t n_in, int stride, int k) {
    const long s = stride, off = k - 1;
    long lo = 0;
    while (lo < static_cast<long>(n_out) && lo * s + off < 0) ++lo;
    long hi = static_cast<long>(n_out);
    while (hi > lo && (hi - 1) * s + off >= static_cast<long>(n_in)) --hi;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Column matrix (cin*27 x ny'*nz', row-major) for one output x-plane.
void im2col_plane(const ConvGeometry& g, const double* x, std::size_t ox, RowMat& cols) {
    const int s = g.stride;
    const std::size_t plane = g.plane();
    const std::size_t in_n = g.in.count();
    const std::size_t onz = g.out.nz;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* xc = x + ci * in_n;
        for (int kx = 0; kx < 3; ++kx) {
            const long ix = static_cast<long>(ox) * s + kx - 1;
            const bool x_ok = ix >= 0 && ix < static_cast<long>(g.in.nx);
            for (int ky = 0; ky < 3; ++ky) {
                const TapRange ry = tap_range(g.out.ny, g.in.ny, s, ky);
                for (int kz = 0; kz < 3; ++kz) {
                    double* row = cols.data() + (ci * 27 + static_cast<std::size_t>(kx * 9 + ky * 3 + kz)) * plane;
                    if (!x_ok) {
                        std::fill(row, row + plane, 0.0);
                        continue;
                    }
                    const TapRange rz = tap_range(onz, g.in.nz, s, kz);
                    std::fill(row, row + ry.lo * onz, 0.0);
                    for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                        const std::size_t iy = oy * static_cast<std::size_t>(s) + static_cast<std::size_t>(ky) - 1;
                        double* r = row + oy * onz;
                        const double* src = xc + (static_cast<std::size_t>(ix) * g.in.ny + iy) * g.in.nz + kz - 1;
                        std::fill(r, r + rz.lo, 0.0);
                        if (s == 1) {
                            std::copy(src + rz.lo, src + rz.hi, r + rz.lo);
                        } else {
                            for (std::size_t oz = rz.lo; oz < rz.hi; ++oz) r[oz] = src[2 * oz];
                        }
                        std::fill(r + rz.hi, r + onz, 0.0);
                    }
                    std::fill(row + ry.hi * onz, row + plane, 0.0);
                }
            }
        }
    }
}

void col2im_plane(const ConvGeometry& g, const RowMat& cols, std::size_t ox, double* dx) {
    const int s = g.stride;
    const std::size_t plane = g.plane();
    const std::size_t in_n = g.in.count();
    const std::size_t onz = g.out.nz;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        double* dc = dx + ci * in_n;
        for (int kx = 0; kx < 3; ++kx) {
            const long ix = static_cast<long>(ox) * s + kx - 1;
            if (ix < 0 || ix >= static_cast<long>(g.in.nx)) continue;
            for (int ky = 0; ky < 3; ++ky) {
                const TapRange ry = tap_range(g.out.ny, g.in.ny, s, ky);
                for (int kz = 0; kz < 3; ++kz) {
                    const TapRange rz = tap_range(onz, g.in.nz, s, kz);
                    const double* row = cols.data() + (ci * 27 + static_cast<std::size_t>(kx * 9 + ky * 3 + kz)) * plane;
                    for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                        const std::size_t iy = oy * static_cast<std::size_t>(s) + static_cast<std::size_t>(ky) - 1;
                        const double* r = row + oy * onz;
                        double* dst = dc + (static_cast<std::size_t>(ix) * g.in.ny + iy) * g.in.nz + kz - 1;
                        if (s == 1) {
                            for (std::size_t oz = rz.lo; oz < rz.hi; ++oz) dst[oz] += r[oz];
                        } else {
                            for (std::size_t oz = rz.lo; oz < rz.hi; ++oz) dst[2 * oz] += r[oz];
                        }
                    }
                }
            }
        }
    }
}

// Stride-1 path. Volumes are copied into a zero-padded grid flattened per
// channel, so every kernel tap is a constant pointer offset and no column
// matrix is materialised.
constexpr std::size_t kLanes = 8;

struct PaddedGrid {
    Dims inner;
    Dims padded;
    std::size_t stride;  // per-channel length, with slack for the last lane block
    std::array<long, 27> tap{};
    long reach = 0;  // largest |tap|, also the flat index of the first interior voxel

    explicit PaddedGrid(const Dims& d) : inner(d), padded{d.nx + 2, d.ny + 2, d.nz + 2} {
        stride = padded.count() + kLanes;
        const long sx = static_cast<long>(padded.ny * padded.nz), sy = static_cast<long>(padded.nz);
        for (int kx = 0; kx < 3; ++kx)
            for (int ky = 0; ky < 3; ++ky)
                for (int kz = 0; kz < 3; ++kz) tap[static_cast<std::size_t>(kx * 9 + ky * 3 + kz)] = (kx - 1) * sx + (ky - 1) * sy + (kz - 1);
        reach = tap[26];
    }

    std::size_t row_start(std::size_t x, std::size_t y) const { return padded.offset(x + 1, y + 1, 1); }

    std::vector<double> pad(const double* src, std::size_t channels) const {
        std::vector<double> out(channels * stride, 0.0);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t x = 0; x < inner.nx; ++x)
                for (std::size_t y = 0; y < inner.ny; ++y) {
                    const double* s = src + c * inner.count() + inner.offset(x, y, 0);
                    std::copy(s, s + inner.nz, out.data() + c * stride + row_start(x, y));
                }
        return out;
    }
};

// out[co][p] = sum_ci sum_t w[(t*cin + ci)*cout + co] * in[ci][p + tap[t]] for
// every interior p; out is padded too and only its interior is meaningful.
// Eight doubles as one GCC vector; the unaligned variant is used for loads.
typedef double Lane __attribute__((vector_size(kLanes * sizeof(double))));
typedef double LaneU __attribute__((vector_size(kLanes * sizeof(double)), aligned(sizeof(double))));

template <std::size_t CB>
void direct_rows(const PaddedGrid& g, const double* in, std::size_t cin, const double* w, std::size_t cout,
                 std::size_t co0, double* out) {
    const std::size_t nz = g.inner.nz;
    for (std::size_t x = 0; x < g.inner.nx; ++x)
        for (std::size_t y = 0; y < g.inner.ny; ++y) {
            const std::size_t row = g.row_start(x, y);
            for (std::size_t z0 = 0; z0 < nz; z0 += kLanes) {
                const std::size_t p = row + z0;
                Lane acc[CB];
                for (std::size_t c = 0; c < CB; ++c) acc[c] = Lane{};
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double* src_c = in + ci * g.stride + p;
                    for (std::size_t t = 0; t < 27; ++t) {
                        const Lane v = *reinterpret_cast<const LaneU*>(src_c + g.tap[t]);
                        const double* wt = w + (t * cin + ci) * cout + co0;
                        for (std::size_t c = 0; c < CB; ++c) acc[c] += wt[c] * v;
                    }
                }
                for (std::size_t c = 0; c < CB; ++c) *reinterpret_cast<LaneU*>(out + (co0 + c) * g.stride + p) = acc[c];
            }
        }
}

void direct_conv(const PaddedGrid& g, const double* in, std::size_t cin, const double* w, std::size_t cout, double* out) {
    std::size_t co = 0;
    for (; co + 8 <= cout; co += 8) direct_rows<8>(g, in, cin, w, cout, co, out);
    for (; co + 4 <= cout; co += 4) direct_rows<4>(g, in, cin, w, cout, co, out);
    switch (cout - co) {
        case 3: direct_rows<3>(g, in, cin, w, cout, co, out); break;
        case 2: direct_rows<2>(g, in, cin, w, cout, co, out); break;
        case 1: direct_rows<1>(g, in, cin, w, cout, co, out); break;
        default: break;
    }
}

void require_feature(const Var& v, const char* op) {
    if (v->shape.size() != 4) throw std::invalid_argument(std::string(op) + ": expected {c,x,y,z} input, got " + to_string(v->shape));
}

}  // namespace

namespace {

Var conv3d_strided(const Var& x, const Var& kernel, const Var& bias, const ConvGeometry& g) {
    const std::size_t plane = g.plane();
    const std::size_t out_n = g.out.count();
    std::vector<double> y(g.cout * out_n);
    Eigen::Map<const RowMat> w(kernel->value.data(), static_cast<long>(g.cout), static_cast<long>(g.k()));
    RowMat cols(static_cast<long>(g.k()), static_cast<long>(plane));
    for (std::size_t ox = 0; ox < g.out.nx; ++ox) {
        im2col_plane(g, x->value.data(), ox, cols);
        StridedRowMap out(y.data() + ox * plane, static_cast<long>(g.cout), static_cast<long>(plane),
                          Eigen::OuterStride<>(static_cast<long>(out_n)));
        out.noalias() = w * cols;
        for (std::size_t o = 0; o < g.cout; ++o) out.row(static_cast<long>(o)).array() += bias->value[o];
    }

    return make_op("conv3d", feature_shape(g.cout, g.out), std::move(y), {x, kernel, bias}, [g](Node& self) {
        const Var& x = self.parents[0];
        const Var& kernel = self.parents[1];
        const Var& bias = self.parents[2];
        const std::size_t plane = g.plane();
        const std::size_t out_n = g.out.count();
        Eigen::Map<const RowMat> w(kernel->value.data(), static_cast<long>(g.cout), static_cast<long>(g.k()));
        RowMat cols(static_cast<long>(g.k()), static_cast<long>(plane));
        RowMat dcols(static_cast<long>(g.k()), static_cast<long>(plane));
        double* dx = x->requires_grad ? x->grad_buffer().data() : nullptr;
        double* dw_data = kernel->requires_grad ? kernel->grad_buffer().data() : nullptr;
        double* db = bias->requires_grad ? bias->grad_buffer().data() : nullptr;
        for (std::size_t ox = 0; ox < g.out.nx; ++ox) {
            ConstStridedRowMap dy(self.grad.data() + ox * plane, static_cast<long>(g.cout), static_cast<long>(plane),
                                  Eigen::OuterStride<>(static_cast<long>(out_n)));
            // plain loop: Eigen's sum() peels to an aligned start, which
            // makes the rounding depend on the buffer address
            if (db)
                for (std::size_t o = 0; o < g.cout; ++o) {
                    const double* r = self.grad.data() + o * out_n + ox * plane;
                    double acc = 0;
                    for (std::size_t i = 0; i < plane; ++i) acc += r[i];
                    db[o] += acc;
                }
            if (dw_data) {
                im2col_plane(g, x->value.data(), ox, cols);
                Eigen::Map<RowMat> dw(dw_data, static_cast<long>(g.cout), static_cast<long>(g.k()));
                dw.noalias() += dy * cols.transpose();
            }
            if (dx) {
                dcols.noalias() = w.transpose() * dy;
                col2im_plane(g, dcols, ox, dx);
            }
        }
    });
}

// Copies the interior of a padded multi-channel buffer back to dense layout.
void unpad(const PaddedGrid& g, const double* src, std::size_t channels, double* dst, bool accumulate) {
    const Dims& d = g.inner;
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t x = 0; x < d.nx; ++x)
            for (std::size_t y = 0; y < d.ny; ++y) {
                const double* s = src + c * g.stride + g.row_start(x, y);
                double* o = dst + c * d.count() + d.offset(x, y, 0);
                if (accumulate)
                    for (std::size_t z = 0; z < d.nz; ++z) o[z] += s[z];
                else
                    std::copy(s, s + d.nz, o);
            }
}

Var conv3d_same(const Var& x, const Var& kernel, const Var& bias, const ConvGeometry& g) {
    const PaddedGrid pg(g.in);
    const std::size_t cin = g.cin, cout = g.cout;
    const std::vector<double>& wv = kernel->value;
    std::vector<double> wp(wv.size());
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t t = 0; t < 27; ++t) wp[(t * cin + ci) * cout + co] = wv[(co * cin + ci) * 27 + t];

    auto xp = std::make_shared<std::vector<double>>(pg.pad(x->value.data(), cin));
    std::vector<double> yp(cout * pg.stride);
    direct_conv(pg, xp->data(), cin, wp.data(), cout, yp.data());
    std::vector<double> y(cout * g.in.count());
    unpad(pg, yp.data(), cout, y.data(), false);
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t i = 0; i < g.in.count(); ++i) y[co * g.in.count() + i] += bias->value[co];

    return make_op("conv3d", feature_shape(cout, g.in), std::move(y), {x, kernel, bias}, [g, xp](Node& self) {
        const Var& x = self.parents[0];
        const Var& kernel = self.parents[1];
        const Var& bias = self.parents[2];
        const PaddedGrid pg(g.in);
        const std::size_t cin = g.cin, cout = g.cout, n = g.in.count();
        if (bias->requires_grad) {
            auto& db = bias->grad_buffer();
            for (std::size_t co = 0; co < cout; ++co) {
                double acc = 0;
                for (std::size_t i = 0; i < n; ++i) acc += self.grad[co * n + i];
                db[co] += acc;
            }
        }
        if (!x->requires_grad && !kernel->requires_grad) return;
        const std::vector<double> dyp = pg.pad(self.grad.data(), cout);
        if (kernel->requires_grad) {
            // dW[co][ci][t] = sum_p dy[co][p] * x[ci][p + tap[t]] over the span holding the interior.
            const long span = static_cast<long>(pg.padded.count()) - 2 * pg.reach;
            const long ld = static_cast<long>(pg.stride);
            ConstStridedRowMap dy(dyp.data() + pg.reach, static_cast<long>(cout), span, Eigen::OuterStride<>(ld));
            auto& dw = kernel->grad_buffer();
            RowMat gt(static_cast<long>(cout), static_cast<long>(cin));
            for (std::size_t t = 0; t < 27; ++t) {
                ConstStridedRowMap xs(xp->data() + pg.reach + pg.tap[t], static_cast<long>(cin), span, Eigen::OuterStride<>(ld));
                gt.noalias() = dy * xs.transpose();
                for (std::size_t co = 0; co < cout; ++co)
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        dw[(co * cin + ci) * 27 + t] += gt(static_cast<long>(co), static_cast<long>(ci));
            }
        }
        if (x->requires_grad) {
            // Correlation with the mirrored kernel, input and output channels swapped.
            const std::vector<double>& wv = kernel->value;
            std::vector<double> wt(wv.size());
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t t = 0; t < 27; ++t) wt[(t * cout + co) * cin + ci] = wv[(co * cin + ci) * 27 + (26 - t)];
            std::vector<double> dxp(cin * pg.stride);
            direct_conv(pg, dyp.data(), cout, wt.data(), cin, dxp.data());
            unpad(pg, dxp.data(), cin, x->grad_buffer().data(), true);
        }
    });
}

}  // namespace

Var conv3d(const Var& x, const Var& kernel, const Var& bias, int stride) {
    require_feature(x, "conv3d");
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv3d: stride must be 1 or 2");
    const Shape& ks = kernel->shape;
    if (ks.size() != 5 || ks[2] != 3 || ks[3] != 3 || ks[4] != 3)
        throw std::invalid_argument("conv3d: kernel must be {out,in,3,3,3}, got " + to_string(ks));
    if (ks[1] != x->shape[0])
        throw std::invalid_argument("conv3d: kernel expects " + std::to_string(ks[1]) + " input channels, got " +
                                    std::to_string(x->shape[0]));
    if (bias->shape != Shape{ks[0]}) throw std::invalid_argument("conv3d: bias must be {out}");

    ConvGeometry g{ks[1], ks[0], spatial_dims(x->shape), {}, stride};
    if (stride == 1) {
        g.out = g.in;
        return conv3d_same(x, kernel, bias, g);
    }
    if (g.in.nx % 2 || g.in.ny % 2 || g.in.nz % 2)
        throw std::invalid_argument("conv3d: stride 2 needs even spatial dims, got " + to_string(g.in));
    g.out = {g.in.nx / 2, g.in.ny / 2, g.in.nz / 2};
    return conv3d_strided(x, kernel, bias, g);
}

Var leaky_relu(const Var& x, double slope) {
    std::vector<double> y(x->value.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x->value[i] >= 0 ? x->value[i] : slope * x->value[i];
    return make_op("leaky_relu", x->shape, std::move(y), {x}, [slope](Node& self) {
        const Var& x = self.parents[0];
        auto& dx = x->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * (x->value[i] > 0 ? 1.0 : slope);
    });
}

Var upsample_nearest(const Var& x) {
    require_feature(x, "upsample_nearest");
    const std::size_t c = x->shape[0];
    const Dims in = spatial_dims(x->shape);
    const Dims out{in.nx * 2, in.ny * 2, in.nz * 2};
    std::vector<double> y(c * out.count());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < out.nx; ++i)
            for (std::size_t j = 0; j < out.ny; ++j)
                for (std::size_t k = 0; k < out.nz; ++k)
                    y[ch * out.count() + out.offset(i, j, k)] = x->value[ch * in.count() + in.offset(i / 2, j / 2, k / 2)];
    return make_op("upsample_nearest", feature_shape(c, out), std::move(y), {x}, [c, in, out](Node& self) {
        auto& dx = self.parents[0]->grad_buffer();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < out.nx; ++i)
                for (std::size_t j = 0; j < out.ny; ++j)
                    for (std::size_t k = 0; k < out.nz; ++k)
                        dx[ch * in.count() + in.offset(i / 2, j / 2, k / 2)] += self.grad[ch * out.count() + out.offset(i, j, k)];
    });
}

Var avg_pool2(const Var& x) {
    require_feature(x, "avg_pool2");
    const std::size_t c = x->shape[0];
    const Dims in = spatial_dims(x->shape);
    if (in.nx % 2 || in.ny % 2 || in.nz % 2) throw std::invalid_argument("avg_pool2: needs even spatial dims");
    const Dims out{in.nx / 2, in.ny / 2, in.nz / 2};
    std::vector<double> y(c * out.count(), 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < in.nx; ++i)
            for (std::size_t j = 0; j < in.ny; ++j)
                for (std::size_t k = 0; k < in.nz; ++k)
                    y[ch * out.count() + out.offset(i / 2, j / 2, k / 2)] += 0.125 * x->value[ch * in.count() + in.offset(i, j, k)];
    return make_op("avg_pool2", feature_shape(c, out), std::move(y), {x}, [c, in, out](Node& self) {
        auto& dx = self.parents[0]->grad_buffer();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < in.nx; ++i)
                for (std::size_t j = 0; j < in.ny; ++j)
                    for (std::size_t k = 0; k < in.nz; ++k)
                        dx[ch * in.count() + in.offset(i, j, k)] += 0.125 * self.grad[ch * out.count() + out.offset(i / 2, j / 2, k / 2)];
    });
}

Var concat_channels(const Var& a, const Var& b) {
    require_feature(a, "concat_channels");
    require_feature(b, "concat_channels");
    require_same_dims(spatial_dims(a->shape), spatial_dims(b->shape), "concat_channels");
    std::vector<double> y;
    y.reserve(a->value.size() + b->value.size());
    y.insert(y.end(), a->value.begin(), a->value.end());
    y.insert(y.end(), b->value.begin(), b->value.end());
    const std::size_t na = a->value.size();
    return make_op("concat_channels", feature_shape(a->shape[0] + b->shape[0], spatial_dims(a->shape)), std::move(y),
                   {a, b}, [na](Node& self) {
                       const Var& a = self.parents[0];
                       const Var& b = self.parents[1];
                       if (a->requires_grad) {
                           auto& da = a->grad_buffer();
                           for (std::size_t i = 0; i < na; ++i) da[i] += self.grad[i];
                       }
                       if (b->requires_grad) {
                           auto& dbuf = b->grad_buffer();
                           for (std::size_t i = 0; i < dbuf.size(); ++i) dbuf[i] += self.grad[na + i];
                       }
                   });
}

Var add(const Var& a, const Var& b) {
    if (a->shape != b->shape)
        throw std::invalid_argument("add: shape mismatch " + to_string(a->shape) + " vs " + to_string(b->shape));
    std::vector<double> y(a->value.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a->value[i] + b->value[i];
    return make_op("add", a->shape, std::move(y), {a, b}, [](Node& self) {
        for (const Var& p : self.parents) {
            if (!p->requires_grad) continue;
            auto& d = p->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
        }
    });
}

Var scale(const Var& x, double s) {
    std::vector<double> y(x->value.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = s * x->value[i];
    return make_op("scale", x->shape, std::move(y), {x}, [s](Node& self) {
        auto& d = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * self.grad[i];
    });
}

Var sum(const Var& x) {
    double acc = 0;
    for (double v : x->value) acc += v;
    return make_op("sum", {1}, {acc}, {x}, [](Node& self) {
        auto& d = self.parents[0]->grad_buffer();
        for (double& g : d) g += self.grad[0];
    });
}

Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
    std::vector<Var> parents;
    std::vector<double> weights;
    double acc = 0;
    for (const auto& [w, t] : terms) {
        if (t->value.size() != 1) throw std::invalid_argument("weighted_sum: terms must be scalars");
        acc += w * t->value[0];
        parents.push_back(t);
        weights.push_back(w);
    }
    return make_op("weighted_sum", {1}, {acc}, std::move(parents), [weights](Node& self) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            const Var& p = self.parents[i];
            if (p->requires_grad) p->grad_buffer()[0] += weights[i] * self.grad[0];
        }
    });
}

Var warp_layer(const Var& image, const Var& ddf) {
    require_feature(image, "warp_layer");
    require_feature(ddf, "warp_layer");
    if (image->shape[0] != 1) throw std::invalid_argument("warp_layer: image must have 1 channel");
    if (ddf->shape[0] != 3) throw std::invalid_argument("warp_layer: displacement must have 3 channels");
    const Dims d = spatial_dims(image->shape);
    require_same_dims(d, spatial_dims(ddf->shape), "warp_layer");
    const std::size_t n = d.count();

    auto sample = [d, n](const double* img, const double* u, std::size_t i, auto&& visit) {
        const auto [x, y, z] = d.coords(i);
        const AxisSample s[3] = {axis_sample(static_cast<double>(x) + u[i], d.nx),
                                 axis_sample(static_cast<double>(y) + u[n + i], d.ny),
                                 axis_sample(static_cast<double>(z) + u[2 * n + i], d.nz)};
        const std::size_t ix[2] = {s[0].lo, s[0].hi}, iy[2] = {s[1].lo, s[1].hi}, iz[2] = {s[2].lo, s[2].hi};
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                for (int c = 0; c < 2; ++c) {
                    const double wx = a ? s[0].frac : 1 - s[0].frac;
                    const double wy = b ? s[1].frac : 1 - s[1].frac;
                    const double wz = c ? s[2].frac : 1 - s[2].frac;
                    // d(weight)/d(coordinate) per axis; zero where the clamp saturates.
                    const double gx = s[0].slope_ok ? (a ? 1.0 : -1.0) * wy * wz : 0.0;
                    const double gy = s[1].slope_ok ? (b ? 1.0 : -1.0) * wx * wz : 0.0;
                    const double gz = s[2].slope_ok ? (c ? 1.0 : -1.0) * wx * wy : 0.0;
                    visit(d.offset(ix[a], iy[b], iz[c]), wx * wy * wz, gx, gy, gz, img);
                }
    };

    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0;
        sample(image->value.data(), ddf->value.data(), i,
               [&acc](std::size_t j, double w, double, double, double, const double* img) { acc += w * img[j]; });
        out[i] = acc;
    }

    return make_op("warp_layer", feature_shape(1, d), std::move(out), {image, ddf}, [sample, n](Node& self) {
        const Var& image = self.parents[0];
        const Var& ddf = self.parents[1];
        double* dimg = image->requires_grad ? image->grad_buffer().data() : nullptr;
        double* du = ddf->requires_grad ? ddf->grad_buffer().data() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = self.grad[i];
            if (g == 0) continue;
            double gu[3] = {0, 0, 0};
            sample(image->value.data(), ddf->value.data(), i,
                   [&](std::size_t j, double w, double gx, double gy, double gz, const double* img) {
                       if (dimg) dimg[j] += g * w;
                       gu[0] += gx * img[j];
                       gu[1] += gy * img[j];
                       gu[2] += gz * img[j];
                   });
            if (du) {
                du[i] += g * gu[0];
                du[n + i] += g * gu[1];
                du[2 * n + i] += g * gu[2];
            }
        }
    });
}

}  // namespace aanreg::nn
