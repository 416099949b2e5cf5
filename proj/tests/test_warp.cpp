#include <doctest.h>

#include "aanreg/warp.hpp"
#include "support.hpp"

#include <cmath>

using namespace aanreg;
using testing_support::random_field;
using testing_support::random_volume;

namespace {

double corner_oracle(const Volume& v, const Point3& p) {
    const Dims& d = v.dims();
    double c[3];
    for (int a = 0; a < 3; ++a) c[a] = std::clamp(p[static_cast<std::size_t>(a)], 0.0, static_cast<double>(d[a] - 1));
    double acc = 0;
    for (int i = 0; i < 8; ++i) {
        double w = 1;
        std::size_t q[3];
        for (int a = 0; a < 3; ++a) {
            const double f = std::floor(c[a]);
            const double t = c[a] - f;
            const bool up = (i >> a) & 1;
            q[a] = std::min(static_cast<std::size_t>(f) + up, d[a] - 1);
            w *= up ? t : 1 - t;
        }
        acc += w * v(q[0], q[1], q[2]);
    }
    return acc;
}

DisplacementField folding_field(const Dims& d, double t) {
    DisplacementField u(d);
    for (std::size_t x = 0; x < d.nx; ++x)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t z = 0; z < d.nz; ++z) u.component(0)(x, y, z) = -2.0 * t * static_cast<double>(x);
    return u;
}

}  // namespace

TEST_CASE("sampling at grid points and midpoints") {
    std::mt19937_64 rng(1);
    const Volume v = random_volume({4, 4, 4}, rng);
    CHECK(trilinear_sample(v, {1, 2, 3}) == v(1, 2, 3));
    CHECK(trilinear_sample(v, {1.5, 2, 3}) == doctest::Approx((v(1, 2, 3) + v(2, 2, 3)) / 2).epsilon(1e-15));
}

TEST_CASE("random points match the 8-corner oracle") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1.5, 4.5);
    const Volume v = random_volume({4, 4, 4}, rng);
    for (int t = 0; t < 200; ++t) {
        const Point3 p{u(rng), u(rng), u(rng)};
        CHECK(std::abs(trilinear_sample(v, p) - corner_oracle(v, p)) < 1e-14);
    }
}

TEST_CASE("zero field is the identity") {
    std::mt19937_64 rng(3);
    const Volume v = random_volume({5, 6, 7}, rng);
    const DisplacementField z(v.dims());
    CHECK(warp_image(v, z) == v);
    LabelMap m(v.dims());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint16_t>(i % 5);
    CHECK(warp_labels(m, z) == m);
}

TEST_CASE("unit shift moves a ramp by one voxel") {
    const Dims d{8, 3, 3};
    Volume v(d);
    for (std::size_t i = 0; i < d.count(); ++i) v[i] = static_cast<double>(d.coords(i)[0]);
    DisplacementField u(d);
    u.component(0) = Volume(d, 1.0);
    const Volume w = warp_image(v, u);
    for (std::size_t x = 0; x + 1 < d.nx; ++x) CHECK(w(x, 1, 1) == v(x + 1, 1, 1));
    CHECK(w(d.nx - 1, 1, 1) == v(d.nx - 1, 1, 1));  // border replicate
}

TEST_CASE("random field warp matches per-voxel sampling") {
    std::mt19937_64 rng(4);
    const Dims d{5, 6, 4};
    const Volume v = random_volume(d, rng);
    const DisplacementField u = random_field(d, rng, 1.5);
    const Volume w = warp_image(v, u);
    for (std::size_t i = 0; i < d.count(); ++i) {
        const auto c = d.coords(i);
        const auto s = u.at(i);
        const Point3 p{c[0] + s[0], c[1] + s[1], c[2] + s[2]};
        CHECK(std::abs(w[i] - corner_oracle(v, p)) < 1e-14);
    }
}

TEST_CASE("warp output stays within the input range") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 10; ++t) {
        const Dims d = testing_support::random_dims(rng, 2, 7);
        const Volume v = random_volume(d, rng, -3, 2);
        const Volume w = warp_image(v, random_field(d, rng, 3.0));
        const auto [lo, hi] = std::minmax_element(v.storage().begin(), v.storage().end());
        for (double x : w.storage()) {
            CHECK(x >= *lo - 1e-12);
            CHECK(x <= *hi + 1e-12);
        }
    }
}

TEST_CASE("label warp uses the nearest source voxel") {
    const Dims d{6, 1, 1};
    LabelMap m(d);
    for (std::size_t x = 0; x < 6; ++x) m[x] = static_cast<std::uint16_t>(x + 1);
    DisplacementField one(d);
    one.component(0) = Volume(d, 1.0);
    const LabelMap shifted = warp_labels(m, one);
    for (std::size_t x = 0; x < 5; ++x) CHECK(shifted[x] == m[x + 1]);
    DisplacementField frac(d);
    frac.component(0) = Volume(d, 0.4);
    CHECK(warp_labels(m, frac) == m);
    frac.component(0) = Volume(d, 0.6);
    CHECK(warp_labels(m, frac) == shifted);
}

TEST_CASE("dims mismatch is rejected") {
    CHECK_THROWS(warp_image(Volume(Dims{2, 2, 2}), DisplacementField(Dims{2, 2, 3})));
    CHECK_THROWS(warp_labels(LabelMap(Dims{2, 2, 2}), DisplacementField(Dims{3, 2, 2})));
}

TEST_CASE("jacobian of zero field and uniform scaling") {
    const Dims d{5, 4, 6};
    const JacobianField j0 = jacobian_determinants(DisplacementField(d));
    for (double x : j0.storage()) CHECK(x == 1.0);
    DisplacementField u(d);
    for (std::size_t i = 0; i < d.count(); ++i) {
        const auto c = d.coords(i);
        for (int a = 0; a < 3; ++a) u.component(a)[i] = 0.1 * static_cast<double>(c[static_cast<std::size_t>(a)]);
    }
    const JacobianField j = jacobian_determinants(u);
    // the backward difference on the far face sees the same slope
    for (double x : j.storage()) CHECK(std::abs(x - 1.331) < 1e-12);
}

TEST_CASE("jacobian matches the Sarrus oracle on random fields") {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 10; ++t) {
        const Dims d = testing_support::random_dims(rng, 2, 6);
        const DisplacementField u = random_field(d, rng, 1.0);
        const JacobianField j = jacobian_determinants(u);
        for (std::size_t i = 0; i < d.count(); ++i) {
            const auto c = d.coords(i);
            CHECK(std::abs(j[i] - testing_support::jacobian_oracle(u, c[0], c[1], c[2])) < 1e-12);
        }
    }
}

TEST_CASE("folding field is negative everywhere and counts follow the threshold") {
    const Dims d{5, 4, 4};
    CHECK(count_negative_jacobians(DisplacementField(d)) == 0);
    CHECK(count_negative_jacobians(folding_field(d, 1.0)) == d.count());
    // det = 1 - 2t, so folding starts strictly beyond t = 0.5
    std::size_t prev = 0;
    for (double t : {0.0, 0.25, 0.49, 0.51, 0.75, 1.0}) {
        const std::size_t n = count_negative_jacobians(folding_field(d, t));
        CHECK(n >= prev);
        CHECK(n == (t > 0.5 ? d.count() : 0));
        prev = n;
    }
}

TEST_CASE("fields with small gradients never fold") {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 10; ++t) {
        const Dims d = testing_support::random_dims(rng, 2, 8);
        // neighbouring differences < 2 * 0.16 < 1/3
        const DisplacementField u = random_field(d, rng, 0.16);
        CHECK(count_negative_jacobians(u) == 0);
    }
}

TEST_CASE("axis of length one is rejected") {
    CHECK_THROWS(jacobian_determinants(DisplacementField(Dims{1, 4, 4})));
}
