#include <doctest.h>

#include "aanreg/eval.hpp"
#include "aanreg/synth.hpp"
#include "aanreg/warp.hpp"

#include <deque>

using namespace aanreg;
using namespace aanreg::synth;

namespace {

bool connected26(const LabelMap& m, std::uint16_t label) {
    const Dims& d = m.dims();
    std::vector<std::uint8_t> seen(d.count(), 0);
    std::size_t total = 0, start = d.count();
    for (std::size_t i = 0; i < d.count(); ++i)
        if (m[i] == label) {
            ++total;
            if (start == d.count()) start = i;
        }
    if (total == 0) return false;
    std::deque<std::size_t> q{start};
    seen[start] = 1;
    std::size_t reached = 1;
    while (!q.empty()) {
        const auto c = d.coords(q.front());
        q.pop_front();
        for (int a = -1; a <= 1; ++a)
            for (int b = -1; b <= 1; ++b)
                for (int k = -1; k <= 1; ++k) {
                    const long x = static_cast<long>(c[0]) + a, y = static_cast<long>(c[1]) + b,
                               z = static_cast<long>(c[2]) + k;
                    if (x < 0 || y < 0 || z < 0 || x >= static_cast<long>(d.nx) || y >= static_cast<long>(d.ny) ||
                        z >= static_cast<long>(d.nz))
                        continue;
                    const std::size_t j = d.offset(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                                                   static_cast<std::size_t>(z));
                    if (!seen[j] && m[j] == label) {
                        seen[j] = 1;
                        ++reached;
                        q.push_back(j);
                    }
                }
    }
    return reached == total;
}

}  // namespace

TEST_CASE("phantom is deterministic per seed") {
    PhantomSpec s;
    s.seed = 3;
    const Phantom a = generate_phantom(s), b = generate_phantom(s);
    CHECK(a.image == b.image);
    CHECK(a.labels == b.labels);
    s.seed = 4;
    CHECK(!(generate_phantom(s).labels == a.labels));
}

TEST_CASE("phantom labels are connected with analytic volumes and base intensities") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        PhantomSpec s;
        s.seed = seed;
        const Phantom p = generate_phantom(s);
        const auto expect = analytic_label_volumes(s);
        for (int l = 1; l <= kStructureCount; ++l) {
            const auto label = static_cast<std::uint16_t>(l);
            CHECK(connected26(p.labels, label));
            double n = 0;
            for (std::size_t i = 0; i < p.labels.size(); ++i)
                if (p.labels[i] == label) {
                    ++n;
                    CHECK(p.image[i] == s.intensities[static_cast<std::size_t>(l - 1)]);
                }
            CHECK(std::abs(n - expect[static_cast<std::size_t>(l - 1)]) <= 0.1 * expect[static_cast<std::size_t>(l - 1)]);
        }
        // two-voxel margin
        const Dims& d = p.labels.dims();
        for (std::size_t i = 0; i < d.count(); ++i) {
            if (!p.labels[i]) continue;
            const auto c = d.coords(i);
            for (int a = 0; a < 3; ++a) {
                CHECK(c[static_cast<std::size_t>(a)] >= 2);
                CHECK(c[static_cast<std::size_t>(a)] + 2 < d[a]);
            }
        }
    }
}

TEST_CASE("base intensities are pairwise distinct") {
    const PhantomSpec s;
    for (std::size_t i = 0; i < s.intensities.size(); ++i)
        for (std::size_t j = i + 1; j < s.intensities.size(); ++j)
            CHECK(std::abs(s.intensities[i] - s.intensities[j]) >= 0.1 - 1e-12);
}

TEST_CASE("random smooth fields: bounds, zero amplitude and no folding") {
    const Dims d{20, 24, 16};
    CHECK(random_smooth_ddf(d, 0.0, 8, 1) == DisplacementField(d));
    const auto u = random_smooth_ddf(d, 1.0, 8, 5);
    CHECK(u == random_smooth_ddf(d, 1.0, 8, 5));
    for (int c = 0; c < 3; ++c)
        for (double x : u.component(c).storage()) CHECK(std::abs(x) <= 1.0);
    CHECK(count_negative_jacobians(u) == 0);
    CHECK(count_negative_jacobians(random_smooth_ddf(kDeskDims, 3.5, 12, 9)) == 0);
}

TEST_CASE("appearance perturbation") {
    PhantomSpec ps;
    const Phantom p = generate_phantom(ps);
    AppearanceSpec none{0, 0, 0, 1};
    CHECK(appearance_perturb(p.image, p.labels, none) == p.image);

    AppearanceSpec bias_only{0.2, 0, 0, 7};
    const Volume b = bias_field(p.image.dims(), 0.2, 7);
    const Volume v = appearance_perturb(p.image, p.labels, bias_only);
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(std::abs(b[i]) <= 0.2);
        if (p.image[i] > 0 && p.image[i] * (1 + b[i]) < 1) CHECK(v[i] / p.image[i] == doctest::Approx(1 + b[i]).epsilon(1e-12));
    }
    for (int seed = 1; seed < 4; ++seed) {
        const Volume s = appearance_perturb(p.image, p.labels, {0.5, 0.2, 0.3, static_cast<std::uint64_t>(seed)});
        for (double x : s.storage()) {
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
        }
    }
}

TEST_CASE("presets parse and strong is strongest") {
    CHECK(parse_preset("strong") == AppearancePreset::Strong);
    CHECK(to_string(AppearancePreset::Mild) == "mild");
    CHECK_THROWS(parse_preset("extreme"));
    const auto m = appearance_preset(AppearancePreset::Mild, 1), s = appearance_preset(AppearancePreset::Strong, 1);
    CHECK(s.bias_amplitude >= m.bias_amplitude);
    CHECK(appearance_preset(AppearancePreset::None, 1).noise_sigma == 0.0);
}

TEST_CASE("pairs: identity case, label warp and calibrated Dice") {
    PhantomSpec ps;
    const PairSample same = make_pair(2, ps, 0.0, 12, AppearanceSpec{0, 0, 0, 1});
    CHECK(same.moving == same.fixed);
    CHECK(same.moving_labels == same.fixed_labels);

    const PairSample p = make_pair(3, ps, 3.5, 12, appearance_preset(AppearancePreset::Strong, 3));
    CHECK(p.moving_labels == warp_labels(p.fixed_labels, p.true_ddf));
    const double before = dice(p.moving_labels, p.fixed_labels).mean;
    CHECK(before > 0.4);
    CHECK(before < 0.95);
    CHECK(count_negative_jacobians(p.true_ddf) == 0);
}

TEST_CASE("pair generation is reproducible") {
    PairSpec spec;
    spec.phantom.dims = {16, 16, 16};
    spec.control_spacing = 8;
    spec.deform_amplitude = 2;
    const auto a = generate_pairs(3, 11, spec), b = generate_pairs(3, 11, spec);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a[i].moving == b[i].moving);
        CHECK(a[i].fixed_labels == b[i].fixed_labels);
        CHECK(a[i].true_ddf == b[i].true_ddf);
    }
    CHECK(!(a[0].moving == a[1].moving));
    CHECK(derive_seed(1, 2) != derive_seed(2, 1));
}
