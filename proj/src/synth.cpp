#include "aanreg/synth.hpp"

#include "aanreg/warp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace aanreg::synth {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = base * 0x9E3779B97F4A7C15ull + index + 0x632BE59BD9B4E019ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

bool Ellipsoid::contains(double x, double y, double z) const {
    const double dx = (x - center[0]) / semi_axes[0];
    const double dy = (y - center[1]) / semi_axes[1];
    const double dz = (z - center[2]) / semi_axes[2];
    return dx * dx + dy * dy + dz * dz <= 1.0;
}

double Ellipsoid::volume() const { return 4.0 / 3.0 * std::numbers::pi * semi_axes[0] * semi_axes[1] * semi_axes[2]; }

std::vector<Ellipsoid> phantom_geometry(const PhantomSpec& spec) {
    const Dims& d = spec.dims;
    if (d.nx < 16 || d.ny < 16 || d.nz < 16) throw std::invalid_argument("phantom dims must be at least 16 per axis");
    std::mt19937_64 rng(derive_seed(spec.seed, 0xA11A5));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const std::array<double, 3> n{static_cast<double>(d.nx), static_cast<double>(d.ny), static_cast<double>(d.nz)};
    const std::array<double, 3> mid{(n[0] - 1) / 2, (n[1] - 1) / 2, (n[2] - 1) / 2};

    // Template: centre offsets and semi-axes as fractions of the dims.
    struct Proto {
        std::array<double, 3> offset, axes;
    };
    const Proto protos[kStructureCount] = {
        {{0, 0, 0}, {0.40, 0.40, 0.40}},          // cortex shell
        {{0, 0, 0}, {0.31, 0.32, 0.32}},          // white matter
        {{-0.09, 0.06, 0}, {0.07, 0.14, 0.09}},   // ventricle L
        {{0.09, 0.06, 0}, {0.07, 0.14, 0.09}},    // ventricle R
        {{-0.13, -0.15, 0}, {0.07, 0.07, 0.09}},  // nucleus L
        {{0.13, -0.15, 0}, {0.07, 0.07, 0.09}},   // nucleus R
    };
    std::vector<Ellipsoid> out;
    for (int k = 0; k < kStructureCount; ++k) {
        Ellipsoid e{};
        e.label = static_cast<std::uint16_t>(k + 1);
        for (std::size_t a = 0; a < 3; ++a) {
            e.center[a] = mid[a] + n[a] * (protos[k].offset[a] + 0.015 * unit(rng));
            e.semi_axes[a] = n[a] * protos[k].axes[a] * (1.0 + 0.05 * unit(rng));
        }
        out.push_back(e);
    }
    // Keep the outer shell at least 2 voxels from every face.
    for (std::size_t a = 0; a < 3; ++a) {
        Ellipsoid& outer = out[0];
        const double room = std::min(outer.center[a] - 2.0, n[a] - 3.0 - outer.center[a]);
        outer.semi_axes[a] = std::min(outer.semi_axes[a], room);
    }
    return out;
}

Phantom generate_phantom(const PhantomSpec& spec) {
    for (std::size_t i = 0; i < spec.intensities.size(); ++i)
        for (std::size_t j = i + 1; j < spec.intensities.size(); ++j)
            if (std::abs(spec.intensities[i] - spec.intensities[j]) < 0.1 - 1e-12)
                throw std::invalid_argument("phantom label intensities must differ by at least 0.1");
    const auto shapes = phantom_geometry(spec);
    const Dims& d = spec.dims;
    Phantom p{Volume(d, 0.0), LabelMap(d, 0)};
    for (std::size_t x = 0; x < d.nx; ++x)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t z = 0; z < d.nz; ++z) {
                std::uint16_t label = 0;
                for (const auto& e : shapes)
                    if (e.contains(static_cast<double>(x), static_cast<double>(y), static_cast<double>(z))) label = e.label;
                p.labels(x, y, z) = label;
                p.image(x, y, z) = label ? spec.intensities[label - 1u] : 0.0;
            }
    return p;
}

std::array<double, kStructureCount> analytic_label_volumes(const PhantomSpec& spec) {
    const auto s = phantom_geometry(spec);
    std::array<double, kStructureCount> v{};
    v[0] = s[0].volume() - s[1].volume();
    v[1] = s[1].volume();
    for (int k = 2; k < kStructureCount; ++k) {
        v[static_cast<std::size_t>(k)] = s[static_cast<std::size_t>(k)].volume();
        v[1] -= s[static_cast<std::size_t>(k)].volume();
    }
    return v;
}

namespace {

// Trilinear upsampling of a random lattice with nodes every `spacing` voxels.
Volume lattice_field(const Dims& d, double spacing, double lo, double hi, std::mt19937_64& rng) {
    const Dims lat{static_cast<std::size_t>(std::ceil((d.nx - 1) / spacing)) + 1,
                   static_cast<std::size_t>(std::ceil((d.ny - 1) / spacing)) + 1,
                   static_cast<std::size_t>(std::ceil((d.nz - 1) / spacing)) + 1};
    std::uniform_real_distribution<double> dist(lo, hi);
    Volume nodes(lat);
    for (double& v : nodes.storage()) v = dist(rng);
    Volume out(d);
    for (std::size_t x = 0; x < d.nx; ++x)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t z = 0; z < d.nz; ++z)
                out(x, y, z) = trilinear_sample(nodes, {x / spacing, y / spacing, z / spacing});
    return out;
}

}  // namespace

DisplacementField random_smooth_ddf(const Dims& dims, double amplitude, double control_spacing, std::uint64_t seed) {
    if (amplitude < 0 || !(control_spacing > 0)) throw std::invalid_argument("ddf amplitude >= 0 and spacing > 0 required");
    DisplacementField ddf(dims);
    if (amplitude == 0) return ddf;
    std::mt19937_64 rng(derive_seed(seed, 0xDDF));
    for (int c = 0; c < 3; ++c) ddf.component(c) = lattice_field(dims, control_spacing, -amplitude / 2, amplitude / 2, rng);
    return ddf;
}

AppearancePreset parse_preset(const std::string& s) {
    if (s == "none") return AppearancePreset::None;
    if (s == "mild") return AppearancePreset::Mild;
    if (s == "strong") return AppearancePreset::Strong;
    throw std::invalid_argument("unknown appearance preset '" + s + "' (expected none, mild or strong)");
}

std::string to_string(AppearancePreset p) {
    switch (p) {
        case AppearancePreset::None: return "none";
        case AppearancePreset::Mild: return "mild";
        case AppearancePreset::Strong: return "strong";
    }
    return "none";
}

AppearanceSpec appearance_preset(AppearancePreset p, std::uint64_t seed) {
    switch (p) {
        case AppearancePreset::None: return {0.0, 0.0, 0.0, seed};
        case AppearancePreset::Mild: return {0.1, 0.01, 0.025, seed};
        case AppearancePreset::Strong: return {0.7, 0.03, 0.08, seed};
    }
    return {};
}

Volume bias_field(const Dims& dims, double amplitude, std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 0xB1A5));
    const double spacing = static_cast<double>(std::max({dims.nx, dims.ny, dims.nz})) / 2.0;
    Volume raw = lattice_field(dims, spacing, -1.0, 1.0, rng);
    const auto [lo, hi] = std::minmax_element(raw.storage().begin(), raw.storage().end());
    const double peak = std::max(std::abs(*lo), std::abs(*hi));
    for (double& v : raw.storage()) v = peak > 0 ? amplitude * v / peak : 0.0;
    return raw;
}

Volume appearance_perturb(const Volume& v, const LabelMap& labels, const AppearanceSpec& spec) {
    require_same_dims(v.dims(), labels.dims(), "appearance_perturb");
    const Dims& d = v.dims();
    const Volume bias = bias_field(d, spec.bias_amplitude, spec.seed);

    // One plane wave per label: random direction, 0.6..1.2 rad/voxel.
    std::mt19937_64 rng(derive_seed(spec.seed, 0x7E47));
    std::uniform_real_distribution<double> unit(-1.0, 1.0), freq(0.6, 1.2), phase(0.0, 2 * std::numbers::pi);
    std::uint16_t max_label = 0;
    for (auto l : labels.storage()) max_label = std::max(max_label, l);
    std::vector<std::array<double, 4>> waves(static_cast<std::size_t>(max_label) + 1);
    for (auto& w : waves) {
        std::array<double, 3> dir{unit(rng), unit(rng), unit(rng)};
        const double len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
        const double k = freq(rng);
        w = {k * dir[0] / len, k * dir[1] / len, k * dir[2] / len, phase(rng)};
    }
    std::mt19937_64 noise_rng(derive_seed(spec.seed, 0x4015E));
    std::normal_distribution<double> noise(0.0, 1.0);

    Volume out(d);
    for (std::size_t x = 0; x < d.nx; ++x)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t z = 0; z < d.nz; ++z) {
                const std::size_t i = d.offset(x, y, z);
                double val = v[i] * (1.0 + bias[i]);
                const auto l = labels[i];
                if (l != 0 && spec.texture_amplitude != 0) {
                    const auto& w = waves[l];
                    val += spec.texture_amplitude * std::sin(w[0] * x + w[1] * y + w[2] * z + w[3]);
                }
                const double eta = noise(noise_rng);
                if (spec.noise_sigma != 0) val += spec.noise_sigma * eta;
                out[i] = std::clamp(val, 0.0, 1.0);
            }
    return out;
}

PairSample make_pair(std::uint64_t seed, const PhantomSpec& phantom, double deform_amplitude, double control_spacing,
                     const AppearanceSpec& appearance) {
    const Phantom p = generate_phantom(phantom);
    PairSample s;
    s.fixed = p.image;
    s.fixed_labels = p.labels;
    s.true_ddf = random_smooth_ddf(phantom.dims, deform_amplitude, control_spacing, derive_seed(seed, 1));
    s.moving_labels = warp_labels(p.labels, s.true_ddf);
    s.moving = appearance_perturb(warp_image(p.image, s.true_ddf), s.moving_labels, appearance);
    return s;
}

std::vector<PairSample> generate_pairs(std::size_t count, std::uint64_t seed, const PairSpec& spec) {
    std::vector<PairSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t s = derive_seed(seed, i);
        PhantomSpec ph = spec.phantom;
        ph.seed = derive_seed(s, 2);
        out.push_back(make_pair(s, ph, spec.deform_amplitude, spec.control_spacing,
                                appearance_preset(spec.preset, derive_seed(s, 3))));
    }
    return out;
}

}  // namespace aanreg::synth
