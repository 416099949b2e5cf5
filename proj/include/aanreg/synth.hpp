#pragma once

#include "aanreg/volume.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace aanreg::synth {

inline constexpr Dims kDeskDims{36, 48, 40};
inline constexpr int kStructureCount = 6;

/// Brain-like phantom: an outer cortex shell (1), white matter (2), two
/// ventricles (3, 4) and two deep nuclei (5, 6), all ellipsoids.
struct PhantomSpec {
    Dims dims = kDeskDims;
    std::array<double, kStructureCount> intensities{0.5, 0.8, 0.2, 0.3, 0.6, 0.7};
    std::uint64_t seed = 1;
};

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> semi_axes;
    std::uint16_t label;

    bool contains(double x, double y, double z) const;
    double volume() const;
};

/// Geometry used by generate_phantom for `spec` (jittered per seed).
std::vector<Ellipsoid> phantom_geometry(const PhantomSpec& spec);

struct Phantom {
    Volume image;
    LabelMap labels;
};

Phantom generate_phantom(const PhantomSpec& spec);

/// Expected voxel count per label 1..6 from the ellipsoid volumes.
std::array<double, kStructureCount> analytic_label_volumes(const PhantomSpec& spec);

/// Random control lattice (one node every `control_spacing` voxels, values in
/// [-amplitude/2, amplitude/2]) upsampled trilinearly. Neighbouring nodes
/// differ by at most `amplitude`, so amplitude/spacing < 1/3 keeps every
/// Jacobian determinant positive.
DisplacementField random_smooth_ddf(const Dims& dims, double amplitude, double control_spacing, std::uint64_t seed);

struct AppearanceSpec {
    double bias_amplitude = 0.2;
    double noise_sigma = 0.02;
    double texture_amplitude = 0.05;
    std::uint64_t seed = 1;
};

enum class AppearancePreset { None, Mild, Strong };
AppearancePreset parse_preset(const std::string& s);
std::string to_string(AppearancePreset p);
AppearanceSpec appearance_preset(AppearancePreset p, std::uint64_t seed);

/// Smooth bias field in [-amplitude, amplitude].
Volume bias_field(const Dims& dims, double amplitude, std::uint64_t seed);

/// v' = clip(v * (1 + bias) + texture(labels) + noise, 0, 1).
Volume appearance_perturb(const Volume& v, const LabelMap& labels, const AppearanceSpec& spec);

struct PairSample {
    Volume fixed;
    LabelMap fixed_labels;
    Volume moving;
    LabelMap moving_labels;
    DisplacementField true_ddf;  // diagnostics only
};

struct PairSpec {
    PhantomSpec phantom;
    double deform_amplitude = 3.5;
    double control_spacing = 12.0;
    AppearancePreset preset = AppearancePreset::Strong;
};

/// fixed = phantom; moving = appearance_perturb(warp(phantom, true_ddf)).
PairSample make_pair(std::uint64_t seed, const PhantomSpec& phantom, double deform_amplitude, double control_spacing,
                     const AppearanceSpec& appearance);

/// `count` pairs; pair i derives every seed from (seed, i).
std::vector<PairSample> generate_pairs(std::size_t count, std::uint64_t seed, const PairSpec& spec);

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace aanreg::synth
