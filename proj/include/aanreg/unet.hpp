#pragma once

#include "aanreg/graph.hpp"
#include "aanreg/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace aanreg::nn {

/// Channels of the last feature map before the output convolution.
inline constexpr std::size_t kPreOutputChannels = 8;

struct ArchConfig {
    int levels = 3;
    int base_channels = 16;
    int in_channels = 3;
    int out_channels = 1;
    double leaky_slope = 0.2;

    /// Throws if `d` is not divisible by 2^(levels-1) on every axis.
    void validate(const Dims& d) const;
    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

ArchConfig default_aan_arch();
ArchConfig default_dlr_arch();

enum class ModelRole { AAN, DLR };

struct NamedParam {
    std::string name;
    Var var;
};

/// Ordered, named parameter tensors of one network.
struct ModelParams {
    ModelRole role = ModelRole::DLR;
    std::vector<NamedParam> params;

    std::size_t scalar_count() const;
    void zero_grad();
    const Var& find(const std::string& name) const;
    /// Deep copy (new leaves, same values).
    ModelParams clone() const;
};

/// Parameter layout for the U-net. Kernels get fan-in scaled uniform values,
/// biases zero; the output convolution is zero so the network starts at 0.
ModelParams init_unet(const ArchConfig& cfg, ModelRole role, std::uint64_t seed);

/// Encoder: stride-1 conv at full resolution, then stride-2 convs doubling
/// channels. Decoder: stride-1 conv halving channels, upsample, skip concat.
/// Finishes with an 8-channel feature map and a linear output convolution.
Var unet_forward(const ModelParams& params, const ArchConfig& cfg, const Var& input);

/// Feature maps recorded by unet_forward, for shape checks.
struct UNetTrace {
    std::vector<Shape> encoder;
    std::vector<Shape> decoder;
};
Var unet_forward(const ModelParams& params, const ArchConfig& cfg, const Var& input, UNetTrace* trace);

/// phi = G(M, F, E): 3-channel input, 1-channel appearance map.
Var aan_graph(const ModelParams& theta, const ArchConfig& cfg, const Var& moving, const Var& fixed,
              const EdgeMap& edges);
Volume aan_forward(const ModelParams& theta, const Volume& moving, const Volume& fixed, const EdgeMap& edges,
                   const ArchConfig& cfg);

/// psi = R(M_adj, F): 2-channel input, 3-channel displacement.
Var dlr_graph(const ModelParams& params, const ArchConfig& cfg, const Var& moving_adjusted, const Var& fixed);
DisplacementField dlr_forward(const ModelParams& params, const Volume& moving_adjusted, const Volume& fixed,
                              const ArchConfig& cfg);

DisplacementField to_ddf(const Var& v);
Var from_ddf(const DisplacementField& ddf);
Var edge_tensor(const EdgeMap& e);

/// Both networks of a trained registration model. With aan_enabled false
/// the appearance map is identically zero.
struct RegistrationModel {
    ArchConfig aan_arch = default_aan_arch();
    ArchConfig dlr_arch = default_dlr_arch();
    bool aan_enabled = true;
    ModelParams aan;
    ModelParams dlr;

    static RegistrationModel initialize(const ArchConfig& aan_arch, const ArchConfig& dlr_arch, bool aan_enabled,
                                        std::uint64_t seed);
};

// Checkpoint: "AANM", u32 version, u8 aan_enabled, two arch blocks (i32
// levels, base, in, out; f64 slope), then for each model a u32 tensor count
// and each tensor as u32 rank, u32 extents, f64 LE values.
void save_checkpoint(const RegistrationModel& m, const std::filesystem::path& path);
RegistrationModel load_checkpoint(const std::filesystem::path& path);

}  // namespace aanreg::nn
