#pragma once

#include "aanreg/graph.hpp"
#include "aanreg/volume.hpp"

#include <string>

namespace aanreg {

enum class SimKind { MSE, LCC };
std::string to_string(SimKind k);
SimKind parse_sim_kind(const std::string& s);

struct LossConfig {
    SimKind sim_kind = SimKind::MSE;
    int lcc_window = 9;
    double lambda_structure = 0.1;
    double mu_smooth = 1.0;
    double mu_antifold = 1e-5;
    double epsilon = 1e-8;

    void validate() const;
    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

/// Defaults per similarity measure (mu_smooth 1.0 for MSE, 1.5 for LCC).
LossConfig default_loss_config(SimKind kind);

/// Smoothing constant inside the structure-loss norm.
inline constexpr double kStructureNormEps = 1e-12;

namespace losses {

/// Window size actually used for an LCC on `d`: n, or the largest odd value
/// that fits the smallest axis.
int effective_lcc_window(int n, const Dims& d);

/// Mean of the n^3 window centred at p; indices are clamped per axis, so
/// border windows count replicated voxels and the divisor is always n^3.
double local_mean(const Volume& v, std::size_t x, std::size_t y, std::size_t z, int n);

/// Clamped box sum over an n^3 window for every voxel (separable).
std::vector<double> box_sum(std::span<const double> v, const Dims& d, int n);

/// Squared local correlation per voxel, cross^2 / (varF varW + eps).
Volume lcc_terms(const Volume& fixed, const Volume& warped, int n, double eps);

// Graph ops. All return {1}-shaped nodes.
nn::Var mse(const nn::Var& fixed, const nn::Var& warped);
nn::Var lcc(const nn::Var& fixed, const nn::Var& warped, int n, double eps);
/// Voxel mean of (1 - E) * ||grad phi||, forward differences (zero past the
/// far face), norm smoothed as sqrt(|g|^2 + eps) - sqrt(eps).
nn::Var structure(const nn::Var& phi, const EdgeMap& edges);
/// Voxel mean of sum_c ||grad u_c||^2, forward differences.
nn::Var diffusion(const nn::Var& ddf);
/// Sum over voxels of max(0, -det(I + grad u))^2.
nn::Var antifold(const nn::Var& ddf);
nn::Var similarity(const nn::Var& fixed, const nn::Var& warped, const LossConfig& cfg);

struct Breakdown {
    nn::Var total;
    nn::Var warped;  // (M + phi) o psi
    double sim = 0;
    double structure = 0;
    double smooth = 0;
    double antifold = 0;
    double total_value = 0;
};

/// L_sim(F, (M + phi) o psi) + mu_smooth R_diff + mu_antifold R_fold + lambda L_structure.
Breakdown total(const nn::Var& fixed, const nn::Var& moving, const nn::Var& phi, const nn::Var& ddf,
                const EdgeMap& edges, const LossConfig& cfg);

// Value-only conveniences over plain grids.
double mse_loss(const Volume& fixed, const Volume& warped);
double lcc_loss(const Volume& fixed, const Volume& warped, int n, double eps);
double structure_loss(const Volume& phi, const EdgeMap& edges);
double diffusion_regularizer(const DisplacementField& ddf);
double antifold_regularizer(const DisplacementField& ddf);

}  // namespace losses
}  // namespace aanreg
