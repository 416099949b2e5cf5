#pragma once

#include "aanreg/losses.hpp"
#include "aanreg/unet.hpp"

#include <vector>

namespace aanreg {

struct DlrRegistration {
    DisplacementField ddf;
    Volume warped;  // M o psi: the unadjusted moving image
    Volume phi;     // appearance map, zero when the AAN is disabled
};

/// Learned one-pass registration. The appearance map only feeds the
/// displacement network; the returned warp applies psi to M itself.
DlrRegistration register_dlr(const nn::RegistrationModel& model, const Volume& moving, const Volume& fixed,
                             const EdgeMap& moving_edges);

/// Same appearance map the training path computes for (M, F, E_M).
Volume appearance_map(const nn::RegistrationModel& model, const Volume& moving, const Volume& fixed,
                      const EdgeMap& moving_edges);

struct OrConfig {
    int iterations = 300;
    double lr = 0.1;
    double mu_smooth = 1.0;
    SimKind sim_kind = SimKind::MSE;
    int lcc_window = 9;
    double epsilon = 1e-8;
};

struct OrResult {
    DisplacementField ddf;     // best-loss iterate
    double initial_loss = 0;   // objective at u = 0
    double best_loss = 0;
    std::vector<double> best_so_far;  // one entry per evaluated iterate
};

/// Per-pair optimisation baseline: Adam directly on the voxels of u,
/// minimising L_sim(F, M o psi) + mu_smooth * R_diffusion(psi) from u = 0.
OrResult register_or(const Volume& moving, const Volume& fixed, const OrConfig& cfg);

}  // namespace aanreg
