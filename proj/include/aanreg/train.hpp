#pragma once

#include "aanreg/edgemap.hpp"
#include "aanreg/losses.hpp"
#include "aanreg/unet.hpp"

#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace aanreg {

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update of every tensor in `params` from its grad.
/// Tensors without a gradient buffer are treated as having zero gradient.
void adam_step(std::vector<nn::Var>& params, AdamState& state);

struct TrainConfig {
    int iterations = 2000;
    int atlas_iterations = 200;
    double lr = 1e-4;
    double atlas_lr = 1e-5;
    std::uint64_t seed = 1;
    bool aan_enabled = true;
    LossConfig loss;
    nn::ArchConfig aan_arch = nn::default_aan_arch();
    nn::ArchConfig dlr_arch = nn::default_dlr_arch();
    CannyParams canny;
    int checkpoint_every = 0;  // 0 disables periodic checkpoints

    void validate() const;
    /// 100,000 / 10,000 iterations; far beyond desk scale.
    static TrainConfig full_scale();
};

/// A moving image with its cached edge map.
struct TrainingSample {
    Volume image;
    EdgeMap edges;
};

std::vector<TrainingSample> make_dataset(const std::vector<Volume>& volumes, const CannyParams& canny);

struct LogRow {
    int iteration = 0;
    double sim = 0;
    double structure = 0;
    double smooth = 0;
    double antifold = 0;
    double total = 0;
};

void write_log_csv(std::ostream& out, const std::vector<LogRow>& log);

/// Trailing moving average of L_sim ending at `index` (window clipped at 0).
double moving_average_sim(const std::vector<LogRow>& log, std::size_t index, std::size_t window = 20);

class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, int iteration);
    int iteration() const { return iteration_; }

private:
    int iteration_;
};

struct TrainResult {
    nn::RegistrationModel model;
    std::vector<LogRow> log;
};

/// Called after each iteration; used for periodic checkpoints.
using IterationHook = std::function<void(int iteration, const nn::RegistrationModel&)>;

/// One forward/backward/Adam iteration on a single (moving, fixed) pair.
LogRow train_step(nn::RegistrationModel& model, AdamState& adam, const TrainingSample& moving, const Volume& fixed,
                  const LossConfig& loss, int iteration);

/// End-to-end cooperative training on random ordered pairs (with replacement).
TrainResult train_pairwise(const std::vector<TrainingSample>& dataset, const TrainConfig& cfg,
                           const IterationHook& hook = {});

/// Same loop with the atlas as every fixed image and lr = atlas_lr.
TrainResult finetune_atlas(const nn::RegistrationModel& pretrained, const Volume& atlas,
                           const std::vector<TrainingSample>& dataset, const TrainConfig& cfg);

/// Parameter tensors trained for `model` (AAN ones only when enabled).
std::vector<nn::Var> trainable(nn::RegistrationModel& model);

}  // namespace aanreg
