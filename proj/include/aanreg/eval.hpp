#pragma once

#include "aanreg/synth.hpp"
#include "aanreg/train.hpp"
#include "aanreg/volume.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace aanreg {

struct DiceResult {
    std::map<std::uint16_t, double> per_label;  // labels present in a or b
    double mean = 0;                             // over per_label; 0 if empty
};

/// Per nonzero label 2|A∩B| / (|A|+|B|). Labels absent from both maps are
/// skipped; a label present in only one scores 0.
DiceResult dice(const LabelMap& a, const LabelMap& b);

/// Everything needed to evaluate one moving -> fixed registration.
struct EvalPair {
    std::string id;
    Volume fixed;
    LabelMap fixed_labels;
    Volume moving;
    LabelMap moving_labels;
    EdgeMap moving_edges;
};

std::vector<EvalPair> to_eval_pairs(const std::vector<synth::PairSample>& pairs, const CannyParams& canny,
                                    const std::string& prefix = "pair");

struct PairReport {
    std::string pair_id;
    double dice_before = 0;
    double dice_after = 0;
    std::size_t neg_jacobians = 0;
    std::map<std::uint16_t, double> label_dice;  // after registration
};

struct Report {
    std::vector<PairReport> rows;
    double mean_dice_before = 0;
    double mean_dice_after = 0;
    double mean_neg_jacobians = 0;
};

/// Produces the displacement field for a pair (learned model, OR, or a file).
using Registrar = std::function<DisplacementField(const EvalPair&)>;

Registrar model_registrar(const nn::RegistrationModel& model);

/// Registers each pair, warps the moving labels, and scores Dice before/after
/// and the negative-Jacobian count. Aggregates are plain means over rows.
Report evaluate_pairs(const std::vector<EvalPair>& pairs, const Registrar& registrar);

/// Columns: pair_id, dice_before, dice_after, neg_jacobians, dice_label_<L>...
/// followed by one "mean" row.
void write_report_csv(std::ostream& out, const Report& report);

// Experiment grids -----------------------------------------------------------

enum class ExperimentKind { LambdaSweep, LtSweep, TrainSizeSweep, Convergence };
ExperimentKind parse_experiment_kind(const std::string& s);
std::string to_string(ExperimentKind k);

struct ExperimentConfig {
    TrainConfig train;
    synth::PairSpec data;
    std::uint64_t data_seed = 1000;
    int train_pairs = 12;
    int test_pairs = 20;
    std::vector<std::uint64_t> seeds{1};
    std::vector<double> lambdas{0.0, 0.01, 0.1, 1.0, 10.0};
    std::vector<double> low_thresholds{0.05, 0.1, 0.15, 0.2};
    std::vector<int> train_sizes{2, 4, 8, 16};
};

/// Canny parameters for a sweep point. Hysteresis with LT >= HT keeps
/// exactly the voxels >= HT, so LT is capped at HT.
CannyParams sweep_canny(double low, double high, double sigma);

/// Synthetic train/test split used by every experiment.
struct ExperimentData {
    std::vector<synth::PairSample> train;
    std::vector<synth::PairSample> test;
};
ExperimentData make_experiment_data(const ExperimentConfig& cfg);

/// All volumes of the training pairs (fixed and moving), in pair order.
std::vector<Volume> training_volumes(const std::vector<synth::PairSample>& pairs, std::size_t max_pairs);

/// Train one model and evaluate it on the test pairs.
struct TrialResult {
    TrainResult training;
    Report report;
    double final_sim_average = 0;  // 20-iteration moving average at the last iteration
};
TrialResult run_trial(const ExperimentData& data, const TrainConfig& cfg, std::size_t max_train_pairs = 0);

struct ExperimentRow {
    std::string axis;       // "lambda", "lt", "train_pairs", or "iteration"
    double value = 0;
    std::uint64_t seed = 0;
    std::string variant;    // "aan" or "no-aan"
    std::size_t train_samples = 0;
    double dice_before = 0;
    double dice_after = 0;
    double neg_jacobians = 0;
    double final_sim = 0;
};

/// Runs the sweep, writes <kind>.csv (and <kind>.pgm plot) into out_dir,
/// and returns the rows. Training failures are rethrown with the sweep point.
std::vector<ExperimentRow> run_experiment_grid(ExperimentKind kind, const ExperimentConfig& cfg,
                                               const std::filesystem::path& out_dir);

void write_experiment_csv(std::ostream& out, const std::vector<ExperimentRow>& rows);

/// Minimal line plot raster (white background, one gray level per series).
struct Series {
    std::vector<double> x, y;
};
void write_line_plot_pgm(const std::filesystem::path& path, const std::vector<Series>& series, std::size_t width = 320,
                         std::size_t height = 200);

}  // namespace aanreg
