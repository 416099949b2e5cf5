#pragma once

#include "aanreg/eval.hpp"
#include "aanreg/register.hpp"
#include "aanreg/synth.hpp"
#include "aanreg/train.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>

namespace aanreg {

/// Bad or unknown configuration; the CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SynthConfig {
    int count = 4;
    Dims dims = synth::kDeskDims;
    double deform = 3.5;
    double control_spacing = 12.0;
    synth::AppearancePreset preset = synth::AppearancePreset::Strong;
    CannyParams canny;
};

inline ExperimentConfig unseeded_experiment() {
    ExperimentConfig e;
    e.seeds.clear();
    return e;
}

/// One JSON document holding every module's settings. Sections and keys are
/// optional (defaults fill in) but unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 1;
    TrainConfig train;
    SynthConfig synth;
    OrConfig register_or;
    // train/data members mirror the sections above; empty seeds means {seed}
    ExperimentConfig experiment = unseeded_experiment();
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Folds seed, train and synth sections into the experiment settings.
ExperimentConfig resolve_experiment(const RunConfig& cfg);

Dims parse_dims(const std::string& s);  // "NXxNYxNZ"

}  // namespace aanreg
