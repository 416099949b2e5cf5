#include "aanreg/config.hpp"

#include <fstream>
#include <regex>
#include <set>

namespace aanreg {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Reads keys out of one object and rejects anything it was not asked about.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected a JSON object");
    }
    ~Section() = default;

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string path(const char* key) const { return path_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + path_ + "." + it.key() + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

ordered_json arch_json(const nn::ArchConfig& a) {
    return {{"levels", a.levels},
            {"base_channels", a.base_channels},
            {"in_channels", a.in_channels},
            {"out_channels", a.out_channels},
            {"leaky_slope", a.leaky_slope}};
}

void read_arch(const json& j, const std::string& path, nn::ArchConfig& a) {
    Section s(j, path);
    s.get("levels", a.levels);
    s.get("base_channels", a.base_channels);
    s.get("in_channels", a.in_channels);
    s.get("out_channels", a.out_channels);
    s.get("leaky_slope", a.leaky_slope);
    s.finish();
}

ordered_json loss_json(const LossConfig& l) {
    return {{"sim", to_string(l.sim_kind)},
            {"lcc_window", l.lcc_window},
            {"lambda_structure", l.lambda_structure},
            {"mu_smooth", l.mu_smooth},
            {"mu_antifold", l.mu_antifold},
            {"epsilon", l.epsilon}};
}

SimKind sim_from(const std::string& s, const std::string& path) {
    try {
        return parse_sim_kind(s);
    } catch (const std::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void read_loss(const json& j, const std::string& path, LossConfig& l) {
    Section s(j, path);
    std::string sim = to_string(l.sim_kind);
    s.get("sim", sim);
    l.sim_kind = sim_from(sim, path + ".sim");
    s.get("lcc_window", l.lcc_window);
    s.get("lambda_structure", l.lambda_structure);
    s.get("mu_smooth", l.mu_smooth);
    s.get("mu_antifold", l.mu_antifold);
    s.get("epsilon", l.epsilon);
    s.finish();
}

ordered_json canny_json(const CannyParams& c) { return {{"low", c.low}, {"high", c.high}, {"sigma", c.sigma}}; }

void read_canny(const json& j, const std::string& path, CannyParams& c) {
    Section s(j, path);
    s.get("low", c.low);
    s.get("high", c.high);
    s.get("sigma", c.sigma);
    s.finish();
}

ordered_json train_json(const TrainConfig& t) {
    return {{"iterations", t.iterations},
            {"atlas_iterations", t.atlas_iterations},
            {"lr", t.lr},
            {"atlas_lr", t.atlas_lr},
            {"aan_enabled", t.aan_enabled},
            {"loss", loss_json(t.loss)},
            {"aan_arch", arch_json(t.aan_arch)},
            {"dlr_arch", arch_json(t.dlr_arch)},
            {"canny", canny_json(t.canny)},
            {"checkpoint_every", t.checkpoint_every}};
}

void read_train(const json& j, TrainConfig& t) {
    Section s(j, "train");
    s.get("iterations", t.iterations);
    s.get("atlas_iterations", t.atlas_iterations);
    s.get("lr", t.lr);
    s.get("atlas_lr", t.atlas_lr);
    s.get("aan_enabled", t.aan_enabled);
    if (auto* c = s.child("loss")) read_loss(*c, s.path("loss"), t.loss);
    if (auto* c = s.child("aan_arch")) read_arch(*c, s.path("aan_arch"), t.aan_arch);
    if (auto* c = s.child("dlr_arch")) read_arch(*c, s.path("dlr_arch"), t.dlr_arch);
    if (auto* c = s.child("canny")) read_canny(*c, s.path("canny"), t.canny);
    s.get("checkpoint_every", t.checkpoint_every);
    s.finish();
}

std::string dims_string(const Dims& d) {
    return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

}  // namespace

Dims parse_dims(const std::string& s) {
    static const std::regex re(R"((\d+)[xX,](\d+)[xX,](\d+))");
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw ConfigError("dims must look like 36x48x40, got '" + s + "'");
    const Dims d{std::stoul(m[1]), std::stoul(m[2]), std::stoul(m[3])};
    if (!d.nx || !d.ny || !d.nz) throw ConfigError("dims must be positive");
    return d;
}

ordered_json to_json(const RunConfig& cfg) {
    ordered_json j;
    j["seed"] = cfg.seed;
    j["train"] = train_json(cfg.train);
    j["synth"] = {{"count", cfg.synth.count},
                  {"dims", dims_string(cfg.synth.dims)},
                  {"deform", cfg.synth.deform},
                  {"control_spacing", cfg.synth.control_spacing},
                  {"appearance_preset", synth::to_string(cfg.synth.preset)},
                  {"canny", canny_json(cfg.synth.canny)}};
    j["register_or"] = {{"iterations", cfg.register_or.iterations},
                        {"lr", cfg.register_or.lr},
                        {"mu_smooth", cfg.register_or.mu_smooth},
                        {"sim", to_string(cfg.register_or.sim_kind)},
                        {"lcc_window", cfg.register_or.lcc_window},
                        {"epsilon", cfg.register_or.epsilon}};
    const auto& e = cfg.experiment;
    j["experiment"] = {{"data_seed", e.data_seed},     {"train_pairs", e.train_pairs},
                       {"test_pairs", e.test_pairs},   {"seeds", e.seeds},
                       {"lambdas", e.lambdas},         {"low_thresholds", e.low_thresholds},
                       {"train_sizes", e.train_sizes}};
    return j;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig cfg;
    Section root(j, "config");
    root.get("seed", cfg.seed);
    if (auto* c = root.child("train")) read_train(*c, cfg.train);
    if (auto* c = root.child("synth")) {
        Section s(*c, "synth");
        s.get("count", cfg.synth.count);
        std::string dims = dims_string(cfg.synth.dims);
        s.get("dims", dims);
        cfg.synth.dims = parse_dims(dims);
        s.get("deform", cfg.synth.deform);
        s.get("control_spacing", cfg.synth.control_spacing);
        std::string preset = synth::to_string(cfg.synth.preset);
        s.get("appearance_preset", preset);
        try {
            cfg.synth.preset = synth::parse_preset(preset);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("synth.appearance_preset: ") + e.what());
        }
        if (auto* cc = s.child("canny")) read_canny(*cc, "synth.canny", cfg.synth.canny);
        s.finish();
    }
    if (auto* c = root.child("register_or")) {
        Section s(*c, "register_or");
        auto& o = cfg.register_or;
        s.get("iterations", o.iterations);
        s.get("lr", o.lr);
        s.get("mu_smooth", o.mu_smooth);
        std::string sim = to_string(o.sim_kind);
        s.get("sim", sim);
        o.sim_kind = sim_from(sim, "register_or.sim");
        s.get("lcc_window", o.lcc_window);
        s.get("epsilon", o.epsilon);
        s.finish();
    }
    if (auto* c = root.child("experiment")) {
        Section s(*c, "experiment");
        auto& e = cfg.experiment;
        s.get("data_seed", e.data_seed);
        s.get("train_pairs", e.train_pairs);
        s.get("test_pairs", e.test_pairs);
        s.get("seeds", e.seeds);
        s.get("lambdas", e.lambdas);
        s.get("low_thresholds", e.low_thresholds);
        s.get("train_sizes", e.train_sizes);
        s.finish();
    }
    root.finish();
    try {
        cfg.train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    if (cfg.synth.count < 1) throw ConfigError("synth.count must be >= 1");
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

ExperimentConfig resolve_experiment(const RunConfig& cfg) {
    ExperimentConfig e = cfg.experiment;
    e.train = cfg.train;
    e.data.phantom.dims = cfg.synth.dims;
    e.data.deform_amplitude = cfg.synth.deform;
    e.data.control_spacing = cfg.synth.control_spacing;
    e.data.preset = cfg.synth.preset;
    if (e.seeds.empty()) e.seeds = {cfg.seed};
    return e;
}

}  // namespace aanreg
