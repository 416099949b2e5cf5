#include "aanreg/config.hpp"
#include "aanreg/edgemap.hpp"
#include "aanreg/eval.hpp"
#include "aanreg/register.hpp"
#include "aanreg/synth.hpp"
#include "aanreg/train.hpp"
#include "aanreg/unet.hpp"
#include "aanreg/warp.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace aanreg;
namespace fs = std::filesystem;

namespace {

// Thrown for bad flag combinations discovered after parsing; exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ManifestRow {
    std::string pair_id;
    fs::path fixed, moving, fixed_labels, moving_labels, moving_edges, true_ddf;
};

const char* kManifestHeader = "pair_id,fixed,moving,fixed_labels,moving_labels,moving_edges,true_ddf";

std::vector<ManifestRow> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != kManifestHeader) throw std::runtime_error(path.string() + ": unexpected manifest header");
    const fs::path base = path.parent_path();
    std::vector<ManifestRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) f.push_back(tok);
        if (f.size() != 7) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
        rows.push_back({f[0], base / f[1], base / f[2], base / f[3], base / f[4], base / f[5], base / f[6]});
    }
    if (rows.empty()) throw std::runtime_error(path.string() + ": no pairs listed");
    return rows;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

// Options shared by several subcommands.
struct Common {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

RunConfig resolve(const Common& c) {
    RunConfig cfg = load_config(c.config);
    if (c.seed_given) cfg.seed = c.seed;
    cfg.train.seed = cfg.seed;
    return cfg;
}

void add_common(CLI::App* sub, Common& c, bool with_seed = true) {
    sub->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
    if (with_seed) sub->add_option("--seed", c.seed, "seed for all randomness")->each([&c](const std::string&) { c.seed_given = true; });
}

// synth ----------------------------------------------------------------------

struct SynthArgs {
    Common common;
    std::string out_dir, dims, preset;
    int count = 0;
    double deform = -1;
};

int run_synth(const SynthArgs& a) {
    RunConfig cfg = resolve(a.common);
    if (a.count > 0) cfg.synth.count = a.count;
    if (!a.dims.empty()) cfg.synth.dims = parse_dims(a.dims);
    if (a.deform >= 0) cfg.synth.deform = a.deform;
    if (!a.preset.empty()) cfg.synth.preset = synth::parse_preset(a.preset);

    synth::PairSpec spec;
    spec.phantom.dims = cfg.synth.dims;
    spec.deform_amplitude = cfg.synth.deform;
    spec.control_spacing = cfg.synth.control_spacing;
    spec.preset = cfg.synth.preset;
    const auto pairs = synth::generate_pairs(static_cast<std::size_t>(cfg.synth.count), cfg.seed, spec);

    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    std::ostringstream manifest;
    manifest << kManifestHeader << '\n';
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        std::ostringstream id;
        id << "pair_" << std::setw(3) << std::setfill('0') << i;
        const std::string p = id.str();
        const auto& s = pairs[i];
        write_volume(s.fixed, dir / (p + "_fixed.vol"));
        write_volume(s.moving, dir / (p + "_moving.vol"));
        write_labels(s.fixed_labels, dir / (p + "_fixed_labels.vol"));
        write_labels(s.moving_labels, dir / (p + "_moving_labels.vol"));
        write_edges(canny_3d(s.moving, cfg.synth.canny), dir / (p + "_moving_edges.vol"));
        write_ddf(s.true_ddf, dir / (p + "_true_ddf.vol"));
        manifest << p << ',' << p << "_fixed.vol," << p << "_moving.vol," << p << "_fixed_labels.vol," << p
                 << "_moving_labels.vol," << p << "_moving_edges.vol," << p << "_true_ddf.vol\n";
    }
    write_text(dir / "manifest.csv", manifest.str());
    std::cout << "wrote " << pairs.size() << " pairs to " << dir.string() << "\n";
    return 0;
}

// edges ----------------------------------------------------------------------

struct EdgesArgs {
    std::string input, output;
    CannyParams p;
};

int run_edges(const EdgesArgs& a) {
    const EdgeMap e = canny_3d(read_volume(a.input), a.p);
    write_edges(e, a.output);
    std::cout << "edge voxels: " << std::count(e.storage().begin(), e.storage().end(), std::uint8_t{1}) << " of " << e.size()
              << "\n";
    return 0;
}

// train ----------------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::string data_dir, out_model, log_csv, atlas;
    bool no_aan = false;
    int iterations = 0;
};

int run_train(const TrainArgs& a) {
    RunConfig cfg = resolve(a.common);
    if (a.no_aan) cfg.train.aan_enabled = false;
    if (a.iterations > 0) cfg.train.iterations = a.iterations;
    cfg.train.validate();

    const auto rows = read_manifest(fs::path(a.data_dir) / "manifest.csv");
    std::vector<Volume> volumes;
    for (const auto& r : rows) {
        volumes.push_back(read_volume(r.fixed));
        volumes.push_back(read_volume(r.moving));
    }
    const auto dataset = make_dataset(volumes, cfg.train.canny);

    IterationHook hook;
    if (cfg.train.checkpoint_every > 0)
        hook = [&](int it, const nn::RegistrationModel& m) {
            if ((it + 1) % cfg.train.checkpoint_every == 0)
                nn::save_checkpoint(m, a.out_model + ".iter" + std::to_string(it + 1));
        };
    TrainResult result = train_pairwise(dataset, cfg.train, hook);
    if (!a.atlas.empty()) {
        TrainResult tuned = finetune_atlas(result.model, read_volume(a.atlas), dataset, cfg.train);
        result.model = std::move(tuned.model);
        result.log.insert(result.log.end(), tuned.log.begin(), tuned.log.end());
    }
    nn::save_checkpoint(result.model, a.out_model);
    if (!a.log_csv.empty()) {
        std::ostringstream log;
        write_log_csv(log, result.log);
        write_text(a.log_csv, log.str());
    }
    std::cout << "trained " << result.log.size() << " iterations; final L_sim " << result.log.back().sim << "\n";
    return 0;
}

// register -------------------------------------------------------------------

struct RegisterArgs {
    Common common;
    std::string model, moving, fixed, moving_edges, out_ddf, out_warped, out_phi, slice;
    bool use_or = false;
};

int run_register(const RegisterArgs& a) {
    if (a.model.empty() == !a.use_or) throw UsageError("register: give exactly one of --model or --or");
    const RunConfig cfg = resolve(a.common);
    const Volume moving = read_volume(a.moving), fixed = read_volume(a.fixed);
    DisplacementField ddf;
    Volume warped, phi;
    if (a.use_or) {
        const OrResult r = register_or(moving, fixed, cfg.register_or);
        ddf = r.ddf;
        warped = warp_image(moving, ddf);
        phi = Volume(moving.dims(), 0.0);
        std::cout << "objective " << r.initial_loss << " -> " << r.best_loss << "\n";
    } else {
        const nn::RegistrationModel m = nn::load_checkpoint(a.model);
        const EdgeMap e = a.moving_edges.empty() ? canny_3d(moving, cfg.train.canny) : read_edges(a.moving_edges);
        DlrRegistration r = register_dlr(m, moving, fixed, e);
        ddf = std::move(r.ddf);
        warped = std::move(r.warped);
        phi = std::move(r.phi);
    }
    if (!a.out_ddf.empty()) write_ddf(ddf, a.out_ddf);
    if (!a.out_warped.empty()) write_volume(warped, a.out_warped);
    if (!a.out_phi.empty()) write_volume(phi, a.out_phi);
    if (!a.slice.empty()) {
        const auto colon = a.slice.find(':');
        if (colon == std::string::npos) throw UsageError("--slice-png expects axis:index, e.g. z:20");
        const Axis axis = parse_axis(a.slice.substr(0, colon));
        const std::size_t index = std::stoul(a.slice.substr(colon + 1));
        const fs::path base = a.out_warped.empty() ? fs::path(".") : fs::path(a.out_warped).parent_path();
        const std::string tag = a.slice.substr(0, colon) + a.slice.substr(colon + 1);
        export_slice_pgm(fixed, axis, index, base / ("fixed_" + tag + ".pgm"));
        export_slice_pgm(moving, axis, index, base / ("moving_" + tag + ".pgm"));
        export_slice_pgm(warped, axis, index, base / ("warped_" + tag + ".pgm"));
        export_slice_pgm(normalize_intensity(phi), axis, index, base / ("phi_" + tag + ".pgm"));
    }
    std::cout << "negative Jacobians: " << count_negative_jacobians(ddf) << "\n";
    return 0;
}

// evaluate -------------------------------------------------------------------

struct EvaluateArgs {
    Common common;
    std::string model, ddf_dir, manifest, out_csv;
    bool use_or = false;
};

int run_evaluate(const EvaluateArgs& a) {
    if ((!a.model.empty()) + (!a.ddf_dir.empty()) + a.use_or != 1)
        throw UsageError("evaluate: give exactly one of --model, --ddf-dir or --or");
    const RunConfig cfg = resolve(a.common);
    const auto rows = read_manifest(a.manifest);
    std::vector<EvalPair> pairs;
    for (const auto& r : rows) {
        EvalPair p{r.pair_id, read_volume(r.fixed), read_labels(r.fixed_labels), read_volume(r.moving),
                   read_labels(r.moving_labels), {}};
        p.moving_edges = canny_3d(p.moving, cfg.train.canny);
        pairs.push_back(std::move(p));
    }

    nn::RegistrationModel model;
    Registrar registrar;
    if (!a.model.empty()) {
        model = nn::load_checkpoint(a.model);
        registrar = model_registrar(model);
    } else if (a.use_or) {
        registrar = [&cfg](const EvalPair& p) { return register_or(p.moving, p.fixed, cfg.register_or).ddf; };
    } else {
        registrar = [dir = fs::path(a.ddf_dir)](const EvalPair& p) {
            const fs::path f = dir / (p.id + "_ddf.vol");
            if (!fs::exists(f)) throw std::runtime_error("missing displacement field " + f.string());
            return read_ddf(f);
        };
    }
    const Report rep = evaluate_pairs(pairs, registrar);
    std::ostringstream csv;
    write_report_csv(csv, rep);
    write_text(a.out_csv, csv.str());
    std::cout << "mean Dice " << rep.mean_dice_before << " -> " << rep.mean_dice_after << ", mean negative Jacobians "
              << rep.mean_neg_jacobians << "\n";
    return 0;
}

// jacobian -------------------------------------------------------------------

struct JacobianArgs {
    std::string ddf, out;
};

int run_jacobian(const JacobianArgs& a) {
    const JacobianField det = jacobian_determinants(read_ddf(a.ddf));
    const auto& v = det.storage();
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    const auto neg = std::count_if(v.begin(), v.end(), [](double x) { return x < 0; });
    std::cout << "min,max,mean,negative_count,voxels\n"
              << std::setprecision(17) << *lo << ',' << *hi << ',' << mean << ',' << neg << ',' << v.size() << "\n";
    if (!a.out.empty()) write_volume(det, a.out);
    return 0;
}

// experiment -----------------------------------------------------------------

struct ExperimentArgs {
    Common common;
    std::string kind, out_dir;
};

int run_experiment(const ExperimentArgs& a) {
    const RunConfig cfg = resolve(a.common);
    ExperimentConfig e = resolve_experiment(cfg);
    if (a.common.seed_given) e.seeds = {cfg.seed};
    const auto rows = run_experiment_grid(parse_experiment_kind(a.kind), e, a.out_dir);
    std::cout << "wrote " << rows.size() << " rows to " << (fs::path(a.out_dir) / (a.kind + ".csv")).string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aanreg: appearance-adjusted deformable registration on synthetic 3D volumes"};
    app.require_subcommand(0, 1);
    bool print_config = false;
    std::string print_from;
    app.add_flag("--print-config", print_config, "print the full configuration (defaults or --config) as JSON");
    app.add_option("--config", print_from, "configuration to print with --print-config")->check(CLI::ExistingFile);

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "generate synthetic phantom pairs");
    add_common(synth_cmd, synth_args.common);
    synth_cmd->add_option("--out-dir", synth_args.out_dir)->required();
    synth_cmd->add_option("--count", synth_args.count, "number of pairs");
    synth_cmd->add_option("--dims", synth_args.dims, "NXxNYxNZ");
    synth_cmd->add_option("--deform", synth_args.deform, "deformation control amplitude (voxels)");
    synth_cmd->add_option("--appearance-preset", synth_args.preset)->check(CLI::IsMember({"none", "mild", "strong"}));

    EdgesArgs edges_args;
    auto* edges_cmd = app.add_subcommand("edges", "3D Canny edge map of a volume");
    edges_cmd->add_option("--input", edges_args.input)->required()->check(CLI::ExistingFile);
    edges_cmd->add_option("--output", edges_args.output)->required();
    edges_cmd->add_option("--low", edges_args.p.low, "low hysteresis threshold")->capture_default_str();
    edges_cmd->add_option("--high", edges_args.p.high, "high hysteresis threshold")->capture_default_str();
    edges_cmd->add_option("--sigma", edges_args.p.sigma, "Gaussian smoothing sigma")->capture_default_str();

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train the AAN and registration networks");
    add_common(train_cmd, train_args.common);
    train_cmd->add_option("--data-dir", train_args.data_dir)->required()->check(CLI::ExistingDirectory);
    train_cmd->add_option("--out-model", train_args.out_model)->required();
    train_cmd->add_option("--log-csv", train_args.log_csv);
    train_cmd->add_flag("--no-aan", train_args.no_aan, "ablation: train the registration network alone");
    train_cmd->add_option("--iterations", train_args.iterations, "override train.iterations")->check(CLI::PositiveNumber);
    train_cmd->add_option("--atlas", train_args.atlas, "fine-tune towards this atlas volume after training")
        ->check(CLI::ExistingFile);

    RegisterArgs reg_args;
    auto* reg_cmd = app.add_subcommand("register", "register a moving volume to a fixed volume");
    add_common(reg_cmd, reg_args.common);
    reg_cmd->add_option("--model", reg_args.model, "trained checkpoint")->check(CLI::ExistingFile);
    reg_cmd->add_flag("--or", reg_args.use_or, "per-pair optimisation instead of a trained model");
    reg_cmd->add_option("--moving", reg_args.moving)->required()->check(CLI::ExistingFile);
    reg_cmd->add_option("--fixed", reg_args.fixed)->required()->check(CLI::ExistingFile);
    reg_cmd->add_option("--moving-edges", reg_args.moving_edges, "edge map (default: computed)")->check(CLI::ExistingFile);
    reg_cmd->add_option("--out-ddf", reg_args.out_ddf);
    reg_cmd->add_option("--out-warped", reg_args.out_warped);
    reg_cmd->add_option("--out-phi", reg_args.out_phi);
    reg_cmd->add_option("--slice-png", reg_args.slice, "axis:index; writes PGM slices of fixed, moving, warped and phi");

    EvaluateArgs eval_args;
    auto* eval_cmd = app.add_subcommand("evaluate", "Dice and Jacobian report over a pair manifest");
    add_common(eval_cmd, eval_args.common);
    eval_cmd->add_option("--model", eval_args.model)->check(CLI::ExistingFile);
    eval_cmd->add_option("--ddf-dir", eval_args.ddf_dir, "directory of <pair_id>_ddf.vol")->check(CLI::ExistingDirectory);
    eval_cmd->add_flag("--or", eval_args.use_or, "register each pair by optimisation");
    eval_cmd->add_option("--pairs-manifest", eval_args.manifest)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--out-csv", eval_args.out_csv)->required();

    JacobianArgs jac_args;
    auto* jac_cmd = app.add_subcommand("jacobian", "Jacobian determinant statistics of a displacement field");
    jac_cmd->add_option("--ddf", jac_args.ddf)->required()->check(CLI::ExistingFile);
    jac_cmd->add_option("--out", jac_args.out, "write the determinant volume");

    ExperimentArgs exp_args;
    auto* exp_cmd = app.add_subcommand("experiment", "run a sweep and write CSV plus PGM plots");
    add_common(exp_cmd, exp_args.common);
    exp_cmd->add_option("--kind", exp_args.kind)
        ->required()
        ->check(CLI::IsMember({"lambda_sweep", "lt_sweep", "trainsize_sweep", "convergence"}));
    exp_cmd->add_option("--out-dir", exp_args.out_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e, std::cerr, std::cerr);
        std::cerr << app.help();
        return 2;
    }

    try {
        if (print_config) {
            std::cout << to_json(load_config(print_from)).dump(2) << "\n";
            return 0;
        }
        if (*synth_cmd) return run_synth(synth_args);
        if (*edges_cmd) return run_edges(edges_args);
        if (*train_cmd) return run_train(train_args);
        if (*reg_cmd) return run_register(reg_args);
        if (*eval_cmd) return run_evaluate(eval_args);
        if (*jac_cmd) return run_jacobian(jac_args);
        if (*exp_cmd) return run_experiment(exp_args);
        std::cerr << app.help();
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
