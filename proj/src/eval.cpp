#include "aanreg/eval.hpp"

#include "aanreg/register.hpp"
#include "aanreg/warp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace aanreg {

DiceResult dice(const LabelMap& a, const LabelMap& b) {
    require_same_dims(a.dims(), b.dims(), "dice");
    std::map<std::uint16_t, std::array<std::size_t, 3>> counts;  // |A|, |B|, |A∩B|
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto la = a[i], lb = b[i];
        if (la) ++counts[la][0];
        if (lb) ++counts[lb][1];
        if (la && la == lb) ++counts[la][2];
    }
    DiceResult r;
    double acc = 0;
    for (const auto& [label, c] : counts) {
        const double s = 2.0 * static_cast<double>(c[2]) / static_cast<double>(c[0] + c[1]);
        r.per_label[label] = s;
        acc += s;
    }
    r.mean = r.per_label.empty() ? 0.0 : acc / static_cast<double>(r.per_label.size());
    return r;
}

std::vector<EvalPair> to_eval_pairs(const std::vector<synth::PairSample>& pairs, const CannyParams& canny,
                                    const std::string& prefix) {
    std::vector<EvalPair> out;
    out.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        std::ostringstream id;
        id << prefix << '_' << std::setw(3) << std::setfill('0') << i;
        out.push_back({id.str(), p.fixed, p.fixed_labels, p.moving, p.moving_labels, canny_3d(p.moving, canny)});
    }
    return out;
}

Registrar model_registrar(const nn::RegistrationModel& model) {
    return [&model](const EvalPair& p) { return register_dlr(model, p.moving, p.fixed, p.moving_edges).ddf; };
}

Report evaluate_pairs(const std::vector<EvalPair>& pairs, const Registrar& registrar) {
    Report rep;
    for (const EvalPair& p : pairs) {
        const DisplacementField ddf = registrar(p);
        require_same_dims(ddf.dims(), p.moving.dims(), ("displacement for " + p.id).c_str());
        PairReport row;
        row.pair_id = p.id;
        row.dice_before = dice(p.moving_labels, p.fixed_labels).mean;
        const DiceResult after = dice(warp_labels(p.moving_labels, ddf), p.fixed_labels);
        row.dice_after = after.mean;
        row.label_dice = after.per_label;
        row.neg_jacobians = count_negative_jacobians(ddf);
        rep.rows.push_back(std::move(row));
    }
    if (!rep.rows.empty()) {
        const auto n = static_cast<double>(rep.rows.size());
        for (const auto& r : rep.rows) {
            rep.mean_dice_before += r.dice_before;
            rep.mean_dice_after += r.dice_after;
            rep.mean_neg_jacobians += static_cast<double>(r.neg_jacobians);
        }
        rep.mean_dice_before /= n;
        rep.mean_dice_after /= n;
        rep.mean_neg_jacobians /= n;
    }
    return rep;
}

void write_report_csv(std::ostream& out, const Report& report) {
    std::set<std::uint16_t> labels;
    for (const auto& r : report.rows)
        for (const auto& [l, _] : r.label_dice) labels.insert(l);
    out << "pair_id,dice_before,dice_after,neg_jacobians";
    for (auto l : labels) out << ",dice_label_" << l;
    out << '\n' << std::setprecision(17);
    for (const auto& r : report.rows) {
        out << r.pair_id << ',' << r.dice_before << ',' << r.dice_after << ',' << r.neg_jacobians;
        for (auto l : labels) {
            out << ',';
            if (auto it = r.label_dice.find(l); it != r.label_dice.end()) out << it->second;
        }
        out << '\n';
    }
    out << "mean," << report.mean_dice_before << ',' << report.mean_dice_after << ',' << report.mean_neg_jacobians;
    for (auto l : labels) {
        double acc = 0;
        std::size_t n = 0;
        for (const auto& r : report.rows)
            if (auto it = r.label_dice.find(l); it != r.label_dice.end()) {
                acc += it->second;
                ++n;
            }
        out << ',';
        if (n) out << acc / static_cast<double>(n);
    }
    out << '\n';
}

ExperimentKind parse_experiment_kind(const std::string& s) {
    if (s == "lambda_sweep") return ExperimentKind::LambdaSweep;
    if (s == "lt_sweep") return ExperimentKind::LtSweep;
    if (s == "trainsize_sweep") return ExperimentKind::TrainSizeSweep;
    if (s == "convergence") return ExperimentKind::Convergence;
    throw std::invalid_argument("unknown experiment '" + s + "'");
}

std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::LambdaSweep: return "lambda_sweep";
        case ExperimentKind::LtSweep: return "lt_sweep";
        case ExperimentKind::TrainSizeSweep: return "trainsize_sweep";
        case ExperimentKind::Convergence: return "convergence";
    }
    return "";
}

CannyParams sweep_canny(double low, double high, double sigma) { return {std::min(low, high), high, sigma}; }

ExperimentData make_experiment_data(const ExperimentConfig& cfg) {
    if (cfg.train_pairs < 1 || cfg.test_pairs < 1) throw std::invalid_argument("experiment needs train and test pairs");
    ExperimentData d;
    d.train = synth::generate_pairs(static_cast<std::size_t>(cfg.train_pairs), synth::derive_seed(cfg.data_seed, 1), cfg.data);
    d.test = synth::generate_pairs(static_cast<std::size_t>(cfg.test_pairs), synth::derive_seed(cfg.data_seed, 2), cfg.data);
    return d;
}

std::vector<Volume> training_volumes(const std::vector<synth::PairSample>& pairs, std::size_t max_pairs) {
    const std::size_t n = max_pairs ? std::min(max_pairs, pairs.size()) : pairs.size();
    std::vector<Volume> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(pairs[i].fixed);
        out.push_back(pairs[i].moving);
    }
    return out;
}

TrialResult run_trial(const ExperimentData& data, const TrainConfig& cfg, std::size_t max_train_pairs) {
    const auto dataset = make_dataset(training_volumes(data.train, max_train_pairs), cfg.canny);
    TrialResult t;
    t.training = train_pairwise(dataset, cfg);
    t.final_sim_average = moving_average_sim(t.training.log, t.training.log.size() - 1);
    t.report = evaluate_pairs(to_eval_pairs(data.test, cfg.canny), model_registrar(t.training.model));
    return t;
}

namespace {

ExperimentRow row_from(const std::string& axis, double value, std::uint64_t seed, const TrainConfig& cfg,
                       std::size_t samples, const TrialResult& t) {
    return {axis,
            value,
            seed,
            cfg.aan_enabled ? "aan" : "no-aan",
            samples,
            t.report.mean_dice_before,
            t.report.mean_dice_after,
            t.report.mean_neg_jacobians,
            t.final_sim_average};
}

TrialResult guarded_trial(const ExperimentData& data, const TrainConfig& cfg, std::size_t pairs, const std::string& where) {
    try {
        return run_trial(data, cfg, pairs);
    } catch (const TrainingError& e) {
        throw TrainingError(where + ": " + e.what(), e.iteration());
    } catch (const std::exception& e) {
        throw std::runtime_error(where + ": " + e.what());
    }
}

std::string point(const std::string& axis, double v, std::uint64_t seed) {
    std::ostringstream s;
    s << axis << '=' << v << " seed=" << seed;
    return s.str();
}

}  // namespace

void write_experiment_csv(std::ostream& out, const std::vector<ExperimentRow>& rows) {
    out << "axis,value,seed,variant,train_samples,dice_before,dice_after,neg_jacobians,final_sim\n" << std::setprecision(17);
    for (const auto& r : rows)
        out << r.axis << ',' << r.value << ',' << r.seed << ',' << r.variant << ',' << r.train_samples << ','
            << r.dice_before << ',' << r.dice_after << ',' << r.neg_jacobians << ',' << r.final_sim << '\n';
}

std::vector<ExperimentRow> run_experiment_grid(ExperimentKind kind, const ExperimentConfig& cfg,
                                               const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const ExperimentData data = make_experiment_data(cfg);
    const std::size_t all_samples = 2 * data.train.size();
    std::vector<ExperimentRow> rows;
    std::vector<Series> plot;

    auto baseline = [&](const std::string& axis, std::uint64_t seed) {
        TrainConfig c = cfg.train;
        c.seed = seed;
        c.aan_enabled = false;
        return row_from(axis, std::numeric_limits<double>::quiet_NaN(), seed, c, all_samples,
                        guarded_trial(data, c, 0, point(axis + " baseline", 0, seed)));
    };

    switch (kind) {
        case ExperimentKind::LambdaSweep:
            for (auto seed : cfg.seeds) {
                rows.push_back(baseline("lambda", seed));
                for (double lambda : cfg.lambdas) {
                    TrainConfig c = cfg.train;
                    c.seed = seed;
                    c.aan_enabled = true;
                    c.loss.lambda_structure = lambda;
                    rows.push_back(row_from("lambda", lambda, seed, c, all_samples,
                                            guarded_trial(data, c, 0, point("lambda", lambda, seed))));
                }
            }
            break;
        case ExperimentKind::LtSweep:
            for (auto seed : cfg.seeds) {
                rows.push_back(baseline("lt", seed));
                for (double lt : cfg.low_thresholds) {
                    TrainConfig c = cfg.train;
                    c.seed = seed;
                    c.aan_enabled = true;
                    c.canny = sweep_canny(lt, cfg.train.canny.high, cfg.train.canny.sigma);
                    rows.push_back(row_from("lt", lt, seed, c, all_samples, guarded_trial(data, c, 0, point("lt", lt, seed))));
                }
            }
            break;
        case ExperimentKind::TrainSizeSweep:
            for (auto seed : cfg.seeds)
                for (int size : cfg.train_sizes)
                    for (bool aan : {false, true}) {
                        TrainConfig c = cfg.train;
                        c.seed = seed;
                        c.aan_enabled = aan;
                        // `size` counts training volumes; each synthetic pair supplies two.
                        const auto pairs = static_cast<std::size_t>(std::max(1, (size + 1) / 2));
                        const std::size_t samples = 2 * std::min(pairs, data.train.size());
                        rows.push_back(row_from("train_pairs", size, seed, c, samples,
                                                guarded_trial(data, c, pairs, point("train_size", size, seed))));
                    }
            break;
        case ExperimentKind::Convergence:
            for (auto seed : cfg.seeds)
                for (bool aan : {false, true}) {
                    TrainConfig c = cfg.train;
                    c.seed = seed;
                    c.aan_enabled = aan;
                    const TrialResult t = guarded_trial(data, c, 0, point("convergence", aan, seed));
                    Series s;
                    for (std::size_t i = 0; i < t.training.log.size(); ++i) {
                        const double ma = moving_average_sim(t.training.log, i);
                        ExperimentRow r = row_from("iteration", t.training.log[i].iteration, seed, c, all_samples, t);
                        r.final_sim = ma;
                        rows.push_back(r);
                        s.x.push_back(t.training.log[i].iteration);
                        s.y.push_back(ma);
                    }
                    plot.push_back(std::move(s));
                }
            break;
    }

    if (plot.empty()) {
        // One series per variant: metric against the swept value, averaged over seeds.
        std::map<std::string, std::map<double, std::pair<double, int>>> acc;
        for (const auto& r : rows) {
            if (std::isnan(r.value)) continue;
            auto& a = acc[r.variant][r.value];
            a.first += r.dice_after;
            ++a.second;
        }
        for (const auto& [variant, pts] : acc) {
            Series s;
            for (const auto& [x, a] : pts) {
                s.x.push_back(kind == ExperimentKind::LambdaSweep ? std::log10(x + 1e-4) : x);
                s.y.push_back(a.first / a.second);
            }
            plot.push_back(std::move(s));
        }
    }

    const std::string name = to_string(kind);
    std::ofstream csv(out_dir / (name + ".csv"));
    if (!csv) throw std::runtime_error("cannot write " + (out_dir / (name + ".csv")).string());
    write_experiment_csv(csv, rows);
    write_line_plot_pgm(out_dir / (name + ".pgm"), plot);
    return rows;
}

void write_line_plot_pgm(const std::filesystem::path& path, const std::vector<Series>& series, std::size_t width,
                         std::size_t height) {
    std::vector<std::uint8_t> img(width * height, 255);
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    const std::size_t margin = 10;
    auto px = [&](double x) {
        const double t = x1 > x0 ? (x - x0) / (x1 - x0) : 0.5;
        return static_cast<long>(margin + t * static_cast<double>(width - 2 * margin - 1));
    };
    auto py = [&](double y) {
        const double t = y1 > y0 ? (y - y0) / (y1 - y0) : 0.5;
        return static_cast<long>(height - margin - 1 - static_cast<std::size_t>(t * static_cast<double>(height - 2 * margin - 1)));
    };
    auto plot = [&](long x, long y, std::uint8_t g) {
        if (x >= 0 && y >= 0 && x < static_cast<long>(width) && y < static_cast<long>(height))
            img[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] = g;
    };
    for (std::size_t i = margin; i < width - margin; ++i) plot(static_cast<long>(i), static_cast<long>(height - margin), 128);
    for (std::size_t j = margin; j <= height - margin; ++j) plot(static_cast<long>(margin - 1), static_cast<long>(j), 128);
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto gray = static_cast<std::uint8_t>(series.size() > 1 ? 150 * k / (series.size() - 1) : 0);
        const auto& s = series[k];
        for (std::size_t i = 1; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i - 1]) || !std::isfinite(s.y[i])) continue;
            const long ax = px(s.x[i - 1]), ay = py(s.y[i - 1]), bx = px(s.x[i]), by = py(s.y[i]);
            const long steps = std::max({std::abs(bx - ax), std::abs(by - ay), 1L});
            for (long t = 0; t <= steps; ++t)
                plot(ax + (bx - ax) * t / steps, ay + (by - ay) * t / steps, gray);
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
}

}  // namespace aanreg
