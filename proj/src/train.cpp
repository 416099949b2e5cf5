#include "aanreg/train.hpp"

#include "aanreg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>

namespace aanreg {

void adam_step(std::vector<nn::Var>& params, AdamState& s) {
    if (s.m.size() != params.size()) {
        s.m.assign(params.size(), {});
        s.v.assign(params.size(), {});
    }
    ++s.step;
    const double t = static_cast<double>(s.step);
    const double c1 = 1.0 - std::pow(s.beta1, t);
    const double c2 = 1.0 - std::pow(s.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        nn::Node& p = *params[k];
        auto& m = s.m[k];
        auto& v = s.v[k];
        if (m.size() != p.value.size()) {
            m.assign(p.value.size(), 0.0);
            v.assign(p.value.size(), 0.0);
        }
        if (p.grad.size() != p.value.size()) p.grad.assign(p.value.size(), 0.0);
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = s.beta1 * m[i] + (1 - s.beta1) * g;
            v[i] = s.beta2 * v[i] + (1 - s.beta2) * g * g;
            p.value[i] -= s.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.eps);
        }
    }
}

void TrainConfig::validate() const {
    if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (atlas_iterations < 0) throw std::invalid_argument("atlas_iterations must be >= 0");
    if (!(lr > 0) || !(atlas_lr > 0)) throw std::invalid_argument("learning rates must be positive");
    if (aan_arch.in_channels != 3 || aan_arch.out_channels != 1)
        throw std::invalid_argument("AAN arch must map 3 channels to 1");
    if (dlr_arch.in_channels != 2 || dlr_arch.out_channels != 3)
        throw std::invalid_argument("DLR arch must map 2 channels to 3");
    if (canny.low < 0 || canny.low > canny.high) throw std::invalid_argument("canny thresholds must satisfy 0 <= low <= high");
    if (canny.sigma < 0) throw std::invalid_argument("canny sigma must be non-negative");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
    loss.validate();
}

TrainConfig TrainConfig::full_scale() {
    TrainConfig c;
    c.iterations = 100000;
    c.atlas_iterations = 10000;
    return c;
}

std::vector<TrainingSample> make_dataset(const std::vector<Volume>& volumes, const CannyParams& canny) {
    std::vector<TrainingSample> out;
    out.reserve(volumes.size());
    for (const Volume& v : volumes) out.push_back({v, canny_3d(v, canny)});
    return out;
}

void write_log_csv(std::ostream& out, const std::vector<LogRow>& log) {
    out << "iteration,L_sim,L_structure,R_smooth,R_antifold,total\n";
    out << std::setprecision(17);
    for (const LogRow& r : log)
        out << r.iteration << ',' << r.sim << ',' << r.structure << ',' << r.smooth << ',' << r.antifold << ',' << r.total
            << '\n';
}

double moving_average_sim(const std::vector<LogRow>& log, std::size_t index, std::size_t window) {
    if (log.empty()) throw std::invalid_argument("empty training log");
    index = std::min(index, log.size() - 1);
    const std::size_t first = index + 1 >= window ? index + 1 - window : 0;
    double acc = 0;
    for (std::size_t i = first; i <= index; ++i) acc += log[i].sim;
    return acc / static_cast<double>(index + 1 - first);
}

TrainingError::TrainingError(const std::string& what, int iteration)
    : std::runtime_error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}

std::vector<nn::Var> trainable(nn::RegistrationModel& model) {
    std::vector<nn::Var> out;
    if (model.aan_enabled)
        for (auto& p : model.aan.params) out.push_back(p.var);
    for (auto& p : model.dlr.params) out.push_back(p.var);
    return out;
}

LogRow train_step(nn::RegistrationModel& model, AdamState& adam, const TrainingSample& moving, const Volume& fixed,
                  const LossConfig& loss, int iteration) {
    require_same_dims(moving.image.dims(), fixed.dims(), "training pair");
    const nn::Var m = nn::from_volume(moving.image);
    const nn::Var f = nn::from_volume(fixed);
    const nn::Var phi = model.aan_enabled
                            ? nn::aan_graph(model.aan, model.aan_arch, m, f, moving.edges)
                            : nn::constant(m->shape, std::vector<double>(m->value.size(), 0.0));
    const nn::Var ddf = nn::dlr_graph(model.dlr, model.dlr_arch, nn::add(m, phi), f);
    const losses::Breakdown b = losses::total(f, m, phi, ddf, moving.edges, loss);
    if (!std::isfinite(b.total_value)) throw TrainingError("non-finite loss", iteration);

    std::vector<nn::Var> params = trainable(model);
    for (auto& p : params) p->zero_grad();
    nn::backward(b.total);
    adam_step(params, adam);
    return {iteration, b.sim, b.structure, b.smooth, b.antifold, b.total_value};
}

namespace {

TrainResult run_loop(nn::RegistrationModel model, const std::vector<TrainingSample>& dataset, const Volume* atlas,
                     int iterations, double lr, const TrainConfig& cfg, std::uint64_t stream, const IterationHook& hook) {
    if (dataset.empty() || (!atlas && dataset.size() < 2)) throw std::invalid_argument("training needs at least 2 volumes");
    const Dims d = dataset.front().image.dims();
    for (const auto& s : dataset) {
        require_same_dims(d, s.image.dims(), "training volumes");
        require_same_dims(d, s.edges.dims(), "training edge maps");
    }
    if (atlas) require_same_dims(d, atlas->dims(), "atlas");
    model.aan_arch.validate(d);
    model.dlr_arch.validate(d);

    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + stream);
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    AdamState adam;
    adam.lr = lr;
    TrainResult result{std::move(model), {}};
    result.log.reserve(static_cast<std::size_t>(iterations));
    for (int it = 1; it <= iterations; ++it) {
        const std::size_t mi = pick(rng);
        const std::size_t fi = pick(rng);
        const Volume& fixed = atlas ? *atlas : dataset[fi].image;
        result.log.push_back(train_step(result.model, adam, dataset[mi], fixed, cfg.loss, it));
        if (hook) hook(it, result.model);
    }
    return result;
}

}  // namespace

TrainResult train_pairwise(const std::vector<TrainingSample>& dataset, const TrainConfig& cfg, const IterationHook& hook) {
    cfg.validate();
    auto model = nn::RegistrationModel::initialize(cfg.aan_arch, cfg.dlr_arch, cfg.aan_enabled, cfg.seed);
    return run_loop(std::move(model), dataset, nullptr, cfg.iterations, cfg.lr, cfg, 0, hook);
}

TrainResult finetune_atlas(const nn::RegistrationModel& pretrained, const Volume& atlas,
                           const std::vector<TrainingSample>& dataset, const TrainConfig& cfg) {
    cfg.validate();
    nn::RegistrationModel model = pretrained;
    model.aan = pretrained.aan.clone();
    model.dlr = pretrained.dlr.clone();
    if (cfg.atlas_iterations == 0) return {std::move(model), {}};
    return run_loop(std::move(model), dataset, &atlas, cfg.atlas_iterations, cfg.atlas_lr, cfg, 1, {});
}

}  // namespace aanreg
