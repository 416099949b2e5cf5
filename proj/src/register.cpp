#include "aanreg/register.hpp"

#include "aanreg/ops.hpp"
#include "aanreg/train.hpp"
#include "aanreg/warp.hpp"

#include <cmath>
#include <stdexcept>

namespace aanreg {

Volume appearance_map(const nn::RegistrationModel& model, const Volume& moving, const Volume& fixed,
                      const EdgeMap& moving_edges) {
    if (!model.aan_enabled) return Volume(moving.dims(), 0.0);
    return nn::aan_forward(model.aan, moving, fixed, moving_edges, model.aan_arch);
}

DlrRegistration register_dlr(const nn::RegistrationModel& model, const Volume& moving, const Volume& fixed,
                             const EdgeMap& moving_edges) {
    require_same_dims(moving.dims(), fixed.dims(), "register_dlr");
    require_same_dims(moving.dims(), moving_edges.dims(), "register_dlr edges");
    if (model.dlr.params.empty()) throw std::invalid_argument("register_dlr: model has no parameters loaded");
    DlrRegistration r;
    r.phi = appearance_map(model, moving, fixed, moving_edges);
    Volume adjusted(moving.dims());
    for (std::size_t i = 0; i < adjusted.size(); ++i) adjusted[i] = moving[i] + r.phi[i];
    r.ddf = nn::dlr_forward(model.dlr, adjusted, fixed, model.dlr_arch);
    r.warped = warp_image(moving, r.ddf);
    return r;
}

OrResult register_or(const Volume& moving, const Volume& fixed, const OrConfig& cfg) {
    require_same_dims(moving.dims(), fixed.dims(), "register_or");
    if (cfg.iterations < 0) throw std::invalid_argument("register_or: iterations must be >= 0");
    const Dims d = moving.dims();
    LossConfig loss;
    loss.sim_kind = cfg.sim_kind;
    loss.lcc_window = cfg.lcc_window;
    loss.epsilon = cfg.epsilon;

    const nn::Var m = nn::from_volume(moving);
    const nn::Var f = nn::from_volume(fixed);
    std::vector<nn::Var> u{nn::parameter(nn::feature_shape(3, d), std::vector<double>(3 * d.count(), 0.0))};
    AdamState adam;
    adam.lr = cfg.lr;

    auto objective = [&]() {
        const nn::Var warped = nn::warp_layer(m, u[0]);
        return nn::weighted_sum({{1.0, losses::similarity(f, warped, loss)}, {cfg.mu_smooth, losses::diffusion(u[0])}});
    };

    OrResult r;
    r.ddf = DisplacementField(d);
    std::vector<double> best = u[0]->value;
    for (int it = 0; it <= cfg.iterations; ++it) {
        const nn::Var obj = objective();
        const double value = obj->value[0];
        if (!std::isfinite(value)) throw TrainingError("register_or: non-finite loss", it);
        if (it == 0) {
            r.initial_loss = r.best_loss = value;
        } else if (value < r.best_loss) {
            r.best_loss = value;
            best = u[0]->value;
        }
        r.best_so_far.push_back(r.best_loss);
        if (it == cfg.iterations) break;
        u[0]->zero_grad();
        nn::backward(obj);
        adam_step(u, adam);
    }
    r.ddf = nn::to_ddf(nn::constant(nn::feature_shape(3, d), std::move(best)));
    return r;
}

}  // namespace aanreg
