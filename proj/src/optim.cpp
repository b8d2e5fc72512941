#include "emae/optim.hpp"

#include <cmath>

#include "emae/errors.hpp"

namespace emae {

double lr_at(int64_t step, const ScheduleConfig& cfg, int64_t steps_per_epoch) {
    if (step < 0) throw ConfigError("negative step in lr schedule");
    if (cfg.base_lr <= 0) throw ConfigError("base_lr must be positive");
    if (cfg.warmup_epochs >= cfg.total_epochs) {
        throw ConfigError("warmup epochs must be fewer than total epochs");
    }
    const double warmup = static_cast<double>(cfg.warmup_epochs) * steps_per_epoch;
    const double total = static_cast<double>(cfg.total_epochs) * steps_per_epoch;
    if (step < warmup) {
        return cfg.base_lr * static_cast<double>(step) / warmup;
    }
    const double progress = (static_cast<double>(step) - warmup) / (total - warmup);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

AdamW::AdamW(const Model& model, OptimConfig cfg) : cfg_(cfg) {
    m_.reserve(model.params().size());
    v_.reserve(model.params().size());
    for (const NamedParam& prm : model.params()) {
        m_.emplace_back(prm.data->size(), 0.0);
        v_.emplace_back(prm.data->size(), 0.0);
    }
}

void AdamW::step(Model& model, const std::vector<const Values*>& grads, double lr) {
    auto& params = model.params();
    if (grads.size() != params.size()) {
        throw ConfigError("gradient list has " + std::to_string(grads.size()) +
                          " entries for " + std::to_string(params.size()) + " parameters");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (!grads[i]) continue;
        for (double gv : *grads[i]) {
            if (!std::isfinite(gv)) {
                throw NumericError("non-finite gradient", params[i].name);
            }
        }
    }

    double clip_scale = 1.0;
    if (cfg_.grad_clip > 0) {
        double sq = 0;
        for (const Values* gp : grads) {
            if (!gp) continue;
            for (double gv : *gp) sq += gv * gv;
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
    }

    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    const double decay = 1.0 - lr * cfg_.weight_decay;

    for (size_t i = 0; i < params.size(); ++i) {
        Values& p = *model.params()[i].data;
        Values& m = m_[i];
        Values& v = v_[i];
        for (size_t q = 0; q < p.size(); ++q) {
            const double gv = (grads[i] ? (*grads[i])[q] : 0.0) * clip_scale;
            p[q] *= decay;
            m[q] = cfg_.beta1 * m[q] + (1.0 - cfg_.beta1) * gv;
            v[q] = cfg_.beta2 * v[q] + (1.0 - cfg_.beta2) * gv * gv;
            const double mhat = m[q] / bc1;
            const double vhat = v[q] / bc2;
            p[q] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace emae
