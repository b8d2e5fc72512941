#ifndef EMAE_OPTIM_HPP
#define EMAE_OPTIM_HPP

#include <cstdint>
#include <vector>

#include "emae/model.hpp"
#include "emae/tensor.hpp"

namespace emae {

struct OptimConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;
    double grad_clip = 0.0;  // global L2 cap, 0 = off
};

struct ScheduleConfig {
    double base_lr = 1.5e-3;
    int warmup_epochs = 2;
    int total_epochs = 30;
};

// Linear ramp 0 -> base_lr over the warmup steps, then half-cosine decay to 0
// at total steps. Continuous at the boundary.
double lr_at(int64_t step, const ScheduleConfig& cfg, int64_t steps_per_epoch);

// Adam with decoupled weight decay. The decay multiplies parameters by
// (1 - lr * wd) before the bias-corrected adaptive step.
class AdamW {
public:
    AdamW(const Model& model, OptimConfig cfg);

    // grads[i] aligns with model.params()[i]; nullptr means an all-zero
    // gradient (parameter unused this step). Throws NumericError naming the
    // parameter on non-finite gradient values.
    void step(Model& model, const std::vector<const Values*>& grads, double lr);

    int64_t step_count() const { return step_count_; }
    const OptimConfig& config() const { return cfg_; }

    // Serialized state, aligned with model.params(). Exposed for checkpoints.
    std::vector<Values>& first_moments() { return m_; }
    std::vector<Values>& second_moments() { return v_; }
    const std::vector<Values>& first_moments() const { return m_; }
    const std::vector<Values>& second_moments() const { return v_; }
    void set_step_count(int64_t n) { step_count_ = n; }

private:
    OptimConfig cfg_;
    std::vector<Values> m_;
    std::vector<Values> v_;
    int64_t step_count_ = 0;
};

}  // namespace emae

#endif  // EMAE_OPTIM_HPP
