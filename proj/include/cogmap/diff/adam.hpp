#pragma once

#include <cstdint>
#include <map>

#include "cogmap/diff/backward.hpp"

namespace cogmap::diff {

template <class T>
struct AdamConfig {
    T lr = T(0.0002);
    T beta1 = T(0.0);
    T beta2 = T(0.9);
    T eps = T(1e-8);
};

// Adam with bias correction. State is keyed by parameter name so it can be
// checkpointed and restored exactly.
template <class T>
class Adam {
public:
    struct Slot {
        std::vector<T> m, v;
    };

    explicit Adam(AdamConfig<T> cfg = {}) : cfg_(cfg) {}

    const AdamConfig<T>& config() const { return cfg_; }
    int64_t step_count() const { return step_; }

    // In-place update of leaf parameter values from a gradient map.
    // Parameters without a gradient entry are left untouched by a zero
    // gradient contribution (zero first moment keeps them fixed only when
    // their accumulators are zero as well, which holds for beta1 = 0).
    void step(std::vector<Tensor<T>>& params, const GradMap<T>& grads) {
        ++step_;
        const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(step_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(step_));
        for (auto& p : params) {
            Tensor<T> g = grad_of(grads, p);
            Slot& slot = slots_[p.name()];
            auto& pd = p.data();
            const auto& gd = g.data();
            require(gd.size() == pd.size(), "adam: gradient/parameter size mismatch for ",
                    p.name());
            if (slot.m.empty()) {
                slot.m.assign(pd.size(), T(0));
                slot.v.assign(pd.size(), T(0));
            }
            for (size_t i = 0; i < pd.size(); ++i) {
                const T gi = gd[i];
                if (!std::isfinite(static_cast<double>(gi)))
                    fail("adam: non-finite gradient for parameter ", p.name());
                slot.m[i] = cfg_.beta1 * slot.m[i] + (T(1) - cfg_.beta1) * gi;
                slot.v[i] = cfg_.beta2 * slot.v[i] + (T(1) - cfg_.beta2) * gi * gi;
                const T mhat = slot.m[i] / bc1;
                const T vhat = slot.v[i] / bc2;
                pd[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }
    void set_step_count(int64_t s) { step_ = s; }

private:
    AdamConfig<T> cfg_;
    std::map<std::string, Slot> slots_;
    int64_t step_ = 0;
};

}  // namespace cogmap::diff
