#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fisel/matrix.hpp"

namespace fisel {

// Adam with bias-corrected moments. Weight decay is coupled L2: added to the
// gradient before the moment updates.
struct AdamState {
    Matrix m;
    Matrix v;
    std::int64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    AdamState() = default;
    AdamState(std::size_t rows, std::size_t cols, double lr_, double weight_decay_ = 0.0)
        : m(rows, cols), v(rows, cols), lr(lr_), weight_decay(weight_decay_) {}
};

inline void adam_step(GradSlot& param, AdamState& state) {
    param.value.require_same_shape(state.m, "adam_step");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < param.value.size(); ++i) {
        const double g = param.grad[i] + state.weight_decay * param.value[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        param.value[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

// One optimizer per slot, stepped together. Slots are borrowed, not owned.
class AdamGroup {
public:
    AdamGroup() = default;

    void add(GradSlot* slot, double lr, double weight_decay) {
        slots_.push_back(slot);
        states_.emplace_back(slot->value.rows(), slot->value.cols(), lr, weight_decay);
    }

    void step() {
        for (std::size_t i = 0; i < slots_.size(); ++i) adam_step(*slots_[i], states_[i]);
    }

    void zero_grad() {
        for (GradSlot* s : slots_) s->zero_grad();
    }

    const std::vector<GradSlot*>& slots() const { return slots_; }
    std::vector<AdamState>& states() { return states_; }

private:
    std::vector<GradSlot*> slots_;
    std::vector<AdamState> states_;
};

}  // namespace fisel
