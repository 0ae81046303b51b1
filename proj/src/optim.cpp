#include "teethseg/optim.hpp"

#include <algorithm>
#include <cmath>

namespace teethseg {

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state, double lr) {
    if (lr <= 0.0) fail("adam_step: lr must be > 0");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (auto& [name, entry] : params.entries()) {
        if (!entry.trainable) continue;
        const auto git = grads.find(name);
        if (git == grads.end()) fail("adam_step: missing gradient for '" + name + "'");
        const Tensor& g = git->second;
        Tensor& p = entry.value;
        if (!same_shape(g, p))
            fail("adam_step: gradient shape " + shape_str(g.shape) + " != parameter shape " +
                 shape_str(p.shape) + " for '" + name + "'");
        Tensor& m = state.m.try_emplace(name, Tensor(p.shape)).first->second;
        Tensor& v = state.v.try_emplace(name, Tensor(p.shape)).first->second;
        for (Index i = 0; i < p.numel(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

void PlateauSchedule::observe(double val_loss) {
    if (val_loss < best - min_delta) {
        best = val_loss;
        stall = 0;
        return;
    }
    if (++stall >= patience) {
        lr = std::max(lr * factor, floor_lr);
        stall = 0;
    }
}

}  // namespace teethseg
