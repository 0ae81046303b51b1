#pragma once

#include <limits>
#include <map>
#include <string>

#include "teethseg/blocks.hpp"

namespace teethseg {

// Bias-corrected Adam over the store's trainable parameters, applied in fixed
// (lexicographic) name order. Moment buffers appear lazily as zeros.
struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t step = 0;
    std::map<std::string, Tensor> m, v;
};

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state, double lr);

// Reduce-on-plateau: a strict decrease of the best value by at least
// `min_delta` resets the stall counter; when it reaches `patience` the rate is
// multiplied by `factor` and floored at `floor_lr`.
struct PlateauSchedule {
    double lr = 1e-4;
    double best = std::numeric_limits<double>::infinity();
    int stall = 0;
    double factor = 0.9;
    int patience = 5;
    double floor_lr = 1e-7;
    double min_delta = 1e-9;

    void observe(double val_loss);
};

}  // namespace teethseg
