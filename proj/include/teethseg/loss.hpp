#pragma once

#include "teethseg/model.hpp"
#include "teethseg/tensor.hpp"

namespace teethseg {

enum class LossVariant {
    kSquaredDice,   // squared-denominator soft Dice
    kEq1Verbatim,   // literal printed form (per-element squared intersection)
};

// Squared Dice loss over all pixels and channels:
//   L = 1 - (2*sum(y_t*y_p) + eps) / (sum(y_t^2) + sum(y_p^2) + eps)
// y_t is treated as a constant; the result lies in [0,1) and is exactly 0 iff
// y_p == y_t.
Tensor squared_dice_loss(Tape* tp, const Tensor& y_p, const Tensor& y_t, double eps = 1e-6);

// Verbatim alternative: L = 1 - (2*sum((y_t*y_p)^2)+eps) / (2*sum(y_t^2+y_p^2)+eps).
Tensor squared_dice_loss_eq1_verbatim(Tape* tp, const Tensor& y_p, const Tensor& y_t, double eps = 1e-6);

Tensor dice_loss(Tape* tp, const Tensor& y_p, const Tensor& y_t, double eps, LossVariant variant);

// Per-class occupancy downsampling of a one-hot target by `times` rounds of
// 2x2 max-pooling (keeps thin structures present at coarse scales).
Tensor downsample_target(const Tensor& y_t, int times);

// L_main + (1/K) * sum of the K auxiliary losses; aux targets are derived from
// y_t by per-class max-pool downsampling to each aux scale.
Tensor total_loss(Tape* tp, const ModelOutputs& outputs, const Tensor& y_t, double eps = 1e-6,
                  LossVariant variant = LossVariant::kSquaredDice);

}  // namespace teethseg
