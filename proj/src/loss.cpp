#include "teethseg/loss.hpp"

#include <string>

#include "teethseg/ops.hpp"

namespace teethseg {

namespace {

void check_loss_args(const Tensor& y_p, const Tensor& y_t, double eps) {
    if (!same_shape(y_p, y_t))
        fail("dice_loss: shape mismatch " + shape_str(y_p.shape) + " vs " + shape_str(y_t.shape));
    if (eps <= 0.0) fail("dice_loss: eps must be > 0, got " + std::to_string(eps));
}

Tensor as_constant(const Tensor& t) {
    Tensor c = t;
    c.node = -1;
    return c;
}

}  // namespace

Tensor squared_dice_loss(Tape* tp, const Tensor& y_p, const Tensor& y_t, double eps) {
    check_loss_args(y_p, y_t, eps);
    const Tensor target = as_constant(y_t);
    double tsum = 0.0;
    for (Index i = 0; i < target.numel(); ++i) tsum += target[i] * target[i];

    Tensor inter = sum_all(tp, mul(tp, y_p, target));
    Tensor psum = sum_all(tp, mul(tp, y_p, y_p));
    Tensor num = affine(tp, inter, 2.0, eps);
    Tensor den = affine(tp, psum, 1.0, tsum + eps);
    return affine(tp, div_scalar(tp, num, den), -1.0, 1.0);
}

Tensor squared_dice_loss_eq1_verbatim(Tape* tp, const Tensor& y_p, const Tensor& y_t, double eps) {
    check_loss_args(y_p, y_t, eps);
    const Tensor target = as_constant(y_t);
    double tsum = 0.0;
    for (Index i = 0; i < target.numel(); ++i) tsum += target[i] * target[i];

    Tensor prod = mul(tp, y_p, target);
    Tensor inter_sq = sum_all(tp, mul(tp, prod, prod));
    Tensor psum = sum_all(tp, mul(tp, y_p, y_p));
    Tensor num = affine(tp, inter_sq, 2.0, eps);
    Tensor den = affine(tp, psum, 2.0, 2.0 * tsum + eps);
    return affine(tp, div_scalar(tp, num, den), -1.0, 1.0);
}

Tensor dice_loss(Tape* tp, const Tensor& y_p, const Tensor& y_t, double eps, LossVariant variant) {
    return variant == LossVariant::kEq1Verbatim ? squared_dice_loss_eq1_verbatim(tp, y_p, y_t, eps)
                                                : squared_dice_loss(tp, y_p, y_t, eps);
}

Tensor downsample_target(const Tensor& y_t, int times) {
    Tensor t = as_constant(y_t);
    for (int i = 0; i < times; ++i) t = max_pool2d(nullptr, t, 2, 2);
    return t;
}

Tensor total_loss(Tape* tp, const ModelOutputs& outputs, const Tensor& y_t, double eps, LossVariant variant) {
    Tensor total = dice_loss(tp, outputs.main, y_t, eps, variant);
    const int k = static_cast<int>(outputs.aux.size());
    if (k == 0) return total;
    Tensor aux_sum;
    for (int i = 0; i < k; ++i) {
        const Tensor target = downsample_target(y_t, i + 1);
        if (!same_shape(outputs.aux[static_cast<std::size_t>(i)], target))
            fail("total_loss: aux output " + std::to_string(i + 1) + " shape " +
                 shape_str(outputs.aux[static_cast<std::size_t>(i)].shape) +
                 " does not match downsampled target " + shape_str(target.shape));
        Tensor li = dice_loss(tp, outputs.aux[static_cast<std::size_t>(i)], target, eps, variant);
        aux_sum = (i == 0) ? li : add(tp, aux_sum, li);
    }
    return add(tp, total, affine(tp, aux_sum, 1.0 / static_cast<double>(k), 0.0));
}

}  // namespace teethseg
