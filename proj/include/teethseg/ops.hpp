#pragma once

#include <functional>

#include "teethseg/tensor.hpp"

namespace teethseg {

// Differentiable primitives. Every op validates its inputs, computes the
// forward value, and registers a backward rule when `tp` is non-null and at
// least one input is tracked. Passing tp == nullptr gives a plain forward.

// elementwise / structural
Tensor add(Tape* tp, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tp, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tp, const Tensor& x, double k);
Tensor affine(Tape* tp, const Tensor& x, double k, double c);  // k*x + c
Tensor relu(Tape* tp, const Tensor& x);
Tensor sigmoid(Tape* tp, const Tensor& x);
Tensor softmax(Tape* tp, const Tensor& x, int axis);
Tensor dropout(Tape* tp, const Tensor& x, double p, Rng& rng, bool train);
Tensor reshape(Tape* tp, const Tensor& x, Shape out_shape);
Tensor permute(Tape* tp, const Tensor& x, const std::vector<int>& perm);
Tensor concat_channels(Tape* tp, const Tensor& a, const Tensor& b);  // NCHW, axis 1
Tensor sum_all(Tape* tp, const Tensor& x);                           // -> shape {1}
Tensor div_scalar(Tape* tp, const Tensor& num, const Tensor& den);   // {1} / {1}

// dense / batched linear algebra
Tensor linear(Tape* tp, const Tensor& x, const Tensor& w, const Tensor& b);  // (...,Ein)x(Ein,Eout)+(Eout)
Tensor matmul(Tape* tp, const Tensor& a, const Tensor& b);                   // (B,M,K)x(B,K,N)

// convolution / pooling
Tensor conv2d(Tape* tp, const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor conv_transpose2d(Tape* tp, const Tensor& x, const Tensor& w, const Tensor& b, int stride);
Tensor max_pool2d(Tape* tp, const Tensor& x, int k = 2, int stride = 2);
Tensor avg_pool2d(Tape* tp, const Tensor& x, int k, int stride);

// normalization (batch_norm mutates the running buffers in train mode)
Tensor batch_norm(Tape* tp, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, double eps, bool train,
                  double momentum = 0.1);
Tensor layer_norm(Tape* tp, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// attention and window bookkeeping
Tensor attention(Tape* tp, const Tensor& q, const Tensor& k, const Tensor& v, int heads);
Tensor window_partition(Tape* tp, const Tensor& x, int win, int shift);
Tensor window_merge(Tape* tp, const Tensor& t, const Shape& nchw, int win, int shift);

// broadcast gating / squeeze helpers
Tensor mul_spatial_gate(Tape* tp, const Tensor& x, const Tensor& g);  // x:(N,C,H,W) g:(N,1,H,W)
Tensor mul_channel_gate(Tape* tp, const Tensor& x, const Tensor& g);  // x:(N,C,H,W) g:(N,C)
Tensor global_avg_pool(Tape* tp, const Tensor& x);                    // (N,C,H,W) -> (N,C)

// Max relative error between the tape gradient of f at x and central finite
// differences: max_i |analytic - cd| / max(|analytic|, |cd|, 1e-8).
double grad_check(const std::function<Tensor(Tape&, Tensor&)>& f, const Tensor& x, double h = 1e-5);

namespace debug {
// Test hook: deliberately negates the relu backward rule so gradient-audit
// tooling can prove it detects a broken derivative.
extern bool flip_relu_backward;
}  // namespace debug

}  // namespace teethseg
