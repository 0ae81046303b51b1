#include "teethseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "teethseg/kernels.hpp"

namespace teethseg {

namespace debug {
bool flip_relu_backward = false;
}

namespace {

bool tracked(Tape* tp, std::initializer_list<const Tensor*> ins) {
    if (!tp) return false;
    for (const Tensor* t : ins)
        if (t->node >= 0) return true;
    return false;
}

void acc_into(Tape& t, int node, const std::vector<double>& g) {
    if (node < 0) return;
    auto& buf = t.grad_buffer(node);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b))
        fail(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

void check_4d(const char* op, const Tensor& x, const char* what) {
    if (x.ndim() != 4) fail(std::string(op) + ": " + what + " must be 4-d, got " + shape_str(x.shape));
}

}  // namespace

Tensor add(Tape* tp, const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor y(a.shape);
    for (Index i = 0; i < y.numel(); ++i) y[i] = a[i] + b[i];
    if (tracked(tp, {&a, &b})) {
        const int an = a.node, bn = b.node;
        y.node = tp->record("add", {an, bn}, y.shape, [an, bn](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            acc_into(t, an, g);
            acc_into(t, bn, g);
        });
    }
    return y;
}

Tensor mul(Tape* tp, const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor y(a.shape);
    for (Index i = 0; i < y.numel(); ++i) y[i] = a[i] * b[i];
    if (tracked(tp, {&a, &b})) {
        const int an = a.node, bn = b.node;
        const std::vector<double> av = a.data, bv = b.data;
        y.node = tp->record("mul", {an, bn}, y.shape, [an, bn, av, bv](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            if (an >= 0) {
                auto& ga = t.grad_buffer(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (bn >= 0) {
                auto& gb = t.grad_buffer(bn);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        });
    }
    return y;
}

Tensor scale(Tape* tp, const Tensor& x, double k) { return affine(tp, x, k, 0.0); }

Tensor affine(Tape* tp, const Tensor& x, double k, double c) {
    Tensor y(x.shape);
    for (Index i = 0; i < y.numel(); ++i) y[i] = k * x[i] + c;
    if (tracked(tp, {&x})) {
        const int xn = x.node;
        y.node = tp->record("affine", {xn}, y.shape, [xn, k](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            auto& gx = t.grad_buffer(xn);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += k * g[i];
        });
    }
    return y;
}

Tensor relu(Tape* tp, const Tensor& x) {
    Tensor y(x.shape);
    for (Index i = 0; i < y.numel(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    if (tracked(tp, {&x})) {
        const int xn = x.node;
        const std::vector<double> xv = x.data;
        y.node = tp->record("relu", {xn}, y.shape, [xn, xv](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            auto& gx = t.grad_buffer(xn);
            const double sign = debug::flip_relu_backward ? -1.0 : 1.0;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xv[i] > 0.0) gx[i] += sign * g[i];
        });
    }
    return y;
}

Tensor sigmoid(Tape* tp, const Tensor& x) {
    Tensor y(x.shape);
    for (Index i = 0; i < y.numel(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
    if (tracked(tp, {&x})) {
        const int xn = x.node;
        const std::vector<double> yv = y.data;
        y.node = tp->record("sigmoid", {xn}, y.shape, [xn, yv](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            auto& gx = t.grad_buffer(xn);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
        });
    }
    return y;
}

Tensor softmax(Tape* tp, const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.ndim()) fail("softmax: axis out of range for shape " + shape_str(x.shape));
    const Index n = x.dim(axis);
    Index outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);

    Tensor y(x.shape);
    for (Index o = 0; o < outer; ++o) {
        for (Index in = 0; in < inner; ++in) {
            const Index base = o * n * inner + in;
            double mx = x[base];
            for (Index i = 1; i < n; ++i) mx = std::max(mx, x[base + i * inner]);
            double sum = 0.0;
            for (Index i = 0; i < n; ++i) {
                const double e = std::exp(x[base + i * inner] - mx);
                y[base + i * inner] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (Index i = 0; i < n; ++i) y[base + i * inner] *= inv;
        }
    }
    if (tracked(tp, {&x})) {
        const int xn = x.node;
        const std::vector<double> yv = y.data;
        y.node = tp->record("softmax", {xn}, y.shape, [xn, yv, outer, n, inner](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            auto& gx = t.grad_buffer(xn);
            for (Index o = 0; o < outer; ++o) {
                for (Index in = 0; in < inner; ++in) {
                    const Index base = o * n * inner + in;
                    double dot = 0.0;
                    for (Index i = 0; i < n; ++i) {
                        const Index p = base + i * inner;
                        dot += g[static_cast<std::size_t>(p)] * yv[static_cast<std::size_t>(p)];
                    }
                    for (Index i = 0; i < n; ++i) {
                        const Index p = base + i * inner;
                        gx[static_cast<std::size_t>(p)] +=
                            yv[static_cast<std::size_t>(p)] * (g[static_cast<std::size_t>(p)] - dot);
                    }
                }
            }
        });
    }
    return y;
}

Tensor dropout(Tape* tp, const Tensor& x, double p, Rng& rng, bool train) {
    if (p < 0.0 || p >= 1.0) fail("dropout: p must lie in [0,1), got " + std::to_string(p));
    if (!train || p == 0.0) {
        Tensor y = x;  // identity; keeps the producing node
        return y;
    }
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(static_cast<std::size_t>(x.numel()));
    for (auto& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0;  // drawn serially from the run RNG
    Tensor y(x.shape);
    for (Index i = 0; i < y.numel(); ++i) y[i] = x[i] * mask[static_cast<std::size_t>(i)];
    if (tracked(tp, {&x})) {
        const int xn = x.node;
        y.node = tp->record("dropout", {xn}, y.shape, [xn, mask](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            auto& gx = t.grad_buffer(xn);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
        });
    }
    return y;
}

Tensor reshape(Tape* tp, const Tensor& x, Shape out_shape) {
    if (shape_numel(out_shape) != x.numel())
        fail("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(out_shape));
    Tensor y(std::move(out_shape), x.data);
    if (tracked(tp, {&x})) {
        const int xn = x.node;
        y.node = tp->record("reshape", {xn}, y.shape,
                            [xn](Tape& t, int self) { acc_into(t, xn, *t.grad_if_set(self)); });
    }
    return y;
}

namespace {
// src flat index for every dst flat index of a permute
std::vector<Index> permute_map(const Shape& in_shape, const std::vector<int>& perm) {
    const int nd = static_cast<int>(in_shape.size());
    Shape out_shape(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i) out_shape[static_cast<std::size_t>(i)] = in_shape[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    std::vector<Index> in_strides(static_cast<std::size_t>(nd), 1);
    for (int i = nd - 2; i >= 0; --i)
        in_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(i + 1)] * in_shape[static_cast<std::size_t>(i + 1)];
    const Index total = shape_numel(out_shape);
    std::vector<Index> map(static_cast<std::size_t>(total));
    std::vector<Index> idx(static_cast<std::size_t>(nd), 0);
    for (Index d = 0; d < total; ++d) {
        Index src = 0;
        for (int i = 0; i < nd; ++i)
            src += idx[static_cast<std::size_t>(i)] * in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        map[static_cast<std::size_t>(d)] = src;
        for (int i = nd - 1; i >= 0; --i) {
            if (++idx[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
            idx[static_cast<std::size_t>(i)] = 0;
        }
    }
    return map;
}
}  // namespace

Tensor permute(Tape* tp, const Tensor& x, const std::vector<int>& perm) {
    const int nd = x.ndim();
    if (static_cast<int>(perm.size()) != nd) fail("permute: perm rank != tensor rank");
    std::vector<bool> seen(static_cast<std::size_t>(nd), false);
    for (int p : perm) {
        if (p < 0 || p >= nd || seen[static_cast<std::size_t>(p)]) fail("permute: invalid permutation");
        seen[static_cast<std::size_t>(p)] = true;
    }
    Shape out_shape(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i) out_shape[static_cast<std::size_t>(i)] = x.dim(perm[static_cast<std::size_t>(i)]);
    const auto map = permute_map(x.shape, perm);
    Tensor y(out_shape);
    for (Index d = 0; d < y.numel(); ++d) y[d] = x[map[static_cast<std::size_t>(d)]];
    if (tracked(tp, {&x})) {
        const int xn = x.node;
        y.node = tp->record("permute", {xn}, y.shape, [xn, map](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            auto& gx = t.grad_buffer(xn);
            for (std::size_t d = 0; d < g.size(); ++d) gx[static_cast<std::size_t>(map[d])] += g[d];
        });
    }
    return y;
}

Tensor concat_channels(Tape* tp, const Tensor& a, const Tensor& b) {
    check_4d("concat_channels", a, "lhs");
    check_4d("concat_channels", b, "rhs");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        fail("concat_channels: incompatible shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const Index n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    Tensor y({n, ca + cb, h, w});
    const Index hw = h * w;
    for (Index i = 0; i < n; ++i) {
        std::memcpy(y.data.data() + i * (ca + cb) * hw, a.data.data() + i * ca * hw,
                    static_cast<std::size_t>(ca * hw) * sizeof(double));
        std::memcpy(y.data.data() + (i * (ca + cb) + ca) * hw, b.data.data() + i * cb * hw,
                    static_cast<std::size_t>(cb * hw) * sizeof(double));
    }
    if (tracked(tp, {&a, &b})) {
        const int an = a.node, bn = b.node;
        y.node = tp->record("concat_channels", {an, bn}, y.shape, [an, bn, n, ca, cb, hw](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            if (an >= 0) {
                auto& ga = t.grad_buffer(an);
                for (Index i = 0; i < n; ++i)
                    for (Index p = 0; p < ca * hw; ++p)
                        ga[static_cast<std::size_t>(i * ca * hw + p)] += g[static_cast<std::size_t>(i * (ca + cb) * hw + p)];
            }
            if (bn >= 0) {
                auto& gb = t.grad_buffer(bn);
                for (Index i = 0; i < n; ++i)
                    for (Index p = 0; p < cb * hw; ++p)
                        gb[static_cast<std::size_t>(i * cb * hw + p)] += g[static_cast<std::size_t>((i * (ca + cb) + ca) * hw + p)];
            }
        });
    }
    return y;
}

Tensor sum_all(Tape* tp, const Tensor& x) {
    double acc = 0.0;
    for (Index i = 0; i < x.numel(); ++i) acc += x[i];
    Tensor y({1}, std::vector<double>{acc});
    if (tracked(tp, {&x})) {
        const int xn = x.node;
        const Index nx = x.numel();
        y.node = tp->record("sum_all", {xn}, y.shape, [xn, nx](Tape& t, int self) {
            const double g = (*t.grad_if_set(self))[0];
            auto& gx = t.grad_buffer(xn);
            for (Index i = 0; i < nx; ++i) gx[static_cast<std::size_t>(i)] += g;
        });
    }
    return y;
}

Tensor div_scalar(Tape* tp, const Tensor& num, const Tensor& den) {
    if (num.numel() != 1 || den.numel() != 1) fail("div_scalar: both operands must be scalars");
    const double a = num[0], b = den[0];
    Tensor y({1}, std::vector<double>{a / b});
    if (tracked(tp, {&num, &den})) {
        const int an = num.node, bn = den.node;
        y.node = tp->record("div_scalar", {an, bn}, y.shape, [an, bn, a, b](Tape& t, int self) {
            const double g = (*t.grad_if_set(self))[0];
            if (an >= 0) t.grad_buffer(an)[0] += g / b;
            if (bn >= 0) t.grad_buffer(bn)[0] += -g * a / (b * b);
        });
    }
    return y;
}

Tensor linear(Tape* tp, const Tensor& x, const Tensor& w, const Tensor& b) {
    if (w.ndim() != 2) fail("linear: weight must be 2-d, got " + shape_str(w.shape));
    const Index ein = w.dim(0), eout = w.dim(1);
    if (x.ndim() < 1 || x.dim(x.ndim() - 1) != ein)
        fail("linear: input " + shape_str(x.shape) + " incompatible with weight " + shape_str(w.shape));
    if (b.numel() != eout) fail("linear: bias " + shape_str(b.shape) + " must have " + std::to_string(eout) + " entries");
    const Index rows = x.numel() / ein;
    Shape out_shape = x.shape;
    out_shape.back() = eout;
    Tensor y(out_shape);
    kernels::matmul(x.data.data(), w.data.data(), y.data.data(), 1, rows, ein, eout);
    for (Index r = 0; r < rows; ++r)
        for (Index e = 0; e < eout; ++e) y[r * eout + e] += b[e];
    if (tracked(tp, {&x, &w, &b})) {
        const int xn = x.node, wn = w.node, bn = b.node;
        const std::vector<double> xv = x.data, wv = w.data;
        y.node = tp->record("linear", {xn, wn, bn}, y.shape,
                            [xn, wn, bn, xv, wv, rows, ein, eout](Tape& t, int self) {
                                const auto& g = *t.grad_if_set(self);
                                if (xn >= 0) {
                                    std::vector<double> gx(static_cast<std::size_t>(rows * ein));
                                    kernels::matmul_backward_a(g.data(), wv.data(), gx.data(), 1, rows, ein, eout);
                                    acc_into(t, xn, gx);
                                }
                                if (wn >= 0) {
                                    std::vector<double> gw(static_cast<std::size_t>(ein * eout));
                                    kernels::matmul_backward_b(g.data(), xv.data(), gw.data(), 1, rows, ein, eout);
                                    acc_into(t, wn, gw);
                                }
                                if (bn >= 0) {
                                    auto& gb = t.grad_buffer(bn);
                                    for (Index r = 0; r < rows; ++r)
                                        for (Index e = 0; e < eout; ++e)
                                            gb[static_cast<std::size_t>(e)] += g[static_cast<std::size_t>(r * eout + e)];
                                }
                            });
    }
    return y;
}

Tensor matmul(Tape* tp, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        fail("matmul: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const Index bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor y({bs, m, n});
    kernels::matmul(a.data.data(), b.data.data(), y.data.data(), bs, m, k, n);
    if (tracked(tp, {&a, &b})) {
        const int an = a.node, bn = b.node;
        const std::vector<double> av = a.data, bv = b.data;
        y.node = tp->record("matmul", {an, bn}, y.shape, [an, bn, av, bv, bs, m, k, n](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            if (an >= 0) {
                std::vector<double> ga(av.size());
                kernels::matmul_backward_a(g.data(), bv.data(), ga.data(), bs, m, k, n);
                acc_into(t, an, ga);
            }
            if (bn >= 0) {
                std::vector<double> gb(bv.size());
                kernels::matmul_backward_b(g.data(), av.data(), gb.data(), bs, m, k, n);
                acc_into(t, bn, gb);
            }
        });
    }
    return y;
}

Tensor conv2d(Tape* tp, const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    check_4d("conv2d", x, "input");
    check_4d("conv2d", w, "weight");
    if (w.dim(2) != w.dim(3)) fail("conv2d: kernel must be square, got " + shape_str(w.shape));
    if (w.dim(2) % 2 == 0) fail("conv2d: kernel extent must be odd, got " + shape_str(w.shape));
    if (x.dim(1) != w.dim(1))
        fail("conv2d: input channels " + std::to_string(x.dim(1)) + " != kernel input channels " +
             std::to_string(w.dim(1)) + " (x " + shape_str(x.shape) + ", w " + shape_str(w.shape) + ")");
    if (b.numel() != w.dim(0)) fail("conv2d: bias " + shape_str(b.shape) + " must match output channels " + std::to_string(w.dim(0)));
    if (stride < 1) fail("conv2d: stride must be >= 1");
    if (pad < 0) fail("conv2d: pad must be >= 0");

    kernels::Conv2dDims d;
    d.n = x.dim(0); d.ci = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
    d.co = w.dim(0); d.k = w.dim(2); d.stride = stride; d.pad = pad;
    const Index eh = d.h + 2 * d.pad - d.k, ew = d.w + 2 * d.pad - d.k;
    if (eh < 0 || ew < 0 || eh % d.stride || ew % d.stride)
        fail("conv2d: non-integral output extent for x " + shape_str(x.shape) + ", k " +
             std::to_string(d.k) + ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad));
    d.oh = eh / d.stride + 1;
    d.ow = ew / d.stride + 1;

    Tensor y({d.n, d.co, d.oh, d.ow});
    kernels::conv2d_forward(x.data.data(), w.data.data(), b.data.data(), y.data.data(), d);
    if (tracked(tp, {&x, &w, &b})) {
        const int xn = x.node, wn = w.node, bn = b.node;
        const std::vector<double> xv = x.data, wv = w.data;
        y.node = tp->record("conv2d", {xn, wn, bn}, y.shape, [xn, wn, bn, xv, wv, d](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            if (xn >= 0) {
                std::vector<double> gx(xv.size());
                kernels::conv2d_backward_x(g.data(), wv.data(), gx.data(), d);
                acc_into(t, xn, gx);
            }
            if (wn >= 0) {
                std::vector<double> gw(wv.size());
                kernels::conv2d_backward_w(g.data(), xv.data(), gw.data(), d);
                acc_into(t, wn, gw);
            }
            if (bn >= 0) {
                std::vector<double> gb(static_cast<std::size_t>(d.co));
                kernels::conv2d_backward_b(g.data(), gb.data(), d);
                acc_into(t, bn, gb);
            }
        });
    }
    return y;
}

Tensor conv_transpose2d(Tape* tp, const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    check_4d("conv_transpose2d", x, "input");
    check_4d("conv_transpose2d", w, "weight");
    if (stride != 2 || w.dim(2) != 2 || w.dim(3) != 2)
        fail("conv_transpose2d: only stride 2 with a 2x2 kernel is supported, got stride " +
             std::to_string(stride) + ", w " + shape_str(w.shape));
    if (x.dim(1) != w.dim(0))
        fail("conv_transpose2d: input channels " + std::to_string(x.dim(1)) + " != kernel input channels " +
             std::to_string(w.dim(0)) + " (x " + shape_str(x.shape) + ", w " + shape_str(w.shape) + ")");
    const Index n = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3), co = w.dim(1);
    if (b.numel() != co) fail("conv_transpose2d: bias " + shape_str(b.shape) + " must match output channels " + std::to_string(co));

    Tensor y({n, co, 2 * h, 2 * ww});
    kernels::convt2x2_forward(x.data.data(), w.data.data(), b.data.data(), y.data.data(), n, ci, h, ww, co);
    if (tracked(tp, {&x, &w, &b})) {
        const int xn = x.node, wn = w.node, bn = b.node;
        const std::vector<double> xv = x.data, wv = w.data;
        y.node = tp->record("conv_transpose2d", {xn, wn, bn}, y.shape,
                            [xn, wn, bn, xv, wv, n, ci, h, ww, co](Tape& t, int self) {
                                const auto& g = *t.grad_if_set(self);
                                if (xn >= 0) {
                                    std::vector<double> gx(xv.size());
                                    kernels::convt2x2_backward_x(g.data(), wv.data(), gx.data(), n, ci, h, ww, co);
                                    acc_into(t, xn, gx);
                                }
                                if (wn >= 0) {
                                    std::vector<double> gw(wv.size());
                                    kernels::convt2x2_backward_w(g.data(), xv.data(), gw.data(), n, ci, h, ww, co);
                                    acc_into(t, wn, gw);
                                }
                                if (bn >= 0) {
                                    std::vector<double> gb(static_cast<std::size_t>(co));
                                    kernels::convt2x2_backward_b(g.data(), gb.data(), n, co, 2 * h, 2 * ww);
                                    acc_into(t, bn, gb);
                                }
                            });
    }
    return y;
}

Tensor max_pool2d(Tape* tp, const Tensor& x, int k, int stride) {
    check_4d("max_pool2d", x, "input");
    if (k < 1 || stride < 1) fail("max_pool2d: k and stride must be >= 1");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % stride || w % stride || (h - k) % stride || (w - k) % stride || h < k || w < k)
        fail("max_pool2d: extents " + shape_str(x.shape) + " not divisible for k " + std::to_string(k) +
             ", stride " + std::to_string(stride));
    const Index oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    Tensor y({n, c, oh, ow});
    std::vector<std::int64_t> argmax(static_cast<std::size_t>(y.numel()));
    kernels::maxpool_forward(x.data.data(), y.data.data(), argmax.data(), n, c, h, w, k, stride);
    if (tracked(tp, {&x})) {
        const int xn = x.node;
        const Index nx = x.numel();
        y.node = tp->record("max_pool2d", {xn}, y.shape, [xn, argmax, nx](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            auto& gx = t.grad_buffer(xn);
            (void)nx;
            for (std::size_t i = 0; i < g.size(); ++i) gx[static_cast<std::size_t>(argmax[i])] += g[i];
        });
    }
    return y;
}

Tensor avg_pool2d(Tape* tp, const Tensor& x, int k, int stride) {
    check_4d("avg_pool2d", x, "input");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (k < 1 || stride < 1 || h < k || w < k || (h - k) % stride || (w - k) % stride)
        fail("avg_pool2d: extents " + shape_str(x.shape) + " not divisible for k " + std::to_string(k) +
             ", stride " + std::to_string(stride));
    const Index oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    Tensor y({n, c, oh, ow});
    kernels::avgpool_forward(x.data.data(), y.data.data(), n, c, h, w, k, stride);
    if (tracked(tp, {&x})) {
        const int xn = x.node;
        const Index nx = x.numel();
        const Index kk = k, ss = stride;
        y.node = tp->record("avg_pool2d", {xn}, y.shape, [xn, nx, n, c, h, w, kk, ss](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            std::vector<double> gx(static_cast<std::size_t>(nx));
            kernels::avgpool_backward(g.data(), gx.data(), n, c, h, w, kk, ss);
            acc_into(t, xn, gx);
        });
    }
    return y;
}

Tensor batch_norm(Tape* tp, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, double eps, bool train, double momentum) {
    check_4d("batch_norm", x, "input");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c || running_var.numel() != c)
        fail("batch_norm: affine/running shapes must be [" + std::to_string(c) + "], got gamma " +
             shape_str(gamma.shape));
    if (eps <= 0.0) fail("batch_norm: eps must be > 0");

    const Index m = n * h * w;
    std::vector<double> mean(static_cast<std::size_t>(c)), var(static_cast<std::size_t>(c));
    if (train) {
        for (Index ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (Index i = 0; i < n; ++i)
                for (Index p = 0; p < h * w; ++p) s += x[(i * c + ch) * h * w + p];
            const double mu = s / static_cast<double>(m);
            double v = 0.0;
            for (Index i = 0; i < n; ++i)
                for (Index p = 0; p < h * w; ++p) {
                    const double d = x[(i * c + ch) * h * w + p] - mu;
                    v += d * d;
                }
            mean[static_cast<std::size_t>(ch)] = mu;
            var[static_cast<std::size_t>(ch)] = v / static_cast<double>(m);
            running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mu;
            running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var[static_cast<std::size_t>(ch)];
        }
    } else {
        for (Index ch = 0; ch < c; ++ch) {
            mean[static_cast<std::size_t>(ch)] = running_mean[ch];
            var[static_cast<std::size_t>(ch)] = running_var[ch];
        }
    }

    Tensor y(x.shape);
    std::vector<double> xhat(static_cast<std::size_t>(x.numel()));
    std::vector<double> inv_std(static_cast<std::size_t>(c));
    for (Index ch = 0; ch < c; ++ch)
        inv_std[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(ch)] + eps);
    for (Index i = 0; i < n; ++i)
        for (Index ch = 0; ch < c; ++ch)
            for (Index p = 0; p < h * w; ++p) {
                const Index q = (i * c + ch) * h * w + p;
                const double xh = (x[q] - mean[static_cast<std::size_t>(ch)]) * inv_std[static_cast<std::size_t>(ch)];
                xhat[static_cast<std::size_t>(q)] = xh;
                y[q] = gamma[ch] * xh + beta[ch];
            }

    if (tracked(tp, {&x, &gamma, &beta})) {
        const int xn = x.node, gn = gamma.node, bn = beta.node;
        const std::vector<double> gv = gamma.data;
        y.node = tp->record("batch_norm", {xn, gn, bn}, y.shape,
                            [xn, gn, bn, gv, xhat, inv_std, n, c, h, w, m, train](Tape& t, int self) {
                                const auto& g = *t.grad_if_set(self);
                                const Index hw = h * w;
                                for (Index ch = 0; ch < c; ++ch) {
                                    double sum_g = 0.0, sum_gx = 0.0;
                                    for (Index i = 0; i < n; ++i)
                                        for (Index p = 0; p < hw; ++p) {
                                            const Index q = (i * c + ch) * hw + p;
                                            sum_g += g[static_cast<std::size_t>(q)];
                                            sum_gx += g[static_cast<std::size_t>(q)] * xhat[static_cast<std::size_t>(q)];
                                        }
                                    if (bn >= 0) t.grad_buffer(bn)[static_cast<std::size_t>(ch)] += sum_g;
                                    if (gn >= 0) t.grad_buffer(gn)[static_cast<std::size_t>(ch)] += sum_gx;
                                    if (xn >= 0) {
                                        auto& gx = t.grad_buffer(xn);
                                        const double gam = gv[static_cast<std::size_t>(ch)];
                                        const double istd = inv_std[static_cast<std::size_t>(ch)];
                                        const double invm = 1.0 / static_cast<double>(m);
                                        for (Index i = 0; i < n; ++i)
                                            for (Index p = 0; p < hw; ++p) {
                                                const Index q = (i * c + ch) * hw + p;
                                                if (train)
                                                    gx[static_cast<std::size_t>(q)] +=
                                                        gam * istd *
                                                        (g[static_cast<std::size_t>(q)] -
                                                         invm * sum_g -
                                                         xhat[static_cast<std::size_t>(q)] * invm * sum_gx);
                                                else
                                                    gx[static_cast<std::size_t>(q)] += gam * istd * g[static_cast<std::size_t>(q)];
                                            }
                                    }
                                }
                            });
    }
    return y;
}

Tensor layer_norm(Tape* tp, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.ndim() < 1) fail("layer_norm: input must have at least one axis");
    const Index e = x.dim(x.ndim() - 1);
    if (gamma.numel() != e || beta.numel() != e)
        fail("layer_norm: affine shapes must be [" + std::to_string(e) + "], got gamma " + shape_str(gamma.shape));
    if (eps <= 0.0) fail("layer_norm: eps must be > 0");
    const Index rows = x.numel() / e;

    Tensor y(x.shape);
    std::vector<double> xhat(static_cast<std::size_t>(x.numel()));
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    for (Index r = 0; r < rows; ++r) {
        double s = 0.0;
        for (Index i = 0; i < e; ++i) s += x[r * e + i];
        const double mu = s / static_cast<double>(e);
        double v = 0.0;
        for (Index i = 0; i < e; ++i) {
            const double d = x[r * e + i] - mu;
            v += d * d;
        }
        const double istd = 1.0 / std::sqrt(v / static_cast<double>(e) + eps);
        inv_std[static_cast<std::size_t>(r)] = istd;
        for (Index i = 0; i < e; ++i) {
            const double xh = (x[r * e + i] - mu) * istd;
            xhat[static_cast<std::size_t>(r * e + i)] = xh;
            y[r * e + i] = gamma[i] * xh + beta[i];
        }
    }
    if (tracked(tp, {&x, &gamma, &beta})) {
        const int xn = x.node, gn = gamma.node, bn = beta.node;
        const std::vector<double> gv = gamma.data;
        y.node = tp->record("layer_norm", {xn, gn, bn}, y.shape,
                            [xn, gn, bn, gv, xhat, inv_std, rows, e](Tape& t, int self) {
                                const auto& g = *t.grad_if_set(self);
                                if (gn >= 0 || bn >= 0) {
                                    for (Index i = 0; i < e; ++i) {
                                        double sg = 0.0, sgx = 0.0;
                                        for (Index r = 0; r < rows; ++r) {
                                            sg += g[static_cast<std::size_t>(r * e + i)];
                                            sgx += g[static_cast<std::size_t>(r * e + i)] * xhat[static_cast<std::size_t>(r * e + i)];
                                        }
                                        if (bn >= 0) t.grad_buffer(bn)[static_cast<std::size_t>(i)] += sg;
                                        if (gn >= 0) t.grad_buffer(gn)[static_cast<std::size_t>(i)] += sgx;
                                    }
                                }
                                if (xn >= 0) {
                                    auto& gx = t.grad_buffer(xn);
                                    const double inve = 1.0 / static_cast<double>(e);
                                    for (Index r = 0; r < rows; ++r) {
                                        double mh = 0.0, mhx = 0.0;
                                        for (Index i = 0; i < e; ++i) {
                                            const double hh = g[static_cast<std::size_t>(r * e + i)] * gv[static_cast<std::size_t>(i)];
                                            mh += hh;
                                            mhx += hh * xhat[static_cast<std::size_t>(r * e + i)];
                                        }
                                        mh *= inve;
                                        mhx *= inve;
                                        const double istd = inv_std[static_cast<std::size_t>(r)];
                                        for (Index i = 0; i < e; ++i) {
                                            const double hh = g[static_cast<std::size_t>(r * e + i)] * gv[static_cast<std::size_t>(i)];
                                            gx[static_cast<std::size_t>(r * e + i)] +=
                                                istd * (hh - mh - xhat[static_cast<std::size_t>(r * e + i)] * mhx);
                                        }
                                    }
                                }
                            });
    }
    return y;
}

Tensor attention(Tape* tp, const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    if (q.ndim() != 3 || k.ndim() != 3 || v.ndim() != 3)
        fail("attention: q/k/v must be (batch, tokens, embed)");
    check_same_shape("attention", q, k);
    check_same_shape("attention", q, v);
    const Index b = q.dim(0), tok = q.dim(1), e = q.dim(2);
    if (heads < 1 || e % heads)
        fail("attention: embedding " + std::to_string(e) + " not divisible by heads " + std::to_string(heads));
    const Index dh = e / heads;

    auto split = [&](const Tensor& t) {
        Tensor r = reshape(tp, t, {b, tok, heads, dh});
        r = permute(tp, r, {0, 2, 1, 3});
        return reshape(tp, r, {b * heads, tok, dh});
    };
    Tensor qh = split(q), kh = split(k), vh = split(v);
    Tensor kt = permute(tp, kh, {0, 2, 1});
    Tensor scores = scale(tp, matmul(tp, qh, kt), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor attnw = softmax(tp, scores, 2);
    Tensor out = matmul(tp, attnw, vh);
    out = reshape(tp, out, {b, heads, tok, dh});
    out = permute(tp, out, {0, 2, 1, 3});
    return reshape(tp, out, {b, tok, e});
}

namespace {
// dst -> src flat index map of window partitioning (a bijection)
std::vector<Index> window_map(Index n, Index c, Index h, Index w, Index win, Index shift) {
    const Index wh = h / win, ww = w / win, t = win * win;
    std::vector<Index> map(static_cast<std::size_t>(n * wh * ww * t * c));
    Index d = 0;
    for (Index i = 0; i < n; ++i)
        for (Index wi = 0; wi < wh; ++wi)
            for (Index wj = 0; wj < ww; ++wj)
                for (Index ti = 0; ti < win; ++ti)
                    for (Index tj = 0; tj < win; ++tj)
                        for (Index ch = 0; ch < c; ++ch) {
                            const Index si = (wi * win + ti + shift) % h;
                            const Index sj = (wj * win + tj + shift) % w;
                            map[static_cast<std::size_t>(d++)] = ((i * c + ch) * h + si) * w + sj;
                        }
    return map;
}

void check_window_args(const char* op, Index h, Index w, int win, int shift) {
    if (win < 1 || h % win || w % win)
        fail(std::string(op) + ": extents " + std::to_string(h) + "x" + std::to_string(w) +
             " not divisible by window " + std::to_string(win));
    if (shift < 0 || shift >= win)
        fail(std::string(op) + ": shift " + std::to_string(shift) + " outside [0, " + std::to_string(win) + ")");
}
}  // namespace

Tensor window_partition(Tape* tp, const Tensor& x, int win, int shift) {
    check_4d("window_partition", x, "input");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    check_window_args("window_partition", h, w, win, shift);
    const Index nw = n * (h / win) * (w / win), t = static_cast<Index>(win) * win;
    const auto map = window_map(n, c, h, w, win, shift);
    Tensor y({nw, t, c});
    for (Index d = 0; d < y.numel(); ++d) y[d] = x[map[static_cast<std::size_t>(d)]];
    if (tracked(tp, {&x})) {
        const int xn = x.node;
        y.node = tp->record("window_partition", {xn}, y.shape, [xn, map](Tape& t2, int self) {
            const auto& g = *t2.grad_if_set(self);
            auto& gx = t2.grad_buffer(xn);
            for (std::size_t d = 0; d < g.size(); ++d) gx[static_cast<std::size_t>(map[d])] += g[d];
        });
    }
    return y;
}

Tensor window_merge(Tape* tp, const Tensor& t, const Shape& nchw, int win, int shift) {
    if (t.ndim() != 3) fail("window_merge: input must be (windows, tokens, channels)");
    if (nchw.size() != 4) fail("window_merge: target shape must be 4-d");
    const Index n = nchw[0], c = nchw[1], h = nchw[2], w = nchw[3];
    check_window_args("window_merge", h, w, win, shift);
    const Index nw = n * (h / win) * (w / win), tok = static_cast<Index>(win) * win;
    if (t.dim(0) != nw || t.dim(1) != tok || t.dim(2) != c)
        fail("window_merge: tokens " + shape_str(t.shape) + " incompatible with target " + shape_str(nchw) +
             " at window " + std::to_string(win));
    const auto map = window_map(n, c, h, w, win, shift);
    Tensor y(nchw);
    for (Index d = 0; d < t.numel(); ++d) y[map[static_cast<std::size_t>(d)]] = t[d];
    if (tracked(tp, {&t})) {
        const int tn = t.node;
        y.node = tp->record("window_merge", {tn}, y.shape, [tn, map](Tape& t2, int self) {
            const auto& g = *t2.grad_if_set(self);
            auto& gt = t2.grad_buffer(tn);
            for (std::size_t d = 0; d < gt.size(); ++d) gt[d] += g[static_cast<std::size_t>(map[d])];
        });
    }
    return y;
}

Tensor mul_spatial_gate(Tape* tp, const Tensor& x, const Tensor& g) {
    check_4d("mul_spatial_gate", x, "input");
    check_4d("mul_spatial_gate", g, "gate");
    if (g.dim(0) != x.dim(0) || g.dim(1) != 1 || g.dim(2) != x.dim(2) || g.dim(3) != x.dim(3))
        fail("mul_spatial_gate: gate " + shape_str(g.shape) + " must be (N,1,H,W) for x " + shape_str(x.shape));
    const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor y(x.shape);
    for (Index i = 0; i < n; ++i)
        for (Index ch = 0; ch < c; ++ch)
            for (Index p = 0; p < hw; ++p) y[(i * c + ch) * hw + p] = x[(i * c + ch) * hw + p] * g[i * hw + p];
    if (tracked(tp, {&x, &g})) {
        const int xn = x.node, gn = g.node;
        const std::vector<double> xv = x.data, gv = g.data;
        y.node = tp->record("mul_spatial_gate", {xn, gn}, y.shape, [xn, gn, xv, gv, n, c, hw](Tape& t, int self) {
            const auto& gr = *t.grad_if_set(self);
            if (xn >= 0) {
                auto& gx = t.grad_buffer(xn);
                for (Index i = 0; i < n; ++i)
                    for (Index ch = 0; ch < c; ++ch)
                        for (Index p = 0; p < hw; ++p)
                            gx[static_cast<std::size_t>((i * c + ch) * hw + p)] +=
                                gr[static_cast<std::size_t>((i * c + ch) * hw + p)] * gv[static_cast<std::size_t>(i * hw + p)];
            }
            if (gn >= 0) {
                auto& gg = t.grad_buffer(gn);
                for (Index i = 0; i < n; ++i)
                    for (Index p = 0; p < hw; ++p) {
                        double acc = 0.0;
                        for (Index ch = 0; ch < c; ++ch)
                            acc += gr[static_cast<std::size_t>((i * c + ch) * hw + p)] *
                                   xv[static_cast<std::size_t>((i * c + ch) * hw + p)];
                        gg[static_cast<std::size_t>(i * hw + p)] += acc;
                    }
            }
        });
    }
    return y;
}

Tensor mul_channel_gate(Tape* tp, const Tensor& x, const Tensor& g) {
    check_4d("mul_channel_gate", x, "input");
    if (g.ndim() != 2 || g.dim(0) != x.dim(0) || g.dim(1) != x.dim(1))
        fail("mul_channel_gate: gate " + shape_str(g.shape) + " must be (N,C) for x " + shape_str(x.shape));
    const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor y(x.shape);
    for (Index i = 0; i < n; ++i)
        for (Index ch = 0; ch < c; ++ch)
            for (Index p = 0; p < hw; ++p) y[(i * c + ch) * hw + p] = x[(i * c + ch) * hw + p] * g[i * c + ch];
    if (tracked(tp, {&x, &g})) {
        const int xn = x.node, gn = g.node;
        const std::vector<double> xv = x.data, gv = g.data;
        y.node = tp->record("mul_channel_gate", {xn, gn}, y.shape, [xn, gn, xv, gv, n, c, hw](Tape& t, int self) {
            const auto& gr = *t.grad_if_set(self);
            if (xn >= 0) {
                auto& gx = t.grad_buffer(xn);
                for (Index i = 0; i < n; ++i)
                    for (Index ch = 0; ch < c; ++ch)
                        for (Index p = 0; p < hw; ++p)
                            gx[static_cast<std::size_t>((i * c + ch) * hw + p)] +=
                                gr[static_cast<std::size_t>((i * c + ch) * hw + p)] * gv[static_cast<std::size_t>(i * c + ch)];
            }
            if (gn >= 0) {
                auto& gg = t.grad_buffer(gn);
                for (Index i = 0; i < n; ++i)
                    for (Index ch = 0; ch < c; ++ch) {
                        double acc = 0.0;
                        for (Index p = 0; p < hw; ++p)
                            acc += gr[static_cast<std::size_t>((i * c + ch) * hw + p)] *
                                   xv[static_cast<std::size_t>((i * c + ch) * hw + p)];
                        gg[static_cast<std::size_t>(i * c + ch)] += acc;
                    }
            }
        });
    }
    return y;
}

Tensor global_avg_pool(Tape* tp, const Tensor& x) {
    check_4d("global_avg_pool", x, "input");
    const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor y({n, c});
    for (Index i = 0; i < n; ++i)
        for (Index ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (Index p = 0; p < hw; ++p) acc += x[(i * c + ch) * hw + p];
            y[i * c + ch] = acc / static_cast<double>(hw);
        }
    if (tracked(tp, {&x})) {
        const int xn = x.node;
        y.node = tp->record("global_avg_pool", {xn}, y.shape, [xn, n, c, hw](Tape& t, int self) {
            const auto& g = *t.grad_if_set(self);
            auto& gx = t.grad_buffer(xn);
            const double inv = 1.0 / static_cast<double>(hw);
            for (Index i = 0; i < n; ++i)
                for (Index ch = 0; ch < c; ++ch)
                    for (Index p = 0; p < hw; ++p)
                        gx[static_cast<std::size_t>((i * c + ch) * hw + p)] += g[static_cast<std::size_t>(i * c + ch)] * inv;
        });
    }
    return y;
}

double grad_check(const std::function<Tensor(Tape&, Tensor&)>& f, const Tensor& x, double h) {
    Tape tape;
    Tensor xx = x;
    tape.leaf(xx);
    Tensor loss = f(tape, xx);
    if (loss.numel() != 1) fail("grad_check: f must be scalar-valued");
    tape.backward(loss);
    const Tensor analytic = tape.grad(xx);

    auto eval = [&f](const Tensor& v) {
        Tape t2;
        Tensor vc = v;
        t2.leaf(vc);
        Tensor out = f(t2, vc);
        return out[0];
    };

    double worst = 0.0;
    for (Index i = 0; i < x.numel(); ++i) {
        Tensor xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double cd = (eval(xp) - eval(xm)) / (2.0 * h);
        const double a = analytic[i];
        const double err = std::abs(a - cd) / std::max({std::abs(a), std::abs(cd), 1e-8});
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace teethseg
