#include "teethseg/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace teethseg {

namespace threads {

static int g_count = -1;

static int read_env() {
    const char* s = std::getenv("TEETHSEG_THREADS");
    if (!s) return 1;
    int v = std::atoi(s);
    return v >= 1 ? v : 1;
}

int count() {
    if (g_count < 1) g_count = read_env();
    return g_count;
}

void set_count(int n) { g_count = n >= 1 ? n : 1; }

}  // namespace threads

namespace kernels {

// Per-element bodies shared by the serial and OpenMP paths. Each body computes
// one output entry with a fixed reduction order, so the result is independent
// of how the entry loop is scheduled.
namespace {

inline double conv2d_cell(const double* x, const double* wgt, const double* b,
                          const Conv2dDims& d, Index n, Index o, Index oh, Index ow) {
    double acc = b ? b[o] : 0.0;
    const Index hw = d.h * d.w;
    const double* xn = x + n * d.ci * hw;
    const double* wo = wgt + o * d.ci * d.k * d.k;
    for (Index i = 0; i < d.ci; ++i) {
        const double* xc = xn + i * hw;
        const double* wi = wo + i * d.k * d.k;
        for (Index kh = 0; kh < d.k; ++kh) {
            const Index ih = oh * d.stride + kh - d.pad;
            if (ih < 0 || ih >= d.h) continue;
            const double* xrow = xc + ih * d.w;
            const double* wrow = wi + kh * d.k;
            for (Index kw = 0; kw < d.k; ++kw) {
                const Index iw = ow * d.stride + kw - d.pad;
                if (iw < 0 || iw >= d.w) continue;
                acc += wrow[kw] * xrow[iw];
            }
        }
    }
    return acc;
}

inline double conv2d_gx_cell(const double* gy, const double* wgt, const Conv2dDims& d,
                             Index n, Index i, Index ih, Index iw) {
    double acc = 0.0;
    const Index ohw = d.oh * d.ow;
    const double* gn = gy + n * d.co * ohw;
    if (d.stride == 1) {
        for (Index o = 0; o < d.co; ++o) {
            const double* go = gn + o * ohw;
            const double* wo = wgt + (o * d.ci + i) * d.k * d.k;
            for (Index kh = 0; kh < d.k; ++kh) {
                const Index oh = ih + d.pad - kh;
                if (oh < 0 || oh >= d.oh) continue;
                const double* grow = go + oh * d.ow;
                const double* wrow = wo + kh * d.k;
                const Index kw_lo = std::max<Index>(0, iw + d.pad - (d.ow - 1));
                const Index kw_hi = std::min<Index>(d.k - 1, iw + d.pad);
                for (Index kw = kw_lo; kw <= kw_hi; ++kw) acc += grow[iw + d.pad - kw] * wrow[kw];
            }
        }
        return acc;
    }
    for (Index o = 0; o < d.co; ++o) {
        const double* go = gn + o * ohw;
        const double* wo = wgt + (o * d.ci + i) * d.k * d.k;
        for (Index kh = 0; kh < d.k; ++kh) {
            const Index t = ih + d.pad - kh;
            if (t < 0 || t % d.stride) continue;
            const Index oh = t / d.stride;
            if (oh >= d.oh) continue;
            for (Index kw = 0; kw < d.k; ++kw) {
                const Index u = iw + d.pad - kw;
                if (u < 0 || u % d.stride) continue;
                const Index ow = u / d.stride;
                if (ow >= d.ow) continue;
                acc += go[oh * d.ow + ow] * wo[kh * d.k + kw];
            }
        }
    }
    return acc;
}

inline double conv2d_gw_cell(const double* gy, const double* x, const Conv2dDims& d,
                             Index o, Index i, Index kh, Index kw) {
    double acc = 0.0;
    const Index hw = d.h * d.w;
    const Index ohw = d.oh * d.ow;
    for (Index n = 0; n < d.n; ++n) {
        const double* go = gy + (n * d.co + o) * ohw;
        const double* xc = x + (n * d.ci + i) * hw;
        for (Index oh = 0; oh < d.oh; ++oh) {
            const Index ih = oh * d.stride + kh - d.pad;
            if (ih < 0 || ih >= d.h) continue;
            const double* xrow = xc + ih * d.w;
            const double* grow = go + oh * d.ow;
            for (Index ow = 0; ow < d.ow; ++ow) {
                const Index iw = ow * d.stride + kw - d.pad;
                if (iw < 0 || iw >= d.w) continue;
                acc += grow[ow] * xrow[iw];
            }
        }
    }
    return acc;
}

inline double convt2x2_cell(const double* x, const double* wgt, const double* b,
                            Index ci, Index h, Index w, Index co,
                            Index n, Index o, Index oy, Index ox) {
    const Index ih = oy / 2, kh = oy % 2, iw = ox / 2, kw = ox % 2;
    double acc = b ? b[o] : 0.0;
    const double* xn = x + n * ci * h * w;
    for (Index i = 0; i < ci; ++i)
        acc += xn[(i * h + ih) * w + iw] * wgt[((i * co + o) * 2 + kh) * 2 + kw];
    return acc;
}

inline double convt2x2_gx_cell(const double* gy, const double* wgt,
                               Index h, Index w, Index co,
                               Index n, Index i, Index ih, Index iw) {
    const Index oh = 2 * h, ow = 2 * w;
    const double* gn = gy + n * co * oh * ow;
    double acc = 0.0;
    for (Index o = 0; o < co; ++o) {
        const double* go = gn + o * oh * ow;
        for (Index kh = 0; kh < 2; ++kh)
            for (Index kw = 0; kw < 2; ++kw)
                acc += go[(2 * ih + kh) * ow + (2 * iw + kw)] * wgt[((i * co + o) * 2 + kh) * 2 + kw];
    }
    return acc;
}

inline double convt2x2_gw_cell(const double* gy, const double* x,
                               Index nn, Index ci, Index h, Index w, Index co,
                               Index i, Index o, Index kh, Index kw) {
    const Index oh = 2 * h, ow = 2 * w;
    double acc = 0.0;
    for (Index n = 0; n < nn; ++n) {
        const double* xc = x + (n * ci + i) * h * w;
        const double* go = gy + (n * co + o) * oh * ow;
        for (Index ih = 0; ih < h; ++ih)
            for (Index iw = 0; iw < w; ++iw)
                acc += xc[ih * w + iw] * go[(2 * ih + kh) * ow + (2 * iw + kw)];
    }
    return acc;
}

inline void maxpool_cell(const double* x, double* y, std::int64_t* argmax,
                         Index c_total, Index h, Index w, Index k, Index stride,
                         Index p, Index oh_n, Index ow_n) {
    // p indexes the flattened (n*c, oh, ow) output space
    const Index ow_i = p % ow_n;
    const Index oh_i = (p / ow_n) % oh_n;
    const Index plane = p / (ow_n * oh_n);
    (void)c_total;
    const double* xp = x + plane * h * w;
    double best = 0.0;
    Index best_idx = -1;
    for (Index kh = 0; kh < k; ++kh) {
        const Index ih = oh_i * stride + kh;
        for (Index kw = 0; kw < k; ++kw) {
            const Index iw = ow_i * stride + kw;
            const double v = xp[ih * w + iw];
            if (best_idx < 0 || v > best) {
                best = v;
                best_idx = ih * w + iw;
            }
        }
    }
    y[p] = best;
    argmax[p] = plane * h * w + best_idx;
}

inline double avgpool_cell(const double* x, Index h, Index w, Index k, Index stride,
                           Index plane, Index oh_i, Index ow_i) {
    const double* xp = x + plane * h * w;
    double acc = 0.0;
    for (Index kh = 0; kh < k; ++kh)
        for (Index kw = 0; kw < k; ++kw)
            acc += xp[(oh_i * stride + kh) * w + (ow_i * stride + kw)];
    return acc / static_cast<double>(k * k);
}

inline double avgpool_gx_cell(const double* gy, Index h, Index w, Index k, Index stride,
                              Index oh_n, Index ow_n, Index plane, Index ih, Index iw) {
    // windows covering (ih, iw): oh*stride <= ih <= oh*stride + k - 1
    (void)h;
    (void)w;
    const double* gp = gy + plane * oh_n * ow_n;
    const auto lo = [k, stride](Index i) {
        const Index num = i - k + 1;
        return num <= 0 ? Index{0} : (num + stride - 1) / stride;
    };
    const Index oh_hi = std::min(ih / stride, oh_n - 1);
    const Index ow_hi = std::min(iw / stride, ow_n - 1);
    double acc = 0.0;
    for (Index oh = lo(ih); oh <= oh_hi; ++oh)
        for (Index ow = lo(iw); ow <= ow_hi; ++ow) acc += gp[oh * ow_n + ow];
    return acc / static_cast<double>(k * k);
}

inline double matmul_cell(const double* a, const double* b, Index m, Index k, Index n,
                          Index bi, Index mi, Index ni) {
    const double* ar = a + (bi * m + mi) * k;
    const double* bp = b + bi * k * n;
    double acc = 0.0;
    for (Index ki = 0; ki < k; ++ki) acc += ar[ki] * bp[ki * n + ni];
    return acc;
}

inline double matmul_ga_cell(const double* gy, const double* b, Index m, Index k, Index n,
                             Index bi, Index mi, Index ki) {
    const double* gr = gy + (bi * m + mi) * n;
    const double* br = b + (bi * k + ki) * n;
    double acc = 0.0;
    for (Index ni = 0; ni < n; ++ni) acc += gr[ni] * br[ni];
    return acc;
}

inline double matmul_gb_cell(const double* gy, const double* a, Index m, Index k, Index n,
                             Index bi, Index ki, Index ni) {
    double acc = 0.0;
    for (Index mi = 0; mi < m; ++mi)
        acc += a[(bi * m + mi) * k + ki] * gy[(bi * m + mi) * n + ni];
    return acc;
}

inline double window_min(const double* x, Index h, Index w, Index r, Index y0, Index x0) {
    double best = x[std::clamp<Index>(y0 - r, 0, h - 1) * w + std::clamp<Index>(x0 - r, 0, w - 1)];
    for (Index dy = -r; dy <= r; ++dy) {
        const Index yy = std::clamp<Index>(y0 + dy, 0, h - 1);
        for (Index dx = -r; dx <= r; ++dx) {
            const Index xx = std::clamp<Index>(x0 + dx, 0, w - 1);
            best = std::min(best, x[yy * w + xx]);
        }
    }
    return best;
}

inline double window_max(const double* x, Index h, Index w, Index r, Index y0, Index x0) {
    double best = x[std::clamp<Index>(y0 - r, 0, h - 1) * w + std::clamp<Index>(x0 - r, 0, w - 1)];
    for (Index dy = -r; dy <= r; ++dy) {
        const Index yy = std::clamp<Index>(y0 + dy, 0, h - 1);
        for (Index dx = -r; dx <= r; ++dx) {
            const Index xx = std::clamp<Index>(x0 + dx, 0, w - 1);
            best = std::max(best, x[yy * w + xx]);
        }
    }
    return best;
}

}  // namespace

// ---------------- serial reference ----------------

namespace serial {

void conv2d_forward(const double* x, const double* wgt, const double* b, double* y, const Conv2dDims& d) {
    Index p = 0;
    for (Index n = 0; n < d.n; ++n)
        for (Index o = 0; o < d.co; ++o)
            for (Index oh = 0; oh < d.oh; ++oh)
                for (Index ow = 0; ow < d.ow; ++ow) y[p++] = conv2d_cell(x, wgt, b, d, n, o, oh, ow);
}

void conv2d_backward_x(const double* gy, const double* wgt, double* gx, const Conv2dDims& d) {
    Index p = 0;
    for (Index n = 0; n < d.n; ++n)
        for (Index i = 0; i < d.ci; ++i)
            for (Index ih = 0; ih < d.h; ++ih)
                for (Index iw = 0; iw < d.w; ++iw) gx[p++] = conv2d_gx_cell(gy, wgt, d, n, i, ih, iw);
}

void conv2d_backward_w(const double* gy, const double* x, double* gw, const Conv2dDims& d) {
    Index p = 0;
    for (Index o = 0; o < d.co; ++o)
        for (Index i = 0; i < d.ci; ++i)
            for (Index kh = 0; kh < d.k; ++kh)
                for (Index kw = 0; kw < d.k; ++kw) gw[p++] = conv2d_gw_cell(gy, x, d, o, i, kh, kw);
}

void conv2d_backward_b(const double* gy, double* gb, const Conv2dDims& d) {
    const Index ohw = d.oh * d.ow;
    for (Index o = 0; o < d.co; ++o) {
        double acc = 0.0;
        for (Index n = 0; n < d.n; ++n) {
            const double* go = gy + (n * d.co + o) * ohw;
            for (Index p = 0; p < ohw; ++p) acc += go[p];
        }
        gb[o] = acc;
    }
}

void convt2x2_forward(const double* x, const double* wgt, const double* b, double* y,
                      Index n, Index ci, Index h, Index w, Index co) {
    Index p = 0;
    for (Index nn = 0; nn < n; ++nn)
        for (Index o = 0; o < co; ++o)
            for (Index oy = 0; oy < 2 * h; ++oy)
                for (Index ox = 0; ox < 2 * w; ++ox)
                    y[p++] = convt2x2_cell(x, wgt, b, ci, h, w, co, nn, o, oy, ox);
}

void convt2x2_backward_x(const double* gy, const double* wgt, double* gx,
                         Index n, Index ci, Index h, Index w, Index co) {
    Index p = 0;
    for (Index nn = 0; nn < n; ++nn)
        for (Index i = 0; i < ci; ++i)
            for (Index ih = 0; ih < h; ++ih)
                for (Index iw = 0; iw < w; ++iw)
                    gx[p++] = convt2x2_gx_cell(gy, wgt, h, w, co, nn, i, ih, iw);
}

void convt2x2_backward_w(const double* gy, const double* x, double* gw,
                         Index n, Index ci, Index h, Index w, Index co) {
    Index p = 0;
    for (Index i = 0; i < ci; ++i)
        for (Index o = 0; o < co; ++o)
            for (Index kh = 0; kh < 2; ++kh)
                for (Index kw = 0; kw < 2; ++kw)
                    gw[p++] = convt2x2_gw_cell(gy, x, n, ci, h, w, co, i, o, kh, kw);
}

void convt2x2_backward_b(const double* gy, double* gb, Index n, Index co, Index oh, Index ow) {
    for (Index o = 0; o < co; ++o) {
        double acc = 0.0;
        for (Index nn = 0; nn < n; ++nn) {
            const double* go = gy + (nn * co + o) * oh * ow;
            for (Index p = 0; p < oh * ow; ++p) acc += go[p];
        }
        gb[o] = acc;
    }
}

void maxpool_forward(const double* x, double* y, std::int64_t* argmax,
                     Index n, Index c, Index h, Index w, Index k, Index stride) {
    const Index oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    const Index total = n * c * oh * ow;
    for (Index p = 0; p < total; ++p) maxpool_cell(x, y, argmax, n * c, h, w, k, stride, p, oh, ow);
}

void avgpool_forward(const double* x, double* y, Index n, Index c, Index h, Index w, Index k, Index stride) {
    const Index oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    Index p = 0;
    for (Index plane = 0; plane < n * c; ++plane)
        for (Index i = 0; i < oh; ++i)
            for (Index j = 0; j < ow; ++j) y[p++] = avgpool_cell(x, h, w, k, stride, plane, i, j);
}

void avgpool_backward(const double* gy, double* gx, Index n, Index c, Index h, Index w, Index k, Index stride) {
    const Index oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    Index p = 0;
    for (Index plane = 0; plane < n * c; ++plane)
        for (Index ih = 0; ih < h; ++ih)
            for (Index iw = 0; iw < w; ++iw)
                gx[p++] = avgpool_gx_cell(gy, h, w, k, stride, oh, ow, plane, ih, iw);
}

void matmul(const double* a, const double* b, double* y, Index bs, Index m, Index k, Index n) {
    Index p = 0;
    for (Index bi = 0; bi < bs; ++bi)
        for (Index mi = 0; mi < m; ++mi)
            for (Index ni = 0; ni < n; ++ni) y[p++] = matmul_cell(a, b, m, k, n, bi, mi, ni);
}

void matmul_backward_a(const double* gy, const double* b, double* ga, Index bs, Index m, Index k, Index n) {
    Index p = 0;
    for (Index bi = 0; bi < bs; ++bi)
        for (Index mi = 0; mi < m; ++mi)
            for (Index ki = 0; ki < k; ++ki) ga[p++] = matmul_ga_cell(gy, b, m, k, n, bi, mi, ki);
}

void matmul_backward_b(const double* gy, const double* a, double* gb, Index bs, Index m, Index k, Index n) {
    Index p = 0;
    for (Index bi = 0; bi < bs; ++bi)
        for (Index ki = 0; ki < k; ++ki)
            for (Index ni = 0; ni < n; ++ni) gb[p++] = matmul_gb_cell(gy, a, m, k, n, bi, ki, ni);
}

void min_filter(const double* x, double* y, Index h, Index w, Index r) {
    for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) y[i * w + j] = window_min(x, h, w, r, i, j);
}

void max_filter(const double* x, double* y, Index h, Index w, Index r) {
    for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) y[i * w + j] = window_max(x, h, w, r, i, j);
}

}  // namespace serial

// ---------------- OpenMP kernels ----------------
//
// Each loop is parallel over independent output entries; the per-entry
// reduction order matches the serial reference exactly, so outputs are
// bit-identical for any thread count. min/max filtering uses an exact
// separable two-pass decomposition instead.

namespace par {

#ifdef _OPENMP
#define TEETHSEG_PRAGMA(x) _Pragma(#x)
#define PARALLEL_FOR TEETHSEG_PRAGMA(omp parallel for num_threads(tc) schedule(static))
#else
#define PARALLEL_FOR
#endif

void conv2d_forward(const double* x, const double* wgt, const double* b, double* y, const Conv2dDims& d) {
    const int tc = threads::count();
    const Index rows = d.n * d.co * d.oh;
    PARALLEL_FOR
    for (Index row = 0; row < rows; ++row) {
        const Index oh = row % d.oh;
        const Index o = (row / d.oh) % d.co;
        const Index n = row / (d.oh * d.co);
        double* yr = y + row * d.ow;
        for (Index ow = 0; ow < d.ow; ++ow) yr[ow] = conv2d_cell(x, wgt, b, d, n, o, oh, ow);
    }
}

void conv2d_backward_x(const double* gy, const double* wgt, double* gx, const Conv2dDims& d) {
    const int tc = threads::count();
    const Index rows = d.n * d.ci * d.h;
    PARALLEL_FOR
    for (Index row = 0; row < rows; ++row) {
        const Index ih = row % d.h;
        const Index i = (row / d.h) % d.ci;
        const Index n = row / (d.h * d.ci);
        double* gr = gx + row * d.w;
        for (Index iw = 0; iw < d.w; ++iw) gr[iw] = conv2d_gx_cell(gy, wgt, d, n, i, ih, iw);
    }
}

void conv2d_backward_w(const double* gy, const double* x, double* gw, const Conv2dDims& d) {
    const int tc = threads::count();
    const Index total = d.co * d.ci * d.k * d.k;
    PARALLEL_FOR
    for (Index p = 0; p < total; ++p) {
        const Index kw = p % d.k;
        const Index kh = (p / d.k) % d.k;
        const Index i = (p / (d.k * d.k)) % d.ci;
        const Index o = p / (d.k * d.k * d.ci);
        gw[p] = conv2d_gw_cell(gy, x, d, o, i, kh, kw);
    }
}

void conv2d_backward_b(const double* gy, double* gb, const Conv2dDims& d) {
    const int tc = threads::count();
    const Index ohw = d.oh * d.ow;
    PARALLEL_FOR
    for (Index o = 0; o < d.co; ++o) {
        double acc = 0.0;
        for (Index n = 0; n < d.n; ++n) {
            const double* go = gy + (n * d.co + o) * ohw;
            for (Index p = 0; p < ohw; ++p) acc += go[p];
        }
        gb[o] = acc;
    }
}

void convt2x2_forward(const double* x, const double* wgt, const double* b, double* y,
                      Index n, Index ci, Index h, Index w, Index co) {
    const int tc = threads::count();
    const Index rows = n * co * 2 * h;
    PARALLEL_FOR
    for (Index row = 0; row < rows; ++row) {
        const Index oy = row % (2 * h);
        const Index o = (row / (2 * h)) % co;
        const Index nn = row / (2 * h * co);
        double* yr = y + row * 2 * w;
        for (Index ox = 0; ox < 2 * w; ++ox) yr[ox] = convt2x2_cell(x, wgt, b, ci, h, w, co, nn, o, oy, ox);
    }
}

void convt2x2_backward_x(const double* gy, const double* wgt, double* gx,
                         Index n, Index ci, Index h, Index w, Index co) {
    const int tc = threads::count();
    const Index rows = n * ci * h;
    PARALLEL_FOR
    for (Index row = 0; row < rows; ++row) {
        const Index ih = row % h;
        const Index i = (row / h) % ci;
        const Index nn = row / (h * ci);
        double* gr = gx + row * w;
        for (Index iw = 0; iw < w; ++iw) gr[iw] = convt2x2_gx_cell(gy, wgt, h, w, co, nn, i, ih, iw);
    }
}

void convt2x2_backward_w(const double* gy, const double* x, double* gw,
                         Index n, Index ci, Index h, Index w, Index co) {
    const int tc = threads::count();
    const Index total = ci * co * 4;
    PARALLEL_FOR
    for (Index p = 0; p < total; ++p) {
        const Index kw = p % 2;
        const Index kh = (p / 2) % 2;
        const Index o = (p / 4) % co;
        const Index i = p / (4 * co);
        gw[p] = convt2x2_gw_cell(gy, x, n, ci, h, w, co, i, o, kh, kw);
    }
}

void convt2x2_backward_b(const double* gy, double* gb, Index n, Index co, Index oh, Index ow) {
    const int tc = threads::count();
    PARALLEL_FOR
    for (Index o = 0; o < co; ++o) {
        double acc = 0.0;
        for (Index nn = 0; nn < n; ++nn) {
            const double* go = gy + (nn * co + o) * oh * ow;
            for (Index p = 0; p < oh * ow; ++p) acc += go[p];
        }
        gb[o] = acc;
    }
}

void maxpool_forward(const double* x, double* y, std::int64_t* argmax,
                     Index n, Index c, Index h, Index w, Index k, Index stride) {
    const int tc = threads::count();
    const Index oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    const Index total = n * c * oh * ow;
    PARALLEL_FOR
    for (Index p = 0; p < total; ++p) maxpool_cell(x, y, argmax, n * c, h, w, k, stride, p, oh, ow);
}

void avgpool_forward(const double* x, double* y, Index n, Index c, Index h, Index w, Index k, Index stride) {
    const int tc = threads::count();
    const Index oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    const Index total = n * c * oh * ow;
    PARALLEL_FOR
    for (Index p = 0; p < total; ++p) {
        const Index j = p % ow;
        const Index i = (p / ow) % oh;
        const Index plane = p / (ow * oh);
        y[p] = avgpool_cell(x, h, w, k, stride, plane, i, j);
    }
}

void avgpool_backward(const double* gy, double* gx, Index n, Index c, Index h, Index w, Index k, Index stride) {
    const int tc = threads::count();
    const Index oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    const Index total = n * c * h * w;
    PARALLEL_FOR
    for (Index p = 0; p < total; ++p) {
        const Index iw = p % w;
        const Index ih = (p / w) % h;
        const Index plane = p / (w * h);
        gx[p] = avgpool_gx_cell(gy, h, w, k, stride, oh, ow, plane, ih, iw);
    }
}

void matmul(const double* a, const double* b, double* y, Index bs, Index m, Index k, Index n) {
    const int tc = threads::count();
    const Index rows = bs * m;
    PARALLEL_FOR
    for (Index row = 0; row < rows; ++row) {
        const Index mi = row % m;
        const Index bi = row / m;
        double* yr = y + row * n;
        for (Index ni = 0; ni < n; ++ni) yr[ni] = matmul_cell(a, b, m, k, n, bi, mi, ni);
    }
}

void matmul_backward_a(const double* gy, const double* b, double* ga, Index bs, Index m, Index k, Index n) {
    const int tc = threads::count();
    const Index rows = bs * m;
    PARALLEL_FOR
    for (Index row = 0; row < rows; ++row) {
        const Index mi = row % m;
        const Index bi = row / m;
        double* gr = ga + row * k;
        for (Index ki = 0; ki < k; ++ki) gr[ki] = matmul_ga_cell(gy, b, m, k, n, bi, mi, ki);
    }
}

void matmul_backward_b(const double* gy, const double* a, double* gb, Index bs, Index m, Index k, Index n) {
    const int tc = threads::count();
    const Index rows = bs * k;
    PARALLEL_FOR
    for (Index row = 0; row < rows; ++row) {
        const Index ki = row % k;
        const Index bi = row / k;
        double* gr = gb + row * n;
        for (Index ni = 0; ni < n; ++ni) gr[ni] = matmul_gb_cell(gy, a, m, k, n, bi, ki, ni);
    }
}

// Square-window min/max split into exact row and column passes. min/max are
// exact operations, so the two-pass result equals the naive window scan.
void min_filter(const double* x, double* y, Index h, Index w, Index r) {
    const int tc = threads::count();
    std::vector<double> tmp(static_cast<std::size_t>(h * w));
    PARALLEL_FOR
    for (Index i = 0; i < h; ++i) {
        for (Index j = 0; j < w; ++j) {
            double best = x[i * w + std::clamp<Index>(j - r, 0, w - 1)];
            for (Index dx = -r; dx <= r; ++dx)
                best = std::min(best, x[i * w + std::clamp<Index>(j + dx, 0, w - 1)]);
            tmp[static_cast<std::size_t>(i * w + j)] = best;
        }
    }
    PARALLEL_FOR
    for (Index i = 0; i < h; ++i) {
        for (Index j = 0; j < w; ++j) {
            double best = tmp[static_cast<std::size_t>(std::clamp<Index>(i - r, 0, h - 1) * w + j)];
            for (Index dy = -r; dy <= r; ++dy)
                best = std::min(best, tmp[static_cast<std::size_t>(std::clamp<Index>(i + dy, 0, h - 1) * w + j)]);
            y[i * w + j] = best;
        }
    }
}

void max_filter(const double* x, double* y, Index h, Index w, Index r) {
    const int tc = threads::count();
    std::vector<double> tmp(static_cast<std::size_t>(h * w));
    PARALLEL_FOR
    for (Index i = 0; i < h; ++i) {
        for (Index j = 0; j < w; ++j) {
            double best = x[i * w + std::clamp<Index>(j - r, 0, w - 1)];
            for (Index dx = -r; dx <= r; ++dx)
                best = std::max(best, x[i * w + std::clamp<Index>(j + dx, 0, w - 1)]);
            tmp[static_cast<std::size_t>(i * w + j)] = best;
        }
    }
    PARALLEL_FOR
    for (Index i = 0; i < h; ++i) {
        for (Index j = 0; j < w; ++j) {
            double best = tmp[static_cast<std::size_t>(std::clamp<Index>(i - r, 0, h - 1) * w + j)];
            for (Index dy = -r; dy <= r; ++dy)
                best = std::max(best, tmp[static_cast<std::size_t>(std::clamp<Index>(i + dy, 0, h - 1) * w + j)]);
            y[i * w + j] = best;
        }
    }
}

#undef PARALLEL_FOR

}  // namespace par

// ---------------- dispatch ----------------

#define TEETHSEG_DISPATCH(fn, ...) \
    if (threads::count() > 1)      \
        par::fn(__VA_ARGS__);      \
    else                           \
        serial::fn(__VA_ARGS__)

void conv2d_forward(const double* x, const double* wgt, const double* b, double* y, const Conv2dDims& d) {
    TEETHSEG_DISPATCH(conv2d_forward, x, wgt, b, y, d);
}
void conv2d_backward_x(const double* gy, const double* wgt, double* gx, const Conv2dDims& d) {
    TEETHSEG_DISPATCH(conv2d_backward_x, gy, wgt, gx, d);
}
void conv2d_backward_w(const double* gy, const double* x, double* gw, const Conv2dDims& d) {
    TEETHSEG_DISPATCH(conv2d_backward_w, gy, x, gw, d);
}
void conv2d_backward_b(const double* gy, double* gb, const Conv2dDims& d) {
    TEETHSEG_DISPATCH(conv2d_backward_b, gy, gb, d);
}
void convt2x2_forward(const double* x, const double* wgt, const double* b, double* y,
                      Index n, Index ci, Index h, Index w, Index co) {
    TEETHSEG_DISPATCH(convt2x2_forward, x, wgt, b, y, n, ci, h, w, co);
}
void convt2x2_backward_x(const double* gy, const double* wgt, double* gx,
                         Index n, Index ci, Index h, Index w, Index co) {
    TEETHSEG_DISPATCH(convt2x2_backward_x, gy, wgt, gx, n, ci, h, w, co);
}
void convt2x2_backward_w(const double* gy, const double* x, double* gw,
                         Index n, Index ci, Index h, Index w, Index co) {
    TEETHSEG_DISPATCH(convt2x2_backward_w, gy, x, gw, n, ci, h, w, co);
}
void convt2x2_backward_b(const double* gy, double* gb, Index n, Index co, Index oh, Index ow) {
    TEETHSEG_DISPATCH(convt2x2_backward_b, gy, gb, n, co, oh, ow);
}
void maxpool_forward(const double* x, double* y, std::int64_t* argmax,
                     Index n, Index c, Index h, Index w, Index k, Index stride) {
    TEETHSEG_DISPATCH(maxpool_forward, x, y, argmax, n, c, h, w, k, stride);
}
void avgpool_forward(const double* x, double* y, Index n, Index c, Index h, Index w, Index k, Index stride) {
    TEETHSEG_DISPATCH(avgpool_forward, x, y, n, c, h, w, k, stride);
}
void avgpool_backward(const double* gy, double* gx, Index n, Index c, Index h, Index w, Index k, Index stride) {
    TEETHSEG_DISPATCH(avgpool_backward, gy, gx, n, c, h, w, k, stride);
}
void matmul(const double* a, const double* b, double* y, Index bs, Index m, Index k, Index n) {
    TEETHSEG_DISPATCH(matmul, a, b, y, bs, m, k, n);
}
void matmul_backward_a(const double* gy, const double* b, double* ga, Index bs, Index m, Index k, Index n) {
    TEETHSEG_DISPATCH(matmul_backward_a, gy, b, ga, bs, m, k, n);
}
void matmul_backward_b(const double* gy, const double* a, double* gb, Index bs, Index m, Index k, Index n) {
    TEETHSEG_DISPATCH(matmul_backward_b, gy, a, gb, bs, m, k, n);
}
void min_filter(const double* x, double* y, Index h, Index w, Index r) {
    TEETHSEG_DISPATCH(min_filter, x, y, h, w, r);
}
void max_filter(const double* x, double* y, Index h, Index w, Index r) {
    TEETHSEG_DISPATCH(max_filter, x, y, h, w, r);
}

#undef TEETHSEG_DISPATCH

}  // namespace kernels
}  // namespace teethseg
