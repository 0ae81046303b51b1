#pragma once

#include <cstdint>

#include "teethseg/tensor.hpp"

namespace teethseg {

// Worker-count control. Initialized from TEETHSEG_THREADS (default 1) on
// first use; set_count overrides at runtime. All kernels produce bit-identical
// results for every count: parallelism is over independent output entries and
// every reduction runs in a fixed index order.
namespace threads {
int count();
void set_count(int n);
}  // namespace threads

// Low-level compute kernels on raw row-major buffers. `serial` holds the plain
// reference loops; `par` the OpenMP versions. The unqualified functions
// dispatch on threads::count(). Dimension conventions: x is (N,I,H,W),
// conv weights (O,I,k,k), transposed-conv weights (I,O,k,k), y is (N,O,OH,OW).
namespace kernels {

struct Conv2dDims {
    Index n, ci, h, w;    // input
    Index co, k;          // kernel
    Index stride, pad;
    Index oh, ow;         // output
};

namespace serial {
void conv2d_forward(const double* x, const double* wgt, const double* b, double* y, const Conv2dDims& d);
void conv2d_backward_x(const double* gy, const double* wgt, double* gx, const Conv2dDims& d);
void conv2d_backward_w(const double* gy, const double* x, double* gw, const Conv2dDims& d);
void conv2d_backward_b(const double* gy, double* gb, const Conv2dDims& d);

// k = stride = 2 transposed convolution (exact x2 upsampling).
void convt2x2_forward(const double* x, const double* wgt, const double* b, double* y,
                      Index n, Index ci, Index h, Index w, Index co);
void convt2x2_backward_x(const double* gy, const double* wgt, double* gx,
                         Index n, Index ci, Index h, Index w, Index co);
void convt2x2_backward_w(const double* gy, const double* x, double* gw,
                         Index n, Index ci, Index h, Index w, Index co);
void convt2x2_backward_b(const double* gy, double* gb, Index n, Index co, Index oh, Index ow);

void maxpool_forward(const double* x, double* y, std::int64_t* argmax,
                     Index n, Index c, Index h, Index w, Index k, Index stride);
void avgpool_forward(const double* x, double* y, Index n, Index c, Index h, Index w, Index k, Index stride);
void avgpool_backward(const double* gy, double* gx, Index n, Index c, Index h, Index w, Index k, Index stride);

// (B,M,K) x (B,K,N) -> (B,M,N)
void matmul(const double* a, const double* b, double* y, Index bs, Index m, Index k, Index n);
void matmul_backward_a(const double* gy, const double* b, double* ga, Index bs, Index m, Index k, Index n);
void matmul_backward_b(const double* gy, const double* a, double* gb, Index bs, Index m, Index k, Index n);

// Grayscale square-window min/max filters with edge replication.
void min_filter(const double* x, double* y, Index h, Index w, Index r);
void max_filter(const double* x, double* y, Index h, Index w, Index r);
}  // namespace serial

namespace par {
void conv2d_forward(const double* x, const double* wgt, const double* b, double* y, const Conv2dDims& d);
void conv2d_backward_x(const double* gy, const double* wgt, double* gx, const Conv2dDims& d);
void conv2d_backward_w(const double* gy, const double* x, double* gw, const Conv2dDims& d);
void conv2d_backward_b(const double* gy, double* gb, const Conv2dDims& d);

void convt2x2_forward(const double* x, const double* wgt, const double* b, double* y,
                      Index n, Index ci, Index h, Index w, Index co);
void convt2x2_backward_x(const double* gy, const double* wgt, double* gx,
                         Index n, Index ci, Index h, Index w, Index co);
void convt2x2_backward_w(const double* gy, const double* x, double* gw,
                         Index n, Index ci, Index h, Index w, Index co);
void convt2x2_backward_b(const double* gy, double* gb, Index n, Index co, Index oh, Index ow);

void maxpool_forward(const double* x, double* y, std::int64_t* argmax,
                     Index n, Index c, Index h, Index w, Index k, Index stride);
void avgpool_forward(const double* x, double* y, Index n, Index c, Index h, Index w, Index k, Index stride);
void avgpool_backward(const double* gy, double* gx, Index n, Index c, Index h, Index w, Index k, Index stride);

void matmul(const double* a, const double* b, double* y, Index bs, Index m, Index k, Index n);
void matmul_backward_a(const double* gy, const double* b, double* ga, Index bs, Index m, Index k, Index n);
void matmul_backward_b(const double* gy, const double* a, double* gb, Index bs, Index m, Index k, Index n);

void min_filter(const double* x, double* y, Index h, Index w, Index r);
void max_filter(const double* x, double* y, Index h, Index w, Index r);
}  // namespace par

// Dispatchers: serial when threads::count() == 1, OpenMP otherwise.
void conv2d_forward(const double* x, const double* wgt, const double* b, double* y, const Conv2dDims& d);
void conv2d_backward_x(const double* gy, const double* wgt, double* gx, const Conv2dDims& d);
void conv2d_backward_w(const double* gy, const double* x, double* gw, const Conv2dDims& d);
void conv2d_backward_b(const double* gy, double* gb, const Conv2dDims& d);
void convt2x2_forward(const double* x, const double* wgt, const double* b, double* y,
                      Index n, Index ci, Index h, Index w, Index co);
void convt2x2_backward_x(const double* gy, const double* wgt, double* gx,
                         Index n, Index ci, Index h, Index w, Index co);
void convt2x2_backward_w(const double* gy, const double* x, double* gw,
                         Index n, Index ci, Index h, Index w, Index co);
void convt2x2_backward_b(const double* gy, double* gb, Index n, Index co, Index oh, Index ow);
void maxpool_forward(const double* x, double* y, std::int64_t* argmax,
                     Index n, Index c, Index h, Index w, Index k, Index stride);
void avgpool_forward(const double* x, double* y, Index n, Index c, Index h, Index w, Index k, Index stride);
void avgpool_backward(const double* gy, double* gx, Index n, Index c, Index h, Index w, Index k, Index stride);
void matmul(const double* a, const double* b, double* y, Index bs, Index m, Index k, Index n);
void matmul_backward_a(const double* gy, const double* b, double* ga, Index bs, Index m, Index k, Index n);
void matmul_backward_b(const double* gy, const double* a, double* gb, Index bs, Index m, Index k, Index n);
void min_filter(const double* x, double* y, Index h, Index w, Index r);
void max_filter(const double* x, double* y, Index h, Index w, Index r);

}  // namespace kernels
}  // namespace teethseg
