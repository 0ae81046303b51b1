// Benchmark of the OpenMP kernels against the serial reference. Every pair is
// also checked for bit-identical output, which is part of the kernel contract.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "teethseg/kernels.hpp"
#include "teethseg/tensor.hpp"

using namespace teethseg;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<double> random_buf(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

struct Case {
    std::string name;
    std::function<void()> serial;
    std::function<void()> parallel;
    std::function<bool()> equal;
};

}  // namespace

int main(int argc, char** argv) {
    const int reps = argc > 1 ? std::atoi(argv[1]) : 5;
    const int par_threads = threads::count() > 1 ? threads::count() : 4;
    Rng rng(1);

    // conv2d on a training-sized problem
    kernels::Conv2dDims d;
    d.n = 2; d.ci = 16; d.h = 64; d.w = 64; d.co = 32; d.k = 3; d.stride = 1; d.pad = 1;
    d.oh = 64; d.ow = 64;
    const auto x = random_buf(static_cast<std::size_t>(d.n * d.ci * d.h * d.w), rng);
    const auto w = random_buf(static_cast<std::size_t>(d.co * d.ci * d.k * d.k), rng);
    const auto b = random_buf(static_cast<std::size_t>(d.co), rng);
    const auto gy = random_buf(static_cast<std::size_t>(d.n * d.co * d.oh * d.ow), rng);
    std::vector<double> y1(gy.size()), y2(gy.size());
    std::vector<double> gx1(x.size()), gx2(x.size());
    std::vector<double> gw1(w.size()), gw2(w.size());

    const auto a_mm = random_buf(64 * 48 * 32, rng);
    const auto b_mm = random_buf(64 * 32 * 40, rng);
    std::vector<double> y_mm1(64 * 48 * 40), y_mm2(y_mm1.size());

    const Index ih = 512, iw = 512;
    const auto img = random_buf(static_cast<std::size_t>(ih * iw), rng);
    std::vector<double> m1(img.size()), m2(img.size());

    std::vector<Case> cases;
    cases.push_back({"conv2d_forward 2x16x64x64 -> 32ch",
                     [&] { kernels::serial::conv2d_forward(x.data(), w.data(), b.data(), y1.data(), d); },
                     [&] { kernels::par::conv2d_forward(x.data(), w.data(), b.data(), y2.data(), d); },
                     [&] { return y1 == y2; }});
    cases.push_back({"conv2d_backward_x",
                     [&] { kernels::serial::conv2d_backward_x(gy.data(), w.data(), gx1.data(), d); },
                     [&] { kernels::par::conv2d_backward_x(gy.data(), w.data(), gx2.data(), d); },
                     [&] { return gx1 == gx2; }});
    cases.push_back({"conv2d_backward_w",
                     [&] { kernels::serial::conv2d_backward_w(gy.data(), x.data(), gw1.data(), d); },
                     [&] { kernels::par::conv2d_backward_w(gy.data(), x.data(), gw2.data(), d); },
                     [&] { return gw1 == gw2; }});
    cases.push_back({"matmul 64x(48x32)x(32x40)",
                     [&] { kernels::serial::matmul(a_mm.data(), b_mm.data(), y_mm1.data(), 64, 48, 32, 40); },
                     [&] { kernels::par::matmul(a_mm.data(), b_mm.data(), y_mm2.data(), 64, 48, 32, 40); },
                     [&] { return y_mm1 == y_mm2; }});
    cases.push_back({"max_filter 512x512 r=3",
                     [&] { kernels::serial::max_filter(img.data(), m1.data(), ih, iw, 3); },
                     [&] { kernels::par::max_filter(img.data(), m2.data(), ih, iw, 3); },
                     [&] { return m1 == m2; }});

    std::printf("kernel benchmark: serial reference vs OpenMP (%d threads), %d reps\n", par_threads, reps);
    std::printf("%-36s %12s %12s %9s  %s\n", "case", "serial(ms)", "openmp(ms)", "speedup", "bit-equal");
    bool all_equal = true;
    for (auto& c : cases) {
        threads::set_count(1);
        const double ts = time_ms(c.serial, reps);
        threads::set_count(par_threads);
        const double tp = time_ms(c.parallel, reps);
        threads::set_count(1);
        const bool eq = c.equal();
        all_equal = all_equal && eq;
        std::printf("%-36s %12.2f %12.2f %8.2fx  %s\n", c.name.c_str(), ts, tp, ts / tp, eq ? "yes" : "NO");
    }
    if (!all_equal) {
        std::printf("bench: FAILURE - kernel pair outputs differ\n");
        return 1;
    }
    return 0;
}
