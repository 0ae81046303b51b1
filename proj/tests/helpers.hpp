#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "teethseg/tensor.hpp"

namespace testutil {

using teethseg::Index;
using teethseg::Rng;
using teethseg::Shape;
using teethseg::Tensor;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Random values bounded away from zero so finite differences never cross a
// relu kink or create pooling ties.
inline Tensor random_tensor_no_kinks(Shape shape, Rng& rng, double min_mag = 0.1) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) {
        const double mag = min_mag + (1.0 - min_mag) * rng.uniform();
        t[i] = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

inline bool approx(double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol; }

inline std::string temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("teethseg_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

}  // namespace testutil
