#include "teethseg/image.hpp"

#include <algorithm>
#include <cmath>

#include "teethseg/kernels.hpp"
#include "teethseg/tensor.hpp"

namespace teethseg {

GrayImage resize_bilinear(const GrayImage& img, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) fail("resize_bilinear: output extents must be >= 1");
    if (out_w == img.width && out_h == img.height) return img;
    GrayImage out(out_w, out_h);
    const double sx = static_cast<double>(img.width) / out_w;
    const double sy = static_cast<double>(img.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            const double top = (1.0 - wx) * img.at(x0, y0) + wx * img.at(x1, y0);
            const double bot = (1.0 - wx) * img.at(x0, y1) + wx * img.at(x1, y1);
            out.at(x, y) = (1.0 - wy) * top + wy * bot;
        }
    }
    return out;
}

LabelMask resize_nearest(const LabelMask& mask, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) fail("resize_nearest: output extents must be >= 1");
    if (out_w == mask.width && out_h == mask.height) return mask;
    LabelMask out(out_w, out_h);
    const double sx = static_cast<double>(mask.width) / out_w;
    const double sy = static_cast<double>(mask.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const int syi = std::clamp(static_cast<int>(std::lround((y + 0.5) * sy - 0.5)), 0, mask.height - 1);
        for (int x = 0; x < out_w; ++x) {
            const int sxi = std::clamp(static_cast<int>(std::lround((x + 0.5) * sx - 0.5)), 0, mask.width - 1);
            out.at(x, y) = mask.at(sxi, syi);
        }
    }
    return out;
}

GrayImage normalize_range(const GrayImage& img) {
    if (img.v.empty()) return img;
    const auto [mn_it, mx_it] = std::minmax_element(img.v.begin(), img.v.end());
    const double mn = *mn_it, mx = *mx_it;
    GrayImage out(img.width, img.height);
    if (mx == mn) return out;  // constant maps to 0
    const double k = 255.0 / (mx - mn);
    for (std::size_t i = 0; i < img.v.size(); ++i) out.v[i] = (img.v[i] - mn) * k;
    return out;
}

namespace morph {

static void check_radius(int r) {
    if (r < 1) fail("morphology: structuring-element radius must be >= 1, got " + std::to_string(r));
}

GrayImage erode(const GrayImage& img, int r) {
    check_radius(r);
    GrayImage out(img.width, img.height);
    kernels::min_filter(img.v.data(), out.v.data(), img.height, img.width, r);
    return out;
}

GrayImage dilate(const GrayImage& img, int r) {
    check_radius(r);
    GrayImage out(img.width, img.height);
    kernels::max_filter(img.v.data(), out.v.data(), img.height, img.width, r);
    return out;
}

GrayImage open(const GrayImage& img, int r) { return dilate(erode(img, r), r); }

GrayImage close(const GrayImage& img, int r) { return erode(dilate(img, r), r); }

}  // namespace morph

GrayImage multiscale_enhance(const GrayImage& img, const std::vector<int>& radii) {
    if (radii.empty()) fail("multiscale_enhance: radii must be non-empty");
    for (std::size_t i = 0; i + 1 < radii.size(); ++i)
        if (radii[i] >= radii[i + 1]) fail("multiscale_enhance: radii must be strictly increasing");
    GrayImage out = img;
    for (int r : radii) {
        const GrayImage opened = morph::open(img, r);
        const GrayImage closed = morph::close(img, r);
        for (std::size_t i = 0; i < out.v.size(); ++i) {
            const double white = img.v[i] - opened.v[i];
            const double black = closed.v[i] - img.v[i];
            out.v[i] += white - black;
        }
    }
    for (auto& p : out.v) p = std::clamp(p, 0.0, 255.0);
    return out;
}

GrayImage preprocess_image(const GrayImage& img, int out_w, int out_h, const std::vector<int>& radii) {
    GrayImage r = resize_bilinear(img, out_w, out_h);
    return multiscale_enhance(normalize_range(r), radii);
}

}  // namespace teethseg
