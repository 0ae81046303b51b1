#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace teethseg {

// Grayscale raster with intensities in [0, 255], row-major.
struct GrayImage {
    int width = 0, height = 0;
    std::vector<double> v;

    GrayImage() = default;
    GrayImage(int w, int h, double fill = 0.0)
        : width(w), height(h), v(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    double& at(int x, int y) { return v[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return v.size(); }
};

// Per-pixel class-index grid.
struct LabelMask {
    int width = 0, height = 0;
    std::vector<std::uint8_t> v;

    LabelMask() = default;
    LabelMask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), v(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    std::uint8_t& at(int x, int y) { return v[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return v.size(); }
};

// Half-pixel-center bilinear resampling (for images only; labels go through
// resize_nearest).
GrayImage resize_bilinear(const GrayImage& img, int out_w, int out_h);
LabelMask resize_nearest(const LabelMask& mask, int out_w, int out_h);

// Affine min->0, max->255 stretch; constant images map to 0.
GrayImage normalize_range(const GrayImage& img);

namespace morph {
// Grayscale square-window morphology, structuring element side 2r+1, edge
// replication at the borders.
GrayImage erode(const GrayImage& img, int se_radius);
GrayImage dilate(const GrayImage& img, int se_radius);
GrayImage open(const GrayImage& img, int se_radius);
GrayImage close(const GrayImage& img, int se_radius);
}  // namespace morph

// img + sum_r whitetophat(img,r) - sum_r blacktophat(img,r), clamped to
// [0,255]. Radii must be non-empty and strictly increasing.
GrayImage multiscale_enhance(const GrayImage& img, const std::vector<int>& radii);

// Full preprocessing chain: resize (when extents differ) -> normalize ->
// multiscale enhancement.
GrayImage preprocess_image(const GrayImage& img, int out_w, int out_h, const std::vector<int>& radii);

}  // namespace teethseg
