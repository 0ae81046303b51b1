#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "teethseg/image.hpp"
#include "teethseg/tensor.hpp"

namespace teethseg {

// FDI tooth numbering <-> class indices. Index 0 is background; indices 1..32
// follow the quadrant order 11..18, 21..28, 31..38, 41..48.
namespace codebook {
constexpr int kNumClasses = 33;
const std::vector<int>& fdi_numbers();
int index_of_fdi(int fdi);
int fdi_of_index(int index);
std::string class_label(int index);  // "background", "fdi_11", ...
}  // namespace codebook

struct Sample {
    GrayImage image;
    LabelMask mask;
    std::string id;
};

// Stylized panoramic stand-in: two jaw arcs of up to 16 elliptical teeth each,
// drawn left-to-right in FDI arch order with per-seed jitter, occasional
// missing teeth, mild neighbor overlap and a textured background.
// Deterministic per (seed, index).
std::vector<Sample> generate_synthetic(int count, std::uint64_t seed, int w, int h);

struct SplitManifest {
    std::uint64_t seed = 0;
    std::vector<std::string> train, val, test;
};

// Seeded shuffle then 0.70/0.15/0.15 slicing (train and val sizes rounded to
// nearest, remainder to test).
SplitManifest make_split(std::vector<std::string> ids, std::uint64_t seed);

// Directory layout: images/<id>.pgm, masks/<id>.pgm, split.json.
void save_dataset(const std::string& dir, const std::vector<Sample>& samples, const SplitManifest& split);
void save_split(const std::string& dir, const SplitManifest& split);
SplitManifest load_split(const std::string& dir);
Sample load_sample(const std::string& dir, const std::string& id);
const std::vector<std::string>& split_ids(const SplitManifest& split, const std::string& name);

// (1, num_classes, H, W) with exactly one 1 per pixel column.
Tensor encode_one_hot(const LabelMask& mask, int num_classes);
LabelMask argmax_labels(const Tensor& probs);  // (N=1,C,H,W) -> per-pixel argmax, first-index ties

}  // namespace teethseg
