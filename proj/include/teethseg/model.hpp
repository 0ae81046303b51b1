#pragma once

#include <cstdint>

#include "teethseg/blocks.hpp"

namespace teethseg {

// Architecture description. `depth` counts encoder levels including the
// bottleneck: levels 0..depth-2 are conv+pool stages, level depth-1 is the
// bottleneck (optionally followed by a pair of windowed-attention blocks).
// Channel width doubles per level starting at base_width.
struct ModelConfig {
    int depth = 4;
    int base_width = 8;
    int num_classes = 33;
    bool use_deep_supervision = true;
    bool use_swin = true;
    bool use_tab = true;
    int swin_window = 2;
    double dropout_p = 0.1;
    int input_height = 64;
    int input_width = 128;
    int in_channels = 1;

    Index width_at(int level) const { return static_cast<Index>(base_width) << level; }
    // Throws naming the first failing constraint.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct ArchSummary {
    int encoder_stages = 0;  // conv+pool stages (excludes the bottleneck)
    int decoder_stages = 0;
    int swin_blocks = 0;
    int tab_blocks = 0;
    int aux_heads = 0;
    int leftleg_inputs = 0;  // downsampled-image injections
    Index trainable_params = 0;
};

ArchSummary describe(const ModelConfig& config);

// He-uniform conv/linear weights, zero biases, identity norm affines;
// bit-identical parameters for identical (config, seed).
ParamStore build_model(const ModelConfig& config, std::uint64_t seed);

struct ModelOutputs {
    Tensor main;              // (N, num_classes, H, W) probabilities
    std::vector<Tensor> aux;  // scale i = 1..depth-1, extents (H/2^i, W/2^i)
};

// When tp is non-null every trainable parameter is registered on the tape, so
// callers can query gradients through ps.value(name).node after backward.
// Training mode draws dropout masks from `rng` and updates batch-norm running
// statistics.
ModelOutputs model_forward(Tape* tp, ParamStore& ps, const ModelConfig& config, const Tensor& x,
                           bool train, Rng& rng);

}  // namespace teethseg
