#pragma once

#include <string>

#include "teethseg/model.hpp"
#include "teethseg/optim.hpp"

namespace teethseg {

// Everything needed to continue training bit-identically: parameters and
// buffers, optimizer moments, schedule state, the run RNG and the epoch
// counter. Serialized as magic "TSEGCKPT" + version + JSON manifest +
// little-endian payload of 64-bit reals.
struct TrainState {
    ModelConfig config;
    ParamStore params;
    AdamState opt;
    PlateauSchedule sched;
    std::string rng_state;
    int epoch = 0;
    std::uint64_t seed = 0;
};

inline constexpr char kCheckpointMagic[8] = {'T', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

}  // namespace teethseg
