#pragma once

#include <string>
#include <vector>

#include "teethseg/loss.hpp"
#include "teethseg/model.hpp"
#include "teethseg/trainer.hpp"

namespace teethseg {

// JSON run configuration. Every key has a schema default, unknown keys are
// rejected, and all violations of a file are reported at once.
struct RunConfig {
    ModelConfig model;
    int epochs = 50;
    int batch = 2;
    std::uint64_t seed = 1;
    double lr = 1e-4;
    double loss_eps = 1e-6;
    std::string loss = "squared-dice";  // or "eq1-verbatim"
    std::vector<int> radii = {1, 2, 3};
    std::string data_dir;
    std::string out_dir;

    TrainOptions train_options() const;
    LossVariant loss_variant() const;
};

std::string run_config_to_json(const RunConfig& rc);
RunConfig run_config_from_json(const std::string& text);  // throws listing every violation
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& rc);

}  // namespace teethseg
