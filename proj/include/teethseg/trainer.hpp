#pragma once

#include <string>
#include <vector>

#include "teethseg/checkpoint.hpp"
#include "teethseg/dataset.hpp"
#include "teethseg/loss.hpp"
#include "teethseg/metrics.hpp"

namespace teethseg {

struct TrainOptions {
    int epochs = 50;
    int batch = 2;
    std::uint64_t seed = 1;
    double lr = 1e-4;
    double loss_eps = 1e-6;
    LossVariant loss_variant = LossVariant::kSquaredDice;
};

struct EpochRow {
    int epoch = 0;
    double lr = 0, train_loss = 0, val_loss = 0, val_dsc = 0, val_ji = 0;
};

struct TrainResult {
    TrainState state;
    std::vector<EpochRow> log;
    std::string last_path, best_path, log_path;
};

// One shuffled train pass per epoch minimizing the total loss, then an
// eval-mode validation pass feeding the plateau schedule. Writes
// checkpoint_last.ckpt, checkpoint_best.ckpt and train_log.csv under out_dir.
// `resume_from` continues a saved run bit-identically.
TrainResult train(const ModelConfig& config, const std::string& data_dir, const std::string& out_dir,
                  const TrainOptions& opts, const std::string& resume_from = "");

struct EvalResult {
    MetricReport report;
    ConfusionCounts counts{codebook::kNumClasses};
};

// Eval-mode forward + argmax over a split, confusion accumulated across
// samples. `oracle` scores the ground truth against itself.
EvalResult evaluate(TrainState& state, const std::string& data_dir, const std::string& split_name,
                    bool oracle = false);

// Table-II column order; one macro row under `label` followed by one row per
// class.
void write_metrics_csv(const std::string& path, const std::string& label, const MetricReport& report);
std::string metrics_csv_row(const std::string& label, const ClassMetrics& m);

LabelMask predict_mask(TrainState& state, const GrayImage& image);

}  // namespace teethseg
