// Experiment orchestration: dataset synthesis, the training regimes
// (supervised, paired-noisy, divergence-penalized, masked, and the two
// boosted-attention variants), inference with mean or attention aggregation,
// and JSON metrics reporting.

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"
#include "n2b/checkpoint.hpp"
#include "n2b/estimators.hpp"
#include "n2b/metrics.hpp"
#include "n2b/synthetic.hpp"

namespace n2b {

enum class TrainMode { supervised, n2n, sure, n2v, n2b_joint, n2b_twostage };

TrainMode train_mode_from_string(const std::string& s);
std::string train_mode_name(TrainMode m);

enum class Aggregation { mean, attention };

struct LrSchedule {
    double start = 3e-4;
    int halve_every = 50;
    double floor = 1e-5;

    double at(int epoch) const;
};

struct AugmentSpec {
    bool enabled = false;
    double sigma_lo = 10.0 / 255.0;  // intensity scale
    double sigma_hi = 40.0 / 255.0;
};

struct DataSpec {
    DataKind kind = DataKind::mixed;
    int height = 32, width = 32;
    int train_count = 2000;
    int test_count = 64;
    std::uint64_t seed = 101;
};

struct ExperimentConfig {
    TrainMode mode = TrainMode::n2b_joint;
    NetworkConfig network;
    BoostConfig boost;
    double sigma = 25.0 / 255.0;  // measurement noise, intensity scale
    LrSchedule lr;
    int batch = 8;
    int epochs = 40;
    int attention_epochs = 20;  // second phase of the two-stage regime
    AugmentSpec augment;
    DataSpec data;
    DivergenceSpec sure_div;  // hutchinson settings for the sure regime
    bool n2v_divergence = false;
    std::uint64_t seed = 7;
    std::string out_dir;

    void validate() const;
};

// Desk-scale defaults: 32x32 single channel, kappa = 2, q = (1, 8, 16), r = 3.
ExperimentConfig default_experiment();

// JSON config convention: sigma fields are quoted on the 8-bit scale and
// divided by 255 when parsed.
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double test_psnr = 0.0;
    double test_ssim = 0.0;
};

struct TrainResult {
    Network net;
    std::optional<AttentionNet> attention;
    std::vector<EpochRecord> history;
    Dataset train_data;  // noisy inputs + clean refs
    Dataset test_data;
};

TrainResult train(const ExperimentConfig& cfg);

Tensor infer(const Network& net, const AttentionNet* attention, const Tensor& x,
             const BoostConfig& boost, Aggregation aggregation, std::uint64_t seed = 0);

nlohmann::json metrics_json(const ExperimentConfig& cfg, const std::vector<EpochRecord>& history);

}  // namespace n2b
