#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flfl/aggregation.hpp"
#include "flfl/data.hpp"
#include "flfl/fssl.hpp"
#include "flfl/metrics.hpp"
#include "flfl/nn.hpp"

namespace flfl {

enum class ThresholdMode { Cat, Fixed };
enum class AggregationMode { Lsaa, Uniform };
enum class PartitionMode { Iid, Dirichlet };
enum class SbnScope { All, Selected };

struct ExperimentConfig {
    ModelSpec model;

    // synthetic task
    int samples_per_class = 0;   // training pool, before the labeled split
    int test_per_class = 100;
    double spread = 0.0;
    int num_labeled = 0;

    // federation shape
    int num_clients = 100;
    int clients_per_round = 10;
    int rounds = 800;
    int local_epochs = 5;
    int server_epochs = 1;
    int client_batch_size = 32;
    int server_batch_size = 10;

    OptimizerConfig optimizer;     // shared family; lr is cosine-annealed per round
    bool cosine_schedule = true;
    double server_momentum = 0.5;  // round-level momentum on the aggregate delta

    SacrConfig sacr;
    ThresholdMode threshold_mode = ThresholdMode::Cat;
    double fixed_tau = 0.95;
    AggregationMode aggregation_mode = AggregationMode::Lsaa;
    PartitionMode partition_mode = PartitionMode::Dirichlet;
    double dirichlet_alpha = 0.3;

    AugmentConfig augment{0.05, 0.2, 0.25};
    bool pseudo_label_weak_view = true;
    SbnScope sbn_scope = SbnScope::All;

    std::uint64_t seed = 0;
    std::string out_dir;  // empty = keep results in memory only
    int workers = 1;

    void validate() const;
};

// Ablation presets: which of the three mechanisms are active.
//   baseline  fixed tau 0.95, uniform aggregation, consistency off
//   cat       adaptive thresholds only
//   cat_sacr  adaptive thresholds + consistency
//   full      adaptive thresholds + consistency + status-aware aggregation
void apply_preset(ExperimentConfig& cfg, const std::string& preset);

// Instrumentation: proof that disabled mechanisms never ran.
struct RunStats {
    std::size_t cat_profile_calls = 0;
    std::size_t lsaa_weight_calls = 0;
};

struct RoundState {
    int round = 0;
    ParamVector global;
    BnStats bn;
    ServerOptState opt;
    double lr = 0.0;
};

struct ExperimentData {
    LabeledSet labeled;
    std::vector<ClientPartition> partitions;
    Matrix test_features;
    std::vector<int> test_labels;
};

double cosine_lr(double base_lr, int t, int T);

std::vector<int> sample_clients(int num_clients, int k, std::uint64_t seed);

ExperimentData build_data(const ExperimentConfig& cfg);

// One communication round, in order: supervised server update; statistics
// refresh; client sampling; per-client pseudo-labeling, thresholding and
// local training (parallel across clients); weighted aggregation with the
// server momentum step; evaluation with fresh statistics.
RoundMetrics run_round(RoundState& state, const ExperimentConfig& cfg,
                       const ExperimentData& data, RunStats& stats);

struct RunResult {
    std::vector<RoundMetrics> metrics;
    ParamVector final_params;
    BnStats final_bn;
    RunStats stats;
};

// Builds data, runs all rounds; when out_dir is set, writes metrics.csv and
// final.ckpt there (creating the directory).
RunResult run_experiment(const ExperimentConfig& cfg);

}  // namespace flfl
