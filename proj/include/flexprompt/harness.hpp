// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flexprompt/config.hpp"
#include "flexprompt/flexdata.hpp"
#include "flexprompt/metrics.hpp"
#include "flexprompt/model.hpp"

namespace flexprompt::harness {

struct OptimConfig {
    double lr = 2e-4;
    double weight_decay = 5e-3;  // L2 folded into the gradient
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t batch_size = 16;
    int64_t epochs = 8;
};

struct DataConfig {
    std::string source = "synthetic";  // or "directory"
    std::string manifest;              // directory source only
    int64_t train_n = 160;             // synthetic split sizes
    int64_t dev_n = 80;
    int64_t test_n = 120;
    uint64_t seed = 1;  // synthetic generator; splits derive independent streams
};

struct VariantFlags {
    bool mmr = true;
    bool mmr_stop_gradient = true;
};

/// Everything a run needs; serializes to canonical JSON. The resolved copy
/// is written next to the run outputs so any result can be reproduced.
struct ExperimentConfig {
    ModelConfig model;
    OptimConfig optim;
    DataConfig data;
    flexdata::ProtocolSpec protocol;  // applied per split via split tags
    VariantFlags variant;
    uint64_t model_seed = 0;  // backbone + prompt init
    uint64_t train_seed = 0;  // shuffles and mask draws
    std::string backbone_weights;       // optional pretrained backbone file
    std::string select = "best";        // "best" dev ACER or "last" epoch
    std::string threshold_rule = "eer";  // or "bpcer:<target>"
    std::string out_dir;

    void validate() const;
    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
    uint64_t fingerprint() const;  // hash of the canonical JSON
};

struct EpochStats {
    double bce = 0.0;  // means over the epoch's steps
    double mmr = 0.0;
    double total = 0.0;
    int64_t mask_events = 0;
    double dev_threshold = 0.0;  // dev EER pick for selection
    metrics::Rates dev;
};

struct RunRecord {
    std::vector<EpochStats> epochs;
    int64_t selected_epoch = -1;
    metrics::EvalReport test_report;
    uint64_t backbone_fingerprint = 0;
    double wall_seconds = 0.0;

    std::string to_json() const;
};

struct SplitData {
    std::vector<flexdata::MultimodalSample> samples;
    flexdata::ProtocolAssignment assignment;
};

/// Loads (or synthesizes) one split and draws its protocol assignment.
/// Synthetic splits derive independent sample streams from data.seed; the
/// directory source filters the manifest by the split column.
SplitData prepare_split(const ExperimentConfig& cfg, const std::string& split_tag);

/// No-grad forward over the split under protocol availability.
metrics::ScoreSet score_split(const model::VpfasModel& m, const SplitData& split, int64_t batch_size,
                              const std::string& name);

struct TrainResult {
    std::string checkpoint_path;
    RunRecord record;
};

/// Full run: writes the resolved config, per-split protocols, the selected
/// checkpoint and the run record under cfg.out_dir. Throws on non-finite
/// loss (with step diagnostics) and if training touched the frozen backbone.
TrainResult train(const ExperimentConfig& cfg);

struct EvalRequest {
    std::string checkpoint;
    std::string mode = "intra";          // or "cross"
    std::string threshold_rule = "eer";  // or "bpcer:<target>"
    bool allow_backbone_mismatch = false;
};

/// intra: threshold picked on dev, rates reported on test. cross: threshold
/// fixed on the source-domain dev set, HTER reported on the target test set.
metrics::EvalReport evaluate(const EvalRequest& req, const SplitData& dev, const SplitData& test);

// ---- alpha sweeps ---------------------------------------------------------

/// Named configuration points reachable from a base config:
///   vpfas            full method
///   no_mmr           masking regularizer off
///   no_sg            MMR without the stop-gradient
///   vanilla_prompt   all prompt slots vanilla (MMR kept)
///   contextual_prompt all slots residual contextual (MMR kept)
///   prompt           vanilla-only prompts, MMR off
///   vit              no prompts, MMR off (frozen backbone + head)
ExperimentConfig apply_variant(const ExperimentConfig& base, const std::string& variant);

struct SweepRequest {
    ExperimentConfig base;
    std::vector<std::string> settings;  // protocol setting names
    std::vector<double> alphas;
    std::vector<uint64_t> seeds;
    std::vector<std::string> variants;
    std::string out_dir;
    std::string cache_dir;  // empty: $FLEXPROMPT_CACHE, else out_dir/cache
    bool resume = false;    // reuse cached cells instead of recomputing
};

struct SweepCell {
    std::string setting;
    double alpha = 0.0;
    uint64_t seed = 0;
    std::string variant;
    std::string status;  // "ok", "cached" or "failed: <reason>"
    metrics::EvalReport report;  // valid unless failed
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::string csv_path;
    std::vector<std::string> plot_paths;
};

/// Runs every setting x alpha x seed x variant cell. Failed cells are
/// recorded and the sweep continues. Finished cells are cached under their
/// config fingerprint. Writes a long-format CSV
/// (setting,alpha,seed,variant,metric,value) and one ACER-vs-alpha SVG plot
/// per setting with a line per variant.
SweepResult sweep_alpha(const SweepRequest& req);

}  // namespace flexprompt::harness
