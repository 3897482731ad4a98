// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

namespace flexprompt::metrics {

/// Live-probability scores with labels (1 = live, 0 = spoof).
/// Decision rule everywhere: score >= tau predicts live.
struct ScoreSet {
    std::vector<double> scores;
    std::vector<int> labels;
    std::string split;

    void validate() const;  // equal lengths, scores in [0,1], labels in {0,1}
    int64_t count(int label) const;
};

struct Rates {
    double apcer = 0.0;  // spoof accepted as live
    double bpcer = 0.0;  // live rejected as spoof
    double acer = 0.0;   // (apcer + bpcer) / 2
};

/// Throws if either class is empty (rates undefined).
Rates classification_rates(const ScoreSet& s, double tau);

/// Midpoints of adjacent sorted unique scores, plus {0, 1}. Sorted ascending.
std::vector<double> candidate_thresholds(const ScoreSet& s);

struct EerPick {
    double threshold = 0.0;
    Rates rates;  // at threshold, on the same set
};

/// argmin |apcer - bpcer| over candidate_thresholds; ties broken toward
/// smaller acer, then smaller tau.
EerPick eer_threshold(const ScoreSet& dev);

/// Largest candidate tau with bpcer(tau) <= target, i.e. the tightest
/// threshold that still admits enough live samples. tau = 0 (always
/// feasible: every score >= 0) is the fallback.
double bpcer_threshold(const ScoreSet& dev, double target);

struct HterResult {
    double far = 0.0;  // = apcer at tau
    double frr = 0.0;  // = bpcer at tau
    double hter = 0.0;
};

/// Error rates on `test` at a threshold fixed elsewhere (source-domain dev).
HterResult hter(const ScoreSet& test, double tau);

/// One evaluation outcome; serializes to JSON and to a flat CSV row.
struct EvalReport {
    std::string mode;            // "intra" or "cross"
    std::string threshold_rule;  // "eer" or "bpcer:<target>"
    double threshold = 0.0;
    double apcer = 0.0, bpcer = 0.0, acer = 0.0;
    double far = 0.0, frr = 0.0, hter = 0.0;
    int64_t n_live = 0, n_spoof = 0;
    // protocol echo
    std::string setting;
    std::optional<double> alpha;
    std::optional<uint64_t> seed;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
    static std::string csv_header();
    std::string csv_row() const;
};

}  // namespace flexprompt::metrics
