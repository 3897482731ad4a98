// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include "flexprompt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace flexprompt::metrics {

void ScoreSet::validate() const {
    if (scores.size() != labels.size()) throw std::invalid_argument("score set: length mismatch");
    for (double s : scores)
        if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("score set: score outside [0,1]");
    for (int l : labels)
        if (l != 0 && l != 1) throw std::invalid_argument("score set: label must be 0 (spoof) or 1 (live)");
}

int64_t ScoreSet::count(int label) const {
    int64_t n = 0;
    for (int l : labels) n += (l == label);
    return n;
}

Rates classification_rates(const ScoreSet& s, double tau) {
    s.validate();
    int64_t n_live = 0, n_spoof = 0, live_rejected = 0, spoof_accepted = 0;
    for (size_t i = 0; i < s.scores.size(); ++i) {
        const bool accepted = s.scores[i] >= tau;
        if (s.labels[i] == 1) {
            ++n_live;
            if (!accepted) ++live_rejected;
        } else {
            ++n_spoof;
            if (accepted) ++spoof_accepted;
        }
    }
    if (n_live == 0) throw std::invalid_argument("classification_rates: no live samples, bpcer undefined");
    if (n_spoof == 0) throw std::invalid_argument("classification_rates: no spoof samples, apcer undefined");
    Rates r;
    r.apcer = static_cast<double>(spoof_accepted) / static_cast<double>(n_spoof);
    r.bpcer = static_cast<double>(live_rejected) / static_cast<double>(n_live);
    r.acer = (r.apcer + r.bpcer) / 2.0;
    return r;
}

std::vector<double> candidate_thresholds(const ScoreSet& s) {
    std::set<double> uniq(s.scores.begin(), s.scores.end());
    std::vector<double> sorted(uniq.begin(), uniq.end());
    std::set<double> cand = {0.0, 1.0};
    for (size_t i = 0; i + 1 < sorted.size(); ++i) cand.insert((sorted[i] + sorted[i + 1]) / 2.0);
    return {cand.begin(), cand.end()};
}

EerPick eer_threshold(const ScoreSet& dev) {
    const auto cands = candidate_thresholds(dev);
    EerPick best;
    bool have = false;
    for (double tau : cands) {
        const Rates r = classification_rates(dev, tau);
        const double gap = std::abs(r.apcer - r.bpcer);
        if (!have) {
            best = {tau, r};
            have = true;
            continue;
        }
        const double best_gap = std::abs(best.rates.apcer - best.rates.bpcer);
        if (gap < best_gap || (gap == best_gap && r.acer < best.rates.acer)) best = {tau, r};
        // equal gap and acer: keep the earlier (smaller) tau
    }
    return best;
}

double bpcer_threshold(const ScoreSet& dev, double target) {
    if (!(target > 0.0 && target < 1.0)) throw std::invalid_argument("bpcer_threshold: target must be in (0,1)");
    if (dev.count(1) == 0) throw std::invalid_argument("bpcer_threshold: no live samples");
    const auto cands = candidate_thresholds(dev);
    int64_t n_live = 0;
    for (int l : dev.labels) n_live += (l == 1);
    for (auto it = cands.rbegin(); it != cands.rend(); ++it) {
        int64_t rejected = 0;
        for (size_t i = 0; i < dev.scores.size(); ++i)
            if (dev.labels[i] == 1 && dev.scores[i] < *it) ++rejected;
        if (static_cast<double>(rejected) / static_cast<double>(n_live) <= target) return *it;
    }
    return 0.0;  // unreachable: tau=0 rejects nobody
}

HterResult hter(const ScoreSet& test, double tau) {
    const Rates r = classification_rates(test, tau);
    return {r.apcer, r.bpcer, (r.apcer + r.bpcer) / 2.0};
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["mode"] = mode;
    j["threshold_rule"] = threshold_rule;
    j["threshold"] = threshold;
    j["apcer"] = apcer;
    j["bpcer"] = bpcer;
    j["acer"] = acer;
    j["far"] = far;
    j["frr"] = frr;
    j["hter"] = hter;
    j["n_live"] = n_live;
    j["n_spoof"] = n_spoof;
    j["setting"] = setting;
    if (alpha) j["alpha"] = *alpha;
    if (seed) j["seed"] = *seed;
    return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.mode = j.at("mode").get<std::string>();
    r.threshold_rule = j.at("threshold_rule").get<std::string>();
    r.threshold = j.at("threshold").get<double>();
    r.apcer = j.at("apcer").get<double>();
    r.bpcer = j.at("bpcer").get<double>();
    r.acer = j.at("acer").get<double>();
    r.far = j.at("far").get<double>();
    r.frr = j.at("frr").get<double>();
    r.hter = j.at("hter").get<double>();
    r.n_live = j.at("n_live").get<int64_t>();
    r.n_spoof = j.at("n_spoof").get<int64_t>();
    r.setting = j.value("setting", "");
    if (j.contains("alpha")) r.alpha = j.at("alpha").get<double>();
    if (j.contains("seed")) r.seed = j.at("seed").get<uint64_t>();
    return r;
}

std::string EvalReport::csv_header() {
    return "mode,threshold_rule,threshold,apcer,bpcer,acer,far,frr,hter,n_live,n_spoof,setting,alpha,seed";
}

std::string EvalReport::csv_row() const {
    std::ostringstream os;
    os.precision(10);
    os << mode << ',' << threshold_rule << ',' << threshold << ',' << apcer << ',' << bpcer << ',' << acer << ','
       << far << ',' << frr << ',' << hter << ',' << n_live << ',' << n_spoof << ',' << setting << ',';
    if (alpha) os << *alpha;
    os << ',';
    if (seed) os << *seed;
    return os.str();
}

}  // namespace flexprompt::metrics
