// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include "flexprompt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "flexprompt/checkpoint.hpp"
#include "flexprompt/mmr.hpp"
#include "flexprompt/prompt_engine.hpp"
#include "flexprompt/rng.hpp"
#include "flexprompt/tape.hpp"

namespace fs = std::filesystem;

namespace flexprompt::harness {

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("harness: cannot write " + path);
    out << text;
    if (!out) throw std::runtime_error("harness: write failed for " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("harness: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct ThresholdRule {
    bool eer = true;
    double bpcer_target = 0.0;
};

ThresholdRule parse_threshold_rule(const std::string& rule) {
    if (rule == "eer") return {true, 0.0};
    if (rule.rfind("bpcer:", 0) == 0) {
        const double target = std::stod(rule.substr(6));
        if (!(target > 0.0 && target < 1.0))
            throw std::invalid_argument("harness: bpcer target must be in (0,1): " + rule);
        return {false, target};
    }
    throw std::invalid_argument("harness: unknown threshold rule: " + rule);
}

metrics::EvalReport make_report(const std::string& mode, const std::string& rule,
                                const metrics::ScoreSet& dev_scores, const metrics::ScoreSet& test_scores,
                                const flexdata::ProtocolAssignment& test_assignment) {
    const ThresholdRule tr = parse_threshold_rule(rule);
    const double tau =
        tr.eer ? metrics::eer_threshold(dev_scores).threshold : metrics::bpcer_threshold(dev_scores, tr.bpcer_target);

    metrics::EvalReport r;
    r.mode = mode;
    r.threshold_rule = rule;
    r.threshold = tau;
    const auto rates = metrics::classification_rates(test_scores, tau);
    r.apcer = rates.apcer;
    r.bpcer = rates.bpcer;
    r.acer = rates.acer;
    const auto h = metrics::hter(test_scores, tau);
    r.far = h.far;
    r.frr = h.frr;
    r.hter = h.hter;
    r.n_live = test_scores.count(1);
    r.n_spoof = test_scores.count(0);
    r.setting = flexdata::to_string(test_assignment.spec.setting);
    r.alpha = test_assignment.spec.alpha;
    r.seed = test_assignment.spec.seed;
    return r;
}

}  // namespace

// ---- config ----------------------------------------------------------------

void ExperimentConfig::validate() const {
    model.validate();
    if (optim.lr <= 0.0) throw std::invalid_argument("harness: lr must be positive");
    if (optim.weight_decay < 0.0) throw std::invalid_argument("harness: weight_decay must be >= 0");
    if (optim.beta1 < 0.0 || optim.beta1 >= 1.0 || optim.beta2 < 0.0 || optim.beta2 >= 1.0)
        throw std::invalid_argument("harness: betas must be in [0,1)");
    if (optim.eps <= 0.0) throw std::invalid_argument("harness: eps must be positive");
    if (optim.batch_size < 1) throw std::invalid_argument("harness: batch_size must be >= 1");
    if (optim.epochs < 1) throw std::invalid_argument("harness: epochs must be >= 1");
    if (data.source != "synthetic" && data.source != "directory")
        throw std::invalid_argument("harness: unknown data source: " + data.source);
    if (data.source == "directory" && data.manifest.empty())
        throw std::invalid_argument("harness: directory source needs a manifest path");
    if (data.source == "synthetic" && (data.train_n < 1 || data.dev_n < 2 || data.test_n < 2))
        throw std::invalid_argument("harness: synthetic splits too small");
    if (protocol.alpha < 0.0 || protocol.alpha > 1.0)
        throw std::invalid_argument("harness: protocol alpha must be in [0,1]");
    if (select != "best" && select != "last") throw std::invalid_argument("harness: select must be best or last");
    parse_threshold_rule(threshold_rule);
    if (out_dir.empty()) throw std::invalid_argument("harness: out_dir must be set");
}

std::string ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["model"] = nlohmann::json::parse(model.to_json());
    nlohmann::json o;
    o["lr"] = optim.lr;
    o["weight_decay"] = optim.weight_decay;
    o["beta1"] = optim.beta1;
    o["beta2"] = optim.beta2;
    o["eps"] = optim.eps;
    o["batch_size"] = optim.batch_size;
    o["epochs"] = optim.epochs;
    j["optim"] = o;
    nlohmann::json d;
    d["source"] = data.source;
    d["manifest"] = data.manifest;
    d["train_n"] = data.train_n;
    d["dev_n"] = data.dev_n;
    d["test_n"] = data.test_n;
    d["seed"] = data.seed;
    j["data"] = d;
    nlohmann::json p;
    p["setting"] = flexdata::to_string(protocol.setting);
    p["alpha"] = protocol.alpha;
    p["seed"] = protocol.seed;
    j["protocol"] = p;
    nlohmann::json v;
    v["mmr"] = variant.mmr;
    v["mmr_stop_gradient"] = variant.mmr_stop_gradient;
    j["variant"] = v;
    j["model_seed"] = model_seed;
    j["train_seed"] = train_seed;
    j["backbone_weights"] = backbone_weights;
    j["select"] = select;
    j["threshold_rule"] = threshold_rule;
    j["out_dir"] = out_dir;
    return j.dump();
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ExperimentConfig c;
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model").dump());
    if (j.contains("optim")) {
        const auto& o = j.at("optim");
        c.optim.lr = o.value("lr", c.optim.lr);
        c.optim.weight_decay = o.value("weight_decay", c.optim.weight_decay);
        c.optim.beta1 = o.value("beta1", c.optim.beta1);
        c.optim.beta2 = o.value("beta2", c.optim.beta2);
        c.optim.eps = o.value("eps", c.optim.eps);
        c.optim.batch_size = o.value("batch_size", c.optim.batch_size);
        c.optim.epochs = o.value("epochs", c.optim.epochs);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        c.data.source = d.value("source", c.data.source);
        c.data.manifest = d.value("manifest", c.data.manifest);
        c.data.train_n = d.value("train_n", c.data.train_n);
        c.data.dev_n = d.value("dev_n", c.data.dev_n);
        c.data.test_n = d.value("test_n", c.data.test_n);
        c.data.seed = d.value("seed", c.data.seed);
    }
    if (j.contains("protocol")) {
        const auto& p = j.at("protocol");
        if (p.contains("setting"))
            c.protocol.setting = flexdata::protocol_setting_from_string(p.at("setting").get<std::string>());
        c.protocol.alpha = p.value("alpha", c.protocol.alpha);
        c.protocol.seed = p.value("seed", c.protocol.seed);
    }
    if (j.contains("variant")) {
        const auto& v = j.at("variant");
        c.variant.mmr = v.value("mmr", c.variant.mmr);
        c.variant.mmr_stop_gradient = v.value("mmr_stop_gradient", c.variant.mmr_stop_gradient);
    }
    c.model_seed = j.value("model_seed", c.model_seed);
    c.train_seed = j.value("train_seed", c.train_seed);
    c.backbone_weights = j.value("backbone_weights", c.backbone_weights);
    c.select = j.value("select", c.select);
    c.threshold_rule = j.value("threshold_rule", c.threshold_rule);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.validate();
    return c;
}

uint64_t ExperimentConfig::fingerprint() const { return fnv1a64(to_json()); }

std::string RunRecord::to_json() const {
    nlohmann::json j;
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : epochs) {
        nlohmann::json o;
        o["bce"] = e.bce;
        o["mmr"] = e.mmr;
        o["total"] = e.total;
        o["mask_events"] = e.mask_events;
        o["dev_threshold"] = e.dev_threshold;
        nlohmann::json r;
        r["apcer"] = e.dev.apcer;
        r["bpcer"] = e.dev.bpcer;
        r["acer"] = e.dev.acer;
        o["dev"] = r;
        eps.push_back(o);
    }
    j["epochs"] = eps;
    j["selected_epoch"] = selected_epoch;
    j["test_report"] = nlohmann::json::parse(test_report.to_json());
    j["backbone_fingerprint"] = backbone_fingerprint;
    j["wall_seconds"] = wall_seconds;
    return j.dump();
}

// ---- data ------------------------------------------------------------------

SplitData prepare_split(const ExperimentConfig& cfg, const std::string& split_tag) {
    SplitData out;
    if (cfg.data.source == "synthetic") {
        int64_t n = 0;
        if (split_tag == "train") n = cfg.data.train_n;
        else if (split_tag == "dev") n = cfg.data.dev_n;
        else if (split_tag == "test") n = cfg.data.test_n;
        else throw std::invalid_argument("harness: unknown split tag: " + split_tag);
        out.samples = flexdata::synth_dataset(n, cfg.model.image_size, derive_seed(cfg.data.seed, split_tag));
        for (auto& s : out.samples) s.split = split_tag;
    } else if (cfg.data.source == "directory") {
        auto all = flexdata::load_directory_dataset(cfg.data.manifest, cfg.model.image_size);
        for (auto& s : all)
            if (s.split == split_tag) out.samples.push_back(std::move(s));
        if (out.samples.empty())
            throw std::runtime_error("harness: no samples with split '" + split_tag + "' in " + cfg.data.manifest);
    } else {
        throw std::invalid_argument("harness: unknown data source: " + cfg.data.source);
    }
    std::vector<std::string> ids;
    ids.reserve(out.samples.size());
    for (const auto& s : out.samples) ids.push_back(s.id);
    out.assignment = flexdata::generate_protocol(ids, cfg.protocol, split_tag);
    return out;
}

metrics::ScoreSet score_split(const model::VpfasModel& m, const SplitData& split, int64_t batch_size,
                              const std::string& name) {
    if (batch_size < 1) throw std::invalid_argument("harness: batch_size must be >= 1");
    metrics::ScoreSet out;
    out.split = name;
    const int64_t n = static_cast<int64_t>(split.samples.size());
    for (int64_t beg = 0; beg < n; beg += batch_size) {
        const int64_t end = std::min(n, beg + batch_size);
        std::vector<flexdata::DenseInput> inputs;
        inputs.reserve(static_cast<size_t>(end - beg));
        for (int64_t i = beg; i < end; ++i) {
            const auto& s = split.samples[i];
            inputs.push_back(flexdata::zero_fill(s, split.assignment.availability(s.id)));
        }
        Tape tape;
        tape.set_no_grad(true);
        const auto tp = engine::register_params(tape, m);
        const auto fr = engine::prompted_forward(tape, m, tp, inputs);
        const auto scores = engine::live_scores(tape, fr.logits);
        for (int64_t i = beg; i < end; ++i) {
            out.scores.push_back(scores[static_cast<size_t>(i - beg)]);
            out.labels.push_back(split.samples[i].label);
        }
    }
    out.validate();
    return out;
}

// ---- training ----------------------------------------------------------------

TrainResult train(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(cfg.out_dir);

    SplitData tr = prepare_split(cfg, "train");
    SplitData dev = prepare_split(cfg, "dev");
    SplitData te = prepare_split(cfg, "test");

    write_text(cfg.out_dir + "/config.json", cfg.to_json());
    write_text(cfg.out_dir + "/protocol_train.json", tr.assignment.to_json());
    write_text(cfg.out_dir + "/protocol_dev.json", dev.assignment.to_json());
    write_text(cfg.out_dir + "/protocol_test.json", te.assignment.to_json());

    model::VpfasModel m(cfg.model, cfg.model_seed);
    if (!cfg.backbone_weights.empty()) model::load_pretrained(m, cfg.backbone_weights);
    const uint64_t fp0 = m.backbone_fingerprint();

    struct Slot {
        Tensor m1, m2;
    };
    std::vector<std::string> trainable;
    std::map<std::string, Slot> slots;
    for (size_t i = 0; i < m.params().size(); ++i) {
        const auto& p = m.params().param(i);
        if (!p.trainable) continue;
        trainable.push_back(p.name);
        slots.emplace(p.name, Slot{Tensor(p.value.shape), Tensor(p.value.shape)});
    }

    RunRecord rec;
    rec.backbone_fingerprint = fp0;
    int64_t step_t = 0;
    double best_acer = std::numeric_limits<double>::infinity();
    int64_t best_epoch = -1;
    std::vector<Tensor> best_params;

    const int64_t n = static_cast<int64_t>(tr.samples.size());
    for (int64_t e = 0; e < cfg.optim.epochs; ++e) {
        std::vector<int64_t> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.train_seed, "shuffle", static_cast<uint64_t>(e)));
        shuffle_rng.shuffle(order);
        Rng mask_rng(derive_seed(cfg.train_seed, "mask", static_cast<uint64_t>(e)));

        EpochStats st;
        int64_t steps = 0;
        for (int64_t beg = 0; beg < n; beg += cfg.optim.batch_size) {
            const int64_t end = std::min(n, beg + cfg.optim.batch_size);
            const int64_t B = end - beg;
            std::vector<flexdata::DenseInput> inputs;
            inputs.reserve(static_cast<size_t>(B));
            std::vector<int> labels(static_cast<size_t>(B));
            std::vector<int64_t> masked_rows;
            std::vector<flexdata::DenseInput> complete;
            for (int64_t r = 0; r < B; ++r) {
                const auto& s = tr.samples[static_cast<size_t>(order[static_cast<size_t>(beg + r)])];
                const auto& pa = tr.assignment.availability(s.id);
                const flexdata::ModalityAvailability eff{true, pa.depth && s.has_depth, pa.ir && s.has_ir};
                flexdata::DenseInput planes = flexdata::zero_fill(s, eff);
                labels[static_cast<size_t>(r)] = s.label;
                if (cfg.variant.mmr) {
                    const auto ev = mmr::sample_mask(eff, cfg.model.mask_ratio, mask_rng);
                    if (ev.kind != mmr::MaskKind::NONE) {
                        masked_rows.push_back(r);
                        complete.push_back(planes);
                        inputs.push_back(mmr::apply_mask(planes, ev));
                        ++st.mask_events;
                        continue;
                    }
                }
                inputs.push_back(std::move(planes));
            }

            Tape tape;
            const auto tp = engine::register_params(tape, m);
            const auto fr = engine::prompted_forward(tape, m, tp, inputs);
            ValueId mmr_term = -1;
            if (!masked_rows.empty()) {
                // complete-branch forward; a constant when the stop-gradient is on
                if (cfg.variant.mmr_stop_gradient) tape.set_no_grad(true);
                const auto frc = engine::prompted_forward(tape, m, tp, complete);
                if (cfg.variant.mmr_stop_gradient) tape.set_no_grad(false);
                const ValueId masked_cls = tape.gather_rows(fr.cls, masked_rows);
                mmr_term = mmr::mmr_loss(tape, masked_cls, frc.cls, cfg.variant.mmr_stop_gradient);
            }
            const ValueId loss = mmr::total_loss(tape, fr.logits, labels, mmr_term, cfg.model.mmr_weight);

            const double total_v = tape.val(loss).data[0];
            const double mmr_v = mmr_term >= 0 ? tape.val(mmr_term).data[0] : 0.0;
            const double bce_v = mmr_term >= 0 ? total_v - cfg.model.mmr_weight * mmr_v : total_v;
            if (!std::isfinite(total_v)) {
                char buf[192];
                std::snprintf(buf, sizeof buf,
                              "train: non-finite loss at epoch %lld step %lld (total=%g bce=%g mmr=%g); aborting",
                              static_cast<long long>(e), static_cast<long long>(steps), total_v, bce_v, mmr_v);
                throw std::runtime_error(buf);
            }
            tape.backward(loss);

            ++step_t;
            const double bc1 = 1.0 - std::pow(cfg.optim.beta1, static_cast<double>(step_t));
            const double bc2 = 1.0 - std::pow(cfg.optim.beta2, static_cast<double>(step_t));
            for (const auto& name : trainable) {
                Tensor& w = m.params().at(name);
                const Tensor& g0 = tape.grad(tp.id(name));
                Slot& sl = slots.at(name);
                for (size_t k = 0; k < w.data.size(); ++k) {
                    const double g = g0.data[k] + cfg.optim.weight_decay * w.data[k];
                    sl.m1.data[k] = cfg.optim.beta1 * sl.m1.data[k] + (1.0 - cfg.optim.beta1) * g;
                    sl.m2.data[k] = cfg.optim.beta2 * sl.m2.data[k] + (1.0 - cfg.optim.beta2) * g * g;
                    const double mh = sl.m1.data[k] / bc1;
                    const double vh = sl.m2.data[k] / bc2;
                    w.data[k] -= cfg.optim.lr * mh / (std::sqrt(vh) + cfg.optim.eps);
                }
            }
            st.bce += bce_v;
            st.mmr += mmr_v;
            st.total += total_v;
            ++steps;
        }
        st.bce /= static_cast<double>(steps);
        st.mmr /= static_cast<double>(steps);
        st.total /= static_cast<double>(steps);

        const auto dev_scores = score_split(m, dev, cfg.optim.batch_size, "dev");
        const auto pick = metrics::eer_threshold(dev_scores);
        st.dev_threshold = pick.threshold;
        st.dev = pick.rates;
        rec.epochs.push_back(st);

        if (pick.rates.acer < best_acer) {
            best_acer = pick.rates.acer;
            best_epoch = e;
            best_params.clear();
            for (const auto& name : trainable) best_params.push_back(m.params().at(name));
        }
    }

    if (cfg.select == "best" && best_epoch >= 0) {
        for (size_t i = 0; i < trainable.size(); ++i) m.params().at(trainable[i]).data = best_params[i].data;
        rec.selected_epoch = best_epoch;
    } else {
        rec.selected_epoch = cfg.optim.epochs - 1;
    }

    if (m.backbone_fingerprint() != fp0)
        throw std::logic_error("train: frozen backbone changed during training");

    const std::string ckpt_path = cfg.out_dir + "/checkpoint.bin";
    ckpt::save_checkpoint(ckpt_path, m, cfg.model_seed, cfg.backbone_weights);

    const auto dev_scores = score_split(m, dev, cfg.optim.batch_size, "dev");
    const auto test_scores = score_split(m, te, cfg.optim.batch_size, "test");
    rec.test_report = make_report("intra", cfg.threshold_rule, dev_scores, test_scores, te.assignment);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(cfg.out_dir + "/run.json", rec.to_json());
    return {ckpt_path, rec};
}

// ---- evaluation ---------------------------------------------------------------

metrics::EvalReport evaluate(const EvalRequest& req, const SplitData& dev, const SplitData& test) {
    if (req.mode != "intra" && req.mode != "cross")
        throw std::invalid_argument("harness: eval mode must be intra or cross");
    model::VpfasModel m = ckpt::load_model(req.checkpoint, req.allow_backbone_mismatch);
    const auto dev_scores = score_split(m, dev, 16, "dev");
    const auto test_scores = score_split(m, test, 16, "test");
    return make_report(req.mode, req.threshold_rule, dev_scores, test_scores, test.assignment);
}

// ---- sweeps ------------------------------------------------------------------

ExperimentConfig apply_variant(const ExperimentConfig& base, const std::string& variant) {
    ExperimentConfig c = base;
    if (variant == "vpfas") {
        // the base configuration point
    } else if (variant == "no_mmr") {
        c.variant.mmr = false;
    } else if (variant == "no_sg") {
        c.variant.mmr = true;
        c.variant.mmr_stop_gradient = false;
    } else if (variant == "vanilla_prompt") {
        c.model.prompt_mode = PromptMode::vanilla_only;
    } else if (variant == "contextual_prompt") {
        c.model.prompt_mode = PromptMode::contextual_only;
    } else if (variant == "prompt") {
        c.model.prompt_mode = PromptMode::vanilla_only;
        c.variant.mmr = false;
    } else if (variant == "vit") {
        c.model.prompt_length = 0;
        c.variant.mmr = false;
    } else {
        throw std::invalid_argument("harness: unknown variant: " + variant);
    }
    return c;
}

namespace {

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// One ACER-vs-alpha chart: a polyline per variant, median over seeds.
std::string write_acer_plot(const std::string& out_dir, const std::string& setting,
                            const std::vector<SweepCell>& cells, const std::vector<double>& alphas,
                            const std::vector<std::string>& variants) {
    static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                     "#ff7f0e", "#8c564b", "#17becf"};
    const double W = 640, H = 420, L = 70, R = 24, T = 40, Bm = 56;

    // variant -> alpha -> median acer over finished seeds
    std::map<std::string, std::map<double, double>> lines;
    double ymax = 0.0;
    for (const auto& variant : variants) {
        for (const double a : alphas) {
            std::vector<double> acers;
            for (const auto& c : cells)
                if (c.setting == setting && c.variant == variant && c.alpha == a &&
                    c.status.rfind("failed", 0) != 0)
                    acers.push_back(c.report.acer);
            if (acers.empty()) continue;
            const double v = median(acers);
            lines[variant][a] = v;
            ymax = std::max(ymax, v);
        }
    }
    double xmin = *std::min_element(alphas.begin(), alphas.end());
    double xmax = *std::max_element(alphas.begin(), alphas.end());
    if (xmax - xmin < 1e-12) {
        xmin -= 0.05;
        xmax += 0.05;
    }
    ymax = std::max(0.1, std::ceil((ymax + 0.02) * 20.0) / 20.0);

    const auto px = [&](double a) { return L + (a - xmin) / (xmax - xmin) * (W - L - R); };
    const auto py = [&](double v) { return T + (1.0 - v / ymax) * (H - T - Bm); };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << " " << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << setting
      << ": ACER vs alpha</text>\n";
    // axes
    s << "<line x1=\"" << L << "\" y1=\"" << H - Bm << "\" x2=\"" << W - R << "\" y2=\"" << H - Bm
      << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - Bm
      << "\" stroke=\"black\"/>\n";
    // y ticks
    for (int i = 0; i <= 5; ++i) {
        const double v = ymax * i / 5.0;
        s << "<line x1=\"" << L - 4 << "\" y1=\"" << py(v) << "\" x2=\"" << L << "\" y2=\"" << py(v)
          << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << L - 8 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
    }
    // x ticks at the swept alphas (thinned when crowded)
    const size_t stride = alphas.size() > 11 ? (alphas.size() + 10) / 11 : 1;
    for (size_t i = 0; i < alphas.size(); i += stride) {
        const double a = alphas[i];
        s << "<line x1=\"" << px(a) << "\" y1=\"" << H - Bm << "\" x2=\"" << px(a) << "\" y2=\"" << H - Bm + 4
          << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << px(a) << "\" y=\"" << H - Bm + 18 << "\" text-anchor=\"middle\">" << fmt(a)
          << "</text>\n";
    }
    s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 14 << "\" text-anchor=\"middle\">alpha</text>\n";
    s << "<text x=\"18\" y=\"" << (T + H - Bm) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << (T + H - Bm) / 2 << ")\">ACER</text>\n";

    size_t ci = 0;
    double ly = T + 8;
    for (const auto& variant : variants) {
        const char* color = kPalette[ci % (sizeof kPalette / sizeof kPalette[0])];
        ++ci;
        const auto it = lines.find(variant);
        if (it != lines.end() && !it->second.empty()) {
            std::ostringstream pts;
            for (const auto& [a, v] : it->second) pts << px(a) << "," << py(v) << " ";
            s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts.str()
              << "\"/>\n";
            for (const auto& [a, v] : it->second)
                s << "<circle cx=\"" << px(a) << "\" cy=\"" << py(v) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        s << "<rect x=\"" << W - R - 150 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\"" << color
          << "\"/>\n";
        s << "<text x=\"" << W - R - 136 << "\" y=\"" << ly << "\">" << variant << "</text>\n";
        ly += 16;
    }
    s << "</svg>\n";

    const std::string path = out_dir + "/plot_" + setting + ".svg";
    write_text(path, s.str());
    return path;
}

}  // namespace

SweepResult sweep_alpha(const SweepRequest& req) {
    if (req.settings.empty() || req.alphas.empty() || req.seeds.empty() || req.variants.empty())
        throw std::invalid_argument("sweep: every axis needs at least one value");
    if (req.out_dir.empty()) throw std::invalid_argument("sweep: out_dir must be set");
    fs::create_directories(req.out_dir);
    std::string cache = req.cache_dir;
    if (cache.empty()) {
        const char* env = std::getenv("FLEXPROMPT_CACHE");
        cache = (env && *env) ? env : req.out_dir + "/cache";
    }
    fs::create_directories(cache);

    SweepResult res;
    for (const auto& setting : req.settings) {
        for (const double alpha : req.alphas) {
            for (const uint64_t seed : req.seeds) {
                for (const auto& variant : req.variants) {
                    SweepCell cell;
                    cell.setting = setting;
                    cell.alpha = alpha;
                    cell.seed = seed;
                    cell.variant = variant;
                    try {
                        ExperimentConfig c = apply_variant(req.base, variant);
                        c.protocol.setting = flexdata::protocol_setting_from_string(setting);
                        c.protocol.alpha = alpha;
                        c.protocol.seed = seed;
                        c.train_seed = seed;
                        c.data.seed = derive_seed(req.base.data.seed, "sweep-data", seed);
                        const std::string key = hex64(c.fingerprint());
                        c.out_dir = req.out_dir + "/cells/" + key;
                        const std::string cache_file = cache + "/" + key + ".json";
                        if (req.resume && fs::exists(cache_file)) {
                            cell.report = metrics::EvalReport::from_json(read_text(cache_file));
                            cell.status = "cached";
                        } else {
                            cell.report = train(c).record.test_report;
                            write_text(cache_file, cell.report.to_json());
                            cell.status = "ok";
                        }
                    } catch (const std::exception& ex) {
                        cell.status = std::string("failed: ") + ex.what();
                        std::fprintf(stderr, "sweep: cell %s alpha=%s seed=%llu %s -> %s\n", setting.c_str(),
                                     fmt(alpha).c_str(), static_cast<unsigned long long>(seed), variant.c_str(),
                                     cell.status.c_str());
                    }
                    res.cells.push_back(std::move(cell));
                }
            }
        }
    }

    res.csv_path = req.out_dir + "/sweep.csv";
    {
        std::ostringstream csv;
        csv << "setting,alpha,seed,variant,metric,value\n";
        for (const auto& c : res.cells) {
            const std::string prefix =
                c.setting + "," + fmt(c.alpha) + "," + std::to_string(c.seed) + "," + c.variant + ",";
            const bool failed = c.status.rfind("failed", 0) == 0;
            csv << prefix << "status," << (failed ? 0 : 1) << "\n";
            if (failed) continue;
            csv << prefix << "acer," << fmt(c.report.acer) << "\n";
            csv << prefix << "apcer," << fmt(c.report.apcer) << "\n";
            csv << prefix << "bpcer," << fmt(c.report.bpcer) << "\n";
            csv << prefix << "hter," << fmt(c.report.hter) << "\n";
            csv << prefix << "threshold," << fmt(c.report.threshold) << "\n";
        }
        write_text(res.csv_path, csv.str());
    }

    for (const auto& setting : req.settings)
        res.plot_paths.push_back(write_acer_plot(req.out_dir, setting, res.cells, req.alphas, req.variants));
    return res;
}

}  // namespace flexprompt::harness
