// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flexprompt/checkpoint.hpp"
#include "flexprompt/flexdata.hpp"
#include "flexprompt/harness.hpp"
#include "flexprompt/metrics.hpp"

using namespace flexprompt;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spill(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

std::vector<std::string> split_commas(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(text);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    return out;
}

/// "0:1:0.1" (inclusive range) or a comma list like "0,0.3,0.7".
std::vector<double> parse_alphas(const std::string& text) {
    std::vector<double> out;
    const auto c1 = text.find(':');
    if (c1 != std::string::npos) {
        const auto c2 = text.find(':', c1 + 1);
        if (c2 == std::string::npos) throw std::invalid_argument("alpha range needs start:end:step");
        const double start = std::stod(text.substr(0, c1));
        const double end = std::stod(text.substr(c1 + 1, c2 - c1 - 1));
        const double step = std::stod(text.substr(c2 + 1));
        if (step <= 0.0 || end < start) throw std::invalid_argument("bad alpha range: " + text);
        const auto k = static_cast<int64_t>((end - start) / step + 0.5);
        for (int64_t i = 0; i <= k; ++i) out.push_back(start + static_cast<double>(i) * step);
        return out;
    }
    for (const auto& tok : split_commas(text)) out.push_back(std::stod(tok));
    if (out.empty()) throw std::invalid_argument("no alphas in: " + text);
    return out;
}

std::vector<uint64_t> parse_seeds(const std::string& text) {
    std::vector<uint64_t> out;
    for (const auto& tok : split_commas(text)) out.push_back(std::stoull(tok));
    if (out.empty()) throw std::invalid_argument("no seeds in: " + text);
    return out;
}

/// id and split columns of a dataset manifest, without decoding any image.
std::vector<std::pair<std::string, std::string>> manifest_ids(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty manifest: " + path);
    std::vector<std::pair<std::string, std::string>> out;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_commas(line);
        if (fields.size() < 6) throw std::runtime_error("manifest row with under 6 fields: " + line);
        out.emplace_back(fields[0], fields[5]);
    }
    return out;
}

/// "synth:<n>:<seed>" makes a balanced synthetic split; anything else is a
/// manifest path filtered by split tag.
harness::SplitData make_eval_split(const std::string& spec, const std::string& tag, int64_t image_size,
                                   const flexdata::ProtocolSpec& proto, const std::string& protocol_file) {
    harness::SplitData out;
    if (spec.rfind("synth:", 0) == 0) {
        const auto rest = spec.substr(6);
        const auto colon = rest.find(':');
        if (colon == std::string::npos) throw std::invalid_argument("synth spec needs synth:<n>:<seed>");
        const int64_t n = std::stoll(rest.substr(0, colon));
        const uint64_t seed = std::stoull(rest.substr(colon + 1));
        out.samples = flexdata::synth_dataset(n, image_size, seed);
        for (auto& s : out.samples) s.split = tag;
    } else {
        auto all = flexdata::load_directory_dataset(spec, image_size);
        for (auto& s : all)
            if (s.split == tag) out.samples.push_back(std::move(s));
        if (out.samples.empty()) throw std::runtime_error("no samples with split '" + tag + "' in " + spec);
    }
    if (!protocol_file.empty()) {
        out.assignment = flexdata::ProtocolAssignment::from_json(slurp(protocol_file));
    } else {
        std::vector<std::string> ids;
        for (const auto& s : out.samples) ids.push_back(s.id);
        out.assignment = flexdata::generate_protocol(ids, proto, tag);
    }
    return out;
}

void print_report(const metrics::EvalReport& r) {
    std::printf("%s\n", r.to_json().c_str());
    std::printf("# mode=%s rule=%s tau=%.6f acer=%.4f apcer=%.4f bpcer=%.4f hter=%.4f\n", r.mode.c_str(),
                r.threshold_rule.c_str(), r.threshold, r.acer, r.apcer, r.bpcer, r.hter);
}

ModelConfig toy_model_config() {
    ModelConfig m;
    m.image_size = 32;
    m.patch_size = 16;
    m.num_layers = 2;
    m.embed_dim = 32;
    m.num_heads = 4;
    m.mlp_ratio = 2.0;
    m.prompt_length = 4;
    m.hidden_dim = 4;
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flexprompt: flexible-modal face anti-spoofing with visual prompts"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "Write a synthetic PPM/PGM dataset with a manifest");
    int64_t synth_n = 64, synth_size = 32;
    uint64_t synth_seed = 1;
    std::string synth_out, synth_splits;
    synth->add_option("--n", synth_n, "Sample count (balanced live/spoof)");
    synth->add_option("--size", synth_size, "Image side length");
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--splits", synth_splits, "Split ranges, e.g. train:24,dev:12,test:12 (sum replaces --n)");
    synth->callback([&] {
        std::vector<std::pair<std::string, int64_t>> ranges;
        if (!synth_splits.empty()) {
            int64_t total = 0;
            for (const auto& tok : split_commas(synth_splits)) {
                const auto colon = tok.find(':');
                if (colon == std::string::npos) throw std::invalid_argument("split ranges look like train:24");
                ranges.emplace_back(tok.substr(0, colon), std::stoll(tok.substr(colon + 1)));
                total += ranges.back().second;
            }
            synth_n = total;
        }
        auto samples = flexdata::synth_dataset(synth_n, synth_size, synth_seed);
        size_t at = 0;
        for (const auto& [tag, count] : ranges)
            for (int64_t i = 0; i < count; ++i) samples[at++].split = tag;
        const auto manifest = flexdata::write_dataset(synth_out, samples);
        std::printf("wrote %lld samples, manifest %s\n", static_cast<long long>(synth_n), manifest.c_str());
    });

    // ---- protocol gen ----
    auto* proto = app.add_subcommand("protocol", "Flexible-modal protocol files");
    auto* gen = proto->add_subcommand("gen", "Draw a protocol assignment over a set of ids");
    std::string gen_setting, gen_manifest, gen_out, gen_tag;
    double gen_alpha = 0.0;
    uint64_t gen_seed = 0;
    int64_t gen_synth_n = 0;
    gen->add_option("--setting", gen_setting, "rgbd_miss_d | rgbir_miss_ir | rgbdir_overlap | rgbdir_limited")
        ->required();
    gen->add_option("--alpha", gen_alpha, "Missing-modality fraction in [0,1]")->required();
    gen->add_option("--seed", gen_seed, "Assignment seed");
    gen->add_option("--manifest", gen_manifest, "Dataset manifest supplying the ids");
    gen->add_option("--synth", gen_synth_n, "Use n synthetic ids instead of a manifest");
    gen->add_option("--split-tag", gen_tag, "Filter manifest rows and derive a per-split stream");
    gen->add_option("--out", gen_out, "Assignment JSON path")->required();
    gen->callback([&] {
        std::vector<std::string> ids;
        if (gen_synth_n > 0) {
            for (int64_t i = 0; i < gen_synth_n; ++i) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "synth-%06lld", static_cast<long long>(i));
                ids.push_back(buf);
            }
        } else if (!gen_manifest.empty()) {
            for (const auto& [id, split] : manifest_ids(gen_manifest))
                if (gen_tag.empty() || split == gen_tag) ids.push_back(id);
            if (ids.empty()) throw std::runtime_error("no manifest ids matched split '" + gen_tag + "'");
        } else {
            throw std::invalid_argument("protocol gen needs --manifest or --synth");
        }
        flexdata::ProtocolSpec spec;
        spec.setting = flexdata::protocol_setting_from_string(gen_setting);
        spec.alpha = gen_alpha;
        spec.seed = gen_seed;
        const auto pa = flexdata::generate_protocol(ids, spec, gen_tag);
        spill(gen_out, pa.to_json());
        std::printf("wrote %s: rgb_only=%lld rgbd=%lld rgbir=%lld complete=%lld\n", gen_out.c_str(),
                    static_cast<long long>(pa.counts.rgb_only), static_cast<long long>(pa.counts.rgbd),
                    static_cast<long long>(pa.counts.rgbir), static_cast<long long>(pa.counts.complete));
    });

    // ---- config init ----
    auto* conf = app.add_subcommand("config", "Experiment config files");
    auto* init = conf->add_subcommand("init", "Write a starter experiment config");
    std::string init_out = "experiment.json";
    bool init_toy = false;
    init->add_option("--out", init_out, "Config path");
    init->add_flag("--toy", init_toy, "Desk-scale model and splits instead of the full-size defaults");
    init->callback([&] {
        harness::ExperimentConfig c;
        c.out_dir = "runs/exp";
        if (init_toy) {
            c.model = toy_model_config();
            c.optim.batch_size = 8;
            c.optim.epochs = 3;
            c.optim.lr = 0.02;
            c.data.train_n = 24;
            c.data.dev_n = 12;
            c.data.test_n = 12;
            c.protocol.alpha = 0.5;
        }
        spill(init_out, c.to_json());
        std::printf("wrote %s\n", init_out.c_str());
    });

    // ---- train ----
    auto* tr = app.add_subcommand("train", "Train prompts and head on a protocol");
    std::string tr_config, tr_out, tr_select;
    bool tr_vanilla = false, tr_contextual = false, tr_no_mmr = false, tr_no_sg = false;
    tr->add_option("--config", tr_config, "Experiment config JSON")->required();
    tr->add_option("--out", tr_out, "Override the config's out_dir");
    tr->add_option("--select", tr_select, "best | last");
    auto* fv = tr->add_flag("--vanilla-prompt-only", tr_vanilla, "Spend the whole prompt budget on vanilla slots");
    auto* fc = tr->add_flag("--contextual-only", tr_contextual, "Spend the whole prompt budget on contextual slots");
    fv->excludes(fc);
    fc->excludes(fv);
    tr->add_flag("--no-mmr", tr_no_mmr, "Disable the missing-modality regularizer");
    tr->add_flag("--mmr-no-stop-gradient", tr_no_sg, "Let MMR gradients reach the complete branch");
    tr->callback([&] {
        auto cfg = harness::ExperimentConfig::from_json(slurp(tr_config));
        if (!tr_out.empty()) cfg.out_dir = tr_out;
        if (!tr_select.empty()) cfg.select = tr_select;
        if (tr_vanilla) cfg.model.prompt_mode = PromptMode::vanilla_only;
        if (tr_contextual) cfg.model.prompt_mode = PromptMode::contextual_only;
        if (tr_no_mmr) cfg.variant.mmr = false;
        if (tr_no_sg) cfg.variant.mmr_stop_gradient = false;
        cfg.validate();
        const auto res = harness::train(cfg);
        for (size_t e = 0; e < res.record.epochs.size(); ++e) {
            const auto& ep = res.record.epochs[e];
            std::printf("epoch %zu: total=%.4f bce=%.4f mmr=%.4f masks=%lld dev_acer=%.4f\n", e, ep.total, ep.bce,
                        ep.mmr, static_cast<long long>(ep.mask_events), ep.dev.acer);
        }
        std::printf("selected epoch %lld; checkpoint %s\n", static_cast<long long>(res.record.selected_epoch),
                    res.checkpoint_path.c_str());
        print_report(res.record.test_report);
    });

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on dev/test splits");
    std::string ev_ckpt, ev_dev, ev_test, ev_mode = "intra", ev_rule = "eer";
    std::string ev_setting, ev_dev_proto, ev_test_proto, ev_out;
    std::string ev_dev_tag = "dev", ev_test_tag = "test";
    double ev_alpha = 0.0;
    uint64_t ev_proto_seed = 0;
    bool ev_allow = false;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--dev", ev_dev, "synth:<n>:<seed> or a manifest path")->required();
    ev->add_option("--test", ev_test, "synth:<n>:<seed> or a manifest path")->required();
    ev->add_option("--mode", ev_mode, "intra | cross");
    ev->add_option("--threshold", ev_rule, "eer | bpcer:<target>");
    ev->add_option("--setting", ev_setting, "Protocol setting when generating assignments");
    ev->add_option("--alpha", ev_alpha, "Protocol alpha when generating assignments");
    ev->add_option("--proto-seed", ev_proto_seed, "Protocol seed when generating assignments");
    ev->add_option("--dev-protocol", ev_dev_proto, "Assignment JSON overriding generation for dev");
    ev->add_option("--test-protocol", ev_test_proto, "Assignment JSON overriding generation for test");
    ev->add_option("--dev-split", ev_dev_tag, "Manifest split tag for dev rows");
    ev->add_option("--test-split", ev_test_tag, "Manifest split tag for test rows");
    ev->add_flag("--allow-backbone-mismatch", ev_allow, "Load even if the backbone fingerprint differs");
    ev->add_option("--out", ev_out, "Also write the report JSON here");
    ev->callback([&] {
        const auto header = ckpt::read_checkpoint(ev_ckpt);
        flexdata::ProtocolSpec proto;
        if ((ev_dev_proto.empty() || ev_test_proto.empty()) && ev_setting.empty())
            throw std::invalid_argument("eval needs --setting/--alpha or explicit --dev-protocol/--test-protocol");
        if (!ev_setting.empty()) {
            proto.setting = flexdata::protocol_setting_from_string(ev_setting);
            proto.alpha = ev_alpha;
            proto.seed = ev_proto_seed;
        }
        const auto dev = make_eval_split(ev_dev, ev_dev_tag, header.config.image_size, proto, ev_dev_proto);
        const auto test = make_eval_split(ev_test, ev_test_tag, header.config.image_size, proto, ev_test_proto);
        harness::EvalRequest req;
        req.checkpoint = ev_ckpt;
        req.mode = ev_mode;
        req.threshold_rule = ev_rule;
        req.allow_backbone_mismatch = ev_allow;
        const auto report = harness::evaluate(req, dev, test);
        print_report(report);
        if (!ev_out.empty()) spill(ev_out, report.to_json());
    });

    // ---- sweep ----
    auto* sw = app.add_subcommand("sweep", "Alpha sweep across settings, seeds and variants");
    std::string sw_config, sw_alphas, sw_seeds = "0", sw_settings, sw_variants = "vpfas,no_mmr", sw_out, sw_cache;
    bool sw_resume = false;
    sw->add_option("--config", sw_config, "Base experiment config JSON")->required();
    sw->add_option("--alphas", sw_alphas, "start:end:step or comma list")->required();
    sw->add_option("--seeds", sw_seeds, "Comma list of seeds");
    sw->add_option("--settings", sw_settings, "Comma list of protocol settings (default: the config's)");
    sw->add_option("--variants", sw_variants, "Comma list of method variants");
    sw->add_option("--out", sw_out, "Sweep output directory (default: <config out_dir>/sweep)");
    sw->add_option("--cache", sw_cache, "Cell cache directory (default: $FLEXPROMPT_CACHE)");
    sw->add_flag("--resume", sw_resume, "Reuse cached cells instead of recomputing");
    sw->callback([&] {
        harness::SweepRequest req;
        req.base = harness::ExperimentConfig::from_json(slurp(sw_config));
        req.alphas = parse_alphas(sw_alphas);
        req.seeds = parse_seeds(sw_seeds);
        req.settings = sw_settings.empty()
                           ? std::vector<std::string>{flexdata::to_string(req.base.protocol.setting)}
                           : split_commas(sw_settings);
        req.variants = split_commas(sw_variants);
        req.out_dir = sw_out.empty() ? req.base.out_dir + "/sweep" : sw_out;
        req.cache_dir = sw_cache;
        req.resume = sw_resume;
        const auto res = harness::sweep_alpha(req);
        int64_t failed = 0;
        for (const auto& c : res.cells)
            if (c.status.rfind("failed", 0) == 0) ++failed;
        std::printf("%zu cells (%lld failed); csv %s\n", res.cells.size(), static_cast<long long>(failed),
                    res.csv_path.c_str());
        for (const auto& p : res.plot_paths) std::printf("plot %s\n", p.c_str());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
