// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "flexprompt/config.hpp"
#include "flexprompt/flexdata.hpp"
#include "flexprompt/image_io.hpp"

using namespace flexprompt;
using namespace flexprompt::flexdata;

namespace {

double plane_variance(const Tensor& t) {
    double mean = 0;
    for (double v : t.data) mean += v;
    mean /= static_cast<double>(t.data.size());
    double var = 0;
    for (double v : t.data) var += (v - mean) * (v - mean);
    return var / static_cast<double>(t.data.size());
}

// Best accuracy any single-threshold classifier (either polarity) reaches on
// scalar features. Independent of the model stack on purpose.
double best_threshold_accuracy(const std::vector<double>& feat, const std::vector<int>& label) {
    std::vector<double> sorted = feat;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> cands = {sorted.front() - 1.0, sorted.back() + 1.0};
    for (size_t i = 0; i + 1 < sorted.size(); ++i) cands.push_back(0.5 * (sorted[i] + sorted[i + 1]));
    double best = 0;
    for (double tau : cands) {
        int64_t hi_live = 0, lo_live = 0;
        for (size_t i = 0; i < feat.size(); ++i) {
            const bool hi = feat[i] >= tau;
            if (hi == (label[i] == 1)) ++hi_live;
            else ++lo_live;
        }
        const double acc =
            std::max(hi_live, lo_live) / static_cast<double>(feat.size());
        best = std::max(best, acc);
    }
    return best;
}

std::filesystem::path fresh_tmp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

bool same_avail(const ModalityAvailability& a, const ModalityAvailability& b) {
    return a.rgb == b.rgb && a.depth == b.depth && a.ir == b.ir;
}

}  // namespace

TEST_CASE("protocol counts match the documented worked examples") {
    {
        const auto c = protocol_counts(ProtocolSetting::RGBDIR_OVERLAP, 0.7, 1000);
        CHECK(c.rgb_only == 700);
        CHECK(c.rgbd == 0);
        CHECK(c.rgbir == 0);
        CHECK(c.complete == 300);
    }
    {
        const auto c = protocol_counts(ProtocolSetting::RGBDIR_LIMITED, 0.7, 1000);
        CHECK(c.rgb_only == 400);
        CHECK(c.rgbd == 300);
        CHECK(c.rgbir == 300);
        CHECK(c.complete == 0);
    }
    {
        const auto c = protocol_counts(ProtocolSetting::RGBDIR_LIMITED, 0.3, 1000);
        CHECK(c.rgb_only == 0);
        CHECK(c.rgbd == 300);
        CHECK(c.rgbir == 300);
        CHECK(c.complete == 400);
    }
    {
        const auto c = protocol_counts(ProtocolSetting::RGBD_MISS_D, 0.7, 1000);
        CHECK(c.rgb_only == 700);
        CHECK(c.rgbd == 300);
        CHECK(c.rgbir == 0);
        CHECK(c.complete == 0);
    }
    {
        const auto c = protocol_counts(ProtocolSetting::RGBIR_MISS_IR, 0.25, 8);
        CHECK(c.rgb_only == 2);
        CHECK(c.rgbir == 6);
    }
    // Degenerate fractions.
    CHECK(protocol_counts(ProtocolSetting::RGBD_MISS_D, 0.0, 10).rgbd == 10);
    CHECK(protocol_counts(ProtocolSetting::RGBD_MISS_D, 1.0, 10).rgb_only == 10);
    CHECK(protocol_counts(ProtocolSetting::RGBDIR_LIMITED, 0.0, 10).complete == 10);
    CHECK(protocol_counts(ProtocolSetting::RGBDIR_LIMITED, 1.0, 10).rgbir == 0);
    CHECK(protocol_counts(ProtocolSetting::RGBDIR_LIMITED, 1.0, 10).rgb_only == 10);
}

TEST_CASE("protocol counts partition n with per-subset error at most one") {
    const ProtocolSetting settings[] = {ProtocolSetting::RGBD_MISS_D, ProtocolSetting::RGBIR_MISS_IR,
                                        ProtocolSetting::RGBDIR_OVERLAP, ProtocolSetting::RGBDIR_LIMITED};
    const int64_t ns[] = {10, 101, 1000};
    for (auto st : settings) {
        for (int ai = 0; ai <= 10; ++ai) {
            const double alpha = ai / 10.0;
            for (int64_t n : ns) {
                const auto c = protocol_counts(st, alpha, n);
                CHECK(c.rgb_only >= 0);
                CHECK(c.rgbd >= 0);
                CHECK(c.rgbir >= 0);
                CHECK(c.complete >= 0);
                CHECK(c.total() == n);

                // Exact real-valued targets per setting.
                double t_rgb = 0, t_d = 0, t_ir = 0, t_full = 0;
                const double dn = static_cast<double>(n);
                switch (st) {
                    case ProtocolSetting::RGBD_MISS_D: t_rgb = alpha * dn; t_d = (1 - alpha) * dn; break;
                    case ProtocolSetting::RGBIR_MISS_IR: t_rgb = alpha * dn; t_ir = (1 - alpha) * dn; break;
                    case ProtocolSetting::RGBDIR_OVERLAP: t_rgb = alpha * dn; t_full = (1 - alpha) * dn; break;
                    case ProtocolSetting::RGBDIR_LIMITED:
                        if (alpha < 0.5) {
                            t_d = alpha * dn;
                            t_ir = alpha * dn;
                            t_full = (1 - 2 * alpha) * dn;
                        } else {
                            t_rgb = (2 * alpha - 1) * dn;
                            t_d = (1 - alpha) * dn;
                            t_ir = (1 - alpha) * dn;
                        }
                        break;
                }
                CHECK(std::abs(c.rgb_only - t_rgb) <= 1.0 + 1e-9);
                CHECK(std::abs(c.rgbd - t_d) <= 1.0 + 1e-9);
                CHECK(std::abs(c.rgbir - t_ir) <= 1.0 + 1e-9);
                CHECK(std::abs(c.complete - t_full) <= 1.0 + 1e-9);
            }
        }
    }
    CHECK_THROWS_AS(protocol_counts(ProtocolSetting::RGBD_MISS_D, -0.1, 10), std::invalid_argument);
    CHECK_THROWS_AS(protocol_counts(ProtocolSetting::RGBD_MISS_D, 1.1, 10), std::invalid_argument);
    CHECK_THROWS_AS(protocol_counts(ProtocolSetting::RGBD_MISS_D, 0.5, 0), std::invalid_argument);
}

TEST_CASE("generate_protocol slices deterministically and respects the setting") {
    std::vector<std::string> ids;
    for (int i = 0; i < 60; ++i) ids.push_back("s" + std::to_string(i));

    ProtocolSpec spec;
    spec.setting = ProtocolSetting::RGBD_MISS_D;
    spec.alpha = 0.4;
    spec.seed = 17;

    const auto a = generate_protocol(ids, spec);
    const auto b = generate_protocol(ids, spec);
    CHECK(a.by_id.size() == ids.size());
    CHECK(a.counts.rgb_only == 24);
    CHECK(a.counts.rgbd == 36);

    int64_t rgb_only = 0;
    for (const auto& [id, av] : a.by_id) {
        CHECK(av.rgb);       // RGB survives every protocol
        CHECK_FALSE(av.ir);  // setting has no IR branch
        rgb_only += av.depth ? 0 : 1;
        CHECK(same_avail(av, b.availability(id)));  // determinism
    }
    CHECK(rgb_only == a.counts.rgb_only);

    // A different seed moves at least one sample between subsets.
    ProtocolSpec other = spec;
    other.seed = 18;
    const auto c = generate_protocol(ids, other);
    bool any_diff = false;
    for (const auto& [id, av] : a.by_id) any_diff = any_diff || !same_avail(av, c.availability(id));
    CHECK(any_diff);

    // split_tag derives an independent stream from the same seed.
    const auto train = generate_protocol(ids, spec, "train");
    const auto test = generate_protocol(ids, spec, "test");
    bool train_vs_test = false, train_vs_bare = false;
    for (const auto& [id, av] : train.by_id) {
        train_vs_test = train_vs_test || !same_avail(av, test.availability(id));
        train_vs_bare = train_vs_bare || !same_avail(av, a.availability(id));
    }
    CHECK(train_vs_test);
    CHECK(train_vs_bare);

    CHECK_THROWS_AS(a.availability("nope"), std::out_of_range);
    std::vector<std::string> dup = {"x", "y", "x"};
    CHECK_THROWS_AS(generate_protocol(dup, spec), std::invalid_argument);
}

TEST_CASE("the two miss-one-modality settings mirror each other") {
    std::vector<std::string> ids;
    for (int i = 0; i < 41; ++i) ids.push_back("m" + std::to_string(i));
    ProtocolSpec d, ir;
    d.setting = ProtocolSetting::RGBD_MISS_D;
    ir.setting = ProtocolSetting::RGBIR_MISS_IR;
    d.alpha = ir.alpha = 0.3;
    d.seed = ir.seed = 99;
    const auto ad = generate_protocol(ids, d);
    const auto air = generate_protocol(ids, ir);
    for (const auto& id : ids) {
        const auto& x = ad.availability(id);
        const auto& y = air.availability(id);
        CHECK(x.depth == y.ir);  // same shuffle, swapped present modality
        CHECK_FALSE(x.ir);
        CHECK_FALSE(y.depth);
    }
}

TEST_CASE("overlap and limited settings populate the documented subsets") {
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) ids.push_back("o" + std::to_string(i));
    ProtocolSpec spec;
    spec.setting = ProtocolSetting::RGBDIR_OVERLAP;
    spec.alpha = 0.25;
    spec.seed = 5;
    const auto a = generate_protocol(ids, spec);
    int64_t n_rgb = 0, n_full = 0;
    for (const auto& [id, av] : a.by_id) {
        if (!av.depth && !av.ir) ++n_rgb;
        if (av.depth && av.ir) ++n_full;
    }
    CHECK(n_rgb == 25);
    CHECK(n_full == 75);

    spec.setting = ProtocolSetting::RGBDIR_LIMITED;
    spec.alpha = 0.6;
    const auto b = generate_protocol(ids, spec);
    int64_t only = 0, with_d = 0, with_ir = 0, full = 0;
    for (const auto& [id, av] : b.by_id) {
        if (av.depth && av.ir) ++full;
        else if (av.depth) ++with_d;
        else if (av.ir) ++with_ir;
        else ++only;
    }
    CHECK(only == 20);
    CHECK(with_d == 40);
    CHECK(with_ir == 40);
    CHECK(full == 0);
}

TEST_CASE("protocol assignment JSON round trip") {
    std::vector<std::string> ids = {"a", "b", "c", "d", "e", "f", "g"};
    ProtocolSpec spec;
    spec.setting = ProtocolSetting::RGBDIR_LIMITED;
    spec.alpha = 0.35;
    spec.seed = 1234567890123ULL;
    const auto a = generate_protocol(ids, spec, "dev");
    const auto r = ProtocolAssignment::from_json(a.to_json());
    CHECK(r.spec.setting == a.spec.setting);
    CHECK(r.spec.alpha == doctest::Approx(a.spec.alpha).epsilon(1e-15));
    CHECK(r.spec.seed == a.spec.seed);
    CHECK(r.split_tag == "dev");
    CHECK(r.counts.total() == a.counts.total());
    for (const auto& id : ids) CHECK(same_avail(r.availability(id), a.availability(id)));
}

TEST_CASE("zero_fill masks exactly the unavailable planes") {
    auto ds = synth_dataset(2, 16, 7);
    const auto& s = ds[0];

    const DenseInput full = zero_fill(s, {true, true, true});
    CHECK(full.rgb.data == s.rgb.data);
    CHECK(full.depth.data == s.depth.data);
    CHECK(full.ir.data == s.ir.data);

    const DenseInput rgbd = zero_fill(s, {true, true, false});
    CHECK(rgbd.depth.data == s.depth.data);
    CHECK(rgbd.ir.numel() == 16 * 16);
    for (double v : rgbd.ir.data) CHECK(v == 0.0);

    // Availability intersects with what the sample actually has.
    MultimodalSample bare = s;
    bare.has_depth = false;
    const DenseInput d2 = zero_fill(bare, {true, true, true});
    for (double v : d2.depth.data) CHECK(v == 0.0);
    CHECK(d2.ir.data == s.ir.data);

    // Masking twice is the same as masking once.
    MultimodalSample again = s;
    again.rgb = rgbd.rgb;
    again.depth = rgbd.depth;
    again.ir = rgbd.ir;
    const DenseInput twice = zero_fill(again, {true, true, false});
    CHECK(twice.rgb.data == rgbd.rgb.data);
    CHECK(twice.depth.data == rgbd.depth.data);
    CHECK(twice.ir.data == rgbd.ir.data);

    CHECK_THROWS_AS(zero_fill(s, {false, true, true}), std::invalid_argument);
}

TEST_CASE("synthetic dataset is deterministic and balanced") {
    const auto a = synth_dataset(6, 16, 42);
    const auto b = synth_dataset(6, 16, 42);
    const auto longer = synth_dataset(12, 16, 42);
    REQUIRE(a.size() == 6);
    int live = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].label == b[i].label);
        CHECK(a[i].rgb.data == b[i].rgb.data);
        CHECK(a[i].depth.data == b[i].depth.data);
        CHECK(a[i].ir.data == b[i].ir.data);
        // Sample i is a function of (seed, i) alone, not of n.
        CHECK(a[i].rgb.data == longer[i].rgb.data);
        CHECK(a[i].has_depth);
        CHECK(a[i].has_ir);
        CHECK(a[i].rgb.shape == std::vector<int64_t>{16, 16, 3});
        CHECK(a[i].depth.shape == std::vector<int64_t>{16, 16});
        live += a[i].label;
        for (double v : a[i].rgb.data) CHECK((v >= 0.0 && v <= 1.0));
        for (double v : a[i].depth.data) CHECK((v >= 0.0 && v <= 1.0));
        for (double v : a[i].ir.data) CHECK((v >= 0.0 && v <= 1.0));
    }
    CHECK(live == 3);

    const auto other_seed = synth_dataset(6, 16, 43);
    CHECK(a[0].rgb.data != other_seed[0].rgb.data);
}

TEST_CASE("synthetic planes carry the intended per-modality signal") {
    const int64_t n = 200;
    const auto ds = synth_dataset(n, 32, 2024);
    std::vector<double> depth_var, rgb_var, ir_var;
    std::vector<int> labels;
    double live_rb = 0, spoof_rb = 0;
    for (const auto& s : ds) {
        depth_var.push_back(plane_variance(s.depth));
        rgb_var.push_back(plane_variance(s.rgb));
        ir_var.push_back(plane_variance(s.ir));
        labels.push_back(s.label);
        double r = 0, bl = 0;
        const int64_t px = s.rgb.dim(0) * s.rgb.dim(1);
        for (int64_t i = 0; i < px; ++i) {
            r += s.rgb.data[static_cast<size_t>(3 * i)];
            bl += s.rgb.data[static_cast<size_t>(3 * i + 2)];
        }
        (s.label == 1 ? live_rb : spoof_rb) += (r - bl) / static_cast<double>(px);
    }
    live_rb /= n / 2.0;
    spoof_rb /= n / 2.0;

    // Depth pixel variance alone separates the classes almost perfectly;
    // RGB pixel variance alone stays close to chance.
    CHECK(best_threshold_accuracy(depth_var, labels) >= 0.95);
    CHECK(best_threshold_accuracy(rgb_var, labels) <= 0.75);

    // The spoof color cast is a real, linearly readable RGB signal even
    // though it is invisible to a variance probe.
    CHECK(live_rb > spoof_rb + 0.01);
}

TEST_CASE("image files round trip within quantization error") {
    const auto dir = fresh_tmp_dir("fp_test_imageio");
    const auto ds = synth_dataset(4, 16, 5);

    MultimodalSample no_depth = ds[2];
    no_depth.has_depth = false;
    std::vector<MultimodalSample> subset = {ds[0], ds[1], no_depth};
    subset[0].split = "train";
    subset[1].split = "dev";
    subset[2].split = "test";

    const std::string manifest = write_dataset(dir.string(), subset);
    const auto back = load_directory_dataset(manifest, 16);
    REQUIRE(back.size() == subset.size());
    for (size_t i = 0; i < subset.size(); ++i) {
        CHECK(back[i].id == subset[i].id);
        CHECK(back[i].label == subset[i].label);
        CHECK(back[i].split == subset[i].split);
        CHECK(back[i].has_depth == subset[i].has_depth);
        CHECK(back[i].has_ir == subset[i].has_ir);
        for (size_t k = 0; k < subset[i].rgb.data.size(); ++k)
            CHECK(std::abs(back[i].rgb.data[k] - subset[i].rgb.data[k]) <= 1.0 / 255.0);
        if (subset[i].has_depth)
            for (size_t k = 0; k < subset[i].depth.data.size(); ++k)
                CHECK(std::abs(back[i].depth.data[k] - subset[i].depth.data[k]) <= 1.0 / 255.0);
        for (size_t k = 0; k < subset[i].ir.data.size(); ++k)
            CHECK(std::abs(back[i].ir.data[k] - subset[i].ir.data[k]) <= 1.0 / 255.0);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("manifest loader rejects malformed input") {
    const auto dir = fresh_tmp_dir("fp_test_manifest");
    {
        std::ofstream m(dir / "bad_header.csv");
        m << "id,rgb,label\n";
    }
    CHECK_THROWS(load_directory_dataset((dir / "bad_header.csv").string(), 16));
    {
        std::ofstream m(dir / "bad_label.csv");
        m << "id,rgb,depth,ir,label,split\n";
        m << "x,x_rgb.ppm,,,maybe,train\n";
    }
    CHECK_THROWS_WITH_AS(load_directory_dataset((dir / "bad_label.csv").string(), 16),
                         doctest::Contains("bad label"), std::runtime_error);
    {
        std::ofstream m(dir / "missing_file.csv");
        m << "id,rgb,depth,ir,label,split\n";
        m << "ghost,ghost_rgb.ppm,,,1,train\n";
    }
    CHECK_THROWS_WITH_AS(load_directory_dataset((dir / "missing_file.csv").string(), 16),
                         doctest::Contains("ghost"), std::runtime_error);
    CHECK_THROWS(load_directory_dataset((dir / "absent.csv").string(), 16));
    std::filesystem::remove_all(dir);
}

TEST_CASE("resize is exact on constants and shape-correct on ramps") {
    Tensor flat({8, 8}, std::vector<double>(64, 0.375));
    const Tensor small = imageio::resize(flat, 4);
    CHECK(small.shape == std::vector<int64_t>{4, 4});
    for (double v : small.data) CHECK(v == doctest::Approx(0.375).epsilon(1e-12));

    Tensor ramp({8, 8, 3});
    for (int64_t y = 0; y < 8; ++y)
        for (int64_t x = 0; x < 8; ++x)
            for (int64_t c = 0; c < 3; ++c) ramp.data[static_cast<size_t>((y * 8 + x) * 3 + c)] = x / 7.0;
    const Tensor up = imageio::resize(ramp, 16);
    CHECK(up.shape == std::vector<int64_t>{16, 16, 3});
    for (int64_t x = 1; x < 16; ++x)
        CHECK(up.data[static_cast<size_t>(3 * x)] >= up.data[static_cast<size_t>(3 * (x - 1))]);
    // Same-size resize is the identity.
    const Tensor same = imageio::resize(ramp, 8);
    CHECK(same.data == ramp.data);
}

TEST_CASE("ir preprocessing hook modes") {
    Tensor plane({4, 4});
    for (size_t i = 0; i < plane.data.size(); ++i) plane.data[i] = 0.1 * static_cast<double>(i % 10);

    const Tensor pass = ir_preprocess(plane, "passthrough");
    CHECK(pass.data == plane.data);

    const Tensor boosted = ir_preprocess(plane, "custom", [](const Tensor& t) {
        Tensor out = t;
        for (double& v : out.data) v = v * 2.0;  // exceeds 1 on purpose
        return out;
    });
    for (size_t i = 0; i < plane.data.size(); ++i)
        CHECK(boosted.data[i] == doctest::Approx(std::min(1.0, plane.data[i] * 2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(ir_preprocess(plane, "other"), std::invalid_argument);
    CHECK_THROWS_AS(ir_preprocess(plane, "custom"), std::invalid_argument);
    CHECK_THROWS(ir_preprocess(plane, "custom", [](const Tensor&) { return Tensor({2, 2}); }));
}

TEST_CASE("model config validates invariants and round trips") {
    ModelConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.grid() == 14);
    CHECK(cfg.patches_per_modality() == 196);
    CHECK(cfg.content_tokens() == 589);
    CHECK(cfg.seq_len() == 629);
    CHECK(cfg.vanilla_len() == 20);
    CHECK(cfg.residual_len() == 20);
    CHECK(cfg.mlp_hidden() == 3072);
    CHECK(cfg.patch_dim() == 768);

    ModelConfig v = cfg;
    v.prompt_mode = PromptMode::vanilla_only;
    CHECK(v.vanilla_len() == 40);
    CHECK(v.residual_len() == 0);
    v.prompt_mode = PromptMode::contextual_only;
    CHECK(v.vanilla_len() == 0);
    CHECK(v.residual_len() == 40);

    ModelConfig bad = cfg;
    bad.prompt_length = 7;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.image_size = 225;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.mask_ratio = 0.4;  // 3*gamma > 1 leaves no unmasked band
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.num_modalities = 2;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.embed_dim = 770;  // not divisible by heads
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.cd_intensity = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    ModelConfig tweaked = cfg;
    tweaked.prompt_length = 12;
    tweaked.hidden_dim = 8;
    tweaked.prompt_mode = PromptMode::contextual_only;
    tweaked.learned_expand = true;
    const ModelConfig rt = ModelConfig::from_json(tweaked.to_json());
    CHECK(rt.to_json() == tweaked.to_json());
    CHECK(rt.prompt_length == 12);
    CHECK(rt.prompt_mode == PromptMode::contextual_only);
    CHECK(rt.learned_expand);
}
