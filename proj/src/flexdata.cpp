// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include "flexprompt/flexdata.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "flexprompt/image_io.hpp"
#include "flexprompt/rng.hpp"

namespace flexprompt::flexdata {

namespace fs = std::filesystem;
using nlohmann::json;

DenseInput zero_fill(const MultimodalSample& s, const ModalityAvailability& avail) {
    if (!avail.rgb) throw std::invalid_argument("zero_fill: RGB is never dropped");
    if (s.rgb.rank() != 3) throw std::invalid_argument("zero_fill: sample has no RGB plane");
    const int64_t h = s.rgb.dim(0), w = s.rgb.dim(1);
    DenseInput d;
    d.rgb = s.rgb;
    d.depth = (avail.depth && s.has_depth) ? s.depth : Tensor({h, w});
    d.ir = (avail.ir && s.has_ir) ? s.ir : Tensor({h, w});
    return d;
}

std::string to_string(ProtocolSetting s) {
    switch (s) {
        case ProtocolSetting::RGBD_MISS_D: return "rgbd_miss_d";
        case ProtocolSetting::RGBIR_MISS_IR: return "rgbir_miss_ir";
        case ProtocolSetting::RGBDIR_OVERLAP: return "rgbdir_overlap";
        case ProtocolSetting::RGBDIR_LIMITED: return "rgbdir_limited";
    }
    throw std::logic_error("unreachable protocol setting");
}

ProtocolSetting protocol_setting_from_string(const std::string& s) {
    if (s == "rgbd_miss_d") return ProtocolSetting::RGBD_MISS_D;
    if (s == "rgbir_miss_ir") return ProtocolSetting::RGBIR_MISS_IR;
    if (s == "rgbdir_overlap") return ProtocolSetting::RGBDIR_OVERLAP;
    if (s == "rgbdir_limited") return ProtocolSetting::RGBDIR_LIMITED;
    throw std::invalid_argument("unknown protocol setting: " + s);
}

namespace {

// Ties-to-even without touching the fenv rounding mode.
int64_t round_half_even(double x) {
    const double f = std::floor(x);
    const double frac = x - f;
    const auto fi = static_cast<int64_t>(f);
    if (frac > 0.5) return fi + 1;
    if (frac < 0.5) return fi;
    return (fi % 2 == 0) ? fi : fi + 1;
}

void validate_fraction(double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("protocol: alpha must lie in [0,1]");
}

}  // namespace

SubsetCounts protocol_counts(ProtocolSetting setting, double alpha, int64_t n) {
    validate_fraction(alpha);
    if (n < 1) throw std::invalid_argument("protocol: need at least one sample");
    const double dn = static_cast<double>(n);
    SubsetCounts c;
    switch (setting) {
        case ProtocolSetting::RGBD_MISS_D:
            c.rgb_only = round_half_even(alpha * dn);
            c.rgbd = n - c.rgb_only;
            break;
        case ProtocolSetting::RGBIR_MISS_IR:
            c.rgb_only = round_half_even(alpha * dn);
            c.rgbir = n - c.rgb_only;
            break;
        case ProtocolSetting::RGBDIR_OVERLAP:
            c.rgb_only = round_half_even(alpha * dn);
            c.complete = n - c.rgb_only;
            break;
        case ProtocolSetting::RGBDIR_LIMITED:
            if (alpha < 0.5) {
                c.rgbd = round_half_even(alpha * dn);
                c.rgbir = round_half_even(alpha * dn);
                c.complete = n - c.rgbd - c.rgbir;
            } else {
                c.rgb_only = round_half_even((2.0 * alpha - 1.0) * dn);
                c.rgbd = round_half_even((1.0 - alpha) * dn);
                c.rgbir = n - c.rgb_only - c.rgbd;
            }
            break;
    }
    if (c.rgb_only < 0 || c.rgbd < 0 || c.rgbir < 0 || c.complete < 0 || c.total() != n)
        throw std::logic_error("protocol: subset counts do not partition n");
    return c;
}

const ModalityAvailability& ProtocolAssignment::availability(const std::string& id) const {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw std::out_of_range("protocol: no assignment for id " + id);
    return it->second;
}

ProtocolAssignment generate_protocol(const std::vector<std::string>& ids, const ProtocolSpec& spec,
                                     const std::string& split_tag) {
    ProtocolAssignment a;
    a.spec = spec;
    a.split_tag = split_tag;
    a.counts = protocol_counts(spec.setting, spec.alpha, static_cast<int64_t>(ids.size()));

    const uint64_t eff = split_tag.empty() ? spec.seed : derive_seed(spec.seed, split_tag);
    std::vector<std::string> order = ids;
    Rng rng(eff);
    rng.shuffle(order);

    // Contiguous slices of the shuffled order, canonical subset sequence.
    const ModalityAvailability kAvail[4] = {
        {true, false, false}, {true, true, false}, {true, false, true}, {true, true, true}};
    const int64_t sizes[4] = {a.counts.rgb_only, a.counts.rgbd, a.counts.rgbir, a.counts.complete};
    size_t pos = 0;
    for (int s = 0; s < 4; ++s) {
        for (int64_t k = 0; k < sizes[s]; ++k, ++pos) {
            if (!a.by_id.emplace(order[pos], kAvail[s]).second)
                throw std::invalid_argument("protocol: duplicate id " + order[pos]);
        }
    }
    return a;
}

std::string ProtocolAssignment::to_json() const {
    json by;
    for (const auto& [id, av] : by_id) by[id] = {{"rgb", av.rgb}, {"depth", av.depth}, {"ir", av.ir}};
    const json j = {
        {"spec", {{"setting", flexdata::to_string(spec.setting)}, {"alpha", spec.alpha}, {"seed", spec.seed}}},
        {"split_tag", split_tag},
        {"counts",
         {{"rgb_only", counts.rgb_only}, {"rgbd", counts.rgbd}, {"rgbir", counts.rgbir}, {"complete", counts.complete}}},
        {"by_id", by},
    };
    return j.dump(2) + "\n";
}

ProtocolAssignment ProtocolAssignment::from_json(const std::string& text) {
    const json j = json::parse(text);
    ProtocolAssignment a;
    a.spec.setting = protocol_setting_from_string(j.at("spec").at("setting").get<std::string>());
    a.spec.alpha = j.at("spec").at("alpha").get<double>();
    a.spec.seed = j.at("spec").at("seed").get<uint64_t>();
    a.split_tag = j.at("split_tag").get<std::string>();
    a.counts.rgb_only = j.at("counts").at("rgb_only").get<int64_t>();
    a.counts.rgbd = j.at("counts").at("rgbd").get<int64_t>();
    a.counts.rgbir = j.at("counts").at("rgbir").get<int64_t>();
    a.counts.complete = j.at("counts").at("complete").get<int64_t>();
    for (const auto& [id, av] : j.at("by_id").items()) {
        a.by_id[id] = {av.at("rgb").get<bool>(), av.at("depth").get<bool>(), av.at("ir").get<bool>()};
    }
    if (a.counts.total() != static_cast<int64_t>(a.by_id.size()))
        throw std::runtime_error("protocol: counts disagree with by_id size");
    return a;
}

// ---- synthetic dataset ---------------------------------------------------

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

std::vector<MultimodalSample> synth_dataset(int64_t n, int64_t image_size, uint64_t seed) {
    if (n < 0) throw std::invalid_argument("synth: n must be non-negative");
    if (image_size < 8) throw std::invalid_argument("synth: image_size must be at least 8");
    const double S = static_cast<double>(image_size);
    std::vector<MultimodalSample> out;
    out.reserve(static_cast<size_t>(n));

    for (int64_t i = 0; i < n; ++i) {
        // Independent stream per sample: the set of samples at index i is
        // invariant to n, and generation order never matters.
        Rng rng(derive_seed(seed, "synth-sample", static_cast<uint64_t>(i)));
        const bool live = (i % 2 == 0);

        MultimodalSample s;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "synth-%06lld", static_cast<long long>(i));
        s.id = idbuf;
        s.label = live ? 1 : 0;
        s.has_depth = true;
        s.has_ir = true;
        s.rgb = Tensor({image_size, image_size, 3});
        s.depth = Tensor({image_size, image_size});
        s.ir = Tensor({image_size, image_size});

        // Shared face geometry.
        const double cx = S * (0.5 + rng.uniform(-0.1, 0.1));
        const double cy = S * (0.5 + rng.uniform(-0.1, 0.1));
        const double rx = S * rng.uniform(0.26, 0.34);
        const double ry = S * rng.uniform(0.32, 0.40);
        const double bright = rng.uniform(0.85, 1.1);
        const double sigma_d = S * rng.uniform(0.18, 0.26);
        const double sigma_ir = S * rng.uniform(0.20, 0.30);

        // Class-specific appearance parameters.
        double amp_d = 0, ir_gain = 0, depth_base = 0, ir_base = 0;
        double tint = 0, moire_amp = 0, mfx = 0, mfy = 0, mpx = 0, mpy = 0;
        if (live) {
            amp_d = rng.uniform(0.4, 0.8);
            ir_gain = rng.uniform(0.75, 1.0);
            depth_base = 0.12;
        } else {
            depth_base = rng.uniform(0.2, 0.5);    // printed/replayed surface is flat
            ir_base = rng.uniform(0.05, 0.2);      // attenuated thermal signature
            tint = rng.uniform(0.03, 0.08);        // screen/print color cast
            moire_amp = rng.uniform(0.015, 0.04);  // faint resampling interference
            mfx = rng.uniform(3.5, 7.5);
            mfy = rng.uniform(3.5, 7.5);
            mpx = rng.uniform(0.0, kTwoPi);
            mpy = rng.uniform(0.0, kTwoPi);
        }

        double tone[3] = {0.76 * bright, 0.62 * bright, 0.52 * bright};
        if (!live) {
            tone[0] -= 0.6 * tint;
            tone[1] -= 0.15 * tint;
            tone[2] += tint;
        }
        const double bg[3] = {0.16, 0.17, 0.19};

        for (int64_t y = 0; y < image_size; ++y) {
            for (int64_t x = 0; x < image_size; ++x) {
                const double dx = static_cast<double>(x) - cx;
                const double dy = static_cast<double>(y) - cy;
                const double e = (dx / rx) * (dx / rx) + (dy / ry) * (dy / ry);
                const double mix = clamp01(2.0 * (1.08 - e));
                const double r2 = dx * dx + dy * dy;

                double moire = 0.0;
                if (!live)
                    moire = moire_amp * std::sin(kTwoPi * mfx * x / S + mpx) * std::sin(kTwoPi * mfy * y / S + mpy);
                for (int c = 0; c < 3; ++c) {
                    const double base = bg[c] * (1.0 - mix) + tone[c] * mix;
                    s.rgb.data[static_cast<size_t>((y * image_size + x) * 3 + c)] =
                        clamp01(base + moire + 0.02 * rng.normal());
                }

                double d;
                if (live)
                    d = depth_base + amp_d * std::exp(-r2 / (2.0 * sigma_d * sigma_d));
                else
                    d = depth_base;
                s.depth.data[static_cast<size_t>(y * image_size + x)] = clamp01(d + 0.01 * rng.normal());

                double irv;
                if (live)
                    irv = 0.22 + 0.55 * ir_gain * std::exp(-r2 / (2.0 * sigma_ir * sigma_ir));
                else
                    irv = ir_base;
                s.ir.data[static_cast<size_t>(y * image_size + x)] = clamp01(irv + 0.01 * rng.normal());
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---- directory loader ------------------------------------------------------

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

int parse_label(const std::string& raw, const std::string& id) {
    if (raw == "1" || raw == "live") return 1;
    if (raw == "0" || raw == "spoof") return 0;
    throw std::runtime_error("manifest: bad label '" + raw + "' for id " + id);
}

}  // namespace

std::vector<MultimodalSample> load_directory_dataset(const std::string& manifest_path, int64_t image_size) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("manifest: cannot open " + manifest_path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("manifest: empty file " + manifest_path);
    strip_cr(line);
    if (line != "id,rgb,depth,ir,label,split")
        throw std::runtime_error("manifest: bad header '" + line + "' in " + manifest_path);

    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<MultimodalSample> out;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        strip_cr(line);
        if (line.empty()) continue;
        const auto f = split_csv_row(line);
        if (f.size() != 6)
            throw std::runtime_error("manifest: line " + std::to_string(lineno) + " has " +
                                     std::to_string(f.size()) + " fields, expected 6");
        MultimodalSample s;
        s.id = f[0];
        s.label = parse_label(f[4], s.id);
        s.split = f[5];
        if (f[1].empty()) throw std::runtime_error("manifest: id " + s.id + " has no RGB path");
        try {
            s.rgb = imageio::resize(imageio::read_ppm((base / f[1]).string()), image_size);
            if (!f[2].empty()) {
                s.depth = imageio::resize(imageio::read_pgm((base / f[2]).string()), image_size);
                s.has_depth = true;
            }
            if (!f[3].empty()) {
                s.ir = imageio::resize(imageio::read_pgm((base / f[3]).string()), image_size);
                s.has_ir = true;
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("manifest: id " + s.id + ": " + e.what());
        }
        out.push_back(std::move(s));
    }
    if (out.empty()) std::fprintf(stderr, "warning: manifest %s lists no samples\n", manifest_path.c_str());
    return out;
}

std::string write_dataset(const std::string& dir, const std::vector<MultimodalSample>& samples) {
    fs::create_directories(dir);
    const fs::path root(dir);
    const std::string manifest = (root / "manifest.csv").string();
    std::ofstream m(manifest);
    if (!m) throw std::runtime_error("manifest: cannot write " + manifest);
    m << "id,rgb,depth,ir,label,split\n";
    for (const auto& s : samples) {
        const std::string rgb_name = s.id + "_rgb.ppm";
        imageio::write_ppm((root / rgb_name).string(), s.rgb);
        std::string depth_name, ir_name;
        if (s.has_depth) {
            depth_name = s.id + "_depth.pgm";
            imageio::write_pgm((root / depth_name).string(), s.depth);
        }
        if (s.has_ir) {
            ir_name = s.id + "_ir.pgm";
            imageio::write_pgm((root / ir_name).string(), s.ir);
        }
        m << s.id << "," << rgb_name << "," << depth_name << "," << ir_name << "," << s.label << "," << s.split
          << "\n";
    }
    return manifest;
}

Tensor ir_preprocess(const Tensor& ir_plane, const std::string& mode, const IrHook& hook) {
    if (mode == "passthrough") return ir_plane;
    if (mode != "custom") throw std::invalid_argument("ir_preprocess: unknown mode '" + mode + "'");
    if (!hook) throw std::invalid_argument("ir_preprocess: custom mode requires a hook");
    Tensor out = hook(ir_plane);
    if (out.shape != ir_plane.shape) throw std::runtime_error("ir_preprocess: hook changed the plane shape");
    for (double& v : out.data) v = std::min(1.0, std::max(0.0, v));
    return out;
}

}  // namespace flexprompt::flexdata
