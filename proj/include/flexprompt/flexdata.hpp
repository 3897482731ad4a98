// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "flexprompt/tensor.hpp"

namespace flexprompt::flexdata {

struct ModalityAvailability {
    bool rgb = true;  // never false: no setting drops RGB
    bool depth = false;
    bool ir = false;
};

/// One multimodal face sample. rgb is always present; depth/ir tensors are
/// meaningful only when the matching flag is set.
struct MultimodalSample {
    std::string id;
    Tensor rgb;    // [H,W,3] in [0,1]
    Tensor depth;  // [H,W]
    Tensor ir;     // [H,W]
    bool has_depth = false;
    bool has_ir = false;
    int label = 0;  // 1 = live, 0 = spoof
    std::string split;

    ModalityAvailability availability() const { return {true, has_depth, has_ir}; }
};

/// Model-ready planes: every modality dense, absent ones zero.
struct DenseInput {
    Tensor rgb;    // [H,W,3]
    Tensor depth;  // [H,W]
    Tensor ir;     // [H,W]
};

/// Replaces unavailable planes with zeros; available planes pass through.
DenseInput zero_fill(const MultimodalSample& s, const ModalityAvailability& avail);

// ---- flexible-modal protocols ------------------------------------------

enum class ProtocolSetting {
    RGBD_MISS_D,      // train/test on RGB-D data with D missing in an alpha fraction
    RGBIR_MISS_IR,    // mirror with IR
    RGBDIR_OVERLAP,   // alpha RGB-only, rest complete RGB-D-IR
    RGBDIR_LIMITED,   // alpha<0.5: alpha RGB-D + alpha RGB-IR + (1-2a) complete
                      // alpha>=0.5: (2a-1) RGB-only + (1-a) RGB-D + (1-a) RGB-IR
};

std::string to_string(ProtocolSetting s);
ProtocolSetting protocol_setting_from_string(const std::string& s);

struct ProtocolSpec {
    ProtocolSetting setting = ProtocolSetting::RGBD_MISS_D;
    double alpha = 0.0;
    uint64_t seed = 0;
};

struct SubsetCounts {
    int64_t rgb_only = 0;
    int64_t rgbd = 0;
    int64_t rgbir = 0;
    int64_t complete = 0;
    int64_t total() const { return rgb_only + rgbd + rgbir + complete; }
};

struct ProtocolAssignment {
    ProtocolSpec spec;
    std::string split_tag;
    SubsetCounts counts;
    std::map<std::string, ModalityAvailability> by_id;

    const ModalityAvailability& availability(const std::string& id) const;
    std::string to_json() const;
    static ProtocolAssignment from_json(const std::string& text);
};

/// Expected subset sizes for n samples: round-half-even per fraction, the
/// last subset present in the setting absorbs the remainder.
SubsetCounts protocol_counts(ProtocolSetting setting, double alpha, int64_t n);

/// Seeded shuffle of ids then contiguous slicing in canonical subset order
/// (RGB-only, RGB-D, RGB-IR, complete). split_tag, when non-empty, derives
/// an independent stream from spec.seed so each split gets its own draw.
ProtocolAssignment generate_protocol(const std::vector<std::string>& ids, const ProtocolSpec& spec,
                                     const std::string& split_tag = "");

// ---- synthetic dataset ---------------------------------------------------

/// Balanced live/spoof desk-scale generator. Live: radial depth bump + warm
/// IR blob + skin-tone RGB ellipse. Spoof: near-flat depth + attenuated IR +
/// the same ellipse with a cool tint and a faint moire pattern. Deterministic
/// in (n, image_size, seed).
std::vector<MultimodalSample> synth_dataset(int64_t n, int64_t image_size, uint64_t seed);

// ---- directory loader ------------------------------------------------------

/// Manifest CSV: header `id,rgb,depth,ir,label,split`; empty cell = absent
/// modality; label accepts 0/1/spoof/live. Paths resolve relative to the
/// manifest's directory. Images are resized to image_size.
std::vector<MultimodalSample> load_directory_dataset(const std::string& manifest_path, int64_t image_size);

/// Writes samples as PPM/PGM files plus a manifest.csv under dir.
/// Returns the manifest path.
std::string write_dataset(const std::string& dir, const std::vector<MultimodalSample>& samples);

// ---- IR preprocessing hook ---------------------------------------------

using IrHook = std::function<Tensor(const Tensor&)>;

/// mode "passthrough" returns the plane unchanged; mode "custom" applies
/// hook and clips the result to [0,1]. Any other mode is an error.
Tensor ir_preprocess(const Tensor& ir_plane, const std::string& mode, const IrHook& hook = nullptr);

}  // namespace flexprompt::flexdata
