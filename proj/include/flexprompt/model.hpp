// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flexprompt/config.hpp"
#include "flexprompt/flexdata.hpp"
#include "flexprompt/tensor.hpp"

namespace flexprompt::model {

struct Param {
    std::string name;
    Tensor value;
    bool trainable = false;
};

/// Named parameter store. Iteration follows insertion order, which is fixed
/// by the model builder, so fingerprints and checkpoints are deterministic.
class ParamRegistry {
public:
    Tensor& add(const std::string& name, std::vector<int64_t> shape, bool trainable);
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool is_trainable(const std::string& name) const;
    void set_trainable(const std::string& name, bool v);

    size_t size() const { return params_.size(); }
    Param& param(size_t i) { return params_[i]; }
    const Param& param(size_t i) const { return params_[i]; }

    /// Names in insertion order, optionally restricted to a prefix.
    std::vector<std::string> names(const std::string& prefix = "") const;
    int64_t scalar_count(bool trainable_only) const;

private:
    std::vector<Param> params_;
    std::map<std::string, size_t> index_;
};

struct ParamCounts {
    int64_t trainable = 0;
    int64_t total = 0;
    double ratio() const { return static_cast<double>(trainable) / static_cast<double>(total); }
};

/// Closed-form parameter count for a config; must equal the registry count.
ParamCounts analytic_param_counts(const ModelConfig& cfg);

/// Frozen ViT backbone plus the trainable prompt/head parameter groups.
/// Construction random-initializes every group from per-name derived seeds,
/// then freezes the backbone.
class VpfasModel {
public:
    VpfasModel(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }

    /// Marks every backbone.* group non-trainable; prompts and head stay on.
    void freeze_backbone();
    double trainable_param_ratio() const;

    /// FNV-1a over the frozen groups (names, shapes, raw values) in
    /// registry order.
    uint64_t backbone_fingerprint() const;

    /// Off-tape content embedding of zero-filled planes. Returns
    /// [B*(1+M*n), d]; per-sample row layout [CLS | RGB | D | IR], the
    /// shared positional table re-applied to every modality block.
    Tensor patch_embed(const std::vector<flexdata::DenseInput>& batch) const;

private:
    ModelConfig cfg_;
    ParamRegistry reg_;

    void build();
    void init_params(uint64_t seed);
};

// ---- weight files ----------------------------------------------------------

/// Named f64 arrays in a flat binary container (magic FPTNSR01; per array:
/// name, dtype byte, rank, extents, row-major little-endian data).
void write_weight_file(const std::string& path, const std::vector<std::pair<std::string, const Tensor*>>& arrays);
std::vector<std::pair<std::string, Tensor>> read_weight_file(const std::string& path);

/// The container's array block without the magic, for embedding in other
/// formats (checkpoints): u32 count, then per-array records as above.
void write_array_block(std::ostream& out, const std::vector<std::pair<std::string, const Tensor*>>& arrays);
std::vector<std::pair<std::string, Tensor>> read_array_block(std::istream& in);

struct LoadAudit {
    std::vector<std::string> matched;            // model names filled from the file
    std::vector<std::string> unmatched_model;    // backbone names the file lacked
    std::vector<std::string> ignored_source;     // file entries with no destination
};

/// Fills backbone groups from a weight file. Accepts this project's native
/// names directly and the conventional ViT-B export names (cls_token,
/// blocks.{i}.attn.qkv.weight, ...), transposing layouts where the
/// conventions differ. Shape conflicts throw, naming the parameter.
/// Prompt/head groups are never loaded here; they keep their fresh init.
LoadAudit load_pretrained(VpfasModel& model, const std::string& path);

}  // namespace flexprompt::model
