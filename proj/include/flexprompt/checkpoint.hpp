// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flexprompt/model.hpp"

namespace flexprompt::ckpt {

// Checkpoint archive (magic FPCKPT01): canonical config JSON, the backbone
// seed and fingerprint, then the trainable arrays (prompts.*, head.*) in an
// FPTNSR01-style array block. Frozen backbone weights are not stored; the
// loader rebuilds them from the recorded seed (plus an optional weight file)
// and verifies the fingerprint.
struct Checkpoint {
    ModelConfig config;
    uint64_t backbone_seed = 0;
    uint64_t backbone_fingerprint = 0;
    std::string backbone_weights;  // weight file applied after seeded init; empty if none
    std::vector<std::pair<std::string, Tensor>> arrays;
};

void save_checkpoint(const std::string& path, const model::VpfasModel& m, uint64_t backbone_seed,
                     const std::string& backbone_weights = "");

Checkpoint read_checkpoint(const std::string& path);

/// Rebuilds the full model: seeded construction, optional pretrained backbone
/// weights, then the stored trainable arrays. Throws on fingerprint mismatch
/// unless allow_backbone_mismatch is set.
model::VpfasModel load_model(const std::string& path, bool allow_backbone_mismatch = false);

/// Applies a parsed checkpoint's trainable arrays onto an existing model.
/// Every stored array must match a registered parameter bitwise in shape.
void apply_arrays(model::VpfasModel& m, const Checkpoint& c);

}  // namespace flexprompt::ckpt
