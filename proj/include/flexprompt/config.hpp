// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

namespace flexprompt {

/// How the prompt budget p is spent per layer.
enum class PromptMode {
    split,            // p/2 vanilla + p/2 residual contextual (default)
    vanilla_only,     // all p slots vanilla (VPT-deep configuration point)
    contextual_only,  // all p slots residual contextual
};

std::string to_string(PromptMode m);
PromptMode prompt_mode_from_string(const std::string& s);

struct ModelConfig {
    int64_t image_size = 224;
    int64_t patch_size = 16;
    int64_t num_layers = 12;   // N
    int64_t embed_dim = 768;   // d
    int64_t num_heads = 12;
    double mlp_ratio = 4.0;
    int64_t num_modalities = 3;  // RGB, D, IR; fixed trio
    int64_t prompt_length = 40;  // p, even
    int64_t hidden_dim = 64;     // d'
    double cd_intensity = 0.5;   // theta
    double mask_ratio = 0.15;    // gamma
    double mmr_weight = 1.0;     // lambda
    PromptMode prompt_mode = PromptMode::split;
    bool shared_patch_embed = true;  // one embedder reused per modality
    bool learned_expand = false;     // per-slot gain on Expand() instead of pure replication

    int64_t grid() const { return image_size / patch_size; }
    int64_t patches_per_modality() const { return grid() * grid(); }
    int64_t content_tokens() const { return 1 + num_modalities * patches_per_modality(); }
    int64_t vanilla_len() const {
        switch (prompt_mode) {
            case PromptMode::split: return prompt_length / 2;
            case PromptMode::vanilla_only: return prompt_length;
            case PromptMode::contextual_only: return 0;
        }
        return 0;
    }
    int64_t residual_len() const { return prompt_length - vanilla_len(); }
    int64_t seq_len() const { return content_tokens() + prompt_length; }
    int64_t mlp_hidden() const { return static_cast<int64_t>(mlp_ratio * static_cast<double>(embed_dim)); }
    int64_t patch_dim() const { return 3 * patch_size * patch_size; }

    /// Throws std::invalid_argument on any violated invariant.
    void validate() const;

    std::string to_json() const;  // canonical (sorted keys)
    static ModelConfig from_json(const std::string& text);
};

}  // namespace flexprompt
