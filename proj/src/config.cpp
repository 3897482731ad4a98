// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include "flexprompt/config.hpp"

#include <stdexcept>

#include <json.hpp>

namespace flexprompt {

std::string to_string(PromptMode m) {
    switch (m) {
        case PromptMode::split: return "split";
        case PromptMode::vanilla_only: return "vanilla_only";
        case PromptMode::contextual_only: return "contextual_only";
    }
    return "split";
}

PromptMode prompt_mode_from_string(const std::string& s) {
    if (s == "split") return PromptMode::split;
    if (s == "vanilla_only") return PromptMode::vanilla_only;
    if (s == "contextual_only") return PromptMode::contextual_only;
    throw std::invalid_argument("unknown prompt mode: " + s);
}

void ModelConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0) throw std::invalid_argument("config: sizes must be positive");
    if (image_size % patch_size != 0) throw std::invalid_argument("config: image_size must divide by patch_size");
    if (num_layers < 1) throw std::invalid_argument("config: num_layers must be >= 1");
    if (embed_dim < 1 || num_heads < 1) throw std::invalid_argument("config: embed_dim and num_heads must be >= 1");
    if (embed_dim % num_heads != 0) throw std::invalid_argument("config: embed_dim must divide by num_heads");
    if (mlp_ratio <= 0.0) throw std::invalid_argument("config: mlp_ratio must be positive");
    if (num_modalities != 3) throw std::invalid_argument("config: only the RGB/D/IR trio (num_modalities=3) is supported");
    if (prompt_length < 0 || prompt_length % 2 != 0) throw std::invalid_argument("config: prompt_length must be even and >= 0");
    if (hidden_dim < 1) throw std::invalid_argument("config: hidden_dim must be >= 1");
    if (cd_intensity < 0.0 || cd_intensity > 1.0) throw std::invalid_argument("config: cd_intensity must be in [0,1]");
    if (mask_ratio < 0.0 || 3.0 * mask_ratio > 1.0) throw std::invalid_argument("config: mask_ratio must satisfy 3*gamma <= 1");
    if (mmr_weight < 0.0) throw std::invalid_argument("config: mmr_weight must be >= 0");
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["image_size"] = image_size;
    j["patch_size"] = patch_size;
    j["num_layers"] = num_layers;
    j["embed_dim"] = embed_dim;
    j["num_heads"] = num_heads;
    j["mlp_ratio"] = mlp_ratio;
    j["num_modalities"] = num_modalities;
    j["prompt_length"] = prompt_length;
    j["hidden_dim"] = hidden_dim;
    j["cd_intensity"] = cd_intensity;
    j["mask_ratio"] = mask_ratio;
    j["mmr_weight"] = mmr_weight;
    j["prompt_mode"] = to_string(prompt_mode);
    j["shared_patch_embed"] = shared_patch_embed;
    j["learned_expand"] = learned_expand;
    return j.dump();  // nlohmann::json orders keys, so this is canonical
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.num_modalities = j.value("num_modalities", c.num_modalities);
    c.prompt_length = j.value("prompt_length", c.prompt_length);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.cd_intensity = j.value("cd_intensity", c.cd_intensity);
    c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
    c.mmr_weight = j.value("mmr_weight", c.mmr_weight);
    if (j.contains("prompt_mode")) c.prompt_mode = prompt_mode_from_string(j.at("prompt_mode").get<std::string>());
    c.shared_patch_embed = j.value("shared_patch_embed", c.shared_patch_embed);
    c.learned_expand = j.value("learned_expand", c.learned_expand);
    c.validate();
    return c;
}

}  // namespace flexprompt
