// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flexprompt/model.hpp"
#include "flexprompt/tape.hpp"

namespace flexprompt::engine {

/// Tape leaf ids for every model parameter, keyed by registry name.
struct TapeParams {
    std::map<std::string, ValueId> by_name;

    ValueId id(const std::string& name) const;
    bool has(const std::string& name) const { return by_name.count(name) != 0; }
};

/// Registers all parameters as external leaves; trainable ones track grads.
TapeParams register_params(Tape& tape, const model::VpfasModel& m);

struct ForwardResult {
    ValueId logits;  // [B,2]
    ValueId cls;     // [B,d] class embedding after the final layernorm
};

/// Deep-prompted forward pass. tokens0 is the [B*(1+M*n), d] content batch
/// (see VpfasModel::patch_embed) already on the tape. Per layer, prompt
/// outputs are discarded and fresh layer prompts injected; contexts come
/// from the layer's incoming visual tokens; the residual contextual block
/// accumulates across layers.
ForwardResult prompted_forward(Tape& tape, const model::VpfasModel& m, const TapeParams& tp, ValueId tokens0,
                               int64_t B);

/// Convenience: embeds the planes off-tape, then runs prompted_forward.
ForwardResult prompted_forward(Tape& tape, const model::VpfasModel& m, const TapeParams& tp,
                               const std::vector<flexdata::DenseInput>& batch);

/// Live-class softmax probabilities from a [B,2] logits node (class 1 = live).
std::vector<double> live_scores(const Tape& tape, ValueId logits);

}  // namespace flexprompt::engine
