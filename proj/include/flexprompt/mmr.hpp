// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "flexprompt/flexdata.hpp"
#include "flexprompt/rng.hpp"
#include "flexprompt/tape.hpp"

namespace flexprompt::mmr {

/// RGB is never masked; kinds cover every other subset of {D, IR}.
enum class MaskKind { NONE, MASK_D, MASK_IR, MASK_D_IR };

std::string to_string(MaskKind k);

struct MaskEvent {
    MaskKind kind = MaskKind::NONE;
    bool applicable = true;  // false: the drawn band hit an absent modality and degraded to NONE
};

/// One banded draw from u ~ U(0,1): [0,γ) masks D, [γ,2γ) masks IR,
/// [2γ,3γ) masks both, the rest masks nothing. Events whose modalities are
/// not all available degrade to NONE.
MaskEvent sample_mask(const flexdata::ModalityAvailability& avail, double gamma, Rng& rng);

/// Zeroes the masked planes; NONE is the identity. Idempotent.
flexdata::DenseInput apply_mask(const flexdata::DenseInput& in, const MaskEvent& event);

/// Mean over rows of -cos(masked_cls_r, complete_cls_r); the complete side
/// sits behind stop-gradient unless disabled. Rows with a norm under 1e-12
/// are skipped with a warning (counted in *skipped when given).
ValueId mmr_loss(Tape& tape, ValueId masked_cls, ValueId complete_cls, bool stop_gradient = true,
                 int* skipped = nullptr);

/// Cross-entropy over two-class logits plus lambda times the MMR term.
/// Pass mmr_term = -1 when no sample was masked: the MMR node is then never
/// created and the returned loss is the bare BCE.
ValueId total_loss(Tape& tape, ValueId logits, const std::vector<int>& labels, ValueId mmr_term, double lambda);

}  // namespace flexprompt::mmr
