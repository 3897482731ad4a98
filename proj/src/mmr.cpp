// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include "flexprompt/mmr.hpp"

#include <cstdio>
#include <stdexcept>

namespace flexprompt::mmr {

std::string to_string(MaskKind k) {
    switch (k) {
        case MaskKind::NONE: return "none";
        case MaskKind::MASK_D: return "mask_d";
        case MaskKind::MASK_IR: return "mask_ir";
        case MaskKind::MASK_D_IR: return "mask_d_ir";
    }
    throw std::logic_error("unreachable mask kind");
}

MaskEvent sample_mask(const flexdata::ModalityAvailability& avail, double gamma, Rng& rng) {
    if (!(gamma >= 0.0 && 3.0 * gamma <= 1.0))
        throw std::invalid_argument("sample_mask: gamma must satisfy 0 <= 3*gamma <= 1");
    const double u = rng.uniform();
    MaskKind drawn = MaskKind::NONE;
    if (u < gamma) drawn = MaskKind::MASK_D;
    else if (u < 2.0 * gamma) drawn = MaskKind::MASK_IR;
    else if (u < 3.0 * gamma) drawn = MaskKind::MASK_D_IR;

    bool ok = true;
    if (drawn == MaskKind::MASK_D) ok = avail.depth;
    else if (drawn == MaskKind::MASK_IR) ok = avail.ir;
    else if (drawn == MaskKind::MASK_D_IR) ok = avail.depth && avail.ir;

    if (!ok) return {MaskKind::NONE, false};
    return {drawn, true};
}

flexdata::DenseInput apply_mask(const flexdata::DenseInput& in, const MaskEvent& event) {
    flexdata::DenseInput out = in;
    const MaskKind k = event.kind;
    if (k == MaskKind::MASK_D || k == MaskKind::MASK_D_IR)
        std::fill(out.depth.data.begin(), out.depth.data.end(), 0.0);
    if (k == MaskKind::MASK_IR || k == MaskKind::MASK_D_IR)
        std::fill(out.ir.data.begin(), out.ir.data.end(), 0.0);
    return out;
}

ValueId mmr_loss(Tape& tape, ValueId masked_cls, ValueId complete_cls, bool stop_gradient, int* skipped) {
    int local = 0;
    const ValueId loss = tape.neg_cosine_mean(masked_cls, complete_cls, stop_gradient, &local);
    if (local > 0)
        std::fprintf(stderr, "warning: mmr skipped %d row(s) with degenerate embedding norm\n", local);
    if (skipped) *skipped = local;
    return loss;
}

ValueId total_loss(Tape& tape, ValueId logits, const std::vector<int>& labels, ValueId mmr_term, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("total_loss: lambda must be non-negative");
    const ValueId bce = tape.softmax_ce(logits, labels);
    if (mmr_term < 0) return bce;
    return tape.add_scaled(bce, mmr_term, lambda);
}

}  // namespace flexprompt::mmr
