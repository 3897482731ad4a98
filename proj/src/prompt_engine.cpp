// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include "flexprompt/prompt_engine.hpp"

#include <cmath>
#include <stdexcept>

namespace flexprompt::engine {

namespace {
constexpr double kLnEps = 1e-6;
}

ValueId TapeParams::id(const std::string& name) const {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw std::out_of_range("engine: no tape leaf for " + name);
    return it->second;
}

TapeParams register_params(Tape& tape, const model::VpfasModel& m) {
    TapeParams tp;
    const auto& reg = m.params();
    for (size_t i = 0; i < reg.size(); ++i) {
        const auto& p = reg.param(i);
        tp.by_name[p.name] = tape.leaf_external(&p.value, p.trainable);
    }
    return tp;
}

ForwardResult prompted_forward(Tape& tape, const model::VpfasModel& m, const TapeParams& tp, ValueId tokens0,
                               int64_t B) {
    const ModelConfig& cfg = m.config();
    const int64_t Tc = cfg.content_tokens();
    const int64_t n = cfg.patches_per_modality();
    const int64_t M = cfg.num_modalities;
    const int64_t g = cfg.grid();
    const int64_t pv = cfg.vanilla_len();
    const int64_t pr = cfg.residual_len();
    const int64_t T = Tc + pv + pr;
    if (tape.val(tokens0).numel() != B * Tc * cfg.embed_dim)
        throw std::invalid_argument("engine: tokens0 does not match B*(1+M*n) rows of dim d");

    ValueId x = tokens0;
    ValueId carry = -1;  // residual contextual block of the previous layer

    for (int64_t i = 0; i < cfg.num_layers; ++i) {
        const std::string L = "backbone.layers." + std::to_string(i) + ".";
        const std::string P = "prompts.";
        const std::string idx = std::to_string(i);

        ValueId residual = -1;
        if (pr > 0) {
            // squeeze -> grid concat -> central difference -> pool -> expand,
            // all computed from this layer's incoming visual tokens
            const std::string C = P + "ctx." + idx + ".";
            const ValueId vis = tape.strided_rows(x, B, Tc, 1, M * n);
            const ValueId squeezed = tape.gelu(tape.linear(vis, tp.id(C + "down.weight"), tp.id(C + "down.bias")));
            const ValueId grid = tape.regroup_modalities(squeezed, B, M, n);
            const ValueId cd = tape.cdc2d(grid, tp.id(C + "cdc.weight"), tp.id(C + "cdc.bias"), B, g,
                                          cfg.cd_intensity);
            const ValueId pooled = tape.gap(cd, B, g);
            const ValueId ctx = tape.gelu(tape.linear(pooled, tp.id(C + "up.weight"), tp.id(C + "up.bias")));

            const ValueId gain = cfg.learned_expand ? tp.id(C + "expand_gain") : -1;
            const ValueId expanded = tape.expand_ctx(ctx, pr, gain);
            residual = tape.add(tape.broadcast_rows(tp.id(P + "base." + idx), B), expanded);
            if (carry != -1) residual = tape.add(residual, carry);  // absent at the first layer
        }

        const ValueId vanilla = pv > 0 ? tp.id(P + "vanilla." + idx) : -1;
        const ValueId seq = tape.assemble_tokens(x, vanilla, residual, B, Tc);

        // standard pre-norm ViT block over [content | prompts]
        const ValueId h1 = tape.layernorm(seq, tp.id(L + "ln1.gamma"), tp.id(L + "ln1.beta"), kLnEps);
        const ValueId qkv = tape.linear(h1, tp.id(L + "attn.qkv.weight"), tp.id(L + "attn.qkv.bias"));
        const ValueId att = tape.self_attention(qkv, B, T, cfg.num_heads);
        const ValueId proj = tape.linear(att, tp.id(L + "attn.proj.weight"), tp.id(L + "attn.proj.bias"));
        const ValueId x1 = tape.add(seq, proj);
        const ValueId h2 = tape.layernorm(x1, tp.id(L + "ln2.gamma"), tp.id(L + "ln2.beta"), kLnEps);
        const ValueId mid = tape.gelu(tape.linear(h2, tp.id(L + "mlp.fc1.weight"), tp.id(L + "mlp.fc1.bias")));
        const ValueId mlp = tape.linear(mid, tp.id(L + "mlp.fc2.weight"), tp.id(L + "mlp.fc2.bias"));
        const ValueId x2 = tape.add(x1, mlp);

        // prompt-position outputs are dropped; fresh prompts arrive next layer
        x = tape.strided_rows(x2, B, T, 0, Tc);
        carry = residual;
    }

    const ValueId xf = tape.layernorm(x, tp.id("backbone.final_ln.gamma"), tp.id("backbone.final_ln.beta"), kLnEps);
    const ValueId cls = tape.strided_rows(xf, B, Tc, 0, 1);
    const ValueId logits = tape.linear(cls, tp.id("head.weight"), tp.id("head.bias"));
    return {logits, cls};
}

ForwardResult prompted_forward(Tape& tape, const model::VpfasModel& m, const TapeParams& tp,
                               const std::vector<flexdata::DenseInput>& batch) {
    const ValueId tokens0 = tape.leaf(m.patch_embed(batch), false);
    return prompted_forward(tape, m, tp, tokens0, static_cast<int64_t>(batch.size()));
}

std::vector<double> live_scores(const Tape& tape, ValueId logits) {
    const Tensor& t = tape.val(logits);
    if (t.rank() != 2 || t.dim(1) != 2) throw std::invalid_argument("live_scores: logits must be [B,2]");
    std::vector<double> out(static_cast<size_t>(t.dim(0)));
    for (int64_t b = 0; b < t.dim(0); ++b) {
        const double l0 = t.at2(b, 0), l1 = t.at2(b, 1);
        const double mx = std::max(l0, l1);
        const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
        out[static_cast<size_t>(b)] = e1 / (e0 + e1);
    }
    return out;
}

}  // namespace flexprompt::engine
