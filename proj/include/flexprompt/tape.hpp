// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "flexprompt/tensor.hpp"

namespace flexprompt {

using ValueId = int;

/// Reverse-mode autograd tape. Nodes are whole tensors; ops dispatch to the
/// kernel backend for the heavy math. Creation order is topological, so
/// backward() is a single reverse sweep. One tape per training step.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf owning its tensor.
    ValueId leaf(Tensor t, bool requires_grad = false);
    /// Leaf referencing external storage (parameters). The pointee must
    /// outlive the tape.
    ValueId leaf_external(const Tensor* t, bool requires_grad);

    const Tensor& val(ValueId id) const;
    Tensor& grad(ValueId id);
    const Tensor& grad(ValueId id) const;
    bool requires_grad(ValueId id) const;
    int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

    /// While true, new nodes are recorded without gradients (forward only).
    void set_no_grad(bool v) { no_grad_ = v; }

    /// Seeds d(root)=1 and runs one reverse sweep. root must be scalar.
    void backward(ValueId root);

    // ---- elementwise / shape ----
    ValueId add(ValueId a, ValueId b);
    ValueId add_scaled(ValueId a, ValueId b, double alpha);  // a + alpha*b
    ValueId scale(ValueId a, double c);

    // ---- dense ----
    ValueId matmul(ValueId a, ValueId b);                    // [m,k]x[k,n]
    ValueId linear(ValueId x, ValueId w, ValueId b);         // x[m,k] w[k,n] (+ b[n]); b = -1 for none
    ValueId layernorm(ValueId x, ValueId gamma, ValueId beta, double eps);
    ValueId gelu(ValueId x);
    /// qkv packed [B*T, 3d] -> [B*T, d]
    ValueId self_attention(ValueId qkv, int64_t B, int64_t T, int64_t heads);

    // ---- token plumbing ----
    /// From x [blocks*stride, d], take rows [offset, offset+count) of every
    /// block -> [blocks*count, d].
    ValueId strided_rows(ValueId x, int64_t blocks, int64_t stride, int64_t offset, int64_t count);
    /// Arbitrary row selection from x [r,c] -> [rows.size(), c]. Repeats
    /// allowed; backward scatter-adds.
    ValueId gather_rows(ValueId x, std::vector<int64_t> rows);
    /// Layout per sample: [content | vanilla | residual]. vanilla [pv,d] is
    /// shared across the batch; residual [B*pr,d] is per sample. Either may
    /// be -1.
    ValueId assemble_tokens(ValueId content, ValueId vanilla, ValueId residual, int64_t B, int64_t Tc);
    /// Tile x [r,c] -> [copies*r, c].
    ValueId broadcast_rows(ValueId x, int64_t copies);
    /// [B*M*n, c] grouped by modality -> [B*n, M*c] grouped by grid cell.
    ValueId regroup_modalities(ValueId x, int64_t B, int64_t M, int64_t n);
    /// ctx [B,d] -> [B*p, d]; each sample row is replicated p times, scaled
    /// by gain[s] when gain >= 0 (learned expansion).
    ValueId expand_ctx(ValueId ctx, int64_t p, ValueId gain);

    // ---- conv path ----
    /// x as rows [B*g*g, cin], w [3,3,cin,cout] flat, bias [cout] or -1.
    ValueId cdc2d(ValueId x, ValueId w, ValueId bias, int64_t B, int64_t g, double theta);
    ValueId gap(ValueId x, int64_t B, int64_t g);

    // ---- losses ----
    /// Mean softmax cross-entropy, logits [B,C], labels in [0,C).
    ValueId softmax_ce(ValueId logits, const std::vector<int>& labels);
    /// Mean over rows of -cos(a_r, b_r). Rows where either norm < 1e-12 are
    /// skipped (and counted in *skipped); the mean is over contributing rows.
    /// stop_grad_b treats b as a constant.
    ValueId neg_cosine_mean(ValueId a, ValueId b, bool stop_grad_b, int* skipped = nullptr);

private:
    struct Node {
        const Tensor* ext = nullptr;
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backfn;
    };

    std::vector<Node> nodes_;
    bool no_grad_ = false;

    ValueId push(Tensor v, bool rg);
    void set_backfn(ValueId id, std::function<void(Tape&)> fn);
};

}  // namespace flexprompt
