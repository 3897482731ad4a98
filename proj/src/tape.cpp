// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include "flexprompt/tape.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "flexprompt/kernels.hpp"

namespace flexprompt {

namespace K = kernels;

namespace {
void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("tape: " + msg);
}
}  // namespace

ValueId Tape::push(Tensor v, bool rg) {
    if (no_grad_) rg = false;
    Node n;
    n.value = std::move(v);
    n.requires_grad = rg;
    if (rg) n.grad = Tensor(n.value.shape);
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size()) - 1;
}

void Tape::set_backfn(ValueId id, std::function<void(Tape&)> fn) {
    nodes_[static_cast<size_t>(id)].backfn = std::move(fn);
}

ValueId Tape::leaf(Tensor t, bool requires_grad) { return push(std::move(t), requires_grad); }

ValueId Tape::leaf_external(const Tensor* t, bool requires_grad) {
    const bool rg = requires_grad && !no_grad_;
    Node n;
    n.ext = t;
    n.requires_grad = rg;
    if (rg) n.grad = Tensor(t->shape);
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size()) - 1;
}

const Tensor& Tape::val(ValueId id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.ext ? *n.ext : n.value;
}

Tensor& Tape::grad(ValueId id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    require(n.requires_grad, "grad requested for a node without gradient");
    return n.grad;
}

const Tensor& Tape::grad(ValueId id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    require(n.requires_grad, "grad requested for a node without gradient");
    return n.grad;
}

bool Tape::requires_grad(ValueId id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

void Tape::backward(ValueId root) {
    require(val(root).numel() == 1, "backward root must be scalar");
    require(requires_grad(root), "backward root does not require grad");
    grad(root).data[0] = 1.0;
    for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.requires_grad && n.backfn) n.backfn(*this);
    }
}

// ---- elementwise --------------------------------------------------------

ValueId Tape::add(ValueId a, ValueId b) { return add_scaled(a, b, 1.0); }

ValueId Tape::add_scaled(ValueId a, ValueId b, double alpha) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.same_shape(tb), "add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += alpha * tb.data[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, a, b, alpha](Tape& t) {
            const Tensor& g = t.grad(id);
            if (t.requires_grad(a)) {
                Tensor& ga = t.grad(a);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            }
            if (t.requires_grad(b)) {
                Tensor& gb = t.grad(b);
                for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += alpha * g.data[i];
            }
        });
    return id;
}

ValueId Tape::scale(ValueId a, double c) {
    Tensor out = val(a);
    for (double& v : out.data) v *= c;
    const bool rg = requires_grad(a);
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, a, c](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& ga = t.grad(a);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
        });
    return id;
}

// ---- dense --------------------------------------------------------------

ValueId Tape::matmul(ValueId a, ValueId b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.rank() == 2 && tb.rank() == 2 && ta.dim(1) == tb.dim(0), "matmul: incompatible shapes");
    const int64_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
    Tensor out({m, n});
    K::matmul_nn(ta.ptr(), tb.ptr(), out.ptr(), m, k, n);
    const bool rg = requires_grad(a) || requires_grad(b);
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, a, b, m, k, n](Tape& t) {
            const Tensor& g = t.grad(id);
            if (t.requires_grad(a)) K::matmul_nt(g.ptr(), t.val(b).ptr(), t.grad(a).ptr(), m, n, k, true);
            if (t.requires_grad(b)) K::matmul_tn(t.val(a).ptr(), g.ptr(), t.grad(b).ptr(), k, m, n, true);
        });
    return id;
}

ValueId Tape::linear(ValueId x, ValueId w, ValueId b) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    require(tx.rank() == 2 && tw.rank() == 2 && tx.dim(1) == tw.dim(0), "linear: incompatible shapes");
    const int64_t m = tx.dim(0), k = tx.dim(1), n = tw.dim(1);
    Tensor out({m, n});
    K::matmul_nn(tx.ptr(), tw.ptr(), out.ptr(), m, k, n);
    if (b >= 0) {
        const Tensor& tb = val(b);
        require(tb.numel() == n, "linear: bias length mismatch");
        K::add_bias(out.ptr(), tb.ptr(), out.ptr(), m, n);
    }
    const bool rg = requires_grad(x) || requires_grad(w) || (b >= 0 && requires_grad(b));
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, x, w, b, m, k, n](Tape& t) {
            const Tensor& g = t.grad(id);
            if (t.requires_grad(x)) K::matmul_nt(g.ptr(), t.val(w).ptr(), t.grad(x).ptr(), m, n, k, true);
            if (t.requires_grad(w)) K::matmul_tn(t.val(x).ptr(), g.ptr(), t.grad(w).ptr(), k, m, n, true);
            if (b >= 0 && t.requires_grad(b)) K::bias_grad(g.ptr(), t.grad(b).ptr(), m, n);
        });
    return id;
}

ValueId Tape::layernorm(ValueId x, ValueId gamma, ValueId beta, double eps) {
    const Tensor& tx = val(x);
    require(tx.rank() == 2, "layernorm: x must be 2-d");
    const int64_t rows = tx.dim(0), cols = tx.dim(1);
    require(val(gamma).numel() == cols && val(beta).numel() == cols, "layernorm: affine length mismatch");
    Tensor out({rows, cols});
    auto stats = std::make_shared<std::pair<Tensor, Tensor>>(Tensor({rows}), Tensor({rows}));
    K::layernorm_forward(tx.ptr(), val(gamma).ptr(), val(beta).ptr(), out.ptr(),
                         stats->first.ptr(), stats->second.ptr(), rows, cols, eps);
    const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, x, gamma, beta, rows, cols, stats](Tape& t) {
            const Tensor& g = t.grad(id);
            // The kernel fills dx, dgamma, dbeta together; route through
            // scratch for any operand that does not take gradients.
            Tensor sx, sg, sb;
            double* dx = nullptr;
            double* dgm = nullptr;
            double* dbt = nullptr;
            if (t.requires_grad(x)) dx = t.grad(x).ptr();
            else { sx = Tensor({rows, cols}); dx = sx.ptr(); }
            if (t.requires_grad(gamma)) dgm = t.grad(gamma).ptr();
            else { sg = Tensor({cols}); dgm = sg.ptr(); }
            if (t.requires_grad(beta)) dbt = t.grad(beta).ptr();
            else { sb = Tensor({cols}); dbt = sb.ptr(); }
            K::layernorm_backward(t.val(x).ptr(), t.val(gamma).ptr(), stats->first.ptr(), stats->second.ptr(),
                                  g.ptr(), dx, dgm, dbt, rows, cols);
        });
    return id;
}

ValueId Tape::gelu(ValueId x) {
    const Tensor& tx = val(x);
    Tensor out(tx.shape);
    K::gelu_forward(tx.ptr(), out.ptr(), tx.numel());
    const bool rg = requires_grad(x);
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, x](Tape& t) {
            const Tensor& g = t.grad(id);
            K::gelu_backward(t.val(x).ptr(), g.ptr(), t.grad(x).ptr(), g.numel());
        });
    return id;
}

ValueId Tape::self_attention(ValueId qkv, int64_t B, int64_t T, int64_t heads) {
    const Tensor& tq = val(qkv);
    require(tq.rank() == 2 && tq.dim(0) == B * T && tq.dim(1) % 3 == 0, "self_attention: qkv must be [B*T, 3d]");
    const int64_t d = tq.dim(1) / 3;
    require(d % heads == 0, "self_attention: d must divide by heads");
    Tensor out({B * T, d});
    auto probs = std::make_shared<Tensor>(Tensor({B * heads * T * T}));
    K::attention_forward(tq.ptr(), out.ptr(), probs->ptr(), B, T, d, heads);
    const bool rg = requires_grad(qkv);
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, qkv, B, T, d, heads, probs](Tape& t) {
            K::attention_backward(t.val(qkv).ptr(), probs->ptr(), t.grad(id).ptr(), t.grad(qkv).ptr(), B, T, d, heads);
        });
    return id;
}

// ---- token plumbing -------------------------------------------------------

ValueId Tape::strided_rows(ValueId x, int64_t blocks, int64_t stride, int64_t offset, int64_t count) {
    const Tensor& tx = val(x);
    require(tx.rank() == 2 && tx.dim(0) == blocks * stride, "strided_rows: row count mismatch");
    require(offset >= 0 && offset + count <= stride, "strided_rows: range outside block");
    const int64_t d = tx.dim(1);
    Tensor out({blocks * count, d});
    for (int64_t b = 0; b < blocks; ++b)
        for (int64_t i = 0; i < count; ++i)
            std::copy_n(tx.ptr() + (b * stride + offset + i) * d, d, out.ptr() + (b * count + i) * d);
    const bool rg = requires_grad(x);
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, x, blocks, stride, offset, count, d](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& gx = t.grad(x);
            for (int64_t b = 0; b < blocks; ++b)
                for (int64_t i = 0; i < count; ++i) {
                    const double* src = g.ptr() + (b * count + i) * d;
                    double* dst = gx.ptr() + (b * stride + offset + i) * d;
                    for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                }
        });
    return id;
}

ValueId Tape::gather_rows(ValueId x, std::vector<int64_t> rows) {
    const Tensor& tx = val(x);
    require(tx.rank() == 2, "gather_rows: x must be a matrix");
    require(!rows.empty(), "gather_rows: empty selection");
    const int64_t r = tx.dim(0), d = tx.dim(1);
    for (int64_t i : rows) require(i >= 0 && i < r, "gather_rows: index out of range");
    Tensor out({static_cast<int64_t>(rows.size()), d});
    for (size_t k = 0; k < rows.size(); ++k)
        std::copy_n(tx.ptr() + rows[k] * d, d, out.ptr() + static_cast<int64_t>(k) * d);
    const bool rg = requires_grad(x);
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, x, rows = std::move(rows), d](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& gx = t.grad(x);
            for (size_t k = 0; k < rows.size(); ++k) {
                const double* src = g.ptr() + static_cast<int64_t>(k) * d;
                double* dst = gx.ptr() + rows[k] * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    return id;
}

ValueId Tape::assemble_tokens(ValueId content, ValueId vanilla, ValueId residual, int64_t B, int64_t Tc) {
    const Tensor& tc = val(content);
    require(tc.rank() == 2 && tc.dim(0) == B * Tc, "assemble_tokens: content rows mismatch");
    const int64_t d = tc.dim(1);
    const int64_t pv = vanilla >= 0 ? val(vanilla).dim(0) : 0;
    const int64_t pr = residual >= 0 ? val(residual).dim(0) / B : 0;
    if (vanilla >= 0) require(val(vanilla).dim(1) == d, "assemble_tokens: vanilla width mismatch");
    if (residual >= 0)
        require(val(residual).dim(1) == d && val(residual).dim(0) == B * pr, "assemble_tokens: residual rows mismatch");
    const int64_t T = Tc + pv + pr;
    Tensor out({B * T, d});
    for (int64_t b = 0; b < B; ++b) {
        double* base = out.ptr() + b * T * d;
        std::copy_n(tc.ptr() + b * Tc * d, Tc * d, base);
        if (pv > 0) std::copy_n(val(vanilla).ptr(), pv * d, base + Tc * d);
        if (pr > 0) std::copy_n(val(residual).ptr() + b * pr * d, pr * d, base + (Tc + pv) * d);
    }
    const bool rg = requires_grad(content) || (vanilla >= 0 && requires_grad(vanilla)) ||
                    (residual >= 0 && requires_grad(residual));
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, content, vanilla, residual, B, Tc, pv, pr, T, d](Tape& t) {
            const Tensor& g = t.grad(id);
            for (int64_t b = 0; b < B; ++b) {
                const double* base = g.ptr() + b * T * d;
                if (t.requires_grad(content)) {
                    double* dst = t.grad(content).ptr() + b * Tc * d;
                    for (int64_t j = 0; j < Tc * d; ++j) dst[j] += base[j];
                }
                if (vanilla >= 0 && t.requires_grad(vanilla)) {
                    double* dst = t.grad(vanilla).ptr();
                    const double* src = base + Tc * d;
                    for (int64_t j = 0; j < pv * d; ++j) dst[j] += src[j];
                }
                if (residual >= 0 && t.requires_grad(residual)) {
                    double* dst = t.grad(residual).ptr() + b * pr * d;
                    const double* src = base + (Tc + pv) * d;
                    for (int64_t j = 0; j < pr * d; ++j) dst[j] += src[j];
                }
            }
        });
    return id;
}

ValueId Tape::broadcast_rows(ValueId x, int64_t copies) {
    const Tensor& tx = val(x);
    require(tx.rank() == 2, "broadcast_rows: x must be 2-d");
    const int64_t r = tx.dim(0), c = tx.dim(1);
    Tensor out({copies * r, c});
    for (int64_t k = 0; k < copies; ++k) std::copy_n(tx.ptr(), r * c, out.ptr() + k * r * c);
    const bool rg = requires_grad(x);
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, x, copies, r, c](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& gx = t.grad(x);
            for (int64_t k = 0; k < copies; ++k) {
                const double* src = g.ptr() + k * r * c;
                for (int64_t j = 0; j < r * c; ++j) gx.data[static_cast<size_t>(j)] += src[j];
            }
        });
    return id;
}

ValueId Tape::regroup_modalities(ValueId x, int64_t B, int64_t M, int64_t n) {
    const Tensor& tx = val(x);
    require(tx.rank() == 2 && tx.dim(0) == B * M * n, "regroup_modalities: row count mismatch");
    const int64_t c = tx.dim(1);
    Tensor out({B * n, M * c});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t m = 0; m < M; ++m)
            for (int64_t p = 0; p < n; ++p)
                std::copy_n(tx.ptr() + ((b * M + m) * n + p) * c, c, out.ptr() + (b * n + p) * M * c + m * c);
    const bool rg = requires_grad(x);
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, x, B, M, n, c](Tape& t) {
            const Tensor& g = t.grad(id);
            Tensor& gx = t.grad(x);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t m = 0; m < M; ++m)
                    for (int64_t p = 0; p < n; ++p) {
                        const double* src = g.ptr() + (b * n + p) * M * c + m * c;
                        double* dst = gx.ptr() + ((b * M + m) * n + p) * c;
                        for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
                    }
        });
    return id;
}

ValueId Tape::expand_ctx(ValueId ctx, int64_t p, ValueId gain) {
    const Tensor& tc = val(ctx);
    require(tc.rank() == 2, "expand_ctx: ctx must be [B,d]");
    const int64_t B = tc.dim(0), d = tc.dim(1);
    if (gain >= 0) require(val(gain).numel() == p, "expand_ctx: gain length mismatch");
    Tensor out({B * p, d});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < p; ++s) {
            const double gs = gain >= 0 ? val(gain).at(s) : 1.0;
            const double* src = tc.ptr() + b * d;
            double* dst = out.ptr() + (b * p + s) * d;
            for (int64_t j = 0; j < d; ++j) dst[j] = gs * src[j];
        }
    const bool rg = requires_grad(ctx) || (gain >= 0 && requires_grad(gain));
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, ctx, gain, p, B, d](Tape& t) {
            const Tensor& g = t.grad(id);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t s = 0; s < p; ++s) {
                    const double* grow = g.ptr() + (b * p + s) * d;
                    const double gs = gain >= 0 ? t.val(gain).at(s) : 1.0;
                    if (t.requires_grad(ctx)) {
                        double* dst = t.grad(ctx).ptr() + b * d;
                        for (int64_t j = 0; j < d; ++j) dst[j] += gs * grow[j];
                    }
                    if (gain >= 0 && t.requires_grad(gain)) {
                        const double* crow = t.val(ctx).ptr() + b * d;
                        double acc = 0.0;
                        for (int64_t j = 0; j < d; ++j) acc += grow[j] * crow[j];
                        t.grad(gain).at(s) += acc;
                    }
                }
        });
    return id;
}

// ---- conv path ------------------------------------------------------------

ValueId Tape::cdc2d(ValueId x, ValueId w, ValueId bias, int64_t B, int64_t g, double theta) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    require(tx.rank() == 2 && tx.dim(0) == B * g * g, "cdc2d: x rows mismatch");
    const int64_t cin = tx.dim(1);
    require(tw.numel() % (9 * cin) == 0, "cdc2d: weight size mismatch");
    const int64_t cout = tw.numel() / (9 * cin);
    if (bias >= 0) require(val(bias).numel() == cout, "cdc2d: bias length mismatch");
    Tensor out({B * g * g, cout});
    K::cdc2d_forward(tx.ptr(), tw.ptr(), bias >= 0 ? val(bias).ptr() : nullptr, out.ptr(), B, g, cin, cout, theta);
    const bool rg = requires_grad(x) || requires_grad(w) || (bias >= 0 && requires_grad(bias));
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, x, w, bias, B, g, cin, cout, theta](Tape& t) {
            const Tensor& gr = t.grad(id);
            Tensor sx, sw, sb;
            double* dx = nullptr;
            double* dw = nullptr;
            double* db = nullptr;
            if (t.requires_grad(x)) dx = t.grad(x).ptr();
            else { sx = Tensor({B * g * g, cin}); dx = sx.ptr(); }
            if (t.requires_grad(w)) dw = t.grad(w).ptr();
            else { sw = Tensor({9 * cin, cout}); dw = sw.ptr(); }
            if (bias >= 0 && t.requires_grad(bias)) db = t.grad(bias).ptr();
            else { sb = Tensor({cout}); db = sb.ptr(); }
            K::cdc2d_backward(t.val(x).ptr(), t.val(w).ptr(), gr.ptr(), dx, dw, db, B, g, cin, cout, theta);
        });
    return id;
}

ValueId Tape::gap(ValueId x, int64_t B, int64_t g) {
    const Tensor& tx = val(x);
    require(tx.rank() == 2 && tx.dim(0) == B * g * g, "gap: x rows mismatch");
    const int64_t c = tx.dim(1);
    Tensor out({B, c});
    K::gap_forward(tx.ptr(), out.ptr(), B, g, c);
    const bool rg = requires_grad(x);
    ValueId id = push(std::move(out), rg);
    if (rg)
        set_backfn(id, [id, x, B, g, c](Tape& t) {
            K::gap_backward(t.grad(id).ptr(), t.grad(x).ptr(), B, g, c);
        });
    return id;
}

// ---- losses -----------------------------------------------------------------

ValueId Tape::softmax_ce(ValueId logits, const std::vector<int>& labels) {
    const Tensor& tl = val(logits);
    require(tl.rank() == 2, "softmax_ce: logits must be [B,C]");
    const int64_t B = tl.dim(0), C = tl.dim(1);
    require(static_cast<int64_t>(labels.size()) == B, "softmax_ce: label count mismatch");
    auto probs = std::make_shared<Tensor>(Tensor({B, C}));
    double loss = 0.0;
    for (int64_t i = 0; i < B; ++i) {
        const double* row = tl.ptr() + i * C;
        double mx = row[0];
        for (int64_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int64_t j = 0; j < C; ++j) z += std::exp(row[j] - mx);
        const int y = labels[static_cast<size_t>(i)];
        require(y >= 0 && y < C, "softmax_ce: label out of range");
        for (int64_t j = 0; j < C; ++j) probs->at2(i, j) = std::exp(row[j] - mx) / z;
        loss += std::log(z) + mx - row[y];
    }
    loss /= static_cast<double>(B);
    const bool rg = requires_grad(logits);
    ValueId id = push(Tensor::scalar(loss), rg);
    if (rg) {
        auto lab = std::make_shared<std::vector<int>>(labels);
        set_backfn(id, [id, logits, B, C, probs, lab](Tape& t) {
            const double gd = t.grad(id).data[0] / static_cast<double>(B);
            Tensor& gl = t.grad(logits);
            for (int64_t i = 0; i < B; ++i)
                for (int64_t j = 0; j < C; ++j) {
                    const double ind = (j == (*lab)[static_cast<size_t>(i)]) ? 1.0 : 0.0;
                    gl.at2(i, j) += gd * (probs->at2(i, j) - ind);
                }
        });
    }
    return id;
}

ValueId Tape::neg_cosine_mean(ValueId a, ValueId b, bool stop_grad_b, int* skipped) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.same_shape(tb) && ta.rank() == 2, "neg_cosine_mean: rows must match");
    const int64_t R = ta.dim(0), d = ta.dim(1);
    constexpr double kMinNorm = 1e-12;
    auto aux = std::make_shared<Tensor>(Tensor({R, 3}));  // |a|, |b|, cos per row; |a|<0 marks skipped
    double loss = 0.0;
    int64_t used = 0;
    for (int64_t r = 0; r < R; ++r) {
        const double* ar = ta.ptr() + r * d;
        const double* br = tb.ptr() + r * d;
        double na = 0.0, nb = 0.0, dot = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            na += ar[j] * ar[j];
            nb += br[j] * br[j];
            dot += ar[j] * br[j];
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        if (na < kMinNorm || nb < kMinNorm) {
            aux->at2(r, 0) = -1.0;
            continue;
        }
        const double cosv = dot / (na * nb);
        aux->at2(r, 0) = na;
        aux->at2(r, 1) = nb;
        aux->at2(r, 2) = cosv;
        loss -= cosv;
        ++used;
    }
    if (skipped) *skipped = static_cast<int>(R - used);
    loss = used > 0 ? loss / static_cast<double>(used) : 0.0;
    const int64_t denom = used > 0 ? used : 1;
    const bool rg = requires_grad(a) || (!stop_grad_b && requires_grad(b));
    ValueId id = push(Tensor::scalar(loss), rg);
    if (rg)
        set_backfn(id, [id, a, b, stop_grad_b, R, d, denom, aux](Tape& t) {
            const double gd = t.grad(id).data[0] / static_cast<double>(denom);
            const Tensor& ta2 = t.val(a);
            const Tensor& tb2 = t.val(b);
            for (int64_t r = 0; r < R; ++r) {
                const double na = aux->at2(r, 0);
                if (na < 0.0) continue;
                const double nb = aux->at2(r, 1);
                const double cosv = aux->at2(r, 2);
                const double* ar = ta2.ptr() + r * d;
                const double* br = tb2.ptr() + r * d;
                // d(-cos)/da = -(b_hat - cos * a_hat)/|a|
                if (t.requires_grad(a)) {
                    double* ga = t.grad(a).ptr() + r * d;
                    for (int64_t j = 0; j < d; ++j)
                        ga[j] += gd * (-(br[j] / nb - cosv * ar[j] / na) / na);
                }
                if (!stop_grad_b && t.requires_grad(b)) {
                    double* gb = t.grad(b).ptr() + r * d;
                    for (int64_t j = 0; j < d; ++j)
                        gb[j] += gd * (-(ar[j] / na - cosv * br[j] / nb) / nb);
                }
            }
        });
    return id;
}

}  // namespace flexprompt
