// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include "flexprompt/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "flexprompt/kernels.hpp"
#include "flexprompt/rng.hpp"

namespace flexprompt::model {

// ---- ParamRegistry ---------------------------------------------------------

Tensor& ParamRegistry::add(const std::string& name, std::vector<int64_t> shape, bool trainable) {
    if (has(name)) throw std::invalid_argument("registry: duplicate parameter " + name);
    index_[name] = params_.size();
    params_.push_back({name, Tensor(std::move(shape)), trainable});
    return params_.back().value;
}

Tensor& ParamRegistry::at(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("registry: no parameter " + name);
    return params_[it->second].value;
}

const Tensor& ParamRegistry::at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("registry: no parameter " + name);
    return params_[it->second].value;
}

bool ParamRegistry::is_trainable(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("registry: no parameter " + name);
    return params_[it->second].trainable;
}

void ParamRegistry::set_trainable(const std::string& name, bool v) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("registry: no parameter " + name);
    params_[it->second].trainable = v;
}

std::vector<std::string> ParamRegistry::names(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& p : params_)
        if (p.name.rfind(prefix, 0) == 0) out.push_back(p.name);
    return out;
}

int64_t ParamRegistry::scalar_count(bool trainable_only) const {
    int64_t n = 0;
    for (const auto& p : params_)
        if (!trainable_only || p.trainable) n += p.value.numel();
    return n;
}

// ---- analytic counts -------------------------------------------------------

ParamCounts analytic_param_counts(const ModelConfig& cfg) {
    const int64_t d = cfg.embed_dim;
    const int64_t h = cfg.mlp_hidden();
    const int64_t n = cfg.patches_per_modality();
    const int64_t dd = cfg.hidden_dim;
    const int64_t M = cfg.num_modalities;

    int64_t backbone = 0;
    backbone += (cfg.patch_dim() * d + d) * (cfg.shared_patch_embed ? 1 : M);
    backbone += d;             // class token
    backbone += (1 + n) * d;   // positional table, shared across modalities
    const int64_t per_layer = 2 * d                 // ln1
                              + d * 3 * d + 3 * d   // qkv
                              + d * d + d           // attn proj
                              + 2 * d               // ln2
                              + d * h + h           // fc1
                              + h * d + d;          // fc2
    backbone += cfg.num_layers * per_layer;
    backbone += 2 * d;  // final layernorm

    int64_t trainable = d * 2 + 2;  // head
    const int64_t pv = cfg.vanilla_len(), pr = cfg.residual_len();
    trainable += cfg.num_layers * (pv + pr) * d;
    if (pr > 0) {
        int64_t ctx = d * dd + dd                      // squeeze
                      + 9 * (M * dd) * dd + dd         // central difference conv
                      + dd * d + d;                    // expand back to d
        if (cfg.learned_expand) ctx += pr;
        trainable += cfg.num_layers * ctx;
    }
    return {trainable, backbone + trainable};
}

// ---- model -----------------------------------------------------------------

VpfasModel::VpfasModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    build();
    init_params(seed);
    freeze_backbone();
}

void VpfasModel::build() {
    const int64_t d = cfg_.embed_dim;
    const int64_t h = cfg_.mlp_hidden();
    const int64_t n = cfg_.patches_per_modality();
    const int64_t dd = cfg_.hidden_dim;
    const int64_t M = cfg_.num_modalities;

    if (cfg_.shared_patch_embed) {
        reg_.add("backbone.patch_embed.weight", {cfg_.patch_dim(), d}, false);
        reg_.add("backbone.patch_embed.bias", {d}, false);
    } else {
        for (const char* m : {"rgb", "depth", "ir"}) {
            reg_.add(std::string("backbone.patch_embed.") + m + ".weight", {cfg_.patch_dim(), d}, false);
            reg_.add(std::string("backbone.patch_embed.") + m + ".bias", {d}, false);
        }
    }
    reg_.add("backbone.cls_token", {1, d}, false);
    reg_.add("backbone.pos_embed", {1 + n, d}, false);

    for (int64_t i = 0; i < cfg_.num_layers; ++i) {
        const std::string L = "backbone.layers." + std::to_string(i) + ".";
        reg_.add(L + "ln1.gamma", {d}, false);
        reg_.add(L + "ln1.beta", {d}, false);
        reg_.add(L + "attn.qkv.weight", {d, 3 * d}, false);
        reg_.add(L + "attn.qkv.bias", {3 * d}, false);
        reg_.add(L + "attn.proj.weight", {d, d}, false);
        reg_.add(L + "attn.proj.bias", {d}, false);
        reg_.add(L + "ln2.gamma", {d}, false);
        reg_.add(L + "ln2.beta", {d}, false);
        reg_.add(L + "mlp.fc1.weight", {d, h}, false);
        reg_.add(L + "mlp.fc1.bias", {h}, false);
        reg_.add(L + "mlp.fc2.weight", {h, d}, false);
        reg_.add(L + "mlp.fc2.bias", {d}, false);
    }
    reg_.add("backbone.final_ln.gamma", {d}, false);
    reg_.add("backbone.final_ln.beta", {d}, false);

    const int64_t pv = cfg_.vanilla_len(), pr = cfg_.residual_len();
    for (int64_t i = 0; i < cfg_.num_layers; ++i) {
        const std::string P = "prompts.";
        const std::string idx = std::to_string(i);
        if (pv > 0) reg_.add(P + "vanilla." + idx, {pv, d}, true);
        if (pr > 0) {
            reg_.add(P + "base." + idx, {pr, d}, true);
            reg_.add(P + "ctx." + idx + ".down.weight", {d, dd}, true);
            reg_.add(P + "ctx." + idx + ".down.bias", {dd}, true);
            reg_.add(P + "ctx." + idx + ".cdc.weight", {3, 3, M * dd, dd}, true);
            reg_.add(P + "ctx." + idx + ".cdc.bias", {dd}, true);
            reg_.add(P + "ctx." + idx + ".up.weight", {dd, d}, true);
            reg_.add(P + "ctx." + idx + ".up.bias", {d}, true);
            if (cfg_.learned_expand) reg_.add(P + "ctx." + idx + ".expand_gain", {pr}, true);
        }
    }
    reg_.add("head.weight", {d, 2}, true);
    reg_.add("head.bias", {2}, true);
}

namespace {

bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

void fill_uniform(Tensor& t, Rng& rng, double bound) {
    for (double& v : t.data) v = rng.uniform(-bound, bound);
}

}  // namespace

void VpfasModel::init_params(uint64_t seed) {
    const double d = static_cast<double>(cfg_.embed_dim);
    const double dd = static_cast<double>(cfg_.hidden_dim);
    const double M = static_cast<double>(cfg_.num_modalities);

    for (size_t i = 0; i < reg_.size(); ++i) {
        Param& p = reg_.param(i);
        Rng rng(derive_seed(seed, p.name));
        Tensor& t = p.value;
        const std::string& name = p.name;

        if (name.rfind("head.", 0) == 0) {
            // zero head: the untrained score is exactly 0.5
            std::fill(t.data.begin(), t.data.end(), 0.0);
        } else if (ends_with(name, ".gamma")) {
            std::fill(t.data.begin(), t.data.end(), 1.0);
        } else if (ends_with(name, ".beta") || ends_with(name, ".bias")) {
            std::fill(t.data.begin(), t.data.end(), 0.0);
        } else if (ends_with(name, ".expand_gain")) {
            std::fill(t.data.begin(), t.data.end(), 1.0);  // starts as pure replication
        } else if (name.rfind("prompts.vanilla.", 0) == 0 || name.rfind("prompts.base.", 0) == 0) {
            fill_uniform(t, rng, 1.0 / std::sqrt(d));
        } else if (name.find(".down.weight") != std::string::npos) {
            fill_uniform(t, rng, 1.0 / std::sqrt(d));
        } else if (name.find(".cdc.weight") != std::string::npos) {
            fill_uniform(t, rng, 1.0 / std::sqrt(9.0 * M * dd));
        } else if (name.find(".up.weight") != std::string::npos) {
            fill_uniform(t, rng, 1.0 / std::sqrt(dd));
        } else if (name == "backbone.cls_token" || name == "backbone.pos_embed") {
            for (double& v : t.data) v = rng.normal(0.0, 0.02);
        } else {
            // backbone matrices: uniform with fan-in scaling ([in,out] layout)
            const double fan_in = static_cast<double>(t.dim(0));
            fill_uniform(t, rng, 1.0 / std::sqrt(fan_in));
        }
    }
}

void VpfasModel::freeze_backbone() {
    for (size_t i = 0; i < reg_.size(); ++i) {
        Param& p = reg_.param(i);
        if (p.name.rfind("backbone.", 0) == 0) p.trainable = false;
    }
}

double VpfasModel::trainable_param_ratio() const {
    return static_cast<double>(reg_.scalar_count(true)) / static_cast<double>(reg_.scalar_count(false));
}

uint64_t VpfasModel::backbone_fingerprint() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < reg_.size(); ++i) {
        const Param& p = reg_.param(i);
        if (p.trainable) continue;
        h = fnv1a64(p.name, h);
        h = fnv1a64(p.value.shape.data(), p.value.shape.size() * sizeof(int64_t), h);
        h = fnv1a64(p.value.data.data(), p.value.data.size() * sizeof(double), h);
    }
    return h;
}

Tensor VpfasModel::patch_embed(const std::vector<flexdata::DenseInput>& batch) const {
    const int64_t B = static_cast<int64_t>(batch.size());
    const int64_t d = cfg_.embed_dim;
    const int64_t P = cfg_.patch_size;
    const int64_t g = cfg_.grid();
    const int64_t n = cfg_.patches_per_modality();
    const int64_t Tc = cfg_.content_tokens();
    const int64_t S = cfg_.image_size;
    const int64_t pd = cfg_.patch_dim();
    if (B == 0) throw std::invalid_argument("patch_embed: empty batch");

    const Tensor& cls = reg_.at("backbone.cls_token");
    const Tensor& pos = reg_.at("backbone.pos_embed");

    Tensor out({B * Tc, d});
    Tensor patches({n, pd});
    const char* mod_names[3] = {"rgb", "depth", "ir"};

    for (int64_t b = 0; b < B; ++b) {
        const auto& in = batch[b];
        if (in.rgb.rank() != 3 || in.rgb.dim(0) != S || in.rgb.dim(1) != S || in.rgb.dim(2) != 3 ||
            in.depth.numel() != S * S || in.ir.numel() != S * S)
            throw std::invalid_argument("patch_embed: plane dimensions do not match the config");

        const int64_t base = b * Tc;
        for (int64_t j = 0; j < d; ++j) out.data[static_cast<size_t>(base * d + j)] = cls.data[j] + pos.data[j];

        for (int64_t m = 0; m < cfg_.num_modalities; ++m) {
            const std::string stem =
                cfg_.shared_patch_embed ? std::string("backbone.patch_embed.")
                                        : std::string("backbone.patch_embed.") + mod_names[m] + ".";
            const Tensor& W = reg_.at(stem + "weight");
            const Tensor& bias = reg_.at(stem + "bias");

            // patch rows indexed (channel, py, px); single planes replicate
            for (int64_t gy = 0; gy < g; ++gy) {
                for (int64_t gx = 0; gx < g; ++gx) {
                    double* row = patches.ptr() + (gy * g + gx) * pd;
                    for (int64_t c = 0; c < 3; ++c) {
                        for (int64_t py = 0; py < P; ++py) {
                            for (int64_t px = 0; px < P; ++px) {
                                const int64_t y = gy * P + py, x = gx * P + px;
                                double v;
                                if (m == 0) v = in.rgb.data[static_cast<size_t>((y * S + x) * 3 + c)];
                                else if (m == 1) v = in.depth.data[static_cast<size_t>(y * S + x)];
                                else v = in.ir.data[static_cast<size_t>(y * S + x)];
                                row[(c * P + py) * P + px] = v;
                            }
                        }
                    }
                }
            }

            double* dst = out.ptr() + (base + 1 + m * n) * d;
            kernels::matmul_nn(patches.ptr(), W.ptr(), dst, n, pd, d, false);
            kernels::add_bias(dst, bias.ptr(), dst, n, d);
            for (int64_t r = 0; r < n; ++r)
                for (int64_t j = 0; j < d; ++j) dst[r * d + j] += pos.data[static_cast<size_t>((1 + r) * d + j)];
        }
    }
    return out;
}

// ---- weight files ----------------------------------------------------------

namespace {

constexpr char kWeightMagic[8] = {'F', 'P', 'T', 'N', 'S', 'R', '0', '1'};
constexpr uint8_t kDtypeF64 = 2;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("weights: truncated file");
    return v;
}

}  // namespace

void write_array_block(std::ostream& out, const std::vector<std::pair<std::string, const Tensor*>>& arrays) {
    put<uint32_t>(out, static_cast<uint32_t>(arrays.size()));
    for (const auto& [name, t] : arrays) {
        put<uint16_t>(out, static_cast<uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<uint8_t>(out, kDtypeF64);
        put<uint8_t>(out, static_cast<uint8_t>(t->rank()));
        for (int64_t e : t->shape) put<int64_t>(out, e);
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<std::streamsize>(t->data.size() * sizeof(double)));
    }
}

std::vector<std::pair<std::string, Tensor>> read_array_block(std::istream& in) {
    const auto count = take<uint32_t>(in);
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (uint32_t a = 0; a < count; ++a) {
        const auto name_len = take<uint16_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (take<uint8_t>(in) != kDtypeF64) throw std::runtime_error("weights: unsupported dtype for " + name);
        const auto rank = take<uint8_t>(in);
        std::vector<int64_t> shape(rank);
        for (auto& e : shape) e = take<int64_t>(in);
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!in) throw std::runtime_error("weights: truncated data for " + name);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

void write_weight_file(const std::string& path, const std::vector<std::pair<std::string, const Tensor*>>& arrays) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("weights: cannot write " + path);
    out.write(kWeightMagic, sizeof(kWeightMagic));
    write_array_block(out, arrays);
    if (!out) throw std::runtime_error("weights: write failed for " + path);
}

std::vector<std::pair<std::string, Tensor>> read_weight_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("weights: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kWeightMagic, sizeof(magic)) != 0)
        throw std::runtime_error("weights: bad magic in " + path);
    return read_array_block(in);
}

// ---- pretrained loading ------------------------------------------------------

namespace {

enum class Layout { direct, transpose2d, patch4d };

struct SourceRule {
    std::string name;
    Layout layout;
};

// External candidates for one internal backbone name, most specific first.
std::vector<SourceRule> external_candidates(const std::string& internal, const ModelConfig& cfg) {
    (void)cfg;
    std::vector<SourceRule> out;
    const auto layer_rule = [&](const std::string& rest, int64_t i) {
        const std::string blk = "blocks." + std::to_string(i) + ".";
        if (rest == "ln1.gamma") out.push_back({blk + "norm1.weight", Layout::direct});
        else if (rest == "ln1.beta") out.push_back({blk + "norm1.bias", Layout::direct});
        else if (rest == "ln2.gamma") out.push_back({blk + "norm2.weight", Layout::direct});
        else if (rest == "ln2.beta") out.push_back({blk + "norm2.bias", Layout::direct});
        else if (rest == "attn.qkv.weight") out.push_back({blk + "attn.qkv.weight", Layout::transpose2d});
        else if (rest == "attn.qkv.bias") out.push_back({blk + "attn.qkv.bias", Layout::direct});
        else if (rest == "attn.proj.weight") out.push_back({blk + "attn.proj.weight", Layout::transpose2d});
        else if (rest == "attn.proj.bias") out.push_back({blk + "attn.proj.bias", Layout::direct});
        else if (rest == "mlp.fc1.weight") out.push_back({blk + "mlp.fc1.weight", Layout::transpose2d});
        else if (rest == "mlp.fc1.bias") out.push_back({blk + "mlp.fc1.bias", Layout::direct});
        else if (rest == "mlp.fc2.weight") out.push_back({blk + "mlp.fc2.weight", Layout::transpose2d});
        else if (rest == "mlp.fc2.bias") out.push_back({blk + "mlp.fc2.bias", Layout::direct});
    };

    if (internal == "backbone.cls_token") out.push_back({"cls_token", Layout::direct});
    else if (internal == "backbone.pos_embed") out.push_back({"pos_embed", Layout::direct});
    else if (internal == "backbone.final_ln.gamma") out.push_back({"norm.weight", Layout::direct});
    else if (internal == "backbone.final_ln.beta") out.push_back({"norm.bias", Layout::direct});
    else if (internal.find("patch_embed") != std::string::npos && ends_with(internal, ".weight"))
        out.push_back({"patch_embed.proj.weight", Layout::patch4d});
    if (internal.find("patch_embed") != std::string::npos && ends_with(internal, ".bias"))
        out.push_back({"patch_embed.proj.bias", Layout::direct});

    const std::string layers = "backbone.layers.";
    if (internal.rfind(layers, 0) == 0) {
        const size_t dot = internal.find('.', layers.size());
        const int64_t i = std::stoll(internal.substr(layers.size(), dot - layers.size()));
        layer_rule(internal.substr(dot + 1), i);
    }
    return out;
}

void copy_with_layout(const Tensor& src, Layout layout, Tensor& dst, const std::string& who) {
    const auto fail = [&] {
        throw std::runtime_error("load: shape mismatch for " + who + ": file " + src.shape_str() + " vs model " +
                                 dst.shape_str());
    };
    switch (layout) {
        case Layout::direct:
            // leading singleton dims in exports ([1,1,d] class token) collapse
            if (src.numel() != dst.numel()) fail();
            dst.data = src.data;
            break;
        case Layout::transpose2d: {
            if (src.rank() != 2 || src.dim(0) != dst.dim(1) || src.dim(1) != dst.dim(0)) fail();
            const int64_t r = src.dim(0), c = src.dim(1);
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j)
                    dst.data[static_cast<size_t>(j * r + i)] = src.data[static_cast<size_t>(i * c + j)];
            break;
        }
        case Layout::patch4d: {
            // [d, 3, P, P] -> rows indexed (channel, py, px), columns d
            if (src.rank() != 4 || src.numel() != dst.numel() || src.dim(0) != dst.dim(1)) fail();
            const int64_t d = src.dim(0), C = src.dim(1), P = src.dim(2);
            if (src.dim(3) != P || dst.dim(0) != C * P * P) fail();
            for (int64_t o = 0; o < d; ++o)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t py = 0; py < P; ++py)
                        for (int64_t px = 0; px < P; ++px)
                            dst.data[static_cast<size_t>(((c * P + py) * P + px) * d + o)] =
                                src.data[static_cast<size_t>(((o * C + c) * P + py) * P + px)];
            break;
        }
    }
}

}  // namespace

LoadAudit load_pretrained(VpfasModel& model, const std::string& path) {
    const auto arrays = read_weight_file(path);
    std::map<std::string, const Tensor*> by_name;
    std::map<std::string, bool> consumed;
    for (const auto& [name, t] : arrays) {
        by_name[name] = &t;
        consumed[name] = false;
    }

    LoadAudit audit;
    ParamRegistry& reg = model.params();
    for (size_t i = 0; i < reg.size(); ++i) {
        Param& p = reg.param(i);
        if (p.name.rfind("backbone.", 0) != 0) continue;  // prompts/head keep their init

        bool filled = false;
        if (const auto it = by_name.find(p.name); it != by_name.end()) {
            if (it->second->numel() != p.value.numel())
                throw std::runtime_error("load: shape mismatch for " + p.name + ": file " +
                                         it->second->shape_str() + " vs model " + p.value.shape_str());
            p.value.data = it->second->data;
            consumed[p.name] = true;
            filled = true;
        } else {
            for (const auto& rule : external_candidates(p.name, model.config())) {
                const auto src = by_name.find(rule.name);
                if (src == by_name.end()) continue;
                copy_with_layout(*src->second, rule.layout, p.value, p.name);
                consumed[rule.name] = true;
                filled = true;
                break;
            }
        }
        (filled ? audit.matched : audit.unmatched_model).push_back(p.name);
    }
    for (const auto& [name, used] : consumed)
        if (!used) audit.ignored_source.push_back(name);
    return audit;
}

}  // namespace flexprompt::model
