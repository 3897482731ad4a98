// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include "flexprompt/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace flexprompt::ckpt {

namespace {

constexpr char kMagic[8] = {'F', 'P', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put<uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& in) {
    const auto len = take<uint64_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const model::VpfasModel& m, uint64_t backbone_seed,
                     const std::string& backbone_weights) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    put_string(out, m.config().to_json());
    put<uint64_t>(out, backbone_seed);
    put<uint64_t>(out, m.backbone_fingerprint());
    put_string(out, backbone_weights);

    std::vector<std::pair<std::string, const Tensor*>> arrays;
    for (size_t i = 0; i < m.params().size(); ++i) {
        const auto& p = m.params().param(i);
        if (p.trainable) arrays.emplace_back(p.name, &p.value);
    }
    model::write_array_block(out, arrays);
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    Checkpoint c;
    c.config = ModelConfig::from_json(take_string(in));
    c.backbone_seed = take<uint64_t>(in);
    c.backbone_fingerprint = take<uint64_t>(in);
    c.backbone_weights = take_string(in);
    c.arrays = model::read_array_block(in);
    return c;
}

void apply_arrays(model::VpfasModel& m, const Checkpoint& c) {
    for (const auto& [name, t] : c.arrays) {
        if (!m.params().has(name)) throw std::runtime_error("checkpoint: unknown parameter " + name);
        Tensor& w = m.params().at(name);
        if (w.shape != t.shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + name + ": model " + w.shape_str() +
                                     " vs stored " + t.shape_str());
        w.data = t.data;
    }
}

model::VpfasModel load_model(const std::string& path, bool allow_backbone_mismatch) {
    const Checkpoint c = read_checkpoint(path);
    model::VpfasModel m(c.config, c.backbone_seed);
    if (!c.backbone_weights.empty()) model::load_pretrained(m, c.backbone_weights);
    if (m.backbone_fingerprint() != c.backbone_fingerprint) {
        if (!allow_backbone_mismatch)
            throw std::runtime_error("checkpoint: backbone fingerprint mismatch for " + path +
                                     " (pass --allow-backbone-mismatch to override)");
        std::fprintf(stderr, "warning: loading %s with mismatched backbone fingerprint\n", path.c_str());
    }
    apply_arrays(m, c);
    return m;
}

}  // namespace flexprompt::ckpt
