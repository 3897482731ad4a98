// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include "flexprompt/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace flexprompt::imageio {

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
    std::string tok;
    for (;;) {
        int c = in.get();
        if (c == EOF) throw std::runtime_error("image: truncated header");
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
}

void read_header(std::istream& in, const char* magic, int64_t& w, int64_t& h) {
    if (next_token(in) != magic) throw std::runtime_error(std::string("image: expected ") + magic + " header");
    w = std::stoll(next_token(in));
    h = std::stoll(next_token(in));
    const int64_t maxval = std::stoll(next_token(in));
    if (w <= 0 || h <= 0) throw std::runtime_error("image: bad dimensions");
    if (maxval != 255) throw std::runtime_error("image: only 8-bit images supported");
}

uint8_t quantize(double v) {
    v = std::min(1.0, std::max(0.0, v));
    return static_cast<uint8_t>(std::lround(v * 255.0));
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("image: cannot open " + path);
    int64_t w = 0, h = 0;
    read_header(in, "P6", w, h);
    std::vector<unsigned char> raw(static_cast<size_t>(w * h * 3));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw std::runtime_error("image: truncated pixel data in " + path);
    Tensor t({h, w, 3});
    for (size_t i = 0; i < raw.size(); ++i) t.data[i] = raw[i] / 255.0;
    return t;
}

Tensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("image: cannot open " + path);
    int64_t w = 0, h = 0;
    read_header(in, "P5", w, h);
    std::vector<unsigned char> raw(static_cast<size_t>(w * h));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw std::runtime_error("image: truncated pixel data in " + path);
    Tensor t({h, w});
    for (size_t i = 0; i < raw.size(); ++i) t.data[i] = raw[i] / 255.0;
    return t;
}

void write_ppm(const std::string& path, const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.dim(2) != 3) throw std::invalid_argument("write_ppm: tensor must be [H,W,3]");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("image: cannot write " + path);
    out << "P6\n" << rgb.dim(1) << " " << rgb.dim(0) << "\n255\n";
    std::vector<unsigned char> raw(rgb.data.size());
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = quantize(rgb.data[i]);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void write_pgm(const std::string& path, const Tensor& gray) {
    if (gray.rank() != 2) throw std::invalid_argument("write_pgm: tensor must be [H,W]");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("image: cannot write " + path);
    out << "P5\n" << gray.dim(1) << " " << gray.dim(0) << "\n255\n";
    std::vector<unsigned char> raw(gray.data.size());
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = quantize(gray.data[i]);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

Tensor resize(const Tensor& img, int64_t size) {
    const bool has_c = img.rank() == 3;
    if (!has_c && img.rank() != 2) throw std::invalid_argument("resize: tensor must be [H,W] or [H,W,C]");
    const int64_t h = img.dim(0), w = img.dim(1), c = has_c ? img.dim(2) : 1;
    if (h == size && w == size) return img;
    Tensor out(has_c ? std::vector<int64_t>{size, size, c} : std::vector<int64_t>{size, size});
    for (int64_t oy = 0; oy < size; ++oy) {
        const double sy = (oy + 0.5) * static_cast<double>(h) / static_cast<double>(size) - 0.5;
        const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(sy)));
        const int64_t y1 = std::min(h - 1, y0 + 1);
        const double fy = std::min(1.0, std::max(0.0, sy - static_cast<double>(y0)));
        for (int64_t ox = 0; ox < size; ++ox) {
            const double sx = (ox + 0.5) * static_cast<double>(w) / static_cast<double>(size) - 0.5;
            const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(sx)));
            const int64_t x1 = std::min(w - 1, x0 + 1);
            const double fx = std::min(1.0, std::max(0.0, sx - static_cast<double>(x0)));
            for (int64_t ch = 0; ch < c; ++ch) {
                const double v00 = img.data[static_cast<size_t>((y0 * w + x0) * c + ch)];
                const double v01 = img.data[static_cast<size_t>((y0 * w + x1) * c + ch)];
                const double v10 = img.data[static_cast<size_t>((y1 * w + x0) * c + ch)];
                const double v11 = img.data[static_cast<size_t>((y1 * w + x1) * c + ch)];
                const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
                out.data[static_cast<size_t>((oy * size + ox) * c + ch)] = v;
            }
        }
    }
    return out;
}

}  // namespace flexprompt::imageio
