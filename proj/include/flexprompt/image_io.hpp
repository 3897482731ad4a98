// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "flexprompt/tensor.hpp"

namespace flexprompt::imageio {

/// 8-bit binary PPM (P6) -> [H,W,3] tensor in [0,1].
Tensor read_ppm(const std::string& path);
/// 8-bit binary PGM (P5) -> [H,W] tensor in [0,1].
Tensor read_pgm(const std::string& path);

void write_ppm(const std::string& path, const Tensor& rgb);
void write_pgm(const std::string& path, const Tensor& gray);

/// Bilinear resample to size x size. Accepts [H,W] or [H,W,C].
Tensor resize(const Tensor& img, int64_t size);

}  // namespace flexprompt::imageio
