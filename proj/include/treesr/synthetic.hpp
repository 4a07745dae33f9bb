// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "treesr/image.hpp"

namespace treesr {

// Procedural HR test image: smooth colour background, anti-aliased discs
// and rectangles, and oriented sinusoidal gratings. Deterministic in seed.
Image synthesize_image(int height, int width, std::uint64_t seed);

// Writes `count` images as <out_dir>/img_NNN.png (8-bit).
std::vector<std::filesystem::path> synthesize_corpus(const std::filesystem::path& out_dir, int count, int height,
                                                     int width, std::uint64_t seed);

}  // namespace treesr
