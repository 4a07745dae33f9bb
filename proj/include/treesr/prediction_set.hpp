// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "treesr/image.hpp"

namespace treesr {

// Root-to-leaf child indices, one per tree level.
using LeafPath = std::vector<int>;

// All C^L paths of a tree in lexicographic order.
std::vector<LeafPath> enumerate_leaf_paths(int depth, int branching);

// Digits of the path concatenated, e.g. {1, 0} -> "10".
std::string leaf_path_name(const LeafPath& path);

// The P predictions of the divergence network for one input, paired with
// the tree path of the leaf that produced each.
struct PredictionSet {
    std::vector<Image> predictions;
    std::vector<LeafPath> leaf_paths;

    std::size_t size() const { return predictions.size(); }
};

// Per-pixel fusion weights, one plane per prediction.
struct WeightMaps {
    std::vector<LumaPlane> planes;

    std::size_t size() const { return planes.size(); }
};

}  // namespace treesr
