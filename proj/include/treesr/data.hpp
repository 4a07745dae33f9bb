// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "treesr/image.hpp"
#include "treesr/rng.hpp"

namespace treesr {

enum class Split { Train, Test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

// An aligned LR/HR pair; hr is exactly scale times lr on both axes.
struct ImagePair {
    Image lr;
    Image hr;
    int scale = 0;
    std::string identifier;
};

struct ManifestEntry {
    std::string identifier;
    std::filesystem::path lr;  // relative to the manifest directory
    std::filesystem::path hr;
};

// Text format:
//   scale=<int>\tsplit=<train|test>
//   <identifier>\t<lr_relpath>\t<hr_relpath>
// Lines starting with '#' are comments (generator warnings).
struct DatasetManifest {
    std::filesystem::path root;  // directory the relative paths resolve against
    int scale = 0;
    Split split = Split::Train;
    std::vector<ManifestEntry> entries;
    std::vector<std::string> warnings;

    std::filesystem::path lr_path(const ManifestEntry& e) const { return root / e.lr; }
    std::filesystem::path hr_path(const ManifestEntry& e) const { return root / e.hr; }
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct PairRejection {
    std::string identifier;
    std::string reason;
};

// Streams pairs in manifest order. Entries whose files are missing or whose
// dimensions break hr = scale * lr are reported as rejections and skipped.
std::vector<PairRejection> iterate_pairs(const DatasetManifest& manifest,
                                         const std::function<void(ImagePair&&)>& visit);

struct LoadedPairs {
    std::vector<ImagePair> pairs;
    std::vector<PairRejection> rejected;
};
LoadedPairs load_pairs(const DatasetManifest& manifest);

// Throws if any identifier appears in both manifests.
void check_disjoint(const DatasetManifest& train, const DatasetManifest& test);

struct GeneratedDataset {
    DatasetManifest train;
    std::optional<DatasetManifest> test;
};

// Center-crops every HR PNG in hr_dir to a multiple of scale, degrades it
// with bicubic_resize and writes <out>/hr, <out>/lr and train.manifest.
// With test_every = k > 0, every k-th image (sorted by name, 1-based) goes
// to test.manifest instead.
GeneratedDataset generate_bicubic_pairs(const std::filesystem::path& hr_dir, int scale,
                                        const std::filesystem::path& out_dir, int test_every = 0);

// Uniformly placed lr_patch x lr_patch crop and the HR crop at the scaled
// coordinates.
std::pair<Image, Image> sample_patch_pair(const ImagePair& pair, int lr_patch, Rng& rng);

}  // namespace treesr
