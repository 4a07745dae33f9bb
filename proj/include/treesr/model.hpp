// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "treesr/image.hpp"
#include "treesr/prediction_set.hpp"
#include "treesr/tensor.hpp"

namespace treesr {

struct ModelConfig {
    int tree_depth = 2;        // L
    int branching = 2;         // C
    int residual_groups = 2;   // G
    int blocks_per_group = 4;  // B
    int channels = 64;
    int scale = 4;
    int reduction = 16;
    bool deep_residual = true;

    // P = C^L.
    int num_predictions() const;
    // Number of branch modules, sum_{l=1..L} C^l.
    int num_nodes() const;
    void validate() const;
    // Canonical "key=value;..." text; the config hash is taken over it.
    std::string canonical() const;
    std::uint64_t hash() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Smallest LR side the divergence network accepts.
inline constexpr int kMinInputSide = 8;

// Ordered list of named trainable tensors.
class ParameterList {
public:
    Var add(std::string name, Shape shape);
    const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
    std::size_t count_scalars() const;
    // FNV-1a over names and float bytes, in order.
    std::uint64_t hash() const;
    void zero_grad();
    void set_requires_grad(bool on);
    // Fan-in scaled uniform weights, zero biases.
    void initialize(std::uint64_t seed);

private:
    std::vector<std::pair<std::string, Var>> entries_;
};

struct Conv {
    Var weight, bias;
    Var operator()(const Var& x) const { return conv2d(x, weight, bias); }
};

// Residual channel-attention block: conv-relu-conv, gated per channel by a
// squeeze/excite bottleneck, plus identity.
struct AttentionBlock {
    Conv body1, body2, squeeze, excite;
    Var operator()(const Var& x) const;
};

// B attention blocks and a closing conv around a group-level identity.
struct ResidualGroup {
    std::vector<AttentionBlock> blocks;
    Conv tail;
    Var operator()(const Var& x) const;
};

// One tree node: G residual groups.
struct BranchModule {
    std::vector<ResidualGroup> groups;
    Var operator()(const Var& x) const;
};

// Sub-pixel upscaler: one x2/x3/x4 stage, or three x2 stages for x8.
struct Upsampler {
    std::vector<Conv> stages;
    std::vector<int> factors;
    Var operator()(const Var& x) const;
};

struct LeafHead {
    Conv body;
    Upsampler upsample;
    Conv output;
};

class DivergenceModel {
public:
    DivergenceModel(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParameterList& parameters() { return params_; }
    const ParameterList& parameters() const { return params_; }
    const std::vector<LeafPath>& leaf_paths() const { return leaf_paths_; }
    std::uint64_t seed() const { return seed_; }

    // Batched forward: x is [n, 3, h, w] in [0, 1]; returns P tensors
    // [n, 3, scale*h, scale*w] in leaf-path order.
    std::vector<Var> forward(const Var& x) const;

    // Index of the node at `depth` (1-based) reached by the first `depth`
    // digits of `path`.
    int node_index(const LeafPath& path, int depth) const;

private:
    ModelConfig cfg_;
    std::uint64_t seed_;
    ParameterList params_;
    Conv shallow_;
    std::vector<BranchModule> nodes_;  // by depth, then lexicographic prefix
    std::vector<LeafHead> leaves_;
    std::vector<LeafPath> leaf_paths_;
};

// Fusion head: 3x3 convs over the concatenated predictions, a 1x1 conv to P
// logits, and a softmax across the P planes.
class ConvergenceModel {
public:
    static constexpr int kHiddenConvs = 3;

    ConvergenceModel(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParameterList& parameters() { return params_; }
    const ParameterList& parameters() const { return params_; }
    std::uint64_t seed() const { return seed_; }

    struct Output {
        Var weights;  // [n, P, H, W], softmax-normalized
        Var fused;    // [n, 3, H, W]
    };
    Output forward(std::span<const Var> predictions) const;

private:
    ModelConfig cfg_;
    std::uint64_t seed_;
    ParameterList params_;
    std::vector<Conv> hidden_;
    Conv logits_;
};

DivergenceModel build_divergence_network(const ModelConfig& cfg, std::uint64_t seed);
ConvergenceModel build_convergence_network(const ModelConfig& cfg, std::uint64_t seed);

PredictionSet divergence_forward(const DivergenceModel& model, const Image& lr);
// Returns the weight planes and the fused image sum_i preds[i] * W_i.
std::pair<WeightMaps, Image> convergence_forward(const ConvergenceModel& model, const PredictionSet& preds);
// Per-pixel weighted sum of the predictions; each weight plane broadcasts
// over RGB.
Image fuse_predictions(const PredictionSet& preds, const WeightMaps& weights);

std::size_t count_parameters(const DivergenceModel& model);
std::size_t count_parameters(const ConvergenceModel& model);

// Image <-> tensor helpers.
Tensor to_tensor(std::span<const Image> batch);
Image to_image(const Tensor& t, int n);
LumaPlane to_plane(const Tensor& t, int n, int c);

}  // namespace treesr
