// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "treesr/model.hpp"

namespace treesr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Position of a training run; enough to continue bit-identically.
struct TrainState {
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    std::uint64_t train_seed = 0;
    std::string rng_state;
    std::vector<std::uint32_t> epoch_order;  // shuffled entry order of the current epoch
    std::uint64_t cursor = 0;                // next position in epoch_order
    double loss_sum = 0.0;                   // running aggregate over the current epoch
    std::uint64_t loss_count = 0;
};

enum class ModelKind : std::uint32_t { Divergence = 1, Convergence = 2 };

// Binary container: magic, version, kind, model config (canonical text and
// hash), seeds, train state, named parameters, Adam moments, and an FNV-1a
// trailer over everything before it.
struct Checkpoint {
    ModelKind kind = ModelKind::Divergence;
    ModelConfig model;
    std::uint64_t model_seed = 0;
    // For convergence checkpoints: hash of the frozen divergence parameters.
    std::uint64_t linked_hash = 0;
    TrainState state;
    std::vector<NamedTensor> parameters;
    std::vector<NamedTensor> adam_m;
    std::vector<NamedTensor> adam_v;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);

// Validates magic, version, trailer and the config hash. When `expected`
// is given, rejects a checkpoint built for a different ModelConfig and
// names both hashes.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

ModelConfig parse_model_config(const std::string& canonical);

std::vector<NamedTensor> snapshot(const ParameterList& params);
// Copies tensors into params by name; names and shapes must match exactly.
void restore(ParameterList& params, const std::vector<NamedTensor>& tensors);

DivergenceModel divergence_from_checkpoint(const Checkpoint& ckpt);
ConvergenceModel convergence_from_checkpoint(const Checkpoint& ckpt);

std::string hex_hash(std::uint64_t h);

}  // namespace treesr
