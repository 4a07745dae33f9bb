// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "treesr/checkpoint.hpp"
#include "treesr/data.hpp"
#include "treesr/loss.hpp"
#include "treesr/model.hpp"
#include "treesr/rng.hpp"

namespace treesr {

enum class Stage { Divergence, Convergence };

struct TrainConfig {
    Stage stage = Stage::Divergence;
    int batch_size = 4;
    int lr_patch = 24;
    double initial_lr = 1e-4;
    int halve_every = 2000;  // epochs
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int max_epochs = 1;
    int max_steps = 0;         // 0 = bounded by max_epochs only
    int checkpoint_every = 0;  // epochs; 0 = halve_every / 4
    double clip_grad = 0.0;    // global-norm clip; 0 = off
    std::uint64_t seed = 0;
    LossConfig loss;

    void validate() const;
};

// initial_lr * 0.5^floor(epoch / halve_every).
double learning_rate(const TrainConfig& cfg, std::uint64_t epoch);

class Adam {
public:
    Adam(double beta1, double beta2, double epsilon) : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

    // One update with bias correction for step t (1-based). Parameters
    // without a gradient buffer are treated as having zero gradient.
    void step(ParameterList& params, double lr, std::uint64_t t);

    std::vector<NamedTensor> first_moments(const ParameterList& params) const;
    std::vector<NamedTensor> second_moments(const ParameterList& params) const;
    void load(const ParameterList& params, const std::vector<NamedTensor>& m, const std::vector<NamedTensor>& v);

private:
    void ensure(const ParameterList& params);
    double beta1_, beta2_, epsilon_;
    std::vector<Tensor> m_, v_;
};

// Rescales all gradients so their global L2 norm is at most max_norm.
void clip_gradients(ParameterList& params, double max_norm);

// Epoch bookkeeping: a seeded shuffle per epoch, consumed batch by batch.
class EpochSampler {
public:
    EpochSampler(std::size_t count, std::uint64_t seed);

    // Indices of the next batch; starts a new epoch (and reshuffles) when
    // the current one is exhausted.
    std::vector<std::size_t> next_batch(std::size_t batch_size);
    std::uint64_t epoch() const { return epoch_; }
    bool epoch_complete() const { return cursor_ == order_.size(); }
    Rng& rng() { return rng_; }

    void save(TrainState& state) const;
    void load(const TrainState& state);

private:
    void shuffle();
    std::size_t count_;
    Rng rng_;
    std::vector<std::uint32_t> order_;
    std::size_t cursor_ = 0;
    std::uint64_t epoch_ = 0;
};

struct StepMetrics {
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    double lr = 0.0;
    double total = 0.0;
    double l2 = 0.0;       // stage 1 only
    double triplet = 0.0;  // stage 1 only
};

// Stage 1: optimizes l2 + alpha * triplet over the divergence network.
class DivergenceTrainer {
public:
    DivergenceTrainer(DivergenceModel& model, std::vector<ImagePair> data, TrainConfig cfg);

    void resume(const Checkpoint& ckpt);
    StepMetrics step();
    bool finished() const;
    Checkpoint checkpoint() const;
    const TrainConfig& config() const { return cfg_; }
    std::uint64_t steps_done() const { return step_; }
    const EpochSampler& sampler() const { return sampler_; }

private:
    DivergenceModel& model_;
    std::vector<ImagePair> data_;
    TrainConfig cfg_;
    Adam adam_;
    EpochSampler sampler_;
    std::uint64_t step_ = 0;
    double loss_sum_ = 0.0;
    std::uint64_t loss_count_ = 0;
};

// Stage 2: the divergence network is frozen; only the fusion head learns,
// through the full pipeline, on the fused-output MSE.
class ConvergenceTrainer {
public:
    ConvergenceTrainer(const DivergenceModel& frozen, ConvergenceModel& model, std::vector<ImagePair> data,
                       TrainConfig cfg);

    void resume(const Checkpoint& ckpt);
    StepMetrics step();
    bool finished() const;
    Checkpoint checkpoint() const;
    std::uint64_t steps_done() const { return step_; }
    const EpochSampler& sampler() const { return sampler_; }

private:
    const DivergenceModel& frozen_;
    ConvergenceModel& model_;
    std::vector<ImagePair> data_;
    TrainConfig cfg_;
    Adam adam_;
    EpochSampler sampler_;
    std::uint64_t step_ = 0;
    double loss_sum_ = 0.0;
    std::uint64_t loss_count_ = 0;
};

struct TrainResult {
    Checkpoint final;
    std::filesystem::path final_path;
    std::uint64_t frozen_hash_before = 0;  // stage 2 only
    std::uint64_t frozen_hash_after = 0;
};

// Runs stage 1 to completion. Writes <run_dir>/metrics.csv (appending on
// resume), periodic <run_dir>/ckpt/epoch_<n>.ckpt and ckpt/final.ckpt. A
// non-finite loss writes ckpt/nonfinite.ckpt and throws TrainingError.
TrainResult train_divergence(DivergenceModel& model, const DatasetManifest& data, const TrainConfig& cfg,
                             const std::filesystem::path& run_dir, const Checkpoint* resume = nullptr);

// Runs stage 2 on top of a divergence checkpoint. The divergence
// parameters are hashed before and after; a difference throws.
TrainResult train_convergence(const Checkpoint& divergence_ckpt, ConvergenceModel& model, const DatasetManifest& data,
                              const TrainConfig& cfg, const std::filesystem::path& run_dir,
                              const Checkpoint* resume = nullptr);

// Loads the training pairs of a manifest, throwing if none survive.
std::vector<ImagePair> load_training_pairs(const DatasetManifest& data, int lr_patch);

// Fused super-resolution of one LR image, clamped to [0, 1].
Image super_resolve(const DivergenceModel& div, const ConvergenceModel& conv, const Image& lr,
                    PredictionSet* branches = nullptr, WeightMaps* weights = nullptr);

}  // namespace treesr
