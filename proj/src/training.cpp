// SPDX-License-Identifier: Apache-2.0
#include "treesr/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "treesr/error.hpp"

namespace fs = std::filesystem;

namespace treesr {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (lr_patch < 1) throw ConfigError("train.lr_patch must be positive");
    if (!(initial_lr > 0.0)) throw ConfigError("train.initial_lr must be > 0");
    if (halve_every < 1) throw ConfigError("train.halve_every must be positive");
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be positive");
    if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    if (clip_grad < 0.0) throw ConfigError("train.clip_grad must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("train.adam_beta1/adam_beta2 must lie in [0, 1)");
    }
    if (!(adam_epsilon > 0.0)) throw ConfigError("train.adam_epsilon must be > 0");
    loss.validate();
}

double learning_rate(const TrainConfig& cfg, std::uint64_t epoch) {
    return cfg.initial_lr * std::ldexp(1.0, -static_cast<int>(epoch / static_cast<std::uint64_t>(cfg.halve_every)));
}

void Adam::ensure(const ParameterList& params) {
    if (m_.size() == params.entries().size()) return;
    m_.clear();
    v_.clear();
    for (const auto& [name, p] : params.entries()) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
    }
}

void Adam::step(ParameterList& params, double lr, std::uint64_t t) {
    ensure(params);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
    const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
    std::size_t idx = 0;
    for (const auto& [name, p] : params.entries()) {
        auto& m = m_[idx].data;
        auto& v = v_[idx].data;
        ++idx;
        const bool has = p->has_grad();
        for (std::size_t k = 0; k < m.size(); ++k) {
            const float g = has ? p->grad.data[k] : 0.0f;
            m[k] = b1 * m[k] + (1.0f - b1) * g;
            v[k] = b2 * v[k] + (1.0f - b2) * g * g;
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            p->value.data[k] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + epsilon_));
        }
    }
}

std::vector<NamedTensor> Adam::first_moments(const ParameterList& params) const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < m_.size(); ++i) out.push_back({params.entries()[i].first, m_[i]});
    return out;
}

std::vector<NamedTensor> Adam::second_moments(const ParameterList& params) const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < v_.size(); ++i) out.push_back({params.entries()[i].first, v_[i]});
    return out;
}

void Adam::load(const ParameterList& params, const std::vector<NamedTensor>& m, const std::vector<NamedTensor>& v) {
    m_.clear();
    v_.clear();
    if (m.empty() && v.empty()) return;
    const auto& entries = params.entries();
    if (m.size() != entries.size() || v.size() != entries.size()) throw CheckpointError("optimizer moment count mismatch");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (m[i].name != entries[i].first || !(m[i].tensor.shape == entries[i].second->shape()) ||
            v[i].name != entries[i].first || !(v[i].tensor.shape == entries[i].second->shape())) {
            throw CheckpointError("optimizer moments do not match parameter '" + entries[i].first + "'");
        }
        m_.push_back(m[i].tensor);
        v_.push_back(v[i].tensor);
    }
}

void clip_gradients(ParameterList& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, p] : params.entries())
        if (p->has_grad())
            for (float g : p->grad.data) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const auto s = static_cast<float>(max_norm / norm);
    for (const auto& [name, p] : params.entries())
        if (p->has_grad())
            for (float& g : p->grad.data) g *= s;
}

EpochSampler::EpochSampler(std::size_t count, std::uint64_t seed) : count_(count), rng_(seed) {
    if (count == 0) throw ConfigError("training set is empty");
    shuffle();
}

void EpochSampler::shuffle() {
    order_.resize(count_);
    for (std::size_t i = 0; i < count_; ++i) order_[i] = static_cast<std::uint32_t>(i);
    for (std::size_t i = count_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
    cursor_ = 0;
}

std::vector<std::size_t> EpochSampler::next_batch(std::size_t batch_size) {
    if (cursor_ == order_.size()) {
        ++epoch_;
        shuffle();
    }
    std::vector<std::size_t> batch;
    while (batch.size() < batch_size && cursor_ < order_.size()) batch.push_back(order_[cursor_++]);
    return batch;
}

void EpochSampler::save(TrainState& s) const {
    s.epoch = epoch_;
    s.rng_state = rng_.state();
    s.epoch_order = order_;
    s.cursor = cursor_;
}

void EpochSampler::load(const TrainState& s) {
    if (s.epoch_order.size() != count_) {
        throw CheckpointError("checkpoint epoch order covers " + std::to_string(s.epoch_order.size()) +
                              " entries, dataset has " + std::to_string(count_));
    }
    epoch_ = s.epoch;
    rng_.set_state(s.rng_state);
    order_ = s.epoch_order;
    cursor_ = s.cursor;
}

namespace {

struct Batch {
    std::vector<Image> lr, hr;
};

Batch draw_batch(EpochSampler& sampler, const std::vector<ImagePair>& data, const TrainConfig& cfg) {
    Batch b;
    for (std::size_t idx : sampler.next_batch(static_cast<std::size_t>(cfg.batch_size))) {
        auto [lr, hr] = sample_patch_pair(data[idx], cfg.lr_patch, sampler.rng());
        b.lr.push_back(std::move(lr));
        b.hr.push_back(std::move(hr));
    }
    return b;
}

// Adds a float copy of `grad` (scaled) into item n of the node's gradient.
void seed_grad(Node& node, int n, const Image& grad, double scale) {
    Tensor& g = node.grad_buffer();
    float* dst = g.data.data() + static_cast<std::size_t>(n) * 3 * g.shape.plane();
    const auto& src = grad.data();
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] += static_cast<float>(src[k] * scale);
}

bool finished_impl(const TrainConfig& cfg, std::uint64_t step, const EpochSampler& s) {
    if (cfg.max_steps > 0 && step >= static_cast<std::uint64_t>(cfg.max_steps)) return true;
    const std::uint64_t done = s.epoch() + (s.epoch_complete() ? 1 : 0);
    return done >= static_cast<std::uint64_t>(cfg.max_epochs);
}

}  // namespace

std::vector<ImagePair> load_training_pairs(const DatasetManifest& data, int lr_patch) {
    LoadedPairs loaded = load_pairs(data);
    std::vector<ImagePair> usable;
    for (ImagePair& p : loaded.pairs) {
        if (p.lr.height() >= lr_patch && p.lr.width() >= lr_patch) usable.push_back(std::move(p));
    }
    if (usable.empty()) throw ConfigError("no usable training pairs (empty split or all smaller than the patch size)");
    return usable;
}

DivergenceTrainer::DivergenceTrainer(DivergenceModel& model, std::vector<ImagePair> data, TrainConfig cfg)
    : model_(model),
      data_(std::move(data)),
      cfg_(cfg),
      adam_(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon),
      sampler_(data_.size(), derive_seed(cfg.seed, 1)) {
    cfg_.validate();
    model_.parameters().set_requires_grad(true);
}

void DivergenceTrainer::resume(const Checkpoint& ckpt) {
    if (ckpt.kind != ModelKind::Divergence) throw CheckpointError("resume: not a divergence checkpoint");
    if (ckpt.model.hash() != model_.config().hash()) {
        throw CheckpointError("resume: model config mismatch: checkpoint hash " + hex_hash(ckpt.model.hash()) +
                              ", model hash " + hex_hash(model_.config().hash()));
    }
    restore(model_.parameters(), ckpt.parameters);
    adam_.load(model_.parameters(), ckpt.adam_m, ckpt.adam_v);
    sampler_.load(ckpt.state);
    step_ = ckpt.state.step;
    loss_sum_ = ckpt.state.loss_sum;
    loss_count_ = ckpt.state.loss_count;
}

bool DivergenceTrainer::finished() const { return finished_impl(cfg_, step_, sampler_); }

StepMetrics DivergenceTrainer::step() {
    const Batch batch = draw_batch(sampler_, data_, cfg_);
    StepMetrics m;
    m.epoch = sampler_.epoch();
    m.lr = learning_rate(cfg_, m.epoch);

    ParameterList& params = model_.parameters();
    params.zero_grad();
    const std::vector<Var> preds = model_.forward(constant(to_tensor(batch.lr)));
    const int n = static_cast<int>(batch.lr.size());
    const double inv = 1.0 / n;
    PredictionSet set;
    set.leaf_paths = model_.leaf_paths();
    std::vector<Image> grads;
    for (int b = 0; b < n; ++b) {
        set.predictions.clear();
        for (const Var& p : preds) set.predictions.push_back(to_image(p->value, b));
        const DivergenceLoss loss = divergence_loss_with_grad(set, batch.hr[b], cfg_.loss, grads);
        m.total += loss.total * inv;
        m.l2 += loss.l2 * inv;
        m.triplet += loss.triplet * inv;
        for (std::size_t i = 0; i < preds.size(); ++i) seed_grad(*preds[i], b, grads[i], inv);
    }
    if (!std::isfinite(m.total)) {
        for (const Var& p : preds) p->grad = Tensor();
        throw TrainingError("non-finite divergence loss at step " + std::to_string(step_ + 1));
    }
    backward(preds);
    if (cfg_.clip_grad > 0.0) clip_gradients(params, cfg_.clip_grad);
    ++step_;
    adam_.step(params, m.lr, step_);
    params.zero_grad();
    m.step = step_;
    loss_sum_ += m.total;
    ++loss_count_;
    return m;
}

Checkpoint DivergenceTrainer::checkpoint() const {
    Checkpoint ck;
    ck.kind = ModelKind::Divergence;
    ck.model = model_.config();
    ck.model_seed = model_.seed();
    ck.state.step = step_;
    ck.state.train_seed = cfg_.seed;
    ck.state.loss_sum = loss_sum_;
    ck.state.loss_count = loss_count_;
    sampler_.save(ck.state);
    ck.parameters = snapshot(model_.parameters());
    ck.adam_m = adam_.first_moments(model_.parameters());
    ck.adam_v = adam_.second_moments(model_.parameters());
    return ck;
}

ConvergenceTrainer::ConvergenceTrainer(const DivergenceModel& frozen, ConvergenceModel& model,
                                       std::vector<ImagePair> data, TrainConfig cfg)
    : frozen_(frozen),
      model_(model),
      data_(std::move(data)),
      cfg_(cfg),
      adam_(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon),
      sampler_(data_.size(), derive_seed(cfg.seed, 2)) {
    cfg_.validate();
    if (frozen.config().hash() != model.config().hash()) {
        throw ShapeError("convergence model config (hash " + hex_hash(model.config().hash()) +
                         ") does not match the divergence checkpoint (hash " + hex_hash(frozen.config().hash()) + ")");
    }
    model_.parameters().set_requires_grad(true);
}

void ConvergenceTrainer::resume(const Checkpoint& ckpt) {
    if (ckpt.kind != ModelKind::Convergence) throw CheckpointError("resume: not a convergence checkpoint");
    if (ckpt.model.hash() != model_.config().hash()) {
        throw CheckpointError("resume: model config mismatch: checkpoint hash " + hex_hash(ckpt.model.hash()) +
                              ", model hash " + hex_hash(model_.config().hash()));
    }
    restore(model_.parameters(), ckpt.parameters);
    adam_.load(model_.parameters(), ckpt.adam_m, ckpt.adam_v);
    sampler_.load(ckpt.state);
    step_ = ckpt.state.step;
    loss_sum_ = ckpt.state.loss_sum;
    loss_count_ = ckpt.state.loss_count;
}

bool ConvergenceTrainer::finished() const { return finished_impl(cfg_, step_, sampler_); }

StepMetrics ConvergenceTrainer::step() {
    const Batch batch = draw_batch(sampler_, data_, cfg_);
    StepMetrics m;
    m.epoch = sampler_.epoch();
    m.lr = learning_rate(cfg_, m.epoch);

    std::vector<Var> preds;
    {
        NoGradGuard frozen;
        preds = frozen_.forward(constant(to_tensor(batch.lr)));
    }
    ParameterList& params = model_.parameters();
    params.zero_grad();
    const auto out = model_.forward(preds);
    const int n = static_cast<int>(batch.lr.size());
    const double inv = 1.0 / n;
    Image grad;
    for (int b = 0; b < n; ++b) {
        m.total += convergence_loss_with_grad(to_image(out.fused->value, b), batch.hr[b], grad) * inv;
        seed_grad(*out.fused, b, grad, inv);
    }
    if (!std::isfinite(m.total)) {
        out.fused->grad = Tensor();
        throw TrainingError("non-finite convergence loss at step " + std::to_string(step_ + 1));
    }
    const std::vector<Var> roots{out.fused};
    backward(roots);
    if (cfg_.clip_grad > 0.0) clip_gradients(params, cfg_.clip_grad);
    ++step_;
    adam_.step(params, m.lr, step_);
    params.zero_grad();
    m.step = step_;
    loss_sum_ += m.total;
    ++loss_count_;
    return m;
}

Checkpoint ConvergenceTrainer::checkpoint() const {
    Checkpoint ck;
    ck.kind = ModelKind::Convergence;
    ck.model = model_.config();
    ck.model_seed = model_.seed();
    ck.linked_hash = frozen_.parameters().hash();
    ck.state.step = step_;
    ck.state.train_seed = cfg_.seed;
    ck.state.loss_sum = loss_sum_;
    ck.state.loss_count = loss_count_;
    sampler_.save(ck.state);
    ck.parameters = snapshot(model_.parameters());
    ck.adam_m = adam_.first_moments(model_.parameters());
    ck.adam_v = adam_.second_moments(model_.parameters());
    return ck;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class MetricsWriter {
public:
    MetricsWriter(const fs::path& path, const char* header) {
        const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
        out_.open(path, std::ios::app | std::ios::binary);
        if (!out_) throw IoError(path.string() + ": cannot open metrics file");
        if (fresh) out_ << header << "\n";
    }
    void divergence(const StepMetrics& m) {
        out_ << m.step << "," << m.epoch << "," << fmt(m.lr) << "," << fmt(m.total) << "," << fmt(m.l2) << ","
             << fmt(m.triplet) << "\n";
        out_.flush();
    }
    void convergence(const StepMetrics& m) {
        out_ << m.step << "," << m.epoch << "," << fmt(m.lr) << "," << fmt(m.total) << "\n";
        out_.flush();
    }

private:
    std::ofstream out_;
};

int checkpoint_cadence(const TrainConfig& cfg) {
    if (cfg.checkpoint_every > 0) return cfg.checkpoint_every;
    return std::max(1, cfg.halve_every / 4);
}

template <typename Trainer, typename Emit>
TrainResult run_loop(Trainer& trainer, const TrainConfig& cfg, const fs::path& run_dir, Emit emit) {
    const fs::path ckpt_dir = run_dir / "ckpt";
    fs::create_directories(ckpt_dir);
    const int cadence = checkpoint_cadence(cfg);
    while (!trainer.finished()) {
        StepMetrics m;
        try {
            m = trainer.step();
        } catch (const TrainingError&) {
            // Parameters are untouched when the loss check fails.
            save_checkpoint(trainer.checkpoint(), ckpt_dir / "nonfinite.ckpt");
            throw;
        }
        emit(m);
        if (trainer.sampler().epoch_complete()) {
            const std::uint64_t done = trainer.sampler().epoch() + 1;
            if (done % static_cast<std::uint64_t>(cadence) == 0) {
                save_checkpoint(trainer.checkpoint(), ckpt_dir / ("epoch_" + std::to_string(done) + ".ckpt"));
            }
        }
    }
    TrainResult r;
    r.final = trainer.checkpoint();
    r.final_path = ckpt_dir / "final.ckpt";
    save_checkpoint(r.final, r.final_path);
    return r;
}

}  // namespace

TrainResult train_divergence(DivergenceModel& model, const DatasetManifest& data, const TrainConfig& cfg,
                             const fs::path& run_dir, const Checkpoint* resume) {
    cfg.validate();
    if (cfg.stage != Stage::Divergence) throw ConfigError("train_divergence requires stage = divergence");
    fs::create_directories(run_dir);
    DivergenceTrainer trainer(model, load_training_pairs(data, cfg.lr_patch), cfg);
    if (resume) trainer.resume(*resume);
    MetricsWriter metrics(run_dir / "metrics.csv", "step,epoch,lr,loss_total,loss_l2,loss_triplet");
    return run_loop(trainer, cfg, run_dir, [&](const StepMetrics& m) { metrics.divergence(m); });
}

TrainResult train_convergence(const Checkpoint& divergence_ckpt, ConvergenceModel& model, const DatasetManifest& data,
                              const TrainConfig& cfg, const fs::path& run_dir, const Checkpoint* resume) {
    cfg.validate();
    if (cfg.stage != Stage::Convergence) throw ConfigError("train_convergence requires stage = convergence");
    DivergenceModel frozen = divergence_from_checkpoint(divergence_ckpt);
    frozen.parameters().set_requires_grad(false);
    const std::uint64_t before = frozen.parameters().hash();
    fs::create_directories(run_dir);
    ConvergenceTrainer trainer(frozen, model, load_training_pairs(data, cfg.lr_patch), cfg);
    if (resume) {
        if (resume->linked_hash != before) {
            throw CheckpointError("resume: convergence checkpoint was trained on divergence parameters " +
                                  hex_hash(resume->linked_hash) + ", got " + hex_hash(before));
        }
        trainer.resume(*resume);
    }
    MetricsWriter metrics(run_dir / "metrics.csv", "step,epoch,lr,loss_convergence");
    TrainResult r = run_loop(trainer, cfg, run_dir, [&](const StepMetrics& m) { metrics.convergence(m); });
    r.frozen_hash_before = before;
    r.frozen_hash_after = frozen.parameters().hash();
    if (r.frozen_hash_after != before) {
        throw TrainingError("divergence parameters changed during stage 2: " + hex_hash(before) + " -> " +
                            hex_hash(r.frozen_hash_after));
    }
    return r;
}

Image super_resolve(const DivergenceModel& div, const ConvergenceModel& conv, const Image& lr, PredictionSet* branches,
                    WeightMaps* weights) {
    PredictionSet preds = divergence_forward(div, lr);
    auto [maps, fused] = convergence_forward(conv, preds);
    if (branches) *branches = std::move(preds);
    if (weights) *weights = std::move(maps);
    return fused.clamped();
}

}  // namespace treesr
