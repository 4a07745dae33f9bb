// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "support/toy.hpp"
#include "treesr/checkpoint.hpp"
#include "treesr/error.hpp"

namespace fs = std::filesystem;
using namespace treesr;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

int count_lines(const fs::path& p) {
    std::ifstream in(p);
    int n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
}

}  // namespace

TEST(Schedule, HalvesEveryPeriod) {
    TrainConfig c;
    EXPECT_EQ(learning_rate(c, 0), 1e-4);
    EXPECT_EQ(learning_rate(c, 1999), 1e-4);
    EXPECT_EQ(learning_rate(c, 2000), 5e-5);
    EXPECT_EQ(learning_rate(c, 4000), 2.5e-5);
    EXPECT_EQ(learning_rate(c, 6000), 1.25e-5);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.initial_lr = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.max_epochs = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Sampler, EpochsArePermutations) {
    EpochSampler s(5, 1);
    for (int epoch = 0; epoch < 3; ++epoch) {
        std::multiset<std::size_t> seen;
        std::vector<std::size_t> sizes;
        do {
            const auto b = s.next_batch(2);
            sizes.push_back(b.size());
            seen.insert(b.begin(), b.end());
        } while (!s.epoch_complete());
        EXPECT_EQ(sizes, (std::vector<std::size_t>{2, 2, 1}));
        EXPECT_EQ(seen, (std::multiset<std::size_t>{0, 1, 2, 3, 4}));
        EXPECT_EQ(s.epoch(), static_cast<std::uint64_t>(epoch));
    }
}

TEST(Sampler, SaveLoadContinuesIdentically) {
    EpochSampler a(7, 9);
    a.next_batch(3);
    TrainState st;
    a.save(st);
    EpochSampler b(7, 1234);
    b.load(st);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_batch(3), b.next_batch(3));
}

TEST(Training, SingleStepIsDeterministic) {
    TempDir dir;
    const auto data = toy::dataset(dir, 3, 32);
    const auto pairs = load_training_pairs(data, 8);
    DivergenceModel a(toy::model(), 1), b(toy::model(), 1);
    DivergenceTrainer ta(a, pairs, toy::train(1)), tb(b, pairs, toy::train(1));
    const StepMetrics ma = ta.step(), mb = tb.step();
    EXPECT_EQ(ma.total, mb.total);
    EXPECT_EQ(a.parameters().hash(), b.parameters().hash());
    EXPECT_NE(a.parameters().hash(), DivergenceModel(toy::model(), 1).parameters().hash());
}

TEST(Training, DivergenceLossDecreases) {
    TempDir dir;
    const auto data = toy::dataset(dir, 4, 32);
    DivergenceModel m(toy::model(), 2);
    DivergenceTrainer t(m, load_training_pairs(data, 8), toy::train(200));
    std::vector<double> losses;
    while (!t.finished()) losses.push_back(t.step().total);
    ASSERT_EQ(losses.size(), 200u);
    std::vector<double> windows;
    for (int w = 0; w < 4; ++w) {
        double s = 0;
        for (int k = 0; k < 50; ++k) s += losses[w * 50 + k];
        windows.push_back(s / 50);
    }
    for (int w = 1; w < 4; ++w) EXPECT_LT(windows[w], windows[w - 1]) << "window " << w;
    EXPECT_LT(losses.back(), losses.front());
}

TEST(Training, ConvergenceLossDecreasesAndFreezes) {
    TempDir dir;
    const auto data = toy::dataset(dir, 4, 32);
    DivergenceModel div(toy::model(), 3);
    const auto r1 = train_divergence(div, data, toy::train(20), dir / "div");
    ConvergenceModel conv(toy::model(), 4);
    const DivergenceModel frozen = divergence_from_checkpoint(r1.final);
    TrainConfig tc = toy::train(200);
    tc.stage = Stage::Convergence;
    ConvergenceTrainer t(frozen, conv, load_training_pairs(data, 8), tc);
    const std::uint64_t before = frozen.parameters().hash();
    std::vector<double> losses;
    while (!t.finished()) losses.push_back(t.step().total);
    double first = 0, last = 0;
    for (int k = 0; k < 50; ++k) {
        first += losses[k];
        last += losses[150 + k];
    }
    EXPECT_LT(last, first);
    EXPECT_EQ(frozen.parameters().hash(), before);

    const auto r2 = train_convergence(r1.final, conv, data, tc, dir / "conv");
    EXPECT_EQ(r2.frozen_hash_before, r2.frozen_hash_after);
    EXPECT_EQ(r2.final.linked_hash, before);
}

TEST(Training, SinglePredictionConvergence) {
    TempDir dir;
    const auto data = toy::dataset(dir, 2, 32);
    DivergenceModel div(toy::model(1, 1), 3);
    const auto r1 = train_divergence(div, data, toy::train(2), dir / "div");
    ConvergenceModel conv(toy::model(1, 1), 4);
    TrainConfig tc = toy::train(3);
    tc.stage = Stage::Convergence;
    const auto r2 = train_convergence(r1.final, conv, data, tc, dir / "conv");
    PredictionSet branches;
    const Image sr = super_resolve(div, conv, load_pairs(data).pairs[0].lr, &branches);
    EXPECT_EQ(sr, branches.predictions[0].clamped());
}

TEST(Training, MetricsAndCheckpointsWritten) {
    TempDir dir;
    const auto data = toy::dataset(dir, 4, 32);
    DivergenceModel div(toy::model(), 3);
    TrainConfig tc = toy::train(0);
    tc.max_steps = 0;
    tc.max_epochs = 4;
    tc.checkpoint_every = 2;
    train_divergence(div, data, tc, dir / "run");
    // 4 pairs with batch 2 -> 2 steps per epoch.
    EXPECT_EQ(count_lines(dir / "run/metrics.csv"), 1 + 8);
    EXPECT_TRUE(fs::exists(dir / "run/ckpt/epoch_2.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "run/ckpt/epoch_4.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "run/ckpt/final.ckpt"));
    std::ifstream in(dir / "run/metrics.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "step,epoch,lr,loss_total,loss_l2,loss_triplet");
}

TEST(Training, NonFiniteLossAborts) {
    TempDir dir;
    const auto data = toy::dataset(dir, 2, 32);
    DivergenceModel div(toy::model(), 3);
    auto& shallow = div.parameters().entries().front().second->value.data;
    shallow[0] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(train_divergence(div, data, toy::train(5), dir / "run"), TrainingError);
    EXPECT_TRUE(fs::exists(dir / "run/ckpt/nonfinite.ckpt"));
}

TEST(Checkpoint, ResaveIsByteIdentical) {
    TempDir dir;
    const auto data = toy::dataset(dir, 2, 32);
    DivergenceModel div(toy::model(), 3);
    const auto r = train_divergence(div, data, toy::train(3), dir / "run");
    const Checkpoint loaded = load_checkpoint(r.final_path);
    save_checkpoint(loaded, dir / "again.ckpt");
    EXPECT_EQ(slurp(r.final_path), slurp(dir / "again.ckpt"));
    const DivergenceModel back = divergence_from_checkpoint(loaded);
    EXPECT_EQ(back.parameters().hash(), div.parameters().hash());
}

TEST(Checkpoint, WrongConfigNamesBothHashes) {
    TempDir dir;
    const DivergenceModel div(toy::model(), 3);
    Checkpoint ck;
    ck.model = div.config();
    ck.parameters = snapshot(div.parameters());
    save_checkpoint(ck, dir / "a.ckpt");
    ModelConfig other = toy::model();
    other.channels = 16;
    try {
        load_checkpoint(dir / "a.ckpt", &other);
        FAIL();
    } catch (const CheckpointError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find(hex_hash(div.config().hash())), std::string::npos) << msg;
        EXPECT_NE(msg.find(hex_hash(other.hash())), std::string::npos) << msg;
    }
}

TEST(Checkpoint, TruncatedAndCorruptRejected) {
    TempDir dir;
    const DivergenceModel div(toy::model(), 3);
    Checkpoint ck;
    ck.model = div.config();
    ck.parameters = snapshot(div.parameters());
    save_checkpoint(ck, dir / "a.ckpt");
    std::string bytes = slurp(dir / "a.ckpt");
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), CheckpointError);
    bytes[bytes.size() / 2] ^= 0x40;
    std::ofstream(dir / "flip.ckpt", std::ios::binary) << bytes;
    EXPECT_THROW(load_checkpoint(dir / "flip.ckpt"), CheckpointError);
    std::ofstream(dir / "junk.ckpt", std::ios::binary) << "NOTACKPT";
    EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), CheckpointError);
    EXPECT_THROW(load_checkpoint(dir / "none.ckpt"), CheckpointError);
}

TEST(Checkpoint, ModelConfigParsesBack) {
    ModelConfig c = toy::model(3, 2);
    c.deep_residual = false;
    EXPECT_EQ(parse_model_config(c.canonical()), c);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
    TempDir dir;
    const auto data = toy::dataset(dir, 3, 32);
    DivergenceModel straight(toy::model(), 5);
    const auto full = train_divergence(straight, data, toy::train(20), dir / "straight");

    DivergenceModel first(toy::model(), 5);
    const auto half = train_divergence(first, data, toy::train(10), dir / "split");
    const Checkpoint mid = load_checkpoint(half.final_path, &first.config());
    DivergenceModel second = divergence_from_checkpoint(mid);
    train_divergence(second, data, toy::train(20), dir / "split", &mid);

    EXPECT_EQ(second.parameters().hash(), straight.parameters().hash());
    EXPECT_EQ(slurp(dir / "split/metrics.csv"), slurp(dir / "straight/metrics.csv"));
    EXPECT_EQ(slurp(dir / "split/ckpt/final.ckpt"), slurp(dir / "straight/ckpt/final.ckpt"));
}

TEST(Checkpoint, ConvergenceResumeChecksLinkedHash) {
    TempDir dir;
    const auto data = toy::dataset(dir, 2, 32);
    DivergenceModel a(toy::model(), 1), b(toy::model(), 2);
    const auto ra = train_divergence(a, data, toy::train(2), dir / "a");
    const auto rb = train_divergence(b, data, toy::train(2), dir / "b");
    ConvergenceModel conv(toy::model(), 4);
    TrainConfig tc = toy::train(2);
    tc.stage = Stage::Convergence;
    const auto rc = train_convergence(ra.final, conv, data, tc, dir / "c");
    tc.max_steps = 4;
    ConvergenceModel conv2(toy::model(), 4);
    EXPECT_THROW(train_convergence(rb.final, conv2, data, tc, dir / "d", &rc.final), CheckpointError);
}
