// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "support/oracles.hpp"
#include "support/temp_dir.hpp"
#include "treesr/data.hpp"
#include "treesr/error.hpp"
#include "treesr/synthetic.hpp"

namespace fs = std::filesystem;
using namespace treesr;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

double variance(const std::vector<double>& a) {
    double m = 0, v = 0;
    for (double x : a) m += x;
    m /= a.size();
    for (double x : a) v += (x - m) * (x - m);
    return v / a.size();
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        ma += a[k];
        mb += b[k];
    }
    ma /= a.size();
    mb /= b.size();
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        sab += (a[k] - ma) * (b[k] - mb);
        saa += (a[k] - ma) * (a[k] - ma);
        sbb += (b[k] - mb) * (b[k] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(Generate, CropsToMultipleOfScale) {
    TempDir dir;
    fs::create_directories(dir / "hr");
    Rng rng(1);
    save_png(oracle::random_image(97, 97, rng), dir / "hr/odd.png");
    const GeneratedDataset g = generate_bicubic_pairs(dir / "hr", 4, dir / "out");
    ASSERT_EQ(g.train.entries.size(), 1u);
    const auto loaded = load_pairs(g.train);
    ASSERT_EQ(loaded.pairs.size(), 1u);
    EXPECT_EQ(loaded.pairs[0].hr.height(), 96);
    EXPECT_EQ(loaded.pairs[0].hr.width(), 96);
    EXPECT_EQ(loaded.pairs[0].lr.height(), 24);
    EXPECT_EQ(loaded.pairs[0].lr.width(), 24);
    EXPECT_FALSE(g.test.has_value());
}

TEST(Generate, ConstantImageStaysConstant) {
    TempDir dir;
    fs::create_directories(dir / "hr");
    save_png(Image(32, 40, 100.0 / 255.0), dir / "hr/flat.png");
    const auto g = generate_bicubic_pairs(dir / "hr", 2, dir / "out");
    const Image lr = load_png(g.train.lr_path(g.train.entries[0]));
    for (double v : lr.data()) EXPECT_DOUBLE_EQ(v, 100.0 / 255.0);
}

TEST(Generate, DeterministicAndRedegradesExactly) {
    TempDir dir;
    synthesize_corpus(dir / "hr", 3, 48, 40, 4);
    const auto a = generate_bicubic_pairs(dir / "hr", 2, dir / "a");
    const auto b = generate_bicubic_pairs(dir / "hr", 2, dir / "b");
    EXPECT_EQ(slurp(dir / "a/train.manifest"), slurp(dir / "b/train.manifest"));
    for (const ManifestEntry& e : a.train.entries) {
        EXPECT_EQ(slurp(a.train.lr_path(e)), slurp(b.train.lr_path(e)));
        const Image hr = load_png(a.train.hr_path(e));
        save_png(bicubic_resize(hr, hr.height() / 2, hr.width() / 2), dir / "re.png");
        EXPECT_EQ(slurp(dir / "re.png"), slurp(a.train.lr_path(e))) << e.identifier;
    }
}

TEST(Generate, SixteenBitInputStaysSixteenBit) {
    TempDir dir;
    fs::create_directories(dir / "hr");
    Rng rng(2);
    save_png(oracle::random_image(16, 16, rng), dir / "hr/deep.png", 16);
    const auto g = generate_bicubic_pairs(dir / "hr", 2, dir / "out");
    EXPECT_EQ(png_bit_depth(g.train.lr_path(g.train.entries[0])), 16);
}

TEST(Generate, SmallImagesSkippedWithWarning) {
    TempDir dir;
    fs::create_directories(dir / "hr");
    save_png(Image(15, 40, 0.5), dir / "hr/tiny.png");
    save_png(Image(16, 16, 0.5), dir / "hr/ok.png");
    const auto g = generate_bicubic_pairs(dir / "hr", 2, dir / "out");
    ASSERT_EQ(g.train.entries.size(), 1u);
    EXPECT_EQ(g.train.entries[0].identifier, "ok");
    ASSERT_EQ(g.train.warnings.size(), 1u);
    EXPECT_NE(g.train.warnings[0].find("tiny"), std::string::npos);
    const DatasetManifest reread = load_manifest(dir / "out/train.manifest");
    EXPECT_EQ(reread.warnings.size(), 1u);
}

TEST(Generate, EmptyDirectoryFails) {
    TempDir dir;
    fs::create_directories(dir / "hr");
    EXPECT_THROW(generate_bicubic_pairs(dir / "hr", 2, dir / "out"), IoError);
}

TEST(Generate, TestSplitIsDisjoint) {
    TempDir dir;
    synthesize_corpus(dir / "hr", 6, 32, 32, 9);
    const auto g = generate_bicubic_pairs(dir / "hr", 2, dir / "out", 3);
    ASSERT_TRUE(g.test.has_value());
    EXPECT_EQ(g.train.entries.size(), 4u);
    EXPECT_EQ(g.test->entries.size(), 2u);
    EXPECT_NO_THROW(check_disjoint(g.train, *g.test));
    EXPECT_THROW(check_disjoint(g.train, g.train), ConfigError);
    EXPECT_EQ(load_manifest(dir / "out/test.manifest").split, Split::Test);
}

TEST(Manifest, RoundTrip) {
    TempDir dir;
    DatasetManifest m;
    m.scale = 3;
    m.split = Split::Test;
    m.entries = {{"x", "lr/x.png", "hr/x.png"}, {"y", "lr/y.png", "hr/y.png"}};
    m.warnings = {"something odd"};
    save_manifest(m, dir / "m.manifest");
    const DatasetManifest back = load_manifest(dir / "m.manifest");
    EXPECT_EQ(back.scale, 3);
    EXPECT_EQ(back.split, Split::Test);
    ASSERT_EQ(back.entries.size(), 2u);
    EXPECT_EQ(back.entries[1].identifier, "y");
    EXPECT_EQ(back.entries[1].hr, fs::path("hr/y.png"));
    EXPECT_EQ(back.root, dir.path());
    EXPECT_EQ(back.warnings, m.warnings);
}

TEST(Manifest, MalformedRejected) {
    TempDir dir;
    std::ofstream(dir / "bad.manifest") << "scale=2\tsplit=train\nonly_one_field\n";
    EXPECT_THROW(load_manifest(dir / "bad.manifest"), IoError);
    std::ofstream(dir / "bad2.manifest") << "nonsense\n";
    EXPECT_THROW(load_manifest(dir / "bad2.manifest"), IoError);
    EXPECT_THROW(load_manifest(dir / "missing.manifest"), IoError);
}

TEST(Pairs, StreamsAllAndRejectsBrokenEntries) {
    TempDir dir;
    synthesize_corpus(dir / "hr", 4, 32, 32, 5);
    auto g = generate_bicubic_pairs(dir / "hr", 2, dir / "out");
    int seen = 0;
    auto rejected = iterate_pairs(g.train, [&](ImagePair&& p) {
        EXPECT_EQ(p.hr.height(), 2 * p.lr.height());
        EXPECT_EQ(p.scale, 2);
        ++seen;
    });
    EXPECT_EQ(seen, 4);
    EXPECT_TRUE(rejected.empty());

    // Corrupt one LR file and replace another with an off-by-one size.
    std::ofstream(g.train.lr_path(g.train.entries[0]), std::ios::binary) << "garbage";
    save_png(Image(15, 16, 0.5), g.train.lr_path(g.train.entries[1]));
    const LoadedPairs loaded = load_pairs(g.train);
    EXPECT_EQ(loaded.pairs.size(), 2u);
    ASSERT_EQ(loaded.rejected.size(), 2u);
    EXPECT_EQ(loaded.rejected[0].identifier, g.train.entries[0].identifier);
    EXPECT_EQ(loaded.rejected[1].identifier, g.train.entries[1].identifier);
    EXPECT_NE(loaded.rejected[1].reason.find("15x16"), std::string::npos) << loaded.rejected[1].reason;
}

TEST(Patches, AlignedAndSeeded) {
    TempDir dir;
    synthesize_corpus(dir / "hr", 1, 96, 96, 6);
    const auto g = generate_bicubic_pairs(dir / "hr", 2, dir / "out");
    const ImagePair pair = load_pairs(g.train).pairs.at(0);
    Rng a(3), b(3);
    for (int t = 0; t < 10; ++t) {
        const auto [lr, hr] = sample_patch_pair(pair, 16, a);
        const auto [lr2, hr2] = sample_patch_pair(pair, 16, b);
        EXPECT_EQ(lr, lr2);
        EXPECT_EQ(hr, hr2);
        ASSERT_EQ(hr.height(), 32);
        const Image down = bicubic_resize(hr, 16, 16);
        // Away from the patch edge the kernel never leaves the patch, so the
        // only difference is the 8-bit rounding of the stored LR.
        const LumaPlane yd = extract_y(down), yl = extract_y(lr);
        for (int r = 2; r < 14; ++r)
            for (int q = 2; q < 14; ++q) ASSERT_LE(std::fabs(yd.at(r, q) - yl.at(r, q)), 0.5 / 255 + 1e-9);
        // Correlation is only meaningful where the patch has texture.
        const double sd = std::sqrt(variance(yl.data()));
        if (sd > 0.05) EXPECT_GT(correlation(yd.data(), yl.data()), 0.999) << "patch " << t;
    }
    Rng c(3);
    EXPECT_THROW(sample_patch_pair(pair, 49, c), ShapeError);
}
