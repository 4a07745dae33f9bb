// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "support/oracles.hpp"
#include "support/temp_dir.hpp"
#include "treesr/error.hpp"
#include "treesr/evaluation.hpp"

using namespace treesr;

TEST(Psnr, UniformOffsetIsTwentyDecibels) {
    EXPECT_NEAR(psnr_y(Image(16, 16, 0.6), Image(16, 16, 0.5), 0), 20.0, 1e-9);
    EXPECT_NEAR(psnr_y(Image(16, 16, 0.6), Image(16, 16, 0.5), 4), 20.0, 1e-9);
}

TEST(Psnr, IdenticalIsSentinel) {
    Rng rng(1);
    const Image a = oracle::random_image(8, 8, rng);
    EXPECT_EQ(psnr_y(a, a, 0), kIdenticalPsnr);
    EXPECT_TRUE(std::isinf(psnr_y(a, a, 2)));
}

TEST(Psnr, MatchesFormulaAndIsSymmetric) {
    Rng rng(2);
    for (int t = 0; t < 30; ++t) {
        const Image a = oracle::random_image(12, 10, rng), b = oracle::random_image(12, 10, rng);
        const int border = static_cast<int>(rng.below(4));
        ASSERT_NEAR(psnr_y(a, b, border), oracle::psnr(a, b, border), 1e-9);
        ASSERT_EQ(psnr_y(a, b, border), psnr_y(b, a, border));
    }
}

TEST(Psnr, BadBorderAndSizeRejected) {
    EXPECT_THROW(psnr_y(Image(8, 8), Image(8, 8), 4), ShapeError);
    EXPECT_THROW(psnr_y(Image(8, 8), Image(8, 9), 0), ShapeError);
}

TEST(Ssim, IdenticalIsOne) {
    Rng rng(3);
    const Image a = oracle::random_image(16, 16, rng);
    EXPECT_NEAR(ssim_y(a, a), 1.0, 1e-12);
}

TEST(Ssim, MatchesWindowOracle) {
    Rng rng(4);
    for (int t = 0; t < 10; ++t) {
        const Image a = oracle::random_image(14, 17, rng);
        Image b = a;
        for (double& v : b.data()) v = std::clamp(v + rng.uniform(-0.2, 0.2), 0.0, 1.0);
        ASSERT_NEAR(ssim_y(a, b), oracle::ssim(a, b), 1e-9);
        ASSERT_NEAR(ssim_y(a, b), ssim_y(b, a), 1e-12);
    }
}

TEST(Ssim, InvertedContrastScoresLow) {
    Rng rng(5);
    const Image a = oracle::random_image(16, 16, rng);
    Image inv = a;
    for (double& v : inv.data()) v = 1.0 - v;
    EXPECT_LE(ssim_y(a, inv), 0.5);
}

TEST(Ssim, TooSmallRejected) { EXPECT_THROW(ssim_y(Image(10, 10), Image(10, 10)), ShapeError); }

TEST(Divergence, MatrixIsSymmetricWithZeroDiagonal) {
    PredictionSet s;
    s.leaf_paths = enumerate_leaf_paths(1, 3);
    s.predictions = {Image(4, 4, 0.1), Image(4, 4, 0.3), Image(4, 4, 0.6)};
    const auto m = pairwise_divergence(s);
    ASSERT_EQ(m.size(), 3u);
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(m[i][i], 0.0);
        for (int j = 0; j < 3; ++j) EXPECT_EQ(m[i][j], m[j][i]);
    }
    EXPECT_NEAR(m[0][1], 0.04, 1e-12);
    EXPECT_NEAR(m[0][2], 0.25, 1e-12);
    EXPECT_NEAR(mean_pairwise_divergence(s), (0.04 + 0.25 + 0.09) / 3.0, 1e-12);
}

TEST(Divergence, SinglePredictionIsZero) {
    PredictionSet s;
    s.leaf_paths = enumerate_leaf_paths(0, 2);
    s.predictions = {Image(4, 4, 0.5)};
    EXPECT_EQ(mean_pairwise_divergence(s), 0.0);
}

TEST(Checkerboard, NamedPatterns) {
    Image board(8, 8);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) board.at(c, y, x) = (x + y) % 2;
    EXPECT_NEAR(checkerboard_energy(board), 1.0, 1e-12);
    EXPECT_EQ(checkerboard_energy(Image(8, 8, 0.4)), 0.0);
    Image ramp(8, 8);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) ramp.at(c, y, x) = (x + y) / 14.0;
    EXPECT_LT(checkerboard_energy(ramp), 1e-4);
}

TEST(Heatmap, UniformAndOneHot) {
    LumaPlane flat(3, 3, 0.25);
    const Image h = heatmap(flat);
    EXPECT_EQ(h.at(0, 1, 1), 0.0);
    EXPECT_EQ(h.at(2, 1, 1), 1.0);
    LumaPlane hot(2, 2, 0.0);
    hot.at(0, 1) = 1.0;
    const Image hh = heatmap(hot);
    EXPECT_EQ(hh.at(0, 0, 1), 1.0);
    EXPECT_EQ(hh.at(2, 0, 1), 0.0);
    EXPECT_EQ(hh.at(0, 1, 1), 0.0);
    EXPECT_EQ(hh.at(2, 1, 1), 1.0);
}

TEST(Heatmap, ExportNamesByLeafPath) {
    TempDir dir;
    WeightMaps w;
    for (int i = 0; i < 4; ++i) w.planes.emplace_back(4, 4, 0.25);
    const auto paths = export_weight_heatmaps(w, enumerate_leaf_paths(2, 2), dir.path());
    ASSERT_EQ(paths.size(), 4u);
    for (const char* name : {"weight_00.png", "weight_01.png", "weight_10.png", "weight_11.png"})
        EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
}

TEST(Report, MeansAgreeWithRows) {
    TempDir dir;
    EvalReport r;
    r.records = {{"a", 30.0, 0.9}, {"b", 32.0, 0.8}};
    r.skipped = {{"c", "border too large"}};
    r.border = 2;
    r.scale = 2;
    r.finalize();
    EXPECT_DOUBLE_EQ(r.mean_psnr, 31.0);
    EXPECT_DOUBLE_EQ(r.mean_ssim, 0.85);
    write_report_csv(r, dir / "r.csv");
    std::ifstream in(dir / "r.csv");
    std::string header, line;
    std::getline(in, header);
    EXPECT_EQ(header, "identifier,psnr_y,ssim_y");
    int rows = 0;
    bool footer = false, skipped = false;
    while (std::getline(in, line)) {
        if (line.rfind("# mean", 0) == 0) footer = true;
        else if (line.rfind("# skipped c", 0) == 0) skipped = true;
        else if (!line.empty() && line[0] != '#') ++rows;
    }
    EXPECT_EQ(rows, 2);
    EXPECT_TRUE(footer);
    EXPECT_TRUE(skipped);
}
