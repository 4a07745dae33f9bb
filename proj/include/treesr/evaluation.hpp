// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "treesr/image.hpp"
#include "treesr/prediction_set.hpp"

namespace treesr {

// psnr_y result for identical inputs.
inline constexpr double kIdenticalPsnr = std::numeric_limits<double>::infinity();

// 10 log10(1 / MSE) on Y planes with `border` pixels cropped per side.
double psnr_y(const Image& sr, const Image& hr, int border);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// Mean SSIM over all fully-contained 11x11 Gaussian windows of the Y planes.
double ssim_y(const Image& sr, const Image& hr, int border = 0);

// (i, j) -> mean squared difference of the Y planes.
std::vector<std::vector<double>> pairwise_divergence(const PredictionSet& preds);
// Mean over the off-diagonal entries; zero for a single prediction.
double mean_pairwise_divergence(const PredictionSet& preds);

// Mean squared response of the 2x2 kernel [[1,-1],[-1,1]]/4 over the luma
// mapped to [-1, 1] (2Y - 1); a full-swing checkerboard scores 1.
double checkerboard_energy(const Image& img);

// Blue (low) to red (high) ramp: t in [0, 1] -> (t, 0, 1 - t).
Image heatmap(const LumaPlane& plane);
// Writes weight_<leafpath>.png per plane; returns the written paths.
std::vector<std::filesystem::path> export_weight_heatmaps(const WeightMaps& weights,
                                                          const std::vector<LeafPath>& leaf_paths,
                                                          const std::filesystem::path& out_dir);

struct EvalRecord {
    std::string identifier;
    double psnr_y = 0.0;
    double ssim_y = 0.0;
};

struct EvalReport {
    std::vector<EvalRecord> records;
    std::vector<std::pair<std::string, std::string>> skipped;  // identifier, reason
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_divergence = 0.0;
    int border = 0;
    int scale = 0;

    void finalize();
};

// identifier,psnr_y,ssim_y rows plus a '#' aggregate footer.
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace treesr
