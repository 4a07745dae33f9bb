// SPDX-License-Identifier: Apache-2.0
#include "treesr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "treesr/error.hpp"

namespace treesr {

namespace {

void check_pair(const Image& a, const Image& b, const char* what) {
    if (!a.same_size(b)) {
        throw ShapeError(std::string(what) + ": size mismatch " + std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                         std::to_string(b.width()));
    }
}

LumaPlane cropped_y(const Image& img, int border) {
    const LumaPlane y = extract_y(img);
    if (border == 0) return y;
    return y.crop(border, border, y.height() - 2 * border, y.width() - 2 * border);
}

void check_border(const Image& img, int border, const char* what) {
    if (border < 0 || 2 * border >= std::min(img.height(), img.width())) {
        throw ShapeError(std::string(what) + ": border " + std::to_string(border) + " too large for " +
                         std::to_string(img.height()) + "x" + std::to_string(img.width()));
    }
}

std::vector<double> gaussian_taps() {
    std::vector<double> g(kSsimWindow);
    const int r = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        g[i] = std::exp(-static_cast<double>((i - r) * (i - r)) / (2.0 * kSsimSigma * kSsimSigma));
        sum += g[i];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Separable 'valid' filtering with the SSIM window.
LumaPlane filter_valid(const LumaPlane& in, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int oh = in.height() - k + 1, ow = in.width() - k + 1;
    LumaPlane rows(in.height(), ow);
    for (int y = 0; y < in.height(); ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += g[t] * in.at(y, x + t);
            rows.at(y, x) = acc;
        }
    LumaPlane out(oh, ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += g[t] * rows.at(y + t, x);
            out.at(y, x) = acc;
        }
    return out;
}

}  // namespace

double psnr_y(const Image& sr, const Image& hr, int border) {
    check_pair(sr, hr, "psnr_y");
    check_border(hr, border, "psnr_y");
    const LumaPlane a = cropped_y(sr, border), b = cropped_y(hr, border);
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
    const double mse = acc / static_cast<double>(a.size());
    if (mse == 0.0) return kIdenticalPsnr;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim_y(const Image& sr, const Image& hr, int border) {
    check_pair(sr, hr, "ssim_y");
    if (border > 0) check_border(hr, border, "ssim_y");
    const LumaPlane a = cropped_y(sr, border), b = cropped_y(hr, border);
    if (a.height() < kSsimWindow || a.width() < kSsimWindow) {
        throw ShapeError("ssim_y: image " + std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                         " smaller than the " + std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow) +
                         " window");
    }
    LumaPlane aa(a.height(), a.width()), bb(a.height(), a.width()), ab(a.height(), a.width());
    for (std::size_t k = 0; k < a.size(); ++k) {
        aa[k] = a[k] * a[k];
        bb[k] = b[k] * b[k];
        ab[k] = a[k] * b[k];
    }
    const auto g = gaussian_taps();
    const LumaPlane mu_a = filter_valid(a, g), mu_b = filter_valid(b, g);
    const LumaPlane e_aa = filter_valid(aa, g), e_bb = filter_valid(bb, g), e_ab = filter_valid(ab, g);
    double sum = 0.0;
    for (std::size_t k = 0; k < mu_a.size(); ++k) {
        const double ma = mu_a[k], mb = mu_b[k];
        const double va = e_aa[k] - ma * ma, vb = e_bb[k] - mb * mb, cov = e_ab[k] - ma * mb;
        sum += ((2.0 * ma * mb + kSsimC1) * (2.0 * cov + kSsimC2)) /
               ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
    }
    return sum / static_cast<double>(mu_a.size());
}

std::vector<std::vector<double>> pairwise_divergence(const PredictionSet& preds) {
    const std::size_t p = preds.size();
    std::vector<LumaPlane> ys;
    for (const Image& img : preds.predictions) ys.push_back(extract_y(img));
    std::vector<std::vector<double>> m(p, std::vector<double>(p, 0.0));
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = i + 1; j < p; ++j) {
            if (ys[i].size() != ys[j].size()) throw ShapeError("pairwise_divergence: prediction sizes differ");
            double acc = 0.0;
            for (std::size_t k = 0; k < ys[i].size(); ++k) acc += (ys[i][k] - ys[j][k]) * (ys[i][k] - ys[j][k]);
            m[i][j] = m[j][i] = acc / static_cast<double>(ys[i].size());
        }
    return m;
}

double mean_pairwise_divergence(const PredictionSet& preds) {
    const std::size_t p = preds.size();
    if (p < 2) return 0.0;
    const auto m = pairwise_divergence(preds);
    double sum = 0.0;
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j)
            if (i != j) sum += m[i][j];
    return sum / static_cast<double>(p * (p - 1));
}

double checkerboard_energy(const Image& img) {
    if (img.height() < 2 || img.width() < 2) throw ShapeError("checkerboard_energy: image must be at least 2x2");
    const LumaPlane y = extract_y(img);
    double acc = 0.0;
    for (int r = 0; r + 1 < y.height(); ++r)
        for (int c = 0; c + 1 < y.width(); ++c) {
            // Offset of 2Y - 1 cancels in the zero-sum kernel.
            const double resp = 2.0 * (y.at(r, c) - y.at(r, c + 1) - y.at(r + 1, c) + y.at(r + 1, c + 1)) / 4.0;
            acc += resp * resp;
        }
    return acc / (static_cast<double>(y.height() - 1) * (y.width() - 1));
}

Image heatmap(const LumaPlane& plane) {
    const auto [lo, hi] = std::minmax_element(plane.data().begin(), plane.data().end());
    const double range = *hi - *lo;
    Image out(plane.height(), plane.width());
    for (std::size_t k = 0; k < plane.size(); ++k) {
        const double t = range > 0.0 ? (plane[k] - *lo) / range : 0.0;
        out.plane(0)[k] = t;
        out.plane(1)[k] = 0.0;
        out.plane(2)[k] = 1.0 - t;
    }
    return out;
}

std::vector<std::filesystem::path> export_weight_heatmaps(const WeightMaps& weights,
                                                          const std::vector<LeafPath>& leaf_paths,
                                                          const std::filesystem::path& out_dir) {
    if (weights.size() != leaf_paths.size()) throw ShapeError("export_weight_heatmaps: leaf path count mismatch");
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const auto path = out_dir / ("weight_" + leaf_path_name(leaf_paths[i]) + ".png");
        save_png(heatmap(weights.planes[i]), path);
        written.push_back(path);
    }
    return written;
}

void EvalReport::finalize() {
    mean_psnr = mean_ssim = 0.0;
    if (records.empty()) return;
    for (const EvalRecord& r : records) {
        mean_psnr += r.psnr_y;
        mean_ssim += r.ssim_y;
    }
    mean_psnr /= static_cast<double>(records.size());
    mean_ssim /= static_cast<double>(records.size());
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError(path.string() + ": cannot write report");
    auto fmt = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    out << "identifier,psnr_y,ssim_y\n";
    for (const EvalRecord& r : report.records) out << r.identifier << "," << fmt(r.psnr_y) << "," << fmt(r.ssim_y) << "\n";
    for (const auto& [id, reason] : report.skipped) out << "# skipped " << id << ": " << reason << "\n";
    out << "# mean psnr_y=" << fmt(report.mean_psnr) << " ssim_y=" << fmt(report.mean_ssim)
        << " branch_divergence=" << fmt(report.mean_divergence) << " n=" << report.records.size()
        << " skipped=" << report.skipped.size() << " border=" << report.border << " scale=" << report.scale << "\n";
    if (!out) throw IoError(path.string() + ": write failed");
}

}  // namespace treesr
