// SPDX-License-Identifier: Apache-2.0
#pragma once

// Brute-force reference implementations used only by the tests. They are
// written directly from the defining formulas and share no code with the
// library beyond the Image container.

#include <algorithm>
#include <cmath>
#include <vector>

#include "treesr/image.hpp"
#include "treesr/prediction_set.hpp"
#include "treesr/rng.hpp"

namespace treesr::oracle {

inline double luma(const Image& img, int y, int x) {
    return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

// Keys cubic convolution kernel, a = -0.5, written in the textbook
// piecewise form.
inline double keys(double t) {
    const double a = -0.5;
    const double x = t < 0 ? -t : t;
    if (x < 1.0) return (a + 2) * x * x * x - (a + 3) * x * x + 1;
    if (x < 2.0) return a * x * x * x - 5 * a * x * x + 8 * a * x - 4 * a;
    return 0.0;
}

inline int reflect(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

// Direct 2-D evaluation: every output pixel is the normalized sum over a
// window of input samples weighted by the (scaled) kernel product.
inline Image bicubic(const Image& in, int oh, int ow) {
    Image out(oh, ow);
    const double sy = static_cast<double>(oh) / in.height(), sx = static_cast<double>(ow) / in.width();
    const double ky = std::min(sy, 1.0), kx = std::min(sx, 1.0);
    for (int c = 0; c < 3; ++c)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const double cy = (oy + 0.5) / sy - 0.5, cx = (ox + 0.5) / sx - 0.5;
                double num = 0.0, den = 0.0;
                for (int iy = static_cast<int>(cy) - 20; iy <= static_cast<int>(cy) + 20; ++iy)
                    for (int ix = static_cast<int>(cx) - 20; ix <= static_cast<int>(cx) + 20; ++ix) {
                        const double w = keys((cy - iy) * ky) * keys((cx - ix) * kx);
                        if (w == 0.0) continue;
                        num += w * in.at(c, reflect(iy, in.height()), reflect(ix, in.width()));
                        den += w;
                    }
                out.at(c, oy, ox) = std::clamp(num / den, 0.0, 1.0);
            }
    return out;
}

inline std::vector<double> normalized_luma(const Image& img, double eps) {
    const int n = img.height() * img.width();
    std::vector<double> y(n);
    double mean = 0.0;
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c) {
            y[r * img.width() + c] = luma(img, r, c);
            mean += y[r * img.width() + c];
        }
    mean /= n;
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    for (double& v : y) v = (v - mean) / (sd + eps);
    return y;
}

inline std::vector<double> residual(const Image& pred, const Image& hr, double eps, bool use_abs) {
    auto a = normalized_luma(pred, eps);
    const auto b = normalized_luma(hr, eps);
    for (std::size_t k = 0; k < a.size(); ++k) a[k] = use_abs ? std::fabs(a[k] - b[k]) : a[k] - b[k];
    return a;
}

inline double msd(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s / a.size();
}

inline double beta(const LeafPath& a, const LeafPath& b, double theta) {
    int level = 1;
    for (std::size_t d = 0; d < a.size() && a[d] == b[d]; ++d) ++level;
    double v = 1.0;
    for (int k = 1; k < level; ++k) v *= theta;
    return v;
}

inline double triplet_loss(const PredictionSet& s, const Image& hr, double margin, double theta, double eps,
                           bool use_abs) {
    const std::size_t p = s.predictions.size();
    if (p < 2) return 0.0;
    std::vector<std::vector<double>> res;
    for (const Image& img : s.predictions) res.push_back(residual(img, hr, eps, use_abs));
    const std::vector<double> zero(res[0].size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            if (i == j) continue;
            const double t = std::max(msd(res[i], zero) - msd(res[i], res[j]) + margin, 0.0);
            total += beta(s.leaf_paths[i], s.leaf_paths[j], theta) * t;
        }
    return total / (p * (p - 1));
}

inline double mse(const Image& a, const Image& b) {
    double s = 0.0;
    int n = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) {
                const double d = a.at(c, y, x) - b.at(c, y, x);
                s += d * d;
                ++n;
            }
    return s / n;
}

inline double l2_loss(const PredictionSet& s, const Image& hr) {
    double t = 0.0;
    for (const Image& img : s.predictions) t += mse(img, hr);
    return t;
}

inline double psnr(const Image& a, const Image& b, int border) {
    double s = 0.0;
    int n = 0;
    for (int y = border; y < a.height() - border; ++y)
        for (int x = border; x < a.width() - border; ++x) {
            const double d = luma(a, y, x) - luma(b, y, x);
            s += d * d;
            ++n;
        }
    return 10.0 * std::log10(1.0 / (s / n));
}

// Windowed SSIM evaluated window by window with a 2-D Gaussian.
inline double ssim(const Image& a, const Image& b) {
    const int k = 11;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    double w[11][11], wsum = 0.0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * sigma * sigma));
            wsum += w[i][j];
        }
    double total = 0.0;
    int count = 0;
    for (int y = 0; y + k <= a.height(); ++y)
        for (int x = 0; x + k <= a.width(); ++x) {
            double ma = 0, mb = 0;
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                    ma += w[i][j] / wsum * luma(a, y + i, x + j);
                    mb += w[i][j] / wsum * luma(b, y + i, x + j);
                }
            double va = 0, vb = 0, cov = 0;
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                    const double da = luma(a, y + i, x + j) - ma, db = luma(b, y + i, x + j) - mb;
                    va += w[i][j] / wsum * da * da;
                    vb += w[i][j] / wsum * db * db;
                    cov += w[i][j] / wsum * da * db;
                }
            total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return total / count;
}

inline Image random_image(int h, int w, Rng& rng) {
    Image img(h, w);
    for (double& v : img.data()) v = rng.uniform();
    return img;
}

inline PredictionSet random_set(int depth, int branching, int h, int w, Rng& rng) {
    PredictionSet s;
    s.leaf_paths = enumerate_leaf_paths(depth, branching);
    for (std::size_t i = 0; i < s.leaf_paths.size(); ++i) s.predictions.push_back(random_image(h, w, rng));
    return s;
}

}  // namespace treesr::oracle
