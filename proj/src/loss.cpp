// SPDX-License-Identifier: Apache-2.0
#include "treesr/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "treesr/error.hpp"

namespace treesr {

void LossConfig::validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("loss.alpha must be >= 0");
    if (!(margin >= 0.0)) throw ConfigError("loss.margin must be >= 0");
    if (!(theta > 0.0 && theta <= 1.0)) throw ConfigError("loss.theta must lie in (0, 1]");
    if (!(sigma_epsilon > 0.0)) throw ConfigError("loss.sigma_epsilon must be > 0");
}

namespace {

void check_same(const Image& a, const Image& b, const char* what) {
    if (!a.same_size(b)) {
        throw ShapeError(std::string(what) + ": size mismatch " + std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                         std::to_string(b.width()));
    }
}

void check_set(const PredictionSet& preds, const Image& hr, const char* what) {
    if (preds.size() == 0) throw ShapeError(std::string(what) + ": empty prediction set");
    if (preds.leaf_paths.size() != preds.size()) throw ShapeError(std::string(what) + ": leaf path count mismatch");
    for (const Image& p : preds.predictions) check_same(p, hr, what);
}

struct Normalized {
    LumaPlane y;
    LumaPlane g;
    double mean = 0.0;
    double sigma = 0.0;
};

Normalized normalize(const Image& img, double eps) {
    Normalized out;
    out.y = extract_y(img);
    const double n = static_cast<double>(out.y.size());
    double sum = 0.0;
    for (double v : out.y.data()) sum += v;
    out.mean = sum / n;
    double var = 0.0;
    for (double v : out.y.data()) var += (v - out.mean) * (v - out.mean);
    out.sigma = std::sqrt(var / n);
    out.g = LumaPlane(out.y.height(), out.y.width());
    const double denom = out.sigma + eps;
    for (std::size_t k = 0; k < out.y.size(); ++k) out.g[k] = (out.y[k] - out.mean) / denom;
    return out;
}

// Back-propagates dL/dG through G = (Y - mean) / (sigma + eps) and the luma
// weights, accumulating into grad (RGB).
void normalize_backward(const Normalized& nz, const LumaPlane& dg, double eps, Image& grad) {
    const double n = static_cast<double>(nz.y.size());
    const double denom = nz.sigma + eps;
    double gbar = 0.0, s = 0.0;
    for (std::size_t k = 0; k < dg.size(); ++k) {
        gbar += dg[k];
        s += dg[k] * (nz.y[k] - nz.mean);
    }
    gbar /= n;
    const double sigma_coeff = nz.sigma > 0.0 ? s / (n * nz.sigma * denom * denom) : 0.0;
    auto r = grad.plane(0), g = grad.plane(1), b = grad.plane(2);
    for (std::size_t k = 0; k < dg.size(); ++k) {
        const double dy = (dg[k] - gbar) / denom - sigma_coeff * (nz.y[k] - nz.mean);
        r[k] += kLumaR * dy;
        g[k] += kLumaG * dy;
        b[k] += kLumaB * dy;
    }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

LumaPlane luma_normalize(const Image& img, double eps) { return normalize(img, eps).g; }

ResidualMap residual_map(const Image& pred, const Image& hr, const LossConfig& cfg) {
    check_same(pred, hr, "residual_map");
    const LumaPlane gp = luma_normalize(pred, cfg.sigma_epsilon);
    const LumaPlane gh = luma_normalize(hr, cfg.sigma_epsilon);
    ResidualMap res(gp.height(), gp.width());
    for (std::size_t k = 0; k < res.size(); ++k) {
        const double d = gp[k] - gh[k];
        res[k] = cfg.use_abs ? std::abs(d) : d;
    }
    return res;
}

double distance(const LumaPlane& a, const LumaPlane& b, Distance) {
    if (a.height() != b.height() || a.width() != b.width()) throw ShapeError("distance: plane size mismatch");
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
    return acc / static_cast<double>(a.size());
}

double triplet_term(const ResidualMap& anchor, const ResidualMap& positive, const ResidualMap& negative, double margin,
                    Distance d) {
    return std::max(distance(anchor, positive, d) - distance(anchor, negative, d) + margin, 0.0);
}

int common_ancestry_level(const LeafPath& a, const LeafPath& b) {
    if (a.size() != b.size()) throw ShapeError("common_ancestry_level: paths differ in length");
    if (a == b) throw ShapeError("common_ancestry_level: paths must be distinct");
    std::size_t prefix = 0;
    while (prefix < a.size() && a[prefix] == b[prefix]) ++prefix;
    return 1 + static_cast<int>(prefix);
}

double attenuation(int level, double theta) { return std::pow(theta, level - 1); }

double divergence_triplet_loss(const PredictionSet& preds, const Image& hr, const LossConfig& cfg) {
    check_set(preds, hr, "divergence_triplet_loss");
    const std::size_t p = preds.size();
    if (p < 2) return 0.0;
    std::vector<ResidualMap> res;
    res.reserve(p);
    for (const Image& img : preds.predictions) res.push_back(residual_map(img, hr, cfg));
    const ResidualMap zero(res[0].height(), res[0].width(), 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            if (i == j) continue;
            const double beta = attenuation(common_ancestry_level(preds.leaf_paths[i], preds.leaf_paths[j]), cfg.theta);
            sum += beta * triplet_term(res[i], zero, res[j], cfg.margin, cfg.distance);
        }
    return sum / static_cast<double>(p * (p - 1));
}

double mean_squared_error(const Image& a, const Image& b) {
    check_same(a, b, "mean_squared_error");
    double acc = 0.0;
    for (std::size_t k = 0; k < a.data().size(); ++k) {
        const double d = a.data()[k] - b.data()[k];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data().size());
}

double divergence_l2(const PredictionSet& preds, const Image& hr) {
    check_set(preds, hr, "divergence_l2");
    double sum = 0.0;
    for (const Image& img : preds.predictions) sum += mean_squared_error(img, hr);
    return sum;
}

DivergenceLoss divergence_loss(const PredictionSet& preds, const Image& hr, const LossConfig& cfg) {
    DivergenceLoss out;
    out.l2 = divergence_l2(preds, hr);
    out.triplet = divergence_triplet_loss(preds, hr, cfg);
    out.total = out.l2 + cfg.alpha * out.triplet;
    return out;
}

DivergenceLoss divergence_loss_with_grad(const PredictionSet& preds, const Image& hr, const LossConfig& cfg,
                                         std::vector<Image>& grads) {
    check_set(preds, hr, "divergence_loss");
    const std::size_t p = preds.size();
    const double npix3 = static_cast<double>(hr.data().size());
    DivergenceLoss out;

    grads.assign(p, Image(hr.height(), hr.width()));
    for (std::size_t i = 0; i < p; ++i) {
        const auto& pd = preds.predictions[i].data();
        auto& gd = grads[i].data();
        double acc = 0.0;
        for (std::size_t k = 0; k < pd.size(); ++k) {
            const double d = pd[k] - hr.data()[k];
            acc += d * d;
            gd[k] = 2.0 * d / npix3;
        }
        out.l2 += acc / npix3;
    }

    if (p >= 2) {
        const Normalized hn = normalize(hr, cfg.sigma_epsilon);
        std::vector<Normalized> nz;
        std::vector<LumaPlane> diff, res, dres;
        for (const Image& img : preds.predictions) {
            nz.push_back(normalize(img, cfg.sigma_epsilon));
            LumaPlane d(hr.height(), hr.width()), r(hr.height(), hr.width());
            for (std::size_t k = 0; k < d.size(); ++k) {
                d[k] = nz.back().g[k] - hn.g[k];
                r[k] = cfg.use_abs ? std::abs(d[k]) : d[k];
            }
            diff.push_back(std::move(d));
            res.push_back(std::move(r));
            dres.emplace_back(hr.height(), hr.width(), 0.0);
        }
        const double n = static_cast<double>(res[0].size());
        const double pairs = static_cast<double>(p * (p - 1));
        std::vector<double> self_dist(p);
        for (std::size_t i = 0; i < p; ++i) {
            double acc = 0.0;
            for (double v : res[i].data()) acc += v * v;
            self_dist[i] = acc / n;
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < p; ++j) {
                if (i == j) continue;
                const double beta = attenuation(common_ancestry_level(preds.leaf_paths[i], preds.leaf_paths[j]), cfg.theta);
                double cross = 0.0;
                for (std::size_t k = 0; k < res[i].size(); ++k) {
                    const double d = res[i][k] - res[j][k];
                    cross += d * d;
                }
                const double arg = self_dist[i] - cross / n + cfg.margin;
                if (arg <= 0.0) continue;
                sum += beta * arg;
                const double c = cfg.alpha * beta / pairs;
                for (std::size_t k = 0; k < res[i].size(); ++k) {
                    dres[i][k] += c * 2.0 * res[j][k] / n;
                    dres[j][k] += c * 2.0 * (res[i][k] - res[j][k]) / n;
                }
            }
        out.triplet = sum / pairs;
        for (std::size_t i = 0; i < p; ++i) {
            if (cfg.use_abs)
                for (std::size_t k = 0; k < dres[i].size(); ++k) dres[i][k] *= sign(diff[i][k]);
            normalize_backward(nz[i], dres[i], cfg.sigma_epsilon, grads[i]);
        }
    }
    out.total = out.l2 + cfg.alpha * out.triplet;
    return out;
}

double convergence_loss(const Image& sr, const Image& hr) { return mean_squared_error(sr, hr); }

double convergence_loss_with_grad(const Image& sr, const Image& hr, Image& grad) {
    check_same(sr, hr, "convergence_loss");
    grad = Image(hr.height(), hr.width());
    const double n = static_cast<double>(hr.data().size());
    double acc = 0.0;
    for (std::size_t k = 0; k < hr.data().size(); ++k) {
        const double d = sr.data()[k] - hr.data()[k];
        acc += d * d;
        grad.data()[k] = 2.0 * d / n;
    }
    return acc / n;
}

}  // namespace treesr
