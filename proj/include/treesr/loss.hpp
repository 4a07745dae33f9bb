// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "treesr/image.hpp"
#include "treesr/prediction_set.hpp"

namespace treesr {

enum class Distance { MeanSquared };

struct LossConfig {
    double alpha = 0.1;   // weight of the triplet term
    double margin = 0.1;
    double theta = 0.5;   // attenuation base, in (0, 1]
    Distance distance = Distance::MeanSquared;
    bool use_abs = true;  // absolute residuals; false is the signed ablation
    double sigma_epsilon = 1e-8;

    void validate() const;
};

// Residual-domain map: |G(pred) - G(hr)| (or the signed difference).
using ResidualMap = LumaPlane;

// (Y - mean) / (std + eps) with the population standard deviation.
LumaPlane luma_normalize(const Image& img, double eps);

ResidualMap residual_map(const Image& pred, const Image& hr, const LossConfig& cfg);

double distance(const LumaPlane& a, const LumaPlane& b, Distance d = Distance::MeanSquared);

// max(d(a, p) - d(a, n) + margin, 0).
double triplet_term(const ResidualMap& anchor, const ResidualMap& positive, const ResidualMap& negative, double margin,
                    Distance d = Distance::MeanSquared);

// 1 + length of the longest common prefix of two distinct leaf paths, so
// siblings share the deepest level and cousins at the root get 1.
int common_ancestry_level(const LeafPath& a, const LeafPath& b);

// theta^(l - 1).
double attenuation(int level, double theta);

// Mean over ordered pairs i != j of beta_ij * trip(res_i, 0, res_j);
// zero for a single prediction.
double divergence_triplet_loss(const PredictionSet& preds, const Image& hr, const LossConfig& cfg);

// Sum over predictions of the per-pixel mean squared error against hr.
double divergence_l2(const PredictionSet& preds, const Image& hr);

struct DivergenceLoss {
    double total = 0.0;
    double l2 = 0.0;
    double triplet = 0.0;
};

// total = l2 + alpha * triplet.
DivergenceLoss divergence_loss(const PredictionSet& preds, const Image& hr, const LossConfig& cfg);

// Same value, plus d(total)/d(prediction pixel) for every prediction.
DivergenceLoss divergence_loss_with_grad(const PredictionSet& preds, const Image& hr, const LossConfig& cfg,
                                         std::vector<Image>& grads);

// Mean squared error of the fused result.
double convergence_loss(const Image& sr, const Image& hr);
double convergence_loss_with_grad(const Image& sr, const Image& hr, Image& grad);

double mean_squared_error(const Image& a, const Image& b);

}  // namespace treesr
