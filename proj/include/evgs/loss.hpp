// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evgs/error.hpp"
#include "evgs/tensor.hpp"

#include <cmath>
#include <functional>

namespace evgs {

/// Branch weights λ and the L₂ / perceptual split β.
struct LossWeights {
    double lambda1 = 0.2; ///< intensity branch
    double lambda2 = 0.2; ///< depth branch
    double lambda3 = 0.6; ///< rendered target view
    double beta1 = 0.8;   ///< L₂ term
    double beta2 = 0.2;   ///< perceptual term

    void validate() const {
        for (double v : {lambda1, lambda2, lambda3, beta1, beta2}) {
            if (!(v >= 0.0) || !std::isfinite(v)) {
                throw InvalidArgument("loss weights must be finite and non-negative");
            }
        }
    }
};

/// Mean squared error; `grad`, if given, receives 2 (a - b) / N.
inline double mseLoss(const Image &a, const Image &b, Image *grad = nullptr) {
    requireSameShape(a, b, "mseLoss");
    if (grad) {
        *grad = Image(a.width(), a.height());
    }
    if (a.empty()) {
        return 0.0;
    }
    const double n = static_cast<double>(a.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
        if (grad) {
            (*grad)[i] = 2.0 * d / n;
        }
    }
    return sum / n;
}

/// Mean absolute error; `grad`, if given, receives sign(a - b) / N with 0 at ties.
inline double l1Loss(const Image &a, const Image &b, Image *grad = nullptr) {
    requireSameShape(a, b, "l1Loss");
    if (grad) {
        *grad = Image(a.width(), a.height());
    }
    if (a.empty()) {
        return 0.0;
    }
    const double n = static_cast<double>(a.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += std::abs(d);
        if (grad) {
            (*grad)[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
        }
    }
    return sum / n;
}

/// Perceptual term L_p(pred, gt). Returns the loss and, when `grad` is not
/// null, writes d L_p / d pred into it. An empty function means L_p ≡ 0.
using PerceptualLoss = std::function<double(const Image &pred, const Image &gt, Image *grad)>;

struct JointLossTargets {
    Image intensitySource;
    Image depthSource;
    Image intensityTarget;
};

struct JointLossResult {
    double total = 0.0;
    double intensityTerm = 0.0; ///< β₁ L₂ + β₂ L_p on the source intensity
    double depthTerm = 0.0;     ///< L₁ on the source depth
    double renderTerm = 0.0;    ///< β₁ L₂ + β₂ L_p on the rendered target view
    Image gradIntensity;
    Image gradDepth;
    Image gradRendered;
};

/// λ₁ (β₁ L₂ + β₂ L_p)(I_pred) + λ₂ L₁(D_pred) + λ₃ (β₁ L₂ + β₂ L_p)(rendered),
/// with gradients with respect to the three predictions.
inline JointLossResult jointLoss(const Image &intensityPred, const Image &depthPred,
                                 const Image &rendered, const JointLossTargets &gt,
                                 const LossWeights &w = {}, const PerceptualLoss &perceptual = {}) {
    w.validate();
    requireSameShape(intensityPred, gt.intensitySource, "jointLoss intensity");
    requireSameShape(depthPred, gt.depthSource, "jointLoss depth");
    requireSameShape(rendered, gt.intensityTarget, "jointLoss rendered view");

    auto photometric = [&](const Image &pred, const Image &target, Image &grad) {
        Image g2;
        double value = w.beta1 * mseLoss(pred, target, &g2);
        grad = Image(pred.width(), pred.height());
        for (std::size_t i = 0; i < grad.size(); ++i) {
            grad[i] = w.beta1 * g2[i];
        }
        if (perceptual) {
            Image gp(pred.width(), pred.height());
            value += w.beta2 * perceptual(pred, target, &gp);
            requireSameShape(gp, pred, "perceptual loss gradient");
            for (std::size_t i = 0; i < grad.size(); ++i) {
                grad[i] += w.beta2 * gp[i];
            }
        }
        return value;
    };

    JointLossResult r;
    r.intensityTerm = photometric(intensityPred, gt.intensitySource, r.gradIntensity);
    r.depthTerm = l1Loss(depthPred, gt.depthSource, &r.gradDepth);
    r.renderTerm = photometric(rendered, gt.intensityTarget, r.gradRendered);
    r.total = w.lambda1 * r.intensityTerm + w.lambda2 * r.depthTerm + w.lambda3 * r.renderTerm;
    for (std::size_t i = 0; i < r.gradIntensity.size(); ++i) {
        r.gradIntensity[i] *= w.lambda1;
    }
    for (std::size_t i = 0; i < r.gradDepth.size(); ++i) {
        r.gradDepth[i] *= w.lambda2;
    }
    for (std::size_t i = 0; i < r.gradRendered.size(); ++i) {
        r.gradRendered[i] *= w.lambda3;
    }
    return r;
}

} // namespace evgs
