// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evgs/camera.hpp"
#include "evgs/config.hpp"
#include "evgs/error.hpp"
#include "evgs/gaussian.hpp"
#include "evgs/loss.hpp"
#include "evgs/rasterizer.hpp"
#include "evgs/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

namespace evgs {

/// Gradient-descent step sizes per parameter group. Scale and opacity steps
/// act on log-scale and logit-opacity; the mean step is multiplied by the
/// scene extent.
struct FitSteps {
    double mean = 1e-3;
    double rotation = 1e-3;
    double logScale = 5e-3;
    double logitOpacity = 5e-2;
    double intensity = 2.5e-2;
};

struct FitConfig {
    int primitives = 200;
    int iterations = 2000;
    std::uint64_t seed = 0;
    FitSteps steps;
    double background = 0.0;
    double depthMin = 3.0; ///< initial depths are drawn from [depthMin, depthMax]
    double depthMax = 5.0;
    double footprint = 0.0; ///< initial screen radius in pixels; 0 picks sqrt(W H / n) / 2
    double initialOpacity = 0.5;
    double initialIntensity = 0.5;
    double sceneExtent = 0.0; ///< 0 uses the frustum width at the mean initial depth
    RasterConfig raster;
};

struct FitResult {
    GaussianCloud cloud;
    /// Σ (render - target)² before each step, plus the final value.
    std::vector<double> lossTrace;
};

inline double sumSquaredError(const Image &a, const Image &b) {
    requireSameShape(a, b, "sumSquaredError");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

/// Seeded initialization: primitives unprojected from uniformly random pixel
/// positions and depths, identity rotation, isotropic pixel-footprint scale.
inline GaussianCloud initialCloud(const CameraView &cam, const FitConfig &cfg) {
    validateCamera(cam);
    if (cfg.primitives < 1) {
        throw InvalidArgument("fitGaussians: need at least one primitive");
    }
    if (!(cfg.depthMin > cam.zNear) || !(cfg.depthMax >= cfg.depthMin)) {
        throw InvalidArgument("fitGaussians: invalid initial depth range");
    }
    const double footprint =
        cfg.footprint > 0.0
            ? cfg.footprint
            : 0.5 * std::sqrt(static_cast<double>(cam.width) * cam.height / cfg.primitives);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    GaussianCloud cloud;
    cloud.reserve(static_cast<std::size_t>(cfg.primitives));
    for (int i = 0; i < cfg.primitives; ++i) {
        const double u = unit(rng) * (cam.width - 1);
        const double v = unit(rng) * (cam.height - 1);
        const double d = cfg.depthMin + unit(rng) * (cfg.depthMax - cfg.depthMin);
        GaussianPrimitive g;
        g.mean = unprojectPixel(u, v, d, cam);
        g.scale = Eigen::Vector3d::Constant(footprint * d / cam.intrinsics.fx);
        g.opacity = cfg.initialOpacity;
        g.intensity = cfg.initialIntensity;
        cloud.push_back(g);
    }
    return cloud;
}

/// Fits `target` as seen from `cam` by plain gradient descent on the summed
/// squared error, with gradients from renderBackward.
inline FitResult fitGaussians(const Image &target, const CameraView &cam, const FitConfig &cfg) {
    if (target.width() != cam.width || target.height() != cam.height) {
        throw ShapeError("fitGaussians: target does not match the camera resolution");
    }
    if (cfg.iterations < 0) {
        throw InvalidArgument("fitGaussians: iterations must be non-negative");
    }
    FitResult result;
    result.cloud = initialCloud(cam, cfg);
    GaussianCloud &cloud = result.cloud;

    double extent = cfg.sceneExtent;
    if (!(extent > 0.0)) {
        extent = 0.5 * (cfg.depthMin + cfg.depthMax) * cam.width / cam.intrinsics.fx;
    }

    // Raw (unconstrained) copies of scale and opacity.
    std::vector<Eigen::Vector3d> logScale(cloud.size());
    std::vector<double> logitOpacity(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        logScale[i] = cloud[i].scale.array().log();
        logitOpacity[i] = logit(cloud[i].opacity);
    }

    Image residual(cam.width, cam.height);
    for (int it = 0;; ++it) {
        const RenderOutput out = renderForward(cloud, cam, cfg.background, cfg.raster);
        result.lossTrace.push_back(sumSquaredError(out.image, target));
        if (it == cfg.iterations) {
            break;
        }
        for (std::size_t p = 0; p < residual.size(); ++p) {
            residual[p] = 2.0 * (out.image[p] - target[p]);
        }
        const GradientSet grads = renderBackward(cloud, cam, cfg.background, residual, cfg.raster);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            GaussianPrimitive &g = cloud[i];
            const PrimitiveGradient &d = grads[i];
            g.mean -= cfg.steps.mean * extent * d.mean;
            g.rotation = normalizeQuaternion(g.rotation - cfg.steps.rotation * d.rotation);
            logScale[i] -= cfg.steps.logScale * d.scale.cwiseProduct(g.scale);
            g.scale = logScale[i].array().exp();
            logitOpacity[i] -= cfg.steps.logitOpacity * d.opacity * g.opacity * (1.0 - g.opacity);
            g.opacity = std::clamp(sigmoid(logitOpacity[i]), kOpacityMargin, 1.0 - kOpacityMargin);
            g.intensity = std::clamp(g.intensity - cfg.steps.intensity * d.intensity, 0.0, 1.0);
        }
    }
    return result;
}

inline const std::set<std::string> &trainingConfigKeys() {
    static const std::set<std::string> keys{
        "lambda1",   "lambda2",       "lambda3",           "beta1",          "beta2",
        "step_mean", "step_rotation", "step_log_scale",    "step_logit_opacity",
        "step_intensity"};
    return keys;
}

/// Reads lambda1..3 and beta1..2; missing keys keep their defaults.
inline LossWeights lossWeightsFromConfig(const KeyValueConfig &cfg) {
    LossWeights w;
    w.lambda1 = cfg.getDouble("lambda1", w.lambda1);
    w.lambda2 = cfg.getDouble("lambda2", w.lambda2);
    w.lambda3 = cfg.getDouble("lambda3", w.lambda3);
    w.beta1 = cfg.getDouble("beta1", w.beta1);
    w.beta2 = cfg.getDouble("beta2", w.beta2);
    w.validate();
    return w;
}

/// Reads step_mean, step_rotation, step_log_scale, step_logit_opacity and
/// step_intensity; missing keys keep their defaults.
inline FitSteps fitStepsFromConfig(const KeyValueConfig &cfg) {
    FitSteps s;
    s.mean = cfg.getDouble("step_mean", s.mean);
    s.rotation = cfg.getDouble("step_rotation", s.rotation);
    s.logScale = cfg.getDouble("step_log_scale", s.logScale);
    s.logitOpacity = cfg.getDouble("step_logit_opacity", s.logitOpacity);
    s.intensity = cfg.getDouble("step_intensity", s.intensity);
    for (double v : {s.mean, s.rotation, s.logScale, s.logitOpacity, s.intensity}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw DataError("optimizer steps must be finite and non-negative");
        }
    }
    return s;
}

} // namespace evgs
