// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evgs/camera.hpp"
#include "evgs/error.hpp"
#include "evgs/events.hpp"
#include "evgs/gaussian.hpp"
#include "evgs/rasterizer.hpp"
#include "evgs/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace evgs {

inline constexpr double kDefaultDepthRange = 2.0; ///< D_max: depths lie in [1, e^D_max]
inline constexpr int kDefaultFeatureChannels = 32;

/// Output of the depth stage. `features` is (H, W, K_d).
struct DepthPrediction {
    Image disp;
    Image mask;
    Tensor3 features;
};

/// Output of the intensity stage, before masking. `features` is (H, W, K_I).
struct IntensityPrediction {
    Image intensity;
    Tensor3 features;
};

/// Everything the Gaussian regressor sees for one view.
struct RegressorInput {
    Image depth;       ///< D_pred
    Image intensity;   ///< masked I_pred
    Tensor3 features;  ///< F_I, (H, W, K_I)
    VoxelGrid voxels;  ///< E_k
};

/// Pluggable stage callables. The regressor fills only the raw rotation,
/// scale and opacity maps; the cascade supplies depth, intensity and mask.
struct PredictorSuite {
    std::function<DepthPrediction(const VoxelGrid &current, const VoxelGrid &previous)> depth;
    std::function<IntensityPrediction(const Tensor3 &depthFeatures, const VoxelGrid &voxels,
                                      const AccumFrame &frame)>
        intensity;
    std::function<ParameterMaps(const RegressorInput &input)> regressor;
};

/// D = exp(D_max · sigmoid(disp) · mask), elementwise.
inline Image depthFromDisparity(const Image &disp, const Image &mask,
                                double dMax = kDefaultDepthRange) {
    requireSameShape(disp, mask, "depthFromDisparity");
    if (!(dMax > 0.0)) {
        throw InvalidArgument("depthFromDisparity: D_max must be positive");
    }
    Image out(disp.width(), disp.height());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::exp(dMax * (sigmoid(disp[i]) * mask[i]));
    }
    return out;
}

/// Intermediate products of one cascade run.
struct CascadeResult {
    DepthPrediction depth;
    Image depthMap; ///< D_pred
    IntensityPrediction intensity; ///< intensity already multiplied by the mask
    ParameterMaps raw;       ///< regressor output plus depth, intensity and mask
    ParameterMaps activated;
    GaussianCloud cloud;
};

namespace detail {

inline void requireMapShape(const Image &img, int w, int h, const std::string &stage,
                            const std::string &what) {
    if (img.width() != w || img.height() != h) {
        throw ShapeError(stage + ": " + what + " has shape " + shapeString(img) + ", expected (" +
                         std::to_string(h) + ", " + std::to_string(w) + ")");
    }
}

inline void requireFeatureShape(const Tensor3 &t, int w, int h, const std::string &stage) {
    if (t.dim(0) != h || t.dim(1) != w) {
        throw ShapeError(stage + ": feature volume has shape " + t.shapeString() +
                         ", expected (" + std::to_string(h) + ", " + std::to_string(w) + ", K)");
    }
}

} // namespace detail

/// Depth → intensity → Gaussian regression, then activation and cloud
/// assembly on the source view `cam`.
inline CascadeResult runCascade(const VoxelGrid &current, const VoxelGrid &previous,
                                const AccumFrame &frame, const PredictorSuite &suite,
                                const CameraView &cam, double dMax = kDefaultDepthRange,
                                double maskThreshold = kDefaultMaskThreshold) {
    if (!suite.depth || !suite.intensity || !suite.regressor) {
        throw InvalidArgument("runCascade: predictor suite is incomplete");
    }
    const int w = cam.width;
    const int h = cam.height;
    if (current.width() != w || current.height() != h || !previous.data.hasShape(current.bins(), h, w)) {
        throw ShapeError("runCascade: voxel grids " + current.data.shapeString() + " and " +
                         previous.data.shapeString() + " do not match the camera resolution");
    }
    if (!frame.data.hasShape(3, h, w)) {
        throw ShapeError("runCascade: accumulated frame has shape " + frame.data.shapeString());
    }

    CascadeResult r;
    r.depth = suite.depth(current, previous);
    detail::requireMapShape(r.depth.disp, w, h, "depth predictor", "disparity");
    detail::requireMapShape(r.depth.mask, w, h, "depth predictor", "mask");
    detail::requireFeatureShape(r.depth.features, w, h, "depth predictor");
    r.depthMap = depthFromDisparity(r.depth.disp, r.depth.mask, dMax);

    r.intensity = suite.intensity(r.depth.features, current, frame);
    detail::requireMapShape(r.intensity.intensity, w, h, "intensity predictor", "intensity");
    detail::requireFeatureShape(r.intensity.features, w, h, "intensity predictor");
    for (std::size_t i = 0; i < r.intensity.intensity.size(); ++i) {
        r.intensity.intensity[i] *= r.depth.mask[i];
    }

    r.raw = suite.regressor(
        RegressorInput{r.depthMap, r.intensity.intensity, r.intensity.features, current});
    if (!r.raw.rotation.hasShape(h, w, 4) || !r.raw.scale.hasShape(h, w, 3)) {
        throw ShapeError("regressor: raw maps have shapes " + r.raw.rotation.shapeString() +
                         " and " + r.raw.scale.shapeString() + ", expected (H, W, 4) and (H, W, 3)");
    }
    detail::requireMapShape(r.raw.opacity, w, h, "regressor", "opacity");
    r.raw.depth = r.depthMap;
    r.raw.intensity = r.intensity.intensity;
    r.raw.mask = r.depth.mask;
    r.activated = activateParameterMaps(r.raw);
    r.cloud = mapsToCloud(r.activated, cam, maskThreshold);
    return r;
}

/// Constant raw outputs of the oracle regressor.
struct OracleRegressorConfig {
    double footprint = 1.5;                  ///< world scale = footprint · depth / fx
    double rawOpacity = std::log(0.9 / 0.1); ///< logit(0.9)
};

/// Ground-truth predictors: the depth stage returns the disparity that
/// depthFromDisparity maps back onto `gtDepth` (0 marks background), the
/// intensity stage passes `gtIntensity` through, and the regressor emits
/// identity rotations, pixel-footprint scales and a fixed opacity.
inline PredictorSuite makeOracleSuite(const Image &gtDepth, const Image &gtIntensity,
                                      const Intrinsics &intrinsics,
                                      double dMax = kDefaultDepthRange,
                                      const OracleRegressorConfig &cfg = {},
                                      int featureChannels = kDefaultFeatureChannels) {
    requireSameShape(gtDepth, gtIntensity, "makeOracleSuite");
    if (!(dMax > 0.0) || !(intrinsics.fx > 0.0) || !(cfg.footprint > 0.0)) {
        throw InvalidArgument("makeOracleSuite: D_max, fx and footprint must be positive");
    }
    const double upper = std::exp(dMax);
    Image disp(gtDepth.width(), gtDepth.height());
    Image mask(gtDepth.width(), gtDepth.height());
    for (int y = 0; y < gtDepth.height(); ++y) {
        for (int x = 0; x < gtDepth.width(); ++x) {
            const double d = gtDepth(x, y);
            if (!std::isfinite(d) || !std::isfinite(gtIntensity(x, y)) || d < 0.0) {
                throw InvalidArgument("makeOracleSuite: invalid ground truth at pixel (" +
                                      std::to_string(x) + ", " + std::to_string(y) + ")");
            }
            if (d == 0.0) {
                continue;
            }
            if (!(d > 1.0 && d < upper)) {
                throw InvalidArgument("makeOracleSuite: depth " + std::to_string(d) +
                                      " at pixel (" + std::to_string(x) + ", " +
                                      std::to_string(y) + ") lies outside (1, e^D_max)");
            }
            disp(x, y) = logit(std::log(d) / dMax);
            mask(x, y) = 1.0;
        }
    }
    const int w = gtDepth.width();
    const int h = gtDepth.height();
    const double fx = intrinsics.fx;

    PredictorSuite suite;
    suite.depth = [disp, mask, w, h, featureChannels](const VoxelGrid &, const VoxelGrid &) {
        return DepthPrediction{disp, mask, Tensor3(h, w, featureChannels)};
    };
    suite.intensity = [gtIntensity, w, h, featureChannels](const Tensor3 &, const VoxelGrid &,
                                                          const AccumFrame &) {
        return IntensityPrediction{gtIntensity, Tensor3(h, w, featureChannels)};
    };
    suite.regressor = [w, h, fx, cfg](const RegressorInput &in) {
        ParameterMaps out;
        out.rotation = Tensor3(h, w, 4);
        out.scale = Tensor3(h, w, 3);
        out.opacity = Image(w, h, cfg.rawOpacity);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                out.rotation(y, x, 0) = 1.0;
                const double s = std::log(cfg.footprint * in.depth(x, y) / fx);
                for (int c = 0; c < 3; ++c) {
                    out.scale(y, x, c) = s;
                }
            }
        }
        return out;
    };
    return suite;
}

/// Gradients of a scalar loss with respect to raw parameter maps.
struct RawMapGradients {
    Tensor3 rotation; ///< (H, W, 4)
    Tensor3 scale;    ///< (H, W, 3)
    Image opacity;
    Image depth;
    Image intensity;
};

/// Pulls per-primitive gradients of a cloud built by runCascade back onto the
/// raw maps: through mapsToCloud (unprojection, clamps) and the norm / exp /
/// sigmoid activations. The mask is treated as a constant gate.
inline RawMapGradients backpropToRawMaps(const GradientSet &grads, const ParameterMaps &raw,
                                         const CameraView &cam,
                                         double maskThreshold = kDefaultMaskThreshold) {
    validateParameterMaps(raw);
    const int w = raw.width();
    const int h = raw.height();
    const auto pixels = maskedPixels(raw.mask, maskThreshold);
    if (grads.size() != pixels.size()) {
        throw ShapeError("backpropToRawMaps: " + std::to_string(grads.size()) +
                         " gradients for " + std::to_string(pixels.size()) + " masked pixels");
    }
    RawMapGradients out{Tensor3(h, w, 4), Tensor3(h, w, 3), Image(w, h), Image(w, h), Image(w, h)};
    const Eigen::Matrix3d rot = cam.pose.topLeftCorner<3, 3>();
    const Intrinsics &k = cam.intrinsics;
    for (std::size_t n = 0; n < pixels.size(); ++n) {
        const PrimitiveGradient &g = grads[n];
        const int x = static_cast<int>(pixels[n] % static_cast<std::size_t>(w));
        const int y = static_cast<int>(pixels[n] / static_cast<std::size_t>(w));
        const double m = raw.mask(x, y);

        const Quaternion q(raw.rotation(y, x, 0), raw.rotation(y, x, 1), raw.rotation(y, x, 2),
                           raw.rotation(y, x, 3));
        const double norm = q.norm();
        if (norm > 0.0) {
            const Quaternion qHat = q / norm;
            const Quaternion gq = (g.rotation - qHat * qHat.dot(g.rotation)) / norm;
            for (int c = 0; c < 4; ++c) {
                out.rotation(y, x, c) = gq[c];
            }
        }
        for (int c = 0; c < 3; ++c) {
            out.scale(y, x, c) = g.scale[c] * m * std::exp(raw.scale(y, x, c));
        }
        const double sig = sigmoid(raw.opacity(x, y));
        const double o = m * sig;
        if (o > kOpacityMargin && o < 1.0 - kOpacityMargin) {
            out.opacity(x, y) = g.opacity * m * sig * (1.0 - sig);
        }
        const double i = raw.intensity(x, y);
        if (i >= 0.0 && i <= 1.0) {
            out.intensity(x, y) = g.intensity;
        }
        const Eigen::Vector3d ray((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
        out.depth(x, y) = g.mean.dot(rot * ray);
    }
    return out;
}

/// Per-pixel linear (1×1) Gaussian regressor. Each pixel's input vector is
/// [D_pred, I_pred, E_k(0..B-1), F_I(0..K_I-1)]; the 8 outputs split into raw
/// rotation (4), scale (3) and opacity (1).
class LinearPixelRegressor {
  public:
    static constexpr int kOutputs = 8;
    using Weights = Eigen::Matrix<double, kOutputs, Eigen::Dynamic>;
    using Bias = Eigen::Matrix<double, kOutputs, 1>;

    LinearPixelRegressor(int bins = kDefaultVoxelBins, int featureChannels = kDefaultFeatureChannels)
        : bins_(bins), features_(featureChannels) {
        if (bins < 1 || featureChannels < 0) {
            throw InvalidArgument("LinearPixelRegressor: bins must be >= 1, features >= 0");
        }
        weights_ = Weights::Zero(kOutputs, inputSize());
        bias_ = Bias::Zero();
    }

    int bins() const { return bins_; }
    int featureChannels() const { return features_; }
    int inputSize() const { return 2 + bins_ + features_; }

    Weights &weights() { return weights_; }
    const Weights &weights() const { return weights_; }
    Bias &bias() { return bias_; }
    const Bias &bias() const { return bias_; }

    /// Input vector of one pixel.
    Eigen::VectorXd pixelInput(const RegressorInput &in, int x, int y) const {
        Eigen::VectorXd v(inputSize());
        v[0] = in.depth(x, y);
        v[1] = in.intensity(x, y);
        for (int b = 0; b < bins_; ++b) {
            v[2 + b] = in.voxels.data(b, y, x);
        }
        for (int c = 0; c < features_; ++c) {
            v[2 + bins_ + c] = in.features(y, x, c);
        }
        return v;
    }

    ParameterMaps forward(const RegressorInput &in) const {
        checkInput(in);
        const int w = in.depth.width();
        const int h = in.depth.height();
        ParameterMaps out;
        out.rotation = Tensor3(h, w, 4);
        out.scale = Tensor3(h, w, 3);
        out.opacity = Image(w, h);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const Bias o = weights_ * pixelInput(in, x, y) + bias_;
                for (int c = 0; c < 4; ++c) {
                    out.rotation(y, x, c) = o[c];
                }
                for (int c = 0; c < 3; ++c) {
                    out.scale(y, x, c) = o[4 + c];
                }
                out.opacity(x, y) = o[7];
            }
        }
        return out;
    }

    struct Gradient {
        Weights weights;
        Bias bias;
        Tensor3 input; ///< (H, W, inputSize), d loss / d pixel input
    };

    Gradient backward(const RegressorInput &in, const RawMapGradients &upstream) const {
        checkInput(in);
        const int w = in.depth.width();
        const int h = in.depth.height();
        if (!upstream.rotation.hasShape(h, w, 4) || !upstream.scale.hasShape(h, w, 3) ||
            upstream.opacity.width() != w || upstream.opacity.height() != h) {
            throw ShapeError("LinearPixelRegressor::backward: upstream gradient shape mismatch");
        }
        Gradient g{Weights::Zero(kOutputs, inputSize()), Bias::Zero(), Tensor3(h, w, inputSize())};
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                Bias go;
                for (int c = 0; c < 4; ++c) {
                    go[c] = upstream.rotation(y, x, c);
                }
                for (int c = 0; c < 3; ++c) {
                    go[4 + c] = upstream.scale(y, x, c);
                }
                go[7] = upstream.opacity(x, y);
                g.weights += go * pixelInput(in, x, y).transpose();
                g.bias += go;
                const Eigen::VectorXd gi = weights_.transpose() * go;
                for (int c = 0; c < inputSize(); ++c) {
                    g.input(y, x, c) = gi[c];
                }
            }
        }
        return g;
    }

    std::function<ParameterMaps(const RegressorInput &)> asPredictor() const {
        return [self = *this](const RegressorInput &in) { return self.forward(in); };
    }

  private:
    void checkInput(const RegressorInput &in) const {
        const int w = in.depth.width();
        const int h = in.depth.height();
        requireSameShape(in.depth, in.intensity, "LinearPixelRegressor");
        if (!in.voxels.data.hasShape(bins_, h, w)) {
            throw ShapeError("LinearPixelRegressor: voxel grid has shape " +
                             in.voxels.data.shapeString() + ", expected (" +
                             std::to_string(bins_) + ", H, W)");
        }
        if (!in.features.hasShape(h, w, features_)) {
            throw ShapeError("LinearPixelRegressor: feature volume has shape " +
                             in.features.shapeString() + ", expected (H, W, " +
                             std::to_string(features_) + ")");
        }
    }

    int bins_;
    int features_;
    Weights weights_;
    Bias bias_;
};

/// Suite whose regressor is `regressor` and whose depth and intensity stages
/// come from `base` (typically the oracle suite).
inline PredictorSuite withRegressor(PredictorSuite base, const LinearPixelRegressor &regressor) {
    base.regressor = regressor.asPredictor();
    return base;
}

} // namespace evgs
