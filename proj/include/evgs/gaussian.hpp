// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evgs/camera.hpp"
#include "evgs/error.hpp"
#include "evgs/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace evgs {

/// Quaternion stored as (w, x, y, z).
using Quaternion = Eigen::Vector4d;

inline Quaternion identityQuaternion() { return Quaternion(1.0, 0.0, 0.0, 0.0); }

/// A grayscale 3D Gaussian: scalar intensity replaces view-dependent color.
struct GaussianPrimitive {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Quaternion rotation = identityQuaternion();
    Eigen::Vector3d scale = Eigen::Vector3d::Ones();
    double opacity = 0.5;
    double intensity = 0.5;
};

using GaussianCloud = std::vector<GaussianPrimitive>;

inline void validatePrimitive(const GaussianPrimitive &g) {
    if (!g.mean.allFinite()) {
        throw InvalidArgument("gaussian mean is not finite");
    }
    if (std::abs(g.rotation.norm() - 1.0) > 1e-9) {
        throw InvalidArgument("gaussian rotation is not a unit quaternion");
    }
    if (!(g.scale.minCoeff() > 0.0) || !g.scale.allFinite()) {
        throw InvalidArgument("gaussian scale must be positive");
    }
    if (!(g.opacity > 0.0 && g.opacity < 1.0)) {
        throw InvalidArgument("gaussian opacity must lie in (0, 1)");
    }
    if (!(g.intensity >= 0.0 && g.intensity <= 1.0)) {
        throw InvalidArgument("gaussian intensity must lie in [0, 1]");
    }
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
inline Eigen::Matrix3d rotationMatrix(const Quaternion &q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y), //
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),   //
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

/// Gradient of sum(G .* R(q)) with respect to the four entries of q, treating
/// rotationMatrix() as a polynomial in (w, x, y, z).
inline Quaternion rotationMatrixVjp(const Quaternion &q, const Eigen::Matrix3d &g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Quaternion out;
    out[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) +
                    x * g(2, 1));
    out[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) +
                    z * g(2, 0) + w * g(2, 1) - 2.0 * x * g(2, 2));
    out[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                    w * g(2, 0) + z * g(2, 1) - 2.0 * y * g(2, 2));
    out[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) -
                    2.0 * z * g(1, 1) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return out;
}

/// Σ = R S Sᵀ Rᵀ for a unit quaternion and positive per-axis scales.
inline Eigen::Matrix3d buildCovariance(const Quaternion &q, const Eigen::Vector3d &s) {
    if (std::abs(q.norm() - 1.0) > 1e-6) {
        throw InvalidArgument("buildCovariance: quaternion norm " + std::to_string(q.norm()) +
                              " is not 1; activate the rotation first");
    }
    if (!(s.minCoeff() > 0.0)) {
        throw InvalidArgument("buildCovariance: scales must be positive");
    }
    const Eigen::Matrix3d r = rotationMatrix(q);
    const Eigen::Matrix3d m = r * s.asDiagonal();
    return m * m.transpose();
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Per-pixel Gaussian parameter maps on a source view.
///
/// `rotation` (H, W, 4), `scale` (H, W, 3) and `opacity` hold either raw
/// regressor outputs or activated values depending on the producing stage.
/// `depth`, `intensity` and `mask` are already in their final ranges.
struct ParameterMaps {
    Tensor3 rotation;
    Tensor3 scale;
    Image opacity;
    Image depth;
    Image intensity;
    Image mask;

    int width() const { return mask.width(); }
    int height() const { return mask.height(); }
};

inline void validateParameterMaps(const ParameterMaps &maps) {
    const int w = maps.width();
    const int h = maps.height();
    if (!maps.rotation.hasShape(h, w, 4)) {
        throw ShapeError("rotation map has shape " + maps.rotation.shapeString() +
                         ", expected (H, W, 4)");
    }
    if (!maps.scale.hasShape(h, w, 3)) {
        throw ShapeError("scale map has shape " + maps.scale.shapeString() +
                         ", expected (H, W, 3)");
    }
    requireSameShape(maps.opacity, maps.mask, "opacity map");
    requireSameShape(maps.depth, maps.mask, "depth map");
    requireSameShape(maps.intensity, maps.mask, "intensity map");
    auto finite = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    if (!finite(maps.rotation.values()) || !finite(maps.scale.values()) ||
        !finite(maps.opacity.values()) || !finite(maps.intensity.values())) {
        throw InvalidArgument("parameter maps contain non-finite values");
    }
    for (double m : maps.mask.values()) {
        if (!(m >= 0.0 && m <= 1.0)) {
            throw InvalidArgument("mask values must lie in [0, 1]");
        }
    }
}

/// Normalizes a raw quaternion; a zero vector maps to the identity rotation.
inline Quaternion normalizeQuaternion(const Quaternion &raw) {
    const double n = raw.norm();
    if (!(n > 0.0)) {
        return identityQuaternion();
    }
    return raw / n;
}

/// Applies norm / exp / sigmoid to the raw rotation, scale and opacity maps
/// and multiplies each result by the soft foreground mask.
inline ParameterMaps activateParameterMaps(const ParameterMaps &raw) {
    validateParameterMaps(raw);
    ParameterMaps out = raw;
    for (int y = 0; y < raw.height(); ++y) {
        for (int x = 0; x < raw.width(); ++x) {
            const double m = raw.mask(x, y);
            const Quaternion q = normalizeQuaternion(
                Quaternion(raw.rotation(y, x, 0), raw.rotation(y, x, 1), raw.rotation(y, x, 2),
                           raw.rotation(y, x, 3)));
            for (int c = 0; c < 4; ++c) {
                out.rotation(y, x, c) = m * q[c];
            }
            for (int c = 0; c < 3; ++c) {
                out.scale(y, x, c) = m * std::exp(raw.scale(y, x, c));
            }
            out.opacity(x, y) = m * sigmoid(raw.opacity(x, y));
        }
    }
    return out;
}

inline constexpr double kDefaultMaskThreshold = 0.5;

/// Opacity is kept strictly inside (0, 1) by this margin.
inline constexpr double kOpacityMargin = 1e-9;

/// Row-major linear indices of pixels whose mask exceeds `threshold`.
inline std::vector<std::size_t> maskedPixels(const Image &mask,
                                             double threshold = kDefaultMaskThreshold) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] > threshold) {
            out.push_back(i);
        }
    }
    return out;
}

/// Emits one primitive per masked-in pixel of activated maps, in row-major
/// pixel order, with the mean unprojected from that pixel's depth.
inline GaussianCloud mapsToCloud(const ParameterMaps &maps, const CameraView &cam,
                                 double maskThreshold = kDefaultMaskThreshold) {
    validateParameterMaps(maps);
    if (maps.width() != cam.width || maps.height() != cam.height) {
        throw ShapeError("mapsToCloud: parameter maps do not match the camera resolution");
    }
    GaussianCloud cloud;
    for (std::size_t idx : maskedPixels(maps.mask, maskThreshold)) {
        const int x = static_cast<int>(idx % static_cast<std::size_t>(maps.width()));
        const int y = static_cast<int>(idx / static_cast<std::size_t>(maps.width()));
        const double d = maps.depth(x, y);
        if (!(d > 0.0)) {
            throw InvalidArgument("mapsToCloud: masked-in pixel (" + std::to_string(x) + ", " +
                                  std::to_string(y) + ") has non-positive depth " +
                                  std::to_string(d));
        }
        GaussianPrimitive g;
        g.mean = unprojectPixel(static_cast<double>(x), static_cast<double>(y), d, cam);
        g.rotation = normalizeQuaternion(Quaternion(maps.rotation(y, x, 0), maps.rotation(y, x, 1),
                                                    maps.rotation(y, x, 2),
                                                    maps.rotation(y, x, 3)));
        g.scale = Eigen::Vector3d(maps.scale(y, x, 0), maps.scale(y, x, 1), maps.scale(y, x, 2));
        g.opacity = std::clamp(maps.opacity(x, y), kOpacityMargin, 1.0 - kOpacityMargin);
        g.intensity = std::clamp(maps.intensity(x, y), 0.0, 1.0);
        cloud.push_back(g);
    }
    return cloud;
}

} // namespace evgs
