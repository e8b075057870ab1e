// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evgs/camera.hpp"
#include "evgs/error.hpp"
#include "evgs/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

namespace evgs {

/// Textured, Lambertian-shaded ellipsoid.
struct Ellipsoid {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    Eigen::Vector3d radii = Eigen::Vector3d::Ones();
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity(); ///< local-to-world
    double albedo = 0.8;
    double stripes = 4.0; ///< texture frequency in radians per scene unit
};

struct SyntheticScene {
    std::vector<Ellipsoid> shapes;
    Eigen::Vector3d light = Eigen::Vector3d(-0.4, -0.7, -0.6).normalized(); ///< toward the light
    double ambient = 0.3;
};

/// Ground-truth images of one view. Background pixels have depth 0,
/// intensity 0 and mask 0.
struct AnalyticView {
    Image intensity;
    Image depth;
    Image mask;
};

namespace detail {

struct SurfaceHit {
    double t;
    std::size_t shape;
};

inline std::optional<double> intersectEllipsoid(const Ellipsoid &e, const Eigen::Vector3d &origin,
                                                const Eigen::Vector3d &dir) {
    const Eigen::Matrix3d rt = e.rotation.transpose();
    const Eigen::Vector3d o = (rt * (origin - e.center)).cwiseQuotient(e.radii);
    const Eigen::Vector3d d = (rt * dir).cwiseQuotient(e.radii);
    const double a = d.squaredNorm();
    const double b = o.dot(d);
    const double c = o.squaredNorm() - 1.0;
    const double disc = b * b - a * c;
    if (disc < 0.0) {
        return std::nullopt;
    }
    const double root = std::sqrt(disc);
    const double t0 = (-b - root) / a;
    if (t0 > 0.0) {
        return t0;
    }
    const double t1 = (-b + root) / a;
    if (t1 > 0.0) {
        return t1;
    }
    return std::nullopt;
}

inline double surfaceShade(const SyntheticScene &scene, const Ellipsoid &e,
                           const Eigen::Vector3d &p) {
    const Eigen::Vector3d local = e.rotation.transpose() * (p - e.center);
    const Eigen::Vector3d n =
        (e.rotation * local.cwiseQuotient(e.radii.cwiseProduct(e.radii))).normalized();
    const double lambert = std::max(0.0, n.dot(scene.light));
    const double texture = 0.75 + 0.25 * std::sin(e.stripes * local.x()) *
                                      std::cos(e.stripes * local.y() + 0.5 * local.z());
    return e.albedo * (scene.ambient + (1.0 - scene.ambient) * lambert) * texture;
}

} // namespace detail

/// Ray casts the scene through every pixel center.
inline AnalyticView renderAnalytic(const SyntheticScene &scene, const CameraView &cam) {
    validateCamera(cam);
    AnalyticView out{Image(cam.width, cam.height), Image(cam.width, cam.height),
                     Image(cam.width, cam.height)};
    const Eigen::Matrix3d rot = cam.pose.topLeftCorner<3, 3>();
    const Eigen::Vector3d origin = cam.pose.topRightCorner<3, 1>();
    const Intrinsics &k = cam.intrinsics;
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            // Camera-space ray with unit z, so the hit parameter is the depth.
            const Eigen::Vector3d ray((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
            const Eigen::Vector3d dir = rot * ray;
            double best = std::numeric_limits<double>::infinity();
            std::size_t shape = 0;
            for (std::size_t s = 0; s < scene.shapes.size(); ++s) {
                const auto t = detail::intersectEllipsoid(scene.shapes[s], origin, dir);
                if (t && *t < best) {
                    best = *t;
                    shape = s;
                }
            }
            if (!std::isfinite(best)) {
                continue;
            }
            const Eigen::Vector3d p = unprojectPixel(x, y, best, cam);
            out.depth(x, y) = best;
            out.mask(x, y) = 1.0;
            out.intensity(x, y) = detail::surfaceShade(scene, scene.shapes[shape], p);
        }
    }
    return out;
}

/// Signed implicit value of the closest shape at world point p: zero on a surface.
inline double implicitDistance(const SyntheticScene &scene, const Eigen::Vector3d &p) {
    double best = std::numeric_limits<double>::infinity();
    for (const Ellipsoid &e : scene.shapes) {
        const Eigen::Vector3d local = (e.rotation.transpose() * (p - e.center)).cwiseQuotient(e.radii);
        const double v = local.norm() - 1.0;
        if (std::abs(v) < std::abs(best)) {
            best = v;
        }
    }
    return best;
}

/// Camera on a horizontal circle of `radius` around the origin, raised by
/// `elevation`, looking at the origin.
inline CameraView orbitCamera(const Intrinsics &k, int width, int height, double angle,
                              double radius = 4.0, double elevation = 0.8) {
    CameraView cam;
    cam.intrinsics = k;
    cam.width = width;
    cam.height = height;
    const Eigen::Vector3d eye(radius * std::sin(angle), -elevation, -radius * std::cos(angle));
    cam.pose = lookAtPose(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d(0.0, -1.0, 0.0));
    return cam;
}

/// Intrinsics with a horizontal field of view of about 53 degrees.
inline Intrinsics defaultIntrinsics(int width, int height) {
    return {1.0 * width, 1.0 * width, (width - 1) / 2.0, (height - 1) / 2.0};
}

inline constexpr int kSyntheticSceneCount = 3;

/// Built-in scenes; every surface seen from orbitCamera at the default radius
/// has depth inside (1, e^2).
inline SyntheticScene makeSyntheticScene(int variant) {
    SyntheticScene s;
    auto yaw = [](double a) {
        return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()).toRotationMatrix();
    };
    switch (variant) {
    case 0: // single sphere
        s.shapes.push_back({Eigen::Vector3d::Zero(), Eigen::Vector3d::Constant(1.0),
                            Eigen::Matrix3d::Identity(), 0.85, 5.0});
        break;
    case 1: // tilted ellipsoid
        s.shapes.push_back({Eigen::Vector3d(0.0, 0.1, 0.0), Eigen::Vector3d(1.3, 0.7, 0.9),
                            yaw(0.6) * Eigen::AngleAxisd(0.4, Eigen::Vector3d::UnitZ()).toRotationMatrix(),
                            0.9, 3.0});
        break;
    case 2: // two overlapping blobs
        s.shapes.push_back({Eigen::Vector3d(-0.5, 0.2, 0.1), Eigen::Vector3d(0.8, 0.8, 0.8),
                            Eigen::Matrix3d::Identity(), 0.7, 6.0});
        s.shapes.push_back({Eigen::Vector3d(0.6, -0.3, -0.2), Eigen::Vector3d(0.5, 0.9, 0.6),
                            yaw(-0.8), 0.95, 4.0});
        break;
    default:
        throw InvalidArgument("makeSyntheticScene: unknown variant " + std::to_string(variant));
    }
    return s;
}

} // namespace evgs
