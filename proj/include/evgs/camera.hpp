// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evgs/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>

namespace evgs {

/// Pinhole intrinsics in pixels, zero skew.
struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;

    Eigen::Matrix3d matrix() const {
        Eigen::Matrix3d k;
        k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
        return k;
    }
};

inline constexpr double kDefaultZNear = 0.01;

/// A posed pinhole camera. `pose` maps camera coordinates to world
/// coordinates; pixel centers sit at integer coordinates.
struct CameraView {
    Intrinsics intrinsics;
    Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
    int width = 1;
    int height = 1;
    double zNear = kDefaultZNear;
};

/// Projection of a world point: pixel coordinates plus camera-space depth.
struct PixelProjection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
};

namespace detail {

inline bool isRigid(const Eigen::Matrix4d &m, double tol = 1e-9) {
    const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
    const double orthoErr = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    const bool lastRow = m(3, 0) == 0.0 && m(3, 1) == 0.0 && m(3, 2) == 0.0 && m(3, 3) == 1.0;
    return m.allFinite() && lastRow && orthoErr < tol && std::abs(r.determinant() - 1.0) < tol;
}

} // namespace detail

inline void validateCamera(const CameraView &cam) {
    const Intrinsics &k = cam.intrinsics;
    if (!(k.fx > 0.0) || !(k.fy > 0.0) || !std::isfinite(k.cx) || !std::isfinite(k.cy)) {
        throw InvalidArgument("camera intrinsics need fx, fy > 0 and a finite principal point");
    }
    if (cam.width <= 0 || cam.height <= 0) {
        throw InvalidArgument("camera resolution must be positive");
    }
    if (!(cam.zNear > 0.0)) {
        throw InvalidArgument("camera z_near must be positive");
    }
    if (!detail::isRigid(cam.pose)) {
        throw InvalidArgument("camera pose is not a rigid transform");
    }
}

/// World-to-camera transform W = P^-1, computed as the rigid inverse.
inline Eigen::Matrix4d viewTransform(const Eigen::Matrix4d &pose) {
    if (!detail::isRigid(pose)) {
        throw InvalidArgument("viewTransform: pose is not a rigid transform");
    }
    const Eigen::Matrix3d rt = pose.topLeftCorner<3, 3>().transpose();
    Eigen::Matrix4d w = Eigen::Matrix4d::Identity();
    w.topLeftCorner<3, 3>() = rt;
    w.topRightCorner<3, 1>() = -rt * pose.topRightCorner<3, 1>();
    return w;
}

inline Eigen::Matrix4d viewTransform(const CameraView &cam) { return viewTransform(cam.pose); }

inline Eigen::Vector3d worldToCamera(const Eigen::Matrix4d &view, const Eigen::Vector3d &p) {
    return view.topLeftCorner<3, 3>() * p + view.topRightCorner<3, 1>();
}

/// Projects a camera-space point; std::nullopt when z <= z_near.
inline std::optional<PixelProjection> projectCameraPoint(const Eigen::Vector3d &pCam,
                                                         const Intrinsics &k, double zNear) {
    if (!(pCam.z() > zNear)) {
        return std::nullopt;
    }
    return PixelProjection{k.fx * pCam.x() / pCam.z() + k.cx, k.fy * pCam.y() / pCam.z() + k.cy,
                           pCam.z()};
}

inline std::optional<PixelProjection> tryProjectPoint(const Eigen::Vector3d &pWorld,
                                                      const CameraView &cam) {
    return projectCameraPoint(worldToCamera(viewTransform(cam), pWorld), cam.intrinsics,
                              cam.zNear);
}

/// Throws NearPlaneError when the point is at or behind the near plane.
inline PixelProjection projectPoint(const Eigen::Vector3d &pWorld, const CameraView &cam) {
    const Eigen::Vector3d pCam = worldToCamera(viewTransform(cam), pWorld);
    auto proj = projectCameraPoint(pCam, cam.intrinsics, cam.zNear);
    if (!proj) {
        throw NearPlaneError("point at camera depth " + std::to_string(pCam.z()) +
                             " is behind the near plane " + std::to_string(cam.zNear));
    }
    return *proj;
}

/// Camera-space point ((u-cx)/fx d, (v-cy)/fy d, d) mapped through the pose.
inline Eigen::Vector3d unprojectPixel(double u, double v, double depth, const CameraView &cam) {
    if (!(depth > 0.0)) {
        throw InvalidArgument("unprojectPixel needs a positive depth, got " +
                              std::to_string(depth));
    }
    const Intrinsics &k = cam.intrinsics;
    const Eigen::Vector3d pCam((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
    return cam.pose.topLeftCorner<3, 3>() * pCam + cam.pose.topRightCorner<3, 1>();
}

/// d(u, v)/d(x, y, z) of the pinhole projection at a camera-space point.
inline Eigen::Matrix<double, 2, 3> projectionJacobian(const Eigen::Vector3d &pCam,
                                                      const Intrinsics &k,
                                                      double zNear = kDefaultZNear) {
    const double z = pCam.z();
    if (!(z > zNear)) {
        throw NearPlaneError("projectionJacobian: point is behind the near plane");
    }
    const double invZ = 1.0 / z;
    const double invZ2 = invZ * invZ;
    Eigen::Matrix<double, 2, 3> j;
    j << k.fx * invZ, 0.0, -k.fx * pCam.x() * invZ2, //
        0.0, k.fy * invZ, -k.fy * pCam.y() * invZ2;
    return j;
}

/// Camera pose looking from `eye` toward `target`, +y of the image pointing
/// along -`up` (image rows grow downward).
inline Eigen::Matrix4d lookAtPose(const Eigen::Vector3d &eye, const Eigen::Vector3d &target,
                                  const Eigen::Vector3d &up = Eigen::Vector3d::UnitY()) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
    pose.block<3, 1>(0, 0) = right;
    pose.block<3, 1>(0, 1) = down;
    pose.block<3, 1>(0, 2) = forward;
    pose.block<3, 1>(0, 3) = eye;
    return pose;
}

} // namespace evgs
