// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evgs/camera.hpp"
#include "evgs/error.hpp"
#include "evgs/gaussian.hpp"
#include "evgs/parallel.hpp"
#include "evgs/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

namespace evgs {

struct RasterConfig {
    double lowPass = 0.3;           ///< px², added to the 2D covariance diagonal
    double alphaMax = 0.99;         ///< per-splat opacity clamp
    double transmittanceMin = 1e-4; ///< compositing stops once T drops below this
    /// A splat is ignored at pixels where o * G would fall below this value.
    /// This bounds every splat's screen support; it is small enough that the
    /// cut is invisible to finite-difference gradient checks.
    double alphaMin = 1e-12;
    int tileSize = 16;
    int threads = 1; ///< 0 = one per hardware thread; results never depend on it
};

/// A primitive after screen-space projection.
struct Projected2D {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Identity(); ///< includes the low-pass floor
    double depth = 0.0;
    double opacity = 0.0;
    double intensity = 0.0;
    int source = -1;
    /// Largest squared Mahalanobis distance at which the splat contributes.
    double cutoff = 0.0;
    /// Inclusive pixel bounds of the support ellipse, clipped to the image.
    int xMin = 0, xMax = -1, yMin = 0, yMax = -1;
};

struct RenderOutput {
    Image image;
    Image transmittance;
    Grid<int> contributors;
};

/// d(loss)/d(parameter) for one primitive.
struct PrimitiveGradient {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Quaternion rotation = Quaternion::Zero();
    Eigen::Vector3d scale = Eigen::Vector3d::Zero();
    double opacity = 0.0;
    double intensity = 0.0;
};

using GradientSet = std::vector<PrimitiveGradient>;

namespace detail {

/// World-to-screen quantities shared by projection and its adjoint.
struct ProjectionTerms {
    Eigen::Matrix3d viewRot;
    Eigen::Vector3d tCam;
    Eigen::Matrix3d rot;
    Eigen::Matrix3d covCam; ///< V Σ Vᵀ
    Eigen::Matrix<double, 2, 3> jac;
    Eigen::Matrix2d cov2d; ///< J V Σ Vᵀ Jᵀ, before the low-pass floor
};

inline std::optional<ProjectionTerms> projectionTerms(const GaussianPrimitive &g,
                                                      const Eigen::Matrix4d &view,
                                                      const CameraView &cam) {
    ProjectionTerms t;
    t.viewRot = view.topLeftCorner<3, 3>();
    t.tCam = t.viewRot * g.mean + view.topRightCorner<3, 1>();
    if (!(t.tCam.z() > cam.zNear)) {
        return std::nullopt;
    }
    t.rot = rotationMatrix(normalizeQuaternion(g.rotation));
    const Eigen::Matrix3d rs = t.rot * g.scale.asDiagonal();
    const Eigen::Matrix3d sigma = rs * rs.transpose();
    t.covCam = t.viewRot * sigma * t.viewRot.transpose();
    t.jac = projectionJacobian(t.tCam, cam.intrinsics, cam.zNear);
    t.cov2d = t.jac * t.covCam * t.jac.transpose();
    return t;
}

/// Flattened splat used by the compositing loops.
struct Splat {
    double mx, my;
    double ca, cb, cc; ///< inverse covariance [[ca, cb], [cb, cc]]
    double opacity, intensity;
    double cutoff;
    int xMin, xMax, yMin, yMax;
};

inline double mahalanobis2(const Splat &s, double px, double py) {
    const double dx = px - s.mx;
    const double dy = py - s.my;
    return s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy;
}

inline Splat toSplat(const Projected2D &p) {
    const Eigen::Matrix2d inv = p.cov.inverse();
    return {p.mean.x(), p.mean.y(), inv(0, 0), 0.5 * (inv(0, 1) + inv(1, 0)), inv(1, 1),
            p.opacity,  p.intensity, p.cutoff, p.xMin, p.xMax, p.yMin, p.yMax};
}

} // namespace detail

/// Projects one primitive to screen space: mean through the pinhole model and
/// covariance Σ' = J W Σ Wᵀ Jᵀ plus the low-pass floor. Returns std::nullopt
/// when the primitive is behind the near plane or its support misses the image.
inline std::optional<Projected2D> projectGaussian2D(const GaussianPrimitive &g,
                                                    const CameraView &cam,
                                                    const RasterConfig &cfg = {}) {
    const Eigen::Matrix4d view = viewTransform(cam);
    const auto terms = detail::projectionTerms(g, view, cam);
    if (!terms || !(g.opacity > cfg.alphaMin)) {
        return std::nullopt;
    }
    Projected2D p;
    const Intrinsics &k = cam.intrinsics;
    p.mean = Eigen::Vector2d(k.fx * terms->tCam.x() / terms->tCam.z() + k.cx,
                             k.fy * terms->tCam.y() / terms->tCam.z() + k.cy);
    p.cov = terms->cov2d + cfg.lowPass * Eigen::Matrix2d::Identity();
    p.depth = terms->tCam.z();
    p.opacity = g.opacity;
    p.intensity = g.intensity;
    p.cutoff = 2.0 * std::log(g.opacity / cfg.alphaMin);

    // Support bounds, widened slightly so rounding in the per-pixel
    // Mahalanobis test can never admit a pixel outside them.
    const double hx = std::sqrt(p.cutoff * p.cov(0, 0)) * (1.0 + 1e-9) + 1e-6;
    const double hy = std::sqrt(p.cutoff * p.cov(1, 1)) * (1.0 + 1e-9) + 1e-6;
    const double x0 = std::ceil(p.mean.x() - hx);
    const double x1 = std::floor(p.mean.x() + hx);
    const double y0 = std::ceil(p.mean.y() - hy);
    const double y1 = std::floor(p.mean.y() + hy);
    if (!(x1 >= 0.0 && y1 >= 0.0 && x0 <= cam.width - 1.0 && y0 <= cam.height - 1.0)) {
        return std::nullopt;
    }
    p.xMin = static_cast<int>(std::max(x0, 0.0));
    p.xMax = static_cast<int>(std::min(x1, cam.width - 1.0));
    p.yMin = static_cast<int>(std::max(y0, 0.0));
    p.yMax = static_cast<int>(std::min(y1, cam.height - 1.0));
    return p;
}

/// α(x) = min(o exp(-½ (x-μ')ᵀ Σ'⁻¹ (x-μ')), α_max).
inline double evaluateAlpha(const Projected2D &p, const Eigen::Vector2d &x,
                            double alphaMax = RasterConfig{}.alphaMax) {
    const double det = p.cov.determinant();
    if (!(det > 0.0)) {
        throw InvalidArgument("evaluateAlpha: singular 2D covariance");
    }
    const Eigen::Vector2d d = x - p.mean;
    const double q = d.dot(p.cov.inverse() * d);
    return std::min(p.opacity * std::exp(-0.5 * q), alphaMax);
}

namespace detail {

/// Visible splats in front-to-back compositing order (depth, then index).
struct SortedSplats {
    std::vector<Projected2D> projected;
    std::vector<Splat> splats;
};

inline SortedSplats projectAndSort(const GaussianCloud &cloud, const CameraView &cam,
                                   const RasterConfig &cfg) {
    validateCamera(cam);
    std::vector<std::optional<Projected2D>> slots(cloud.size());
    parallelFor(static_cast<int>(cloud.size()), cfg.threads, [&](int i) {
        slots[static_cast<std::size_t>(i)] = projectGaussian2D(cloud[static_cast<std::size_t>(i)], cam, cfg);
    });
    SortedSplats out;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i]) {
            slots[i]->source = static_cast<int>(i);
            out.projected.push_back(*slots[i]);
        }
    }
    std::sort(out.projected.begin(), out.projected.end(),
              [](const Projected2D &a, const Projected2D &b) {
                  return a.depth != b.depth ? a.depth < b.depth : a.source < b.source;
              });
    out.splats.reserve(out.projected.size());
    for (const Projected2D &p : out.projected) {
        out.splats.push_back(toSplat(p));
    }
    return out;
}

/// Per-tile lists of sorted-splat positions in compositing order (CSR layout).
struct TileBins {
    int tilesX = 0, tilesY = 0;
    std::vector<std::size_t> offsets;
    std::vector<int> entries;

    int tileCount() const { return tilesX * tilesY; }
};

inline TileBins binTiles(const SortedSplats &sorted, const CameraView &cam, int tileSize) {
    if (tileSize <= 0) {
        throw InvalidArgument("tile size must be positive");
    }
    TileBins bins;
    bins.tilesX = (cam.width + tileSize - 1) / tileSize;
    bins.tilesY = (cam.height + tileSize - 1) / tileSize;
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins.tileCount()) + 1, 0);
    auto forEachTile = [&](const Projected2D &p, auto &&fn) {
        for (int ty = p.yMin / tileSize; ty <= p.yMax / tileSize; ++ty) {
            for (int tx = p.xMin / tileSize; tx <= p.xMax / tileSize; ++tx) {
                fn(static_cast<std::size_t>(ty * bins.tilesX + tx));
            }
        }
    };
    for (const Projected2D &p : sorted.projected) {
        forEachTile(p, [&](std::size_t t) { ++counts[t + 1]; });
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    bins.offsets = counts;
    bins.entries.resize(bins.offsets.back());
    std::vector<std::size_t> cursor(bins.offsets.begin(), bins.offsets.end() - 1);
    for (std::size_t i = 0; i < sorted.projected.size(); ++i) {
        forEachTile(sorted.projected[i],
                    [&](std::size_t t) { bins.entries[cursor[t]++] = static_cast<int>(i); });
    }
    return bins;
}

/// Composites one pixel over `list` (splats already in compositing order).
/// `onContribution(position, alpha, gaussian, transmittanceBefore)` is called
/// for every contributing splat. Returns (color, final T, contributor count)
/// where color excludes the background term.
template <typename OnContribution>
inline void compositePixel(const Splat *list, std::size_t count, double px, double py,
                           const RasterConfig &cfg, double &color, double &transmittance,
                           int &contributors, OnContribution &&onContribution) {
    double c = 0.0;
    double t = 1.0;
    int n = 0;
    for (std::size_t j = 0; j < count; ++j) {
        const Splat &s = list[j];
        if (px < s.xMin || px > s.xMax || py < s.yMin || py > s.yMax) {
            continue;
        }
        const double q = mahalanobis2(s, px, py);
        if (q > s.cutoff) {
            continue;
        }
        const double gauss = std::exp(-0.5 * q);
        const double alpha = std::min(s.opacity * gauss, cfg.alphaMax);
        onContribution(j, alpha, gauss, t);
        c += s.intensity * alpha * t;
        t *= 1.0 - alpha;
        ++n;
        if (t < cfg.transmittanceMin) {
            break;
        }
    }
    color = c;
    transmittance = t;
    contributors = n;
}

/// Composites one tile splat-by-splat. Each splat only visits the still
/// active pixels inside its support bounds, so every pixel sees exactly the
/// sequence compositePixel would produce.
inline void compositeTile(const std::vector<Splat> &splats, const TileBins &bins, int tile, int x0,
                          int y0, int x1, int y1, const RasterConfig &cfg, double background,
                          RenderOutput &out) {
    const int w = x1 - x0;
    const int h = y1 - y0;
    thread_local std::vector<double> color, trans;
    thread_local std::vector<int> count;
    thread_local std::vector<unsigned char> active;
    thread_local std::vector<int> rowActive;
    const auto area = static_cast<std::size_t>(w * h);
    color.assign(area, 0.0);
    trans.assign(area, 1.0);
    count.assign(area, 0);
    active.assign(area, 1);
    rowActive.assign(static_cast<std::size_t>(h), w);
    int activeRows = h;

    const std::size_t begin = bins.offsets[static_cast<std::size_t>(tile)];
    const std::size_t end = bins.offsets[static_cast<std::size_t>(tile) + 1];
    for (std::size_t e = begin; e < end && activeRows > 0; ++e) {
        const Splat &s = splats[static_cast<std::size_t>(bins.entries[e])];
        const int sy0 = std::max(s.yMin, y0), sy1 = std::min(s.yMax, y1 - 1);
        const int sx0 = std::max(s.xMin, x0), sx1 = std::min(s.xMax, x1 - 1);
        for (int y = sy0; y <= sy1; ++y) {
            const auto row = static_cast<std::size_t>(y - y0);
            if (rowActive[row] == 0) {
                continue;
            }
            const double dy = y - s.my;
            for (int x = sx0; x <= sx1; ++x) {
                const std::size_t k = row * static_cast<std::size_t>(w) +
                                      static_cast<std::size_t>(x - x0);
                if (!active[k]) {
                    continue;
                }
                const double dx = x - s.mx;
                const double q = s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy;
                if (q > s.cutoff) {
                    continue;
                }
                const double alpha = std::min(s.opacity * std::exp(-0.5 * q), cfg.alphaMax);
                color[k] += s.intensity * alpha * trans[k];
                trans[k] *= 1.0 - alpha;
                ++count[k];
                if (trans[k] < cfg.transmittanceMin) {
                    active[k] = 0;
                    if (--rowActive[row] == 0) {
                        --activeRows;
                    }
                }
            }
        }
    }
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const std::size_t k = static_cast<std::size_t>((y - y0) * w + (x - x0));
            out.image(x, y) = color[k] + background * trans[k];
            out.transmittance(x, y) = trans[k];
            out.contributors(x, y) = count[k];
        }
    }
}

inline RenderOutput blankOutput(const CameraView &cam, double background) {
    return {Image(cam.width, cam.height, background), Image(cam.width, cam.height, 1.0),
            Grid<int>(cam.width, cam.height, 0)};
}

} // namespace detail

/// Tile-based forward splatting of a grayscale Gaussian cloud.
inline RenderOutput renderForward(const GaussianCloud &cloud, const CameraView &cam,
                                  double background = 0.0, const RasterConfig &cfg = {}) {
    const auto sorted = detail::projectAndSort(cloud, cam, cfg);
    const auto bins = detail::binTiles(sorted, cam, cfg.tileSize);
    RenderOutput out = detail::blankOutput(cam, background);

    parallelFor(bins.tileCount(), cfg.threads, [&](int tile) {
        const int x0 = (tile % bins.tilesX) * cfg.tileSize;
        const int y0 = (tile / bins.tilesX) * cfg.tileSize;
        const int x1 = std::min(x0 + cfg.tileSize, cam.width);
        const int y1 = std::min(y0 + cfg.tileSize, cam.height);
        detail::compositeTile(sorted.splats, bins, tile, x0, y0, x1, y1, cfg, background, out);
    });
    return out;
}

/// Reference renderer: every pixel walks the full depth-sorted splat list.
inline RenderOutput renderForwardNaive(const GaussianCloud &cloud, const CameraView &cam,
                                       double background = 0.0, const RasterConfig &cfg = {}) {
    const auto sorted = detail::projectAndSort(cloud, cam, cfg);
    RenderOutput out = detail::blankOutput(cam, background);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            double c = 0.0, t = 1.0;
            int n = 0;
            detail::compositePixel(sorted.splats.data(), sorted.splats.size(), x, y, cfg, c, t, n,
                                   [](std::size_t, double, double, double) {});
            out.image(x, y) = c + background * t;
            out.transmittance(x, y) = t;
            out.contributors(x, y) = n;
        }
    }
    return out;
}

namespace detail {

/// Screen-space gradient of one splat: mean, inverse covariance entries
/// (ca, cb, cc as they appear in mahalanobis2), opacity and intensity.
struct SplatGradient {
    double mx = 0, my = 0, ca = 0, cb = 0, cc = 0, opacity = 0, intensity = 0;

    SplatGradient &operator+=(const SplatGradient &o) {
        mx += o.mx;
        my += o.my;
        ca += o.ca;
        cb += o.cb;
        cc += o.cc;
        opacity += o.opacity;
        intensity += o.intensity;
        return *this;
    }
};

struct Contribution {
    std::size_t position;
    double alpha, gauss, transmittance;
};

/// Back-to-front adjoint of one pixel's compositing.
inline void backwardPixel(const Splat *list, const std::vector<Contribution> &contribs,
                          double px, double py, double finalT, double background, double dLdC,
                          const RasterConfig &cfg, SplatGradient *grads) {
    double behind = background * finalT;
    for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
        const Splat &s = list[it->position];
        SplatGradient &g = grads[it->position];
        const double a = it->alpha;
        const double t = it->transmittance;
        g.intensity += dLdC * a * t;
        const double dCda = t * s.intensity - behind / (1.0 - a);
        behind += s.intensity * a * t;
        if (s.opacity * it->gauss >= cfg.alphaMax) {
            continue; // clamped: α does not depend on the splat parameters
        }
        const double dLda = dLdC * dCda;
        g.opacity += dLda * it->gauss;
        const double dLdq = dLda * s.opacity * it->gauss * -0.5;
        const double dx = px - s.mx;
        const double dy = py - s.my;
        g.mx += dLdq * -2.0 * (s.ca * dx + s.cb * dy);
        g.my += dLdq * -2.0 * (s.cb * dx + s.cc * dy);
        g.ca += dLdq * dx * dx;
        g.cb += dLdq * 2.0 * dx * dy;
        g.cc += dLdq * dy * dy;
    }
}

/// Chains screen-space splat gradients back to the 3D primitive parameters.
inline PrimitiveGradient chainToPrimitive(const GaussianPrimitive &g, const SplatGradient &sg,
                                          const Eigen::Matrix4d &view, const CameraView &cam,
                                          const RasterConfig &cfg) {
    const auto terms = projectionTerms(g, view, cam);
    PrimitiveGradient out;
    out.opacity = sg.opacity;
    out.intensity = sg.intensity;
    if (!terms) {
        return out;
    }
    const Intrinsics &k = cam.intrinsics;
    const Eigen::Vector3d &t = terms->tCam;
    const Eigen::Matrix2d cov = terms->cov2d + cfg.lowPass * Eigen::Matrix2d::Identity();
    const Eigen::Matrix2d conic = cov.inverse();

    // Symmetric-matrix gradient of the conic; cb enters the quadratic twice.
    Eigen::Matrix2d gConic;
    gConic << sg.ca, 0.5 * sg.cb, 0.5 * sg.cb, sg.cc;
    const Eigen::Matrix2d gCov = -conic * gConic * conic;

    const Eigen::Matrix3d gCovCam = terms->jac.transpose() * gCov * terms->jac;
    const Eigen::Matrix<double, 2, 3> gJac = 2.0 * gCov * terms->jac * terms->covCam;
    const Eigen::Matrix3d gSigma = terms->viewRot.transpose() * gCovCam * terms->viewRot;

    const double invZ = 1.0 / t.z();
    const double invZ2 = invZ * invZ;
    const double invZ3 = invZ2 * invZ;
    Eigen::Vector3d gT;
    gT.x() = k.fx * invZ * sg.mx - k.fx * invZ2 * gJac(0, 2);
    gT.y() = k.fy * invZ * sg.my - k.fy * invZ2 * gJac(1, 2);
    gT.z() = -k.fx * t.x() * invZ2 * sg.mx - k.fy * t.y() * invZ2 * sg.my -
             k.fx * invZ2 * gJac(0, 0) + 2.0 * k.fx * t.x() * invZ3 * gJac(0, 2) -
             k.fy * invZ2 * gJac(1, 1) + 2.0 * k.fy * t.y() * invZ3 * gJac(1, 2);
    out.mean = terms->viewRot.transpose() * gT;

    const Eigen::Matrix3d &r = terms->rot;
    const Eigen::Vector3d s2 = g.scale.cwiseProduct(g.scale);
    for (int i = 0; i < 3; ++i) {
        out.scale[i] = 2.0 * g.scale[i] * r.col(i).dot(gSigma * r.col(i));
    }
    const Eigen::Matrix3d gRot = 2.0 * gSigma * r * s2.asDiagonal();
    const double qNorm = g.rotation.norm();
    const Quaternion qHat = normalizeQuaternion(g.rotation);
    const Quaternion gHat = rotationMatrixVjp(qHat, gRot);
    if (qNorm > 0.0) {
        out.rotation = (gHat - qHat * qHat.dot(gHat)) / qNorm;
    }
    return out;
}

inline GradientSet finishGradients(const GaussianCloud &cloud, const SortedSplats &sorted,
                                   const std::vector<SplatGradient> &splatGrads,
                                   const CameraView &cam, const RasterConfig &cfg) {
    GradientSet out(cloud.size());
    const Eigen::Matrix4d view = viewTransform(cam);
    parallelFor(static_cast<int>(sorted.projected.size()), cfg.threads, [&](int i) {
        const auto idx = static_cast<std::size_t>(i);
        const int src = sorted.projected[idx].source;
        out[static_cast<std::size_t>(src)] =
            chainToPrimitive(cloud[static_cast<std::size_t>(src)], splatGrads[idx], view, cam, cfg);
    });
    return out;
}

} // namespace detail

/// Analytic gradient of Σ_pixels dLdImage(x, y) · C(x, y) with respect to
/// every primitive parameter. Each tile recomputes its forward pass; per-tile
/// partial sums are reduced in tile order, so results do not depend on the
/// thread count.
inline GradientSet renderBackward(const GaussianCloud &cloud, const CameraView &cam,
                                  double background, const Image &dLdImage,
                                  const RasterConfig &cfg = {}) {
    if (dLdImage.width() != cam.width || dLdImage.height() != cam.height) {
        throw ShapeError("renderBackward: upstream gradient does not match the image size");
    }
    const auto sorted = detail::projectAndSort(cloud, cam, cfg);
    const auto bins = detail::binTiles(sorted, cam, cfg.tileSize);
    std::vector<detail::SplatGradient> perEntry(bins.entries.size());

    parallelFor(bins.tileCount(), cfg.threads, [&](int tile) {
        const std::size_t begin = bins.offsets[static_cast<std::size_t>(tile)];
        const std::size_t end = bins.offsets[static_cast<std::size_t>(tile) + 1];
        std::vector<detail::Splat> local;
        local.reserve(end - begin);
        for (std::size_t e = begin; e < end; ++e) {
            local.push_back(sorted.splats[static_cast<std::size_t>(bins.entries[e])]);
        }
        detail::SplatGradient *grads = perEntry.data() + begin;
        std::vector<detail::Contribution> contribs;
        const int x0 = (tile % bins.tilesX) * cfg.tileSize;
        const int y0 = (tile / bins.tilesX) * cfg.tileSize;
        const int x1 = std::min(x0 + cfg.tileSize, cam.width);
        const int y1 = std::min(y0 + cfg.tileSize, cam.height);
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                const double dLdC = dLdImage(x, y);
                if (dLdC == 0.0) {
                    continue;
                }
                contribs.clear();
                double c = 0.0, t = 1.0;
                int n = 0;
                detail::compositePixel(local.data(), local.size(), x, y, cfg, c, t, n,
                                       [&](std::size_t j, double a, double gs, double tb) {
                                           contribs.push_back({j, a, gs, tb});
                                       });
                detail::backwardPixel(local.data(), contribs, x, y, t, background, dLdC, cfg,
                                      grads);
            }
        }
    });

    std::vector<detail::SplatGradient> splatGrads(sorted.splats.size());
    for (std::size_t e = 0; e < bins.entries.size(); ++e) {
        splatGrads[static_cast<std::size_t>(bins.entries[e])] += perEntry[e];
    }
    return detail::finishGradients(cloud, sorted, splatGrads, cam, cfg);
}

/// Reference backward pass: a full forward pass stores every pixel's
/// contributor list, then each list is walked back to front.
inline GradientSet renderBackwardStored(const GaussianCloud &cloud, const CameraView &cam,
                                        double background, const Image &dLdImage,
                                        const RasterConfig &cfg = {}) {
    if (dLdImage.width() != cam.width || dLdImage.height() != cam.height) {
        throw ShapeError("renderBackwardStored: upstream gradient does not match the image size");
    }
    const auto sorted = detail::projectAndSort(cloud, cam, cfg);
    std::vector<std::vector<detail::Contribution>> lists(static_cast<std::size_t>(cam.width) *
                                                         static_cast<std::size_t>(cam.height));
    Image finalT(cam.width, cam.height, 1.0);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            auto &list = lists[finalT.index(x, y)];
            double c = 0.0, t = 1.0;
            int n = 0;
            detail::compositePixel(sorted.splats.data(), sorted.splats.size(), x, y, cfg, c, t, n,
                                   [&](std::size_t j, double a, double gs, double tb) {
                                       list.push_back({j, a, gs, tb});
                                   });
            finalT(x, y) = t;
        }
    }
    std::vector<detail::SplatGradient> splatGrads(sorted.splats.size());
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            detail::backwardPixel(sorted.splats.data(), lists[finalT.index(x, y)], x, y,
                                  finalT(x, y), background, dLdImage(x, y), cfg,
                                  splatGrads.data());
        }
    }
    return detail::finishGradients(cloud, sorted, splatGrads, cam, cfg);
}

} // namespace evgs
