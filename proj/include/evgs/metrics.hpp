// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evgs/error.hpp"
#include "evgs/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace evgs {

inline constexpr double kPsnrCap = 99.0;

struct ImageMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
};

struct DepthMetrics {
    double rmse = 0.0;
    double mae = 0.0;
    double absRel = 0.0;
    double sqRel = 0.0;
};

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 1.0;
};

namespace detail {

inline void requireUnitRange(const Image &img, const std::string &what) {
    for (double v : img.values()) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw InvalidArgument(what + " values must lie in [0, 1]");
        }
    }
}

} // namespace detail

/// 10 log10(1 / MSE) for images in [0, 1], capped at 99 dB when MSE < 1e-10.
inline double psnr(const Image &pred, const Image &gt) {
    requireSameShape(pred, gt, "psnr");
    if (pred.empty()) {
        throw InvalidArgument("psnr: empty images");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - gt[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(pred.size());
    if (mse < 1e-10) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// Mean SSIM over every fully contained Gaussian window (no padding).
inline double ssim(const Image &a, const Image &b, const SsimParams &p = {}) {
    requireSameShape(a, b, "ssim");
    if (p.window < 1 || p.window % 2 == 0 || !(p.sigma > 0.0)) {
        throw InvalidArgument("ssim: window must be odd and positive, sigma positive");
    }
    if (a.width() < p.window || a.height() < p.window) {
        throw InvalidArgument("ssim: images must be at least " + std::to_string(p.window) +
                              " pixels on each side");
    }
    const int r = p.window / 2;
    std::vector<double> kernel(static_cast<std::size_t>(p.window));
    double total = 0.0;
    for (int i = -r; i <= r; ++i) {
        kernel[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (p.sigma * p.sigma));
        total += kernel[static_cast<std::size_t>(i + r)];
    }
    for (double &k : kernel) {
        k /= total;
    }
    const double c1 = (p.k1 * p.range) * (p.k1 * p.range);
    const double c2 = (p.k2 * p.range) * (p.k2 * p.range);

    // Separable filtering of a, b, a², b², ab; rows first, then columns.
    const int ow = a.width() - 2 * r;
    const int oh = a.height() - 2 * r;
    std::array<Image, 5> rows;
    for (Image &img : rows) {
        img = Image(ow, a.height());
    }
    for (int y = 0; y < a.height(); ++y) {
        for (int x = 0; x < ow; ++x) {
            std::array<double, 5> s{};
            for (int i = 0; i < p.window; ++i) {
                const double k = kernel[static_cast<std::size_t>(i)];
                const double va = a(x + i, y);
                const double vb = b(x + i, y);
                s[0] += k * va;
                s[1] += k * vb;
                s[2] += k * (va * va);
                s[3] += k * (vb * vb);
                s[4] += k * (va * vb);
            }
            for (int c = 0; c < 5; ++c) {
                rows[static_cast<std::size_t>(c)](x, y) = s[static_cast<std::size_t>(c)];
            }
        }
    }
    double sum = 0.0;
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            std::array<double, 5> s{};
            for (int i = 0; i < p.window; ++i) {
                const double k = kernel[static_cast<std::size_t>(i)];
                for (int c = 0; c < 5; ++c) {
                    s[static_cast<std::size_t>(c)] += k * rows[static_cast<std::size_t>(c)](x, y + i);
                }
            }
            const double ma = s[0], mb = s[1];
            const double va = s[2] - ma * ma;
            const double vb = s[3] - mb * mb;
            const double cov = s[4] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    return sum / (static_cast<double>(ow) * static_cast<double>(oh));
}

inline ImageMetrics imageMetrics(const Image &pred, const Image &gt) {
    requireSameShape(pred, gt, "imageMetrics");
    detail::requireUnitRange(pred, "imageMetrics prediction");
    detail::requireUnitRange(gt, "imageMetrics ground truth");
    return {psnr(pred, gt), ssim(pred, gt)};
}

/// Errors over pixels with mask > 0.5.
inline DepthMetrics depthMetrics(const Image &pred, const Image &gt, const Image &mask) {
    requireSameShape(pred, gt, "depthMetrics");
    requireSameShape(mask, gt, "depthMetrics mask");
    DepthMetrics m;
    std::size_t n = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!(mask[i] > 0.5)) {
            continue;
        }
        if (!(gt[i] > 0.0)) {
            throw InvalidArgument("depthMetrics: ground-truth depth must be positive inside the mask");
        }
        const double d = pred[i] - gt[i];
        m.rmse += d * d;
        m.mae += std::abs(d);
        m.absRel += std::abs(d) / gt[i];
        m.sqRel += d * d / gt[i];
        ++n;
    }
    if (n == 0) {
        throw InvalidArgument("depthMetrics: mask selects no pixels");
    }
    const double count = static_cast<double>(n);
    m.rmse = std::sqrt(m.rmse / count);
    m.mae /= count;
    m.absRel /= count;
    m.sqRel /= count;
    return m;
}

} // namespace evgs
