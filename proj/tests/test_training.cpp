// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#include "evgs/config.hpp"
#include "evgs/fitting.hpp"
#include "evgs/loss.hpp"
#include "evgs/metrics.hpp"
#include "support/metric_oracles.hpp"
#include "support/test_scenes.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace evgs;
using evgs::testing::closeRel;
using evgs::testing::ssimReference;
using evgs::testing::randomImage;
using evgs::testing::Rng;
using evgs::testing::uniform;

TEST(LossWeights, DefaultsAndConfig) {
    const LossWeights w;
    EXPECT_EQ(w.lambda1, 0.2);
    EXPECT_EQ(w.lambda2, 0.2);
    EXPECT_EQ(w.lambda3, 0.6);
    EXPECT_EQ(w.beta1, 0.8);
    EXPECT_EQ(w.beta2, 0.2);
    const LossWeights fromFile = lossWeightsFromConfig(
        KeyValueConfig::parse("# paper weights\nlambda1 = 0.2\nlambda2=0.2\nlambda3=0.6\nbeta1=0.8\nbeta2=0.2\n"));
    EXPECT_EQ(fromFile.lambda3, 0.6);
    EXPECT_EQ(fromFile.beta1, 0.8);
    const LossWeights custom = lossWeightsFromConfig(KeyValueConfig::parse("lambda3=1.5"));
    EXPECT_EQ(custom.lambda3, 1.5);
    EXPECT_EQ(custom.lambda1, 0.2);
    EXPECT_THROW(lossWeightsFromConfig(KeyValueConfig::parse("beta2=-1")), InvalidArgument);
}

TEST(JointLoss, ZeroAtGroundTruth) {
    Rng rng(1);
    const Image i = randomImage(rng, 8, 6), d = randomImage(rng, 8, 6, 1, 7), t = randomImage(rng, 5, 5);
    const JointLossResult r = jointLoss(i, d, t, {i, d, t});
    EXPECT_EQ(r.total, 0.0);
    for (double g : r.gradIntensity.values()) EXPECT_EQ(g, 0.0);
    for (double g : r.gradDepth.values()) EXPECT_EQ(g, 0.0);
}

TEST(JointLoss, MatchesStraightLineFormula) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const int w = 3 + trial % 7, h = 2 + trial % 5;
        const Image ip = randomImage(rng, w, h), ig = randomImage(rng, w, h);
        const Image dp = randomImage(rng, w, h, 1, 7), dg = randomImage(rng, w, h, 1, 7);
        const Image rp = randomImage(rng, w + 1, h), rg = randomImage(rng, w + 1, h);
        LossWeights lw;
        lw.lambda1 = uniform(rng, 0, 1);
        lw.lambda3 = uniform(rng, 0, 1);
        double l2i = 0, l1d = 0, l2r = 0;
        for (std::size_t k = 0; k < ip.size(); ++k) l2i += (ip[k] - ig[k]) * (ip[k] - ig[k]);
        for (std::size_t k = 0; k < dp.size(); ++k) l1d += std::abs(dp[k] - dg[k]);
        for (std::size_t k = 0; k < rp.size(); ++k) l2r += (rp[k] - rg[k]) * (rp[k] - rg[k]);
        const double n = w * h, nr = (w + 1) * h;
        const double expected = lw.lambda1 * lw.beta1 * l2i / n + lw.lambda2 * l1d / n +
                                lw.lambda3 * lw.beta1 * l2r / nr;
        const JointLossResult r = jointLoss(ip, dp, rp, {ig, dg, rg}, lw);
        EXPECT_TRUE(closeRel(r.total, expected, 1e-12, 0.0)) << r.total << " vs " << expected;
        EXPECT_GE(r.total, 0.0);
    }
}

TEST(JointLoss, GradientsMatchFiniteDifferences) {
    Rng rng(3);
    const int w = 5, h = 4;
    Image ip = randomImage(rng, w, h), dp = randomImage(rng, w, h, 1, 7), rp = randomImage(rng, w, h);
    const JointLossTargets gt{randomImage(rng, w, h), randomImage(rng, w, h, 1, 7), randomImage(rng, w, h)};
    // A smooth stand-in perceptual term exercising the β₂ slot.
    const PerceptualLoss lp = [](const Image &p, const Image &g, Image *grad) {
        double s = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            s += std::sin(p[k] - g[k]);
            if (grad) (*grad)[k] = std::cos(p[k] - g[k]);
        }
        return s;
    };
    const JointLossResult r = jointLoss(ip, dp, rp, gt, {}, lp);
    const double h0 = 1e-6;
    auto fd = [&](Image &img, std::size_t k) {
        const double saved = img[k];
        img[k] = saved + h0;
        const double up = jointLoss(ip, dp, rp, gt, {}, lp).total;
        img[k] = saved - h0;
        const double down = jointLoss(ip, dp, rp, gt, {}, lp).total;
        img[k] = saved;
        return (up - down) / (2 * h0);
    };
    for (std::size_t k = 0; k < ip.size(); ++k) {
        EXPECT_TRUE(closeRel(r.gradIntensity[k], fd(ip, k), 1e-4, 1e-10));
        EXPECT_TRUE(closeRel(r.gradDepth[k], fd(dp, k), 1e-4, 1e-10));
        EXPECT_TRUE(closeRel(r.gradRendered[k], fd(rp, k), 1e-4, 1e-10));
    }
}

TEST(JointLoss, L1SubgradientIsZeroAtTies) {
    Image a(2, 1), b(2, 1), g;
    a[0] = 1.0;
    b[0] = 1.0;
    a[1] = 3.0;
    b[1] = 1.0;
    EXPECT_EQ(l1Loss(a, b, &g), 1.0);
    EXPECT_EQ(g[0], 0.0);
    EXPECT_EQ(g[1], 0.5);
}

TEST(JointLoss, ShapeMismatchThrows) {
    EXPECT_THROW(jointLoss(Image(2, 2), Image(2, 2), Image(2, 2), {Image(2, 3), Image(2, 2), Image(2, 2)}),
                 ShapeError);
}

TEST(ImageMetrics, ClosedForms) {
    Rng rng(4);
    const Image a = randomImage(rng, 16, 16, 0.0, 0.9);
    const ImageMetrics same = imageMetrics(a, a);
    EXPECT_EQ(same.psnr, 99.0);
    EXPECT_EQ(same.ssim, 1.0);
    Image b = a;
    for (double &v : b.values()) v += 0.1;
    EXPECT_NEAR(psnr(b, a), 20.0, 1e-9);
}

TEST(ImageMetrics, PsnrDecreasesWithError) {
    Rng rng(5);
    const Image gt = randomImage(rng, 12, 12, 0.2, 0.8);
    double prev = 1e9;
    for (double off = 0.01; off < 0.2; off += 0.01) {
        Image p = gt;
        for (double &v : p.values()) v += off;
        const double value = psnr(p, gt);
        EXPECT_LT(value, prev);
        prev = value;
    }
}

TEST(ImageMetrics, SsimMatchesReferenceAndIsSymmetric) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const int w = 11 + trial % 9, h = 11 + (trial * 3) % 7;
        const Image a = randomImage(rng, w, h);
        Image b = a;
        for (double &v : b.values()) v = std::clamp(v + uniform(rng, -0.3, 0.3), 0.0, 1.0);
        const double s = ssim(a, b);
        EXPECT_NEAR(s, ssimReference(a, b), 1e-6);
        EXPECT_EQ(s, ssim(b, a));
        EXPECT_GE(s, -1.0);
        EXPECT_LE(s, 1.0);
        EXPECT_EQ(ssim(a, a), 1.0);
    }
}

TEST(ImageMetrics, Preconditions) {
    EXPECT_THROW(ssim(Image(10, 20), Image(10, 20)), InvalidArgument);
    EXPECT_THROW(imageMetrics(Image(12, 12, 1.5), Image(12, 12)), InvalidArgument);
    EXPECT_THROW(imageMetrics(Image(12, 12), Image(12, 13)), ShapeError);
}

TEST(DepthMetrics, ClosedForms) {
    Rng rng(7);
    const Image gt = randomImage(rng, 9, 7, 1, 7);
    const Image mask(9, 7, 1.0);
    const DepthMetrics zero = depthMetrics(gt, gt, mask);
    EXPECT_EQ(zero.rmse, 0.0);
    EXPECT_EQ(zero.mae, 0.0);
    EXPECT_EQ(zero.absRel, 0.0);
    EXPECT_EQ(zero.sqRel, 0.0);
    Image twice = gt;
    for (double &v : twice.values()) v *= 2.0;
    EXPECT_NEAR(depthMetrics(twice, gt, mask).absRel, 1.0, 1e-15);
}

TEST(DepthMetrics, MatchesBruteForceAndIgnoresOrder) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const Image gt = randomImage(rng, 13, 11, 1, 7);
        const Image pred = randomImage(rng, 13, 11, 1, 7);
        Image mask = randomImage(rng, 13, 11);
        double se = 0, ae = 0, ar = 0, sr = 0;
        int n = 0;
        for (std::size_t k = 0; k < gt.size(); ++k) {
            if (mask[k] <= 0.5) continue;
            const double d = pred[k] - gt[k];
            se += d * d, ae += std::abs(d), ar += std::abs(d) / gt[k], sr += d * d / gt[k], ++n;
        }
        const DepthMetrics m = depthMetrics(pred, gt, mask);
        EXPECT_TRUE(closeRel(m.rmse, std::sqrt(se / n), 1e-12, 0));
        EXPECT_TRUE(closeRel(m.mae, ae / n, 1e-12, 0));
        EXPECT_TRUE(closeRel(m.absRel, ar / n, 1e-12, 0));
        EXPECT_TRUE(closeRel(m.sqRel, sr / n, 1e-12, 0));

        std::vector<std::size_t> perm(gt.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Image pg(13, 11), pp(13, 11), pm(13, 11);
        for (std::size_t k = 0; k < perm.size(); ++k) {
            pg[k] = gt[perm[k]], pp[k] = pred[perm[k]], pm[k] = mask[perm[k]];
        }
        const DepthMetrics q = depthMetrics(pp, pg, pm);
        EXPECT_TRUE(closeRel(q.rmse, m.rmse, 1e-12, 0));
        EXPECT_TRUE(closeRel(q.absRel, m.absRel, 1e-12, 0));
    }
}

TEST(DepthMetrics, EmptyMaskThrows) {
    EXPECT_THROW(depthMetrics(Image(3, 3, 1), Image(3, 3, 1), Image(3, 3)), InvalidArgument);
}

namespace {

Image smoothTarget(int w, int h) {
    Image t(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            t(x, y) = 0.5 + 0.3 * std::sin(0.2 * x) * std::cos(0.15 * y);
    return t;
}

CameraView fitCamera(int w, int h) {
    CameraView cam;
    cam.width = w;
    cam.height = h;
    cam.intrinsics = {1.0 * w, 1.0 * w, (w - 1) / 2.0, (h - 1) / 2.0};
    return cam;
}

} // namespace

TEST(FitGaussians, ZeroIterationsReturnsInitialization) {
    const CameraView cam = fitCamera(24, 20);
    FitConfig cfg;
    cfg.primitives = 30;
    cfg.iterations = 0;
    cfg.seed = 5;
    const FitResult r = fitGaussians(smoothTarget(24, 20), cam, cfg);
    ASSERT_EQ(r.lossTrace.size(), 1u);
    const GaussianCloud init = initialCloud(cam, cfg);
    ASSERT_EQ(r.cloud.size(), init.size());
    for (std::size_t i = 0; i < init.size(); ++i) {
        EXPECT_EQ(r.cloud[i].mean, init[i].mean);
        EXPECT_EQ(r.cloud[i].scale, init[i].scale);
    }
}

TEST(FitGaussians, SameSeedIsBitIdentical) {
    const CameraView cam = fitCamera(24, 20);
    FitConfig cfg;
    cfg.primitives = 40;
    cfg.iterations = 30;
    cfg.seed = 9;
    const Image target = smoothTarget(24, 20);
    const FitResult a = fitGaussians(target, cam, cfg);
    const FitResult b = fitGaussians(target, cam, cfg);
    EXPECT_EQ(a.lossTrace, b.lossTrace);
    for (std::size_t i = 0; i < a.cloud.size(); ++i) {
        EXPECT_EQ(a.cloud[i].mean, b.cloud[i].mean);
        EXPECT_EQ(a.cloud[i].rotation, b.cloud[i].rotation);
        EXPECT_EQ(a.cloud[i].scale, b.cloud[i].scale);
        EXPECT_EQ(a.cloud[i].opacity, b.cloud[i].opacity);
        EXPECT_EQ(a.cloud[i].intensity, b.cloud[i].intensity);
    }
    cfg.seed = 10;
    EXPECT_NE(fitGaussians(target, cam, cfg).lossTrace.front(), a.lossTrace.front());
}

TEST(FitGaussians, LossDecreasesAndParametersStayValid) {
    const CameraView cam = fitCamera(32, 32);
    FitConfig cfg;
    cfg.primitives = 60;
    cfg.iterations = 300;
    const FitResult r = fitGaussians(smoothTarget(32, 32), cam, cfg);
    double prev = 1e300;
    for (std::size_t w = 0; w + 100 <= r.lossTrace.size(); w += 100) {
        const double mean = std::accumulate(r.lossTrace.begin() + static_cast<long>(w),
                                            r.lossTrace.begin() + static_cast<long>(w + 100), 0.0) / 100;
        EXPECT_LE(mean, prev);
        prev = mean;
    }
    EXPECT_LT(r.lossTrace.back(), 0.5 * r.lossTrace.front());
    for (const GaussianPrimitive &g : r.cloud) {
        EXPECT_NO_THROW(validatePrimitive(g));
    }
}

TEST(FitStepsConfig, ReadsKeysAndRejectsNegatives) {
    const FitSteps s = fitStepsFromConfig(KeyValueConfig::parse("step_mean=0.5\nstep_intensity=0.1"));
    EXPECT_EQ(s.mean, 0.5);
    EXPECT_EQ(s.intensity, 0.1);
    EXPECT_EQ(s.rotation, FitSteps{}.rotation);
    EXPECT_THROW(fitStepsFromConfig(KeyValueConfig::parse("step_rotation=-1")), DataError);
}

TEST(KeyValueConfig, ParsesAndRejectsMalformedInput) {
    const KeyValueConfig c = KeyValueConfig::parse("a = 1\n\n# comment\nb=two words\n");
    EXPECT_EQ(c.getInt("a"), 1);
    EXPECT_EQ(c.getString("b"), "two words");
    EXPECT_THROW(c.getDouble("b"), DataError);
    EXPECT_THROW(c.getString("missing"), DataError);
    EXPECT_THROW(KeyValueConfig::parse("novalue"), DataError);
    EXPECT_THROW(KeyValueConfig::parse("a=1\na=2"), DataError);
    EXPECT_THROW(c.requireKnownKeys({"a"}), DataError);
    KeyValueConfig out;
    out.set("psnr", 99.0);
    out.set("x", 0.1);
    EXPECT_EQ(out.serialize(), "psnr=99\nx=0.1\n");
    EXPECT_EQ(KeyValueConfig::parse(out.serialize()).getDouble("x"), 0.1);
}
