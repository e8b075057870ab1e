// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include "evgs/cli.hpp"
#include "evgs/fitting.hpp"
#include "evgs/loss.hpp"
#include "evgs/metrics.hpp"
#include "evgs/pipeline.hpp"
#include "evgs/scene.hpp"
#include "evgs/synthetic.hpp"
#include "support/metric_oracles.hpp"
#include "support/test_files.hpp"
#include "support/test_scenes.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

using namespace evgs;
using namespace evgs::testing;

namespace {

using Clock = std::chrono::steady_clock;

double secondsSince(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string &what) {
        if (!ok) {
            if (pass) {
                detail << "failed: ";
            } else {
                detail << "; ";
            }
            detail << what;
            pass = false;
        }
    }
};

std::string fmt(const char *format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

// 1 ------------------------------------------------------------------------

void voxelConservation(Outcome &o) {
    const auto start = Clock::now();
    Rng rng(1001);
    double worst = 0.0;
    std::size_t total = 0;
    for (int s = 0; s < 100; ++s) {
        const int w = std::uniform_int_distribution<int>(1, 96)(rng);
        const int h = std::uniform_int_distribution<int>(1, 96)(rng);
        const std::size_t n = s == 0 ? 100000 : std::uniform_int_distribution<std::size_t>(0, 100000)(rng);
        const auto duration = std::uniform_int_distribution<std::uint64_t>(1, 5'000'000)(rng);
        const EventStream stream = randomStream(rng, w, h, n, 1000, duration);
        const VoxelGrid grid = voxelize(stream);
        o.require(grid.bins() == 5, "default bin count is not 5");
        Image signedSum(w, h, 0.0);
        for (const Event &e : stream.events()) {
            signedSum(e.x, e.y) += e.p;
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double bins = 0.0;
                for (int b = 0; b < grid.bins(); ++b) {
                    bins += grid.data(b, y, x);
                }
                worst = std::max(worst, std::abs(bins - signedSum(x, y)));
            }
        }
        total += n;
    }
    const double elapsed = secondsSince(start);
    o.require(worst < 1e-9, "bin sum error " + fmt("%.3g", worst));
    o.require(elapsed < 5.0, "runtime " + fmt("%.2f s", elapsed));
    o.detail << (o.pass ? "" : "; ") << "100 streams, " << total << " events, max err " << fmt("%.3g", worst)
             << ", " << fmt("%.2f s", elapsed);
}

// 2 ------------------------------------------------------------------------

void eventRoundTrip(Outcome &o) {
    const auto start = Clock::now();
    Rng rng(1002);
    double worstRatio = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const double c = uniform(rng, 0.05, 0.5);
        const int w = std::uniform_int_distribution<int>(4, 48)(rng);
        const int h = std::uniform_int_distribution<int>(4, 48)(rng);
        const Image a = randomImage(rng, w, h, -3.0, 3.0);
        const Image b = randomImage(rng, w, h, -3.0, 3.0);
        auto [stream, state] = simulateEvents(a, b, 0, 1'000'000, SimulatorState::zero(w, h, c));
        const Image dl = integrateEvents(stream, c);
        for (std::size_t i = 0; i < dl.size(); ++i) {
            const double err = std::abs(dl[i] - (b[i] - a[i]));
            worstRatio = std::max(worstRatio, err / c);
        }
    }
    o.require(worstRatio <= 1.0, "single pair error " + fmt("%.6f", worstRatio) + " C");

    double chainedRatio = 0.0;
    for (int chain = 0; chain < 5; ++chain) {
        const double c = uniform(rng, 0.05, 0.5);
        const int w = 24, h = 20;
        std::vector<Image> frames;
        for (int k = 0; k <= 10; ++k) {
            frames.push_back(randomImage(rng, w, h, -2.0, 2.0));
        }
        SimulatorState st = SimulatorState::zero(w, h, c);
        Image total(w, h, 0.0);
        for (int k = 0; k < 10; ++k) {
            auto [s, next] = simulateEvents(frames[k], frames[k + 1], 1000u * k, 1000u * (k + 1), st);
            const Image dl = integrateEvents(s, c);
            for (std::size_t i = 0; i < dl.size(); ++i) {
                total[i] += dl[i];
            }
            st = std::move(next);
        }
        for (std::size_t i = 0; i < total.size(); ++i) {
            chainedRatio = std::max(chainedRatio, std::abs(frames[10][i] - frames[0][i] - total[i]) / c);
        }
    }
    o.require(chainedRatio < 1.0, "chained residual " + fmt("%.6f", chainedRatio) + " C");
    const double elapsed = secondsSince(start);
    o.require(elapsed < 5.0, "runtime " + fmt("%.2f s", elapsed));
    o.detail << (o.pass ? "" : "; ") << "max |err|/C " << fmt("%.4f", worstRatio) << ", chained "
             << fmt("%.4f", chainedRatio) << ", " << fmt("%.2f s", elapsed);
}

// 3 ------------------------------------------------------------------------

void geometryRoundTrips(Outcome &o) {
    Rng rng(1003);
    double roundTrip = 0.0, inverse = 0.0, jacobian = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const CameraView cam = randomCamera(rng, 64, 48);
        const double u = uniform(rng, 0, 63), v = uniform(rng, 0, 47), d = uniform(rng, 0.05, 50);
        const PixelProjection p = projectPoint(unprojectPixel(u, v, d, cam), cam);
        roundTrip = std::max({roundTrip, std::abs(p.u - u), std::abs(p.v - v), std::abs(p.depth - d) / std::max(1.0, d)});

        const Eigen::Vector3d world = unprojectPixel(u, v, d, cam);
        const PixelProjection q = projectPoint(world, cam);
        roundTrip = std::max(roundTrip, (unprojectPixel(q.u, q.v, q.depth, cam) - world).norm() / std::max(1.0, d));

        const Eigen::Matrix4d wp = viewTransform(cam.pose) * cam.pose;
        inverse = std::max(inverse, (wp - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff());

        const Eigen::Vector3d pc = worldToCamera(viewTransform(cam.pose), world);
        const auto j = projectionJacobian(pc, cam.intrinsics);
        const double h = 1e-6 * pc.z();
        for (int c = 0; c < 3; ++c) {
            Eigen::Vector3d lo = pc, hi = pc;
            lo[c] -= h;
            hi[c] += h;
            const auto a = *projectCameraPoint(lo, cam.intrinsics, cam.zNear);
            const auto b = *projectCameraPoint(hi, cam.intrinsics, cam.zNear);
            const double fd[2] = {(b.u - a.u) / (2 * h), (b.v - a.v) / (2 * h)};
            for (int r = 0; r < 2; ++r) {
                const double scale = std::max({std::abs(j(r, c)), std::abs(fd[r]), 1e-6});
                jacobian = std::max(jacobian, std::abs(j(r, c) - fd[r]) / scale);
            }
        }
    }
    o.require(roundTrip < 1e-9, "round trip error " + fmt("%.3g", roundTrip));
    o.require(inverse < 1e-12, "W·P error " + fmt("%.3g", inverse));
    o.require(jacobian < 1e-6, "Jacobian rel error " + fmt("%.3g", jacobian));
    o.detail << (o.pass ? "" : "; ") << "10^4 samples, round trip " << fmt("%.2g", roundTrip) << ", W·P "
             << fmt("%.2g", inverse) << ", Jacobian rel " << fmt("%.2g", jacobian);
}

// 4 ------------------------------------------------------------------------

void covariance(Outcome &o) {
    Rng rng(1004);
    double assembly = 0.0, symmetry = 0.0, spectrum = 0.0, minEigen = 1e300;
    for (int i = 0; i < 10000; ++i) {
        const Quaternion q = randomUnitQuaternion(rng);
        const Eigen::Vector3d s(std::exp(uniform(rng, -3, 1)), std::exp(uniform(rng, -3, 1)),
                                std::exp(uniform(rng, -3, 1)));
        const Eigen::Matrix3d sigma = buildCovariance(q, s);

        // Dense oracle: rotation from Eigen's quaternion, explicit R S Sᵀ Rᵀ.
        const Eigen::Matrix3d r = Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
        const Eigen::Matrix3d sm = s.asDiagonal();
        const Eigen::Matrix3d dense = r * sm * sm.transpose() * r.transpose();
        assembly = std::max(assembly, (sigma - dense).cwiseAbs().maxCoeff());
        symmetry = std::max(symmetry, (sigma - sigma.transpose()).cwiseAbs().maxCoeff());

        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(sigma);
        std::array<double, 3> got{es.eigenvalues()[0], es.eigenvalues()[1], es.eigenvalues()[2]};
        std::array<double, 3> want{s[0] * s[0], s[1] * s[1], s[2] * s[2]};
        std::sort(got.begin(), got.end());
        std::sort(want.begin(), want.end());
        for (int k = 0; k < 3; ++k) {
            spectrum = std::max(spectrum, std::abs(got[k] - want[k]));
        }
        minEigen = std::min(minEigen, got[0]);
    }
    o.require(assembly < 1e-9, "assembly error " + fmt("%.3g", assembly));
    o.require(symmetry < 1e-12, "asymmetry " + fmt("%.3g", symmetry));
    o.require(spectrum < 1e-9, "eigenvalue error " + fmt("%.3g", spectrum));
    o.require(minEigen > 0.0, "non-positive eigenvalue " + fmt("%.3g", minEigen));
    o.detail << (o.pass ? "" : "; ") << "10^4 samples, assembly " << fmt("%.2g", assembly) << ", symmetry "
             << fmt("%.2g", symmetry) << ", eigen " << fmt("%.2g", spectrum) << ", min eig "
             << fmt("%.2g", minEigen);
}

// 5 ------------------------------------------------------------------------

void rasterizerEquivalence(Outcome &o) {
    const auto start = Clock::now();
    Rng rng(1005);
    int mismatched = 0;
    std::size_t primitives = 0;
    for (int s = 0; s < 100; ++s) {
        const CameraView cam = randomCamera(rng, 64, 64);
        const int n = std::uniform_int_distribution<int>(0, 500)(rng);
        const GaussianCloud cloud = randomScene(rng, cam, n);
        const double bg = uniform(rng, 0.0, 1.0);
        RasterConfig cfg;
        cfg.tileSize = s % 3 == 0 ? 8 : 16;
        const RenderOutput tile = renderForward(cloud, cam, bg, cfg);
        const RenderOutput naive = renderForwardNaive(cloud, cam, bg, cfg);
        bool same = true;
        for (std::size_t i = 0; i < tile.image.size(); ++i) {
            same = same && tile.image[i] == naive.image[i] && tile.transmittance[i] == naive.transmittance[i];
        }
        mismatched += !same;
        primitives += cloud.size();
    }
    const double elapsed = secondsSince(start);
    o.require(mismatched == 0, std::to_string(mismatched) + " scenes differ");
    o.require(elapsed < 60.0, "runtime " + fmt("%.1f s", elapsed));
    o.detail << (o.pass ? "" : "; ") << "100 scenes, " << primitives << " primitives, bit-exact, "
             << fmt("%.2f s", elapsed);
}

// 6 ------------------------------------------------------------------------

void gradientCheck(Outcome &o) {
    const auto start = Clock::now();
    Rng rng(1006);
    const double h = 1e-5;
    RasterConfig cfg;
    int checked = 0, failed = 0, failedOutsideKinks = 0;
    double worst = 0.0;
    for (int scene = 0; scene < 20; ++scene) {
        const CameraView cam = randomCamera(rng, 32, 32);
        GaussianCloud cloud = randomScene(rng, cam, 10);
        const Image seed = randomImage(rng, cam.width, cam.height, -1.0, 1.0);
        const double bg = uniform(rng, 0.0, 1.0);
        const GradientSet analytic = renderBackward(cloud, cam, bg, seed, cfg);
        for (int i = 0; i < static_cast<int>(cloud.size()); ++i) {
            const bool kink = nearCompositingKink(cloud, cam, cfg, i, 10 * h);
            for (int k = 0; k < kParamsPerPrimitive; ++k) {
                double &param = parameterRef(cloud[static_cast<std::size_t>(i)], k);
                const double saved = param;
                const double fd = centralDifference(
                    [&](double v) {
                        param = v;
                        return weightedRender(cloud, cam, bg, seed, cfg);
                    },
                    saved, h);
                param = saved;
                const double a = gradientRef(analytic[static_cast<std::size_t>(i)], k);
                ++checked;
                if (!closeRel(a, fd, 1e-3, 1e-8)) {
                    ++failed;
                    failedOutsideKinks += !kink;
                }
                const double diff = std::abs(a - fd);
                if (diff > 1e-8) {
                    worst = std::max(worst, diff / std::max(std::abs(a), std::abs(fd)));
                }
            }
        }
    }
    const double elapsed = secondsSince(start);
    const double passRate = 1.0 - static_cast<double>(failed) / checked;
    o.require(passRate >= 0.999, "pass rate " + fmt("%.5f", passRate));
    o.require(failedOutsideKinks == 0, std::to_string(failedOutsideKinks) + " failures outside kinks");
    o.require(elapsed < 120.0, "runtime " + fmt("%.1f s", elapsed));
    o.detail << (o.pass ? "" : "; ") << checked << " coordinates, " << failed << " failed ("
             << failedOutsideKinks << " outside kinks), worst rel " << fmt("%.2g", worst) << ", "
             << fmt("%.2f s", elapsed);
}

// 7 ------------------------------------------------------------------------

void endToEndGradient(Outcome &o) {
    const int size = 16;
    const Intrinsics k = defaultIntrinsics(size, size);
    const CameraView src = orbitCamera(k, size, size, 0.0);
    const CameraView dst = orbitCamera(k, size, size, 0.2);
    const SyntheticScene shapes = makeSyntheticScene(0);
    const AnalyticView truth = renderAnalytic(shapes, src);
    const Image target = renderAnalytic(shapes, dst).intensity;

    Rng rng(1007);
    const int bins = kDefaultVoxelBins, channels = 4;
    VoxelGrid current{Tensor3(bins, size, size)}, previous{Tensor3(bins, size, size)};
    for (double &v : current.data.values()) v = uniform(rng, -1, 1);
    Tensor3 features(size, size, channels);
    for (double &v : features.values()) v = uniform(rng, -1, 1);
    AccumFrame frame{Tensor3(3, size, size)};

    PredictorSuite suite = makeOracleSuite(truth.depth, truth.intensity, k, kDefaultDepthRange, {}, channels);
    suite.intensity = [&](const Tensor3 &, const VoxelGrid &, const AccumFrame &) {
        return IntensityPrediction{truth.intensity, features};
    };
    LinearPixelRegressor reg(bins, channels);
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < reg.inputSize(); ++c) reg.weights()(r, c) = uniform(rng, -0.05, 0.05);
    }
    const double footprint = std::log(1.5 * 4.0 / k.fx);
    reg.bias() << 1.0, 0.1, -0.2, 0.05, footprint, footprint - 0.2, footprint + 0.1, logit(0.6);

    RasterConfig cfg;
    auto loss = [&](const LinearPixelRegressor &m) {
        const CascadeResult r = runCascade(current, previous, frame, withRegressor(suite, m), src);
        const Image img = renderForward(r.cloud, dst, 0.0, cfg).image;
        return sumSquaredError(img, target);
    };

    const CascadeResult r = runCascade(current, previous, frame, withRegressor(suite, reg), src);
    const Image img = renderForward(r.cloud, dst, 0.0, cfg).image;
    Image upstream(size, size);
    for (std::size_t i = 0; i < upstream.size(); ++i) upstream[i] = 2.0 * (img[i] - target[i]);
    const GradientSet grads = renderBackward(r.cloud, dst, 0.0, upstream, cfg);
    const RawMapGradients raw = backpropToRawMaps(grads, r.raw, src);
    const auto g = reg.backward(RegressorInput{r.depthMap, r.intensity.intensity, features, current}, raw);

    const double h = 1e-6;
    int checked = 0, failed = 0, nonzero = 0;
    double worst = 0.0;
    for (int row = 0; row < 8; ++row) {
        for (int c = 0; c <= reg.inputSize(); ++c) {
            LinearPixelRegressor plus = reg, minus = reg;
            (c < reg.inputSize() ? plus.weights()(row, c) : plus.bias()[row]) += h;
            (c < reg.inputSize() ? minus.weights()(row, c) : minus.bias()[row]) -= h;
            const double fd = (loss(plus) - loss(minus)) / (2 * h);
            const double an = c < reg.inputSize() ? g.weights(row, c) : g.bias[row];
            ++checked;
            nonzero += std::abs(an) > 1e-6;
            if (!closeRel(an, fd, 1e-3, 1e-8)) ++failed;
            if (std::abs(an - fd) > 1e-8) {
                worst = std::max(worst, std::abs(an - fd) / std::max(std::abs(an), std::abs(fd)));
            }
        }
    }
    o.require(r.cloud.size() > 50, "toy scene has only " + std::to_string(r.cloud.size()) + " primitives");
    o.require(nonzero > checked / 2, "gradient mostly zero");
    o.require(failed == 0, std::to_string(failed) + " of " + std::to_string(checked) + " weights disagree");
    o.detail << (o.pass ? "" : "; ") << checked << " weights, " << r.cloud.size() << " primitives, worst rel "
             << fmt("%.2g", worst);
}

// 8 ------------------------------------------------------------------------

struct CascadeRun {
    GaussianCloud cloud;
    double renderMse = 0.0;
};

CascadeRun runOracle(const SceneBundle &scene, int view, int target, const Image &depth) {
    const SceneView &v = scene.views[static_cast<std::size_t>(view)];
    const VoxelGrid ek = voxelize(scene.eventsBefore(view));
    const VoxelGrid ekPrev = view >= 1 ? voxelize(scene.eventsBefore(view - 1))
                                       : VoxelGrid{Tensor3(kDefaultVoxelBins, scene.meta.height, scene.meta.width)};
    const PredictorSuite suite = makeOracleSuite(depth, v.frame, scene.meta.intrinsics, scene.meta.dMax);
    CascadeRun out;
    out.cloud = runCascade(ek, ekPrev, accumulateFrames(scene.eventsBefore(view)), suite, scene.camera(view),
                           scene.meta.dMax)
                    .cloud;
    const Image img = renderForward(out.cloud, scene.camera(target), 0.0, RasterConfig{}).image;
    out.renderMse = sumSquaredError(img, scene.views[static_cast<std::size_t>(target)].frame) /
                    static_cast<double>(img.size());
    return out;
}

void oracleCascade(Outcome &o) {
    Rng rng(1008);
    std::normal_distribution<double> noise(0.0, 1.0);
    double surface = 0.0;
    std::ostringstream summary;
    for (const char *name : {"scene_0", "scene_1", "scene_2"}) {
        const SceneBundle scene = loadScene(fixture(name).string());
        double oracleMse = 0.0, noisyMse = 0.0;
        for (int view = 0; view < scene.meta.nViews; ++view) {
            const int target = view + 1 < scene.meta.nViews ? view + 1 : view - 1;
            const SceneView &v = scene.views[static_cast<std::size_t>(view)];
            Image depth = v.depth;
            for (std::size_t i = 0; i < depth.size(); ++i) {
                if (!(v.mask[i] > 0.5)) depth[i] = 0.0;
            }
            const CascadeRun exact = runOracle(scene, view, target, depth);
            const CameraView cam = scene.camera(view);
            std::size_t n = 0;
            for (int y = 0; y < scene.meta.height; ++y) {
                for (int x = 0; x < scene.meta.width; ++x) {
                    if (!(depth(x, y) > 0.0)) continue;
                    const Eigen::Vector3d onSurface = unprojectPixel(x, y, depth(x, y), cam);
                    surface = std::max(surface, (exact.cloud.at(n++).mean - onSurface).norm());
                }
            }
            o.require(n == exact.cloud.size(), std::string(name) + ": primitive count does not match the mask");

            Image noisy = depth;
            for (double &d : noisy.values()) {
                if (d > 0.0) d = std::clamp(d * (1.0 + 0.05 * noise(rng)), 1.0 + 1e-6, std::exp(scene.meta.dMax) - 1e-6);
            }
            const CascadeRun baseline = runOracle(scene, view, target, noisy);
            oracleMse += exact.renderMse;
            noisyMse += baseline.renderMse;
        }
        o.require(oracleMse < noisyMse, std::string(name) + ": oracle error " + fmt("%.4g", oracleMse) +
                                            " not below noisy-depth baseline " + fmt("%.4g", noisyMse));
        summary << ", " << name << " mse " << fmt("%.4f", oracleMse / scene.meta.nViews) << " vs "
                << fmt("%.4f", noisyMse / scene.meta.nViews);
    }
    o.require(surface < 1e-9, "surface error " + fmt("%.3g", surface));
    o.detail << (o.pass ? "" : "; ") << "surface err " << fmt("%.2g", surface) << summary.str();
}

// 9 ------------------------------------------------------------------------

void deskScaleFit(Outcome &o) {
    const int size = 64;
    Image target(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) target(x, y) = 0.5 + 0.3 * std::sin(0.2 * x) * std::cos(0.15 * y);
    CameraView cam;
    cam.width = cam.height = size;
    cam.intrinsics = {1.0 * size, 1.0 * size, (size - 1) / 2.0, (size - 1) / 2.0};

    FitConfig cfg;
    cfg.primitives = 200;
    cfg.iterations = 2000;
    cfg.seed = 2024;
    cfg.raster.threads = 1;
    const auto start = Clock::now();
    const FitResult r = fitGaussians(target, cam, cfg);
    const double elapsed = secondsSince(start);

    const double initial = psnr(renderForward(initialCloud(cam, cfg), cam, cfg.background, cfg.raster).image, target);
    const double final = psnr(renderForward(r.cloud, cam, cfg.background, cfg.raster).image, target);
    // Frozen bar; the measured gain when it was set was about +35 dB.
    const double bar = 15.0;
    o.require(final >= initial + bar, "PSNR gain " + fmt("%.2f dB", final - initial));
    double prev = 1e300;
    int rises = 0;
    for (std::size_t w = 0; w + 100 <= r.lossTrace.size(); w += 100) {
        const double mean = std::accumulate(r.lossTrace.begin() + static_cast<long>(w),
                                            r.lossTrace.begin() + static_cast<long>(w + 100), 0.0) / 100.0;
        rises += mean > prev;
        prev = mean;
    }
    o.require(rises == 0, std::to_string(rises) + " windowed loss increases");
    o.require(elapsed < 60.0, "runtime " + fmt("%.1f s", elapsed));
    o.detail << (o.pass ? "" : "; ") << "PSNR " << fmt("%.2f", initial) << " -> " << fmt("%.2f dB", final)
             << " (bar +" << fmt("%.0f", bar) << "), " << fmt("%.1f s", elapsed) << " single-threaded";
}

// 10 -----------------------------------------------------------------------

void configDefaults(Outcome &o) {
    o.require(kDefaultVoxelBins == 5, "B default");
    o.require(voxelize(EventStream(4, 4, 0, 10)).bins() == 5, "voxelize default bins");
    o.require(LinearPixelRegressor().bins() == 5, "regressor default bins");
    const LossWeights w;
    o.require(w.lambda1 == 0.2 && w.lambda2 == 0.2 && w.lambda3 == 0.6, "lambda defaults");
    o.require(w.beta1 == 0.8 && w.beta2 == 0.2, "beta defaults");
    const LossWeights parsed = lossWeightsFromConfig(KeyValueConfig{});
    o.require(parsed.lambda1 == 0.2 && parsed.lambda2 == 0.2 && parsed.lambda3 == 0.6 && parsed.beta1 == 0.8 &&
                  parsed.beta2 == 0.2,
              "config file defaults");
    o.require(kDefaultSegmentCount == 201, "segment default");

    TempDir dir;
    std::ostringstream out, err;
    const int code = runCli({"voxelize", "--events", (fixture("scene_0") / "events.bin").string(), "--out",
                             dir / "v.bin"},
                            out, err);
    o.require(code == kExitOk, "voxelize CLI: " + err.str());
    if (code == kExitOk) {
        const auto grids = loadVoxelGrids(dir / "v.bin");
        o.require(grids.size() == 201 && grids.front().bins() == 5, "voxelize CLI defaults");
    }
    o.detail << (o.pass ? "" : "; ") << "B=5, lambda=(0.2,0.2,0.6), beta=(0.8,0.2), segments=201";
}

// 11 -----------------------------------------------------------------------

void metricsAndEval(Outcome &o) {
    Rng rng(1011);
    double ssimErr = 0.0, psnrErr = 0.0, depthErr = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int w = 11 + trial % 9, h = 11 + (trial * 3) % 7;
        const Image a = randomImage(rng, w, h);
        Image b = a;
        for (double &v : b.values()) v = std::clamp(v + uniform(rng, -0.3, 0.3), 0.0, 1.0);
        ssimErr = std::max(ssimErr, std::abs(ssim(a, b) - ssimReference(a, b)));
        o.require(ssim(a, a) == 1.0 && psnr(a, a) == kPsnrCap, "identical images");

        double se = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
        const double expected = 10.0 * std::log10(static_cast<double>(a.size()) / se);
        psnrErr = std::max(psnrErr, std::abs(psnr(b, a) - expected));

        const Image gt = randomImage(rng, w, h, 1, 7), pred = randomImage(rng, w, h, 1, 7);
        Image mask = randomImage(rng, w, h);
        mask[0] = 1.0;
        const DepthMetrics m = depthMetrics(pred, gt, mask);
        const DepthErrors ref = depthErrorsReference(pred, gt, mask);
        for (auto [x, y] : {std::pair{m.rmse, ref.rmse}, {m.mae, ref.mae}, {m.absRel, ref.absRel}, {m.sqRel, ref.sqRel}}) {
            depthErr = std::max(depthErr, std::abs(x - y) / std::max(1.0, std::abs(y)));
        }
    }
    o.require(ssimErr < 1e-6, "SSIM vs reference " + fmt("%.3g", ssimErr));
    o.require(psnrErr < 1e-9, "PSNR vs closed form " + fmt("%.3g", psnrErr));
    o.require(depthErr < 1e-12, "depth metrics vs reference " + fmt("%.3g", depthErr));

    std::ostringstream out, err;
    const std::string scene = fixture("scene_0").string();
    const int code = runCli({"eval", "--pred", scene, "--gt", scene, "--depth"}, out, err);
    o.require(code == kExitOk, "eval CLI: " + err.str());
    o.require(out.str() == "psnr=99\nssim=1\nrmse=0\nmae=0\nabs_rel=0\nsq_rel=0\n", "eval CLI report: " + out.str());
    o.detail << (o.pass ? "" : "; ") << "SSIM " << fmt("%.2g", ssimErr) << ", PSNR " << fmt("%.2g", psnrErr)
             << ", depth " << fmt("%.2g", depthErr) << ", eval CLI psnr=99 ssim=1 zero depth errors";
}

// 12 -----------------------------------------------------------------------

void throughput(Outcome &o) {
    const int size = 256;
    const SceneBundle scene = makeSyntheticBundle({.variant = 1, .width = size, .height = size, .nViews = 2});
    const SceneView &v = scene.views[0];
    Image depth = v.depth;
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (!(v.mask[i] > 0.5)) depth[i] = 0.0;
    }
    const PredictorSuite suite = makeOracleSuite(depth, v.frame, scene.meta.intrinsics, scene.meta.dMax);
    const VoxelGrid empty{Tensor3(kDefaultVoxelBins, size, size)};
    const GaussianCloud full =
        runCascade(empty, empty, AccumFrame{Tensor3(3, size, size)}, suite, scene.camera(0), scene.meta.dMax).cloud;
    GaussianCloud cloud;
    const std::size_t want = 10000;
    for (std::size_t i = 0; i < want && !full.empty(); ++i) {
        cloud.push_back(full[i * full.size() / want]);
    }
    o.require(cloud.size() == want, "precomputed cloud has " + std::to_string(cloud.size()) + " primitives");

    RasterConfig cfg;
    cfg.threads = 0;
    const CameraView cam = scene.camera(1);
    const RenderOutput tile = renderForward(cloud, cam, 0.0, cfg);
    const RenderOutput naive = renderForwardNaive(cloud, cam, 0.0, cfg);
    bool same = true;
    for (std::size_t i = 0; i < tile.image.size(); ++i) same = same && tile.image[i] == naive.image[i];
    o.require(same, "tile and naive renders differ");

    int frames = 0;
    const auto start = Clock::now();
    double elapsed = 0.0;
    while (frames < 10 || elapsed < 2.0) {
        renderForward(cloud, cam, 0.0, cfg);
        ++frames;
        elapsed = secondsSince(start);
    }
    const double fps = frames / elapsed;
    const unsigned cores = std::thread::hardware_concurrency();
    o.require(fps >= 30.0, fmt("%.1f", fps) + " frames/s is below 30");
    o.detail << (o.pass ? "" : "; ") << fmt("%.1f", fps) << " frames/s in parallel mode on " << cores
             << " hardware thread" << (cores == 1 ? "" : "s") << " (reference machine: 8 cores)"
             << ", 10^4 primitives at 256x256, tile/naive spot check " << (same ? "equal" : "differs");
}

struct Criterion {
    const char *name;
    std::function<void(Outcome &)> run;
};

} // namespace

int main() {
    const Criterion criteria[] = {
        {"voxel conservation", voxelConservation},
        {"event round trip", eventRoundTrip},
        {"geometry round trips", geometryRoundTrips},
        {"covariance", covariance},
        {"rasterizer equivalence", rasterizerEquivalence},
        {"gradient check", gradientCheck},
        {"end-to-end differentiability", endToEndGradient},
        {"oracle cascade fidelity", oracleCascade},
        {"desk-scale fitting", deskScaleFit},
        {"configuration defaults", configDefaults},
        {"metrics", metricsAndEval},
        {"throughput", throughput},
    };
    int failures = 0;
    int index = 0;
    for (const Criterion &c : criteria) {
        ++index;
        Outcome o;
        try {
            c.run(o);
        } catch (const std::exception &e) {
            o.pass = false;
            o.detail << (o.detail.str().empty() ? "" : "; ") << "exception: " << e.what();
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << index << "  " << c.name << ": "
                  << o.detail.str() << std::endl;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
