// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

// On-disk scene bundles:
//
//   meta.txt                key=value metadata
//   poses.txt               one camera-to-world matrix per line
//   frames/frame_NNNN.pgm   grayscale frames
//   depth/depth_NNNN.bin    real32 depth maps, 0 on background
//   masks/mask_NNNN.pgm     silhouettes, 255 on foreground
//   events.bin              the event stream of the whole sweep
//
// View k is captured at t_begin + k * frame_interval. The event stream covers
// [t_begin, t_begin + (n_views - 1) * frame_interval).

#pragma once

#include "evgs/camera.hpp"
#include "evgs/config.hpp"
#include "evgs/error.hpp"
#include "evgs/events.hpp"
#include "evgs/io.hpp"
#include "evgs/pipeline.hpp"
#include "evgs/synthetic.hpp"
#include "evgs/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <set>
#include <string>
#include <vector>

namespace evgs {

struct SceneMeta {
    int width = 0;
    int height = 0;
    Intrinsics intrinsics;
    double zNear = kDefaultZNear;
    double contrastThreshold = kDefaultContrastThreshold;
    double dMax = kDefaultDepthRange;
    int nViews = 0;
    std::uint64_t tBegin = 1;
    std::uint64_t frameInterval = 1;

    std::uint64_t viewTime(int k) const { return tBegin + static_cast<std::uint64_t>(k) * frameInterval; }
    std::uint64_t tEnd() const { return viewTime(std::max(nViews - 1, 0)); }
};

struct SceneView {
    Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
    Image frame;
    Image depth;
    Image mask;
};

struct SceneBundle {
    SceneMeta meta;
    std::vector<SceneView> views;
    EventStream events;

    CameraView camera(int k) const {
        if (k < 0 || k >= static_cast<int>(views.size())) {
            throw InvalidArgument("view " + std::to_string(k) + " out of range [0, " +
                                  std::to_string(views.size()) + ")");
        }
        CameraView cam;
        cam.intrinsics = meta.intrinsics;
        cam.pose = views[static_cast<std::size_t>(k)].pose;
        cam.width = meta.width;
        cam.height = meta.height;
        cam.zNear = meta.zNear;
        return cam;
    }

    /// Events between view k - 1 and view k; empty for k = 0.
    EventStream eventsBefore(int k) const {
        if (k < 0 || k >= meta.nViews) {
            throw InvalidArgument("view " + std::to_string(k) + " out of range");
        }
        if (k == 0) {
            return EventStream(meta.width, meta.height, meta.tBegin, meta.tBegin);
        }
        const auto segments = segmentStream(events, meta.nViews - 1);
        return segments[static_cast<std::size_t>(k - 1)];
    }
};

namespace detail {

inline std::string indexed(const char *pattern, int k) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), pattern, k);
    return buf;
}

inline std::string framePath(int k) { return indexed("frames/frame_%04d.pgm", k); }
inline std::string depthPath(int k) { return indexed("depth/depth_%04d.bin", k); }
inline std::string maskPath(int k) { return indexed("masks/mask_%04d.pgm", k); }

inline const std::set<std::string> &metaKeys() {
    static const std::set<std::string> keys{"width", "height",   "fx",         "fy",
                                            "cx",    "cy",       "z_near",     "contrast_threshold",
                                            "d_max", "n_views",  "t_begin",    "frame_interval"};
    return keys;
}

} // namespace detail

inline std::string encodeMeta(const SceneMeta &m) {
    KeyValueConfig kv;
    kv.set("width", std::to_string(m.width));
    kv.set("height", std::to_string(m.height));
    kv.set("fx", m.intrinsics.fx);
    kv.set("fy", m.intrinsics.fy);
    kv.set("cx", m.intrinsics.cx);
    kv.set("cy", m.intrinsics.cy);
    kv.set("z_near", m.zNear);
    kv.set("contrast_threshold", m.contrastThreshold);
    kv.set("d_max", m.dMax);
    kv.set("n_views", std::to_string(m.nViews));
    kv.set("t_begin", std::to_string(m.tBegin));
    kv.set("frame_interval", std::to_string(m.frameInterval));
    return kv.serialize();
}

inline SceneMeta decodeMeta(std::string_view text, const std::string &origin) {
    SceneMeta m;
    try {
        const KeyValueConfig kv = KeyValueConfig::parse(text, origin);
        kv.requireKnownKeys(detail::metaKeys());
        m.width = static_cast<int>(kv.getInt("width"));
        m.height = static_cast<int>(kv.getInt("height"));
        m.intrinsics = {kv.getDouble("fx"), kv.getDouble("fy"), kv.getDouble("cx"), kv.getDouble("cy")};
        m.zNear = kv.getDouble("z_near");
        m.contrastThreshold = kv.getDouble("contrast_threshold");
        m.dMax = kv.getDouble("d_max");
        m.nViews = static_cast<int>(kv.getInt("n_views"));
        const long long tBegin = kv.getInt("t_begin");
        const long long interval = kv.getInt("frame_interval");
        if (tBegin < 0 || interval < 1) {
            throw DataError("t_begin must be >= 0 and frame_interval >= 1");
        }
        m.tBegin = static_cast<std::uint64_t>(tBegin);
        m.frameInterval = static_cast<std::uint64_t>(interval);
    } catch (const DataError &e) {
        const std::string what = e.what();
        throw DataError(what.rfind(origin, 0) == 0 ? what : origin + ": " + what);
    }
    auto invariant = [&](bool ok, const std::string &what) {
        if (!ok) {
            throw DataError(origin + ": invariant violated: " + what);
        }
    };
    invariant(m.width >= 1 && m.height >= 1 && m.width <= 65535 && m.height <= 65535,
              "resolution must be in [1, 65535]");
    invariant(m.intrinsics.fx > 0.0 && m.intrinsics.fy > 0.0 && std::isfinite(m.intrinsics.cx) &&
                  std::isfinite(m.intrinsics.cy),
              "focal lengths must be positive");
    invariant(m.zNear > 0.0, "z_near must be positive");
    invariant(m.contrastThreshold > 0.0 && std::isfinite(m.contrastThreshold),
              "contrast_threshold must be positive");
    invariant(m.dMax > 0.0 && std::isfinite(m.dMax), "d_max must be positive");
    invariant(m.nViews >= 1, "n_views must be at least 1");
    return m;
}

inline void saveScene(const SceneBundle &scene, const std::string &dir) {
    namespace fs = std::filesystem;
    for (const char *sub : {"frames", "depth", "masks"}) {
        fs::create_directories(fs::path(dir) / sub);
    }
    const fs::path root(dir);
    io::writeFile((root / "meta.txt").string(), encodeMeta(scene.meta));
    std::vector<Eigen::Matrix4d> poses;
    for (std::size_t k = 0; k < scene.views.size(); ++k) {
        const SceneView &v = scene.views[k];
        const int i = static_cast<int>(k);
        poses.push_back(v.pose);
        savePgm(v.frame, (root / detail::framePath(i)).string());
        saveFloatMap(v.depth, (root / detail::depthPath(i)).string());
        savePgm(v.mask, (root / detail::maskPath(i)).string());
    }
    io::writeFile((root / "poses.txt").string(), encodePoses(poses));
    saveEvents(scene.events, (root / "events.bin").string());
}

/// Loads and validates a scene bundle. Errors name the offending file and,
/// for consistency checks, the violated invariant.
inline SceneBundle loadScene(const std::string &dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    if (!fs::is_directory(root)) {
        throw DataError(dir + ": not a scene directory");
    }
    const std::string metaPath = (root / "meta.txt").string();
    SceneBundle scene;
    scene.meta = decodeMeta(io::readFile(metaPath), metaPath);
    const SceneMeta &m = scene.meta;

    const std::string posesPath = (root / "poses.txt").string();
    const auto poses = decodePoses(io::readFile(posesPath), posesPath);
    if (static_cast<int>(poses.size()) != m.nViews) {
        throw DataError(posesPath + ": invariant violated: n_views = " + std::to_string(m.nViews) +
                        " but " + std::to_string(poses.size()) + " poses");
    }
    for (std::size_t k = 0; k < poses.size(); ++k) {
        if (!detail::isRigid(poses[k])) {
            throw DataError(posesPath + ": invariant violated: pose " + std::to_string(k) +
                            " is not a rigid transform");
        }
    }

    auto checkShape = [&](const Image &img, const std::string &path) {
        if (img.width() != m.width || img.height() != m.height) {
            throw DataError(path + ": invariant violated: resolution " + std::to_string(img.width()) +
                            "x" + std::to_string(img.height()) + " does not match meta " +
                            std::to_string(m.width) + "x" + std::to_string(m.height));
        }
    };
    for (int k = 0; k < m.nViews; ++k) {
        SceneView v;
        v.pose = poses[static_cast<std::size_t>(k)];
        const std::string fp = (root / detail::framePath(k)).string();
        const std::string dp = (root / detail::depthPath(k)).string();
        const std::string mp = (root / detail::maskPath(k)).string();
        v.frame = loadPgm(fp);
        checkShape(v.frame, fp);
        v.depth = loadFloatMap(dp);
        checkShape(v.depth, dp);
        v.mask = loadPgm(mp);
        checkShape(v.mask, mp);
        for (std::size_t i = 0; i < v.depth.size(); ++i) {
            if (v.depth[i] < 0.0) {
                throw DataError(dp + ": invariant violated: negative depth");
            }
            if (v.mask[i] > 0.5 && !(v.depth[i] > 0.0)) {
                throw DataError(dp + ": invariant violated: foreground pixel without depth");
            }
        }
        scene.views.push_back(std::move(v));
    }
    if (fs::exists(root / detail::framePath(m.nViews))) {
        throw DataError((root / detail::framePath(m.nViews)).string() +
                        ": invariant violated: more frames than n_views");
    }
    const std::string ep = (root / "events.bin").string();
    scene.events = loadEvents(ep, m.tBegin, m.tEnd());
    if (scene.events.width() != m.width || scene.events.height() != m.height) {
        throw DataError(ep + ": invariant violated: sensor resolution does not match meta");
    }
    return scene;
}

// ---------------------------------------------------------------------------
// Synthetic bundles rendered from the analytic scenes.

inline constexpr double kDefaultLogEpsilon = 1e-3;
inline constexpr std::uint64_t kDefaultFrameInterval = 10'000'000;
inline constexpr std::uint64_t kDefaultSweepStart = 1'000'000;

/// Simulates events on log(I + eps) between consecutive frames, frame k being
/// captured at t_begin + k * interval. The result covers
/// [t_begin, t_begin + (n - 1) * interval).
inline EventStream simulateSweep(const std::vector<Image> &frames, double threshold,
                                 std::uint64_t tBegin = kDefaultSweepStart,
                                 std::uint64_t interval = kDefaultFrameInterval,
                                 double logEpsilon = kDefaultLogEpsilon) {
    if (frames.empty()) {
        throw InvalidArgument("simulateSweep needs at least one frame");
    }
    if (tBegin < 1 || interval < 2) {
        throw InvalidArgument("simulateSweep needs t_begin >= 1 and interval >= 2");
    }
    if (!(logEpsilon > 0.0)) {
        throw InvalidArgument("simulateSweep needs a positive log epsilon");
    }
    const int w = frames.front().width();
    const int h = frames.front().height();
    auto logFrame = [&](const Image &img) {
        Image out(img.width(), img.height());
        for (std::size_t i = 0; i < img.size(); ++i) {
            out[i] = std::log(img[i] + logEpsilon);
        }
        return out;
    };
    // Simulating over (t_k - 1, t_{k+1} - 1] yields the window [t_k, t_{k+1}).
    std::vector<Event> events;
    SimulatorState state = SimulatorState::zero(w, h, threshold);
    Image prev = logFrame(frames.front());
    for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
        requireSameShape(frames[k], frames[k + 1], "simulateSweep");
        Image next = logFrame(frames[k + 1]);
        const std::uint64_t t0 = tBegin + k * interval;
        auto [stream, carried] = simulateEvents(prev, next, t0 - 1, t0 + interval - 1, state);
        events.insert(events.end(), stream.events().begin(), stream.events().end());
        state = std::move(carried);
        prev = std::move(next);
    }
    return EventStream(w, h, tBegin, tBegin + (frames.size() - 1) * interval, std::move(events));
}

struct SyntheticBundleConfig {
    int variant = 0;
    int width = 64;
    int height = 64;
    int nViews = 8;
    double arc = std::numbers::pi / 4.0; ///< total orbit angle swept by the views
    double contrastThreshold = kDefaultContrastThreshold;
    double dMax = kDefaultDepthRange;
    std::uint64_t tBegin = kDefaultSweepStart;
    std::uint64_t frameInterval = kDefaultFrameInterval;
    double logEpsilon = kDefaultLogEpsilon; ///< events are simulated on log(I + eps)
};

/// Builds a bundle whose stored data is already quantized (frames and masks
/// to 1/255, depths to real32), so saving and reloading reproduces it.
inline SceneBundle makeSyntheticBundle(const SyntheticBundleConfig &cfg) {
    if (cfg.nViews < 1 || cfg.width < 1 || cfg.height < 1) {
        throw InvalidArgument("synthetic bundle needs at least one view and a positive resolution");
    }
    if (cfg.tBegin < 1 || cfg.frameInterval < 2) {
        throw InvalidArgument("synthetic bundle needs t_begin >= 1 and frame_interval >= 2");
    }
    const SyntheticScene shapes = makeSyntheticScene(cfg.variant);
    SceneBundle b;
    b.meta.width = cfg.width;
    b.meta.height = cfg.height;
    b.meta.intrinsics = defaultIntrinsics(cfg.width, cfg.height);
    b.meta.contrastThreshold = cfg.contrastThreshold;
    b.meta.dMax = cfg.dMax;
    b.meta.nViews = cfg.nViews;
    b.meta.tBegin = cfg.tBegin;
    b.meta.frameInterval = cfg.frameInterval;

    for (int k = 0; k < cfg.nViews; ++k) {
        const double angle =
            cfg.nViews == 1 ? 0.0 : cfg.arc * (static_cast<double>(k) / (cfg.nViews - 1) - 0.5);
        const CameraView cam = orbitCamera(b.meta.intrinsics, cfg.width, cfg.height, angle);
        const AnalyticView a = renderAnalytic(shapes, cam);
        SceneView v;
        v.pose = cam.pose;
        v.frame = Image(cfg.width, cfg.height);
        v.depth = Image(cfg.width, cfg.height);
        v.mask = Image(cfg.width, cfg.height);
        for (std::size_t i = 0; i < v.frame.size(); ++i) {
            v.frame[i] = quantize8(a.intensity[i]) / 255.0;
            v.depth[i] = static_cast<float>(a.depth[i]);
            v.mask[i] = a.mask[i] > 0.5 ? 1.0 : 0.0;
        }
        b.views.push_back(std::move(v));
    }

    std::vector<Image> frames;
    for (const SceneView &v : b.views) {
        frames.push_back(v.frame);
    }
    b.events = simulateSweep(frames, cfg.contrastThreshold, cfg.tBegin, cfg.frameInterval,
                             cfg.logEpsilon);
    return b;
}

} // namespace evgs
