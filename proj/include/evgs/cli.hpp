// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

// Command-line surface. runCli returns 0 on success, 1 on usage errors and 2
// on data errors.

#pragma once

#include "evgs/config.hpp"
#include "evgs/error.hpp"
#include "evgs/events.hpp"
#include "evgs/fitting.hpp"
#include "evgs/io.hpp"
#include "evgs/metrics.hpp"
#include "evgs/pipeline.hpp"
#include "evgs/rasterizer.hpp"
#include "evgs/scene.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace evgs {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// A well-formed command line whose values are unusable.
class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace cli {

namespace fs = std::filesystem;

/// Sorted `.pgm` files in `dir`, or in `dir/frames` when that exists.
inline std::vector<fs::path> listFrames(const fs::path &dir) {
    const fs::path root = fs::is_directory(dir / "frames") ? dir / "frames" : dir;
    if (!fs::is_directory(root)) {
        throw DataError(dir.string() + ": not a directory");
    }
    std::vector<fs::path> out;
    for (const auto &entry : fs::directory_iterator(root)) {
        if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline void requireView(const SceneBundle &scene, int k, const char *flag) {
    if (k < 0 || k >= scene.meta.nViews) {
        throw UsageError(std::string(flag) + " " + std::to_string(k) + " out of range [0, " +
                         std::to_string(scene.meta.nViews) + ")");
    }
}

struct SimulateArgs {
    std::string frames;
    std::string out;
    double threshold = kDefaultContrastThreshold;
    std::uint64_t tBegin = kDefaultSweepStart;
    std::uint64_t interval = kDefaultFrameInterval;
    double logEpsilon = kDefaultLogEpsilon;
};

inline void runSimulate(const SimulateArgs &a, std::ostream &out) {
    if (!(a.threshold > 0.0) || a.tBegin < 1 || a.interval < 2 || !(a.logEpsilon > 0.0)) {
        throw UsageError("--threshold and --eps must be positive, --t-begin >= 1, --interval >= 2");
    }
    const auto paths = listFrames(a.frames);
    if (paths.empty()) {
        throw DataError(a.frames + ": no .pgm frames found");
    }
    std::vector<Image> frames;
    for (const auto &p : paths) {
        frames.push_back(loadPgm(p.string()));
        if (!frames.back().sameShape(frames.front())) {
            throw DataError(p.string() + ": resolution differs from the first frame");
        }
    }
    const EventStream events = simulateSweep(frames, a.threshold, a.tBegin, a.interval, a.logEpsilon);
    saveEvents(events, a.out);
    out << "simulated " << events.size() << " events from " << frames.size() << " frames -> "
        << a.out << "\n";
}

struct VoxelizeArgs {
    std::string events;
    std::string out;
    int segments = kDefaultSegmentCount;
    int bins = kDefaultVoxelBins;
    std::vector<std::uint64_t> window;
};

inline void runVoxelize(const VoxelizeArgs &a, std::ostream &out) {
    if (a.segments < 1 || a.bins < 2) {
        throw UsageError("--segments must be >= 1 and --bins >= 2");
    }
    const EventStream stream =
        a.window.empty() ? loadEvents(a.events) : loadEvents(a.events, a.window[0], a.window[1]);
    std::vector<VoxelGrid> grids;
    for (const EventStream &segment : segmentStream(stream, a.segments)) {
        grids.push_back(voxelize(segment, a.bins));
    }
    saveVoxelGrids(grids, a.out);
    out << "voxelized " << stream.size() << " events into " << a.segments << " x " << a.bins
        << " bins -> " << a.out << "\n";
}

struct RenderArgs {
    std::string cloud;
    std::string scene;
    std::string out;
    int view = 0;
    double background = 0.0;
    int threads = 1;
};

inline void runRender(const RenderArgs &a, std::ostream &out) {
    const SceneBundle scene = loadScene(a.scene);
    requireView(scene, a.view, "--view");
    const GaussianCloud cloud = loadCloudPly(a.cloud);
    RasterConfig cfg;
    cfg.threads = a.threads;
    const RenderOutput r = renderForward(cloud, scene.camera(a.view), a.background, cfg);
    saveImage(r.image, a.out);
    out << "rendered " << cloud.size() << " primitives -> " << a.out << "\n";
}

struct CascadeArgs {
    std::string scene;
    std::string predictor = "oracle";
    std::string weights;
    std::string outCloud;
    std::string outImage;
    int view = 0;
    int target = -1;
    int bins = kDefaultVoxelBins;
    double background = 0.0;
    int threads = 1;
};

inline void runCascadeCommand(const CascadeArgs &a, std::ostream &out) {
    if (a.predictor == "linear" && a.weights.empty()) {
        throw UsageError("--predictor linear requires --weights");
    }
    if (a.bins < 2) {
        throw UsageError("--bins must be >= 2");
    }
    const SceneBundle scene = loadScene(a.scene);
    requireView(scene, a.view, "--view");
    const int n = scene.meta.nViews;
    const int target = a.target >= 0 ? a.target : (a.view + 1 < n ? a.view + 1 : std::max(a.view - 1, 0));
    requireView(scene, target, "--target");

    const SceneView &src = scene.views[static_cast<std::size_t>(a.view)];
    const EventStream current = scene.eventsBefore(a.view);
    const VoxelGrid ek = voxelize(current, a.bins);
    const VoxelGrid ekPrev =
        a.view >= 1 ? voxelize(scene.eventsBefore(a.view - 1), a.bins)
                    : VoxelGrid{Tensor3(a.bins, scene.meta.height, scene.meta.width)};
    const AccumFrame frame = accumulateFrames(current);

    Image gtDepth = src.depth;
    for (std::size_t i = 0; i < gtDepth.size(); ++i) {
        if (!(src.mask[i] > 0.5)) {
            gtDepth[i] = 0.0;
        }
    }
    PredictorSuite suite;
    try {
        suite = makeOracleSuite(gtDepth, src.frame, scene.meta.intrinsics, scene.meta.dMax);
    } catch (const InvalidArgument &e) {
        throw DataError(a.scene + ": " + e.what());
    }
    if (a.predictor == "linear") {
        const LinearPixelRegressor reg = loadLinearRegressor(a.weights);
        if (reg.bins() != a.bins || reg.featureChannels() != kDefaultFeatureChannels) {
            throw DataError(a.weights + ": weights expect " + std::to_string(reg.bins()) + " bins and " +
                            std::to_string(reg.featureChannels()) + " feature channels");
        }
        suite = withRegressor(suite, reg);
    }
    const CameraView cam = scene.camera(a.view);
    const CascadeResult r = runCascade(ek, ekPrev, frame, suite, cam, scene.meta.dMax);
    saveCloudPly(r.cloud, a.outCloud);

    RasterConfig cfg;
    cfg.threads = a.threads;
    const RenderOutput img = renderForward(r.cloud, scene.camera(target), a.background, cfg);
    saveImage(img.image, a.outImage);
    out << "cascade view " << a.view << ": " << r.cloud.size() << " primitives -> " << a.outCloud
        << "; target view " << target << " -> " << a.outImage << "\n";
}

struct FitArgs {
    std::string scene;
    std::string config;
    std::string outCloud;
    std::string outTrace;
    int view = 0;
    int primitives = 200;
    int iterations = 2000;
    std::uint64_t seed = 0;
    double background = 0.0;
    int threads = 1;
};

inline void runFit(const FitArgs &a, std::ostream &out) {
    if (a.primitives < 1 || a.iterations < 0) {
        throw UsageError("--n must be >= 1 and --iters >= 0");
    }
    const SceneBundle scene = loadScene(a.scene);
    requireView(scene, a.view, "--view");
    FitConfig cfg;
    cfg.primitives = a.primitives;
    cfg.iterations = a.iterations;
    cfg.seed = a.seed;
    cfg.background = a.background;
    cfg.raster.threads = a.threads;
    if (!a.config.empty()) {
        const KeyValueConfig kv = KeyValueConfig::load(a.config);
        try {
            kv.requireKnownKeys(trainingConfigKeys());
            lossWeightsFromConfig(kv);
            cfg.steps = fitStepsFromConfig(kv);
        } catch (const Error &e) {
            throw DataError(a.config + ": " + e.what());
        }
    }
    const FitResult r = fitGaussians(scene.views[static_cast<std::size_t>(a.view)].frame,
                                     scene.camera(a.view), cfg);
    saveCloudPly(r.cloud, a.outCloud);
    std::string trace;
    for (double v : r.lossTrace) {
        trace += io::formatNumber(v) + "\n";
    }
    io::writeFile(a.outTrace, trace);
    out << "fit " << a.primitives << " primitives, " << a.iterations << " iterations: loss "
        << r.lossTrace.front() << " -> " << r.lossTrace.back() << "\n";
}

struct EvalArgs {
    std::string pred;
    std::string gt;
    std::string out;
    bool depth = false;
};

/// Averages image metrics over matching frames and, with --depth, depth
/// metrics over matching depth maps (foreground = ground-truth depth > 0).
inline MetricReport evaluate(const EvalArgs &a) {
    const fs::path pred(a.pred);
    const fs::path gt(a.gt);
    MetricReport m;
    if (fs::is_regular_file(gt)) {
        if (a.depth) {
            throw UsageError("--depth needs --pred and --gt directories");
        }
        const ImageMetrics im = imageMetrics(loadImage(pred.string()), loadImage(gt.string()));
        m.psnr = im.psnr;
        m.ssim = im.ssim;
        return m;
    }
    const auto gtFrames = listFrames(gt);
    if (gtFrames.empty()) {
        throw DataError(a.gt + ": no .pgm frames found");
    }
    const bool nested = fs::is_directory(gt / "frames");
    for (const fs::path &g : gtFrames) {
        const fs::path p = (nested ? pred / "frames" : pred) / g.filename();
        const Image pi = loadPgm(p.string());
        const Image gi = loadPgm(g.string());
        if (!pi.sameShape(gi)) {
            throw DataError(p.string() + ": resolution differs from " + g.string());
        }
        const ImageMetrics im = imageMetrics(pi, gi);
        m.psnr += im.psnr;
        m.ssim += im.ssim;
    }
    m.psnr /= static_cast<double>(gtFrames.size());
    m.ssim /= static_cast<double>(gtFrames.size());
    if (a.depth) {
        std::vector<fs::path> depths;
        if (fs::is_directory(gt / "depth")) {
            for (const auto &entry : fs::directory_iterator(gt / "depth")) {
                if (entry.is_regular_file() && entry.path().extension() == ".bin") {
                    depths.push_back(entry.path());
                }
            }
        }
        std::sort(depths.begin(), depths.end());
        if (depths.empty()) {
            throw DataError(a.gt + ": no depth maps found under depth/");
        }
        for (const fs::path &g : depths) {
            const fs::path p = pred / "depth" / g.filename();
            const Image pd = loadFloatMap(p.string());
            const Image gd = loadFloatMap(g.string());
            if (!pd.sameShape(gd)) {
                throw DataError(p.string() + ": resolution differs from " + g.string());
            }
            Image mask(gd.width(), gd.height());
            for (std::size_t i = 0; i < gd.size(); ++i) {
                mask[i] = gd[i] > 0.0 ? 1.0 : 0.0;
            }
            DepthMetrics dm;
            try {
                dm = depthMetrics(pd, gd, mask);
            } catch (const InvalidArgument &e) {
                throw DataError(g.string() + ": " + e.what());
            }
            m.rmse += dm.rmse;
            m.mae += dm.mae;
            m.absRel += dm.absRel;
            m.sqRel += dm.sqRel;
        }
        const double n = static_cast<double>(depths.size());
        m.rmse /= n;
        m.mae /= n;
        m.absRel /= n;
        m.sqRel /= n;
        m.hasDepth = true;
    }
    return m;
}

inline void runEval(const EvalArgs &a, std::ostream &out) {
    const std::string report = encodeMetricReport(evaluate(a));
    if (!a.out.empty()) {
        io::writeFile(a.out, report);
    }
    out << report;
}

} // namespace cli

/// Parses `args` (without the program name) and runs the chosen subcommand.
inline int runCli(const std::vector<std::string> &args, std::ostream &out = std::cout,
                  std::ostream &err = std::cerr) {
    CLI::App app{"Event-camera Gaussian splatting toolkit", "evgs"};
    app.require_subcommand(1);
    app.fallthrough(false);

    cli::SimulateArgs sim;
    auto *simulate = app.add_subcommand("simulate", "Simulate an event stream from a frame sequence");
    simulate->add_option("--frames", sim.frames, "Directory of .pgm frames (or a scene directory)")->required();
    simulate->add_option("--out", sim.out, "Output event file")->required();
    simulate->add_option("--threshold", sim.threshold, "Contrast threshold C")->capture_default_str();
    simulate->add_option("--t-begin", sim.tBegin, "Timestamp of the first frame in ns")->capture_default_str();
    simulate->add_option("--interval", sim.interval, "Time between frames in ns")->capture_default_str();
    simulate->add_option("--eps", sim.logEpsilon, "Offset inside log(I + eps)")->capture_default_str();

    cli::VoxelizeArgs vox;
    auto *voxel = app.add_subcommand("voxelize", "Split an event file into segments and voxelize each");
    voxel->add_option("--events", vox.events, "Input event file")->required();
    voxel->add_option("--out", vox.out, "Output voxel tensor file")->required();
    voxel->add_option("--segments", vox.segments, "Number of temporal segments")->capture_default_str();
    voxel->add_option("--bins", vox.bins, "Voxel bins per segment")->capture_default_str();
    voxel->add_option("--window", vox.window, "Stream window T_BEGIN T_END in ns (default: span of the events)")
        ->expected(2);

    cli::RenderArgs ren;
    auto *render = app.add_subcommand("render", "Render a Gaussian cloud from a scene view");
    render->add_option("--cloud", ren.cloud, "Input PLY cloud")->required();
    render->add_option("--scene", ren.scene, "Scene directory")->required();
    render->add_option("--view", ren.view, "View index")->capture_default_str();
    render->add_option("--bg", ren.background, "Background intensity")->capture_default_str();
    render->add_option("--out", ren.out, "Output image (.pgm, otherwise real32 map)")->required();
    render->add_option("--threads", ren.threads, "Render threads, 0 = all cores")->capture_default_str();

    cli::CascadeArgs cas;
    auto *cascade = app.add_subcommand("cascade", "Run the depth, intensity and Gaussian cascade on a view");
    cascade->add_option("--scene", cas.scene, "Scene directory")->required();
    cascade->add_option("--predictor", cas.predictor, "Predictor suite")
        ->check(CLI::IsMember({"oracle", "linear"}))
        ->capture_default_str();
    cascade->add_option("--weights", cas.weights, "Linear regressor weights (for --predictor linear)");
    cascade->add_option("--view", cas.view, "Source view index")->capture_default_str();
    cascade->add_option("--target", cas.target, "Target view to render (default: next view)");
    cascade->add_option("--bins", cas.bins, "Voxel bins")->capture_default_str();
    cascade->add_option("--bg", cas.background, "Background intensity")->capture_default_str();
    cascade->add_option("--out-cloud", cas.outCloud, "Output PLY cloud")->required();
    cascade->add_option("--out-image", cas.outImage, "Output target-view rendering")->required();
    cascade->add_option("--threads", cas.threads, "Render threads, 0 = all cores")->capture_default_str();

    cli::FitArgs fit;
    auto *fitCmd = app.add_subcommand("fit", "Fit Gaussians to one view by gradient descent");
    fitCmd->add_option("--scene", fit.scene, "Scene directory")->required();
    fitCmd->add_option("--view", fit.view, "View index")->capture_default_str();
    fitCmd->add_option("--n", fit.primitives, "Number of primitives")->capture_default_str();
    fitCmd->add_option("--iters", fit.iterations, "Gradient steps")->capture_default_str();
    fitCmd->add_option("--seed", fit.seed, "Initialization seed")->capture_default_str();
    fitCmd->add_option("--bg", fit.background, "Background intensity")->capture_default_str();
    fitCmd->add_option("--config", fit.config, "key=value file with training settings");
    fitCmd->add_option("--out-cloud", fit.outCloud, "Output PLY cloud")->required();
    fitCmd->add_option("--out-trace", fit.outTrace, "Output loss trace, one value per line")->required();
    fitCmd->add_option("--threads", fit.threads, "Render threads, 0 = all cores")->capture_default_str();

    cli::EvalArgs ev;
    auto *evalCmd = app.add_subcommand("eval", "Compare predictions with ground truth");
    evalCmd->add_option("--pred", ev.pred, "Prediction image or directory")->required();
    evalCmd->add_option("--gt", ev.gt, "Ground-truth image or directory")->required();
    evalCmd->add_flag("--depth", ev.depth, "Also compare depth maps under depth/");
    evalCmd->add_option("--out", ev.out, "Write the report to this file as well");

    app.allow_extras();
    for (CLI::App *sub : app.get_subcommands({})) {
        sub->fallthrough(false);
        sub->allow_extras();
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::Success &e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError &e) {
        std::string message = e.what();
        std::vector<std::string> leftovers = app.remaining();
        for (const CLI::App *sub : app.get_subcommands()) {
            const auto more = sub->remaining();
            leftovers.insert(leftovers.end(), more.begin(), more.end());
        }
        for (const std::string &t : leftovers) {
            if (t.rfind('-', 0) == 0) {
                message = "unrecognized argument '" + t + "'";
                break;
            }
        }
        err << "usage error: " << message << "\n";
        if (const auto *sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
            err << "run 'evgs " << sub->get_name() << " --help' for usage\n";
        } else {
            err << "run 'evgs --help' for usage\n";
        }
        return kExitUsage;
    }
    std::vector<std::string> extras = app.remaining();
    CLI::App *chosen = app.get_subcommands().front();
    if (extras.empty()) {
        extras = chosen->remaining();
    }
    if (!extras.empty()) {
        const auto flag = std::find_if(extras.begin(), extras.end(),
                                       [](const std::string &t) { return t.rfind('-', 0) == 0; });
        err << "usage error: unrecognized argument '" << (flag != extras.end() ? *flag : extras.front())
            << "'\nrun 'evgs " << chosen->get_name() << " --help' for usage\n";
        return kExitUsage;
    }

    try {
        if (simulate->parsed()) {
            cli::runSimulate(sim, out);
        } else if (voxel->parsed()) {
            cli::runVoxelize(vox, out);
        } else if (render->parsed()) {
            cli::runRender(ren, out);
        } else if (cascade->parsed()) {
            cli::runCascadeCommand(cas, out);
        } else if (fitCmd->parsed()) {
            cli::runFit(fit, out);
        } else if (evalCmd->parsed()) {
            cli::runEval(ev, out);
        }
    } catch (const UsageError &e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

inline int runCli(int argc, const char *const *argv, std::ostream &out = std::cout,
                  std::ostream &err = std::cerr) {
    return runCli(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

} // namespace evgs
