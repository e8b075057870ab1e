// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evgs/error.hpp"
#include "evgs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace evgs {

/// One sensor event: a log-intensity change of +/-C at pixel (x, y) at time t.
struct Event {
    std::uint64_t t = 0; ///< nanoseconds
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int8_t p = 1; ///< +1 or -1

    friend bool operator==(const Event &, const Event &) = default;
};

/// A time-ordered event sequence over the half-open window [tBegin, tEnd).
///
/// The constructor validates every invariant, so a live EventStream is always
/// well formed.
class EventStream {
  public:
    EventStream() = default;

    EventStream(int width, int height, std::uint64_t tBegin, std::uint64_t tEnd,
                std::vector<Event> events = {})
        : width_(width), height_(height), tBegin_(tBegin), tEnd_(tEnd),
          events_(std::move(events)) {
        if (width <= 0 || height <= 0 || width > 65535 || height > 65535) {
            throw InvalidArgument("event stream resolution must be in [1, 65535]");
        }
        if (tBegin > tEnd) {
            throw InvalidArgument("event stream window has t_begin > t_end");
        }
        for (std::size_t i = 0; i < events_.size(); ++i) {
            const Event &e = events_[i];
            if (e.p != 1 && e.p != -1) {
                throw InvalidArgument("event " + std::to_string(i) + " has polarity " +
                                      std::to_string(e.p) + ", expected +1 or -1");
            }
            if (e.x >= width || e.y >= height) {
                throw InvalidArgument("event " + std::to_string(i) + " lies outside the " +
                                      std::to_string(width) + "x" + std::to_string(height) +
                                      " sensor");
            }
            if (e.t < tBegin || e.t >= tEnd) {
                throw InvalidArgument("event " + std::to_string(i) +
                                      " timestamp outside [t_begin, t_end)");
            }
            if (i > 0 && e.t < events_[i - 1].t) {
                throw InvalidArgument("event timestamps are not sorted at index " +
                                      std::to_string(i));
            }
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::uint64_t tBegin() const { return tBegin_; }
    std::uint64_t tEnd() const { return tEnd_; }
    std::uint64_t duration() const { return tEnd_ - tBegin_; }
    const std::vector<Event> &events() const { return events_; }
    std::size_t size() const { return events_.size(); }
    bool empty() const { return events_.empty(); }

    friend bool operator==(const EventStream &, const EventStream &) = default;

  private:
    int width_ = 1;
    int height_ = 1;
    std::uint64_t tBegin_ = 0;
    std::uint64_t tEnd_ = 0;
    std::vector<Event> events_;
};

/// Temporal voxel grid, channels-first (bins, H, W).
struct VoxelGrid {
    Tensor3 data;

    int bins() const { return data.dim(0); }
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
};

/// Per-pixel event statistics, channels-first (3, H, W):
/// positive count, negative count, signed polarity sum.
struct AccumFrame {
    Tensor3 data;

    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
};

inline constexpr int kDefaultVoxelBins = 5;
inline constexpr int kDefaultSegmentCount = 201;
inline constexpr double kDefaultContrastThreshold = 0.2;

/// Deposits each event's polarity into temporal bins with a tent kernel.
///
/// Event i lands at t* = (B - 1) (t_i - t_begin) / (t_end - t_begin) and adds
/// p_i * max(0, 1 - |n - t*|) to bin n at its pixel.
inline VoxelGrid voxelize(const EventStream &stream, int bins = kDefaultVoxelBins) {
    if (bins < 2) {
        throw InvalidArgument("voxelize needs at least 2 bins, got " + std::to_string(bins));
    }
    VoxelGrid grid{Tensor3(bins, stream.height(), stream.width())};
    if (stream.empty()) {
        return grid;
    }
    if (stream.duration() == 0) {
        throw InvalidArgument("voxelize: degenerate time window with a non-empty stream");
    }

    const double scale = static_cast<double>(bins - 1) / static_cast<double>(stream.duration());
    for (const Event &e : stream.events()) {
        const double tStar = scale * static_cast<double>(e.t - stream.tBegin());
        const int lower = std::clamp(static_cast<int>(std::floor(tStar)), 0, bins - 1);
        const int upper = std::min(lower + 1, bins - 1);
        for (int n = lower; n <= upper; ++n) {
            const double w = std::max(0.0, 1.0 - std::abs(static_cast<double>(n) - tStar));
            grid.data(n, e.y, e.x) += static_cast<double>(e.p) * w;
        }
    }
    return grid;
}

inline AccumFrame accumulateFrames(const EventStream &stream) {
    AccumFrame frame{Tensor3(3, stream.height(), stream.width())};
    for (const Event &e : stream.events()) {
        frame.data(e.p > 0 ? 0 : 1, e.y, e.x) += 1.0;
        frame.data(2, e.y, e.x) += static_cast<double>(e.p);
    }
    return frame;
}

/// ΔL(x, y) = C * (signed polarity sum at (x, y)).
inline Image integrateEvents(const EventStream &stream, double threshold) {
    if (!(threshold > 0.0)) {
        throw InvalidArgument("contrast threshold must be positive");
    }
    Image sum(stream.width(), stream.height(), 0.0);
    for (const Event &e : stream.events()) {
        sum(e.x, e.y) += static_cast<double>(e.p);
    }
    for (double &v : sum.values()) {
        v *= threshold;
    }
    return sum;
}

/// Splits [t_begin, t_end) into `count` contiguous windows of equal duration
/// (up to integer-nanosecond flooring). Boundary events go to the later window.
inline std::vector<EventStream> segmentStream(const EventStream &stream, int count) {
    if (count < 1) {
        throw InvalidArgument("segment count must be at least 1");
    }
    const std::uint64_t n = static_cast<std::uint64_t>(count);
    const std::uint64_t quotient = stream.duration() / n;
    const std::uint64_t remainder = stream.duration() % n;
    auto boundary = [&](std::uint64_t k) {
        return stream.tBegin() + k * quotient + (k * remainder) / n;
    };

    std::vector<EventStream> segments;
    segments.reserve(n);
    const auto &events = stream.events();
    auto cursor = events.begin();
    for (std::uint64_t k = 0; k < n; ++k) {
        const std::uint64_t lo = boundary(k);
        const std::uint64_t hi = k + 1 == n ? stream.tEnd() : boundary(k + 1);
        auto last = std::lower_bound(cursor, events.end(), hi,
                                     [](const Event &e, std::uint64_t t) { return e.t < t; });
        segments.emplace_back(stream.width(), stream.height(), lo, hi,
                              std::vector<Event>(cursor, last));
        cursor = last;
    }
    return segments;
}

/// Per-pixel residual of log-intensity change not yet emitted as events.
struct SimulatorState {
    Image residual;
    double threshold = kDefaultContrastThreshold;

    static SimulatorState zero(int width, int height,
                               double threshold = kDefaultContrastThreshold) {
        return {Image(width, height, 0.0), threshold};
    }
};

/// Emits events so that C * (polarity sum) tracks the log-intensity change.
///
/// Per pixel d = L_next - L_prev + residual yields floor(|d| / C) events of
/// sign(d), spread uniformly over (t_prev, t_next]. The returned stream covers
/// [t_prev + 1, t_next + 1) and is ordered by (t, y, x).
inline std::pair<EventStream, SimulatorState>
simulateEvents(const Image &logPrev, const Image &logNext, std::uint64_t tPrev,
               std::uint64_t tNext, const SimulatorState &state) {
    requireSameShape(logPrev, logNext, "simulateEvents");
    if (tNext <= tPrev) {
        throw InvalidArgument("simulateEvents needs t_next > t_prev");
    }
    if (!(state.threshold > 0.0) || !std::isfinite(state.threshold)) {
        throw InvalidArgument("simulateEvents needs a positive finite threshold");
    }
    const int width = logPrev.width();
    const int height = logPrev.height();
    if (!state.residual.empty() && !state.residual.sameShape(logPrev)) {
        throw ShapeError("simulateEvents: residual shape mismatch");
    }

    SimulatorState next{Image(width, height, 0.0), state.threshold};
    const double c = state.threshold;
    const std::uint64_t span = tNext - tPrev;

    struct Keyed {
        Event event;
        std::size_t pixel;
    };
    std::vector<Keyed> emitted;

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double prev = logPrev(x, y);
            const double cur = logNext(x, y);
            if (!std::isfinite(prev) || !std::isfinite(cur)) {
                throw InvalidArgument("simulateEvents: non-finite log intensity at (" +
                                      std::to_string(x) + ", " + std::to_string(y) + ")");
            }
            const double carried = state.residual.empty() ? 0.0 : state.residual(x, y);
            const double d = cur - prev + carried;
            const double sign = d < 0.0 ? -1.0 : 1.0;
            std::uint64_t count = static_cast<std::uint64_t>(std::floor(std::abs(d) / c));
            double rest = d - sign * static_cast<double>(count) * c;
            // floor(|d|/C) can land one short when the division rounds down.
            while (std::abs(rest) >= c && sign * rest > 0.0) {
                ++count;
                rest = d - sign * static_cast<double>(count) * c;
            }
            next.residual(x, y) = rest;

            const std::uint64_t q = span / std::max<std::uint64_t>(count, 1);
            const std::uint64_t r = span % std::max<std::uint64_t>(count, 1);
            for (std::uint64_t j = 1; j <= count; ++j) {
                // t_prev + ceil(j * span / count) without overflow.
                const std::uint64_t offset = j * q + (j * r + count - 1) / count;
                Event e;
                e.t = tPrev + offset;
                e.x = static_cast<std::uint16_t>(x);
                e.y = static_cast<std::uint16_t>(y);
                e.p = sign > 0.0 ? std::int8_t{1} : std::int8_t{-1};
                emitted.push_back({e, logPrev.index(x, y)});
            }
        }
    }

    std::stable_sort(emitted.begin(), emitted.end(), [](const Keyed &a, const Keyed &b) {
        return a.event.t != b.event.t ? a.event.t < b.event.t : a.pixel < b.pixel;
    });
    std::vector<Event> events;
    events.reserve(emitted.size());
    for (const Keyed &k : emitted) {
        events.push_back(k.event);
    }
    return {EventStream(width, height, tPrev + 1, tNext + 1, std::move(events)),
            std::move(next)};
}

} // namespace evgs
