// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

// File formats. Every binary format is little-endian with fixed-size records;
// loaders reject truncated files and trailing bytes.

#pragma once

#include "evgs/config.hpp"
#include "evgs/error.hpp"
#include "evgs/events.hpp"
#include "evgs/gaussian.hpp"
#include "evgs/pipeline.hpp"
#include "evgs/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace evgs {

namespace io {

inline std::string readFile(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void writeFile(const std::string &path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw DataError("write failed for " + path);
    }
}

/// Appends little-endian scalars.
class ByteWriter {
  public:
    template <typename T>
    void put(T value) {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                     std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                        std::conditional_t<sizeof(T) == 2,
                                                                           std::uint16_t, std::uint8_t>>>;
        auto bits = std::bit_cast<U>(value);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            bytes_.push_back(static_cast<char>(bits & 0xFF));
            bits = static_cast<U>(bits >> 8);
        }
    }
    void raw(std::string_view s) { bytes_.append(s); }
    const std::string &bytes() const { return bytes_; }

  private:
    std::string bytes_;
};

/// Reads little-endian scalars; every overrun names the file.
class ByteReader {
  public:
    ByteReader(std::string_view bytes, std::string origin)
        : bytes_(bytes), origin_(std::move(origin)) {}

    template <typename T>
    T get() {
        need(sizeof(T), "value");
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                     std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                        std::conditional_t<sizeof(T) == 2,
                                                                           std::uint16_t, std::uint8_t>>>;
        U bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            bits |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i]))
                                   << (8 * i));
        }
        pos_ += sizeof(T);
        return std::bit_cast<T>(bits);
    }

    std::string_view raw(std::size_t n) {
        need(n, "bytes");
        const auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

    void expectEnd() const {
        if (pos_ != bytes_.size()) {
            throw DataError(origin_ + ": corrupt file, " + std::to_string(bytes_.size() - pos_) +
                            " trailing bytes");
        }
    }

    [[noreturn]] void fail(const std::string &what) const {
        throw DataError(origin_ + ": corrupt file, " + what);
    }

  private:
    void need(std::size_t n, const char *what) const {
        if (bytes_.size() - pos_ < n) {
            fail(std::string("truncated while reading ") + what);
        }
    }

    std::string_view bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

inline std::string formatNumber(double v) { return KeyValueConfig::formatNumber(v); }

} // namespace io

// ---------------------------------------------------------------------------
// Events: "EVGGSEVT", u16 W, u16 H, u32 count, then 16-byte records
// {u64 t_ns, u16 x, u16 y, i8 polarity, 3 zero bytes}.

inline constexpr std::string_view kEventMagic = "EVGGSEVT";
inline constexpr std::size_t kEventHeaderSize = 16;
inline constexpr std::size_t kEventRecordSize = 16;

inline std::string encodeEvents(const EventStream &stream) {
    if (stream.size() > 0xFFFFFFFFull) {
        throw InvalidArgument("event file holds at most 2^32 - 1 events");
    }
    io::ByteWriter w;
    w.raw(kEventMagic);
    w.put(static_cast<std::uint16_t>(stream.width()));
    w.put(static_cast<std::uint16_t>(stream.height()));
    w.put(static_cast<std::uint32_t>(stream.size()));
    for (const Event &e : stream.events()) {
        w.put(e.t);
        w.put(e.x);
        w.put(e.y);
        w.put(e.p);
        w.raw(std::string_view("\0\0\0", 3));
    }
    return w.bytes();
}

/// Raw contents of an event file, before a time window is attached.
struct EventFile {
    int width = 0;
    int height = 0;
    std::vector<Event> events;
};

inline EventFile decodeEvents(std::string_view bytes, const std::string &origin) {
    if (bytes.size() < kEventHeaderSize) {
        throw DataError(origin + ": corrupt file, shorter than the event header");
    }
    if ((bytes.size() - kEventHeaderSize) % kEventRecordSize != 0) {
        throw DataError(origin + ": corrupt file, size is not a whole number of event records");
    }
    io::ByteReader r(bytes, origin);
    if (r.raw(8) != kEventMagic) {
        r.fail("bad magic, expected EVGGSEVT");
    }
    EventFile f;
    f.width = r.get<std::uint16_t>();
    f.height = r.get<std::uint16_t>();
    const std::uint32_t count = r.get<std::uint32_t>();
    if (r.remaining() != static_cast<std::size_t>(count) * kEventRecordSize) {
        r.fail("header declares " + std::to_string(count) + " events but the file holds " +
               std::to_string(r.remaining() / kEventRecordSize));
    }
    f.events.resize(count);
    for (Event &e : f.events) {
        e.t = r.get<std::uint64_t>();
        e.x = r.get<std::uint16_t>();
        e.y = r.get<std::uint16_t>();
        e.p = r.get<std::int8_t>();
        if (r.raw(3) != std::string_view("\0\0\0", 3)) {
            r.fail("non-zero padding in event record");
        }
    }
    r.expectEnd();
    return f;
}

inline void saveEvents(const EventStream &stream, const std::string &path) {
    io::writeFile(path, encodeEvents(stream));
}

/// Loads an event file over the window [tBegin, tEnd).
inline EventStream loadEvents(const std::string &path, std::uint64_t tBegin, std::uint64_t tEnd) {
    EventFile f = decodeEvents(io::readFile(path), path);
    try {
        return EventStream(f.width, f.height, tBegin, tEnd, std::move(f.events));
    } catch (const InvalidArgument &e) {
        throw DataError(path + ": " + e.what());
    }
}

/// Loads an event file whose window is not recorded elsewhere: it spans the
/// first through the last timestamp, [t_first, t_last + 1), or [0, 1) when
/// the file is empty.
inline EventStream loadEvents(const std::string &path) {
    EventFile f = decodeEvents(io::readFile(path), path);
    const std::uint64_t lo = f.events.empty() ? 0 : f.events.front().t;
    const std::uint64_t hi = f.events.empty() ? 1 : f.events.back().t + 1;
    try {
        return EventStream(f.width, f.height, lo, hi, std::move(f.events));
    } catch (const InvalidArgument &e) {
        throw DataError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Voxel tensors: "EVGGSVOX", u32 segments, u32 bins, u32 H, u32 W, then
// real32 values in (segment, bin, y, x) order.

inline constexpr std::string_view kVoxelMagic = "EVGGSVOX";

inline void saveVoxelGrids(const std::vector<VoxelGrid> &grids, const std::string &path) {
    io::ByteWriter w;
    w.raw(kVoxelMagic);
    const int bins = grids.empty() ? 0 : grids.front().bins();
    const int h = grids.empty() ? 0 : grids.front().height();
    const int wd = grids.empty() ? 0 : grids.front().width();
    w.put(static_cast<std::uint32_t>(grids.size()));
    w.put(static_cast<std::uint32_t>(bins));
    w.put(static_cast<std::uint32_t>(h));
    w.put(static_cast<std::uint32_t>(wd));
    for (const VoxelGrid &g : grids) {
        if (!g.data.hasShape(bins, h, wd)) {
            throw ShapeError("saveVoxelGrids: grids have differing shapes");
        }
        for (double v : g.data.values()) {
            w.put(static_cast<float>(v));
        }
    }
    io::writeFile(path, w.bytes());
}

inline std::vector<VoxelGrid> loadVoxelGrids(const std::string &path) {
    const std::string bytes = io::readFile(path);
    io::ByteReader r(bytes, path);
    if (r.raw(8) != kVoxelMagic) {
        r.fail("bad magic, expected EVGGSVOX");
    }
    const std::uint32_t n = r.get<std::uint32_t>();
    const std::uint32_t bins = r.get<std::uint32_t>();
    const std::uint32_t h = r.get<std::uint32_t>();
    const std::uint32_t w = r.get<std::uint32_t>();
    const std::uint64_t values = std::uint64_t{n} * bins * h * w;
    if (r.remaining() != values * 4) {
        r.fail("payload size does not match the declared shape");
    }
    std::vector<VoxelGrid> out(n);
    for (VoxelGrid &g : out) {
        g.data = Tensor3(static_cast<int>(bins), static_cast<int>(h), static_cast<int>(w));
        for (double &v : g.data.values()) {
            v = r.get<float>();
        }
    }
    r.expectEnd();
    return out;
}

// ---------------------------------------------------------------------------
// 8-bit binary PGM ("P5", maxval 255). Values map to [0, 1] by v / 255.

inline std::uint8_t quantize8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::string encodePgm(const Image &img) {
    std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) +
                      "\n255\n";
    out.reserve(out.size() + img.size());
    for (double v : img.values()) {
        out.push_back(static_cast<char>(quantize8(v)));
    }
    return out;
}

inline void savePgm(const Image &img, const std::string &path) {
    io::writeFile(path, encodePgm(img));
}

inline Image decodePgm(std::string_view bytes, const std::string &origin) {
    std::size_t pos = 0;
    auto fail = [&](const std::string &what) -> void {
        throw DataError(origin + ": corrupt PGM, " + what);
    };
    auto skipSpace = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&] {
        skipSpace();
        long value = 0;
        const auto res = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), value);
        if (res.ec != std::errc{} || value < 0) {
            fail("bad header field");
        }
        pos = static_cast<std::size_t>(res.ptr - bytes.data());
        return value;
    };
    if (bytes.substr(0, 2) != "P5") {
        fail("expected P5 magic");
    }
    pos = 2;
    const long w = number();
    const long h = number();
    const long maxval = number();
    if (maxval != 255) {
        fail("only 8-bit (maxval 255) images are supported");
    }
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        fail("missing whitespace after header");
    }
    ++pos;
    const std::size_t expected = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() - pos != expected) {
        fail(bytes.size() - pos < expected ? "truncated pixel data" : "trailing bytes after pixel data");
    }
    Image img(static_cast<int>(w), static_cast<int>(h));
    for (std::size_t i = 0; i < expected; ++i) {
        img[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
    }
    return img;
}

inline Image loadPgm(const std::string &path) { return decodePgm(io::readFile(path), path); }

// ---------------------------------------------------------------------------
// Real32 maps (depth maps and float images): u32 W, u32 H, then W·H real32
// values in row-major order.

inline void saveFloatMap(const Image &img, const std::string &path) {
    io::ByteWriter w;
    w.put(static_cast<std::uint32_t>(img.width()));
    w.put(static_cast<std::uint32_t>(img.height()));
    for (double v : img.values()) {
        w.put(static_cast<float>(v));
    }
    io::writeFile(path, w.bytes());
}

inline Image loadFloatMap(const std::string &path) {
    const std::string bytes = io::readFile(path);
    io::ByteReader r(bytes, path);
    const std::uint32_t w = r.get<std::uint32_t>();
    const std::uint32_t h = r.get<std::uint32_t>();
    if (w > 65535 || h > 65535 || r.remaining() != std::size_t{w} * h * 4) {
        r.fail("payload size does not match " + std::to_string(w) + "x" + std::to_string(h));
    }
    Image img(static_cast<int>(w), static_cast<int>(h));
    for (double &v : img.values()) {
        v = r.get<float>();
        if (!std::isfinite(v)) {
            r.fail("non-finite value");
        }
    }
    r.expectEnd();
    return img;
}

/// Writes `.pgm` paths as PGM and anything else as a real32 map.
inline void saveImage(const Image &img, const std::string &path) {
    if (std::filesystem::path(path).extension() == ".pgm") {
        savePgm(img, path);
    } else {
        saveFloatMap(img, path);
    }
}

inline Image loadImage(const std::string &path) {
    if (std::filesystem::path(path).extension() == ".pgm") {
        return loadPgm(path);
    }
    return loadFloatMap(path);
}

// ---------------------------------------------------------------------------
// Poses: one camera-to-world matrix per line, 16 row-major numbers separated
// by single spaces, each in shortest round-trip form.

inline std::string encodePoses(const std::vector<Eigen::Matrix4d> &poses) {
    std::string out;
    for (const Eigen::Matrix4d &p : poses) {
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) {
                if (r + c > 0) {
                    out += ' ';
                }
                out += io::formatNumber(p(r, c));
            }
        }
        out += '\n';
    }
    return out;
}

inline std::vector<Eigen::Matrix4d> decodePoses(std::string_view text, const std::string &origin) {
    std::vector<Eigen::Matrix4d> poses;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        std::istringstream fields(line);
        std::string token;
        std::vector<double> values;
        while (fields >> token) {
            double v = 0.0;
            const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
            if (res.ec != std::errc{} || res.ptr != token.data() + token.size()) {
                throw DataError(origin + ":" + std::to_string(lineNo) + ": bad number '" + token + "'");
            }
            values.push_back(v);
        }
        if (values.size() != 16) {
            throw DataError(origin + ":" + std::to_string(lineNo) + ": expected 16 numbers, got " +
                            std::to_string(values.size()));
        }
        Eigen::Matrix4d p;
        for (int i = 0; i < 16; ++i) {
            p(i / 4, i % 4) = values[static_cast<std::size_t>(i)];
        }
        poses.push_back(p);
    }
    return poses;
}

// ---------------------------------------------------------------------------
// Binary little-endian PLY with real32 x, y, z, intensity, opacity,
// scale_0..2, rot_0..3 per vertex.

inline constexpr const char *kPlyProperties[] = {"x",       "y",       "z",       "intensity",
                                                 "opacity", "scale_0", "scale_1", "scale_2",
                                                 "rot_0",   "rot_1",   "rot_2",   "rot_3"};

inline std::string plyHeader(std::size_t count) {
    std::string h = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(count) + "\n";
    for (const char *p : kPlyProperties) {
        h += std::string("property float ") + p + "\n";
    }
    return h + "end_header\n";
}

inline void saveCloudPly(const GaussianCloud &cloud, const std::string &path) {
    io::ByteWriter w;
    w.raw(plyHeader(cloud.size()));
    for (const GaussianPrimitive &g : cloud) {
        validatePrimitive(g);
        const double values[12] = {g.mean.x(),     g.mean.y(),     g.mean.z(),     g.intensity,
                                   g.opacity,      g.scale[0],     g.scale[1],     g.scale[2],
                                   g.rotation[0],  g.rotation[1],  g.rotation[2],  g.rotation[3]};
        for (double v : values) {
            w.put(static_cast<float>(v));
        }
    }
    io::writeFile(path, w.bytes());
}

/// Loads a cloud written by saveCloudPly. Rotations are renormalized and
/// opacities kept inside (0, 1) after the real32 round trip.
inline GaussianCloud loadCloudPly(const std::string &path) {
    const std::string bytes = io::readFile(path);
    const auto end = bytes.find("end_header\n");
    if (end == std::string::npos) {
        throw DataError(path + ": corrupt PLY, missing end_header");
    }
    const std::string header = bytes.substr(0, end + 11);
    std::istringstream in(header);
    std::string line;
    std::size_t count = 0;
    std::vector<std::string> props;
    bool sawFormat = false;
    std::getline(in, line);
    if (line != "ply") {
        throw DataError(path + ": corrupt PLY, missing magic");
    }
    while (std::getline(in, line) && line != "end_header") {
        std::istringstream f(line);
        std::string kw;
        f >> kw;
        if (kw == "format") {
            std::string fmt, ver;
            f >> fmt >> ver;
            if (fmt != "binary_little_endian") {
                throw DataError(path + ": only binary_little_endian PLY is supported");
            }
            sawFormat = true;
        } else if (kw == "element") {
            std::string name;
            f >> name >> count;
            if (name != "vertex" || !f) {
                throw DataError(path + ": corrupt PLY, expected a single vertex element");
            }
        } else if (kw == "property") {
            std::string type, name;
            f >> type >> name;
            if (type != "float") {
                throw DataError(path + ": property '" + name + "' must be float");
            }
            props.push_back(name);
        } else if (kw != "comment") {
            throw DataError(path + ": corrupt PLY, unexpected header line '" + line + "'");
        }
    }
    if (!sawFormat || props != std::vector<std::string>(std::begin(kPlyProperties), std::end(kPlyProperties))) {
        throw DataError(path + ": PLY properties do not match the Gaussian layout");
    }
    io::ByteReader r(std::string_view(bytes).substr(header.size()), path);
    if (r.remaining() != count * 48) {
        r.fail("vertex payload does not match the declared count");
    }
    GaussianCloud cloud(count);
    for (GaussianPrimitive &g : cloud) {
        float v[12];
        for (float &x : v) {
            x = r.get<float>();
        }
        g.mean = Eigen::Vector3d(v[0], v[1], v[2]);
        g.intensity = std::clamp<double>(v[3], 0.0, 1.0);
        g.opacity = std::clamp<double>(v[4], kOpacityMargin, 1.0 - kOpacityMargin);
        g.scale = Eigen::Vector3d(v[5], v[6], v[7]);
        const Quaternion q(v[8], v[9], v[10], v[11]);
        if (!(q.norm() > 0.0)) {
            r.fail("zero rotation quaternion");
        }
        g.rotation = q / q.norm();
        try {
            validatePrimitive(g);
        } catch (const InvalidArgument &e) {
            r.fail(e.what());
        }
    }
    r.expectEnd();
    return cloud;
}

// ---------------------------------------------------------------------------
// Linear regressor weights: "EVGGSLIN", u32 bins, u32 feature channels, then
// the 8 × (2 + bins + features) weight matrix row-major and the 8 biases, all
// real64.

inline constexpr std::string_view kLinearMagic = "EVGGSLIN";

inline void saveLinearRegressor(const LinearPixelRegressor &reg, const std::string &path) {
    io::ByteWriter w;
    w.raw(kLinearMagic);
    w.put(static_cast<std::uint32_t>(reg.bins()));
    w.put(static_cast<std::uint32_t>(reg.featureChannels()));
    for (int r = 0; r < LinearPixelRegressor::kOutputs; ++r) {
        for (int c = 0; c < reg.inputSize(); ++c) {
            w.put(reg.weights()(r, c));
        }
    }
    for (int r = 0; r < LinearPixelRegressor::kOutputs; ++r) {
        w.put(reg.bias()[r]);
    }
    io::writeFile(path, w.bytes());
}

inline LinearPixelRegressor loadLinearRegressor(const std::string &path) {
    const std::string bytes = io::readFile(path);
    io::ByteReader r(bytes, path);
    if (r.raw(8) != kLinearMagic) {
        r.fail("bad magic, expected EVGGSLIN");
    }
    const std::uint32_t bins = r.get<std::uint32_t>();
    const std::uint32_t features = r.get<std::uint32_t>();
    if (bins < 1 || bins > 4096 || features > 4096) {
        r.fail("implausible dimensions");
    }
    LinearPixelRegressor reg(static_cast<int>(bins), static_cast<int>(features));
    if (r.remaining() != static_cast<std::size_t>(LinearPixelRegressor::kOutputs) * (reg.inputSize() + 1) * 8) {
        r.fail("payload size does not match the declared dimensions");
    }
    for (int row = 0; row < LinearPixelRegressor::kOutputs; ++row) {
        for (int c = 0; c < reg.inputSize(); ++c) {
            reg.weights()(row, c) = r.get<double>();
        }
    }
    for (int row = 0; row < LinearPixelRegressor::kOutputs; ++row) {
        reg.bias()[row] = r.get<double>();
    }
    r.expectEnd();
    return reg;
}

// ---------------------------------------------------------------------------
// Metric reports: flat key=value text.

struct MetricReport {
    double psnr = 0.0;
    double ssim = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
    double absRel = 0.0;
    double sqRel = 0.0;
    bool hasDepth = false;
};

inline std::string encodeMetricReport(const MetricReport &m) {
    KeyValueConfig kv;
    kv.set("psnr", m.psnr);
    kv.set("ssim", m.ssim);
    if (m.hasDepth) {
        kv.set("rmse", m.rmse);
        kv.set("mae", m.mae);
        kv.set("abs_rel", m.absRel);
        kv.set("sq_rel", m.sqRel);
    }
    return kv.serialize();
}

inline MetricReport decodeMetricReport(std::string_view text, const std::string &origin) {
    const KeyValueConfig kv = KeyValueConfig::parse(text, origin);
    MetricReport m;
    m.psnr = kv.getDouble("psnr");
    m.ssim = kv.getDouble("ssim");
    m.hasDepth = kv.has("rmse");
    if (m.hasDepth) {
        m.rmse = kv.getDouble("rmse");
        m.mae = kv.getDouble("mae");
        m.absRel = kv.getDouble("abs_rel");
        m.sqRel = kv.getDouble("sq_rel");
    }
    return m;
}

} // namespace evgs
