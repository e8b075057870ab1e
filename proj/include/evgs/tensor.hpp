// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evgs/error.hpp"

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace evgs {

/// Dense row-major 2D grid, indexed (x, y) with y-major storage.
template <typename T>
class Grid {
  public:
    Grid() = default;
    Grid(int width, int height, T fill = T{})
        : width_(width), height_(height),
          data_(checkedSize(width, height), fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T &operator()(int x, int y) { return data_[index(x, y)]; }
    const T &operator()(int x, int y) const { return data_[index(x, y)]; }
    T &operator[](std::size_t i) { return data_[i]; }
    const T &operator[](std::size_t i) const { return data_[i]; }

    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool sameShape(const Grid &other) const {
        return width_ == other.width_ && height_ == other.height_;
    }

    friend bool operator==(const Grid &, const Grid &) = default;

  private:
    static std::size_t checkedSize(int width, int height) {
        if (width < 0 || height < 0) {
            throw ShapeError("grid dimensions must be non-negative");
        }
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

using Image = Grid<double>;

/// Dense row-major 3D tensor of doubles with shape (d0, d1, d2).
///
/// Used both channels-first, e.g. a (B, H, W) voxel grid, and channels-last,
/// e.g. an (H, W, K) feature volume. Callers document which.
class Tensor3 {
  public:
    Tensor3() = default;
    Tensor3(int d0, int d1, int d2, double fill = 0.0)
        : dims_{d0, d1, d2}, data_(checkedSize(d0, d1, d2), fill) {}

    int dim(int axis) const { return dims_[axis]; }
    std::size_t size() const { return data_.size(); }

    double &operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
    double operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }
    double &operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * static_cast<std::size_t>(dims_[1]) +
                static_cast<std::size_t>(j)) *
                   static_cast<std::size_t>(dims_[2]) +
               static_cast<std::size_t>(k);
    }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    bool hasShape(int d0, int d1, int d2) const {
        return dims_[0] == d0 && dims_[1] == d1 && dims_[2] == d2;
    }

    std::string shapeString() const {
        return "(" + std::to_string(dims_[0]) + ", " + std::to_string(dims_[1]) + ", " +
               std::to_string(dims_[2]) + ")";
    }

    friend bool operator==(const Tensor3 &, const Tensor3 &) = default;

  private:
    static std::size_t checkedSize(int d0, int d1, int d2) {
        if (d0 < 0 || d1 < 0 || d2 < 0) {
            throw ShapeError("tensor dimensions must be non-negative");
        }
        return static_cast<std::size_t>(d0) * static_cast<std::size_t>(d1) *
               static_cast<std::size_t>(d2);
    }

    int dims_[3] = {0, 0, 0};
    std::vector<double> data_;
};

inline std::string shapeString(const Image &img) {
    return "(" + std::to_string(img.height()) + ", " + std::to_string(img.width()) + ")";
}

inline void requireSameShape(const Image &a, const Image &b, const std::string &what) {
    if (!a.sameShape(b)) {
        throw ShapeError(what + ": shape mismatch " + shapeString(a) + " vs " + shapeString(b));
    }
}

} // namespace evgs
