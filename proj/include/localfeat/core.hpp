// Copyright 2026 The localfeat Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace localfeat {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidCloud : public Error {
public:
    using Error::Error;
};

class InvalidRequest : public Error {
public:
    using Error::Error;
};

class InvalidConfig : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    [[nodiscard]] bool finite() const noexcept {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
    }
    [[nodiscard]] double norm() const noexcept { return std::sqrt(x * x + y * y + z * z); }

    friend Point3 operator+(const Point3& a, const Point3& b) noexcept {
        return {a.x + b.x, a.y + b.y, a.z + b.z};
    }
    friend Point3 operator-(const Point3& a, const Point3& b) noexcept {
        return {a.x - b.x, a.y - b.y, a.z - b.z};
    }
    friend Point3 operator*(double s, const Point3& p) noexcept { return {s * p.x, s * p.y, s * p.z}; }
    friend bool operator==(const Point3&, const Point3&) = default;
};

/// Euclidean distance. Every kernel in the library goes through this one
/// expression so that accelerated and brute-force paths agree bitwise.
[[nodiscard]] inline double distance(const Point3& a, const Point3& b) noexcept {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

[[nodiscard]] inline double squared_distance(const Point3& a, const Point3& b) noexcept {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double dz = a.z - b.z;
    return dx * dx + dy * dy + dz * dz;
}

/// Ordered, non-empty set of finite points with an optional class label.
/// Immutable after construction; index i always names the same point.
class PointCloud {
public:
    PointCloud() = default;

    explicit PointCloud(std::vector<Point3> points, std::optional<int> label = std::nullopt)
        : points_(std::move(points)), label_(label) {
        if (points_.empty()) throw InvalidCloud("point cloud must contain at least one point");
        for (std::size_t i = 0; i < points_.size(); ++i) {
            if (!points_[i].finite())
                throw InvalidCloud("point " + std::to_string(i) + " has a non-finite coordinate");
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return points_.size(); }
    [[nodiscard]] bool empty() const noexcept { return points_.empty(); }
    [[nodiscard]] const Point3& operator[](std::size_t i) const noexcept { return points_[i]; }
    [[nodiscard]] std::span<const Point3> points() const noexcept { return points_; }
    [[nodiscard]] std::optional<int> label() const noexcept { return label_; }
    [[nodiscard]] PointCloud with_label(std::optional<int> label) const {
        PointCloud copy = *this;
        copy.label_ = label;
        return copy;
    }

    [[nodiscard]] auto begin() const noexcept { return points_.begin(); }
    [[nodiscard]] auto end() const noexcept { return points_.end(); }

    friend bool operator==(const PointCloud&, const PointCloud&) = default;

private:
    std::vector<Point3> points_;
    std::optional<int> label_;
};

/// Indices into a PointCloud chosen as neighborhood centers.
class AnchorSet {
public:
    AnchorSet() = default;

    /// Validates uniqueness and range against a cloud of `cloud_size` points.
    AnchorSet(std::vector<std::size_t> indices, std::size_t cloud_size) : indices_(std::move(indices)) {
        if (indices_.size() > cloud_size) throw InvalidRequest("more anchors than cloud points");
        std::vector<bool> seen(cloud_size, false);
        for (std::size_t idx : indices_) {
            if (idx >= cloud_size)
                throw InvalidRequest("anchor index " + std::to_string(idx) + " out of range");
            if (seen[idx]) throw InvalidRequest("duplicate anchor index " + std::to_string(idx));
            seen[idx] = true;
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return indices_.size(); }
    [[nodiscard]] std::size_t operator[](std::size_t i) const noexcept { return indices_[i]; }
    [[nodiscard]] std::span<const std::size_t> indices() const noexcept { return indices_; }

    friend bool operator==(const AnchorSet&, const AnchorSet&) = default;

private:
    std::vector<std::size_t> indices_;
};

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

/// Seeded stream with platform-independent conversions.
///
/// The std distributions are implementation-defined, so uniform and normal
/// variates are derived from raw 64-bit engine output here. A stream is owned
/// by one worker; use split() to hand independent streams to others.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() {
        ++counter_;
        return engine_();
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling avoids modulo bias.
    std::size_t index(std::size_t n) {
        if (n == 0) throw InvalidRequest("Rng::index needs n >= 1");
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return static_cast<std::size_t>(v % bound);
    }

    /// Standard normal via Box-Muller (one variate per call, no caching).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Independent child stream keyed by `stream`; does not advance this one.
    [[nodiscard]] Rng split(std::uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + 0x9e3779b97f4a7c15ULL))); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

[[nodiscard]] inline Point3 centroid(std::span<const Point3> points) {
    if (points.empty()) throw InvalidCloud("centroid of an empty cloud");
    double sx = 0.0, sy = 0.0, sz = 0.0;
    for (const Point3& p : points) {
        sx += p.x;
        sy += p.y;
        sz += p.z;
    }
    const double n = static_cast<double>(points.size());
    return {sx / n, sy / n, sz / n};
}

[[nodiscard]] inline Point3 centroid(const PointCloud& cloud) { return centroid(cloud.points()); }

/// Centers the cloud at its centroid and scales it so the farthest point has
/// norm 1. A cloud whose points all coincide maps to the origin.
[[nodiscard]] inline PointCloud normalize_unit_sphere(const PointCloud& cloud) {
    if (cloud.empty()) throw InvalidCloud("cannot normalize an empty cloud");
    for (const Point3& p : cloud) {
        if (!p.finite()) throw InvalidCloud("cannot normalize a cloud with non-finite points");
    }
    const bool coincident = std::all_of(cloud.begin(), cloud.end(),
                                        [&](const Point3& p) { return p == cloud[0]; });
    if (coincident) return PointCloud(std::vector<Point3>(cloud.size()), cloud.label());

    const Point3 c = centroid(cloud);
    std::vector<Point3> out;
    out.reserve(cloud.size());
    double max_norm = 0.0;
    for (const Point3& p : cloud) {
        out.push_back(p - c);
        max_norm = std::max(max_norm, out.back().norm());
    }
    if (max_norm == 0.0 || !std::isfinite(1.0 / max_norm)) {
        for (Point3& p : out) p = Point3{};
    } else {
        for (Point3& p : out) p = Point3{p.x / max_norm, p.y / max_norm, p.z / max_norm};
    }
    return PointCloud(std::move(out), cloud.label());
}

}  // namespace localfeat
