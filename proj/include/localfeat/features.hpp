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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "localfeat/core.hpp"
#include "localfeat/neighborhood.hpp"

namespace localfeat {

/// Which neighborhood features are appended to the lifted per-neighbor channels.
enum class FeatureMode { base, distance, vectors, both };

[[nodiscard]] constexpr bool uses_vectors(FeatureMode m) noexcept {
    return m == FeatureMode::vectors || m == FeatureMode::both;
}
[[nodiscard]] constexpr bool uses_distance(FeatureMode m) noexcept {
    return m == FeatureMode::distance || m == FeatureMode::both;
}
[[nodiscard]] constexpr std::size_t extra_channels(FeatureMode m) noexcept {
    return (uses_vectors(m) ? 3 : 0) + (uses_distance(m) ? 1 : 0);
}

[[nodiscard]] inline std::string_view to_string(FeatureMode m) noexcept {
    switch (m) {
        case FeatureMode::base: return "base";
        case FeatureMode::distance: return "distance";
        case FeatureMode::vectors: return "vectors";
        case FeatureMode::both: return "both";
    }
    return "base";
}

[[nodiscard]] inline FeatureMode feature_mode_from_string(std::string_view s) {
    if (s == "base") return FeatureMode::base;
    if (s == "distance" || s == "+distance") return FeatureMode::distance;
    if (s == "vectors" || s == "+vectors") return FeatureMode::vectors;
    if (s == "both" || s == "+both") return FeatureMode::both;
    throw InvalidConfig("unknown feature mode '" + std::string(s) + "'");
}

/// Radius-normalized neighbor offsets, m x k x 3 row-major.
struct DirectionalVectors {
    std::size_t anchors = 0;
    std::size_t k = 0;
    std::vector<double> values;

    [[nodiscard]] const double* at(std::size_t a, std::size_t s) const noexcept { return &values[(a * k + s) * 3]; }
};

/// Radius-normalized (or raw) neighbor distances, m x k row-major.
struct NormalizedDistances {
    std::size_t anchors = 0;
    std::size_t k = 0;
    std::vector<double> values;

    [[nodiscard]] double at(std::size_t a, std::size_t s) const noexcept { return values[a * k + s]; }
};

/// Per-anchor normalization radius: the ball radius in ball mode, the
/// farthest selected neighbor in kNN mode (1 when every neighbor coincides
/// with the anchor).
[[nodiscard]] inline std::vector<double> normalization_radii(const NeighborhoodGrouping& g) {
    std::vector<double> r(g.num_anchors(), g.radius);
    if (g.kind == QueryKind::knn) {
        for (std::size_t a = 0; a < g.num_anchors(); ++a) {
            double far = 0.0;
            for (std::size_t s = 0; s < g.k; ++s) far = std::max(far, g.raw_distance(a, s));
            r[a] = far > 0.0 ? far : 1.0;
        }
    }
    return r;
}

namespace detail {
inline void check_radii(std::span<const double> radii, std::size_t anchors) {
    if (radii.size() != anchors) throw ShapeError("one normalization radius per anchor required");
    for (double r : radii) {
        if (!(r > 0.0) || !std::isfinite(r)) throw InvalidConfig("normalization radius must be > 0");
    }
}
}  // namespace detail

/// dv = (neighbor - anchor) / r for every slot, padded slots included.
[[nodiscard]] inline DirectionalVectors directional_vectors(const PointCloud& cloud, const NeighborhoodGrouping& g,
                                                            std::span<const double> radii) {
    detail::check_radii(radii, g.num_anchors());
    DirectionalVectors dv{g.num_anchors(), g.k, std::vector<double>(g.slots() * 3)};
    for (std::size_t a = 0; a < g.num_anchors(); ++a) {
        const Point3& anchor = cloud[g.anchors[a]];
        const double r = radii[a];
        for (std::size_t s = 0; s < g.k; ++s) {
            const Point3& p = cloud[g.index(a, s)];
            double* out = &dv.values[(a * g.k + s) * 3];
            out[0] = (p.x - anchor.x) / r;
            out[1] = (p.y - anchor.y) / r;
            out[2] = (p.z - anchor.z) / r;
        }
    }
    return dv;
}

[[nodiscard]] inline DirectionalVectors directional_vectors(const PointCloud& cloud, const NeighborhoodGrouping& g,
                                                            double r) {
    if (!(r > 0.0) || !std::isfinite(r)) throw InvalidConfig("directional_vectors: radius must be > 0");
    const std::vector<double> radii(g.num_anchors(), r);
    return directional_vectors(cloud, g, radii);
}

/// d = raw_distance / r when `normalize`, otherwise the raw distance.
[[nodiscard]] inline NormalizedDistances normalized_distance(const NeighborhoodGrouping& g,
                                                             std::span<const double> radii, bool normalize = true) {
    detail::check_radii(radii, g.num_anchors());
    NormalizedDistances d{g.num_anchors(), g.k, g.raw_distances};
    if (normalize) {
        for (std::size_t a = 0; a < g.num_anchors(); ++a)
            for (std::size_t s = 0; s < g.k; ++s) d.values[a * g.k + s] /= radii[a];
    }
    return d;
}

[[nodiscard]] inline NormalizedDistances normalized_distance(const NeighborhoodGrouping& g, double r,
                                                             bool normalize = true) {
    if (!(r > 0.0) || !std::isfinite(r)) throw InvalidConfig("normalized_distance: radius must be > 0");
    const std::vector<double> radii(g.num_anchors(), r);
    return normalized_distance(g, radii, normalize);
}

// ---------------------------------------------------------------------------
// Feature tensors
// ---------------------------------------------------------------------------

struct ChannelLayout {
    std::size_t base_channels = 0;
    bool vectors = false;
    bool distance = false;

    [[nodiscard]] std::size_t channels() const noexcept {
        return base_channels + (vectors ? 3 : 0) + (distance ? 1 : 0);
    }
    friend bool operator==(const ChannelLayout&, const ChannelLayout&) = default;
};

/// m x k x C per-neighbor features. Stored channel-major per slot: column
/// a*k + s of `values` holds the C channels of slot s of anchor a.
template <typename Scalar>
struct FeatureTensor {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    std::size_t anchors = 0;
    std::size_t k = 0;
    ChannelLayout layout;
    Matrix values;

    FeatureTensor() = default;
    FeatureTensor(std::size_t m, std::size_t slots_per_anchor, ChannelLayout l)
        : anchors(m), k(slots_per_anchor), layout(l),
          values(Matrix::Zero(static_cast<Eigen::Index>(l.channels()), static_cast<Eigen::Index>(m * slots_per_anchor))) {}

    [[nodiscard]] std::size_t channels() const noexcept { return static_cast<std::size_t>(values.rows()); }
    [[nodiscard]] Scalar& at(std::size_t a, std::size_t s, std::size_t c) {
        return values(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a * k + s));
    }
    [[nodiscard]] Scalar at(std::size_t a, std::size_t s, std::size_t c) const {
        return values(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a * k + s));
    }
};

/// Concatenates [lifted | dv | d] per slot, keeping only the blocks `mode`
/// enables.
template <typename Scalar>
[[nodiscard]] FeatureTensor<Scalar> assemble_features(const FeatureTensor<Scalar>& lifted, const DirectionalVectors& dv,
                                                      const NormalizedDistances& d, FeatureMode mode) {
    if (lifted.layout.vectors || lifted.layout.distance)
        throw ShapeError("assemble_features: input already carries neighborhood channels");
    if (lifted.channels() != lifted.layout.base_channels)
        throw ShapeError("assemble_features: layout does not match value tensor");
    const std::size_t slots = lifted.anchors * lifted.k;
    if (static_cast<std::size_t>(lifted.values.cols()) != slots) throw ShapeError("assemble_features: bad slot count");
    if (uses_vectors(mode) && (dv.anchors != lifted.anchors || dv.k != lifted.k || dv.values.size() != slots * 3))
        throw ShapeError("assemble_features: directional vectors shape mismatch");
    if (uses_distance(mode) && (d.anchors != lifted.anchors || d.k != lifted.k || d.values.size() != slots))
        throw ShapeError("assemble_features: distances shape mismatch");

    const ChannelLayout layout{lifted.layout.base_channels, uses_vectors(mode), uses_distance(mode)};
    FeatureTensor<Scalar> out(lifted.anchors, lifted.k, layout);
    const auto c0 = static_cast<Eigen::Index>(layout.base_channels);
    out.values.topRows(c0) = lifted.values;
    Eigen::Index row = c0;
    if (layout.vectors) {
        for (std::size_t j = 0; j < slots; ++j) {
            const auto col = static_cast<Eigen::Index>(j);
            out.values(row, col) = static_cast<Scalar>(dv.values[j * 3]);
            out.values(row + 1, col) = static_cast<Scalar>(dv.values[j * 3 + 1]);
            out.values(row + 2, col) = static_cast<Scalar>(dv.values[j * 3 + 2]);
        }
        row += 3;
    }
    if (layout.distance) {
        for (std::size_t j = 0; j < slots; ++j)
            out.values(row, static_cast<Eigen::Index>(j)) = static_cast<Scalar>(d.values[j]);
    }
    return out;
}

}  // namespace localfeat
