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
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "localfeat/core.hpp"

namespace localfeat {

struct BallQueryConfig {
    double radius = 0.2;
    std::size_t k_max = 16;

    void validate() const {
        if (!(radius > 0.0) || !std::isfinite(radius)) throw InvalidConfig("ball query radius must be > 0");
        if (k_max < 1) throw InvalidConfig("ball query k_max must be >= 1");
    }
};

enum class QueryKind { ball, knn };

/// Per-anchor neighbor table of fixed width k (row-major, m x k).
///
/// In ball mode every non-padded slot lies within `radius` of its anchor;
/// rows with fewer than k hits repeat their first hit and mark the repeats
/// in `pad_mask`.
struct NeighborhoodGrouping {
    QueryKind kind = QueryKind::ball;
    double radius = 0.0;  // ball radius; 0 in kNN mode
    AnchorSet anchors;
    std::size_t k = 0;
    std::vector<std::size_t> neighbor_indices;
    std::vector<double> raw_distances;
    std::vector<std::uint8_t> pad_mask;

    [[nodiscard]] std::size_t num_anchors() const noexcept { return anchors.size(); }
    [[nodiscard]] std::size_t slots() const noexcept { return neighbor_indices.size(); }
    [[nodiscard]] std::size_t index(std::size_t a, std::size_t s) const noexcept { return neighbor_indices[a * k + s]; }
    [[nodiscard]] double raw_distance(std::size_t a, std::size_t s) const noexcept { return raw_distances[a * k + s]; }
    [[nodiscard]] bool padded(std::size_t a, std::size_t s) const noexcept { return pad_mask[a * k + s] != 0; }

    friend bool operator==(const NeighborhoodGrouping&, const NeighborhoodGrouping&) = default;
};

// ---------------------------------------------------------------------------
// Farthest point sampling
// ---------------------------------------------------------------------------

/// Greedy farthest point sampling starting from `start`.
///
/// Each step picks the unchosen point whose minimum distance to the chosen
/// set is largest; ties go to the lowest index.
[[nodiscard]] inline AnchorSet farthest_point_sample(const PointCloud& cloud, std::size_t m, std::size_t start) {
    const std::size_t n = cloud.size();
    if (m == 0) throw InvalidRequest("farthest_point_sample: m must be >= 1");
    if (m > n) throw InvalidRequest("farthest_point_sample: m exceeds cloud size");
    if (start >= n) throw InvalidRequest("farthest_point_sample: start index out of range");

    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    std::vector<std::uint8_t> chosen(n, 0);
    std::vector<std::size_t> out;
    out.reserve(m);

    std::size_t current = start;
    for (std::size_t step = 0; step < m; ++step) {
        out.push_back(current);
        chosen[current] = 1;
        if (step + 1 == m) break;
        const Point3& c = cloud[current];
        double best = -1.0;
        std::size_t best_idx = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (chosen[i]) continue;
            const double d = distance(cloud[i], c);
            if (d < min_dist[i]) min_dist[i] = d;
            if (min_dist[i] > best) {
                best = min_dist[i];
                best_idx = i;
            }
        }
        current = best_idx;
    }
    return AnchorSet(std::move(out), n);
}

/// Same as above with the first index drawn from `rng`.
[[nodiscard]] inline AnchorSet farthest_point_sample(const PointCloud& cloud, std::size_t m, Rng& rng) {
    if (m == 0 || m > cloud.size()) return farthest_point_sample(cloud, m, std::size_t{0});
    return farthest_point_sample(cloud, m, rng.index(cloud.size()));
}

// ---------------------------------------------------------------------------
// Ball query
// ---------------------------------------------------------------------------

namespace detail {

inline void check_anchors(const PointCloud& cloud, const AnchorSet& anchors) {
    for (std::size_t a : anchors.indices()) {
        if (a >= cloud.size()) throw InvalidRequest("anchor index out of range for cloud");
    }
}

/// Fills one ball-query row from candidates visited in ascending index order.
template <typename CandidateRange>
void fill_ball_row(const PointCloud& cloud, const Point3& center, const CandidateRange& candidates,
                   const BallQueryConfig& cfg, std::size_t* idx_row, double* dist_row, std::uint8_t* pad_row) {
    std::size_t found = 0;
    for (std::size_t j : candidates) {
        const double d = distance(cloud[j], center);
        if (d <= cfg.radius) {
            idx_row[found] = j;
            dist_row[found] = d;
            pad_row[found] = 0;
            if (++found == cfg.k_max) return;
        }
    }
    // The anchor itself always qualifies, so found >= 1 here.
    for (std::size_t s = found; s < cfg.k_max; ++s) {
        idx_row[s] = idx_row[0];
        dist_row[s] = dist_row[0];
        pad_row[s] = 1;
    }
}

struct IndexRange {
    std::size_t n;
    struct iterator {
        std::size_t i;
        std::size_t operator*() const noexcept { return i; }
        iterator& operator++() noexcept {
            ++i;
            return *this;
        }
        bool operator!=(const iterator& o) const noexcept { return i != o.i; }
    };
    [[nodiscard]] iterator begin() const noexcept { return {0}; }
    [[nodiscard]] iterator end() const noexcept { return {n}; }
};

inline NeighborhoodGrouping make_grouping(QueryKind kind, double radius, const AnchorSet& anchors, std::size_t k) {
    NeighborhoodGrouping g;
    g.kind = kind;
    g.radius = radius;
    g.anchors = anchors;
    g.k = k;
    g.neighbor_indices.assign(anchors.size() * k, 0);
    g.raw_distances.assign(anchors.size() * k, 0.0);
    g.pad_mask.assign(anchors.size() * k, 0);
    return g;
}

}  // namespace detail

/// Brute-force ball query: the first k_max points (ascending index) within
/// distance <= radius of each anchor.
[[nodiscard]] inline NeighborhoodGrouping ball_query(const PointCloud& cloud, const AnchorSet& anchors,
                                                     const BallQueryConfig& cfg) {
    cfg.validate();
    detail::check_anchors(cloud, anchors);
    auto g = detail::make_grouping(QueryKind::ball, cfg.radius, anchors, cfg.k_max);
    const detail::IndexRange all{cloud.size()};
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        const std::size_t off = a * cfg.k_max;
        detail::fill_ball_row(cloud, cloud[anchors[a]], all, cfg, &g.neighbor_indices[off], &g.raw_distances[off],
                              &g.pad_mask[off]);
    }
    return g;
}

/// Uniform-grid ball query. Produces exactly the same grouping as
/// ball_query(); candidates are re-sorted by index before the scan.
[[nodiscard]] inline NeighborhoodGrouping ball_query_grid(const PointCloud& cloud, const AnchorSet& anchors,
                                                          const BallQueryConfig& cfg) {
    cfg.validate();
    detail::check_anchors(cloud, anchors);

    // Slightly oversized cells keep every in-ball point within one cell step.
    const double cell = cfg.radius * (1.0 + 1e-6);
    Point3 lo = cloud[0];
    for (const Point3& p : cloud) {
        lo.x = std::min(lo.x, p.x);
        lo.y = std::min(lo.y, p.y);
        lo.z = std::min(lo.z, p.z);
    }
    auto cell_of = [&](const Point3& p) {
        return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor((p.x - lo.x) / cell)),
                                           static_cast<std::int64_t>(std::floor((p.y - lo.y) / cell)),
                                           static_cast<std::int64_t>(std::floor((p.z - lo.z) / cell))};
    };
    auto key = [](std::int64_t x, std::int64_t y, std::int64_t z) {
        return static_cast<std::uint64_t>(x) * 73856093ULL ^ static_cast<std::uint64_t>(y) * 19349663ULL ^
               static_cast<std::uint64_t>(z) * 83492791ULL;
    };
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
    std::vector<std::array<std::int64_t, 3>> cells(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        cells[i] = cell_of(cloud[i]);
        buckets[key(cells[i][0], cells[i][1], cells[i][2])].push_back(i);
    }

    auto g = detail::make_grouping(QueryKind::ball, cfg.radius, anchors, cfg.k_max);
    std::vector<std::size_t> candidates;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        const auto c = cells[anchors[a]];
        candidates.clear();
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dz = -1; dz <= 1; ++dz) {
                    auto it = buckets.find(key(c[0] + dx, c[1] + dy, c[2] + dz));
                    if (it == buckets.end()) continue;
                    for (std::size_t j : it->second) {
                        // Hash collisions may pull in far cells; filter on real cell coordinates.
                        const auto& cj = cells[j];
                        if (cj[0] == c[0] + dx && cj[1] == c[1] + dy && cj[2] == c[2] + dz) candidates.push_back(j);
                    }
                }
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
        const std::size_t off = a * cfg.k_max;
        detail::fill_ball_row(cloud, cloud[anchors[a]], candidates, cfg, &g.neighbor_indices[off],
                              &g.raw_distances[off], &g.pad_mask[off]);
    }
    return g;
}

// ---------------------------------------------------------------------------
// k nearest neighbors
// ---------------------------------------------------------------------------

/// The k nearest points of every anchor, nearest first; equal distances are
/// ordered by index.
[[nodiscard]] inline NeighborhoodGrouping knn_query(const PointCloud& cloud, const AnchorSet& anchors, std::size_t k) {
    if (k == 0) throw InvalidRequest("knn_query: k must be >= 1");
    if (k > cloud.size()) throw InvalidRequest("knn_query: k exceeds cloud size");
    detail::check_anchors(cloud, anchors);

    auto g = detail::make_grouping(QueryKind::knn, 0.0, anchors, k);
    std::vector<std::pair<double, std::size_t>> scored(cloud.size());
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        const Point3& center = cloud[anchors[a]];
        for (std::size_t j = 0; j < cloud.size(); ++j) scored[j] = {distance(cloud[j], center), j};
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end());
        for (std::size_t s = 0; s < k; ++s) {
            g.neighbor_indices[a * k + s] = scored[s].second;
            g.raw_distances[a * k + s] = scored[s].first;
        }
    }
    return g;
}

}  // namespace localfeat
