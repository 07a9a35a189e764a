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
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "localfeat/features.hpp"
#include "localfeat/neighborhood.hpp"
#include "localfeat/network.hpp"

namespace localfeat::cli {

struct Timing {
    double min_ms = 0.0;
    double median_ms = 0.0;
};

struct BenchRow {
    std::size_t n = 0;
    std::size_t m = 0;
    std::size_t k = 0;
    std::size_t reps = 0;
    Timing fps;
    Timing ball_query;
    Timing features;  // dv + d + assembly onto 32 lifted channels
    Timing stage_base;
    Timing stage_both;
    Timing forward_backward;  // one-stage model, +both
    double overhead = 0.0;    // (median both - median base) / median base
};

namespace detail {

inline Timing summarize(std::vector<double> samples) {
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    const double median = n % 2 == 1 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
    return {samples.front(), median};
}

/// Mean milliseconds per call of `f` over `inner` calls.
template <typename F>
double time_ms(F&& f, std::size_t inner) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < inner; ++i) f();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(inner);
}

inline ModelConfig bench_model(std::size_t m, std::size_t k, FeatureMode mode) {
    ModelConfig c;
    c.stages = {StageConfig{m, 0.2, k, {32, 32}, QueryKind::ball, std::nullopt}};
    c.head = {32};
    c.num_classes = 8;
    c.mode = mode;
    return c;
}

}  // namespace detail

/// Times the sampling, grouping and feature kernels on a random cloud of n
/// points in the unit ball (radius 0.2). Base and +both stages are measured
/// in alternating repetitions.
[[nodiscard]] inline BenchRow bench_size(std::size_t n, std::size_t m, std::size_t k, std::size_t reps,
                                         std::uint64_t seed = 1) {
    if (reps < 1) reps = 1;
    Rng rng(seed);
    std::vector<Point3> pts;
    while (pts.size() < n) {
        const Point3 p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        if (p.norm() <= 1.0) pts.push_back(p);
    }
    const PointCloud cloud(std::move(pts));
    const BallQueryConfig bq{0.2, k};
    const AnchorSet anchors = farthest_point_sample(cloud, m, std::size_t{0});
    const NeighborhoodGrouping grouping = ball_query(cloud, anchors, bq);

    FeatureTensor<float> lifted(m, k, ChannelLayout{32, false, false});
    for (Eigen::Index i = 0; i < lifted.values.size(); ++i) lifted.values.data()[i] = static_cast<float>(rng.uniform());

    Rng init(seed + 1);
    const auto base_model = ClassifierModel<float>::initialized(detail::bench_model(m, k, FeatureMode::base), init);
    const auto both_model = ClassifierModel<float>::initialized(detail::bench_model(m, k, FeatureMode::both), init);

    const std::size_t inner = 5;
    std::vector<double> t_fps, t_bq, t_feat, t_base, t_both, t_fb;
    volatile double sink = 0.0;
    for (std::size_t r = 0; r < reps; ++r) {
        t_fps.push_back(detail::time_ms([&] { sink = sink + static_cast<double>(farthest_point_sample(cloud, m, std::size_t{0})[0]); }, inner));
        t_bq.push_back(detail::time_ms([&] { sink = sink + ball_query(cloud, anchors, bq).raw_distances[0]; }, inner));
        t_feat.push_back(detail::time_ms(
            [&] {
                const auto dv = directional_vectors(cloud, grouping, bq.radius);
                const auto d = normalized_distance(grouping, bq.radius, true);
                sink = sink + static_cast<double>(assemble_features(lifted, dv, d, FeatureMode::both).values(0, 0));
            },
            inner));
        Rng stage_rng(seed);
        const Eigen::MatrixXf* no_features = nullptr;
        t_base.push_back(detail::time_ms([&] { sink = sink + static_cast<double>(stage_forward(base_model, 0, cloud, no_features, stage_rng).pooled(0, 0)); }, inner));
        t_both.push_back(detail::time_ms([&] { sink = sink + static_cast<double>(stage_forward(both_model, 0, cloud, no_features, stage_rng).pooled(0, 0)); }, inner));
        t_fb.push_back(detail::time_ms([&] { sink = sink + backward(both_model, cloud, 0, stage_rng).loss; }, inner));
    }

    BenchRow row{n, m, k, reps, detail::summarize(t_fps), detail::summarize(t_bq), detail::summarize(t_feat),
                 detail::summarize(t_base), detail::summarize(t_both), detail::summarize(t_fb), 0.0};
    row.overhead = (row.stage_both.median_ms - row.stage_base.median_ms) / row.stage_base.median_ms;
    return row;
}

}  // namespace localfeat::cli
