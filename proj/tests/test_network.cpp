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


#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "fixtures.hpp"
#include "localfeat/network.hpp"
#include "oracles.hpp"

using namespace localfeat;
using fixtures::random_points;

namespace {

ModelConfig one_stage(FeatureMode mode, std::size_t anchors = 12, double r = 0.45, std::size_t k = 8) {
    ModelConfig c;
    c.stages = {StageConfig{anchors, r, k, {6, 5}, QueryKind::ball, std::nullopt}};
    c.head = {7};
    c.num_classes = 4;
    c.mode = mode;
    return c;
}

ModelConfig two_stage(FeatureMode mode) {
    ModelConfig c;
    c.stages = {StageConfig{16, 0.5, 8, {8}, QueryKind::ball, std::nullopt},
                StageConfig{4, 0.9, 4, {6}, QueryKind::ball, std::nullopt}};
    c.head = {5};
    c.num_classes = 3;
    c.mode = mode;
    return c;
}

template <typename S>
ClassifierModel<S> jittered(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    auto m = ClassifierModel<S>::initialized(cfg, rng);
    auto pv = m.parameters();
    for (double& v : pv.values) v += 0.05 * rng.normal();
    m.set_parameters(pv);
    return m;
}

const FeatureMode kModes[] = {FeatureMode::base, FeatureMode::distance, FeatureMode::vectors, FeatureMode::both};

}  // namespace

TEST(ModelConfig, DeskDefaultShapes) {
    const auto c = ModelConfig::desk_default(8, FeatureMode::both);
    ASSERT_EQ(c.stages.size(), 2u);
    EXPECT_EQ(c.stage_input_width(0), 3u);
    EXPECT_EQ(c.stage_output_width(0), 36u);
    EXPECT_EQ(c.stage_input_width(1), 39u);
    EXPECT_EQ(c.head_input_width(), 68u);
    EXPECT_EQ(ModelConfig::desk_default(8).head_input_width(), 64u);
}

TEST(ModelConfig, Validation) {
    auto c = one_stage(FeatureMode::base);
    c.num_classes = 1;
    EXPECT_THROW(c.validate(), InvalidConfig);
    c = one_stage(FeatureMode::base);
    c.stages[0].radius = 0.0;
    EXPECT_THROW(c.validate(), InvalidConfig);
    c = one_stage(FeatureMode::base);
    c.stages.clear();
    EXPECT_THROW(c.validate(), InvalidConfig);
}

TEST(Parameters, RoundTripAndLayout) {
    const auto m = jittered<float>(two_stage(FeatureMode::both), 3);
    const ParameterVector pv = m.parameters();
    EXPECT_EQ(pv.size(), m.parameter_count());
    ClassifierModel<float> copy(m.config());
    copy.set_parameters(pv);
    EXPECT_EQ(copy.parameters(), pv);
    std::vector<double> flat;
    m.append_values(flat);
    EXPECT_EQ(flat, pv.values);
    EXPECT_EQ(pv.blocks.front().name, "stage0.lift0.weight");
    EXPECT_EQ(pv.blocks.back().name, "head1.bias");
    std::size_t total = 0;
    for (const auto& b : pv.blocks) {
        EXPECT_EQ(b.offset, total);
        total += b.size;
    }
    EXPECT_EQ(total, pv.size());
    EXPECT_THROW(copy.set_parameters(std::vector<double>(pv.size() + 1)), ShapeError);
    const ParameterVector other = ClassifierModel<float>(two_stage(FeatureMode::base)).parameters();
    EXPECT_THROW(copy.set_parameters(other), ShapeError);
}

TEST(Forward, ZeroModelGivesZeroLogits) {
    const ClassifierModel<float> m(ModelConfig::desk_default(5));
    Rng rng(1);
    const PointCloud cloud(random_points(rng, 300));
    for (double v : forward(m, cloud, rng)) EXPECT_EQ(v, 0.0);
}

TEST(Forward, DeterministicForSeed) {
    const auto m = jittered<float>(ModelConfig::desk_default(5, FeatureMode::both), 2);
    Rng data(7);
    const PointCloud cloud(random_points(data, 400));
    Rng a(9), b(9);
    const auto x = forward(m, cloud, a);
    const auto y = forward(m, cloud, b);
    EXPECT_EQ(x, y);
    for (double v : x) EXPECT_TRUE(std::isfinite(v));
}

TEST(StageForward, ChannelBookkeeping) {
    Rng data(5);
    const PointCloud cloud(random_points(data, 256));
    for (FeatureMode mode : kModes) {
        ModelConfig cfg = ModelConfig::desk_default(4, mode);
        const auto m = jittered<float>(cfg, 1);
        Rng rng(0);
        const auto out = stage_forward(m, 0, cloud, static_cast<const Eigen::MatrixXf*>(nullptr), rng);
        EXPECT_EQ(static_cast<std::size_t>(out.pooled.rows()), 32 + extra_channels(mode));
        EXPECT_EQ(out.pooled.cols(), 128);
        Rng g(0);
        const auto t = forward_trace(m, build_geometry(cfg, cloud, g));
        EXPECT_EQ(static_cast<std::size_t>(t.stages[1].pooled.rows()), 64 + extra_channels(mode));
    }
}

TEST(StageForward, PerStageModeOverride) {
    ModelConfig cfg = ModelConfig::desk_default(4, FeatureMode::both);
    cfg.stages[1].mode = FeatureMode::base;
    EXPECT_EQ(cfg.stage_output_width(0), 36u);
    EXPECT_EQ(cfg.stage_output_width(1), 64u);
    const auto m = jittered<float>(cfg, 1);
    Rng data(2), g(0);
    const auto logits = forward(m, PointCloud(random_points(data, 200)), g);
    EXPECT_EQ(logits.size(), 4u);
}

TEST(StageForward, MatchesStraightLineInterpreter) {
    Rng data(19);
    for (FeatureMode mode : kModes) {
        for (int trial = 0; trial < 5; ++trial) {
            const auto pts = random_points(data, 80);
            const ModelConfig cfg = one_stage(mode);
            const auto m = jittered<double>(cfg, static_cast<std::uint64_t>(trial) + 100);
            Rng rng(0);
            const auto out = stage_forward(m, 0, PointCloud(pts), static_cast<const Eigen::MatrixXd*>(nullptr), rng);
            const std::vector<std::size_t> anchors(out.anchors.indices().begin(), out.anchors.indices().end());
            ASSERT_EQ(anchors, oracle::fps(pts, cfg.stages[0].anchors, 0));
            const auto want = oracle::stage(pts, anchors, cfg.stages[0].radius, cfg.stages[0].k_max,
                                            oracle::layers_from(m.parameters(), "stage0."), uses_vectors(mode),
                                            uses_distance(mode));
            ASSERT_EQ(static_cast<std::size_t>(out.pooled.cols()), want.size());
            for (std::size_t a = 0; a < want.size(); ++a) {
                ASSERT_EQ(static_cast<std::size_t>(out.pooled.rows()), want[a].size());
                for (std::size_t c = 0; c < want[a].size(); ++c)
                    EXPECT_NEAR(out.pooled(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)), want[a][c], 1e-6);
            }
        }
    }
}

TEST(StageForward, IdentityLiftOnEqualNeighbors) {
    ModelConfig cfg;
    cfg.stages = {StageConfig{1, 0.5, 4, {3}, QueryKind::ball, std::nullopt}};
    cfg.head = {};
    cfg.num_classes = 2;
    ClassifierModel<double> m(cfg);
    m.lift(0)[0].weight = Eigen::MatrixXd::Identity(3, 3);
    m.lift(0)[0].bias << 0.3, -0.2, 0.5;
    // Every neighbor coincides with the anchor except one far away point.
    const PointCloud cloud({{0.1, 0.2, 0.3}, {0.1, 0.2, 0.3}, {0.1, 0.2, 0.3}, {5, 5, 5}});
    Rng rng(0);
    const auto out = stage_forward(m, 0, cloud, static_cast<const Eigen::MatrixXd*>(nullptr), rng);
    ASSERT_EQ(out.pooled.cols(), 1);
    EXPECT_EQ(out.pooled(0, 0), 0.3);
    EXPECT_EQ(out.pooled(1, 0), 0.0);
    EXPECT_EQ(out.pooled(2, 0), 0.5);
}

TEST(MaxPool, DuplicateSlotsDoNotChangeResultAndTiesGoLow) {
    Eigen::MatrixXd x(2, 3);
    x << 1, 5, 5,  //
        2, 2, 0;
    Eigen::MatrixXd pooled;
    std::vector<std::size_t> arg;
    detail::max_pool(x, 1, 3, pooled, arg);
    EXPECT_EQ(pooled(0, 0), 5.0);
    EXPECT_EQ(pooled(1, 0), 2.0);
    EXPECT_EQ(arg[0], 1u);
    EXPECT_EQ(arg[1], 0u);

    Eigen::MatrixXd dup(2, 4);
    dup << 1, 5, 5, 1,  //
        2, 2, 0, 2;
    Eigen::MatrixXd pooled2;
    detail::max_pool(dup, 1, 4, pooled2, arg);
    EXPECT_EQ(pooled2, pooled);
}

TEST(Forward, PermutationInvariantWithPinnedAnchors) {
    // k covers every neighbor so the neighbor sets do not depend on order.
    ModelConfig cfg;
    cfg.stages = {StageConfig{10, 0.6, 60, {8, 8}, QueryKind::ball, std::nullopt},
                  StageConfig{3, 1.0, 10, {8}, QueryKind::ball, std::nullopt}};
    cfg.num_classes = 3;
    cfg.mode = FeatureMode::both;
    const auto m = jittered<double>(cfg, 4);
    Rng rng(12);
    const auto pts = random_points(rng, 60);
    std::vector<std::size_t> perm(pts.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<Point3> permuted(pts.size());
    std::vector<std::size_t> where(pts.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        permuted[i] = pts[perm[i]];
        where[perm[i]] = i;
    }
    const AnchorSet a0 = farthest_point_sample(PointCloud(pts), 10, std::size_t{0});
    std::vector<std::size_t> mapped;
    for (std::size_t a : a0.indices()) mapped.push_back(where[a]);
    const std::vector<AnchorSet> pin1{a0, AnchorSet({0, 4, 7}, 10)};
    const std::vector<AnchorSet> pin2{AnchorSet(mapped, 60), AnchorSet({0, 4, 7}, 10)};
    Rng g(0);
    const auto x = forward(m, build_geometry(cfg, PointCloud(pts), g, pin1));
    const auto y = forward(m, build_geometry(cfg, PointCloud(permuted), g, pin2));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 1e-6);
}

TEST(Forward, BatchIsALoop) {
    const auto cfg = ModelConfig::desk_default(3, FeatureMode::both);
    const auto m = jittered<float>(cfg, 8);
    Rng data(3);
    std::vector<PointCloud> clouds;
    for (int i = 0; i < 4; ++i) clouds.emplace_back(random_points(data, 200));
    std::vector<CloudGeometry> batch;
    Rng g(0);
    for (const auto& c : clouds) batch.push_back(build_geometry(cfg, c, g));
    for (std::size_t i = 0; i < clouds.size(); ++i) {
        Rng single(0);
        EXPECT_EQ(forward(m, batch[i]), forward(m, clouds[i], single));
    }
}

TEST(SoftmaxCrossEntropy, Examples) {
    for (std::size_t k : {2u, 3u, 10u}) {
        const std::vector<double> logits(k, 0.7);
        EXPECT_NEAR(softmax_cross_entropy(logits, 0), std::log(static_cast<double>(k)), 1e-12);
    }
    double prev = 1e300;
    for (double gap = -3; gap <= 3; gap += 0.5) {
        const double loss = softmax_cross_entropy(std::vector<double>{gap, 0.0, 0.0}, 0);
        EXPECT_LT(loss, prev);
        prev = loss;
    }
    EXPECT_THROW((void)softmax_cross_entropy(std::vector<double>{0.0, 1.0}, 2), InvalidRequest);
    EXPECT_NEAR(softmax_cross_entropy(std::vector<double>{1000.0, 0.0}, 1), 1000.0, 1e-9);
}

TEST(SoftmaxCrossEntropy, MatchesExtendedPrecision) {
    Rng rng(44);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> logits(2 + rng.index(10));
        for (double& v : logits) v = rng.uniform(-30, 30);
        const std::size_t t = rng.index(logits.size());
        const double want = static_cast<double>(oracle::cross_entropy(logits, t));
        const double got = softmax_cross_entropy(logits, t);
        EXPECT_LE(std::abs(got - want), 1e-9 * std::max(1.0, std::abs(want)));
    }
}

TEST(Backward, HeadBiasGradientIsSoftmaxMinusOneHot) {
    const ClassifierModel<double> m(ModelConfig::desk_default(5));
    Rng rng(1);
    const auto g = backward(m, PointCloud(random_points(rng, 300)), 2, rng);
    const auto& bias = g.grads.head().back().bias;
    for (Eigen::Index c = 0; c < 5; ++c) EXPECT_NEAR(bias(c), 0.2 - (c == 2 ? 1.0 : 0.0), 1e-15);
    EXPECT_NEAR(g.loss, std::log(5.0), 1e-12);
}

TEST(Backward, DeadUnitsGetNoGradient) {
    // A lift unit whose pre-activation is negative everywhere never wins a
    // pooled slot with a live gradient.
    auto cfg = one_stage(FeatureMode::base);
    auto m = jittered<double>(cfg, 5);
    auto& last = m.lift(0).back();
    last.weight.row(2).setZero();
    last.bias(2) = -1.0;
    Rng rng(3);
    const auto geo = build_geometry(cfg, PointCloud(random_points(rng, 60)), rng);
    const auto g = backward(m, geo, 1);
    EXPECT_EQ(g.grads.lift(0).back().weight.row(2).norm(), 0.0);
    EXPECT_EQ(g.grads.lift(0).back().bias(2), 0.0);
}

TEST(Backward, LossMatchesForward) {
    const auto cfg = two_stage(FeatureMode::both);
    const auto m = jittered<double>(cfg, 6);
    Rng rng(2);
    const auto geo = build_geometry(cfg, PointCloud(random_points(rng, 64)), rng);
    const auto g = backward(m, geo, 0);
    EXPECT_EQ(g.logits, forward(m, geo));
    EXPECT_NEAR(g.loss, softmax_cross_entropy(g.logits, 0), 0.0);
}

class GradientCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
    const int which = GetParam();
    const FeatureMode mode = kModes[which % 4];
    const ModelConfig cfg = which < 4 ? fixtures::tiny_config(mode) : two_stage(mode);
    std::size_t checked = 0;
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const auto m = jittered<double>(cfg, seed);
        Rng rng(seed + 50);
        const auto geo = build_geometry(cfg, PointCloud(random_points(rng, 40, 0.6)), rng);
        const auto r = fixtures::gradient_check(m, geo, seed % cfg.num_classes, 1e-3);
        EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed << " worst " << r.worst;
        checked += r.parameters - r.kinks;
    }
    EXPECT_GT(checked, 0u);
}

INSTANTIATE_TEST_SUITE_P(Modes, GradientCheck, ::testing::Range(0, 8));

TEST(Backward, FloatAndDoubleAgree) {
    const auto cfg = ModelConfig::desk_default(4, FeatureMode::both);
    const auto mf = jittered<float>(cfg, 9);
    const auto md = mf.cast<double>();
    Rng rng(1);
    const auto geo = build_geometry(cfg, PointCloud(random_points(rng, 300)), rng);
    const auto gf = backward(mf, geo, 3);
    const auto gd = backward(md, geo, 3);
    EXPECT_NEAR(gf.loss, gd.loss, 1e-4);
}
