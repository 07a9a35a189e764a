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
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "localfeat/core.hpp"
#include "localfeat/features.hpp"
#include "localfeat/neighborhood.hpp"

namespace localfeat {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class Activation { relu, none };

/// How the first FPS index of every stage is chosen.
enum class FpsStart { first, random };

struct StageConfig {
    std::size_t anchors = 128;
    double radius = 0.2;
    std::size_t k_max = 16;
    std::vector<std::size_t> lift{32, 32};
    QueryKind query = QueryKind::ball;
    std::optional<FeatureMode> mode;  // overrides ModelConfig::mode for this stage
};

struct ModelConfig {
    std::vector<StageConfig> stages;
    std::vector<std::size_t> head{32};
    std::size_t num_classes = 8;
    FeatureMode mode = FeatureMode::base;
    bool normalize_distance = true;
    FpsStart fps_start = FpsStart::first;

    /// Two-stage desk-scale network: 128 and 32 anchors, radii 0.2 and 0.4,
    /// 16 neighbors, lifts 3->32->32 and (C+3)->64->64, head C->32->classes.
    [[nodiscard]] static ModelConfig desk_default(std::size_t num_classes, FeatureMode mode = FeatureMode::base) {
        ModelConfig c;
        c.stages = {StageConfig{128, 0.2, 16, {32, 32}, QueryKind::ball, std::nullopt},
                    StageConfig{32, 0.4, 16, {64, 64}, QueryKind::ball, std::nullopt}};
        c.head = {32};
        c.num_classes = num_classes;
        c.mode = mode;
        return c;
    }

    [[nodiscard]] FeatureMode stage_mode(std::size_t i) const { return stages.at(i).mode.value_or(mode); }

    [[nodiscard]] std::size_t stage_input_width(std::size_t i) const {
        return i == 0 ? 3 : stage_output_width(i - 1) + 3;
    }
    [[nodiscard]] std::size_t stage_output_width(std::size_t i) const {
        return stages.at(i).lift.back() + extra_channels(stage_mode(i));
    }
    [[nodiscard]] std::size_t head_input_width() const { return stage_output_width(stages.size() - 1); }

    void validate() const {
        if (stages.empty()) throw InvalidConfig("model needs at least one set-abstraction stage");
        if (num_classes < 2) throw InvalidConfig("model needs at least two classes");
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const StageConfig& s = stages[i];
            const std::string where = "stage " + std::to_string(i) + ": ";
            if (s.anchors < 1) throw InvalidConfig(where + "anchors must be >= 1");
            if (s.k_max < 1) throw InvalidConfig(where + "k_max must be >= 1");
            if (s.query == QueryKind::ball && (!(s.radius > 0.0) || !std::isfinite(s.radius)))
                throw InvalidConfig(where + "radius must be > 0");
            if (s.lift.empty()) throw InvalidConfig(where + "lift needs at least one layer");
            for (std::size_t w : s.lift)
                if (w < 1) throw InvalidConfig(where + "lift widths must be >= 1");
            if (i > 0 && s.anchors > stages[i - 1].anchors)
                throw InvalidConfig(where + "anchors cannot exceed the previous stage's anchors");
        }
        for (std::size_t w : head)
            if (w < 1) throw InvalidConfig("head widths must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct ParameterBlock {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;

    friend bool operator==(const ParameterBlock&, const ParameterBlock&) = default;
};

/// Every parameter of a model in declared order. Weight matrices are
/// flattened row-major (out x in).
struct ParameterVector {
    std::vector<ParameterBlock> blocks;
    std::vector<double> values;

    [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
    [[nodiscard]] bool same_layout(const ParameterVector& o) const { return blocks == o.blocks; }

    friend bool operator==(const ParameterVector&, const ParameterVector&) = default;
};

template <typename Scalar>
struct DenseLayer {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Matrix weight;  // out x in
    Vector bias;
    Activation activation = Activation::relu;

    DenseLayer() = default;
    DenseLayer(std::size_t in, std::size_t out, Activation act)
        : weight(Matrix::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in))),
          bias(Vector::Zero(static_cast<Eigen::Index>(out))), activation(act) {}

    [[nodiscard]] std::size_t in() const noexcept { return static_cast<std::size_t>(weight.cols()); }
    [[nodiscard]] std::size_t out() const noexcept { return static_cast<std::size_t>(weight.rows()); }

    /// Applies the layer to every column of `x`.
    [[nodiscard]] Matrix apply(const Matrix& x) const {
        Matrix y = weight * x;
        y.colwise() += bias;
        if (activation == Activation::relu) y = y.cwiseMax(Scalar(0));
        return y;
    }
};

/// Set-abstraction classifier: per-stage lift MLPs followed by a dense head.
template <typename Scalar>
class ClassifierModel {
public:
    using Layer = DenseLayer<Scalar>;

    ClassifierModel() = default;

    /// All parameters zero.
    explicit ClassifierModel(ModelConfig config) : config_(std::move(config)) {
        config_.validate();
        lifts_.resize(config_.stages.size());
        for (std::size_t i = 0; i < config_.stages.size(); ++i) {
            std::size_t in = config_.stage_input_width(i);
            for (std::size_t w : config_.stages[i].lift) {
                lifts_[i].emplace_back(in, w, Activation::relu);
                in = w;
            }
        }
        std::size_t in = config_.head_input_width();
        for (std::size_t w : config_.head) {
            head_.emplace_back(in, w, Activation::relu);
            in = w;
        }
        head_.emplace_back(in, config_.num_classes, Activation::none);
    }

    /// He-normal weights drawn from `rng`, zero biases.
    [[nodiscard]] static ClassifierModel initialized(ModelConfig config, Rng& rng) {
        ClassifierModel m(std::move(config));
        auto init = [&](Layer& l) {
            const double stddev = std::sqrt(2.0 / static_cast<double>(l.in()));
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                    l.weight(r, c) = static_cast<Scalar>(rng.normal(0.0, stddev));
        };
        for (auto& stage : m.lifts_)
            for (auto& l : stage) init(l);
        for (auto& l : m.head_) init(l);
        return m;
    }

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::vector<Layer>& lift(std::size_t stage) { return lifts_.at(stage); }
    [[nodiscard]] const std::vector<Layer>& lift(std::size_t stage) const { return lifts_.at(stage); }
    [[nodiscard]] std::vector<Layer>& head() noexcept { return head_; }
    [[nodiscard]] const std::vector<Layer>& head() const noexcept { return head_; }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_layer([&](const std::string&, const Layer& l) { n += static_cast<std::size_t>(l.weight.size() + l.bias.size()); });
        return n;
    }

    [[nodiscard]] ParameterVector parameters() const {
        ParameterVector pv;
        pv.values.reserve(parameter_count());
        for_each_layer([&](const std::string& prefix, const Layer& l) {
            ParameterBlock w{prefix + ".weight", {l.out(), l.in()}, pv.values.size(), l.out() * l.in()};
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) pv.values.push_back(static_cast<double>(l.weight(r, c)));
            ParameterBlock b{prefix + ".bias", {l.out()}, pv.values.size(), l.out()};
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) pv.values.push_back(static_cast<double>(l.bias(r)));
            pv.blocks.push_back(std::move(w));
            pv.blocks.push_back(std::move(b));
        });
        return pv;
    }

    /// Appends the flattened parameter values in parameters() order.
    void append_values(std::vector<double>& out) const {
        visit_layers([&](const Layer& l) {
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out.push_back(static_cast<double>(l.weight(r, c)));
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(static_cast<double>(l.bias(r)));
        });
    }

    /// Inverse of parameters(); the layout must match this model exactly.
    void set_parameters(const ParameterVector& pv) { set_parameters(pv.values, &pv); }

    void set_parameters(std::span<const double> values, const ParameterVector* layout = nullptr) {
        if (values.size() != parameter_count())
            throw ShapeError("parameter vector has " + std::to_string(values.size()) + " values, model needs " +
                             std::to_string(parameter_count()));
        if (layout != nullptr && !layout->same_layout(parameters()))
            throw ShapeError("parameter vector layout does not match the model");
        std::size_t pos = 0;
        for_each_layer_mut([&](Layer& l) {
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = static_cast<Scalar>(values[pos++]);
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = static_cast<Scalar>(values[pos++]);
        });
    }

    template <typename Other>
    [[nodiscard]] ClassifierModel<Other> cast() const {
        ClassifierModel<Other> out(config_);
        out.set_parameters(parameters());
        return out;
    }

    /// Zeroed copy with the same shapes, used as a gradient accumulator.
    [[nodiscard]] ClassifierModel zeros_like() const { return ClassifierModel(config_); }

private:
    template <typename F>
    void for_each_layer(F&& f) const {
        for (std::size_t s = 0; s < lifts_.size(); ++s)
            for (std::size_t l = 0; l < lifts_[s].size(); ++l)
                f("stage" + std::to_string(s) + ".lift" + std::to_string(l), lifts_[s][l]);
        for (std::size_t l = 0; l < head_.size(); ++l) f("head" + std::to_string(l), head_[l]);
    }
    template <typename F>
    void visit_layers(F&& f) const {
        for (const auto& stage : lifts_)
            for (const auto& l : stage) f(l);
        for (const auto& l : head_) f(l);
    }
    template <typename F>
    void for_each_layer_mut(F&& f) {
        for (auto& stage : lifts_)
            for (auto& l : stage) f(l);
        for (auto& l : head_) f(l);
    }

    ModelConfig config_;
    std::vector<std::vector<Layer>> lifts_;
    std::vector<Layer> head_;
};

// ---------------------------------------------------------------------------
// Geometry shared by forward and backward
// ---------------------------------------------------------------------------

/// Sampling and grouping of one stage. Depends only on the cloud and the
/// model configuration, never on parameters, so it can be cached.
struct StageGeometry {
    PointCloud points;  // stage input points
    NeighborhoodGrouping grouping;
    std::vector<double> radii;
    DirectionalVectors dv;
    NormalizedDistances d;
};

struct CloudGeometry {
    std::vector<StageGeometry> stages;
};

/// Runs FPS, neighborhood query and the neighborhood features for one stage.
[[nodiscard]] inline StageGeometry build_stage_geometry(const ModelConfig& config, std::size_t stage,
                                                        const PointCloud& points, Rng& rng,
                                                        const AnchorSet* pinned = nullptr) {
    const StageConfig& sc = config.stages.at(stage);
    if (sc.anchors > points.size())
        throw InvalidRequest("stage " + std::to_string(stage) + " needs " + std::to_string(sc.anchors) +
                             " anchors but has only " + std::to_string(points.size()) + " points");
    StageGeometry g{points, {}, {}, {}, {}};
    AnchorSet anchors;
    if (pinned != nullptr) {
        anchors = AnchorSet(std::vector<std::size_t>(pinned->indices().begin(), pinned->indices().end()), points.size());
    } else if (config.fps_start == FpsStart::random) {
        anchors = farthest_point_sample(points, sc.anchors, rng);
    } else {
        anchors = farthest_point_sample(points, sc.anchors, std::size_t{0});
    }
    g.grouping = sc.query == QueryKind::ball ? ball_query(points, anchors, BallQueryConfig{sc.radius, sc.k_max})
                                             : knn_query(points, anchors, sc.k_max);
    g.radii = normalization_radii(g.grouping);
    g.dv = directional_vectors(points, g.grouping, g.radii);
    g.d = normalized_distance(g.grouping, g.radii, config.normalize_distance);
    return g;
}

/// Geometry for every stage. `pinned`, when non-empty, fixes the anchor set
/// of each stage instead of running FPS.
[[nodiscard]] inline CloudGeometry build_geometry(const ModelConfig& config, const PointCloud& cloud, Rng& rng,
                                                  std::span<const AnchorSet> pinned = {}) {
    if (!pinned.empty() && pinned.size() != config.stages.size())
        throw InvalidRequest("pinned anchors must cover every stage");
    CloudGeometry geo;
    PointCloud points = cloud;
    for (std::size_t i = 0; i < config.stages.size(); ++i) {
        geo.stages.push_back(build_stage_geometry(config, i, points, rng, pinned.empty() ? nullptr : &pinned[i]));
        const StageGeometry& sg = geo.stages.back();
        std::vector<Point3> next;
        next.reserve(sg.grouping.num_anchors());
        for (std::size_t a : sg.grouping.anchors.indices()) next.push_back(points[a]);
        points = PointCloud(std::move(next));
    }
    return geo;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <typename Scalar>
struct StageTrace {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    Matrix input;                     // in x slots
    std::vector<Matrix> activations;  // output of each lift layer
    FeatureTensor<Scalar> assembled;  // (C0 + extra) x slots
    Matrix pooled;                    // C x anchors
    std::vector<std::size_t> argmax;  // C x anchors, winning slot within the row
};

template <typename Scalar>
struct ForwardTrace {
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    std::vector<StageTrace<Scalar>> stages;
    Vector global;                     // max over last-stage anchors
    std::vector<std::size_t> global_argmax;
    std::vector<Vector> head_inputs;   // input of each head layer
    Vector logits;
};

namespace detail {

/// Elementwise max over the k slots of each anchor. Ties keep the lowest slot.
template <typename Scalar>
void max_pool(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x, std::size_t anchors, std::size_t k,
              Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& pooled, std::vector<std::size_t>& argmax) {
    const Eigen::Index channels = x.rows();
    pooled.resize(channels, static_cast<Eigen::Index>(anchors));
    argmax.assign(static_cast<std::size_t>(channels) * anchors, 0);
    for (std::size_t a = 0; a < anchors; ++a) {
        const auto base = static_cast<Eigen::Index>(a * k);
        auto out = pooled.col(static_cast<Eigen::Index>(a));
        out = x.col(base);
        std::size_t* arg = &argmax[a * static_cast<std::size_t>(channels)];
        for (std::size_t s = 1; s < k; ++s) {
            const auto col = x.col(base + static_cast<Eigen::Index>(s));
            for (Eigen::Index c = 0; c < channels; ++c) {
                if (col(c) > out(c)) {
                    out(c) = col(c);
                    arg[c] = s;
                }
            }
        }
    }
}

}  // namespace detail

/// One set-abstraction stage on precomputed geometry: gather inputs, lift,
/// append neighborhood features, max-pool per anchor.
template <typename Scalar>
void run_stage(const ClassifierModel<Scalar>& model, std::size_t stage, const StageGeometry& geo,
               const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>* prev_pooled, StageTrace<Scalar>& trace) {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const ModelConfig& cfg = model.config();
    const NeighborhoodGrouping& g = geo.grouping;
    const std::size_t slots = g.slots();
    const auto in_width = static_cast<Eigen::Index>(cfg.stage_input_width(stage));
    const Eigen::Index prev_width = in_width - 3;

    if (stage > 0 && (prev_pooled == nullptr || prev_pooled->rows() != prev_width ||
                      static_cast<std::size_t>(prev_pooled->cols()) != geo.points.size()))
        throw ShapeError("stage " + std::to_string(stage) + ": previous features do not match the stage input");

    trace.input.resize(in_width, static_cast<Eigen::Index>(slots));
    for (std::size_t j = 0; j < slots; ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        if (prev_width > 0) trace.input.col(col).head(prev_width) = prev_pooled->col(static_cast<Eigen::Index>(g.neighbor_indices[j]));
        trace.input(prev_width, col) = static_cast<Scalar>(geo.dv.values[j * 3]);
        trace.input(prev_width + 1, col) = static_cast<Scalar>(geo.dv.values[j * 3 + 1]);
        trace.input(prev_width + 2, col) = static_cast<Scalar>(geo.dv.values[j * 3 + 2]);
    }

    const auto& layers = model.lift(stage);
    trace.activations.clear();
    const Matrix* h = &trace.input;
    for (const auto& layer : layers) {
        trace.activations.push_back(layer.apply(*h));
        h = &trace.activations.back();
    }

    FeatureTensor<Scalar> lifted;
    lifted.anchors = g.num_anchors();
    lifted.k = g.k;
    lifted.layout = ChannelLayout{static_cast<std::size_t>(h->rows()), false, false};
    lifted.values = *h;
    trace.assembled = assemble_features(lifted, geo.dv, geo.d, cfg.stage_mode(stage));
    detail::max_pool(trace.assembled.values, g.num_anchors(), g.k, trace.pooled, trace.argmax);
}

/// Full forward pass keeping every intermediate needed by backward().
template <typename Scalar>
[[nodiscard]] ForwardTrace<Scalar> forward_trace(const ClassifierModel<Scalar>& model, const CloudGeometry& geo) {
    const ModelConfig& cfg = model.config();
    if (geo.stages.size() != cfg.stages.size()) throw ShapeError("geometry does not match the model's stage count");
    ForwardTrace<Scalar> t;
    t.stages.resize(cfg.stages.size());
    for (std::size_t i = 0; i < cfg.stages.size(); ++i)
        run_stage(model, i, geo.stages[i], i == 0 ? nullptr : &t.stages[i - 1].pooled, t.stages[i]);

    const auto& last = t.stages.back().pooled;
    const Eigen::Index channels = last.rows();
    t.global.resize(channels);
    t.global_argmax.assign(static_cast<std::size_t>(channels), 0);
    for (Eigen::Index c = 0; c < channels; ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index a = 1; a < last.cols(); ++a)
            if (last(c, a) > last(c, best)) best = a;
        t.global(c) = last(c, best);
        t.global_argmax[static_cast<std::size_t>(c)] = static_cast<std::size_t>(best);
    }

    typename ForwardTrace<Scalar>::Vector x = t.global;
    for (const auto& layer : model.head()) {
        t.head_inputs.push_back(x);
        typename ForwardTrace<Scalar>::Vector y = layer.weight * x + layer.bias;
        if (layer.activation == Activation::relu) y = y.cwiseMax(Scalar(0));
        x = std::move(y);
    }
    t.logits = std::move(x);
    return t;
}

template <typename Scalar>
[[nodiscard]] std::vector<double> forward(const ClassifierModel<Scalar>& model, const CloudGeometry& geo) {
    const auto t = forward_trace(model, geo);
    std::vector<double> logits(static_cast<std::size_t>(t.logits.size()));
    for (Eigen::Index i = 0; i < t.logits.size(); ++i) logits[static_cast<std::size_t>(i)] = static_cast<double>(t.logits(i));
    return logits;
}

template <typename Scalar>
[[nodiscard]] std::vector<double> forward(const ClassifierModel<Scalar>& model, const PointCloud& cloud, Rng& rng) {
    return forward(model, build_geometry(model.config(), cloud, rng));
}

template <typename Scalar>
struct StageOutput {
    AnchorSet anchors;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> pooled;  // C x anchors
};

/// Stand-alone stage: sampling, grouping, features, lift and pooling.
/// `point_features` (C_prev x n) is required for every stage after the first.
template <typename Scalar>
[[nodiscard]] StageOutput<Scalar> stage_forward(const ClassifierModel<Scalar>& model, std::size_t stage,
                                                const PointCloud& points,
                                                const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>* point_features,
                                                Rng& rng) {
    const StageGeometry geo = build_stage_geometry(model.config(), stage, points, rng);
    StageTrace<Scalar> trace;
    run_stage(model, stage, geo, point_features, trace);
    return {geo.grouping.anchors, std::move(trace.pooled)};
}

// ---------------------------------------------------------------------------
// Loss and backward
// ---------------------------------------------------------------------------

/// Negative log-likelihood of `target` under softmax(logits), computed with
/// max subtraction. Writes softmax - onehot to `grad` when given. Non-finite
/// logits yield a NaN loss and gradient so callers can report divergence.
[[nodiscard]] inline double softmax_cross_entropy(std::span<const double> logits, std::size_t target,
                                                  std::vector<double>* grad = nullptr) {
    if (logits.empty()) throw InvalidRequest("softmax_cross_entropy: no logits");
    if (target >= logits.size()) throw InvalidRequest("softmax_cross_entropy: target out of range");
    for (double v : logits) {
        if (std::isfinite(v)) continue;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        if (grad != nullptr) grad->assign(logits.size(), nan);
        return nan;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    const double log_z = mx + std::log(sum);
    if (grad != nullptr) {
        grad->resize(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logits[i] - log_z);
        (*grad)[target] -= 1.0;
    }
    return log_z - logits[target];
}

template <typename Scalar>
struct Gradients {
    ClassifierModel<Scalar> grads;  // same shapes as the model
    double loss = 0.0;
    std::vector<double> logits;
};

/// Exact reverse-mode gradients of the cross-entropy loss on one cloud.
/// Max-pool gradients go to the winning slot only (lowest slot on ties).
template <typename Scalar>
[[nodiscard]] Gradients<Scalar> backward(const ClassifierModel<Scalar>& model, const CloudGeometry& geo,
                                         std::size_t target) {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    const ModelConfig& cfg = model.config();
    const ForwardTrace<Scalar> t = forward_trace(model, geo);

    Gradients<Scalar> out{model.zeros_like(), 0.0, {}};
    out.logits.resize(static_cast<std::size_t>(t.logits.size()));
    for (Eigen::Index i = 0; i < t.logits.size(); ++i) out.logits[static_cast<std::size_t>(i)] = static_cast<double>(t.logits(i));
    std::vector<double> dlogits;
    out.loss = softmax_cross_entropy(out.logits, target, &dlogits);

    // Head.
    Vector g(t.logits.size());
    for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = static_cast<Scalar>(dlogits[static_cast<std::size_t>(i)]);
    const auto& head = model.head();
    for (std::size_t l = head.size(); l-- > 0;) {
        const auto& layer = head[l];
        auto& gl = out.grads.head()[l];
        if (layer.activation == Activation::relu) {
            const Vector y = layer.weight * t.head_inputs[l] + layer.bias;
            for (Eigen::Index i = 0; i < g.size(); ++i)
                if (!(y(i) > Scalar(0))) g(i) = Scalar(0);
        }
        gl.weight.noalias() += g * t.head_inputs[l].transpose();
        gl.bias += g;
        g = (layer.weight.transpose() * g).eval();
    }

    // Global pool.
    const std::size_t n_stages = cfg.stages.size();
    Matrix dpooled = Matrix::Zero(t.stages.back().pooled.rows(), t.stages.back().pooled.cols());
    for (Eigen::Index c = 0; c < g.size(); ++c)
        dpooled(c, static_cast<Eigen::Index>(t.global_argmax[static_cast<std::size_t>(c)])) += g(c);

    for (std::size_t s = n_stages; s-- > 0;) {
        const StageTrace<Scalar>& st = t.stages[s];
        const NeighborhoodGrouping& grp = geo.stages[s].grouping;
        const auto channels = static_cast<std::size_t>(st.pooled.rows());
        const std::size_t lifted_width = cfg.stages[s].lift.back();

        // Only lifted channels carry parameters; the appended neighborhood
        // channels are constants of the geometry.
        Matrix dh = Matrix::Zero(static_cast<Eigen::Index>(lifted_width), st.assembled.values.cols());
        for (std::size_t a = 0; a < grp.num_anchors(); ++a)
            for (std::size_t c = 0; c < lifted_width; ++c) {
                const std::size_t slot = st.argmax[a * channels + c];
                dh(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a * grp.k + slot)) +=
                    dpooled(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a));
            }

        const auto& layers = model.lift(s);
        auto& glayers = out.grads.lift(s);
        for (std::size_t l = layers.size(); l-- > 0;) {
            const Matrix& y = st.activations[l];
            const Matrix& x = l == 0 ? st.input : st.activations[l - 1];
            if (layers[l].activation == Activation::relu) dh = dh.cwiseProduct((y.array() > Scalar(0)).template cast<Scalar>().matrix());
            glayers[l].weight.noalias() += dh * x.transpose();
            glayers[l].bias += dh.rowwise().sum();
            if (l > 0 || s > 0) dh = (layers[l].weight.transpose() * dh).eval();
        }

        if (s > 0) {
            // dh now holds d(input); route the feature rows back to the
            // previous stage's pooled columns of each neighbor.
            const Eigen::Index prev_width = dh.rows() - 3;
            Matrix dprev = Matrix::Zero(prev_width, t.stages[s - 1].pooled.cols());
            for (std::size_t j = 0; j < grp.slots(); ++j)
                dprev.col(static_cast<Eigen::Index>(grp.neighbor_indices[j])) += dh.col(static_cast<Eigen::Index>(j)).head(prev_width);
            dpooled = std::move(dprev);
        }
    }
    return out;
}

template <typename Scalar>
[[nodiscard]] Gradients<Scalar> backward(const ClassifierModel<Scalar>& model, const PointCloud& cloud,
                                         std::size_t target, Rng& rng) {
    return backward(model, build_geometry(model.config(), cloud, rng), target);
}

}  // namespace localfeat
