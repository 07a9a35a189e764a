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


// Shared fixtures for the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "localfeat/network.hpp"
#include "oracles.hpp"

namespace fixtures {

using namespace localfeat;

inline std::vector<Point3> random_points(Rng& rng, std::size_t n, double half = 1.0) {
    std::vector<Point3> pts;
    pts.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        pts.push_back({rng.uniform(-half, half), rng.uniform(-half, half), rng.uniform(-half, half)});
    return pts;
}

/// One set-abstraction stage, small enough for an exhaustive finite
/// difference sweep (235 parameters).
inline ModelConfig tiny_config(FeatureMode mode = FeatureMode::both) {
    ModelConfig c;
    c.stages = {StageConfig{8, 0.5, 8, {8, 8}, QueryKind::ball, std::nullopt}};
    c.head = {8};
    c.num_classes = 3;
    c.mode = mode;
    return c;
}

struct GradCheck {
    std::size_t parameters = 0;
    double max_relative_error = 0.0;
    std::string worst;
    std::size_t kinks = 0;  // parameters whose +-h probe changes a ReLU or max-pool decision
    double max_kink_error = 0.0;  // informational: finite differences are invalid there
};

/// Every piecewise decision of a forward pass: ReLU signs, pooling winners.
inline std::vector<std::size_t> activation_pattern(const ClassifierModel<double>& model, const CloudGeometry& geo) {
    const auto t = forward_trace(model, geo);
    std::vector<std::size_t> p;
    for (const auto& st : t.stages) {
        for (const auto& a : st.activations)
            for (Eigen::Index i = 0; i < a.size(); ++i) p.push_back(a.data()[i] > 0.0);
        p.insert(p.end(), st.argmax.begin(), st.argmax.end());
    }
    p.insert(p.end(), t.global_argmax.begin(), t.global_argmax.end());
    for (std::size_t l = 1; l < t.head_inputs.size(); ++l)
        for (Eigen::Index i = 0; i < t.head_inputs[l].size(); ++i) p.push_back(t.head_inputs[l](i) > 0.0);
    return p;
}

/// Analytic gradients of a 64-bit model against central differences of an
/// extended-precision loss, on fixed geometry.
inline GradCheck gradient_check(const ClassifierModel<double>& model, const CloudGeometry& geo, std::size_t target,
                                double h) {
    const auto analytic_model = backward(model, geo, target).grads;
    std::vector<double> analytic;
    analytic_model.append_values(analytic);

    ClassifierModel<double> probe = model;
    const ParameterVector pv = model.parameters();
    const auto numeric = oracle::central_differences(
        pv.values,
        [&](const std::vector<double>& theta) {
            probe.set_parameters(theta);
            return static_cast<double>(oracle::cross_entropy(forward(probe, geo), target));
        },
        h);

    GradCheck out;
    out.parameters = pv.values.size();
    const auto pattern = activation_pattern(model, geo);
    std::vector<double> theta = pv.values;
    std::vector<bool> kink(theta.size(), false);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        for (double step : {h, -h}) {
            theta[i] = keep + step;
            probe.set_parameters(theta);
            if (activation_pattern(probe, geo) != pattern) {
                kink[i] = true;
                ++out.kinks;
                break;
            }
        }
        theta[i] = keep;
    }
    for (std::size_t i = 0; i < numeric.size(); ++i) {
        const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
        const double err = scale == 0.0 ? 0.0 : std::abs(analytic[i] - numeric[i]) / scale;
        if (kink[i]) {
            out.max_kink_error = std::max(out.max_kink_error, err);
            continue;
        }
        if (err > out.max_relative_error) {
            out.max_relative_error = err;
            for (const auto& b : pv.blocks)
                if (i >= b.offset && i < b.offset + b.size) out.worst = b.name + "[" + std::to_string(i - b.offset) + "]";
        }
    }
    return out;
}

}  // namespace fixtures
