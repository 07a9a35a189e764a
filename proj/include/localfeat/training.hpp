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
#include <functional>
#include <iomanip>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "localfeat/core.hpp"
#include "localfeat/data.hpp"
#include "localfeat/network.hpp"

namespace localfeat {

class DivergedError : public Error {
public:
    explicit DivergedError(std::size_t epoch)
        : Error("training diverged (non-finite loss) in epoch " + std::to_string(epoch)), epoch_(epoch) {}
    [[nodiscard]] std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

class IncompatibleCheckpoints : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
    double overall_accuracy = 0.0;     // correct / total
    double mean_class_accuracy = 0.0;  // mean per-class recall over classes present

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct Evaluation {
    Metrics metrics;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    std::vector<std::optional<double>> per_class_recall;
    std::vector<std::string> warnings;
    std::size_t total = 0;
};

[[nodiscard]] inline Evaluation metrics_from_predictions(std::span<const std::size_t> labels,
                                                         std::span<const std::size_t> predictions,
                                                         std::size_t num_classes) {
    if (labels.size() != predictions.size()) throw ShapeError("labels and predictions differ in length");
    if (labels.empty()) throw InvalidDataset("cannot evaluate an empty dataset");
    Evaluation e;
    e.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes || predictions[i] >= num_classes)
            throw InvalidDataset("label " + std::to_string(labels[i]) + " outside " + std::to_string(num_classes) + " classes");
        ++e.confusion[labels[i]][predictions[i]];
    }
    std::size_t correct = 0;
    double recall_sum = 0.0;
    std::size_t present = 0;
    e.per_class_recall.assign(num_classes, std::nullopt);
    for (std::size_t c = 0; c < num_classes; ++c) {
        correct += e.confusion[c][c];
        std::size_t row = 0;
        for (std::size_t v : e.confusion[c]) row += v;
        if (row == 0) {
            e.warnings.push_back("class " + std::to_string(c) + " has no samples; excluded from mean class accuracy");
            continue;
        }
        const double recall = static_cast<double>(e.confusion[c][c]) / static_cast<double>(row);
        e.per_class_recall[c] = recall;
        recall_sum += recall;
        ++present;
    }
    e.total = labels.size();
    e.metrics.overall_accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    e.metrics.mean_class_accuracy = recall_sum / static_cast<double>(present);
    return e;
}

[[nodiscard]] inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

/// Clouds with their grouping hierarchy computed once.
struct PreparedSet {
    std::vector<CloudGeometry> geometry;
    std::vector<std::size_t> labels;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
};

[[nodiscard]] inline PreparedSet prepare(const ModelConfig& config, std::span<const PointCloud> clouds, Rng& rng) {
    PreparedSet set;
    set.geometry.reserve(clouds.size());
    for (const PointCloud& c : clouds) {
        if (!c.label() || *c.label() < 0 || static_cast<std::size_t>(*c.label()) >= config.num_classes)
            throw InvalidDataset("every cloud needs a label below " + std::to_string(config.num_classes));
        set.geometry.push_back(build_geometry(config, c, rng));
        set.labels.push_back(static_cast<std::size_t>(*c.label()));
    }
    return set;
}

template <typename Scalar>
[[nodiscard]] Evaluation evaluate(const ClassifierModel<Scalar>& model, const PreparedSet& set) {
    std::vector<std::size_t> predictions;
    predictions.reserve(set.size());
    for (const auto& geo : set.geometry) predictions.push_back(argmax(forward(model, geo)));
    return metrics_from_predictions(set.labels, predictions, model.config().num_classes);
}

/// Evaluates `params` for `config` on labeled clouds. Geometry uses FPS seed
/// `seed` when the configuration asks for random starts.
[[nodiscard]] inline Evaluation evaluate(const ModelConfig& config, const ParameterVector& params,
                                         std::span<const PointCloud> clouds, std::uint64_t seed = 0) {
    ClassifierModel<float> model(config);
    model.set_parameters(params);
    Rng rng(seed);
    return evaluate(model, prepare(config, clouds, rng));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Stable 64-bit FNV-1a fingerprint of everything that shapes the parameters
/// and their meaning.
[[nodiscard]] inline std::string fingerprint(const ModelConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "v1|classes=" << c.num_classes << "|mode=" << to_string(c.mode) << "|normd=" << c.normalize_distance
       << "|fps=" << (c.fps_start == FpsStart::first ? "first" : "random");
    for (const auto& s : c.stages) {
        os << "|stage:" << s.anchors << ',' << s.radius << ',' << s.k_max << ','
           << (s.query == QueryKind::ball ? "ball" : "knn") << ',' << (s.mode ? to_string(*s.mode) : "-");
        for (std::size_t w : s.lift) os << ',' << w;
    }
    os << "|head";
    for (std::size_t w : c.head) os << ',' << w;
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : os.str()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << h;
    return hex.str();
}

/// A parameter snapshot with the validation metrics it was ranked by.
/// Averaged checkpoints carry epoch -1.
struct Checkpoint {
    ParameterVector params;
    std::int64_t epoch = 0;
    Metrics metrics;
    std::string fingerprint;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Ranking: higher val OA, then higher val mAcc, then later epoch.
[[nodiscard]] inline bool ranks_before(const Checkpoint& a, const Checkpoint& b) {
    if (a.metrics.overall_accuracy != b.metrics.overall_accuracy)
        return a.metrics.overall_accuracy > b.metrics.overall_accuracy;
    if (a.metrics.mean_class_accuracy != b.metrics.mean_class_accuracy)
        return a.metrics.mean_class_accuracy > b.metrics.mean_class_accuracy;
    return a.epoch > b.epoch;
}

/// The best checkpoints of one training session, best first.
class CheckpointStore {
public:
    static constexpr std::size_t kDefaultCapacity = 15;

    explicit CheckpointStore(std::size_t capacity = kDefaultCapacity) : capacity_(capacity) {
        if (capacity_ == 0) throw InvalidRequest("checkpoint store capacity must be >= 1");
    }

    /// Inserts `c` if it ranks within the current top `capacity`.
    bool offer(Checkpoint c) {
        if (entries_.size() == capacity_ && !ranks_before(c, entries_.back())) return false;
        auto pos = std::upper_bound(entries_.begin(), entries_.end(), c,
                                    [](const Checkpoint& x, const Checkpoint& y) { return ranks_before(x, y); });
        entries_.insert(pos, std::move(c));
        if (entries_.size() > capacity_) entries_.pop_back();
        return true;
    }

    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
    [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
    [[nodiscard]] const std::vector<Checkpoint>& entries() const noexcept { return entries_; }
    [[nodiscard]] const Checkpoint& best() const {
        if (entries_.empty()) throw InvalidRequest("checkpoint store is empty");
        return entries_.front();
    }

private:
    std::size_t capacity_;
    std::vector<Checkpoint> entries_;
};

/// Elementwise mean of `checkpoints`. Each element is summed over its values
/// in sorted order, so the result does not depend on the input order.
[[nodiscard]] inline ParameterVector average_parameters(std::span<const Checkpoint* const> checkpoints) {
    if (checkpoints.empty()) throw InvalidRequest("nothing to average");
    const Checkpoint& first = *checkpoints.front();
    for (const Checkpoint* c : checkpoints) {
        if (c->fingerprint != first.fingerprint)
            throw IncompatibleCheckpoints("checkpoints come from different model configurations (" + first.fingerprint +
                                          " vs " + c->fingerprint + ")");
        if (!c->params.same_layout(first.params) || c->params.size() != first.params.size())
            throw IncompatibleCheckpoints("checkpoint parameter layouts differ");
    }
    ParameterVector out = first.params;
    std::vector<double> column(checkpoints.size());
    const double k = static_cast<double>(checkpoints.size());
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        for (std::size_t j = 0; j < checkpoints.size(); ++j) column[j] = checkpoints[j]->params.values[i];
        std::sort(column.begin(), column.end());
        double sum = 0.0;
        for (double v : column) sum += v;
        out.values[i] = sum / k;
    }
    return out;
}

/// Soup of the top-k checkpoints. k = 1 returns the best checkpoint
/// unchanged; otherwise metrics are left zero for re-evaluation.
[[nodiscard]] inline Checkpoint soup_average(const CheckpointStore& store, std::size_t k) {
    if (k < 1 || k > store.size())
        throw InvalidRequest("soup size " + std::to_string(k) + " outside 1.." + std::to_string(store.size()));
    std::vector<const Checkpoint*> selected;
    for (std::size_t i = 0; i < k; ++i) selected.push_back(&store.entries()[i]);
    if (k == 1) {
        (void)average_parameters(selected);  // fingerprint checks only
        return store.best();
    }
    return Checkpoint{average_parameters(selected), -1, Metrics{}, store.best().fingerprint};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class OptimizerKind { adamw, sgd };

struct TrainRecipe {
    OptimizerKind optimizer = OptimizerKind::adamw;
    std::size_t epochs = 100;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double lr_min = 1e-5;
    double weight_decay = 1e-4;
    double momentum = 0.9;  // sgd only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t workers = 1;
    std::size_t store_capacity = CheckpointStore::kDefaultCapacity;
    // Per-epoch training augmentation: random rotation about z and an
    // isotropic scale drawn from [scale_min, scale_max].
    bool augment_rotate_z = true;
    double scale_min = 0.85;
    double scale_max = 1.15;

    void validate() const {
        if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
        if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
        if (!(lr >= 0.0) || !(lr_min >= 0.0)) throw InvalidConfig("learning rates must be >= 0");
        if (!(weight_decay >= 0.0)) throw InvalidConfig("weight_decay must be >= 0");
        if (workers < 1) throw InvalidConfig("workers must be >= 1");
        if (store_capacity < 1) throw InvalidConfig("store_capacity must be >= 1");
        if (!(scale_min > 0.0) || !(scale_max >= scale_min)) throw InvalidConfig("need 0 < scale_min <= scale_max");
    }

    [[nodiscard]] bool augments() const noexcept { return augment_rotate_z || scale_min != 1.0 || scale_max != 1.0; }
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    Metrics val;
    double lr = 0.0;  // at the last step of the epoch

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainResult {
    CheckpointStore store;
    std::vector<EpochRecord> history;
    ParameterVector initial_params;
    ParameterVector final_params;
    std::string fingerprint;
};

/// Cosine decay from `lr` to min(lr_min, lr) over `total` steps.
[[nodiscard]] inline double cosine_lr(const TrainRecipe& r, std::size_t step, std::size_t total) {
    const double floor = std::min(r.lr_min, r.lr);
    if (total <= 1) return r.lr;
    const double t = static_cast<double>(step) / static_cast<double>(total - 1);
    return floor + 0.5 * (r.lr - floor) * (1.0 + std::cos(std::numbers::pi * t));
}

namespace detail {

inline PointCloud augment(const PointCloud& cloud, const TrainRecipe& r, Rng& rng) {
    const double yaw = r.augment_rotate_z ? rng.uniform(0.0, 2.0 * std::numbers::pi) : 0.0;
    const double scale = r.scale_max > r.scale_min ? rng.uniform(r.scale_min, r.scale_max) : r.scale_min;
    const double c = std::cos(yaw), s = std::sin(yaw);
    std::vector<Point3> pts;
    pts.reserve(cloud.size());
    for (const Point3& p : cloud) pts.push_back({scale * (c * p.x - s * p.y), scale * (s * p.x + c * p.y), scale * p.z});
    return PointCloud(std::move(pts), cloud.label());
}

/// Per-sample gradients of one batch, summed in sample order so the result
/// is independent of the worker count.
inline double batch_gradient(const ClassifierModel<float>& model, const PreparedSet& set,
                             std::span<const std::size_t> batch, std::size_t workers, std::vector<double>& grad) {
    std::vector<std::vector<double>> per_sample(batch.size());
    std::vector<double> losses(batch.size(), 0.0);
    auto work = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t i = begin; i < batch.size(); i += stride) {
            const std::size_t s = batch[i];
            auto g = backward(model, set.geometry[s], set.labels[s]);
            per_sample[i].reserve(model.parameter_count());
            g.grads.append_values(per_sample[i]);
            losses[i] = g.loss;
        }
    };
    const std::size_t n_threads = std::min(workers, batch.size());
    if (n_threads <= 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(work, t, n_threads);
        for (auto& th : threads) th.join();
    }
    grad.assign(model.parameter_count(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += per_sample[i][p];
        loss += losses[i];
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& g : grad) g *= inv;
    return loss * inv;
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with cosine learning-rate decay. After every epoch the
/// model is evaluated on the validation split and offered to the checkpoint
/// store. Parameters stay 32-bit: every update is rounded to float.
[[nodiscard]] inline TrainResult train(const ModelConfig& config, const DatasetSplit& data, const TrainRecipe& recipe,
                                       std::uint64_t seed, const EpochCallback& on_epoch = {}) {
    config.validate();
    recipe.validate();
    if (data.train.empty()) throw InvalidDataset("training split is empty");
    if (data.val.empty()) throw InvalidDataset("validation split is empty");
    if (data.num_classes() != 0 && data.num_classes() != config.num_classes)
        throw InvalidDataset("dataset has " + std::to_string(data.num_classes()) + " classes, model expects " +
                             std::to_string(config.num_classes));

    const Rng root(seed);
    Rng init_rng = root.split(1);
    Rng order_rng = root.split(2);
    Rng geo_rng = root.split(3);
    Rng aug_rng = root.split(5);

    PreparedSet train_set = recipe.augments() ? PreparedSet{} : prepare(config, data.train, geo_rng);
    Rng val_geo_rng = root.split(4);
    const PreparedSet val_set = prepare(config, data.val, val_geo_rng);

    ClassifierModel<float> model = ClassifierModel<float>::initialized(config, init_rng);
    TrainResult result{CheckpointStore(recipe.store_capacity), {}, model.parameters(), {}, fingerprint(config)};
    std::vector<double> theta = result.initial_params.values;
    std::vector<double> m1(theta.size(), 0.0), m2(theta.size(), 0.0);
    std::vector<double> grad;

    const std::size_t n = data.train.size();
    const std::size_t steps_per_epoch = (n + recipe.batch_size - 1) / recipe.batch_size;
    const std::size_t total_steps = steps_per_epoch * recipe.epochs;
    std::vector<std::size_t> order(n);
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= recipe.epochs; ++epoch) {
        if (recipe.augments()) {
            std::vector<PointCloud> augmented;
            augmented.reserve(data.train.size());
            for (const PointCloud& c : data.train) augmented.push_back(detail::augment(c, recipe, aug_rng));
            train_set = prepare(config, augmented, geo_rng);
        } else if (config.fps_start == FpsStart::random && epoch > 1) {
            train_set = prepare(config, data.train, geo_rng);
        }
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        order_rng.shuffle(order);

        double loss_sum = 0.0;
        double lr = recipe.lr;
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            const std::size_t begin = b * recipe.batch_size;
            const std::span<const std::size_t> batch(order.data() + begin, std::min(recipe.batch_size, n - begin));
            const double loss = detail::batch_gradient(model, train_set, batch, recipe.workers, grad);
            if (!std::isfinite(loss)) throw DivergedError(epoch);
            loss_sum += loss * static_cast<double>(batch.size());

            lr = cosine_lr(recipe, step, total_steps);
            ++step;
            if (recipe.optimizer == OptimizerKind::adamw) {
                const double t = static_cast<double>(step);
                const double c1 = 1.0 - std::pow(recipe.beta1, t);
                const double c2 = 1.0 - std::pow(recipe.beta2, t);
                for (std::size_t p = 0; p < theta.size(); ++p) {
                    m1[p] = recipe.beta1 * m1[p] + (1.0 - recipe.beta1) * grad[p];
                    m2[p] = recipe.beta2 * m2[p] + (1.0 - recipe.beta2) * grad[p] * grad[p];
                    const double update = (m1[p] / c1) / (std::sqrt(m2[p] / c2) + recipe.eps);
                    theta[p] = static_cast<float>(theta[p] - lr * (update + recipe.weight_decay * theta[p]));
                }
            } else {
                for (std::size_t p = 0; p < theta.size(); ++p) {
                    m1[p] = recipe.momentum * m1[p] + grad[p] + recipe.weight_decay * theta[p];
                    theta[p] = static_cast<float>(theta[p] - lr * m1[p]);
                }
            }
            for (double v : theta)
                if (!std::isfinite(v)) throw DivergedError(epoch);
            model.set_parameters(theta);
        }

        const Evaluation val = evaluate(model, val_set);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(n), val.metrics, lr};
        result.history.push_back(rec);
        ParameterVector snapshot = result.initial_params;
        snapshot.values = theta;
        result.store.offer(Checkpoint{std::move(snapshot), static_cast<std::int64_t>(epoch), val.metrics, result.fingerprint});
        if (on_epoch) on_epoch(rec);
    }
    result.final_params = result.initial_params;
    result.final_params.values = theta;
    return result;
}

// ---------------------------------------------------------------------------
// Ablation reports
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string name;
    std::vector<double> oa;  // one value per seed
    std::vector<double> macc;
    double oa_mean = 0.0;
    double oa_std = 0.0;
    double macc_mean = 0.0;
    double macc_std = 0.0;
    double delta_oa = 0.0;  // vs the first row
    double delta_macc = 0.0;
};

struct AblationReport {
    std::string title;
    std::string split;  // dataset split the metrics come from
    std::vector<AblationRow> rows;
};

[[nodiscard]] inline double mean_of(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Sample standard deviation; 0 for fewer than two values.
[[nodiscard]] inline double stddev_of(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Fills means, deviations and deltas against the first row.
inline void finalize(AblationReport& report) {
    for (auto& row : report.rows) {
        row.oa_mean = mean_of(row.oa);
        row.oa_std = stddev_of(row.oa);
        row.macc_mean = mean_of(row.macc);
        row.macc_std = stddev_of(row.macc);
    }
    if (report.rows.empty()) return;
    const AblationRow& base = report.rows.front();
    for (auto& row : report.rows) {
        row.delta_oa = row.oa_mean - base.oa_mean;
        row.delta_macc = row.macc_mean - base.macc_mean;
    }
}

/// Plain-text table with percentages.
[[nodiscard]] inline std::string to_text(const AblationReport& report) {
    std::ostringstream os;
    os << report.title << " (" << report.split << " split)\n";
    os << std::left << std::setw(26) << "variant" << std::right << std::setw(18) << "OA (%)" << std::setw(9) << "delta"
       << std::setw(18) << "mAcc (%)" << std::setw(9) << "delta" << '\n';
    os << std::fixed << std::setprecision(2);
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        const auto& r = report.rows[i];
        std::ostringstream oa, macc, doa, dmacc;
        oa << std::fixed << std::setprecision(2) << 100.0 * r.oa_mean << " +- " << 100.0 * r.oa_std;
        macc << std::fixed << std::setprecision(2) << 100.0 * r.macc_mean << " +- " << 100.0 * r.macc_std;
        if (i == 0) {
            doa << "-";
            dmacc << "-";
        } else {
            doa << std::showpos << std::fixed << std::setprecision(2) << 100.0 * r.delta_oa;
            dmacc << std::showpos << std::fixed << std::setprecision(2) << 100.0 * r.delta_macc;
        }
        os << std::left << std::setw(26) << r.name << std::right << std::setw(18) << oa.str() << std::setw(9) << doa.str()
           << std::setw(18) << macc.str() << std::setw(9) << dmacc.str() << '\n';
    }
    return os.str();
}

/// Evaluates soups of the top-k checkpoints for every valid k in `ks`. The
/// first row is the best single checkpoint (k = 1).
[[nodiscard]] inline AblationReport soup_sweep(const CheckpointStore& store, std::span<const std::size_t> ks,
                                               const ModelConfig& config, std::span<const PointCloud> clouds,
                                               std::string split_name = "val") {
    if (store.empty()) throw InvalidRequest("soup sweep needs a non-empty checkpoint store");
    AblationReport report{"Weight averaging of top-k checkpoints", std::move(split_name), {}};
    Rng rng(0);
    const PreparedSet set = prepare(config, clouds, rng);
    std::vector<std::size_t> valid{1};
    for (std::size_t k : ks)
        if (k > 1 && k <= store.size() && std::find(valid.begin(), valid.end(), k) == valid.end()) valid.push_back(k);
    std::sort(valid.begin(), valid.end());
    for (std::size_t k : valid) {
        const Checkpoint soup = soup_average(store, k);
        ClassifierModel<float> model(config);
        model.set_parameters(soup.params);
        const Evaluation e = evaluate(model, set);
        report.rows.push_back({"top-" + std::to_string(k), {e.metrics.overall_accuracy}, {e.metrics.mean_class_accuracy}});
    }
    finalize(report);
    return report;
}

inline const std::vector<std::size_t>& default_soup_sizes() {
    static const std::vector<std::size_t> ks{1, 2, 3, 5, 10, 15};
    return ks;
}

struct AdditiveAblation {
    AblationReport report;
    std::vector<TrainResult> runs;  // seed-major: base, +distance, +vectors per seed
};

/// Trains the base, +distance and +distance+vectors variants for every seed
/// and adds the top-2 soup of the last one. Metrics are measured on the test
/// split with each run's best validation checkpoint.
[[nodiscard]] inline AdditiveAblation additive_ablation(const ModelConfig& config, const DatasetSplit& data,
                                                        const TrainRecipe& recipe, std::span<const std::uint64_t> seeds,
                                                        const EpochCallback& on_epoch = {}) {
    if (seeds.empty()) throw InvalidRequest("additive ablation needs at least one seed");
    if (data.test.empty()) throw InvalidDataset("test split is empty");
    AdditiveAblation out;
    out.report = {"Additive study of neighborhood features", "test",
                  {{"base", {}, {}}, {"+distance", {}, {}}, {"+directional vectors", {}, {}}, {"+best-two-average", {}, {}}}};
    const FeatureMode modes[3] = {FeatureMode::base, FeatureMode::distance, FeatureMode::both};
    for (std::uint64_t seed : seeds) {
        for (std::size_t v = 0; v < 3; ++v) {
            ModelConfig cfg = config;
            cfg.mode = modes[v];
            for (auto& s : cfg.stages) s.mode.reset();
            TrainResult run = train(cfg, data, recipe, seed, on_epoch);
            const Evaluation best = evaluate(cfg, run.store.best().params, data.test);
            out.report.rows[v].oa.push_back(best.metrics.overall_accuracy);
            out.report.rows[v].macc.push_back(best.metrics.mean_class_accuracy);
            if (v == 2) {
                const std::size_t k = std::min<std::size_t>(2, run.store.size());
                const Evaluation soup = evaluate(cfg, soup_average(run.store, k).params, data.test);
                out.report.rows[3].oa.push_back(soup.metrics.overall_accuracy);
                out.report.rows[3].macc.push_back(soup.metrics.mean_class_accuracy);
            }
            out.runs.push_back(std::move(run));
        }
    }
    finalize(out.report);
    return out;
}

/// Raw distance versus radius-normalized distance as the appended feature.
[[nodiscard]] inline AblationReport distance_ablation(const ModelConfig& config, const DatasetSplit& data,
                                                      const TrainRecipe& recipe, std::span<const std::uint64_t> seeds,
                                                      const EpochCallback& on_epoch = {}) {
    if (seeds.empty()) throw InvalidRequest("distance ablation needs at least one seed");
    if (data.test.empty()) throw InvalidDataset("test split is empty");
    AblationReport report{"Distance vs radius-normalized distance", "test", {{"distance", {}, {}}, {"r-normalized distance", {}, {}}}};
    for (std::uint64_t seed : seeds) {
        for (std::size_t v = 0; v < 2; ++v) {
            ModelConfig cfg = config;
            cfg.mode = FeatureMode::distance;
            for (auto& s : cfg.stages) s.mode.reset();
            cfg.normalize_distance = v == 1;
            const TrainResult run = train(cfg, data, recipe, seed, on_epoch);
            const Evaluation e = evaluate(cfg, run.store.best().params, data.test);
            report.rows[v].oa.push_back(e.metrics.overall_accuracy);
            report.rows[v].macc.push_back(e.metrics.mean_class_accuracy);
        }
    }
    finalize(report);
    return report;
}

}  // namespace localfeat
