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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "localfeat/checkpoint_io.hpp"
#include "localfeat/data.hpp"
#include "localfeat/training.hpp"
#include "localfeat_cli/bench.hpp"
#include "localfeat_cli/run_config.hpp"

namespace localfeat::cli {

/// Process exit codes.
enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,       // bad config or arguments
    kNumeric = 3,     // divergence
    kIncompatible = 4 // mismatched artifacts
};

/// Flag values that override the config file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::string> output_dir;
    std::optional<std::size_t> workers;
    bool deterministic = false;
};

namespace detail {

inline RunConfig load_with_overrides(const std::filesystem::path& path, const Overrides& o) {
    RunConfig rc = load_run_config(path);
    if (o.seed) {
        rc.seed = *o.seed;
        rc.seeds = {*o.seed};
    }
    if (o.epochs) rc.recipe.epochs = *o.epochs;
    if (o.output_dir) rc.output_dir = *o.output_dir;
    if (o.workers) rc.recipe.workers = *o.workers;
    if (o.deterministic) rc.deterministic = true;
    rc.recipe.validate();
    return rc;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

inline json metrics_json(const Metrics& m) { return {{"oa", m.overall_accuracy}, {"macc", m.mean_class_accuracy}}; }

inline json evaluation_json(const Evaluation& e, const std::vector<std::string>& class_names) {
    json recall = json::array();
    for (const auto& r : e.per_class_recall) recall.push_back(r ? json(*r) : json(nullptr));
    return {{"type", "evaluation"},     {"oa", e.metrics.overall_accuracy}, {"macc", e.metrics.mean_class_accuracy},
            {"total", e.total},         {"confusion", e.confusion},         {"per_class_recall", recall},
            {"classes", class_names},   {"warnings", e.warnings}};
}

inline std::vector<json> report_records(const AblationReport& r, const std::string& kind, const std::string& fp) {
    std::vector<json> out;
    for (const auto& row : r.rows)
        out.push_back({{"type", "ablation_row"}, {"report", kind},           {"title", r.title},
                       {"split", r.split},        {"variant", row.name},       {"oa_mean", row.oa_mean},
                       {"oa_std", row.oa_std},    {"macc_mean", row.macc_mean}, {"macc_std", row.macc_std},
                       {"delta_oa", row.delta_oa}, {"delta_macc", row.delta_macc}, {"oa", row.oa},
                       {"macc", row.macc},        {"fingerprint", fp}});
    return out;
}

template <typename F>
int guarded_command(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << e.what() << '\n';
        return kUsage;
    } catch (const InvalidConfig& e) {
        err << "invalid configuration: " << e.what() << '\n';
        return kUsage;
    } catch (const InvalidRequest& e) {
        err << "invalid request: " << e.what() << '\n';
        return kUsage;
    } catch (const DivergedError& e) {
        err << e.what() << '\n';
        return kNumeric;
    } catch (const IncompatibleCheckpoints& e) {
        err << "incompatible checkpoints: " << e.what() << '\n';
        return kIncompatible;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
}

inline std::string checkpoint_filename(std::size_t rank, const Checkpoint& c) {
    std::ostringstream os;
    os << "rank" << std::setw(2) << std::setfill('0') << rank << "_epoch" << std::setw(4) << std::setfill('0')
       << c.epoch << ".lfck";
    return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Trains one model. Writes checkpoints/, metrics.jsonl (one record per
/// epoch), config.json and summary.json into the output directory.
inline int cmd_train(const std::filesystem::path& config_path, const Overrides& overrides, std::ostream& out,
                     std::ostream& err) {
    return detail::guarded_command(err, [&] {
        const RunConfig rc = detail::load_with_overrides(config_path, overrides);
        const DatasetSplit data = rc.load_dataset();
        const auto dir = rc.resolved_output_dir();
        std::filesystem::create_directories(dir / "checkpoints");

        std::ofstream log(dir / "metrics.jsonl", std::ios::trunc);
        const TrainResult result = train(rc.model, data, rc.recipe, rc.seed, [&](const EpochRecord& e) {
            const json rec = {{"type", "epoch"},          {"epoch", e.epoch},
                              {"train_loss", e.train_loss}, {"val_oa", e.val.overall_accuracy},
                              {"val_macc", e.val.mean_class_accuracy}, {"lr", e.lr}};
            log << rec.dump() << '\n';
            log.flush();
        });

        for (const auto& old : std::filesystem::directory_iterator(dir / "checkpoints"))
            if (old.path().extension() == ".lfck") std::filesystem::remove(old.path());
        json files = json::array();
        for (std::size_t i = 0; i < result.store.size(); ++i) {
            const auto name = detail::checkpoint_filename(i, result.store.entries()[i]);
            save_checkpoint(result.store.entries()[i], dir / "checkpoints" / name);
            files.push_back("checkpoints/" + name);
        }

        const Checkpoint& best = result.store.best();
        json summary = {{"type", "summary"},
                        {"fingerprint", result.fingerprint},
                        {"seed", rc.seed},
                        {"epochs", rc.recipe.epochs},
                        {"best_epoch", best.epoch},
                        {"best_val", detail::metrics_json(best.metrics)},
                        {"final_val", detail::metrics_json(result.history.back().val)},
                        {"checkpoints", files},
                        {"config", to_json(rc)}};
        if (!data.test.empty())
            summary["best_test"] = detail::metrics_json(evaluate(rc.model, best.params, data.test).metrics);
        detail::write_text(dir / "config.json", to_json(rc).dump(2) + "\n");
        detail::write_text(dir / "summary.json", summary.dump(2) + "\n");
        out << summary.dump() << '\n';
        return kOk;
    });
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline int cmd_eval(const std::filesystem::path& config_path, const std::filesystem::path& checkpoint,
                    const std::string& split, const Overrides& overrides, std::ostream& out, std::ostream& err) {
    return detail::guarded_command(err, [&] {
        const RunConfig rc = detail::load_with_overrides(config_path, overrides);
        const Checkpoint c = load_checkpoint(checkpoint);
        if (c.fingerprint != fingerprint(rc.model))
            throw IncompatibleCheckpoints("checkpoint fingerprint " + c.fingerprint + " does not match config " +
                                          fingerprint(rc.model));
        const DatasetSplit data = rc.load_dataset();
        const std::vector<PointCloud>* clouds = split == "test" ? &data.test
                                                : split == "val" ? &data.val
                                                : split == "train" ? &data.train
                                                                   : nullptr;
        if (clouds == nullptr) throw InvalidRequest("split must be train, val or test");
        json rec = detail::evaluation_json(evaluate(rc.model, c.params, *clouds), data.class_names);
        rec["split"] = split;
        rec["fingerprint"] = c.fingerprint;
        out << rec.dump() << '\n';
        return kOk;
    });
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

/// Additive feature study over the config's seeds, top-k soup sweep on the
/// first seed's +both run, and raw vs normalized distance. Writes
/// ablation.txt and ablation.jsonl from the same report objects.
inline int cmd_ablate(const std::filesystem::path& config_path, const Overrides& overrides, std::ostream& out,
                      std::ostream& err) {
    return detail::guarded_command(err, [&] {
        const RunConfig rc = detail::load_with_overrides(config_path, overrides);
        const DatasetSplit data = rc.load_dataset();
        const auto dir = rc.resolved_output_dir();
        std::filesystem::create_directories(dir);

        const AdditiveAblation additive = additive_ablation(rc.model, data, rc.recipe, rc.seeds);
        const TrainResult& soup_run = additive.runs.at(2);  // first seed, +both
        ModelConfig both = rc.model;
        both.mode = FeatureMode::both;
        for (auto& s : both.stages) s.mode.reset();
        const AblationReport sweep = soup_sweep(soup_run.store, rc.soup_ks, both, data.val);
        const AblationReport distance = distance_ablation(rc.model, data, rc.recipe, rc.seeds);

        std::ofstream jl(dir / "ablation.jsonl", std::ios::trunc);
        for (const auto& rec : detail::report_records(additive.report, "additive", fingerprint(rc.model))) jl << rec.dump() << '\n';
        for (const auto& rec : detail::report_records(sweep, "soup_sweep", soup_run.fingerprint)) jl << rec.dump() << '\n';
        for (const auto& rec : detail::report_records(distance, "distance", fingerprint(rc.model))) jl << rec.dump() << '\n';
        const std::string text = to_text(additive.report) + "\n" + to_text(sweep) + "\n" + to_text(distance);
        detail::write_text(dir / "ablation.txt", text);
        out << text;
        return kOk;
    });
}

// ---------------------------------------------------------------------------
// soup
// ---------------------------------------------------------------------------

struct SoupOptions {
    std::filesystem::path checkpoint_dir;
    std::size_t k = 2;
    std::optional<std::filesystem::path> config;
    std::optional<std::filesystem::path> output;
};

/// Averages the top-k checkpoints found in a directory. With a config the
/// soup is also evaluated on that config's test split.
inline int cmd_soup(const SoupOptions& opt, std::ostream& out, std::ostream& err) {
    return detail::guarded_command(err, [&] {
        if (!std::filesystem::is_directory(opt.checkpoint_dir))
            throw InvalidRequest(opt.checkpoint_dir.string() + " is not a directory");
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(opt.checkpoint_dir))
            if (e.is_regular_file() && e.path().extension() == ".lfck") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw InvalidRequest("no .lfck checkpoints in " + opt.checkpoint_dir.string());

        std::vector<Checkpoint> loaded;
        for (const auto& f : files) loaded.push_back(load_checkpoint(f));
        for (const auto& c : loaded)
            if (c.fingerprint != loaded.front().fingerprint)
                throw IncompatibleCheckpoints("checkpoints in " + opt.checkpoint_dir.string() +
                                              " come from different configurations");
        CheckpointStore store(std::max(loaded.size(), CheckpointStore::kDefaultCapacity));
        for (auto& c : loaded) store.offer(std::move(c));
        if (opt.k < 1 || opt.k > store.size())
            throw InvalidRequest("k=" + std::to_string(opt.k) + " but only " + std::to_string(store.size()) +
                                 " checkpoints are available");

        Checkpoint soup = soup_average(store, opt.k);
        json rec = {{"type", "soup"}, {"k", opt.k}, {"fingerprint", soup.fingerprint}};
        if (opt.config) {
            const RunConfig rc = load_run_config(*opt.config);
            if (fingerprint(rc.model) != soup.fingerprint)
                throw IncompatibleCheckpoints("checkpoints do not match the model in " + opt.config->string());
            const DatasetSplit data = rc.load_dataset();
            if (!data.test.empty()) {
                const Evaluation e = evaluate(rc.model, soup.params, data.test);
                if (opt.k > 1) soup.metrics = e.metrics;
                rec["test"] = detail::evaluation_json(e, data.class_names);
            }
        }
        const auto target = opt.output.value_or(std::filesystem::path("soup_top" + std::to_string(opt.k) + ".lfck"));
        if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
        save_checkpoint(soup, target);
        rec["output"] = target.string();
        out << rec.dump() << '\n';
        return kOk;
    });
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

struct ExtractOptions {
    std::optional<std::filesystem::path> config;
    std::optional<std::filesystem::path> input;  // .off or xyz text
    std::optional<std::string> family;           // synthetic shape instead of a file
    std::size_t points = 1024;
    std::uint64_t seed = 0;
    std::filesystem::path output = "extract.jsonl";
};

/// Dumps per-stage anchors, neighbor indices, pad mask, raw and normalized
/// distances and directional vectors as line-delimited JSON.
inline int cmd_extract(const ExtractOptions& opt, std::ostream& out, std::ostream& err) {
    return detail::guarded_command(err, [&] {
        const ModelConfig model = opt.config ? load_run_config(*opt.config).model : ModelConfig::desk_default(8);
        Rng rng(opt.seed);
        PointCloud cloud;
        if (opt.input && opt.family) throw InvalidRequest("give either --input or --family, not both");
        if (opt.input) {
            const std::string text = read_text_file(*opt.input);
            const auto ext = opt.input->extension().string();
            cloud = ext == ".off" || ext == ".OFF" ? sample_surface(parse_off(text), opt.points, rng) : load_xyz(text).cloud;
            cloud = normalize_unit_sphere(cloud);
        } else if (opt.family) {
            cloud = synthesize_cloud(shape_family_from_string(*opt.family), opt.points, 0.0, rng, 0);
        } else {
            throw InvalidRequest("extract needs --input or --family");
        }

        const CloudGeometry geo = build_geometry(model, cloud, rng);
        std::ofstream jl(opt.output, std::ios::trunc);
        if (!jl) throw Error("cannot write " + opt.output.string());
        jl << json{{"type", "extract"}, {"points", cloud.size()}, {"stages", geo.stages.size()},
                   {"normalize_distance", model.normalize_distance}}.dump()
           << '\n';
        std::size_t records = 0;
        for (std::size_t s = 0; s < geo.stages.size(); ++s) {
            const StageGeometry& sg = geo.stages[s];
            const NeighborhoodGrouping& g = sg.grouping;
            for (std::size_t a = 0; a < g.num_anchors(); ++a) {
                const Point3& p = sg.points[g.anchors[a]];
                json neighbors = json::array(), pads = json::array(), raw = json::array(), d = json::array(),
                     dv = json::array();
                for (std::size_t k = 0; k < g.k; ++k) {
                    neighbors.push_back(g.index(a, k));
                    pads.push_back(g.padded(a, k));
                    raw.push_back(g.raw_distance(a, k));
                    d.push_back(sg.d.at(a, k));
                    const double* v = sg.dv.at(a, k);
                    dv.push_back({v[0], v[1], v[2]});
                }
                jl << json{{"type", "anchor"},     {"stage", s},        {"anchor", a},        {"index", g.anchors[a]},
                           {"xyz", {p.x, p.y, p.z}}, {"radius", sg.radii[a]}, {"neighbors", neighbors},
                           {"pad", pads},          {"raw_distance", raw}, {"d", d},             {"dv", dv}}
                          .dump()
                   << '\n';
                ++records;
            }
        }
        out << json{{"type", "extract_done"}, {"output", opt.output.string()}, {"anchor_records", records}}.dump() << '\n';
        return kOk;
    });
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchSize {
    std::size_t n, m, k;
};

/// Parses "n:m:k[,n:m:k...]".
[[nodiscard]] inline std::vector<BenchSize> parse_bench_sizes(const std::string& text) {
    std::vector<BenchSize> sizes;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        BenchSize b{};
        char c1 = 0, c2 = 0;
        std::istringstream is(item);
        if (!(is >> b.n >> c1 >> b.m >> c2 >> b.k) || c1 != ':' || c2 != ':' || !is.eof() || b.m < 1 || b.k < 1 ||
            b.m > b.n)
            throw InvalidRequest("bad bench size '" + item + "', expected n:m:k with 1 <= m <= n");
        sizes.push_back(b);
    }
    if (sizes.empty()) throw InvalidRequest("no bench sizes given");
    return sizes;
}

inline int cmd_bench(const std::string& sizes_text, std::size_t reps, const std::optional<std::filesystem::path>& output,
                     std::ostream& out, std::ostream& err) {
    return detail::guarded_command(err, [&] {
        if (reps < 5) throw InvalidRequest("bench needs at least 5 repetitions");
        const auto sizes = parse_bench_sizes(sizes_text);
        std::ofstream jl;
        if (output) {
            jl.open(*output, std::ios::trunc);
            if (!jl) throw Error("cannot write " + output->string());
        }
        out << std::left << std::setw(18) << "n:m:k" << std::right << std::setw(16) << "fps ms" << std::setw(16)
            << "ball ms" << std::setw(16) << "features ms" << std::setw(16) << "stage base" << std::setw(16)
            << "stage +both" << std::setw(16) << "fwd+bwd ms" << std::setw(10) << "overhead" << '\n';
        out << std::setw(18) << "" << std::setw(16) << "(min/median)" << '\n';
        for (const BenchSize& s : sizes) {
            const BenchRow r = bench_size(s.n, s.m, s.k, reps);
            auto cell = [](const Timing& t) {
                std::ostringstream os;
                os << std::fixed << std::setprecision(3) << t.min_ms << "/" << t.median_ms;
                return os.str();
            };
            std::ostringstream label, ovh;
            label << s.n << ':' << s.m << ':' << s.k;
            ovh << std::fixed << std::setprecision(1) << 100.0 * r.overhead << '%';
            out << std::left << std::setw(18) << label.str() << std::right << std::setw(16) << cell(r.fps) << std::setw(16)
                << cell(r.ball_query) << std::setw(16) << cell(r.features) << std::setw(16) << cell(r.stage_base)
                << std::setw(16) << cell(r.stage_both) << std::setw(16) << cell(r.forward_backward) << std::setw(10)
                << ovh.str() << '\n';
            if (jl.is_open()) {
                auto t = [](const Timing& x) { return json{{"min_ms", x.min_ms}, {"median_ms", x.median_ms}}; };
                jl << json{{"type", "bench"},          {"n", r.n},
                           {"m", r.m},                 {"k", r.k},
                           {"reps", r.reps},           {"fps", t(r.fps)},
                           {"ball_query", t(r.ball_query)}, {"features", t(r.features)},
                           {"stage_base", t(r.stage_base)}, {"stage_both", t(r.stage_both)},
                           {"forward_backward", t(r.forward_backward)}, {"overhead", r.overhead}}
                          .dump()
                   << '\n';
            }
        }
        return kOk;
    });
}

}  // namespace localfeat::cli
