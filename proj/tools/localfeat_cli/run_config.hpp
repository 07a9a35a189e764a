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
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "localfeat/data.hpp"
#include "localfeat/network.hpp"
#include "localfeat/training.hpp"

namespace localfeat::cli {

using json = nlohmann::json;

/// Collected schema violations; every message names the offending key path.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems)) {}
    [[nodiscard]] const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s = "invalid run config";
        for (const auto& m : p) s += "\n  " + m;
        return s;
    }
    std::vector<std::string> problems_;
};

struct DirectorySource {
    std::filesystem::path root;
    std::size_t points = 1024;
    std::uint64_t seed = 0;
};

/// Everything a run needs. A config plus the code version fully determines
/// the outputs.
struct RunConfig {
    std::string name = "run";
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> seeds{1};
    std::optional<std::filesystem::path> output_dir;
    std::variant<SyntheticSpec, DirectorySource> dataset = SyntheticSpec{};
    ModelConfig model = ModelConfig::desk_default(8);
    TrainRecipe recipe;
    std::vector<std::size_t> soup_ks{1, 2, 3, 5, 10, 15};
    bool deterministic = true;

    [[nodiscard]] DatasetSplit load_dataset() const {
        if (const auto* s = std::get_if<SyntheticSpec>(&dataset)) return generate(*s);
        const auto& d = std::get<DirectorySource>(dataset);
        return load_directory(d.root, d.points, d.seed);
    }

    /// Output directory: explicit value, else $LOCALFEAT_OUTPUT_ROOT/<name>,
    /// else ./localfeat_runs/<name>.
    [[nodiscard]] std::filesystem::path resolved_output_dir() const {
        if (output_dir) return *output_dir;
        const char* root = std::getenv("LOCALFEAT_OUTPUT_ROOT");
        return std::filesystem::path(root != nullptr && *root != '\0' ? root : "localfeat_runs") / name;
    }
};

namespace detail {

class Validator {
public:
    std::vector<std::string> problems;

    /// Reports keys of `obj` outside `allowed`.
    void only(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            bool ok = false;
            for (const char* a : allowed) ok = ok || it.key() == a;
            if (!ok) problems.push_back("unknown key '" + qualify(path, it.key()) + "'");
        }
    }

    bool object(const json& v, const std::string& path) {
        if (v.is_object()) return true;
        problems.push_back("'" + path + "' must be an object");
        return false;
    }

    template <typename T>
    void read(const json& obj, const std::string& path, const char* key, T& out) {
        if (!obj.contains(key)) return;
        const json& v = obj.at(key);
        const std::string where = qualify(path, key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) return fail(where, "a boolean");
            out = v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) return fail(where, "a string");
            out = v.get<std::string>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) return fail(where, "a number");
            out = v.get<T>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
                return fail(where, "a non-negative integer");
            out = v.get<T>();
        } else {
            static_assert(sizeof(T) == 0, "unsupported config field type");
        }
    }

    template <typename T>
    void read_list(const json& obj, const std::string& path, const char* key, std::vector<T>& out) {
        if (!obj.contains(key)) return;
        const json& v = obj.at(key);
        const std::string where = qualify(path, key);
        if (!v.is_array()) return fail(where, "an array");
        std::vector<T> tmp;
        for (const json& e : v) {
            if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<std::int64_t>() >= 0))
                return fail(where, "an array of non-negative integers");
            tmp.push_back(e.get<T>());
        }
        out = std::move(tmp);
    }

    void fail(const std::string& where, const char* expected) {
        problems.push_back("'" + where + "' must be " + expected);
    }

    static std::string qualify(const std::string& path, const std::string& key) {
        return path.empty() ? key : path + "." + key;
    }
};

template <typename F>
void guarded(Validator& v, const std::string& where, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        v.problems.push_back(where + ": " + e.what());
    }
}

inline FeatureMode parse_mode(Validator& v, const json& obj, const std::string& path, FeatureMode fallback) {
    std::string s(to_string(fallback));
    v.read(obj, path, "mode", s);
    FeatureMode m = fallback;
    guarded(v, Validator::qualify(path, "mode"), [&] { m = feature_mode_from_string(s); });
    return m;
}

}  // namespace detail

/// Parses and validates a run config document. Unknown keys are rejected.
[[nodiscard]] inline RunConfig parse_run_config(const json& doc) {
    detail::Validator v;
    RunConfig rc;
    if (!v.object(doc, "<root>")) throw ConfigError(v.problems);
    v.only(doc, "", {"name", "seed", "seeds", "output_dir", "dataset", "model", "recipe", "soup_ks", "deterministic"});
    v.read(doc, "", "name", rc.name);
    v.read(doc, "", "seed", rc.seed);
    rc.seeds = {rc.seed};
    v.read_list(doc, "", "seeds", rc.seeds);
    v.read_list(doc, "", "soup_ks", rc.soup_ks);
    v.read(doc, "", "deterministic", rc.deterministic);
    if (doc.contains("output_dir")) {
        std::string dir;
        v.read(doc, "", "output_dir", dir);
        if (!dir.empty()) rc.output_dir = dir;
    }
    if (rc.seeds.empty()) v.problems.push_back("'seeds' must not be empty");

    std::size_t num_classes = 8;
    if (doc.contains("dataset") && v.object(doc["dataset"], "dataset")) {
        const json& ds = doc["dataset"];
        v.only(ds, "dataset", {"synthetic", "directory"});
        if (ds.contains("synthetic") == ds.contains("directory")) {
            v.problems.push_back("'dataset' needs exactly one of 'synthetic' or 'directory'");
        } else if (ds.contains("synthetic") && v.object(ds["synthetic"], "dataset.synthetic")) {
            const json& s = ds["synthetic"];
            const std::string p = "dataset.synthetic";
            v.only(s, p, {"classes", "per_class", "points", "noise", "seed"});
            SyntheticSpec spec;
            if (s.contains("classes")) {
                if (!s["classes"].is_array()) {
                    v.fail(p + ".classes", "an array of shape family names");
                } else {
                    spec.classes.clear();
                    for (const json& c : s["classes"]) {
                        if (!c.is_string()) {
                            v.fail(p + ".classes", "an array of shape family names");
                            break;
                        }
                        detail::guarded(v, p + ".classes", [&] { spec.classes.push_back(shape_family_from_string(c.get<std::string>())); });
                    }
                }
            }
            v.read(s, p, "per_class", spec.per_class);
            v.read(s, p, "points", spec.points);
            v.read(s, p, "noise", spec.noise);
            v.read(s, p, "seed", spec.seed);
            detail::guarded(v, p, [&] { spec.validate(); });
            num_classes = spec.classes.size();
            rc.dataset = spec;
        } else if (ds.contains("directory") && v.object(ds["directory"], "dataset.directory")) {
            const json& d = ds["directory"];
            const std::string p = "dataset.directory";
            v.only(d, p, {"root", "points", "seed", "num_classes"});
            DirectorySource src;
            std::string root;
            v.read(d, p, "root", root);
            if (root.empty()) v.problems.push_back("'" + p + ".root' is required");
            src.root = root;
            v.read(d, p, "points", src.points);
            v.read(d, p, "seed", src.seed);
            v.read(d, p, "num_classes", num_classes);
            rc.dataset = src;
        }
    }

    rc.model = ModelConfig::desk_default(num_classes);
    if (doc.contains("model") && v.object(doc["model"], "model")) {
        const json& m = doc["model"];
        v.only(m, "model", {"mode", "normalize_distance", "fps_start", "head", "stages"});
        rc.model.mode = detail::parse_mode(v, m, "model", FeatureMode::base);
        v.read(m, "model", "normalize_distance", rc.model.normalize_distance);
        std::string fps = "first";
        v.read(m, "model", "fps_start", fps);
        if (fps == "first") rc.model.fps_start = FpsStart::first;
        else if (fps == "random") rc.model.fps_start = FpsStart::random;
        else v.problems.push_back("'model.fps_start' must be \"first\" or \"random\"");
        v.read_list(m, "model", "head", rc.model.head);
        if (m.contains("stages")) {
            if (!m["stages"].is_array() || m["stages"].empty()) {
                v.fail("model.stages", "a non-empty array of stage objects");
            } else {
                rc.model.stages.clear();
                for (std::size_t i = 0; i < m["stages"].size(); ++i) {
                    const json& s = m["stages"][i];
                    const std::string p = "model.stages[" + std::to_string(i) + "]";
                    if (!v.object(s, p)) continue;
                    v.only(s, p, {"anchors", "radius", "k_max", "lift", "query", "mode"});
                    StageConfig sc;
                    v.read(s, p, "anchors", sc.anchors);
                    v.read(s, p, "radius", sc.radius);
                    v.read(s, p, "k_max", sc.k_max);
                    v.read_list(s, p, "lift", sc.lift);
                    std::string query = "ball";
                    v.read(s, p, "query", query);
                    if (query == "knn") sc.query = QueryKind::knn;
                    else if (query != "ball") v.problems.push_back("'" + p + ".query' must be \"ball\" or \"knn\"");
                    if (s.contains("mode")) sc.mode = detail::parse_mode(v, s, p, rc.model.mode);
                    rc.model.stages.push_back(std::move(sc));
                }
            }
        }
    }
    rc.model.num_classes = num_classes;
    detail::guarded(v, "model", [&] { rc.model.validate(); });

    if (doc.contains("recipe") && v.object(doc["recipe"], "recipe")) {
        const json& r = doc["recipe"];
        const std::string p = "recipe";
        v.only(r, p, {"optimizer", "epochs", "batch_size", "lr", "lr_min", "weight_decay", "momentum", "workers",
                      "store_capacity", "augment_rotate_z", "scale_min", "scale_max"});
        std::string opt = "adamw";
        v.read(r, p, "optimizer", opt);
        if (opt == "adamw") rc.recipe.optimizer = OptimizerKind::adamw;
        else if (opt == "sgd") rc.recipe.optimizer = OptimizerKind::sgd;
        else v.problems.push_back("'recipe.optimizer' must be \"adamw\" or \"sgd\"");
        v.read(r, p, "epochs", rc.recipe.epochs);
        v.read(r, p, "batch_size", rc.recipe.batch_size);
        v.read(r, p, "lr", rc.recipe.lr);
        v.read(r, p, "lr_min", rc.recipe.lr_min);
        v.read(r, p, "weight_decay", rc.recipe.weight_decay);
        v.read(r, p, "momentum", rc.recipe.momentum);
        v.read(r, p, "workers", rc.recipe.workers);
        v.read(r, p, "store_capacity", rc.recipe.store_capacity);
        v.read(r, p, "augment_rotate_z", rc.recipe.augment_rotate_z);
        v.read(r, p, "scale_min", rc.recipe.scale_min);
        v.read(r, p, "scale_max", rc.recipe.scale_max);
    }
    detail::guarded(v, "recipe", [&] { rc.recipe.validate(); });

    if (!v.problems.empty()) throw ConfigError(v.problems);
    return rc;
}

[[nodiscard]] inline RunConfig load_run_config(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError({path.string() + ": " + e.what()});
    } catch (const InvalidDataset& e) {
        throw ConfigError({e.what()});
    }
    return parse_run_config(doc);
}

// ---------------------------------------------------------------------------
// Canonical serialization (embedded in run outputs)
// ---------------------------------------------------------------------------

[[nodiscard]] inline json to_json(const ModelConfig& m) {
    json stages = json::array();
    for (const auto& s : m.stages) {
        json js = {{"anchors", s.anchors}, {"radius", s.radius}, {"k_max", s.k_max}, {"lift", s.lift},
                   {"query", s.query == QueryKind::ball ? "ball" : "knn"}};
        if (s.mode) js["mode"] = std::string(to_string(*s.mode));
        stages.push_back(std::move(js));
    }
    return {{"mode", std::string(to_string(m.mode))},
            {"normalize_distance", m.normalize_distance},
            {"fps_start", m.fps_start == FpsStart::first ? "first" : "random"},
            {"head", m.head},
            {"stages", stages}};
}

[[nodiscard]] inline json to_json(const RunConfig& rc) {
    json ds;
    if (const auto* s = std::get_if<SyntheticSpec>(&rc.dataset)) {
        json classes = json::array();
        for (ShapeFamily f : s->classes) classes.push_back(std::string(to_string(f)));
        ds["synthetic"] = {{"classes", classes}, {"per_class", s->per_class}, {"points", s->points},
                           {"noise", s->noise}, {"seed", s->seed}};
    } else {
        const auto& d = std::get<DirectorySource>(rc.dataset);
        ds["directory"] = {{"root", d.root.string()}, {"points", d.points}, {"seed", d.seed},
                           {"num_classes", rc.model.num_classes}};
    }
    const TrainRecipe& r = rc.recipe;
    json doc = {{"name", rc.name},
                {"seed", rc.seed},
                {"seeds", rc.seeds},
                {"dataset", ds},
                {"model", to_json(rc.model)},
                {"recipe",
                 {{"optimizer", r.optimizer == OptimizerKind::adamw ? "adamw" : "sgd"},
                  {"epochs", r.epochs},
                  {"batch_size", r.batch_size},
                  {"lr", r.lr},
                  {"lr_min", r.lr_min},
                  {"weight_decay", r.weight_decay},
                  {"momentum", r.momentum},
                  {"workers", r.workers},
                  {"store_capacity", r.store_capacity},
                  {"augment_rotate_z", r.augment_rotate_z},
                  {"scale_min", r.scale_min},
                  {"scale_max", r.scale_max}}},
                {"soup_ks", rc.soup_ks},
                {"deterministic", rc.deterministic}};
    if (rc.output_dir) doc["output_dir"] = rc.output_dir->string();
    return doc;
}

}  // namespace localfeat::cli
