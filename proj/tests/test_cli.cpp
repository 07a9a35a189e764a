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

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "localfeat_cli/commands.hpp"

using namespace localfeat;
using namespace localfeat::cli;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("localfeat_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path write(const std::string& name, const std::string& text) const {
        const fs::path p = dir_ / name;
        std::ofstream(p) << text;
        return p;
    }

    /// A run small enough to finish in a second or two.
    fs::path tiny_config(const std::string& extra = "") const {
        return write("config.json", R"({
  "name": "tiny",
  "seed": 3,
  "output_dir": ")" + (dir_ / "out").string() + R"(",
  "dataset": {"synthetic": {"classes": ["sphere", "plane"], "per_class": 8, "points": 96, "noise": 0.01, "seed": 2}},
  "model": {"mode": "both", "head": [8],
            "stages": [{"anchors": 16, "radius": 0.4, "k_max": 8, "lift": [8, 8]}]},
  "recipe": {"epochs": 3, "batch_size": 4, "lr": 0.01}
  )" + extra + "}");
    }

    static json read_json(const fs::path& p) {
        std::ifstream in(p);
        return json::parse(in);
    }

    static std::vector<json> read_jsonl(const fs::path& p) {
        std::ifstream in(p);
        std::vector<json> out;
        for (std::string line; std::getline(in, line);)
            if (!line.empty()) out.push_back(json::parse(line));
        return out;
    }

    fs::path dir_;
    std::ostringstream out_, err_;
};

}  // namespace

TEST_F(CliTest, ParsesDefaultsAndOverrides) {
    const RunConfig rc = load_run_config(tiny_config());
    EXPECT_EQ(rc.name, "tiny");
    EXPECT_EQ(rc.seed, 3u);
    EXPECT_EQ(rc.seeds, std::vector<std::uint64_t>{3});
    EXPECT_EQ(rc.model.num_classes, 2u);
    EXPECT_EQ(rc.model.mode, FeatureMode::both);
    EXPECT_EQ(rc.model.stages.size(), 1u);
    EXPECT_EQ(rc.recipe.epochs, 3u);
    EXPECT_EQ(rc.soup_ks, default_soup_sizes());
    const RunConfig again = parse_run_config(to_json(rc));
    EXPECT_EQ(to_json(again), to_json(rc));
    EXPECT_EQ(fingerprint(again.model), fingerprint(rc.model));
}

TEST_F(CliTest, UnknownKeysAreNamed) {
    try {
        (void)parse_run_config(json::parse(R"({"name": "x", "epochz": 3, "model": {"stages": [{"anchors": 4, "radious": 1}]}})"));
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("epochz"), std::string::npos) << what;
        EXPECT_NE(what.find("model.stages[0].radious"), std::string::npos) << what;
    }
    EXPECT_THROW((void)parse_run_config(json::parse(R"({"seed": "one"})")), ConfigError);
    EXPECT_THROW((void)parse_run_config(json::parse(R"({"model": {"mode": "colors"}})")), ConfigError);
    EXPECT_THROW((void)parse_run_config(json::parse(R"({"dataset": {}})")), ConfigError);
    EXPECT_THROW((void)parse_run_config(json::parse(R"([1, 2])")), ConfigError);
}

TEST_F(CliTest, TrainWritesArtifactsAndIsReproducible) {
    const auto cfg = tiny_config();
    ASSERT_EQ(cmd_train(cfg, {}, out_, err_), kOk) << err_.str();
    const fs::path run = dir_ / "out";
    ASSERT_TRUE(fs::exists(run / "summary.json"));
    ASSERT_TRUE(fs::exists(run / "config.json"));
    const auto epochs = read_jsonl(run / "metrics.jsonl");
    ASSERT_EQ(epochs.size(), 3u);
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        EXPECT_EQ(epochs[i]["type"], "epoch");
        EXPECT_EQ(epochs[i]["epoch"], i + 1);
        for (const char* key : {"train_loss", "val_oa", "val_macc", "lr"}) EXPECT_TRUE(epochs[i].contains(key)) << key;
    }
    const json summary = read_json(run / "summary.json");
    EXPECT_EQ(summary["fingerprint"], fingerprint(load_run_config(cfg).model));
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(run / "checkpoints")) files += e.path().extension() == ".lfck";
    EXPECT_EQ(files, summary["checkpoints"].size());

    std::ostringstream out2;
    ASSERT_EQ(cmd_train(cfg, {}, out2, err_), kOk);
    const json again = read_json(run / "summary.json");
    EXPECT_EQ(again["best_val"], summary["best_val"]);
    EXPECT_EQ(again["final_val"], summary["final_val"]);
    EXPECT_EQ(read_jsonl(run / "metrics.jsonl"), epochs);
}

TEST_F(CliTest, TrainRejectsBadConfigWithExitTwo) {
    const auto cfg = write("bad.json", R"({"name": "x", "learning_rate": 0.1})");
    EXPECT_EQ(cmd_train(cfg, {}, out_, err_), kUsage);
    EXPECT_NE(err_.str().find("learning_rate"), std::string::npos);
    std::ostringstream err2;
    EXPECT_EQ(cmd_train(dir_ / "missing.json", {}, out_, err2), kUsage);
    std::ostringstream err3;
    const auto broken = write("broken.json", "{ not json");
    EXPECT_EQ(cmd_train(broken, {}, out_, err3), kUsage);
}

TEST_F(CliTest, TrainDivergenceExitsThree) {
    const auto cfg = tiny_config(R"(, "deterministic": true)");
    std::ifstream in(cfg);
    json doc = json::parse(in);
    doc["recipe"]["optimizer"] = "sgd";
    doc["recipe"]["lr"] = 1e30;
    doc["recipe"]["lr_min"] = 1e30;
    const auto wild = write("wild.json", doc.dump());
    EXPECT_EQ(cmd_train(wild, {}, out_, err_), kNumeric);
}

TEST_F(CliTest, OverridesApply) {
    Overrides o;
    o.epochs = 1;
    o.seed = 11;
    o.output_dir = (dir_ / "elsewhere").string();
    ASSERT_EQ(cmd_train(tiny_config(), o, out_, err_), kOk) << err_.str();
    EXPECT_EQ(read_jsonl(dir_ / "elsewhere" / "metrics.jsonl").size(), 1u);
    EXPECT_EQ(read_json(dir_ / "elsewhere" / "summary.json")["seed"], 11);
}

TEST_F(CliTest, SoupCommand) {
    const auto cfg = tiny_config();
    ASSERT_EQ(cmd_train(cfg, {}, out_, err_), kOk) << err_.str();
    const fs::path ckpts = dir_ / "out" / "checkpoints";

    SoupOptions one{ckpts, 1, std::nullopt, dir_ / "soup1.lfck"};
    ASSERT_EQ(cmd_soup(one, out_, err_), kOk) << err_.str();
    const json summary = read_json(dir_ / "out" / "summary.json");
    const Checkpoint best = load_checkpoint(dir_ / "out" / summary["checkpoints"][0].get<std::string>());
    EXPECT_EQ(encode_checkpoint(load_checkpoint(dir_ / "soup1.lfck")), encode_checkpoint(best));

    std::ostringstream out2;
    SoupOptions two{ckpts, 2, cfg, dir_ / "soup2.lfck"};
    ASSERT_EQ(cmd_soup(two, out2, err_), kOk) << err_.str();
    const json rec = json::parse(out2.str());
    EXPECT_EQ(rec["type"], "soup");
    EXPECT_TRUE(rec.contains("test"));
    EXPECT_EQ(rec["test"]["type"], "evaluation");

    SoupOptions too_many{ckpts, 99, std::nullopt, dir_ / "x.lfck"};
    EXPECT_EQ(cmd_soup(too_many, out_, err_), kUsage);
    SoupOptions missing{dir_ / "nope", 1, std::nullopt, dir_ / "x.lfck"};
    EXPECT_EQ(cmd_soup(missing, out_, err_), kUsage);
}

TEST_F(CliTest, SoupOfFixtureCheckpoints) {
    fs::create_directories(dir_ / "fx");
    auto fixture = [](double v, std::int64_t epoch, double oa, const std::string& fp) {
        ParameterVector pv;
        pv.blocks = {ParameterBlock{"w", {1}, 0, 1}};
        pv.values = {v};
        return Checkpoint{pv, epoch, Metrics{oa, oa}, fp};
    };
    save_checkpoint(fixture(1.0, 1, 0.5, "same"), dir_ / "fx" / "a.lfck");
    save_checkpoint(fixture(3.0, 2, 0.6, "same"), dir_ / "fx" / "b.lfck");
    ASSERT_EQ(cmd_soup({dir_ / "fx", 2, std::nullopt, dir_ / "avg.lfck"}, out_, err_), kOk) << err_.str();
    EXPECT_EQ(load_checkpoint(dir_ / "avg.lfck").params.values, std::vector<double>{2.0});

    save_checkpoint(fixture(5.0, 3, 0.7, "other"), dir_ / "fx" / "c.lfck");
    std::ostringstream err2;
    EXPECT_EQ(cmd_soup({dir_ / "fx", 2, std::nullopt, dir_ / "avg.lfck"}, out_, err2), kIncompatible);
    EXPECT_NE(err2.str().find("incompatible"), std::string::npos);
}

TEST_F(CliTest, EvalChecksFingerprint) {
    const auto cfg = tiny_config();
    ASSERT_EQ(cmd_train(cfg, {}, out_, err_), kOk);
    const json summary = read_json(dir_ / "out" / "summary.json");
    const fs::path best = dir_ / "out" / summary["checkpoints"][0].get<std::string>();
    std::ostringstream out2;
    ASSERT_EQ(cmd_eval(cfg, best, "val", {}, out2, err_), kOk) << err_.str();
    const json rec = json::parse(out2.str());
    EXPECT_EQ(rec["oa"], summary["best_val"]["oa"]);

    std::ifstream in(cfg);
    json doc = json::parse(in);
    doc["model"]["mode"] = "base";
    const auto other = write("other.json", doc.dump());
    EXPECT_EQ(cmd_eval(other, best, "test", {}, out_, err_), kIncompatible);
}

TEST_F(CliTest, AblateProducesMatchingTextAndRecords) {
    ASSERT_EQ(cmd_ablate(tiny_config(R"(, "seeds": [1], "soup_ks": [1, 2, 3])"), {}, out_, err_), kOk) << err_.str();
    const auto records = read_jsonl(dir_ / "out" / "ablation.jsonl");
    std::vector<std::string> additive, sweep, distance;
    for (const auto& r : records) {
        EXPECT_EQ(r["type"], "ablation_row");
        if (r["report"] == "additive") additive.push_back(r["variant"]);
        if (r["report"] == "soup_sweep") sweep.push_back(r["variant"]);
        if (r["report"] == "distance") distance.push_back(r["variant"]);
        EXPECT_EQ(r["oa_std"], 0.0);
    }
    EXPECT_EQ(additive, (std::vector<std::string>{"base", "+distance", "+directional vectors", "+best-two-average"}));
    EXPECT_EQ(sweep, (std::vector<std::string>{"top-1", "top-2", "top-3"}));
    EXPECT_EQ(distance, (std::vector<std::string>{"distance", "r-normalized distance"}));

    std::ifstream txt(dir_ / "out" / "ablation.txt");
    const std::string text((std::istreambuf_iterator<char>(txt)), std::istreambuf_iterator<char>());
    for (const auto& r : records) {
        std::ostringstream pct;
        pct << std::fixed << std::setprecision(2) << 100.0 * r["oa_mean"].get<double>();
        EXPECT_NE(text.find(pct.str()), std::string::npos) << r["variant"];
        EXPECT_NE(text.find(r["variant"].get<std::string>()), std::string::npos);
    }
}

TEST_F(CliTest, ExtractDumpsEveryAnchor) {
    const auto xyz = write("pts.xyz", [] {
        std::ostringstream os;
        Rng rng(1);
        for (int i = 0; i < 200; ++i) os << rng.uniform(-1, 1) << ' ' << rng.uniform(-1, 1) << ' ' << rng.uniform(-1, 1) << '\n';
        return os.str();
    }());
    ExtractOptions opt;
    opt.input = xyz;
    opt.output = dir_ / "ex.jsonl";
    ASSERT_EQ(cmd_extract(opt, out_, err_), kOk) << err_.str();
    const auto recs = read_jsonl(opt.output);
    ASSERT_EQ(recs.size(), 1u + 128 + 32);
    const json& a = recs[1];
    EXPECT_EQ(a["stage"], 0);
    EXPECT_EQ(a["neighbors"].size(), 16u);
    EXPECT_EQ(a["dv"].size(), 16u);
    for (std::size_t s = 0; s < 16; ++s) {
        if (a["pad"][s].get<bool>()) continue;
        const auto& v = a["dv"][s];
        const double n = std::sqrt(v[0].get<double>() * v[0].get<double>() + v[1].get<double>() * v[1].get<double>() +
                                   v[2].get<double>() * v[2].get<double>());
        EXPECT_NEAR(n, a["d"][s].get<double>(), 1e-9);
    }
    ExtractOptions neither;
    EXPECT_EQ(cmd_extract(neither, out_, err_), kUsage);
}

TEST_F(CliTest, BenchTable) {
    std::ostringstream table;
    ASSERT_EQ(cmd_bench("256:32:8", 5, dir_ / "bench.jsonl", table, err_), kOk) << err_.str();
    EXPECT_NE(table.str().find("256:32:8"), std::string::npos);
    const auto recs = read_jsonl(dir_ / "bench.jsonl");
    ASSERT_EQ(recs.size(), 1u);
    for (const char* key : {"fps", "ball_query", "features", "stage_base", "stage_both", "forward_backward"}) {
        EXPECT_GT(recs[0][key]["median_ms"].get<double>(), 0.0) << key;
        EXPECT_LE(recs[0][key]["min_ms"].get<double>(), recs[0][key]["median_ms"].get<double>()) << key;
    }
    const double base = recs[0]["stage_base"]["median_ms"], both = recs[0]["stage_both"]["median_ms"];
    EXPECT_NEAR(recs[0]["overhead"].get<double>(), (both - base) / base, 1e-12);
    EXPECT_EQ(cmd_bench("256:32", 5, std::nullopt, table, err_), kUsage);
    EXPECT_EQ(cmd_bench("256:32:8", 4, std::nullopt, table, err_), kUsage);
}

TEST_F(CliTest, OutputRootFromEnvironment) {
    std::ifstream in(tiny_config());
    json doc = json::parse(in);
    doc.erase("output_dir");
    const RunConfig rc = parse_run_config(doc);
    ::setenv("LOCALFEAT_OUTPUT_ROOT", (dir_ / "root").string().c_str(), 1);
    EXPECT_EQ(rc.resolved_output_dir(), dir_ / "root" / "tiny");
    ::unsetenv("LOCALFEAT_OUTPUT_ROOT");
    EXPECT_EQ(rc.resolved_output_dir(), fs::path("localfeat_runs") / "tiny");
}
