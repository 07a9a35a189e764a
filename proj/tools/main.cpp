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


// localfeat command-line tool: train, eval, ablate, soup, extract, bench.

#include <iostream>

#include <CLI11.hpp>

#include "localfeat_cli/commands.hpp"

namespace {

void add_overrides(CLI::App* cmd, localfeat::cli::Overrides& o) {
    cmd->add_option("--seed", o.seed, "Override the run seed");
    cmd->add_option("--epochs", o.epochs, "Override the number of epochs");
    cmd->add_option("--output", o.output_dir, "Output directory (default: $LOCALFEAT_OUTPUT_ROOT/<name>)");
    cmd->add_option("--workers", o.workers, "Gradient worker threads");
    cmd->add_flag("--deterministic", o.deterministic, "Request bitwise-reproducible execution");
}

}  // namespace

int main(int argc, char** argv) {
    using namespace localfeat::cli;
    CLI::App app{"Neighborhood-feature point cloud classifier"};
    app.require_subcommand(1);

    std::string config;
    Overrides overrides;

    auto* train = app.add_subcommand("train", "Train a classifier and keep the top checkpoints");
    train->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    add_overrides(train, overrides);

    std::string checkpoint, split = "test";
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

    auto* ablate = app.add_subcommand("ablate", "Run the feature, soup and distance ablations");
    ablate->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    add_overrides(ablate, overrides);

    SoupOptions soup_opt;
    std::string soup_config, soup_output;
    auto* soup = app.add_subcommand("soup", "Average the top-k checkpoints of a run");
    soup->add_option("--checkpoints", soup_opt.checkpoint_dir, "Directory with .lfck files")->required();
    soup->add_option("--k", soup_opt.k, "Number of checkpoints to average")->required();
    soup->add_option("--config", soup_config, "Evaluate the soup on this config's test split");
    soup->add_option("--output", soup_output, "Output checkpoint path");

    ExtractOptions ex;
    std::string ex_config, ex_input, ex_family;
    auto* extract = app.add_subcommand("extract", "Dump neighborhoods and features as JSONL");
    extract->add_option("--config", ex_config, "Run configuration supplying the model stages");
    extract->add_option("--input", ex_input, "OFF mesh or XYZ point file");
    extract->add_option("--family", ex_family, "Synthetic shape family instead of a file");
    extract->add_option("--points", ex.points, "Surface samples for meshes and synthetic shapes");
    extract->add_option("--seed", ex.seed, "Sampling seed");
    extract->add_option("--output", ex.output, "JSONL output path");

    std::string sizes = "1024:128:16,4096:512:32";
    std::size_t reps = 20;
    std::string bench_out;
    auto* bench = app.add_subcommand("bench", "Time the neighborhood and feature kernels");
    bench->add_option("--sizes", sizes, "Comma-separated n:m:k triples");
    bench->add_option("--reps", reps, "Repetitions per measurement (>= 5)");
    bench->add_option("--output", bench_out, "Also write JSONL results here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    if (*train) return cmd_train(config, overrides, std::cout, std::cerr);
    if (*eval) return cmd_eval(config, checkpoint, split, overrides, std::cout, std::cerr);
    if (*ablate) return cmd_ablate(config, overrides, std::cout, std::cerr);
    if (*soup) {
        if (!soup_config.empty()) soup_opt.config = soup_config;
        if (!soup_output.empty()) soup_opt.output = soup_output;
        return cmd_soup(soup_opt, std::cout, std::cerr);
    }
    if (*extract) {
        if (!ex_config.empty()) ex.config = ex_config;
        if (!ex_input.empty()) ex.input = ex_input;
        if (!ex_family.empty()) ex.family = ex_family;
        return cmd_extract(ex, std::cout, std::cerr);
    }
    if (*bench) return cmd_bench(sizes, reps, bench_out.empty() ? std::nullopt : std::optional<std::filesystem::path>(bench_out), std::cout, std::cerr);
    return kUsage;
}
