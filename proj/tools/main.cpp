/*
   Copyright 2026 The dualexp Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

// dualexp run <config.json> [--out DIR] [--threads N]
// dualexp validate <config.json>
// dualexp list-models | list-claims
//
// Exit codes: 0 ok, 2 bad config, 3 incompatible model/claim, 4 numerical failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "dualexp/errors.hpp"
#include "dualexp/parallel.hpp"
#include "dualexp/version.hpp"
#include "experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dualexp;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIncompatible = 3;
constexpr int kExitNumerical = 4;

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

int run(const std::string& path, const std::string& out_dir, int threads) {
    const json j = read_json(path);
    cli::ExperimentConfig cfg;
    const auto errs = cli::parse_config(j, cfg);
    if (!errs.empty()) {
        for (const auto& e : errs) std::cerr << "config: " << e << '\n';
        return kExitConfig;
    }
    if (threads > 0) set_thread_count(threads);

    const auto t0 = std::chrono::steady_clock::now();
    const cli::Table table = cli::run_experiment(cfg);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const std::string stem = cfg.name.empty() ? fs::path(path).stem().string() : cfg.name;
    fs::create_directories(out_dir);
    const fs::path csv = fs::path(out_dir) / (stem + ".csv");
    const fs::path meta = fs::path(out_dir) / (stem + ".json");
    std::ofstream(csv, std::ios::binary) << table.to_csv();

    json m;
    m["schema_version"] = kSchemaVersion;
    m["version"] = kVersion;
    m["kind"] = cfg.kind;
    m["config"] = cfg.raw;
    m["columns"] = table.columns;
    m["csv"] = csv.filename().string();
    m["threads"] = thread_count();
    m["wall_time_seconds"] = wall;
    std::ofstream(meta) << m.dump(2) << '\n';
    std::cout << csv.string() << '\n' << meta.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dualexp: small-parameter expansions of control values and indifference prices"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    std::string config, out_dir = ".";
    int threads = 0;
    auto* run_cmd = app.add_subcommand("run", "Run an experiment and write CSV + JSON metadata");
    run_cmd->add_option("config", config, "Experiment config (JSON)")->required();
    run_cmd->add_option("--out", out_dir, "Output directory");
    run_cmd->add_option("--threads", threads, "Worker threads (default: DUALEXP_THREADS, else all cores)")
        ->check(CLI::PositiveNumber);

    std::string vconfig;
    auto* validate_cmd = app.add_subcommand("validate", "List every violated constraint; never simulates");
    validate_cmd->add_option("config", vconfig, "Experiment config (JSON)")->required();

    auto* models_cmd = app.add_subcommand("list-models", "Model names accepted in model.name");
    auto* claims_cmd = app.add_subcommand("list-claims", "Claim labels accepted in claim.label");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*models_cmd) {
            for (const auto& m : cli::model_names()) std::cout << m << '\n';
            return 0;
        }
        if (*claims_cmd) {
            for (const auto& c : claim_labels()) std::cout << c << '\n';
            return 0;
        }
        if (*validate_cmd) {
            const auto errs = cli::validate(read_json(vconfig));
            if (errs.empty()) {
                std::cout << "ok\n";
                return 0;
            }
            for (const auto& e : errs) std::cout << "violation: " << e << '\n';
            return kExitConfig;
        }
        if (threads == 0) {
            if (const char* env = std::getenv("DUALEXP_THREADS")) {
                try {
                    threads = std::stoi(env);
                } catch (const std::exception&) {
                    throw ConfigError(std::string("DUALEXP_THREADS must be a positive integer (got '") + env + "')");
                }
                if (threads < 1) throw ConfigError("DUALEXP_THREADS must be a positive integer");
            }
        }
        return run(config, out_dir, threads);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const IncompatibleError& e) {
        std::cerr << "incompatible: " << e.what() << '\n';
        return kExitIncompatible;
    } catch (const NumericalFailure& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
