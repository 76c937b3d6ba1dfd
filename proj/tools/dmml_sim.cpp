/* Copyright 2026 The dmml-sim Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// dmml_sim: run, sweep and compare simulations.
//
//   dmml_sim run     [--config F] [--mode M] [--seed N] [--out D] [--rounds N] [--threads N] [--quiet]
//   dmml_sim sweep   [--config F] [--modes a,b] [--seeds 1,2] [--out D] [--rounds N] [--threads N] [--quiet]
//   dmml_sim compare RUN_DIR... [--csv F]
//   dmml_sim dataset [--config F] [--seed N] --out F.csv
//
// DMML_OUT_DIR overrides the configured output directory; --out overrides both.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dmml/dmml.hpp"

namespace fs = std::filesystem;
using namespace dmml;

namespace {

struct CommonOptions {
    std::string config;
    std::string mode;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int rounds = -1;
    std::size_t threads = 0;
    bool quiet = false;
};

ExperimentConfig resolve(const CommonOptions& o) {
    ExperimentConfig c = o.config.empty() ? config_from_string("") : load_config(o.config);
    if (!o.mode.empty()) c.mode = parse_mode(o.mode);
    if (o.seed_set) set_seed(c, o.seed);
    if (o.rounds >= 0) c.rounds = o.rounds;
    if (o.threads > 0) c.threads = o.threads;
    if (const char* env = std::getenv("DMML_OUT_DIR"); env && *env) c.output_dir = env;
    if (!o.out.empty()) c.output_dir = o.out;
    c.validate();
    return c;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw SimulationError("cannot write '" + p.string() + "'");
    out << text;
}

std::string two_digits(std::size_t v, int width) {
    std::string s = std::to_string(v);
    return std::string(s.size() < static_cast<std::size_t>(width) ? width - s.size() : 0, '0') + s;
}

// Runs one experiment and writes its artifacts. Returns the summary.
RunSummary run_one(const ExperimentConfig& cfg, bool quiet) {
    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    Simulator sim(cfg);

    {
        std::ostringstream topo;
        write_topology(topo, sim.topology());
        write_file(dir / "topology.txt", topo.str());
        write_file(dir / "partitions.json", partition_manifest(sim.partitions()).dump(2) + "\n");
    }

    std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
    if (!metrics) throw SimulationError("cannot write metrics.csv in '" + dir.string() + "'");
    write_metrics_header(metrics);
    std::vector<RoundRecord> all;
    while (!sim.done()) {
        const auto records = sim.step();
        for (const auto& r : records) write_metrics_row(metrics, r);
        all.insert(all.end(), records.begin(), records.end());
        const int t = sim.rounds_completed();
        if (cfg.checkpoint_every > 0 && (t % cfg.checkpoint_every == 0 || sim.done())) {
            const fs::path ck = dir / "checkpoints" / ("round_" + two_digits(static_cast<std::size_t>(t), 4));
            fs::create_directories(ck);
            for (const auto& d : sim.devices()) {
                std::ofstream f(ck / ("device_" + two_digits(d.id, 2) + ".ckpt"), std::ios::binary);
                save_checkpoint(f, d.model);
            }
        }
        if (!quiet) {
            double acc = 0.0;
            for (const auto& r : records) acc += r.acc;
            std::cerr << "[" << to_string(cfg.mode) << " seed " << cfg.seed << "] round " << t << "/" << cfg.rounds
                      << " mean acc " << format_fixed(acc / static_cast<double>(records.size()), 4) << "\n";
        }
    }
    metrics.close();

    const RunSummary s = summarize(cfg, sim.devices(), all);
    write_file(dir / "summary.json", summary_json(s).dump(2) + "\n");
    if (cfg.plots) {
        std::ostringstream a;
        write_line_plot(a, "Mean test accuracy (" + to_string(cfg.mode) + ")", "accuracy",
                        {{to_string(cfg.mode), accuracy_curve(all)}});
        write_file(dir / "accuracy.svg", a.str());
        std::vector<Series> per;
        for (const auto& [m, v] : modality_curves(all)) per.push_back({"modality " + std::to_string(m), v});
        std::ostringstream b;
        write_line_plot(b, "Per-modality accuracy (" + to_string(cfg.mode) + ")", "accuracy", per);
        write_file(dir / "accuracy_modality.svg", b.str());
    }
    return s;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int guarded(const std::function<int()>& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const SimulationError& e) {
        std::cerr << "simulation error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

void add_common(CLI::App* app, CommonOptions& o, bool with_mode) {
    app->add_option("--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);
    if (with_mode) app->add_option("--mode", o.mode, "dmml, dmml_kd or dmml_kd_balance");
    app->add_option("--out", o.out, "output directory");
    app->add_option("--rounds", o.rounds, "number of rounds")->check(CLI::NonNegativeNumber);
    app->add_option("--threads", o.threads, "worker threads for per-device work")->check(CLI::PositiveNumber);
    app->add_flag("--quiet", o.quiet, "suppress progress output");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decentralized multi-modal learning simulator"};
    app.require_subcommand(1);

    CommonOptions run_opt;
    auto* run = app.add_subcommand("run", "run one experiment");
    add_common(run, run_opt, true);
    run->add_option("--seed", run_opt.seed, "master seed")->each([&](const std::string&) { run_opt.seed_set = true; });

    CommonOptions sweep_opt;
    std::string modes = "dmml,dmml_kd,dmml_kd_balance";
    std::string seeds = "1,2,3";
    auto* sweep = app.add_subcommand("sweep", "run every mode for every seed and compare");
    add_common(sweep, sweep_opt, false);
    sweep->add_option("--modes", modes, "comma-separated modes");
    sweep->add_option("--seeds", seeds, "comma-separated seeds");

    std::vector<std::string> dirs;
    std::string csv_path;
    auto* cmp = app.add_subcommand("compare", "compare finished runs");
    cmp->add_option("runs", dirs, "run directories (each with summary.json)")->required();
    cmp->add_option("--csv", csv_path, "also write the table as CSV");

    CommonOptions data_opt;
    std::string data_out;
    auto* dataset = app.add_subcommand("dataset", "export the synthetic dataset as CSV");
    dataset->add_option("--config", data_opt.config, "JSON configuration file")->check(CLI::ExistingFile);
    dataset->add_option("--seed", data_opt.seed, "master seed")->each([&](const std::string&) {
        data_opt.seed_set = true;
    });
    dataset->add_option("--out", data_out, "CSV file")->required();

    CLI11_PARSE(app, argc, argv);

    if (*run) return guarded([&] {
        const ExperimentConfig cfg = resolve(run_opt);
        const RunSummary s = run_one(cfg, run_opt.quiet);
        if (!run_opt.quiet)
            std::cout << "final accuracy " << format_fixed(100.0 * s.final_acc, 2) << "%, energy/device "
                      << format_double(s.energy_mean) << " J, output " << cfg.output_dir << "\n";
        return 0;
    });

    if (*sweep) return guarded([&] {
        const ExperimentConfig base = resolve(sweep_opt);
        std::vector<RunSummary> runs;
        for (const auto& m : split_list(modes)) {
            for (const auto& s : split_list(seeds)) {
                ExperimentConfig c = base;
                c.mode = parse_mode(m);
                set_seed(c, static_cast<std::uint64_t>(std::stoull(s)));
                c.output_dir = (fs::path(base.output_dir) / (m + "_seed" + s)).string();
                runs.push_back(run_one(c, sweep_opt.quiet));
            }
        }
        const Comparison c = compare_runs(runs);
        std::ostringstream csv;
        write_comparison_csv(csv, c);
        write_file(fs::path(base.output_dir) / "comparison.csv", csv.str());
        print_comparison(std::cout, c);
        return 0;
    });

    if (*cmp) return guarded([&] {
        std::vector<RunSummary> runs;
        for (const auto& d : dirs) runs.push_back(load_summary((fs::path(d) / "summary.json").string()));
        const Comparison c = compare_runs(runs);
        print_comparison(std::cout, c);
        if (!csv_path.empty()) {
            std::ostringstream csv;
            write_comparison_csv(csv, c);
            write_file(csv_path, csv.str());
        }
        return 0;
    });

    if (*dataset) return guarded([&] {
        const ExperimentConfig cfg = resolve(data_opt);
        const Dataset ds = generate(cfg.data);
        std::ostringstream os;
        write_dataset_csv(os, ds);
        write_file(data_out, os.str());
        return 0;
    });
    return 0;
}
