// dcs3gd: command-line front end for the simulator harness.
//
//   dcs3gd run <config>
//   dcs3gd sweep <config> --axis <section.key> --values <v1,v2,...> [--jobs N]
//   dcs3gd compare <run-dir>... [--csv <file>]
//   dcs3gd validate-config <config>
//   dcs3gd gen-data <config> <out.bin|out.csv>
//
// Exit codes: 0 success, 2 config error, 3 divergence, 4 I/O error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "dcs3gd/harness.hpp"

namespace {

namespace h = dcs3gd::harness;

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDiverged = 3;
constexpr int kIoError = 4;

void print_summary(const std::string& label, const dcs3gd::RunRecord& r, const std::filesystem::path& dir) {
    const auto& s = r.summary;
    fmt::print("{}: {} N={} B={} iterations={} simulated_time={} train_loss={:.6f} train_error={:.4f}", label,
               dcs3gd::to_string(r.algorithm), r.n_workers, r.local_batch_size, s.iterations, s.total_simulated_time,
               s.final_train_loss, s.final_train_error);
    if (s.final_val_error) fmt::print(" val_error={:.4f}", *s.final_val_error);
    if (s.diverged) fmt::print(" DIVERGED at iteration {}", s.divergence_iteration.value_or(0));
    fmt::print(" -> {}\n", dir.string());
}

int cmd_run(const std::string& path) {
    const auto config = h::load_config(path);
    const auto result = h::run_experiment(config);
    print_summary(h::run_label(config), result.record, result.output_dir);
    if (result.record.summary.diverged) {
        fmt::print(stderr, "error: run diverged: {}\n", result.record.summary.divergence_message);
        return kDiverged;
    }
    return kOk;
}

std::vector<std::string> split_values(const std::vector<std::string>& raw) {
    std::vector<std::string> out;
    for (const auto& item : raw) {
        std::stringstream ss(item);
        std::string v;
        while (std::getline(ss, v, ','))
            if (!v.empty()) out.push_back(v);
    }
    return out;
}

int cmd_sweep(const std::string& path, const std::string& axis, const std::vector<std::string>& raw_values,
              std::size_t jobs) {
    const auto config = h::load_config(path);
    const auto entries = h::sweep(config, axis, split_values(raw_values), jobs);
    int worst = kOk;
    for (const auto& e : entries) {
        if (e.record) {
            print_summary(axis + "=" + e.value, *e.record, e.output_dir);
        } else {
            fmt::print(stderr, "{}={}: error: {}\n", axis, e.value, e.error);
        }
        const int code = e.status == h::RunStatus::ok             ? kOk
                         : e.status == h::RunStatus::diverged     ? kDiverged
                         : e.status == h::RunStatus::config_error ? kConfigError
                         : e.status == h::RunStatus::io_error     ? kIoError
                                                                  : 1;
        worst = std::max(worst, code);
    }
    return worst;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& csv_path) {
    std::vector<h::RunDescriptor> runs;
    for (const auto& d : dirs) runs.push_back(h::load_run(d));
    const auto table = h::compare_runs(std::move(runs));
    h::write_comparison_text(std::cout, table);
    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw dcs3gd::IoError("cannot write " + csv_path);
        h::write_comparison_csv(out, table);
    }
    return kOk;
}

int cmd_validate(const std::string& path) {
    const auto config = h::load_config(path);
    std::cout << h::serialize_config(config);
    return kOk;
}

int cmd_gen_data(const std::string& path, const std::string& out) {
    const auto config = h::load_config(path);
    if (config.dataset.source != "synthetic")
        throw h::ConfigError("dataset.source", "gen-data needs source = synthetic");
    const auto file = h::make_dataset(config);
    dcs3gd::write_dataset(file, out);
    fmt::print("wrote {} samples (dimension {}) to {}\n", file.samples.size(), file.dimension, out);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deterministic simulator for delay-compensated data-parallel SGD"};
    app.set_version_flag("--version", DCS3GD_VERSION);
    app.require_subcommand(1);

    std::string config_path, out_path, axis, csv_path;
    std::vector<std::string> values, dirs;
    std::size_t jobs = 1;

    auto* run = app.add_subcommand("run", "run one experiment");
    run->add_option("config", config_path, "experiment config (.ini)")->required();

    auto* sweep = app.add_subcommand("sweep", "run one experiment per value of a config key");
    sweep->add_option("config", config_path, "base experiment config (.ini)")->required();
    sweep->add_option("--axis", axis, "section.key to vary, e.g. cluster.n_workers")->required();
    sweep->add_option("--values", values, "comma-separated values")->required();
    sweep->add_option("--jobs", jobs, "runs executed concurrently")->check(CLI::PositiveNumber);

    auto* compare = app.add_subcommand("compare", "tabulate finished runs against the slowest one");
    compare->add_option("dirs", dirs, "run output directories")->required()->expected(2, -1);
    compare->add_option("--csv", csv_path, "also write the table as CSV");

    auto* validate = app.add_subcommand("validate-config", "check a config and print it with defaults resolved");
    validate->add_option("config", config_path, "experiment config (.ini)")->required();

    auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset described by a config");
    gen->add_option("config", config_path, "config with [dataset] and [model] sections")->required();
    gen->add_option("out", out_path, "output file (.csv for text, anything else binary)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kConfigError;
    }

    try {
        if (*run) return cmd_run(config_path);
        if (*sweep) return cmd_sweep(config_path, axis, values, jobs);
        if (*compare) return cmd_compare(dirs, csv_path);
        if (*validate) return cmd_validate(config_path);
        if (*gen) return cmd_gen_data(config_path, out_path);
    } catch (const h::ConfigError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return kConfigError;
    } catch (const dcs3gd::IoError& e) {
        fmt::print(stderr, "i/o error: {}\n", e.what());
        return kIoError;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return kOk;
}
