#pragma once

// Side-by-side comparison of finished runs. The baseline is the run with the
// lowest simulated throughput; speedups are throughput ratios against it.
// Simulated time is in cost-model units, not seconds.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "dcs3gd/errors.hpp"
#include "dcs3gd/harness/experiment.hpp"
#include "dcs3gd/sim/run_record.hpp"

namespace dcs3gd::harness {

struct RunDescriptor {
    std::string label;
    Algorithm algorithm = Algorithm::dc_s3gd;
    std::size_t n_workers = 1;
    std::size_t local_batch_size = 1;
    std::size_t model_dimension = 0;
    RunSummary summary;
};

inline RunDescriptor describe(const RunRecord& r, std::string label) {
    return RunDescriptor{std::move(label), r.algorithm, r.n_workers, r.local_batch_size, r.model_dimension, r.summary};
}

/// Reads run.meta from a run directory; fails unless the run is complete.
inline RunDescriptor load_run(const std::filesystem::path& dir) {
    const auto meta_path = dir / kMetaFile;
    if (!std::filesystem::exists(meta_path)) throw IoError(dir.string() + ": no " + kMetaFile + " (incomplete run?)");
    boost::property_tree::ptree t;
    try {
        boost::property_tree::ini_parser::read_ini(meta_path.string(), t);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw IoError(meta_path.string() + ": " + e.what());
    }
    auto get = [&](const char* section, const char* key) -> std::string {
        const auto v = t.get_optional<std::string>(boost::property_tree::ptree::path_type(
            std::string(section) + "\x1f" + key, '\x1f'));
        if (!v) throw IoError(meta_path.string() + ": missing " + section + "." + key);
        return *v;
    };
    auto num = [&](const char* section, const char* key) {
        const std::string text = get(section, key);
        try {
            return std::stod(text);
        } catch (const std::exception&) {
            throw IoError(meta_path.string() + ": bad number for " + section + "." + key + ": '" + text + "'");
        }
    };
    auto count = [&](const char* section, const char* key) { return static_cast<std::size_t>(num(section, key)); };
    if (get("meta", "complete") != "true") throw IoError(dir.string() + ": run is not marked complete");

    RunDescriptor d;
    d.label = get("meta", "label");
    d.algorithm = parse_algorithm(get("summary", "algorithm"));
    d.n_workers = count("summary", "n_workers");
    d.local_batch_size = count("summary", "local_batch_size");
    d.model_dimension = count("summary", "model_dimension");
    auto& s = d.summary;
    s.iterations = count("summary", "iterations");
    s.samples_processed = count("summary", "samples_processed");
    s.total_simulated_time = num("summary", "total_simulated_time");
    s.wall_time_seconds = num("summary", "wall_time_seconds");
    s.final_train_loss = num("summary", "final_train_loss");
    s.final_train_error = num("summary", "final_train_error");
    if (!get("summary", "final_val_error").empty()) s.final_val_error = num("summary", "final_val_error");
    s.diverged = get("summary", "diverged") == "true";
    if (!get("summary", "divergence_iteration").empty())
        s.divergence_iteration = count("summary", "divergence_iteration");
    if (!get("summary", "warmup_stopped_at").empty()) s.warmup_stopped_at = count("summary", "warmup_stopped_at");
    s.mean_staleness = num("summary", "mean_staleness");
    s.mean_distance = num("summary", "mean_distance");
    return d;
}

struct ComparisonRow {
    RunDescriptor run;
    double throughput = 0.0;  // samples per simulated time unit
    double speedup = 0.0;
    double delta_train_loss = 0.0;
    double delta_train_error = 0.0;
    std::optional<double> delta_val_error;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;
    std::size_t baseline = 0;
};

inline double throughput(const RunSummary& s) {
    return static_cast<double>(s.samples_processed) / s.total_simulated_time;
}

inline std::string format_speedup(double speedup) { return fmt::format("{:.2f}×", speedup); }

inline ComparisonTable compare_runs(std::vector<RunDescriptor> runs) {
    if (runs.size() < 2) throw InvalidArgument("compare_runs: need at least 2 runs");
    for (const auto& r : runs)
        if (r.model_dimension != runs.front().model_dimension)
            throw InvalidArgument(fmt::format("compare_runs: incompatible runs '{}' (dimension {}) and '{}' (dimension {})",
                                              runs.front().label, runs.front().model_dimension, r.label,
                                              r.model_dimension));
    auto key = [](const RunDescriptor& r) {
        return std::make_tuple(r.label, static_cast<int>(r.algorithm), r.n_workers, r.local_batch_size,
                               r.summary.total_simulated_time, r.summary.final_train_loss);
    };
    std::sort(runs.begin(), runs.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });

    ComparisonTable table;
    for (auto& r : runs) table.rows.push_back(ComparisonRow{std::move(r), 0.0, 0.0, 0.0, 0.0, std::nullopt});
    for (auto& row : table.rows) row.throughput = throughput(row.run.summary);
    for (std::size_t i = 1; i < table.rows.size(); ++i)
        if (table.rows[i].throughput < table.rows[table.baseline].throughput) table.baseline = i;

    const auto& base = table.rows[table.baseline].run;
    for (auto& row : table.rows) {
        const auto& s = row.run.summary;
        // Ratio of (samples / time) computed as one quotient of products so
        // equal-work runs give the plain time ratio exactly.
        row.speedup = (static_cast<double>(s.samples_processed) * base.summary.total_simulated_time) /
                      (static_cast<double>(base.summary.samples_processed) * s.total_simulated_time);
        row.delta_train_loss = s.final_train_loss - base.summary.final_train_loss;
        row.delta_train_error = s.final_train_error - base.summary.final_train_error;
        if (s.final_val_error && base.summary.final_val_error)
            row.delta_val_error = *s.final_val_error - *base.summary.final_val_error;
    }
    return table;
}

namespace detail {

inline std::vector<std::vector<std::string>> comparison_cells(const ComparisonTable& table) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"label", "algorithm", "n_workers", "local_batch", "final_train_loss", "final_train_error",
                     "final_val_error", "simulated_time", "samples", "throughput", "speedup", "delta_train_loss",
                     "delta_val_error", "baseline"});
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const auto& s = row.run.summary;
        cells.push_back({row.run.label, to_string(row.run.algorithm), std::to_string(row.run.n_workers),
                         std::to_string(row.run.local_batch_size), fmt::format("{}", s.final_train_loss),
                         fmt::format("{}", s.final_train_error),
                         s.final_val_error ? fmt::format("{}", *s.final_val_error) : "",
                         fmt::format("{}", s.total_simulated_time), std::to_string(s.samples_processed),
                         fmt::format("{}", row.throughput), fmt::format("{:.2f}", row.speedup),
                         fmt::format("{}", row.delta_train_loss),
                         row.delta_val_error ? fmt::format("{}", *row.delta_val_error) : "",
                         i == table.baseline ? "yes" : ""});
    }
    return cells;
}

}  // namespace detail

inline void write_comparison_csv(std::ostream& out, const ComparisonTable& table) {
    for (const auto& line : detail::comparison_cells(table)) {
        for (std::size_t k = 0; k < line.size(); ++k) out << (k ? "," : "") << line[k];
        out << '\n';
    }
}

/// Human-readable table; numbers rounded for display, speedups as "2.00×".
inline void write_comparison_text(std::ostream& out, const ComparisonTable& table) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"label", "algorithm", "N", "B", "train_loss", "train_err", "val_err", "sim_time", "throughput",
                     "speedup", "d_loss", "d_val_err"});
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const auto& s = row.run.summary;
        cells.push_back({row.run.label + (i == table.baseline ? " *" : ""), to_string(row.run.algorithm),
                         std::to_string(row.run.n_workers), std::to_string(row.run.local_batch_size),
                         fmt::format("{:.6f}", s.final_train_loss), fmt::format("{:.4f}", s.final_train_error),
                         s.final_val_error ? fmt::format("{:.4f}", *s.final_val_error) : "-",
                         fmt::format("{:.6g}", s.total_simulated_time), fmt::format("{:.6g}", row.throughput),
                         format_speedup(row.speedup), fmt::format("{:+.6f}", row.delta_train_loss),
                         row.delta_val_error ? fmt::format("{:+.4f}", *row.delta_val_error) : "-"});
    }
    // Column widths in code points so the "×" sign does not skew alignment.
    auto width = [](const std::string& s) {
        std::size_t n = 0;
        for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
        return n;
    };
    std::vector<std::size_t> widths(cells.front().size(), 0);
    for (const auto& line : cells)
        for (std::size_t k = 0; k < line.size(); ++k) widths[k] = std::max(widths[k], width(line[k]));
    for (const auto& line : cells) {
        for (std::size_t k = 0; k < line.size(); ++k) {
            const std::size_t pad = widths[k] - width(line[k]);
            if (k == 0)
                out << line[k] << std::string(pad, ' ');
            else
                out << "  " << std::string(pad, ' ') << line[k];
        }
        out << '\n';
    }
    out << "* baseline (lowest throughput). Simulated time is in cost-model units.\n";
}

}  // namespace dcs3gd::harness
