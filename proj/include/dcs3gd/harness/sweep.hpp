#pragma once

// One run per value of a single config key. Run i uses seed base + i and
// writes to <output_dir>/<axis>=<value>. A failing run is recorded and the
// sweep moves on.

#include <future>
#include <optional>
#include <string>
#include <vector>

#include "dcs3gd/harness/config.hpp"
#include "dcs3gd/harness/experiment.hpp"

namespace dcs3gd::harness {

enum class RunStatus { ok, diverged, config_error, io_error, failed };

struct SweepEntry {
    std::string value;
    RunStatus status = RunStatus::failed;
    std::optional<ExperimentConfig> config;
    std::optional<RunRecord> record;
    std::filesystem::path output_dir;
    std::string error;
};

inline ExperimentConfig sweep_point(const ExperimentConfig& base, const std::string& axis, const std::string& value,
                                    std::size_t index) {
    ExperimentConfig c = with_override(base, axis, value);
    if (axis != "run.seed") c.run.seed = base.run.seed + index;
    c.run.output_dir = (std::filesystem::path(base.run.output_dir) / (axis + "=" + value)).string();
    if (c.run.label.empty() || c.run.label == base.run.label)
        c.run.label = (base.run.label.empty() ? std::string() : base.run.label + ":") + axis + "=" + value;
    return c;
}

inline SweepEntry run_sweep_point(const ExperimentConfig& base, const std::string& axis, const std::string& value,
                                  std::size_t index) {
    SweepEntry e;
    e.value = value;
    try {
        e.config = sweep_point(base, axis, value, index);
        auto result = run_experiment(*e.config);
        e.output_dir = result.output_dir;
        e.status = result.record.summary.diverged ? RunStatus::diverged : RunStatus::ok;
        if (result.record.summary.diverged) e.error = result.record.summary.divergence_message;
        e.record = std::move(result.record);
    } catch (const ConfigError& err) {
        e.status = RunStatus::config_error;
        e.error = err.what();
    } catch (const IoError& err) {
        e.status = RunStatus::io_error;
        e.error = err.what();
    } catch (const std::exception& err) {
        e.status = RunStatus::failed;
        e.error = err.what();
    }
    return e;
}

/// Runs up to `jobs` points at once; results come back in value order.
inline std::vector<SweepEntry> sweep(const ExperimentConfig& base, const std::string& axis,
                                     const std::vector<std::string>& values, std::size_t jobs = 1) {
    if (!sweepable_keys().contains(axis)) throw ConfigError(axis, "not a sweepable numeric key");
    if (values.empty()) throw ConfigError(axis, "no sweep values given");
    std::vector<SweepEntry> out(values.size());
    jobs = std::max<std::size_t>(1, jobs);
    for (std::size_t begin = 0; begin < values.size(); begin += jobs) {
        const std::size_t end = std::min(values.size(), begin + jobs);
        std::vector<std::future<SweepEntry>> pending;
        for (std::size_t i = begin; i < end; ++i)
            pending.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async, run_sweep_point,
                                         std::cref(base), std::cref(axis), std::cref(values[i]), i));
        for (std::size_t i = begin; i < end; ++i) out[i] = pending[i - begin].get();
    }
    return out;
}

}  // namespace dcs3gd::harness
