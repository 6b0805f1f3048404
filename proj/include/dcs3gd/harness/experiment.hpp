#pragma once

// Turns an ExperimentConfig into a run: builds the data, model and
// schedules, drives the cluster simulator and persists metrics.csv plus the
// run.meta sidecar into the output directory.
//
// Seeds: every consumer draws from derive_seed(run.seed, purpose) with the
// purposes "dataset", "quadratic" and (inside the simulator) "init" and
// "shuffle".

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "dcs3gd/cluster_sim.hpp"
#include "dcs3gd/dataset_io.hpp"
#include "dcs3gd/harness/config.hpp"
#include "dcs3gd/models.hpp"
#include "dcs3gd/optim.hpp"

#ifndef DCS3GD_VERSION
#define DCS3GD_VERSION "0.1.0"
#endif

namespace dcs3gd::harness {

inline constexpr const char* kOutputRootEnv = "DCS3GD_OUTPUT_ROOT";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kMetaFile = "run.meta";

struct Problem {
    Model model;
    Dataset train;
    Dataset validation;
};

inline Model make_quadratic_model(const ModelSection& m, std::size_t dimension, std::uint64_t seed) {
    QuadraticSpec spec;
    spec.diagonal.resize(dimension);
    for (std::size_t k = 0; k < dimension; ++k) {
        const double f = dimension == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(dimension - 1);
        spec.diagonal[k] = std::lerp(m.quadratic_min_eigenvalue, m.quadratic_max_eigenvalue, f);
    }
    Rng rng(seed);
    for (std::size_t j = 0; j < m.quadratic_rank; ++j) {
        std::vector<double> u(dimension);
        for (auto& x : u) x = rng.normal();
        const double scale = std::sqrt(m.quadratic_rank_scale) / l2_norm(ParamVector(u));
        for (auto& x : u) x *= scale;
        spec.low_rank.push_back(std::move(u));
    }
    spec.center.assign(dimension, 0.0);
    return Model::quadratic(std::move(spec));
}

/// The dataset described by [dataset], before the train/validation split.
inline DatasetFile make_dataset(const ExperimentConfig& c) {
    if (c.dataset.source == "file") {
        DatasetFile file = read_dataset(c.dataset.path);
        const bool wants_classes = c.model.kind != ModelKind::quadratic;
        if (file.classification != wants_classes)
            throw ConfigError("dataset.path", std::string("file holds ") +
                                                  (file.classification ? "class labels" : "regression targets") +
                                                  " but model.kind is " + to_string(c.model.kind));
        return file;
    }
    DatasetFile file;
    file.classification = c.model.kind != ModelKind::quadratic;
    file.dimension = c.dataset.dimension;
    file.n_classes = file.classification ? c.dataset.n_classes : 0;
    file.samples = make_synthetic_dataset(c.model.kind, c.dataset.n_samples, c.dataset.dimension, file.n_classes,
                                          derive_seed(c.run.seed, "dataset"),
                                          SyntheticOptions{c.dataset.separation, c.dataset.margin, c.dataset.noise});
    return file;
}

inline Problem make_problem(const ExperimentConfig& c) {
    DatasetFile file = make_dataset(c);
    Problem p{[&] {
                  switch (c.model.kind) {
                      case ModelKind::quadratic:
                          return make_quadratic_model(c.model, file.dimension, derive_seed(c.run.seed, "quadratic"));
                      case ModelKind::logistic_regression:
                          return Model::logistic_regression(file.dimension, file.n_classes);
                      case ModelKind::mlp: return Model::mlp(file.dimension, c.model.hidden, file.n_classes);
                  }
                  throw InvalidArgument("unknown model kind");
              }(),
              {},
              {}};
    std::tie(p.train, p.validation) = split_train_validation(file.samples, c.dataset.validation_fraction);
    return p;
}

inline ClusterConfig cluster_config(const ExperimentConfig& c) {
    ClusterConfig cc;
    cc.n_workers = c.cluster.n_workers;
    cc.algorithm = c.cluster.algorithm;
    cc.local_batch_size = c.cluster.local_batch_size;
    cc.cost_model = CostModel{c.cluster.t_compute, c.cluster.t_allreduce, c.cluster.t_ps_roundtrip, c.cluster.jitter};
    cc.seed = c.run.seed;
    return cc;
}

/// Simulator steps per epoch. Synchronous algorithms process one local
/// batch per worker per step; the parameter-server baseline applies one
/// worker's batch per update, so an epoch there is N times as many updates.
inline std::size_t steps_per_epoch(const ExperimentConfig& c, const ShardedDataset& shards) {
    const std::size_t per = shards.iterations_per_epoch(c.cluster.local_batch_size);
    if (per == 0)
        throw ConfigError("cluster.local_batch_size",
                          fmt::format("shards of {} samples cannot fill a batch of {}", shards.min_shard_size(),
                                      c.cluster.local_batch_size));
    return c.cluster.algorithm == Algorithm::dc_asgd ? per * c.cluster.n_workers : per;
}

inline std::size_t total_steps(const ExperimentConfig& c, std::size_t per_epoch) {
    return c.run.max_iterations ? *c.run.max_iterations : *c.run.epochs * per_epoch;
}

/// Peak learning rate: the linear scaling rule N * eta for the synchronous
/// algorithms, the single-node eta for the parameter-server baseline (its
/// updates carry one local batch each).
inline double peak_learning_rate(const ExperimentConfig& c) {
    if (c.cluster.algorithm == Algorithm::dc_asgd) return c.schedule.eta_single_node;
    return theoretical_lr(c.cluster.n_workers, c.schedule.eta_single_node);
}

inline HyperSchedule make_schedules(const ExperimentConfig& c, std::size_t total, std::size_t per_epoch) {
    const double peak = peak_learning_rate(c);
    Schedule lr;
    lr.total_iterations = total;
    lr.warmup_end_iteration = static_cast<std::size_t>(std::llround(c.schedule.warmup_fraction * static_cast<double>(total)));
    lr.peak_value = peak;
    lr.start_value = c.schedule.start_fraction * peak;
    lr.end_value = c.schedule.end_fraction * peak;
    const Schedule wd = scaled_to_peak(lr, c.schedule.weight_decay * c.schedule.weight_decay_factor);
    return HyperSchedule(lr, wd,
                         PlateauOptions{c.schedule.plateau_detection, c.schedule.plateau_window_epochs,
                                        c.schedule.plateau_threshold},
                         per_epoch);
}

/// run.output_dir, placed under $DCS3GD_OUTPUT_ROOT when that is set and the
/// configured path is relative.
inline std::filesystem::path resolve_output_dir(const ExperimentConfig& c) {
    std::filesystem::path dir(c.run.output_dir);
    if (const char* root = std::getenv(kOutputRootEnv); root && *root && dir.is_relative())
        return std::filesystem::path(root) / dir;
    return dir;
}

namespace detail {

inline void write_atomically(const std::filesystem::path& target, const std::string& contents) {
    auto tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << contents;
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + target.string() + ": " + ec.message());
}

inline void put_key(boost::property_tree::ptree& t, const std::string& section, const std::string& key,
                    const std::string& value) {
    t.put_child(boost::property_tree::ptree::path_type(section + "\x1f" + key, '\x1f'),
                boost::property_tree::ptree(value));
}

inline std::string opt_text(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : ""; }
inline std::string opt_text(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : ""; }

}  // namespace detail

inline std::string run_label(const ExperimentConfig& c) {
    if (!c.run.label.empty()) return c.run.label;
    return fmt::format("{}-N{}-B{}", to_string(c.cluster.algorithm), c.cluster.n_workers, c.cluster.local_batch_size);
}

/// The sidecar: [meta] (version, completeness marker), [summary], and the
/// resolved config echoed under config.<section>.
inline std::string render_meta(const ExperimentConfig& c, const RunRecord& r) {
    using detail::put_key;
    boost::property_tree::ptree t;
    put_key(t, "meta", "version", DCS3GD_VERSION);
    put_key(t, "meta", "label", run_label(c));
    put_key(t, "meta", "seed", std::to_string(c.run.seed));
    put_key(t, "meta", "rows", std::to_string(r.rows.size()));
    put_key(t, "meta", "metrics", kMetricsFile);
    put_key(t, "meta", "complete", "true");

    const auto& s = r.summary;
    put_key(t, "summary", "algorithm", to_string(r.algorithm));
    put_key(t, "summary", "n_workers", std::to_string(r.n_workers));
    put_key(t, "summary", "local_batch_size", std::to_string(r.local_batch_size));
    put_key(t, "summary", "model_dimension", std::to_string(r.model_dimension));
    put_key(t, "summary", "iterations", std::to_string(s.iterations));
    put_key(t, "summary", "samples_processed", std::to_string(s.samples_processed));
    put_key(t, "summary", "total_simulated_time", fmt::format("{}", s.total_simulated_time));
    put_key(t, "summary", "wall_time_seconds", fmt::format("{}", s.wall_time_seconds));
    put_key(t, "summary", "final_train_loss", fmt::format("{}", s.final_train_loss));
    put_key(t, "summary", "final_train_error", fmt::format("{}", s.final_train_error));
    put_key(t, "summary", "final_val_error", detail::opt_text(s.final_val_error));
    put_key(t, "summary", "diverged", s.diverged ? "true" : "false");
    put_key(t, "summary", "divergence_iteration", detail::opt_text(s.divergence_iteration));
    put_key(t, "summary", "warmup_stopped_at", detail::opt_text(s.warmup_stopped_at));
    put_key(t, "summary", "mean_staleness", fmt::format("{}", s.mean_staleness));
    put_key(t, "summary", "mean_distance", fmt::format("{}", s.mean_distance));

    for (const auto& [section, body] : to_tree(c))
        for (const auto& [key, value] : body) put_key(t, "config." + section, key, value.data());

    std::ostringstream out;
    boost::property_tree::ini_parser::write_ini(out, t);
    return out.str();
}

/// Writes metrics.csv then run.meta, each via a temporary file and rename.
/// A stale sidecar is removed first, so a directory whose CSV is incomplete
/// never carries a completeness marker.
inline void persist_run(const ExperimentConfig& c, const RunRecord& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::filesystem::remove(dir / kMetaFile, ec);
    std::ostringstream csv;
    write_metrics_csv(csv, r);
    detail::write_atomically(dir / kMetricsFile, csv.str());
    detail::write_atomically(dir / kMetaFile, render_meta(c, r));
}

struct ExperimentResult {
    RunRecord record;
    std::filesystem::path output_dir;
};

/// Runs without touching the filesystem (beyond reading a dataset file).
inline RunRecord simulate(const ExperimentConfig& c, const RunOptions& extra = {}) {
    validate(c);
    const Problem p = make_problem(c);
    const ClusterConfig cc = cluster_config(c);
    const ShardedDataset shards = ShardedDataset::contiguous(p.train, c.cluster.n_workers);
    const std::size_t per_epoch = steps_per_epoch(c, shards);
    const std::size_t total = total_steps(c, per_epoch);
    const HyperSchedule schedules = make_schedules(c, total, per_epoch);

    RunOptions options = extra;
    options.momentum = c.schedule.momentum;
    options.excluded_groups = c.schedule.excluded_groups;
    options.shard_wraparound = c.cluster.shard_wraparound;
    options.eval_interval = c.run.eval_interval;
    options.validation = p.validation;
    options.train_eval = p.train;
    CompensationOptions comp;
    comp.config.lambda0 = c.compensation.lambda0;
    comp.enabled = c.compensation.enabled;
    comp.exact_hessian = c.compensation.exact_hessian;
    return run_cluster(cc, p.model, shards, schedules, comp, total, options);
}

inline ExperimentResult run_experiment(const ExperimentConfig& c, const RunOptions& extra = {}) {
    ExperimentResult result{simulate(c, extra), resolve_output_dir(c)};
    persist_run(c, result.record, result.output_dir);
    return result;
}

}  // namespace dcs3gd::harness
