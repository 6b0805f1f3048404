#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dcs3gd/sim/cost_model.hpp"
#include "dcs3gd/vecmath.hpp"

namespace dcs3gd {

struct RunRow {
    std::size_t iteration = 0;
    double simulated_time = 0.0;
    double train_loss = 0.0;   // mean mini-batch loss over workers
    double train_error = 0.0;  // mean mini-batch top-1 error over workers
    double mean_lambda = 0.0;
    double max_abs_D = 0.0;
    double grad_norm = 0.0;  // norm of the worker-mean raw gradient
    std::optional<double> val_error;
};

struct RunSummary {
    std::size_t iterations = 0;
    std::size_t samples_processed = 0;
    double total_simulated_time = 0.0;
    double wall_time_seconds = 0.0;
    double final_train_loss = 0.0;  // full training set at the final weights
    double final_train_error = 0.0;
    std::optional<double> final_val_error;
    bool diverged = false;
    std::optional<std::size_t> divergence_iteration;
    std::string divergence_message;
    std::optional<std::size_t> warmup_stopped_at;
    // Mean staleness in updates (parameter-server baseline) and mean
    // ||displacement|| used by the compensation.
    double mean_staleness = 0.0;
    double mean_distance = 0.0;
};

struct RunRecord {
    Algorithm algorithm = Algorithm::dc_s3gd;
    std::size_t n_workers = 1;
    std::size_t local_batch_size = 1;
    std::size_t model_dimension = 0;
    std::vector<RunRow> rows;
    RunSummary summary;
    ParamVector final_weights;
};

inline constexpr const char* kMetricsCsvHeader =
    "iteration,simulated_time,train_loss,train_error,mean_lambda,max_abs_D,grad_norm,val_error";

/// One row per completed iteration. Floats use the shortest representation
/// that round-trips, so identical runs produce byte-identical files.
inline void write_metrics_csv(std::ostream& out, const RunRecord& record) {
    out << kMetricsCsvHeader << '\n';
    for (const auto& r : record.rows) {
        out << fmt::format("{},{},{},{},{},{},{},", r.iteration, r.simulated_time, r.train_loss, r.train_error,
                           r.mean_lambda, r.max_abs_D, r.grad_norm);
        if (r.val_error) out << fmt::format("{}", *r.val_error);
        out << '\n';
    }
}

}  // namespace dcs3gd
