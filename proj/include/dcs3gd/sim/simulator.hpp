#pragma once

// Deterministic single-threaded simulation of a data-parallel cluster.
//
// Workers are advanced in worker-index order and all collective sums use
// that order, so two runs with the same inputs produce bit-identical
// records. Time is virtual: every compute or communication phase advances a
// worker's clock by the cost model, never by measured wall time.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "dcs3gd/errors.hpp"
#include "dcs3gd/models.hpp"
#include "dcs3gd/optim.hpp"
#include "dcs3gd/random.hpp"
#include "dcs3gd/sim/allreduce.hpp"
#include "dcs3gd/sim/cost_model.hpp"
#include "dcs3gd/sim/run_record.hpp"
#include "dcs3gd/sim/sharding.hpp"
#include "dcs3gd/vecmath.hpp"

namespace dcs3gd {

struct CompensationOptions {
    CompensationConfig config;
    bool enabled = true;
    // Replaces the pseudo-Hessian term with the exact H(w_i)·D_i (lambda 1).
    // Only for model kinds with an analytic Hessian.
    bool exact_hessian = false;
};

struct WorkerState {
    std::size_t worker_id = 0;
    ParamVector weights;  // w_i
    ParamVector average;  // reconstructed average weights, identical on every worker
    MomentumState momentum;
    std::optional<ParamVector> pending_update;  // set while this worker's update is being reduced
    BatchCursor cursor;
    double local_clock = 0.0;
};

/// w_i + D_i: the average weights as seen from worker i. Valid between
/// forming D_i and applying the next local update.
inline ParamVector reconstruct_average_weights(const WorkerState& worker, const ParamVector& distance) {
    return add(worker.weights, distance);
}

struct DcS3gdIterationView {
    std::size_t iteration;
    std::span<const WorkerState> workers;          // after the local update
    std::span<const ParamVector> distances;        // D_i
    std::span<const ParamVector> reconstructions;  // w_i + D_i, before the local update
    const ParamVector& reduced;                    // sum of the previous updates
};

struct SsgdIterationView {
    std::size_t iteration;
    std::span<const WorkerState> workers;
};

struct AsgdUpdateView {
    std::size_t update;
    std::size_t worker;
    std::size_t staleness;  // server updates since the worker's snapshot
    double distance;        // ||w_PS - w_i|| at arrival
    double time;
};

struct RunOptions {
    ParamVector initial_weights;  // empty: Glorot init from the cluster seed
    double momentum = 0.9;
    std::set<GroupId> excluded_groups{kBiasGroup};
    bool shard_wraparound = true;
    std::size_t eval_interval = 0;  // 0 disables per-row validation error
    Dataset validation;
    Dataset train_eval;  // final training metrics; empty means all shard samples
    bool check_invariants = true;
    std::function<void(const DcS3gdIterationView&)> on_dc_s3gd_iteration;
    std::function<void(const SsgdIterationView&)> on_ssgd_iteration;
    std::function<void(const AsgdUpdateView&)> on_asgd_update;
};

namespace detail {

inline void validate_run(const ClusterConfig& config, const Model& model, const ShardedDataset& data,
                         std::size_t max_iterations) {
    config.validate();
    if (data.size() != config.n_workers)
        throw InvalidArgument("dataset has " + std::to_string(data.size()) + " shards for " +
                              std::to_string(config.n_workers) + " workers");
    if (max_iterations == 0) throw InvalidArgument("max_iterations must be >= 1");
    for (std::size_t i = 0; i < data.size(); ++i)
        for (const auto& s : data[i].samples) model.check_sample(s);
}

inline ParamVector initial_weights(const Model& model, const ClusterConfig& config, const RunOptions& options) {
    if (options.initial_weights.empty()) return model.initial_weights(derive_seed(config.seed, "init"));
    if (options.initial_weights.size() != model.dimension())
        throw LengthMismatch(model.dimension(), options.initial_weights.size());
    // Re-tag with the model's group layout.
    return ParamVector(std::vector<double>(options.initial_weights.values().begin(),
                                           options.initial_weights.values().end()),
                       model.group_layout());
}

inline std::vector<WorkerState> make_workers(const ClusterConfig& config, const Model& model,
                                             const ShardedDataset& data, const RunOptions& options) {
    const ParamVector w0 = initial_weights(model, config, options);
    const std::uint64_t shuffle_seed = derive_seed(config.seed, "shuffle");
    std::vector<WorkerState> workers;
    workers.reserve(config.n_workers);
    for (std::size_t i = 0; i < config.n_workers; ++i) {
        workers.push_back(WorkerState{
            i, w0, w0, MomentumState{ParamVector::zeros_like(w0), 0.0, options.momentum}, std::nullopt,
            BatchCursor(data[i], config.local_batch_size, shuffle_seed, options.shard_wraparound), 0.0});
    }
    return workers;
}

/// D_i = mean - own, with components inside the rounding error of the
/// left-to-right reduction set to zero. Bound per component:
/// eps * sum_i |contribution_i|. Without this, replicas with identical
/// updates would see D_i of order 1e-19, which the scale-free dynamic lambda
/// turns into a full-size correction.
inline ParamVector distance_to_mean(const ParamVector& mean_update, const ParamVector& own_update,
                                    std::span<const ParamVector> contributions) {
    ParamVector distance = subtract(mean_update, own_update);
    const double eps = std::numeric_limits<double>::epsilon();
    for (std::size_t k = 0; k < distance.size(); ++k) {
        double magnitude = 0.0;
        for (const auto& c : contributions) magnitude += std::abs(c[k]);
        if (std::abs(distance[k]) <= eps * magnitude) distance[k] = 0.0;
    }
    return distance;
}

inline ParamVector worker_mean(std::span<const ParamVector> parts) {
    return divide(ordered_sum(parts), static_cast<double>(parts.size()));
}

// Final metrics on the training and validation sets; shared by all runners.
inline void finalize(RunRecord& record, const Model& model, const ShardedDataset& data, const RunOptions& options,
                     std::chrono::steady_clock::time_point started) {
    record.summary.iterations = record.rows.size();
    if (!record.rows.empty()) record.summary.total_simulated_time = record.rows.back().simulated_time;
    if (!record.summary.diverged && !record.final_weights.empty()) {
        try {
            Dataset pooled;
            std::span<const Sample> train = options.train_eval;
            if (train.empty()) {
                for (std::size_t i = 0; i < data.size(); ++i)
                    pooled.insert(pooled.end(), data[i].samples.begin(), data[i].samples.end());
                train = pooled;
            }
            const auto e = evaluate(model, record.final_weights, train);
            record.summary.final_train_loss = e.loss;
            record.summary.final_train_error = e.error_rate;
            if (!options.validation.empty())
                record.summary.final_val_error = evaluate(model, record.final_weights, options.validation).error_rate;
        } catch (const NonFiniteError& err) {
            record.summary.diverged = true;
            record.summary.divergence_iteration = record.rows.size();
            record.summary.divergence_message = err.what();
        }
    }
    record.summary.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
}

inline void mark_diverged(RunRecord& record, std::size_t iteration, const std::exception& err) {
    record.summary.diverged = true;
    record.summary.divergence_iteration = iteration;
    record.summary.divergence_message = err.what();
    record.final_weights = ParamVector();
}

inline bool due_for_validation(const RunOptions& options, std::size_t iteration) {
    return options.eval_interval > 0 && !options.validation.empty() && (iteration + 1) % options.eval_interval == 0;
}

inline RunRecord new_record(const ClusterConfig& config, const Model& model) {
    RunRecord record;
    record.algorithm = config.algorithm;
    record.n_workers = config.n_workers;
    record.local_batch_size = config.local_batch_size;
    record.model_dimension = model.dimension();
    return record;
}

}  // namespace detail

/// Decentralized stale-synchronous delay-compensated SGD.
///
/// Iteration 0 is the priming step: every worker computes a gradient at the
/// shared initial weights, forms its update and applies it locally. Each
/// following iteration starts the all-reduce of the previous updates,
/// computes the next gradient while the reduction is in flight, waits, forms
/// D_i = reduced / N - Δw_i, corrects the gradient, forms the new update and
/// moves to the average plus that update. `max_iterations` counts the
/// priming step, so every algorithm consumes the same number of batches.
inline RunRecord run_dc_s3gd(const ClusterConfig& config, const Model& model, const ShardedDataset& data,
                             HyperSchedule schedules, const CompensationOptions& comp, std::size_t max_iterations,
                             const RunOptions& options = {}) {
    detail::validate_run(config, model, data, max_iterations);
    if (comp.exact_hessian && model.kind() == ModelKind::mlp)
        throw UnsupportedModel("exact-Hessian compensation needs an analytic Hessian");
    const auto started = std::chrono::steady_clock::now();
    const std::size_t n = config.n_workers;
    const auto n_real = static_cast<double>(n);
    const std::uint64_t jitter_seed = derive_seed(config.seed, "jitter");
    const CostModel& cost = config.cost_model;

    RunRecord record = detail::new_record(config, model);
    std::vector<WorkerState> workers = detail::make_workers(config, model, data, options);
    NonBlockingAllReduce channel(cost.t_allreduce);
    double distance_sum = 0.0;
    std::size_t distance_count = 0;

    std::size_t t = 0;
    try {
        // Priming: lines 1-3 of the protocol, no compensation.
        {
            RunRow row;
            std::vector<ParamVector> grads;
            const double eta = schedules.learning_rate(0);
            const double decay = schedules.weight_decay(0);
            for (auto& w : workers) {
                const auto bg = batch_gradient(model, w.weights, w.cursor.next_batch());
                grads.push_back(bg.gradient);
                row.train_loss += bg.loss;
                row.train_error += bg.error_rate;
                const ParamVector g = apply_weight_decay(bg.gradient, w.weights, decay, options.excluded_groups);
                w.momentum.eta = eta;
                ParamVector step = momentum_update(w.momentum, g);
                w.weights = add(w.weights, step);
                w.pending_update = std::move(step);
                w.local_clock = cost.compute_time(jitter_seed, w.worker_id, 0);
            }
            row.iteration = 0;
            row.train_loss /= n_real;
            row.train_error /= n_real;
            row.grad_norm = l2_norm(detail::worker_mean(grads));
            for (const auto& w : workers) row.simulated_time = std::max(row.simulated_time, w.local_clock);
            if (detail::due_for_validation(options, 0))
                row.val_error = evaluate(model, workers.front().average, options.validation).error_rate;
            schedules.record_iteration(0, row.train_loss);
            record.rows.push_back(row);
        }

        for (t = 1; t < max_iterations; ++t) {
            RunRow row;
            row.iteration = t;

            // Non-blocking all-reduce of every worker's pending update.
            std::vector<ParamVector> contributions;
            std::vector<double> ready;
            for (const auto& w : workers) {
                contributions.push_back(*w.pending_update);
                ready.push_back(w.local_clock);
            }
            const ReduceHandle& handle = channel.start(std::move(contributions), ready);

            // Overlapped: gradient of the next batch at the local weights.
            std::vector<BatchGradient> fresh;
            std::vector<std::span<const Sample>> batches;
            std::vector<double> compute_done;
            for (auto& w : workers) {
                batches.push_back(w.cursor.next_batch());
                fresh.push_back(batch_gradient(model, w.weights, batches.back()));
                compute_done.push_back(w.local_clock + cost.compute_time(jitter_seed, w.worker_id, t));
            }

            const double eta = schedules.learning_rate(t);
            const double decay = schedules.weight_decay(t);
            std::vector<ParamVector> distances, reconstructions, raw;
            for (auto& w : workers) {
                auto [reduced, released] = handle.wait(compute_done[w.worker_id]);
                const ParamVector mean_update = divide(reduced, n_real);
                ParamVector distance =
                    detail::distance_to_mean(mean_update, *w.pending_update, handle.contributions());
                reconstructions.push_back(reconstruct_average_weights(w, distance));
                w.average = add(w.average, mean_update);

                const auto& bg = fresh[w.worker_id];
                raw.push_back(bg.gradient);
                row.train_loss += bg.loss;
                row.train_error += bg.error_rate;
                const ParamVector g = apply_weight_decay(bg.gradient, w.weights, decay, options.excluded_groups);

                ParamVector corrected;
                double lambda = 0.0;
                if (comp.exact_hessian) {
                    lambda = 1.0;
                    corrected = compensate_with_curvature(
                        g, exact_hessian_vector(model, w.weights, batches[w.worker_id], distance), lambda);
                } else {
                    lambda = comp.enabled ? dynamic_lambda(comp.config, g, distance) : 0.0;
                    corrected = compensate(g, distance, lambda);
                }
                row.mean_lambda += lambda;
                row.max_abs_D = std::max(row.max_abs_D, max_abs(distance));
                distance_sum += l2_norm(distance);
                ++distance_count;

                w.momentum.eta = eta;
                ParamVector step = momentum_update(w.momentum, corrected);
                // w_i + D_i + Δw_i, taken from the shared average so that all
                // replicas hold a bit-identical base.
                w.weights = add(w.average, step);
                w.pending_update = std::move(step);
                w.local_clock = released;
                distances.push_back(std::move(distance));
            }
            const ParamVector reduced = channel.complete();

            if (options.check_invariants) {
                const ParamVector total = ordered_sum(distances);
                const double scale = std::max(1.0, max_abs(reduced));
                if (max_abs(total) > 1e-12 * scale)
                    throw InvariantViolation("sum of distances is " + std::to_string(max_abs(total)) +
                                             " at iteration " + std::to_string(t));
                for (const auto& w : workers)
                    if (!(w.average == workers.front().average))
                        throw InvariantViolation("replicas disagree on the average weights at iteration " +
                                                 std::to_string(t));
            }

            row.train_loss /= n_real;
            row.train_error /= n_real;
            row.mean_lambda /= n_real;
            row.grad_norm = l2_norm(detail::worker_mean(raw));
            for (const auto& w : workers) row.simulated_time = std::max(row.simulated_time, w.local_clock);
            if (detail::due_for_validation(options, t))
                row.val_error = evaluate(model, workers.front().average, options.validation).error_rate;
            schedules.record_iteration(t, row.train_loss);
            record.rows.push_back(row);

            if (options.on_dc_s3gd_iteration)
                options.on_dc_s3gd_iteration(DcS3gdIterationView{t, workers, distances, reconstructions, reduced});
        }

        // Report the model every replica would hold after the outstanding
        // reduction; this does not advance the simulated clock.
        std::vector<ParamVector> last;
        for (const auto& w : workers) last.push_back(*w.pending_update);
        record.final_weights = add(workers.front().average, detail::worker_mean(last));
    } catch (const NonFiniteError& err) {
        detail::mark_diverged(record, t, err);
    }

    record.summary.samples_processed = record.rows.size() * n * config.local_batch_size;
    record.summary.mean_distance = distance_count ? distance_sum / static_cast<double>(distance_count) : 0.0;
    record.summary.warmup_stopped_at = schedules.warmup_stopped_at();
    detail::finalize(record, model, data, options, started);
    return record;
}

/// Synchronous SGD: blocking all-reduce of gradients, identical mean update
/// on every worker.
inline RunRecord run_ssgd(const ClusterConfig& config, const Model& model, const ShardedDataset& data,
                          HyperSchedule schedules, std::size_t max_iterations, const RunOptions& options = {}) {
    detail::validate_run(config, model, data, max_iterations);
    const auto started = std::chrono::steady_clock::now();
    const std::size_t n = config.n_workers;
    const auto n_real = static_cast<double>(n);
    const std::uint64_t jitter_seed = derive_seed(config.seed, "jitter");
    const CostModel& cost = config.cost_model;

    RunRecord record = detail::new_record(config, model);
    std::vector<WorkerState> workers = detail::make_workers(config, model, data, options);
    double clock = 0.0;

    std::size_t t = 0;
    try {
        for (t = 0; t < max_iterations; ++t) {
            RunRow row;
            row.iteration = t;
            std::vector<ParamVector> grads;
            double slowest = 0.0;
            for (auto& w : workers) {
                const auto bg = batch_gradient(model, w.weights, w.cursor.next_batch());
                grads.push_back(bg.gradient);
                row.train_loss += bg.loss;
                row.train_error += bg.error_rate;
                slowest = std::max(slowest, cost.compute_time(jitter_seed, w.worker_id, t));
            }
            clock += slowest + cost.t_allreduce;
            const ParamVector mean_gradient = detail::worker_mean(grads);
            const double eta = schedules.learning_rate(t);
            const double decay = schedules.weight_decay(t);
            for (auto& w : workers) {
                const ParamVector g = apply_weight_decay(mean_gradient, w.weights, decay, options.excluded_groups);
                w.momentum.eta = eta;
                w.weights = add(w.weights, momentum_update(w.momentum, g));
                w.average = w.weights;
                w.local_clock = clock;
            }
            if (options.check_invariants)
                for (const auto& w : workers)
                    if (!(w.weights == workers.front().weights))
                        throw InvariantViolation("SSGD replicas diverged at iteration " + std::to_string(t));

            row.train_loss /= n_real;
            row.train_error /= n_real;
            row.grad_norm = l2_norm(mean_gradient);
            row.simulated_time = clock;
            if (detail::due_for_validation(options, t))
                row.val_error = evaluate(model, workers.front().weights, options.validation).error_rate;
            schedules.record_iteration(t, row.train_loss);
            record.rows.push_back(row);
            if (options.on_ssgd_iteration) options.on_ssgd_iteration(SsgdIterationView{t, workers});
        }
        record.final_weights = workers.front().weights;
    } catch (const NonFiniteError& err) {
        detail::mark_diverged(record, t, err);
    }
    record.summary.samples_processed = record.rows.size() * n * config.local_batch_size;
    record.summary.warmup_stopped_at = schedules.warmup_stopped_at();
    detail::finalize(record, model, data, options, started);
    return record;
}

/// Asynchronous parameter-server baseline with delay compensation against
/// the server weights. Events are processed in (time, worker id) order; one
/// row per server update. A worker's round trip (push gradient, receive
/// weights) completes t_compute + t_ps_roundtrip after it started its batch.
inline RunRecord run_dc_asgd(const ClusterConfig& config, const Model& model, const ShardedDataset& data,
                             HyperSchedule schedules, const CompensationOptions& comp, std::size_t max_iterations,
                             const RunOptions& options = {}) {
    detail::validate_run(config, model, data, max_iterations);
    if (comp.exact_hessian) throw InvalidArgument("exact-Hessian hook is only wired into dc_s3gd");
    const auto started = std::chrono::steady_clock::now();
    const std::uint64_t jitter_seed = derive_seed(config.seed, "jitter");
    const CostModel& cost = config.cost_model;

    RunRecord record = detail::new_record(config, model);
    std::vector<WorkerState> workers = detail::make_workers(config, model, data, options);
    ParamVector server = workers.front().weights;
    MomentumState server_momentum{ParamVector::zeros_like(server), 0.0, options.momentum};
    std::size_t version = 0;
    std::vector<std::size_t> snapshot_version(workers.size(), 0);
    std::vector<std::size_t> worker_iteration(workers.size(), 0);

    using Event = std::tuple<double, std::size_t>;  // (time, worker id)
    std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
    for (const auto& w : workers)
        events.emplace(cost.compute_time(jitter_seed, w.worker_id, 0) + cost.t_ps_roundtrip, w.worker_id);

    double staleness_sum = 0.0, distance_sum = 0.0;
    std::size_t u = 0;
    try {
        for (u = 0; u < max_iterations; ++u) {
            const auto [time, id] = events.top();
            events.pop();
            WorkerState& w = workers[id];

            const auto bg = batch_gradient(model, w.weights, w.cursor.next_batch());
            const ParamVector g =
                apply_weight_decay(bg.gradient, w.weights, schedules.weight_decay(u), options.excluded_groups);
            const ParamVector distance = subtract(server, w.weights);
            const std::size_t staleness = version - snapshot_version[id];
            const double lambda = comp.enabled ? dynamic_lambda(comp.config, g, distance) : 0.0;
            const ParamVector corrected = compensate(g, distance, lambda);
            server_momentum.eta = schedules.learning_rate(u);
            server = add(server, momentum_update(server_momentum, corrected));
            ++version;

            const double dist_norm = l2_norm(distance);
            staleness_sum += static_cast<double>(staleness);
            distance_sum += dist_norm;

            RunRow row;
            row.iteration = u;
            row.simulated_time = time;
            row.train_loss = bg.loss;
            row.train_error = bg.error_rate;
            row.mean_lambda = lambda;
            row.max_abs_D = max_abs(distance);
            row.grad_norm = l2_norm(bg.gradient);
            if (detail::due_for_validation(options, u))
                row.val_error = evaluate(model, server, options.validation).error_rate;
            schedules.record_iteration(u, row.train_loss);
            record.rows.push_back(row);
            if (options.on_asgd_update) options.on_asgd_update(AsgdUpdateView{u, id, staleness, dist_norm, time});

            // The worker receives the fresh server weights and starts its next batch.
            w.weights = server;
            w.local_clock = time;
            snapshot_version[id] = version;
            const std::size_t next = ++worker_iteration[id];
            events.emplace(time + cost.compute_time(jitter_seed, id, next) + cost.t_ps_roundtrip, id);
        }
        record.final_weights = server;
    } catch (const NonFiniteError& err) {
        detail::mark_diverged(record, u, err);
    }
    const auto updates = static_cast<double>(std::max<std::size_t>(record.rows.size(), 1));
    record.summary.samples_processed = record.rows.size() * config.local_batch_size;
    record.summary.mean_staleness = staleness_sum / updates;
    record.summary.mean_distance = distance_sum / updates;
    record.summary.warmup_stopped_at = schedules.warmup_stopped_at();
    detail::finalize(record, model, data, options, started);
    return record;
}

/// Dispatches on config.algorithm.
inline RunRecord run_cluster(const ClusterConfig& config, const Model& model, const ShardedDataset& data,
                             const HyperSchedule& schedules, const CompensationOptions& comp,
                             std::size_t max_iterations, const RunOptions& options = {}) {
    switch (config.algorithm) {
        case Algorithm::dc_s3gd: return run_dc_s3gd(config, model, data, schedules, comp, max_iterations, options);
        case Algorithm::ssgd: return run_ssgd(config, model, data, schedules, max_iterations, options);
        case Algorithm::dc_asgd: return run_dc_asgd(config, model, data, schedules, comp, max_iterations, options);
    }
    throw InvalidArgument("unknown algorithm");
}

}  // namespace dcs3gd
