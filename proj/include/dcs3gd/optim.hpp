#pragma once

// Optimizer kernels: momentum update, pseudo-Hessian delay compensation with
// a dynamically normalised variance-control factor, piecewise-linear
// hyper-parameter schedules, masked weight decay and plateau detection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dcs3gd/errors.hpp"
#include "dcs3gd/vecmath.hpp"

namespace dcs3gd {

struct MomentumState {
    ParamVector velocity;
    double eta = 0.0;
    double mu = 0.0;
};

/// velocity <- mu * velocity + g; returns -eta * velocity.
inline ParamVector momentum_update(MomentumState& state, const ParamVector& gradient) {
    detail::require_same_length(state.velocity, gradient);
    gradient.require_finite("momentum_update gradient");
    ParamVector next = ParamVector::zeros_like(state.velocity);
    ParamVector step = ParamVector::zeros_like(state.velocity);
    for (std::size_t k = 0; k < gradient.size(); ++k) {
        next[k] = state.mu * state.velocity[k] + gradient[k];
        step[k] = -state.eta * next[k];
    }
    next.require_finite("momentum_update velocity");
    step.require_finite("momentum_update step");
    state.velocity = std::move(next);
    return step;
}

struct CompensationConfig {
    double lambda0 = 0.2;
};

/// g + lambda * (g ⊙ g ⊙ D): the pseudo-Hessian first-order correction.
inline ParamVector compensate(const ParamVector& gradient, const ParamVector& distance, double lambda) {
    detail::require_same_length(gradient, distance);
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("compensate: lambda must be finite and >= 0");
    ParamVector out = ParamVector::zeros_like(gradient);
    for (std::size_t k = 0; k < gradient.size(); ++k)
        out[k] = gradient[k] + lambda * (gradient[k] * gradient[k] * distance[k]);
    out.require_finite("compensate");
    return out;
}

/// g + lambda * curvature_product, where curvature_product is a supplied H·D
/// (used with an exact Hessian to check the correction in isolation).
inline ParamVector compensate_with_curvature(const ParamVector& gradient, const ParamVector& curvature_product,
                                             double lambda) {
    detail::require_same_length(gradient, curvature_product);
    return axpy(lambda, curvature_product, gradient);
}

/// lambda0 * ||g|| / ||g ⊙ g ⊙ D||, or 0 when the denominator vanishes
/// (the correction term is then zero for any lambda).
inline double dynamic_lambda(const CompensationConfig& config, const ParamVector& gradient,
                             const ParamVector& distance) {
    detail::require_same_length(gradient, distance);
    ParamVector curvature = ParamVector::zeros_like(gradient);
    for (std::size_t k = 0; k < gradient.size(); ++k) curvature[k] = gradient[k] * gradient[k] * distance[k];
    if (!curvature.all_finite()) return 0.0;
    const double denominator = l2_norm(curvature);
    if (!(denominator >= 1e-300)) return 0.0;
    const double lambda = config.lambda0 * l2_norm(gradient) / denominator;
    return std::isfinite(lambda) ? lambda : 0.0;
}

/// Linear warm-up start -> peak over [0, warmup_end], then linear change
/// peak -> end over [warmup_end, total]. Indexed by iteration.
struct Schedule {
    std::size_t total_iterations = 0;
    std::size_t warmup_end_iteration = 0;
    double peak_value = 0.0;
    double start_value = 0.0;
    double end_value = 0.0;

    void validate() const {
        if (warmup_end_iteration > total_iterations)
            throw InvalidArgument("schedule: warmup_end_iteration exceeds total_iterations");
        for (double v : {peak_value, start_value, end_value})
            if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("schedule: values must be finite and >= 0");
    }

    friend bool operator==(const Schedule&, const Schedule&) = default;
};

inline double schedule_value(const Schedule& s, std::size_t iteration) {
    s.validate();
    if (iteration > s.total_iterations)
        throw InvalidArgument("schedule_value: iteration " + std::to_string(iteration) + " beyond total " +
                              std::to_string(s.total_iterations));
    if (iteration <= s.warmup_end_iteration) {
        if (s.warmup_end_iteration == 0) return s.peak_value;
        const double f = static_cast<double>(iteration) / static_cast<double>(s.warmup_end_iteration);
        return std::lerp(s.start_value, s.peak_value, f);
    }
    const double f = static_cast<double>(iteration - s.warmup_end_iteration) /
                     static_cast<double>(s.total_iterations - s.warmup_end_iteration);
    return std::lerp(s.peak_value, s.end_value, f);
}

/// Ends the warm-up at `iteration`, holding the value reached there as the new
/// peak; the decrease then spans every remaining iteration.
inline Schedule stop_warmup_at(const Schedule& s, std::size_t iteration) {
    if (iteration > s.warmup_end_iteration) throw InvalidArgument("stop_warmup_at: iteration is past the warm-up");
    Schedule out = s;
    out.peak_value = schedule_value(s, iteration);
    out.warmup_end_iteration = iteration;
    return out;
}

/// Same shape, every knot multiplied so the peak becomes `peak`.
inline Schedule scaled_to_peak(const Schedule& s, double peak) {
    if (!(s.peak_value > 0.0)) throw InvalidArgument("scaled_to_peak: source peak must be > 0");
    const double factor = peak / s.peak_value;
    Schedule out = s;
    out.peak_value = peak;
    out.start_value = s.start_value * factor;
    out.end_value = s.end_value * factor;
    out.validate();
    return out;
}

/// Linear scaling rule: N * eta_single_node.
inline double theoretical_lr(std::size_t n_workers, double eta_single_node) {
    if (n_workers < 1) throw InvalidArgument("theoretical_lr: n_workers must be >= 1");
    if (!(eta_single_node > 0.0)) throw InvalidArgument("theoretical_lr: eta_single_node must be > 0");
    return static_cast<double>(n_workers) * eta_single_node;
}

/// g + decay * w for elements whose group is not excluded.
inline ParamVector apply_weight_decay(const ParamVector& gradient, const ParamVector& weights, double decay_value,
                                      const std::set<GroupId>& excluded_groups) {
    detail::require_same_length(gradient, weights);
    if (!(decay_value >= 0.0)) throw InvalidArgument("apply_weight_decay: decay must be >= 0");
    ParamVector out = gradient;
    if (decay_value == 0.0) return out;
    for (std::size_t k = 0; k < gradient.size(); ++k)
        if (!excluded_groups.contains(gradient.group(k))) out[k] = gradient[k] + decay_value * weights[k];
    out.require_finite("apply_weight_decay");
    return out;
}

inline constexpr double kDefaultPlateauThreshold = 0.005;

/// True when the mean loss of the last `window_epochs` epochs is not lower
/// than the mean of the preceding window by more than `threshold` (relative).
/// The preceding window is truncated at epoch 0; with no preceding epochs
/// there is nothing to compare and the answer is false.
inline bool detect_plateau(std::span<const double> loss_history, std::size_t window_epochs, std::size_t current_epoch,
                           double threshold = kDefaultPlateauThreshold) {
    if (window_epochs == 0) throw InvalidArgument("detect_plateau: window must be >= 1");
    if (current_epoch < window_epochs) return false;
    if (loss_history.size() < current_epoch)
        throw InvalidArgument("detect_plateau: history holds " + std::to_string(loss_history.size()) +
                              " epochs but current epoch is " + std::to_string(current_epoch));
    const std::size_t last_begin = current_epoch - window_epochs;
    if (last_begin == 0) return false;
    const std::size_t prev_begin = last_begin > window_epochs ? last_begin - window_epochs : 0;
    auto mean = [&](std::size_t b, std::size_t e) {
        double acc = 0.0;
        for (std::size_t i = b; i < e; ++i) acc += loss_history[i];
        return acc / static_cast<double>(e - b);
    };
    const double last = mean(last_begin, current_epoch);
    const double previous = mean(prev_begin, last_begin);
    return !(previous - last > threshold * std::abs(previous));
}

struct PlateauOptions {
    bool enabled = true;
    std::size_t window_epochs = 5;
    double threshold = kDefaultPlateauThreshold;
};

// Learning-rate and weight-decay trajectories of one run. Tracks per-epoch
// mean training loss and, while still warming up, checks for a plateau at
// the end of every window; on a plateau both schedules stop their warm-up at
// the next iteration.
class HyperSchedule {
public:
    HyperSchedule(Schedule learning_rate, Schedule weight_decay, PlateauOptions plateau,
                  std::size_t iterations_per_epoch)
        : lr_(learning_rate), wd_(weight_decay), plateau_(plateau), iterations_per_epoch_(iterations_per_epoch) {
        lr_.validate();
        wd_.validate();
        if (iterations_per_epoch_ == 0) throw InvalidArgument("iterations_per_epoch must be >= 1");
    }

    double learning_rate(std::size_t iteration) const { return schedule_value(lr_, clamp(iteration)); }
    double weight_decay(std::size_t iteration) const { return schedule_value(wd_, clamp(iteration)); }

    const Schedule& learning_rate_schedule() const noexcept { return lr_; }
    const Schedule& weight_decay_schedule() const noexcept { return wd_; }
    std::optional<std::size_t> warmup_stopped_at() const noexcept { return stopped_at_; }
    const std::vector<double>& epoch_losses() const noexcept { return epoch_losses_; }

    void record_iteration(std::size_t iteration, double train_loss) {
        epoch_accumulator_ += train_loss;
        ++epoch_count_;
        if (epoch_count_ < iterations_per_epoch_) return;
        epoch_losses_.push_back(epoch_accumulator_ / static_cast<double>(epoch_count_));
        epoch_accumulator_ = 0.0;
        epoch_count_ = 0;
        const std::size_t completed = epoch_losses_.size();
        const std::size_t next = iteration + 1;
        if (!plateau_.enabled || stopped_at_ || completed % plateau_.window_epochs != 0) return;
        if (next >= lr_.warmup_end_iteration) return;
        if (detect_plateau(epoch_losses_, plateau_.window_epochs, completed, plateau_.threshold)) {
            lr_ = stop_warmup_at(lr_, next);
            wd_ = stop_warmup_at(wd_, next);
            stopped_at_ = next;
        }
    }

private:
    std::size_t clamp(std::size_t iteration) const { return std::min(iteration, lr_.total_iterations); }

    Schedule lr_;
    Schedule wd_;
    PlateauOptions plateau_;
    std::size_t iterations_per_epoch_;
    std::vector<double> epoch_losses_;
    double epoch_accumulator_ = 0.0;
    std::size_t epoch_count_ = 0;
    std::optional<std::size_t> stopped_at_;
};

}  // namespace dcs3gd
