#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dcs3gd/errors.hpp"
#include "dcs3gd/vecmath.hpp"

namespace dcs3gd {

class InvariantViolation : public Error {
public:
    using Error::Error;
};

// An in-flight non-blocking sum-reduction. The result is the sum of the
// contributions in worker-index order and becomes observable at
// completion_time = max(ready times) + t_allreduce.
class ReduceHandle {
public:
    ReduceHandle(std::vector<ParamVector> contributions, std::span<const double> ready_times, double t_allreduce)
        : contributions_(std::move(contributions)) {
        if (contributions_.empty()) throw InvalidArgument("all-reduce needs at least one contribution");
        if (ready_times.size() != contributions_.size())
            throw LengthMismatch(contributions_.size(), ready_times.size());
        start_time_ = *std::max_element(ready_times.begin(), ready_times.end());
        completion_time_ = start_time_ + t_allreduce;
        result_ = ordered_sum(contributions_);
    }

    double start_time() const noexcept { return start_time_; }
    double completion_time() const noexcept { return completion_time_; }
    std::span<const ParamVector> contributions() const noexcept { return contributions_; }

    /// Blocks (in simulated time) until completion; returns the summed result
    /// and the time at which a caller arriving at `now` is released.
    std::pair<const ParamVector&, double> wait(double now) const {
        return {result_, std::max(now, completion_time_)};
    }

private:
    std::vector<ParamVector> contributions_;
    double start_time_ = 0.0;
    double completion_time_ = 0.0;
    ParamVector result_;
};

// The collective channel shared by the simulated cluster. Only one reduction
// may be outstanding at a time, which bounds staleness at one update.
class NonBlockingAllReduce {
public:
    explicit NonBlockingAllReduce(double t_allreduce) : t_allreduce_(t_allreduce) {}

    const ReduceHandle& start(std::vector<ParamVector> contributions, std::span<const double> ready_times) {
        if (in_flight_) throw InvariantViolation("all-reduce started while another is still in flight");
        in_flight_.emplace(std::move(contributions), ready_times, t_allreduce_);
        return *in_flight_;
    }

    bool in_flight() const noexcept { return in_flight_.has_value(); }
    const ReduceHandle& handle() const {
        if (!in_flight_) throw InvariantViolation("no all-reduce in flight");
        return *in_flight_;
    }

    /// Retires the outstanding reduction, returning its result.
    ParamVector complete() {
        if (!in_flight_) throw InvariantViolation("complete() without an all-reduce in flight");
        ParamVector out = in_flight_->wait(0.0).first;
        in_flight_.reset();
        return out;
    }

private:
    double t_allreduce_;
    std::optional<ReduceHandle> in_flight_;
};

}  // namespace dcs3gd
