#pragma once

// Flat dense vectors of model parameters, gradients and updates.
//
// Every element carries a small parameter-group tag so that group-specific
// treatment (weight decay exclusion) stays a pure element-wise operation.
// All reductions accumulate left to right in index order; results are
// bit-reproducible for identical inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcs3gd/errors.hpp"

namespace dcs3gd {

using GroupId = std::uint8_t;

class ParamVector {
public:
    ParamVector() = default;

    explicit ParamVector(std::size_t size, double fill = 0.0, GroupId group = 0)
        : values_(size, fill), groups_(size, group) {}

    explicit ParamVector(std::vector<double> values)
        : values_(std::move(values)), groups_(values_.size(), 0) {}

    ParamVector(std::initializer_list<double> values)
        : values_(values), groups_(values_.size(), 0) {}

    ParamVector(std::vector<double> values, std::vector<GroupId> groups)
        : values_(std::move(values)), groups_(std::move(groups)) {
        if (groups_.size() != values_.size()) throw LengthMismatch(values_.size(), groups_.size());
    }

    /// Zero vector sharing the group layout of `like`.
    static ParamVector zeros_like(const ParamVector& like) {
        ParamVector out;
        out.values_.assign(like.size(), 0.0);
        out.groups_ = like.groups_;
        return out;
    }

    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double operator[](std::size_t k) const noexcept { return values_[k]; }
    double& operator[](std::size_t k) noexcept { return values_[k]; }

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    std::span<const GroupId> groups() const noexcept { return groups_; }
    GroupId group(std::size_t k) const noexcept { return groups_[k]; }

    bool all_finite() const noexcept {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // Throws NonFiniteError naming the first offending element.
    void require_finite(const char* what) const {
        for (std::size_t k = 0; k < values_.size(); ++k)
            if (!std::isfinite(values_[k]))
                throw NonFiniteError(std::string(what) + ": non-finite element at index " +
                                     std::to_string(k));
    }

    /// Bitwise equality of values (group tags ignored).
    friend bool operator==(const ParamVector& a, const ParamVector& b) noexcept {
        return a.values_ == b.values_;
    }

private:
    std::vector<double> values_;
    std::vector<GroupId> groups_;
};

namespace detail {
inline void require_same_length(const ParamVector& a, const ParamVector& b) {
    if (a.size() != b.size()) throw LengthMismatch(a.size(), b.size());
}
}  // namespace detail

/// Component-wise product; group tags are copied from `a`.
inline ParamVector hadamard(const ParamVector& a, const ParamVector& b) {
    detail::require_same_length(a, b);
    ParamVector out = ParamVector::zeros_like(a);
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] * b[k];
    out.require_finite("hadamard");
    return out;
}

/// alpha * x + y, group tags from `y`.
inline ParamVector axpy(double alpha, const ParamVector& x, const ParamVector& y) {
    detail::require_same_length(x, y);
    ParamVector out = ParamVector::zeros_like(y);
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = alpha * x[k] + y[k];
    out.require_finite("axpy");
    return out;
}

inline ParamVector add(const ParamVector& a, const ParamVector& b) {
    detail::require_same_length(a, b);
    ParamVector out = ParamVector::zeros_like(a);
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] + b[k];
    out.require_finite("add");
    return out;
}

inline ParamVector subtract(const ParamVector& a, const ParamVector& b) {
    detail::require_same_length(a, b);
    ParamVector out = ParamVector::zeros_like(a);
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] - b[k];
    out.require_finite("subtract");
    return out;
}

inline ParamVector scale(double alpha, const ParamVector& x) {
    ParamVector out = ParamVector::zeros_like(x);
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = alpha * x[k];
    out.require_finite("scale");
    return out;
}

/// Element-wise division by a scalar (x[k] / divisor, not x[k] * (1/divisor)).
inline ParamVector divide(const ParamVector& x, double divisor) {
    ParamVector out = ParamVector::zeros_like(x);
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] / divisor;
    out.require_finite("divide");
    return out;
}

inline double dot(const ParamVector& a, const ParamVector& b) {
    detail::require_same_length(a, b);
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
    if (!std::isfinite(acc)) throw NonFiniteError("dot: non-finite result");
    return acc;
}

inline double l2_norm(const ParamVector& x) {
    x.require_finite("l2_norm input");
    double acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) acc += x[k] * x[k];
    if (acc > 0.0 && std::isfinite(acc) && acc >= std::numeric_limits<double>::min())
        return std::sqrt(acc);
    // Squares under- or overflowed: redo scaled by the largest magnitude.
    double m = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) m = std::max(m, std::abs(x[k]));
    if (m == 0.0) return 0.0;
    acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) acc += (x[k] / m) * (x[k] / m);
    const double out = m * std::sqrt(acc);
    if (!std::isfinite(out)) throw NonFiniteError("l2_norm: overflow");
    return out;
}

inline double max_abs(const ParamVector& x) noexcept {
    double m = 0.0;
    for (double v : x.values()) m = std::max(m, std::abs(v));
    return m;
}

/// Sum of vectors in the given order, starting from the first element.
inline ParamVector ordered_sum(std::span<const ParamVector> parts) {
    if (parts.empty()) throw InvalidArgument("ordered_sum: no inputs");
    ParamVector out = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) {
        detail::require_same_length(out, parts[i]);
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += parts[i][k];
    }
    out.require_finite("ordered_sum");
    return out;
}

}  // namespace dcs3gd
