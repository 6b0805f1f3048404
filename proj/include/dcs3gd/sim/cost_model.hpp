#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

#include "dcs3gd/errors.hpp"
#include "dcs3gd/random.hpp"

namespace dcs3gd {

enum class Algorithm { dc_s3gd, ssgd, dc_asgd };

inline const char* to_string(Algorithm a) noexcept {
    switch (a) {
        case Algorithm::dc_s3gd: return "dc_s3gd";
        case Algorithm::ssgd: return "ssgd";
        case Algorithm::dc_asgd: return "dc_asgd";
    }
    return "?";
}

inline Algorithm parse_algorithm(std::string_view text) {
    if (text == "dc_s3gd" || text == "DC_S3GD") return Algorithm::dc_s3gd;
    if (text == "ssgd" || text == "SSGD") return Algorithm::ssgd;
    if (text == "dc_asgd" || text == "DC_ASGD") return Algorithm::dc_asgd;
    throw InvalidArgument("unknown algorithm '" + std::string(text) + "' (expected dc_s3gd, ssgd or dc_asgd)");
}

// Abstract simulated time units. Jitter multiplies t_compute by a factor in
// [1, 1 + jitter) drawn once per (worker, iteration).
struct CostModel {
    double t_compute = 1.0;
    double t_allreduce = 1.0;
    double t_ps_roundtrip = 1.0;
    double jitter = 0.0;

    void validate() const {
        for (double t : {t_compute, t_allreduce, t_ps_roundtrip, jitter})
            if (!(t >= 0.0) || t == std::numeric_limits<double>::infinity())
                throw InvalidArgument("cost model times must be finite and >= 0");
    }

    double compute_time(std::uint64_t seed, std::size_t worker, std::size_t iteration) const {
        if (jitter == 0.0) return t_compute;
        Rng rng(mix_seed(seed, worker, iteration));
        return t_compute * (1.0 + jitter * rng.uniform());
    }
};

struct ClusterConfig {
    std::size_t n_workers = 1;
    Algorithm algorithm = Algorithm::dc_s3gd;
    std::size_t local_batch_size = 32;
    CostModel cost_model;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_workers < 1) throw InvalidArgument("n_workers must be >= 1");
        if (local_batch_size < 1) throw InvalidArgument("local_batch_size must be >= 1");
        cost_model.validate();
    }
};

/// Per-iteration simulated time without jitter:
///   SSGD     t_C + t_AR   (blocking all-reduce after compute)
///   DC-S3GD  max(t_C, t_AR)  (all-reduce overlaps the next compute)
///   DC-ASGD  t_C + t_W2PS (push gradient, pull weights)
inline double simulated_iteration_time(const CostModel& cost, Algorithm algorithm) {
    switch (algorithm) {
        case Algorithm::ssgd: return cost.t_compute + cost.t_allreduce;
        case Algorithm::dc_s3gd: return std::max(cost.t_compute, cost.t_allreduce);
        case Algorithm::dc_asgd: return cost.t_compute + cost.t_ps_roundtrip;
    }
    return 0.0;
}

}  // namespace dcs3gd
