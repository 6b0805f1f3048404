#pragma once

// Small differentiable objectives: a convex quadratic, multinomial logistic
// regression and a one-hidden-layer tanh MLP, all with mean cross-entropy
// (or quadratic) batch losses and analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcs3gd/errors.hpp"
#include "dcs3gd/random.hpp"
#include "dcs3gd/vecmath.hpp"

namespace dcs3gd {

enum class ModelKind { quadratic, logistic_regression, mlp };

inline constexpr GroupId kWeightGroup = 0;
inline constexpr GroupId kBiasGroup = 1;

inline const char* to_string(ModelKind kind) noexcept {
    switch (kind) {
        case ModelKind::quadratic: return "quadratic";
        case ModelKind::logistic_regression: return "logistic_regression";
        case ModelKind::mlp: return "mlp";
    }
    return "?";
}

struct Sample {
    std::vector<double> features;
    int label = 0;        // classification kinds
    double target = 0.0;  // regression kinds
};

using Dataset = std::vector<Sample>;

/// H = diag(diagonal) + sum_j u_j u_j^T, centred at `center`.
struct QuadraticSpec {
    std::vector<double> diagonal;
    std::vector<std::vector<double>> low_rank;
    std::vector<double> center;
};

struct BatchGradient {
    ParamVector gradient;
    double loss = 0.0;
    double error_rate = 0.0;
};

struct Evaluation {
    double loss = 0.0;
    double error_rate = 0.0;
};

class Model {
public:
    /// Per-sample loss 0.5 (w - c - x)^T H (w - c - x), where x is the sample's
    /// feature vector (an optional per-sample shift; empty means zero).
    static Model quadratic(QuadraticSpec spec) {
        const std::size_t n = spec.diagonal.size();
        if (n == 0) throw InvalidArgument("quadratic: empty diagonal");
        if (spec.center.empty()) spec.center.assign(n, 0.0);
        if (spec.center.size() != n) throw LengthMismatch(n, spec.center.size());
        for (double d : spec.diagonal)
            if (!(d >= 0.0) || !std::isfinite(d))
                throw InvalidArgument("quadratic: diagonal entries must be finite and >= 0");
        for (const auto& u : spec.low_rank)
            if (u.size() != n) throw LengthMismatch(n, u.size());
        Model m;
        m.kind_ = ModelKind::quadratic;
        m.n_features_ = n;
        m.dimension_ = n;
        m.quadratic_ = std::move(spec);
        return m;
    }

    static Model identity_quadratic(std::vector<double> center) {
        const std::size_t n = center.size();
        return quadratic({std::vector<double>(n, 1.0), {}, std::move(center)});
    }

    static Model logistic_regression(std::size_t n_features, std::size_t n_classes) {
        if (n_features == 0 || n_classes < 2)
            throw InvalidArgument("logistic_regression: need features >= 1 and classes >= 2");
        Model m;
        m.kind_ = ModelKind::logistic_regression;
        m.n_features_ = n_features;
        m.n_classes_ = n_classes;
        m.dimension_ = n_classes * n_features + n_classes;
        return m;
    }

    static Model mlp(std::size_t n_features, std::size_t hidden, std::size_t n_classes) {
        if (n_features == 0 || hidden == 0 || n_classes < 2)
            throw InvalidArgument("mlp: layer sizes must be positive and classes >= 2");
        Model m;
        m.kind_ = ModelKind::mlp;
        m.n_features_ = n_features;
        m.hidden_ = hidden;
        m.n_classes_ = n_classes;
        m.dimension_ = hidden * n_features + hidden + n_classes * hidden + n_classes;
        return m;
    }

    ModelKind kind() const noexcept { return kind_; }
    std::size_t dimension() const noexcept { return dimension_; }
    std::size_t n_features() const noexcept { return n_features_; }
    std::size_t n_classes() const noexcept { return n_classes_; }
    std::size_t hidden() const noexcept { return hidden_; }
    const QuadraticSpec& quadratic_spec() const noexcept { return quadratic_; }
    bool is_classifier() const noexcept { return kind_ != ModelKind::quadratic; }

    // Layout: [W (rows x cols) | b] per layer, weights tagged kWeightGroup and
    // biases kBiasGroup. The quadratic has a single group.
    std::vector<GroupId> group_layout() const {
        std::vector<GroupId> groups;
        groups.reserve(dimension_);
        auto layer = [&](std::size_t rows, std::size_t cols) {
            groups.insert(groups.end(), rows * cols, kWeightGroup);
            groups.insert(groups.end(), rows, kBiasGroup);
        };
        switch (kind_) {
            case ModelKind::quadratic: groups.assign(dimension_, kWeightGroup); break;
            case ModelKind::logistic_regression: layer(n_classes_, n_features_); break;
            case ModelKind::mlp:
                layer(hidden_, n_features_);
                layer(n_classes_, hidden_);
                break;
        }
        return groups;
    }

    ParamVector zeros() const { return ParamVector(std::vector<double>(dimension_, 0.0), group_layout()); }

    /// Glorot-uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)),
    /// zero biases. The quadratic starts at the origin.
    ParamVector initial_weights(std::uint64_t seed) const {
        ParamVector w = zeros();
        if (kind_ == ModelKind::quadratic) return w;
        Rng rng(seed);
        std::size_t offset = 0;
        auto layer = [&](std::size_t rows, std::size_t cols) {
            const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
            for (std::size_t k = 0; k < rows * cols; ++k) w[offset + k] = rng.uniform(-a, a);
            offset += rows * cols + rows;
        };
        if (kind_ == ModelKind::logistic_regression) {
            layer(n_classes_, n_features_);
        } else {
            layer(hidden_, n_features_);
            layer(n_classes_, hidden_);
        }
        return w;
    }

    void check_sample(const Sample& s) const {
        if (kind_ == ModelKind::quadratic) {
            if (!s.features.empty() && s.features.size() != n_features_)
                throw LengthMismatch(n_features_, s.features.size());
            return;
        }
        if (s.features.size() != n_features_) throw LengthMismatch(n_features_, s.features.size());
        if (s.label < 0 || static_cast<std::size_t>(s.label) >= n_classes_)
            throw InvalidArgument("sample label " + std::to_string(s.label) + " outside [0, " +
                                  std::to_string(n_classes_) + ")");
    }

private:
    ModelKind kind_ = ModelKind::quadratic;
    std::size_t dimension_ = 0;
    std::size_t n_features_ = 0;
    std::size_t n_classes_ = 0;
    std::size_t hidden_ = 0;
    QuadraticSpec quadratic_;
};

namespace detail {

// Dense row-major matrix-vector helpers over spans into the parameter vector.
inline void affine(std::span<const double> weights, std::span<const double> bias,
                   std::span<const double> x, std::span<double> out) {
    const std::size_t cols = x.size();
    for (std::size_t r = 0; r < out.size(); ++r) {
        double acc = bias[r];
        for (std::size_t c = 0; c < cols; ++c) acc += weights[r * cols + c] * x[c];
        out[r] = acc;
    }
}

// Softmax in place with max subtraction; returns log-sum-exp of the logits.
inline double softmax_inplace(std::span<double> z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (double& v : z) v /= sum;
    return zmax + std::log(sum);
}

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> z) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < z.size(); ++k)
        if (z[k] > z[best]) best = k;
    return best;
}

struct SampleResult {
    double loss = 0.0;
    bool misclassified = false;
};

// Computes the per-sample loss and, if `grad` is non-empty, accumulates the
// per-sample gradient into it.
inline SampleResult sample_loss(const Model& model, std::span<const double> w, const Sample& s,
                                std::span<double> grad) {
    const bool want_grad = !grad.empty();
    switch (model.kind()) {
        case ModelKind::quadratic: {
            const auto& q = model.quadratic_spec();
            const std::size_t n = model.dimension();
            std::vector<double> r(n);
            for (std::size_t k = 0; k < n; ++k)
                r[k] = w[k] - q.center[k] - (s.features.empty() ? 0.0 : s.features[k]);
            std::vector<double> hr(n);
            for (std::size_t k = 0; k < n; ++k) hr[k] = q.diagonal[k] * r[k];
            for (const auto& u : q.low_rank) {
                double ur = 0.0;
                for (std::size_t k = 0; k < n; ++k) ur += u[k] * r[k];
                for (std::size_t k = 0; k < n; ++k) hr[k] += u[k] * ur;
            }
            double loss = 0.0;
            for (std::size_t k = 0; k < n; ++k) loss += r[k] * hr[k];
            if (want_grad)
                for (std::size_t k = 0; k < n; ++k) grad[k] += hr[k];
            return {0.5 * loss, false};
        }
        case ModelKind::logistic_regression: {
            const std::size_t f = model.n_features(), c = model.n_classes();
            const auto weights = w.subspan(0, c * f);
            const auto bias = w.subspan(c * f, c);
            std::vector<double> z(c);
            affine(weights, bias, s.features, z);
            const std::size_t predicted = argmax(z);
            const auto y = static_cast<std::size_t>(s.label);
            const double zy = z[y];
            const double loss = softmax_inplace(z) - zy;
            if (want_grad) {
                for (std::size_t r = 0; r < c; ++r) {
                    const double dz = z[r] - (r == y ? 1.0 : 0.0);
                    for (std::size_t col = 0; col < f; ++col) grad[r * f + col] += dz * s.features[col];
                    grad[c * f + r] += dz;
                }
            }
            return {loss, predicted != y};
        }
        case ModelKind::mlp: {
            const std::size_t f = model.n_features(), h = model.hidden(), c = model.n_classes();
            const std::size_t w1 = 0, b1 = h * f, w2 = b1 + h, b2 = w2 + c * h;
            std::vector<double> act(h);
            affine(w.subspan(w1, h * f), w.subspan(b1, h), s.features, act);
            for (double& a : act) a = std::tanh(a);
            std::vector<double> z(c);
            affine(w.subspan(w2, c * h), w.subspan(b2, c), act, z);
            const std::size_t predicted = argmax(z);
            const auto y = static_cast<std::size_t>(s.label);
            const double zy = z[y];
            const double loss = softmax_inplace(z) - zy;
            if (want_grad) {
                std::vector<double> dact(h, 0.0);
                for (std::size_t r = 0; r < c; ++r) {
                    const double dz = z[r] - (r == y ? 1.0 : 0.0);
                    for (std::size_t j = 0; j < h; ++j) {
                        grad[w2 + r * h + j] += dz * act[j];
                        dact[j] += w[w2 + r * h + j] * dz;
                    }
                    grad[b2 + r] += dz;
                }
                for (std::size_t j = 0; j < h; ++j) {
                    const double da = dact[j] * (1.0 - act[j] * act[j]);
                    for (std::size_t col = 0; col < f; ++col) grad[w1 + j * f + col] += da * s.features[col];
                    grad[b1 + j] += da;
                }
            }
            return {loss, predicted != y};
        }
    }
    return {};
}

inline void check_batch(const Model& model, const ParamVector& weights, std::span<const Sample> batch) {
    if (batch.empty()) throw InvalidArgument("empty batch");
    if (weights.size() != model.dimension()) throw LengthMismatch(model.dimension(), weights.size());
    for (const auto& s : batch) model.check_sample(s);
}

}  // namespace detail

/// Mean per-sample gradient, loss and top-1 error over the batch.
inline BatchGradient batch_gradient(const Model& model, const ParamVector& weights,
                                    std::span<const Sample> batch) {
    detail::check_batch(model, weights, batch);
    BatchGradient out;
    out.gradient = ParamVector::zeros_like(weights);
    double loss = 0.0;
    std::size_t wrong = 0;
    for (const auto& s : batch) {
        const auto r = detail::sample_loss(model, weights.values(), s, out.gradient.values());
        loss += r.loss;
        wrong += r.misclassified ? 1 : 0;
    }
    const auto n = static_cast<double>(batch.size());
    for (double& g : out.gradient.values()) g /= n;
    out.loss = loss / n;
    out.error_rate = model.is_classifier() ? static_cast<double>(wrong) / n : 0.0;
    if (!std::isfinite(out.loss)) throw NonFiniteError("batch_gradient: non-finite loss");
    out.gradient.require_finite("batch_gradient");
    return out;
}

inline Evaluation evaluate(const Model& model, const ParamVector& weights, std::span<const Sample> batch) {
    detail::check_batch(model, weights, batch);
    double loss = 0.0;
    std::size_t wrong = 0;
    for (const auto& s : batch) {
        const auto r = detail::sample_loss(model, weights.values(), s, {});
        loss += r.loss;
        wrong += r.misclassified ? 1 : 0;
    }
    const auto n = static_cast<double>(batch.size());
    Evaluation e{loss / n, model.is_classifier() ? static_cast<double>(wrong) / n : 0.0};
    if (!std::isfinite(e.loss)) throw NonFiniteError("evaluate: non-finite loss");
    return e;
}

// Raised when a finite-difference step is too small to perturb a weight.
class StepUnderflow : public Error {
public:
    using Error::Error;
};

/// Central-difference gradient of the mean batch loss.
inline ParamVector finite_difference_gradient(const Model& model, const ParamVector& weights,
                                              std::span<const Sample> batch, double step) {
    if (!(step > 0.0) || !std::isfinite(step)) throw InvalidArgument("finite difference step must be > 0");
    detail::check_batch(model, weights, batch);
    ParamVector out = ParamVector::zeros_like(weights);
    ParamVector probe = weights;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double plus = weights[k] + step;
        const double minus = weights[k] - step;
        if (plus == weights[k] || minus == weights[k])
            throw StepUnderflow("finite difference step " + std::to_string(step) +
                                " does not perturb weight " + std::to_string(k));
        probe[k] = plus;
        const double lp = evaluate(model, probe, batch).loss;
        probe[k] = minus;
        const double lm = evaluate(model, probe, batch).loss;
        probe[k] = weights[k];
        out[k] = (lp - lm) / (plus - minus);
    }
    out.require_finite("finite_difference_gradient");
    return out;
}

/// Exact Hessian-vector product of the mean batch loss. Available for the
/// quadratic and logistic-regression kinds.
inline ParamVector exact_hessian_vector(const Model& model, const ParamVector& weights,
                                        std::span<const Sample> batch, const ParamVector& v) {
    if (v.size() != model.dimension()) throw LengthMismatch(model.dimension(), v.size());
    switch (model.kind()) {
        case ModelKind::quadratic: {
            if (weights.size() != model.dimension()) throw LengthMismatch(model.dimension(), weights.size());
            const auto& q = model.quadratic_spec();
            ParamVector out = ParamVector::zeros_like(weights);
            for (std::size_t k = 0; k < v.size(); ++k) out[k] = q.diagonal[k] * v[k];
            for (const auto& u : q.low_rank) {
                double uv = 0.0;
                for (std::size_t k = 0; k < v.size(); ++k) uv += u[k] * v[k];
                for (std::size_t k = 0; k < v.size(); ++k) out[k] += u[k] * uv;
            }
            out.require_finite("exact_hessian_vector");
            return out;
        }
        case ModelKind::logistic_regression: {
            detail::check_batch(model, weights, batch);
            const std::size_t f = model.n_features(), c = model.n_classes();
            ParamVector out = ParamVector::zeros_like(weights);
            const auto w = weights.values();
            std::vector<double> p(c), dz(c), dp(c);
            for (const auto& s : batch) {
                detail::affine(w.subspan(0, c * f), w.subspan(c * f, c), s.features, p);
                detail::softmax_inplace(p);
                detail::affine(v.values().subspan(0, c * f), v.values().subspan(c * f, c), s.features, dz);
                // dp = (diag(p) - p p^T) dz
                double pdz = 0.0;
                for (std::size_t r = 0; r < c; ++r) pdz += p[r] * dz[r];
                for (std::size_t r = 0; r < c; ++r) dp[r] = p[r] * (dz[r] - pdz);
                for (std::size_t r = 0; r < c; ++r) {
                    for (std::size_t col = 0; col < f; ++col) out[r * f + col] += dp[r] * s.features[col];
                    out[c * f + r] += dp[r];
                }
            }
            const auto n = static_cast<double>(batch.size());
            for (double& x : out.values()) x /= n;
            out.require_finite("exact_hessian_vector");
            return out;
        }
        case ModelKind::mlp: break;
    }
    throw UnsupportedModel(std::string("exact_hessian_vector: no analytic Hessian for ") + to_string(model.kind()));
}

/// Controls the synthetic class clusters: centroids are orthonormal
/// directions scaled by `separation`, noise is isotropic Gaussian, and
/// samples closer than margin/2 to any pairwise bisecting hyperplane are
/// redrawn, so the classes are linearly separable with at least `margin`.
struct SyntheticOptions {
    double separation = 4.0;
    double margin = 1.0;
    double noise = 1.0;
};

/// Deterministic synthetic dataset. Classifier kinds get balanced labels
/// (round-robin, then shuffled); the quadratic kind gets Gaussian shift
/// vectors with target 0.
inline Dataset make_synthetic_dataset(ModelKind kind, std::size_t n_samples, std::size_t dimension,
                                      std::size_t n_classes, std::uint64_t seed,
                                      const SyntheticOptions& options = {}) {
    if (n_samples == 0 || dimension == 0) throw InvalidArgument("make_synthetic_dataset: counts must be positive");
    Rng rng(seed);
    Dataset data(n_samples);
    if (kind == ModelKind::quadratic) {
        for (auto& s : data) {
            s.features.resize(dimension);
            for (double& x : s.features) x = options.noise * rng.normal();
        }
        return data;
    }
    if (n_classes < 2) throw InvalidArgument("make_synthetic_dataset: need at least 2 classes");
    if (n_classes > dimension)
        throw InvalidArgument("make_synthetic_dataset: classes must not exceed dimension");
    if (!(options.margin >= 0.0) || !(options.separation > options.margin))
        throw InvalidArgument("make_synthetic_dataset: need 0 <= margin < separation");

    // Orthonormal centroid directions by Gram-Schmidt on Gaussian draws.
    std::vector<std::vector<double>> centroids(n_classes, std::vector<double>(dimension));
    for (std::size_t c = 0; c < n_classes; ++c) {
        auto& u = centroids[c];
        double norm = 0.0;
        do {
            for (double& x : u) x = rng.normal();
            for (std::size_t p = 0; p < c; ++p) {
                double d = 0.0;
                for (std::size_t k = 0; k < dimension; ++k) d += u[k] * centroids[p][k];
                for (std::size_t k = 0; k < dimension; ++k) u[k] -= d * centroids[p][k] / (options.separation * options.separation);
            }
            norm = 0.0;
            for (double x : u) norm += x * x;
            norm = std::sqrt(norm);
        } while (norm < 1e-6);
        for (double& x : u) x *= options.separation / norm;
    }

    std::vector<int> labels(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) labels[i] = static_cast<int>(i % n_classes);
    rng.shuffle(labels);

    // Signed distance of x to the bisector of (a, b), positive on a's side.
    auto bisector_distance = [&](const std::vector<double>& x, std::size_t a, std::size_t b) {
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < dimension; ++k) {
            const double diff = centroids[a][k] - centroids[b][k];
            num += (x[k] - 0.5 * (centroids[a][k] + centroids[b][k])) * diff;
            den += diff * diff;
        }
        return num / std::sqrt(den);
    };

    for (std::size_t i = 0; i < n_samples; ++i) {
        auto& s = data[i];
        s.label = labels[i];
        const auto c = static_cast<std::size_t>(s.label);
        s.features.resize(dimension);
        bool accepted = false;
        while (!accepted) {
            for (std::size_t k = 0; k < dimension; ++k) s.features[k] = centroids[c][k] + options.noise * rng.normal();
            accepted = true;
            for (std::size_t other = 0; other < n_classes && accepted; ++other)
                if (other != c && bisector_distance(s.features, c, other) < 0.5 * options.margin) accepted = false;
        }
    }
    return data;
}

/// Deterministic split: the leading (1 - validation_fraction) share trains.
inline std::pair<Dataset, Dataset> split_train_validation(const Dataset& data, double validation_fraction) {
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw InvalidArgument("validation fraction must be in [0, 1)");
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(data.size()) * validation_fraction));
    const std::size_t n_train = data.size() - n_val;
    return {Dataset(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n_train)),
            Dataset(data.begin() + static_cast<std::ptrdiff_t>(n_train), data.end())};
}

}  // namespace dcs3gd
