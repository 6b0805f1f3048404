#include <map>

#include <gtest/gtest.h>

#include "dcs3gd/models.hpp"
#include "dcs3gd/optim.hpp"
#include "test_support.hpp"

using namespace dcs3gd;
using dcs3gd::testing::random_vector;
using dcs3gd::testing::with_layout;

namespace {

std::vector<double> to_std(const ParamVector& v) { return {v.values().begin(), v.values().end()}; }

// |analytic - numeric| / max(|numeric|, 1e-8), worst component.
double fd_relative_error(const ParamVector& analytic, const ParamVector& numeric) {
    return dcs3gd::testing::max_relative_error(analytic, numeric, 1e-8);
}

Model random_quadratic(std::uint64_t seed, std::size_t n, std::size_t rank) {
    Rng rng(seed);
    QuadraticSpec spec;
    for (std::size_t k = 0; k < n; ++k) spec.diagonal.push_back(rng.uniform(0.1, 2.0));
    for (std::size_t j = 0; j < rank; ++j) spec.low_rank.push_back(to_std(random_vector(rng, n, 0.3)));
    for (std::size_t k = 0; k < n; ++k) spec.center.push_back(rng.normal());
    return Model::quadratic(std::move(spec));
}

Model model_of_kind(ModelKind kind) {
    switch (kind) {
        case ModelKind::quadratic: return random_quadratic(11, 12, 2);
        case ModelKind::logistic_regression: return Model::logistic_regression(6, 3);
        case ModelKind::mlp: return Model::mlp(4, 8, 3);
    }
    throw std::logic_error("kind");
}

Dataset data_for(const Model& m, std::size_t n, std::uint64_t seed) {
    return make_synthetic_dataset(m.kind(), n, m.n_features(), m.is_classifier() ? m.n_classes() : 0, seed);
}

}  // namespace

TEST(Model, ParameterCountsMatchArchitecture) {
    EXPECT_EQ(Model::logistic_regression(32, 4).dimension(), 4u * 32 + 4);
    EXPECT_EQ(Model::mlp(16, 32, 4).dimension(), 32u * 16 + 32 + 4 * 32 + 4);
    EXPECT_EQ(Model::identity_quadratic({0, 0, 0}).dimension(), 3u);
}

TEST(Model, GroupLayoutTagsBiases) {
    const auto m = Model::mlp(2, 3, 2);
    const auto g = m.group_layout();
    ASSERT_EQ(g.size(), m.dimension());
    // [W1 (3x2) | b1 (3) | W2 (2x3) | b2 (2)]
    std::vector<GroupId> want{0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1};
    EXPECT_EQ(g, want);
}

TEST(Model, RejectsNegativeCurvature) {
    EXPECT_THROW(Model::quadratic({{1.0, -0.5}, {}, {}}), InvalidArgument);
}

TEST(Model, GlorotInitialisation) {
    const auto m = Model::mlp(4, 8, 3);
    const auto w = m.initial_weights(5);
    EXPECT_EQ(w, m.initial_weights(5));
    EXPECT_FALSE(w == m.initial_weights(6));
    const double a1 = std::sqrt(6.0 / 12.0);
    for (std::size_t k = 0; k < 32; ++k) EXPECT_LE(std::abs(w[k]), a1);
    for (std::size_t k = 32; k < 40; ++k) EXPECT_EQ(w[k], 0.0);  // hidden biases
    for (std::size_t k = 64; k < 67; ++k) EXPECT_EQ(w[k], 0.0);  // output biases
}

TEST(BatchGradient, IdentityQuadratic) {
    const auto m = Model::identity_quadratic({1.0, -2.0, 0.5});
    const Dataset batch{Sample{}};
    const ParamVector w{3.0, 0.0, 0.5};
    const auto r = batch_gradient(m, w, batch);
    EXPECT_EQ(r.gradient[0], 2.0);
    EXPECT_EQ(r.gradient[1], 2.0);
    EXPECT_EQ(r.gradient[2], 0.0);
    EXPECT_DOUBLE_EQ(r.loss, 0.5 * (4.0 + 4.0));
    EXPECT_EQ(r.error_rate, 0.0);
}

TEST(BatchGradient, LogisticAtZeroWeights) {
    const auto m = Model::logistic_regression(3, 2);
    const Dataset batch{{{1.0, 2.0, 3.0}, 0, 0.0}, {{-1.0, 0.5, 2.0}, 1, 0.0},
                        {{0.3, 0.1, -2.0}, 0, 0.0}, {{4.0, 4.0, 4.0}, 1, 0.0}};
    const auto r = batch_gradient(m, m.zeros(), batch);
    EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
    // Ties go to class 0, so exactly the label-1 half is wrong.
    EXPECT_EQ(r.error_rate, 0.5);
}

TEST(BatchGradient, SoftmaxDoesNotOverflow) {
    const auto m = Model::logistic_regression(2, 3);
    ParamVector w = m.zeros();
    w[0] = 800.0;
    const Dataset batch{{{1.0, 0.0}, 1, 0.0}};
    const auto r = batch_gradient(m, w, batch);
    EXPECT_NEAR(r.loss, 800.0, 1e-9);
    EXPECT_TRUE(r.gradient.all_finite());
}

TEST(BatchGradient, Errors) {
    const auto m = Model::logistic_regression(2, 2);
    EXPECT_THROW(batch_gradient(m, m.zeros(), Dataset{}), InvalidArgument);
    EXPECT_THROW(batch_gradient(m, ParamVector(3), Dataset{{{1.0, 0.0}, 0, 0.0}}), LengthMismatch);
    EXPECT_THROW(batch_gradient(m, m.zeros(), Dataset{{{1.0}, 0, 0.0}}), LengthMismatch);
    EXPECT_THROW(batch_gradient(m, m.zeros(), Dataset{{{1.0, 0.0}, 2, 0.0}}), InvalidArgument);
}

TEST(BatchGradient, SmallMlpMatchesFiniteDifferences) {
    const auto m = Model::mlp(4, 8, 3);
    const auto batch = data_for(m, 16, 3);
    const auto w = m.initial_weights(9);
    const auto g = batch_gradient(m, w, batch).gradient;
    EXPECT_LT(fd_relative_error(g, finite_difference_gradient(m, w, batch, 1e-5)), 1e-5);
}

TEST(BatchGradient, ConcatenationIsWeightedMean) {
    for (auto kind : {ModelKind::quadratic, ModelKind::logistic_regression, ModelKind::mlp}) {
        const auto m = model_of_kind(kind);
        const auto data = data_for(m, 30, 4);
        const Dataset a(data.begin(), data.begin() + 10), b(data.begin() + 10, data.end());
        const auto w = with_layout(m, random_vector(2, m.dimension(), 0.3));
        const auto whole = batch_gradient(m, w, data).gradient;
        const auto mixed = axpy(10.0 / 30.0, batch_gradient(m, w, a).gradient,
                                scale(20.0 / 30.0, batch_gradient(m, w, b).gradient));
        EXPECT_LT(dcs3gd::testing::norm_relative_error(mixed, whole), 1e-12) << to_string(kind);
    }
}

TEST(FiniteDifference, ExactOnIdentityQuadratic) {
    const auto m = Model::identity_quadratic({0.0, 0.0});
    const auto g = finite_difference_gradient(m, ParamVector{1.0, 0.0}, Dataset{Sample{}}, 1e-6);
    EXPECT_NEAR(g[0], 1.0, 1e-9);
    EXPECT_NEAR(g[1], 0.0, 1e-9);
}

TEST(FiniteDifference, ConstantZeroQuadratic) {
    const auto m = Model::quadratic({{0.0, 0.0, 0.0}, {}, {}});
    const auto g = finite_difference_gradient(m, ParamVector{1.0, -2.0, 3.0}, Dataset{Sample{}}, 1e-4);
    for (double x : g.values()) EXPECT_EQ(x, 0.0);
}

TEST(FiniteDifference, AgreesWithBackpropForAllKinds) {
    for (auto kind : {ModelKind::quadratic, ModelKind::logistic_regression, ModelKind::mlp}) {
        const auto m = model_of_kind(kind);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto batch = data_for(m, 8, seed);
            const auto w = with_layout(m, random_vector(100 + seed, m.dimension(), 0.5));
            EXPECT_LT(fd_relative_error(batch_gradient(m, w, batch).gradient,
                                        finite_difference_gradient(m, w, batch, 1e-5)),
                      1e-5)
                << to_string(kind) << " seed " << seed;
        }
    }
}

TEST(FiniteDifference, UnderflowingStepIsAnError) {
    const auto m = Model::identity_quadratic({0.0});
    EXPECT_THROW(finite_difference_gradient(m, ParamVector{1.0}, Dataset{Sample{}}, 1e-20), StepUnderflow);
    EXPECT_THROW(finite_difference_gradient(m, ParamVector{1.0}, Dataset{Sample{}}, 0.0), InvalidArgument);
}

TEST(ExactHessian, DiagonalQuadraticScalesByDiagonal) {
    const auto m = Model::quadratic({{1.0, 2.0, 3.0}, {}, {}});
    const ParamVector v{1.0, -1.0, 0.5};
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto hv = exact_hessian_vector(m, random_vector(seed, 3), Dataset{Sample{}}, v);
        EXPECT_EQ(hv, (ParamVector{1.0, -2.0, 1.5}));
    }
}

TEST(ExactHessian, IdentityQuadratic) {
    const auto m = Model::identity_quadratic({0.0, 0.0});
    EXPECT_EQ(exact_hessian_vector(m, ParamVector(2), Dataset{Sample{}}, ParamVector{2.0, -1.0}),
              (ParamVector{2.0, -1.0}));
}

TEST(ExactHessian, LogisticMatchesDirectionalDifferences) {
    const auto m = Model::logistic_regression(8, 4);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto batch = data_for(m, 16, seed);
        const auto w = with_layout(m, random_vector(seed + 50, m.dimension(), 0.3));
        const auto v = with_layout(m, random_vector(seed + 90, m.dimension()));
        const double h = 1e-5;
        const auto gp = batch_gradient(m, axpy(h, v, w), batch).gradient;
        const auto gm = batch_gradient(m, axpy(-h, v, w), batch).gradient;
        const auto numeric = scale(1.0 / (2.0 * h), subtract(gp, gm));
        EXPECT_LT(fd_relative_error(exact_hessian_vector(m, w, batch, v), numeric), 1e-5) << "seed " << seed;
    }
}

TEST(ExactHessian, LinearInDirection) {
    for (auto kind : {ModelKind::quadratic, ModelKind::logistic_regression}) {
        const auto m = model_of_kind(kind);
        const auto batch = data_for(m, 12, 1);
        const auto w = with_layout(m, random_vector(3, m.dimension(), 0.4));
        const auto v1 = with_layout(m, random_vector(4, m.dimension()));
        const auto v2 = with_layout(m, random_vector(5, m.dimension()));
        const double a = -1.7;
        const auto lhs = exact_hessian_vector(m, w, batch, axpy(a, v1, v2));
        const auto rhs = axpy(a, exact_hessian_vector(m, w, batch, v1), exact_hessian_vector(m, w, batch, v2));
        for (std::size_t k = 0; k < lhs.size(); ++k) EXPECT_NEAR(lhs[k], rhs[k], 1e-12) << to_string(kind);
    }
}

TEST(ExactHessian, QuadraticTaylorIsExact) {
    const auto m = random_quadratic(21, 64, 3);
    const auto batch = make_synthetic_dataset(ModelKind::quadratic, 4, 64, 0, 8);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto w1 = random_vector(seed, 64), w2 = random_vector(seed + 1000, 64);
        const auto g1 = batch_gradient(m, w1, batch).gradient, g2 = batch_gradient(m, w2, batch).gradient;
        const auto predicted = add(g1, exact_hessian_vector(m, w1, batch, subtract(w2, w1)));
        EXPECT_LT(dcs3gd::testing::norm_relative_error(predicted, g2), 1e-12) << "seed " << seed;
    }
}

TEST(ExactHessian, MlpUnsupported) {
    const auto m = Model::mlp(2, 2, 2);
    EXPECT_THROW(exact_hessian_vector(m, m.zeros(), Dataset{{{1.0, 1.0}, 0, 0.0}}, m.zeros()), UnsupportedModel);
}

TEST(SyntheticData, SameSeedBitIdentical) {
    const auto a = make_synthetic_dataset(ModelKind::logistic_regression, 200, 8, 4, 42);
    const auto b = make_synthetic_dataset(ModelKind::logistic_regression, 200, 8, 4, 42);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].label, b[i].label);
        EXPECT_EQ(a[i].features, b[i].features);
    }
    const auto c = make_synthetic_dataset(ModelKind::logistic_regression, 200, 8, 4, 43);
    EXPECT_NE(a[0].features, c[0].features);
}

TEST(SyntheticData, ClassHistogramNearUniform) {
    const auto data = make_synthetic_dataset(ModelKind::logistic_regression, 10000, 16, 4, 7);
    std::map<int, int> counts;
    for (const auto& s : data) ++counts[s.label];
    ASSERT_EQ(counts.size(), 4u);
    for (const auto& [label, n] : counts) EXPECT_LT(std::abs(n - 2500) / 2500.0, 0.05) << "label " << label;
}

TEST(SyntheticData, PlainSgdSeparatesWideMargin) {
    const std::size_t dim = 10;
    const auto data = make_synthetic_dataset(ModelKind::logistic_regression, 1000, dim, 2, 3,
                                             SyntheticOptions{6.0, 3.0, 1.0});
    const auto m = Model::logistic_regression(dim, 2);
    auto w = m.initial_weights(1);
    MomentumState state{m.zeros(), 0.1, 0.0};
    for (int epoch = 0; epoch < 5; ++epoch)
        for (std::size_t i = 0; i + 10 <= data.size(); i += 10) {
            const std::span<const Sample> batch(data.data() + i, 10);
            w = add(w, momentum_update(state, batch_gradient(m, w, batch).gradient));
        }
    EXPECT_LT(evaluate(m, w, data).error_rate, 0.01);
}

TEST(SyntheticData, Errors) {
    EXPECT_THROW(make_synthetic_dataset(ModelKind::mlp, 0, 4, 2, 1), InvalidArgument);
    EXPECT_THROW(make_synthetic_dataset(ModelKind::mlp, 10, 2, 3, 1), InvalidArgument);
    EXPECT_THROW(make_synthetic_dataset(ModelKind::mlp, 10, 4, 1, 1), InvalidArgument);
}

TEST(Split, LeadingShareTrains) {
    const auto data = make_synthetic_dataset(ModelKind::logistic_regression, 10, 4, 2, 1);
    const auto [train, val] = split_train_validation(data, 0.2);
    ASSERT_EQ(train.size(), 8u);
    ASSERT_EQ(val.size(), 2u);
    EXPECT_EQ(val[0].features, data[8].features);
    EXPECT_THROW(split_train_validation(data, 1.0), InvalidArgument);
}
