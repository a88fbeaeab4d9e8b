#include <gtest/gtest.h>

#include <random>

#include "bmfluct/canonical.hpp"

using namespace bmfluct;

namespace {

Functional random_functional(std::mt19937_64& g, std::size_t d) {
    std::normal_distribution<double> n;
    CVec v(static_cast<Eigen::Index>(d));
    for (auto& x : v) x = cplx(n(g), n(g));
    return Functional(v);
}

}  // namespace

TEST(Model, YuleValidatesWithSecondMoment) {
    const auto rep = validate_model(canonical::yule(), 2);
    EXPECT_TRUE(rep.ok());
    EXPECT_DOUBLE_EQ(rep.sup_moment, 4.0);
}

TEST(Model, GeneratorRowMustSumToZero) {
    auto m = canonical::model_s();
    m.motion.q(0, 0) = -1.0;
    m.motion.q(0, 1) = 1.1;
    const auto rep = validate_model(m, 2);
    EXPECT_FALSE(rep.ok());
    EXPECT_FALSE(rep.find("q.rows_sum_zero")->pass);
    EXPECT_TRUE(rep.find("offspring.normalized")->pass);
}

TEST(Model, OffspringMustBeNormalized) {
    auto m = canonical::yule();
    m.offspring.per_type[0] = {{0.5, {2}}, {0.4, {0}}};
    const auto rep = validate_model(m, 2);
    EXPECT_FALSE(rep.find("offspring.normalized")->pass);
    EXPECT_TRUE(rep.find("q.rows_sum_zero")->pass);
}

TEST(Model, DimensionMismatchNamesField) {
    auto m = canonical::model_s();
    m.gamma = RVec::Ones(3);
    try {
        validate_model(m, 2);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_EQ(e.path(), "gamma");
    }
    m = canonical::model_s();
    m.offspring.per_type[1][0].children = {1};
    try {
        validate_model(m, 2);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_EQ(e.path(), "offspring[1][0].children");
    }
}

TEST(Model, MeanMatrix) {
    EXPECT_DOUBLE_EQ(mean_matrix(canonical::yule())(0, 0), 2.0);
    RMat s(2, 2);
    s << 2, 1, 1, 2;
    EXPECT_EQ(mean_matrix(canonical::model_s()), s);

    auto m = canonical::model_s();
    m.offspring.per_type[0] = {{0.5, {2, 0}}, {0.5, {0, 0}}};
    const RMat mm = mean_matrix(m);
    EXPECT_DOUBLE_EQ(mm(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(mm(0, 1), 0.0);
}

TEST(Model, MeanMatrixManyOutcomesExact) {
    auto m = canonical::yule();
    m.offspring.per_type[0].clear();
    for (int i = 0; i < 1000; ++i) m.offspring.per_type[0].push_back({1e-3, {i % 7}});
    double exact = 0.0;
    for (int i = 0; i < 1000; ++i) exact += i % 7;
    EXPECT_NEAR(mean_matrix(m)(0, 0), exact / 1000.0, 1e-14);
}

TEST(Model, FactorialCrossMoment) {
    const auto y = canonical::yule();
    EXPECT_EQ(factorial_cross_moment(y, Functional{1.0}, Functional{1.0})(0), cplx(2.0));
    const auto s = canonical::model_s();
    const auto ind1 = Functional::indicator(2, 0);
    EXPECT_EQ(factorial_cross_moment(s, ind1, ind1)(0), cplx(2.0));
    EXPECT_EQ(factorial_cross_moment(s, Functional::zero(2), ind1).values, CVec::Zero(2));
}

TEST(Model, VarianceOperator) {
    EXPECT_EQ(variance_operator_V(canonical::yule(), Functional{1.0}, Functional{1.0})(0), cplx(2.0));
    auto s = canonical::model_m();
    s.gamma.setZero();
    const auto v = variance_operator_V(s, Functional{1.0, 2.0}, Functional{3.0, -1.0});
    EXPECT_EQ(v.values, CVec::Zero(2));
}

TEST(Model, VarianceOperatorSymmetricAndBilinear) {
    std::mt19937_64 g(7);
    for (const char* name : {"S", "L", "M", "R"}) {
        const auto m = canonical::by_name(name);
        const std::size_t d = m.dim();
        for (int rep = 0; rep < 20; ++rep) {
            const auto f = random_functional(g, d), h = random_functional(g, d), k = random_functional(g, d);
            const cplx a(0.3, -1.2), b(-2.0, 0.5);
            const CVec lhs = variance_operator_V(m, a * f + b * h, k).values;
            const CVec rhs = a * variance_operator_V(m, f, k).values + b * variance_operator_V(m, h, k).values;
            EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
            EXPECT_LT((variance_operator_V(m, f, k).values - variance_operator_V(m, k, f).values).cwiseAbs().maxCoeff(),
                      1e-12);
        }
    }
}

TEST(Model, FactorialCrossMomentNonnegative) {
    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (const char* name : {"S", "L", "C", "J", "M", "R"}) {
        const auto m = canonical::by_name(name);
        CVec f(static_cast<Eigen::Index>(m.dim()));
        for (auto& x : f) x = u(g);
        const auto v = factorial_cross_moment(m, Functional(f), Functional(f));
        for (Eigen::Index x = 0; x < v.values.size(); ++x) EXPECT_GE(v.values(x).real(), 0.0);
    }
}
