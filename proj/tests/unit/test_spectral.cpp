#include <gtest/gtest.h>

#include <cmath>

#include "bmfluct/canonical.hpp"

using namespace bmfluct;

namespace {

double maxabs(const CVec& v) { return v.cwiseAbs().maxCoeff(); }

CVec vec(std::initializer_list<cplx> v) { return Functional(v).values; }

}  // namespace

TEST(Spectral, MeanGenerators) {
    EXPECT_DOUBLE_EQ(mean_generator(canonical::yule())(0, 0), 1.0);
    RMat s(2, 2), j(2, 2);
    s << 1, 1, 1, 1;
    j << 1, 1, 0, 1;
    EXPECT_EQ(mean_generator(canonical::model_s()), s);
    EXPECT_EQ(mean_generator(canonical::model_j()), j);
}

TEST(Spectral, SemigroupApply) {
    const RMat a = mean_generator(canonical::model_j());
    const Functional f{0.0, 1.0};
    EXPECT_EQ(semigroup_apply(a, 0.0, f).values, f.values);
    EXPECT_LT(maxabs(semigroup_apply(a, 1.0, f).values - std::exp(1.0) * vec({1.0, 1.0})), 1e-14);
    EXPECT_NEAR(semigroup_apply(mean_generator(canonical::yule()), 1.0, Functional{1.0})(0).real(), std::exp(1.0),
                1e-15);
    EXPECT_THROW(semigroup_apply(a, -1.0, f), DomainError);
}

TEST(Spectral, SemigroupProperty) {
    for (const char* name : {"S", "L", "C", "J", "M", "R"}) {
        const RMat a = mean_generator(canonical::by_name(name));
        const Functional f = Functional::indicator(static_cast<std::size_t>(a.rows()), 0);
        const CVec lhs = semigroup_apply(a, 1.7, f).values;
        const CVec rhs = semigroup_apply(a, 0.6, semigroup_apply(a, 1.1, f)).values;
        EXPECT_LT(maxabs(lhs - rhs), 1e-10 * maxabs(lhs)) << name;
    }
}

TEST(Spectral, ExpmAgainstClosedForms) {
    RMat rot(2, 2);
    rot << 0.0, -3.0, 3.0, 0.0;
    const RMat e = expm(rot);
    EXPECT_NEAR(e(0, 0), std::cos(3.0), 1e-14);
    EXPECT_NEAR(e(1, 0), std::sin(3.0), 1e-14);
    RMat jb(2, 2);
    jb << 5.0, 40.0, 0.0, 5.0;
    const RMat ej = expm(jb);
    EXPECT_NEAR(ej(0, 1) / (40.0 * std::exp(5.0)), 1.0, 1e-13);
    EXPECT_NEAR(ej(0, 0) / std::exp(5.0), 1.0, 1e-13);
}

TEST(Spectral, ModelSEigenstructure) {
    const auto es = build_eigenstructure(canonical::model_s());
    ASSERT_EQ(es.m(), 2);
    EXPECT_NEAR(es.lambda[0].real(), 2.0, 1e-14);
    EXPECT_NEAR(std::abs(es.lambda[1]), 0.0, 1e-14);
    EXPECT_LT(maxabs(es.phi(0, 0, 0) - vec({1.0, 1.0})), 1e-14);
    EXPECT_LT(maxabs(es.dual_vec(0, 0, 0) - vec({0.5, 0.5})), 1e-14);
    EXPECT_LT(maxabs(es.phi(1, 0, 0) - vec({1.0, -1.0})), 1e-14);
    EXPECT_LT(maxabs(es.dual_vec(1, 0, 0) - vec({0.5, -0.5})), 1e-14);
    EXPECT_EQ(es.nilpotent, CMat::Zero(2, 2));
}

TEST(Spectral, ModelJDeclaredAcceptedUndeclaredRejected) {
    const auto es = build_eigenstructure(canonical::model_j(), canonical::model_j_declared());
    EXPECT_EQ(es.p(0), 2);
    CMat n(2, 2);
    n << 0.0, 1.0, 0.0, 0.0;
    EXPECT_EQ(es.nilpotent, n);
    try {
        build_eigenstructure(canonical::model_j());
        FAIL();
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("Jordan structure required"), std::string::npos);
    }
}

TEST(Spectral, RejectionNamesTriple) {
    auto bad = canonical::model_j_declared();
    bad.duals[0][1][0] = vec({0.1, 1.0});
    try {
        build_eigenstructure(canonical::model_j(), bad);
        FAIL();
    } catch (const EigenRejection& e) {
        EXPECT_EQ(e.triple(), (std::array<int, 3>{1, 2, 1}));
    }
    auto wrong_link = canonical::model_j_declared();
    wrong_link.chains[0][1][0] = vec({0.0, 2.0});
    wrong_link.duals[0][1][0] = vec({0.0, 0.5});
    EXPECT_THROW(build_eigenstructure(canonical::model_j(), wrong_link), EigenRejection);
}

TEST(Spectral, DeclaredOrderIsNormalized) {
    EigenStructure es;
    es.lambda = {0.0, 2.0};
    es.chains = {{{vec({1.0, -1.0})}}, {{vec({1.0, 1.0})}}};
    es.duals = {{{vec({0.5, -0.5})}}, {{vec({0.5, 0.5})}}};
    const auto built = build_eigenstructure(canonical::model_s(), es);
    EXPECT_NEAR(built.lambda[0].real(), 2.0, 0.0);
    EXPECT_TRUE(built.full_spectrum);
}

TEST(Spectral, RegimeClassification) {
    struct Case {
        const char* name;
        int m_L, m_C;
        const char* summary;
    };
    for (const Case& c : {Case{"Y", 1, 1, "large"}, Case{"L", 2, 2, "large"},
                          Case{"C", 1, 2, "critical eigenvalue present"}, Case{"S", 1, 1, "small"},
                          Case{"J", 1, 1, "large"}, Case{"CT", 1, 2, "critical eigenvalue present"}}) {
        const auto rep = classify_regimes(canonical::eigen_for(c.name));
        EXPECT_EQ(rep.m_L, c.m_L) << c.name;
        EXPECT_EQ(rep.m_C, c.m_C) << c.name;
        EXPECT_EQ(rep.summary(), c.summary) << c.name;
    }
    auto sub = canonical::yule();
    sub.offspring.per_type[0] = {{0.5, {2}}, {0.5, {0}}};
    EXPECT_THROW(classify_regimes(build_eigenstructure(sub)), DomainError);
}

TEST(Spectral, ComplexPairsAreConjugateClosed) {
    const auto es = canonical::eigen_for("R");
    ASSERT_EQ(es.m(), 3);
    EXPECT_NEAR(es.lambda[0].real(), 1.0, 1e-12);
    EXPECT_NEAR(es.lambda[1].imag(), std::sqrt(3.0) / 2.0, 1e-12);
    EXPECT_EQ(es.lambda[2], std::conj(es.lambda[1]));
    EXPECT_EQ(es.phi(2, 0, 0), es.phi(1, 0, 0).conjugate());
    const auto rep = classify_regimes(es);
    EXPECT_EQ(rep.m_L, 1);
    EXPECT_EQ(rep.m_C, 1);
}

TEST(Spectral, ProjectionsResolveIdentity) {
    for (const char* name : {"S", "L", "C", "J", "M", "R", "CT"}) {
        const auto es = canonical::eigen_for(name);
        const auto ps = projections(es);
        CMat sum = CMat::Zero(es.dim(), es.dim());
        for (std::size_t i = 0; i < ps.Phi.size(); ++i) {
            sum += ps.Phi[i];
            for (std::size_t l = 0; l < ps.Phi.size(); ++l)
                if (l != i) EXPECT_LT((ps.Phi[i] * ps.Phi[l]).cwiseAbs().maxCoeff(), 1e-12);
        }
        EXPECT_LT((sum - CMat::Identity(es.dim(), es.dim())).cwiseAbs().maxCoeff(), 1e-9) << name;
    }
}

TEST(Spectral, ProjectDecompose) {
    const auto es = canonical::eigen_for("S");
    const auto dec = project_decompose(es, Functional{1.0, 0.0}, 0.0);
    EXPECT_LT(maxabs(dec.f1.values - vec({0.5, 0.5})), 1e-14);
    EXPECT_LT(maxabs(dec.f2.values - vec({0.5, -0.5})), 1e-14);

    const auto pure = project_decompose(es, Functional(es.phi(0, 0, 0)), 0.0);
    EXPECT_LT(maxabs(pure.f2.values), 1e-14);
    const auto ker = project_decompose(es, Functional{1.0, -1.0}, 0.7);
    EXPECT_LT(maxabs(ker.f1.values), 1e-14);

    const Functional f{0.3, -2.0};
    for (double t : {0.0, 0.5, 2.0}) {
        const auto d = project_decompose(es, f, t);
        EXPECT_LT(maxabs((d.f1 + d.f2).values - f.values), 4e-16 * maxabs(f.values));
    }
    const auto once = project_decompose(es, f, 0.0).f1;
    EXPECT_LT(maxabs(project_decompose(es, once, 0.0).f1.values - once.values), 1e-14);
    EXPECT_FALSE(kernel_violation(es, project_decompose(es, f, 0.0).f2.values, 1).has_value());
}

TEST(Spectral, ProjectDecomposeJordan) {
    const auto es = canonical::eigen_for("L");
    const Functional f{1.0, 2.0};
    const double t = 0.8;
    // f1 = sum_i e^{(3/2 - lambda_i) t} Phi_i f with both eigenvalues large
    CVec expect = CVec::Zero(2);
    for (int i = 0; i < 2; ++i)
        expect += std::exp((1.5 - es.lambda[static_cast<std::size_t>(i)]) * t) * (es.projection(i) * f.values);
    EXPECT_LT(maxabs(project_decompose(es, f, t).f1.values - expect), 1e-13);
}

TEST(Spectral, H1Residual) {
    const auto s = canonical::model_s();
    const auto full = canonical::eigen_for("S");
    const std::vector<double> grid = {0.0, 0.25, 0.5, 1.0, 2.0, 3.0};
    for (double r : h1_residual(s, full, grid)) EXPECT_LE(r, 1e-9);

    const auto trunc = truncate(full, 1);
    const auto res = h1_residual(s, trunc, grid);
    for (std::size_t n = 0; n < grid.size(); ++n) EXPECT_NEAR(res[n], grid[n] * std::exp(-2.0 * grid[n]), 1e-12);
    EXPECT_EQ(res[0], 0.0);
    EXPECT_GT(res[2], res[3]);
}

TEST(Spectral, H1ResidualJordan) {
    const auto es = canonical::eigen_for("J");
    for (double r : h1_residual(canonical::model_j(), es, {0.1, 1.0, 2.0, 3.0})) EXPECT_LE(r, 1e-9);
}
