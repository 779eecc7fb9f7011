#include "spinpair/dense.hpp"
#include "spinpair/factored.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace spinpair;

namespace {
const cplx kHalf{1.0 / std::sqrt(2.0), 0.0};
}

TEST(BranchEnsemble, FirstExtensionHasTwoBranches) {
    std::mt19937_64 rng(1);
    const auto c = testutil::random_couplings(3, rng, 0.4);
    const auto in = testutil::random_product(3, rng);
    const auto props = propagators(c, 0.7);
    const auto e = BranchEnsemble::from_product(in).extend(props, kHalf, kHalf);
    ASSERT_EQ(e.branch_count(), 2u);
    EXPECT_NEAR(std::abs(e.weights()[0] - 0.5), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(e.weights()[1] - 0.5), 0.0, 1e-15);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_LT((e.vec(0, k) - props[k].plus * in[k]).cwiseAbs().maxCoeff(), 1e-15);
        EXPECT_LT((e.vec(1, k) - props[k].minus * in[k]).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(BranchEnsemble, LongitudinalNormIsCosinePower) {
    const double g = 0.6, tau = 0.5;
    const auto props = propagators(CouplingSet{{Vec3(0, 0, g)}, 0.0}, tau);
    std::mt19937_64 rng(2);
    const std::vector<Vec2c> in{testutil::random_spin(rng)};
    auto e = BranchEnsemble::from_product(in);
    for (int m = 1; m <= 6; ++m) {
        e = e.extend(props, kHalf, kHalf);
        EXPECT_EQ(e.branch_count(), std::size_t{1} << m);
        EXPECT_NEAR(success_probability(e), std::pow(std::cos(g * tau), 2 * m), 1e-13);
    }
}

TEST(BranchEnsemble, GramCacheMatchesScratch) {
    std::mt19937_64 rng(3);
    const auto c = testutil::random_couplings(4, rng, 0.8);
    const auto props = propagators(c, 0.9);
    auto e = BranchEnsemble::from_product(testutil::random_product(4, rng));
    for (int m = 0; m < 6; ++m) e = e.extend(props, kHalf, kHalf);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_LT(max_abs(e.gram(k) - e.gram_from_scratch(k)), 1e-12);
}

TEST(BranchEnsemble, CapacityCap) {
    const auto props = propagators(CouplingSet{{Vec3(1, 0, 0)}, 0.0}, 0.3);
    const std::vector<Vec2c> in{Vec2c(1.0, 0.0)};
    auto e = BranchEnsemble::from_product(in, EnsembleLimits{8});
    for (int m = 0; m < 3; ++m) e = e.extend(props, kHalf, kHalf);
    EXPECT_THROW(e.extend(props, kHalf, kHalf), CapacityError);
}

TEST(BranchEnsemble, NoMeasurementRdmIsProduct) {
    std::mt19937_64 rng(4);
    const auto in = testutil::random_product(3, rng);
    const auto e = BranchEnsemble::from_product(in);
    const Mat4 r = reduced_density_matrix(e, 0, 2);
    const VecX psi = kron_state(std::vector<Vec2c>{in[0], in[2]});
    EXPECT_LT(max_abs(MatX(r) - psi * psi.adjoint()), 1e-14);
    EXPECT_THROW(reduced_density_matrix(e, 1, 1), DomainError);
}

TEST(BranchEnsemble, StateVectorMatchesDense) {
    std::mt19937_64 rng(5);
    const auto c = testutil::random_couplings(3, rng, 0.3);
    const auto in = testutil::random_product(3, rng);
    auto e = BranchEnsemble::from_product(in);
    const auto props = propagators(c, 1.1);
    for (int m = 0; m < 4; ++m) e = e.extend(props, kHalf, kHalf);
    const MatX v = build_V(c, 1.1, kHalf, kHalf).matrix();
    VecX psi = kron_state(in);
    for (int m = 0; m < 4; ++m) psi = v * psi;
    EXPECT_LT((e.to_state_vector() - psi).cwiseAbs().maxCoeff(), 1e-13);
}

// Dense and factored engines agree on norms and every pair marginal.
TEST(BranchEnsemble, DenseOracleEquivalence) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 5);
        const int m_max = 1 + trial % 8;
        const auto c = testutil::random_couplings(n, rng);
        const auto in = testutil::random_product(n, rng);
        ProtocolConfig cfg{0.9, 0.8, m_max};
        const auto dense = run_protocol(BathStateDense::product(in), cfg, c);
        const auto fact = run_factored(in, cfg, c);
        ASSERT_EQ(fact.steps.size(), dense.steps.size());
        for (std::size_t s = 0; s < dense.steps.size(); ++s)
            EXPECT_NEAR(fact.steps[s].cumulative_p, dense.steps[s].cumulative_p, 1e-10);
        const auto pd = pair_marginals(dense.final_state);
        const auto pf = pair_marginals(fact.ensemble);
        ASSERT_EQ(pd.size(), pf.size());
        for (std::size_t p = 0; p < pd.size(); ++p) {
            EXPECT_LT(max_abs(MatX(pd[p].rho - pf[p].rho)), 1e-10);
            EXPECT_LT(max_abs(MatX(pf[p].rho - reduced_density_matrix(fact.ensemble, pf[p].i, pf[p].j))), 1e-12);
        }
    }
}

TEST(BranchEnsemble, ReductionIndependentOfWorkers) {
    std::mt19937_64 rng(7);
    const auto c = testutil::random_couplings(4, rng, 0.5);
    auto e = BranchEnsemble::from_product(testutil::random_product(4, rng));
    const auto props = propagators(c, 0.8);
    for (int m = 0; m < 9; ++m) e = e.extend(props, kHalf, kHalf);
    const double seq = success_probability(e, 1);
    for (unsigned w : {2U, 3U, 8U}) EXPECT_EQ(success_probability(e, w), seq);
}

TEST(MonteCarlo, SingleUnitarySampleIsExact) {
    std::mt19937_64 rng(8);
    const auto c = testutil::random_couplings(3, rng);
    ProtocolConfig cfg{0.7, 0.9, 4, 1.0, 0.0};
    MonteCarloOptions opt;
    opt.samples = 1;
    opt.seed = 99;
    const auto mc = mixed_state_monte_carlo(c, cfg, opt);
    EXPECT_NEAR(mc.success_probability, 1.0, 1e-12);
    const auto in = detail::sample_product_state(3, detail::splitmix64(opt.seed ^ detail::splitmix64(0)),
                                                 Unraveling::haar);
    const auto dense = run_protocol(BathStateDense::product(in), cfg, c);
    const auto pd = pair_marginals(dense.final_state);
    for (std::size_t p = 0; p < pd.size(); ++p) EXPECT_LT(max_abs(MatX(pd[p].rho - mc.pair_rdms[p].rho)), 1e-12);
}

TEST(MonteCarlo, SameSeedBitIdentical) {
    std::mt19937_64 rng(9);
    const auto c = testutil::random_couplings(4, rng);
    ProtocolConfig cfg{0.7, 0.9, 4};
    MonteCarloOptions opt;
    opt.samples = 50;
    opt.seed = 7;
    const auto a = mixed_state_monte_carlo(c, cfg, opt);
    opt.workers = 3;
    const auto b = mixed_state_monte_carlo(c, cfg, opt);
    EXPECT_EQ(a.success_probability, b.success_probability);
    EXPECT_EQ(a.purity_estimate, b.purity_estimate);
    for (std::size_t p = 0; p < a.pair_rdms.size(); ++p) EXPECT_TRUE(a.pair_rdms[p].rho == b.pair_rdms[p].rho);
}

TEST(MonteCarlo, ConvergesToDenseWithRootRScaling) {
    std::mt19937_64 rng(10);
    const auto c = testutil::random_couplings(4, rng);
    ProtocolConfig cfg{0.8, 0.9, 6};
    const auto dense = run_protocol(BathStateDense::maximally_mixed(4), cfg, c);
    const double p_exact = dense.steps.back().cumulative_p;
    const auto pd = pair_marginals(dense.final_state);
    std::vector<double> stderr_by_r;
    for (std::size_t r : {100u, 1000u, 10000u}) {
        MonteCarloOptions opt;
        opt.samples = r;
        opt.seed = 3;
        opt.purity_pairs = 0;
        const auto mc = mixed_state_monte_carlo(c, cfg, opt);
        EXPECT_LT(std::abs(mc.success_probability - p_exact), 5.0 * mc.success_stderr);
        stderr_by_r.push_back(mc.success_stderr);
        if (r == 10000u)
            for (std::size_t p = 0; p < pd.size(); ++p) EXPECT_LT(max_abs(MatX(pd[p].rho - mc.pair_rdms[p].rho)), 0.03);
    }
    // each tenfold increase in R shrinks the standard error by about sqrt(10)
    for (std::size_t i = 1; i < stderr_by_r.size(); ++i) {
        const double ratio = stderr_by_r[i - 1] / stderr_by_r[i];
        EXPECT_GT(ratio, std::sqrt(10.0) * 0.7);
        EXPECT_LT(ratio, std::sqrt(10.0) * 1.3);
    }
}

TEST(MonteCarlo, PurityEstimateTracksDense) {
    std::mt19937_64 rng(11);
    const auto c = testutil::random_couplings(3, rng);
    ProtocolConfig cfg{0.8, 0.9, 5};
    const auto dense = run_protocol(BathStateDense::maximally_mixed(3), cfg, c);
    MonteCarloOptions opt;
    opt.samples = 4000;
    opt.purity_pairs = 2000;
    const auto mc = mixed_state_monte_carlo(c, cfg, opt);
    EXPECT_NEAR(mc.purity_estimate, dense.steps.back().purity, 0.1 * dense.steps.back().purity);
}

TEST(MonteCarlo, ZBasisUnravelingAlsoUnbiased) {
    std::mt19937_64 rng(12);
    const auto c = testutil::random_couplings(3, rng);
    ProtocolConfig cfg{0.8, 0.9, 4};
    const auto dense = run_protocol(BathStateDense::maximally_mixed(3), cfg, c);
    MonteCarloOptions opt;
    opt.samples = 4000;
    opt.unraveling = Unraveling::z_basis;
    opt.purity_pairs = 0;
    const auto mc = mixed_state_monte_carlo(c, cfg, opt);
    EXPECT_LT(std::abs(mc.success_probability - dense.steps.back().cumulative_p), 5.0 * mc.success_stderr + 1e-12);
}

TEST(RunFactored, CapacityCheckedBeforeWork) {
    CouplingSet c{{Vec3(0.3, 0.1, 0.2), Vec3(0.1, 0.4, 0.0)}, 0.5};
    ProtocolConfig cfg{0.5, 1.0, 30};
    const std::vector<Vec2c> in(2, Vec2c(1.0, 0.0));
    EXPECT_THROW(run_factored(in, cfg, c), CapacityError);
    EnsembleLimits lim;
    lim.max_branches = 8;
    cfg.max_measurements = 4;
    EXPECT_THROW(run_factored(in, cfg, c, lim), CapacityError);
    cfg.max_measurements = 3;
    EXPECT_EQ(run_factored(in, cfg, c, lim).steps.size(), 3u);
}

TEST(BranchEnsemble, ReleasedCacheKeepsOverlap) {
    std::mt19937_64 rng(5);
    const auto c = testutil::random_couplings(3, rng, 0.3);
    auto e = BranchEnsemble::from_product(testutil::random_product(3, rng));
    for (int m = 0; m < 3; ++m) e = e.extend(propagators(c, 0.7), kHalf, kHalf);
    const cplx before = ensemble_overlap(e, e);
    auto light = e;
    light.release_overlap_cache();
    EXPECT_FALSE(light.has_overlap_cache());
    EXPECT_EQ(ensemble_overlap(light, light), before);
    EXPECT_THROW(light.extend(propagators(c, 0.7), kHalf, kHalf), DomainError);
    EXPECT_THROW(pair_marginals(light), DomainError);
}
