#include "spinpair/analysis.hpp"
#include "spinpair/dense.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace spinpair;

namespace {

Mat4 projector(const Eigen::Vector4cd& v) { return v * v.adjoint(); }

Mat4 random_state4(std::mt19937_64& rng, bool pure = false) {
    if (pure) {
        std::normal_distribution<double> g(0.0, 1.0);
        Eigen::Vector4cd v;
        for (int i = 0; i < 4; ++i) v(i) = cplx{g(rng), g(rng)};
        return projector(v.normalized());
    }
    return testutil::random_density(4, rng);
}

}  // namespace

TEST(Concurrence, SingletIsOne) { EXPECT_NEAR(concurrence(projector(phased_singlet(0.0))), 1.0, 1e-12); }

TEST(Concurrence, ProductIsZero) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
        const auto a = testutil::random_spin(rng), b = testutil::random_spin(rng);
        const Eigen::Vector4cd v = kron_state(std::vector<Vec2c>{a, b});
        EXPECT_NEAR(concurrence(projector(v)), 0.0, 1e-7);
    }
}

TEST(Concurrence, WernerState) {
    const double p = 0.6;
    const Mat4 w = p * projector(phased_singlet(0.0)) + (1.0 - p) * Mat4::Identity() / 4.0;
    EXPECT_NEAR(concurrence(w), (3.0 * p - 1.0) / 2.0, 1e-12);
}

TEST(Concurrence, RejectsNonPsd) {
    Mat4 bad = Mat4::Identity() / 4.0;
    bad(0, 0) = -0.25;
    bad(1, 1) = 0.75;
    EXPECT_THROW(concurrence(bad), DomainError);
}

TEST(Concurrence, LocalUnitaryInvariance) {
    std::mt19937_64 rng(2);
    double worst = 0.0;
    for (int i = 0; i < 500; ++i) {
        const Mat4 rho = random_state4(rng, i % 2 == 0);
        const Mat4 u = MatX(kron(MatX(testutil::random_unitary2(rng)), MatX(testutil::random_unitary2(rng))));
        worst = std::max(worst, std::abs(concurrence(rho) - concurrence(u * rho * u.adjoint())));
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(PairFidelity, BestPhaseRecoversPreparedPhase) {
    for (double phi0 : {0.0, 0.4, pi / 2, 2.9, 3 * pi / 2, 6.0}) {
        const auto fit = best_phase(projector(phased_singlet(phi0)));
        EXPECT_NEAR(fit.fidelity, 1.0, 1e-12);
        EXPECT_NEAR(std::abs(std::exp(I_unit * fit.phase) - std::exp(I_unit * phi0)), 0.0, 1e-12);
    }
}

TEST(PairFidelity, TripletLikeStateOrthogonalToSinglet) {
    EXPECT_NEAR(pair_fidelity(projector(phased_singlet(pi)), 0.0), 0.0, 1e-15);
}

TEST(PairFidelity, BestPhaseDominatesGrid) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const Mat4 rho = random_state4(rng);
        const auto fit = best_phase(rho);
        for (int k = 0; k < 64; ++k) EXPECT_GE(fit.fidelity, pair_fidelity(rho, 2 * pi * k / 64) - 1e-14);
    }
}

TEST(PairFidelity, PureAntiAlignedStatesSatisfyConcurrenceRelation) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        Eigen::Vector4cd v = Eigen::Vector4cd::Zero();
        v(1) = cplx{g(rng), g(rng)};
        v(2) = cplx{g(rng), g(rng)};
        const Mat4 rho = projector(v.normalized());
        EXPECT_NEAR(best_phase(rho).fidelity, 0.5 * (1.0 + concurrence(rho)), 1e-10);
    }
}

// Equal-magnitude transverse couplings: the decoupled pair state is
// (|+1,-1> - e^{i(theta1 - theta2)} |-1,+1>) / sqrt(2), so the steady-state
// phase is the azimuth difference of the couplings.
TEST(PairFidelity, SteadyStatePhaseFollowsCouplingAzimuths) {
    for (double t2 : {0.3, 1.2, 2.5, 4.0}) {
        const double t1 = 0.1;
        CouplingSet c{{Vec3(std::cos(t1), std::sin(t1), 0.0), Vec3(std::cos(t2), std::sin(t2), 0.0)}, 0.0};
        ProtocolConfig cfg{0.8, 0.9, 400};
        const auto traj = run_protocol(BathStateDense::maximally_mixed(2), cfg, c);
        const Mat4 rho = two_spin_marginal(traj.final_state.rho, 2, 0, 1);
        const auto fit = best_phase(rho);
        EXPECT_GT(fit.fidelity, 0.99);
        EXPECT_LT(std::abs(std::arg(std::exp(I_unit * (fit.phase - (t1 - t2))))), 1e-2);
    }
}

TEST(DetectPairing, ProductStateIsUnpaired) {
    std::mt19937_64 rng(5);
    const auto s = BathStateDense::product(testutil::random_product(4, rng));
    const auto pa = detect_pairing(pair_marginals(s));
    EXPECT_EQ(pa.paired_count(), 0u);
    for (const auto& p : pa.pairs) EXPECT_LE(p.fidelity, 0.5 + 1e-12);
}

TEST(DetectPairing, SingletProductRecovered) {
    // singlets on (0,3) and (1,2)
    const Eigen::Vector4cd s = phased_singlet(0.0);
    VecX psi = VecX::Zero(16);
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
            const int s0 = a >> 1, s3 = a & 1, s1 = b >> 1, s2 = b & 1;
            psi(s0 * 8 + s1 * 4 + s2 * 2 + s3) = s(a) * s(b);
        }
    const auto pa = detect_pairing(pair_marginals(BathStateDense::pure(psi, 4)));
    ASSERT_EQ(pa.pairs.size(), 2u);
    EXPECT_EQ(pa.pairs[0].i, 0u);
    EXPECT_EQ(pa.pairs[0].j, 3u);
    EXPECT_EQ(pa.pairs[1].i, 1u);
    EXPECT_EQ(pa.pairs[1].j, 2u);
    EXPECT_EQ(pa.paired_count(), 2u);
    EXPECT_NEAR(pa.pairs[0].concurrence, 1.0, 1e-10);
}

TEST(DetectPairing, TieBreakIsLexicographic) {
    const auto pa = detect_pairing(pair_marginals(BathStateDense::maximally_mixed(4)));
    ASSERT_EQ(pa.pairs.size(), 2u);
    EXPECT_EQ(pa.pairs[0].i, 0u);
    EXPECT_EQ(pa.pairs[0].j, 1u);
    EXPECT_EQ(pa.pairs[1].i, 2u);
    EXPECT_EQ(pa.pairs[1].j, 3u);
}

TEST(DetectPairing, AlwaysDisjoint) {
    std::mt19937_64 rng(6);
    for (std::size_t n = 2; n <= 6; ++n) {
        BathStateDense s{testutil::random_density(register_dim(n), rng), n};
        const auto pa = detect_pairing(pair_marginals(s));
        std::vector<int> seen(n, 0);
        for (const auto& p : pa.pairs) {
            ++seen[p.i];
            ++seen[p.j];
        }
        for (int v : seen) EXPECT_LE(v, 1);
        EXPECT_EQ(pa.pairs.size(), n / 2);
    }
}

TEST(ClassicalCheck, RejectsNonzeroOmega) {
    CouplingSet c{{Vec3(1, 0, 0)}, 0.5};
    EXPECT_THROW(classical_steady_state_check(BathStateDense::maximally_mixed(1), c), DomainError);
}

// At omega = 0 a single spin has V = cos(|g| tau) * identity, so V is diagonal
// in the g.sigma eigenbasis and an eigenstate input stays a rank-one state.
TEST(ClassicalCheck, SingleSpinEigenstateIsRankOne) {
    CouplingSet c{{Vec3(0.3, -0.4, 0.5)}, 0.0};
    Eigen::SelfAdjointEigenSolver<Mat2> es(pauli::dot(c.g[0]));
    const Vec2c aligned = es.eigenvectors().col(1);
    const auto v = build_V(c, 0.7, cplx{1 / std::sqrt(2.0), 0}, cplx{1 / std::sqrt(2.0), 0}).matrix();
    EXPECT_LT(max_abs(v - v(0, 0) * MatX::Identity(2, 2)), 1e-15);
    ProtocolConfig cfg{0.0, 0.7, 50};
    const auto traj = run_protocol(BathStateDense::pure(aligned, 1), cfg, c);
    const auto r = classical_steady_state_check(traj.final_state, c);
    EXPECT_EQ(r.rank, 1u);
    EXPECT_NEAR(r.offdiagonal_norm, 0.0, 1e-12);
    ASSERT_EQ(r.support.size(), 1u);
    EXPECT_EQ(r.support[0], 0u);
    EXPECT_EQ(r.support_alignment[0], 1);
}

TEST(ClassicalCheck, RandomCouplingsReachTwoBranchState) {
    std::mt19937_64 rng(7);
    const auto c = testutil::random_couplings(4, rng);
    ProtocolConfig cfg{0.0, 0.5, 600};
    const auto traj = run_protocol(BathStateDense::maximally_mixed(4), cfg, c);
    const auto r = classical_steady_state_check(traj.final_state, c);
    EXPECT_TRUE(r.two_branch);
    EXPECT_EQ(r.rank, 2u);
    EXPECT_NEAR(r.eigenvalues[0], 0.5, 1e-6);
    EXPECT_NEAR(r.eigenvalues[1], 0.5, 1e-6);
    EXPECT_NEAR(r.purity, 0.5, 1e-6);
}

TEST(ClassicalCheck, IdenticalCouplingsZeroMagnetizationSector) {
    const Vec3 g(0, 0, 1.0);
    CouplingSet c{{g, g, g, g}, 0.0};
    ProtocolConfig cfg{0.0, 0.3, 300};
    const auto traj = run_protocol(BathStateDense::maximally_mixed(4), cfg, c);
    const auto r = classical_steady_state_check(traj.final_state, c);
    EXPECT_EQ(r.rank, 6u);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(r.eigenvalues[k], 1.0 / 6.0, 1e-6);
    for (int a : r.support_alignment) EXPECT_EQ(a, 0);
    EXPECT_NEAR(r.purity, 1.0 / 6.0, 1e-6);
}
