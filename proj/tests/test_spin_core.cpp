#include "spinpair/reference.hpp"
#include "spinpair/spin_core.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace spinpair;

TEST(DipolarCouplings, OnAxisSpinIsLongitudinalAndDoubled) {
    SpinGeometry geo{{Vec3(0, 0, 2.0)}};
    const auto c = dipolar_couplings(geo, 3.0);
    EXPECT_NEAR(c.g[0].x(), 0.0, 1e-15);
    EXPECT_NEAR(c.g[0].y(), 0.0, 1e-15);
    EXPECT_NEAR(c.g[0].z(), 2.0 * 3.0 / 8.0, 1e-15);
}

TEST(DipolarCouplings, InPlaneSpinIsAntiparallelToZ) {
    SpinGeometry geo{{Vec3(2.0, 0, 0)}};
    const auto c = dipolar_couplings(geo, 3.0);
    EXPECT_NEAR((c.g[0] - Vec3(0, 0, -3.0 / 8.0)).norm(), 0.0, 1e-15);
}

TEST(DipolarCouplings, ChainMatchesComponentwiseFormula) {
    // x_k = k d, z = z0 evaluated via cos(theta) = z0 / r
    const double d = 0.3, z0 = 1.1, pref = 2.0;
    const auto c = dipolar_couplings(SpinGeometry::chain(5, d, z0), pref);
    for (int k = 1; k <= 5; ++k) {
        const double x = k * d, r2 = x * x + z0 * z0, r = std::sqrt(r2);
        const double gx = pref * 3.0 * x * z0 / (r2 * r2 * r);
        const double gz = pref * (3.0 * z0 * z0 / r2 - 1.0) / (r2 * r);
        EXPECT_NEAR(c.g[k - 1].x(), gx, 1e-14);
        EXPECT_NEAR(c.g[k - 1].y(), 0.0, 1e-14);
        EXPECT_NEAR(c.g[k - 1].z(), gz, 1e-14);
    }
}

TEST(DipolarCouplings, MagnitudeDecreasesWithRadius) {
    const Vec3 dir = Vec3(1.0, 0.5, 0.7).normalized();
    SpinGeometry geo{{dir * 1.0, dir * 1.5, dir * 3.0}};
    const auto c = dipolar_couplings(geo);
    EXPECT_GT(c.g[0].norm(), c.g[1].norm());
    EXPECT_GT(c.g[1].norm(), c.g[2].norm());
}

TEST(DipolarCouplings, ZeroRadiusNamesTheSpin) {
    SpinGeometry geo{{Vec3(1, 0, 0), Vec3(0, 0, 0)}};
    try {
        (void)dipolar_couplings(geo);
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("spin 1"), std::string::npos);
    }
}

TEST(DipolarCouplings, EquivariantUnderRotationAboutZ) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    SpinGeometry geo;
    for (int k = 0; k < 6; ++k) geo.positions.emplace_back(u(rng), u(rng), 1.0 + std::abs(u(rng)));
    const double ang = 0.73;
    const Eigen::Matrix3d rot = Eigen::AngleAxisd(ang, Vec3::UnitZ()).toRotationMatrix();
    SpinGeometry rotated;
    for (const auto& p : geo.positions) rotated.positions.push_back(rot * p);
    const auto a = dipolar_couplings(geo), b = dipolar_couplings(rotated);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR((rot * a.g[k] - b.g[k]).norm(), 0.0, 1e-13);
}

TEST(Propagators, ZeroCouplingIsZRotation) {
    const double w = 0.7, t = 1.3;
    const auto pp = single_spin_propagators(Vec3::Zero(), w, t);
    Mat2 expect = Mat2::Zero();
    expect(0, 0) = std::exp(I_unit * w * t);
    expect(1, 1) = std::exp(-I_unit * w * t);
    EXPECT_LT((pp.plus - expect).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((pp.minus - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Propagators, ZeroTimeIsIdentity) {
    const auto pp = single_spin_propagators(Vec3(0.3, -0.2, 0.9), 1.5, 0.0);
    EXPECT_LT((pp.plus - Mat2::Identity()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((pp.minus - Mat2::Identity()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Propagators, NegativeTimeRejected) {
    EXPECT_THROW(single_spin_propagators(Vec3(1, 0, 0), 1.0, -0.1), DomainError);
}

TEST(Propagators, TransverseCouplingMatchesMatrixExponential) {
    const double g = 0.8, w = 1.7, t = 0.9;
    const auto pp = single_spin_propagators(Vec3(g, 0, 0), w, t);
    const MatX hp = w * pauli::z() + g * pauli::x();
    const MatX hm = w * pauli::z() - g * pauli::x();
    EXPECT_LT(max_abs(MatX(pp.plus) - reference::expi_hermitian(hp, t)), 1e-12);
    EXPECT_LT(max_abs(MatX(pp.minus) - reference::expi_hermitian(hm, t)), 1e-12);
    // transverse case: delta = sqrt(w^2 + g^2) for both branches
    const double delta = std::sqrt(w * w + g * g);
    const Mat2 closed = std::cos(delta * t) * Mat2::Identity() +
                        I_unit * std::sin(delta * t) / delta * (w * pauli::z() + g * pauli::x());
    EXPECT_LT((pp.plus - closed).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Propagators, UnitaryForRandomDraws) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-3.0, 3.0), ut(0.0, 10.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto pp = single_spin_propagators(Vec3(u(rng), u(rng), u(rng)), u(rng), ut(rng));
        worst = std::max(worst, (pp.plus.adjoint() * pp.plus - Mat2::Identity()).cwiseAbs().maxCoeff());
        worst = std::max(worst, (pp.minus.adjoint() * pp.minus - Mat2::Identity()).cwiseAbs().maxCoeff());
    }
    EXPECT_LT(worst, 1e-12);
}

TEST(Propagators, BranchesCoincideWithoutCoupling) {
    const auto pp = single_spin_propagators(Vec3::Zero(), 2.2, 0.4);
    EXPECT_LT((pp.plus - pp.minus).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Propagators, ComposeInTime) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-2.0, 2.0), ut(0.0, 3.0);
    for (int i = 0; i < 200; ++i) {
        const Vec3 g(u(rng), u(rng), u(rng));
        const double w = u(rng), t1 = ut(rng), t2 = ut(rng);
        const auto a = single_spin_propagators(g, w, t1), b = single_spin_propagators(g, w, t2);
        const auto ab = single_spin_propagators(g, w, t1 + t2);
        EXPECT_LT((a.plus * b.plus - ab.plus).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((a.minus * b.minus - ab.minus).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(EffectiveCoupling, UniformAndArithmetic) {
    CouplingSet c{{Vec3(0, 0, 2.0), Vec3(2.0, 0, 0), Vec3(0, -2.0, 0)}, 0.0};
    EXPECT_NEAR(effective_coupling(c), 2.0, 1e-15);
    CouplingSet d{{Vec3(3, 0, 0), Vec3(0, 4, 0)}, 0.0};
    EXPECT_NEAR(effective_coupling(d), std::sqrt(12.5), 1e-15);
}

TEST(EffectiveCoupling, RandomSetRecomputed) {
    std::mt19937_64 rng(3);
    const auto c = testutil::random_couplings(9, rng);
    double s = 0.0;
    for (const auto& g : c.g) s += g.x() * g.x() + g.y() * g.y() + g.z() * g.z();
    EXPECT_NEAR(effective_coupling(c), std::sqrt(s / 9.0), 1e-14);
}

TEST(OptimalParams, SingleSpinSubstitution) {
    CouplingSet c{{Vec3(0.5, -1.5, 2.0)}, 0.0};
    const auto p = optimal_params(c);
    EXPECT_NEAR(p.omega, 2.0, 1e-15);
    EXPECT_NEAR(p.tau, 0.5, 1e-15);
}

TEST(OptimalParams, Homogeneous) {
    std::mt19937_64 rng(4);
    const auto c = testutil::random_couplings(5, rng);
    const auto a = optimal_params(c), b = optimal_params(c.scaled(2.0));
    EXPECT_NEAR(b.omega, 2.0 * a.omega, 1e-14);
    EXPECT_NEAR(b.tau, 0.5 * a.tau, 1e-14);
}

TEST(OptimalParams, AllZeroRejected) {
    CouplingSet c{{Vec3::Zero(), Vec3::Zero()}, 0.0};
    EXPECT_THROW(optimal_params(c), DomainError);
}

TEST(Geometry, ValidateRejectsOriginAndNonFinite) {
    EXPECT_THROW((SpinGeometry{{Vec3::Zero()}}.validate()), DomainError);
    EXPECT_THROW((SpinGeometry{{Vec3(std::nan(""), 0, 1)}}.validate()), DomainError);
    EXPECT_THROW(SpinGeometry{}.validate(), DomainError);
    EXPECT_NO_THROW(SpinGeometry::chain(4, 0.2, 1.0).validate());
}

TEST(Geometry, PlaneIsSeededAndSeparated) {
    const auto a = SpinGeometry::plane(8, 2.0, 0.5, 42, 0.2);
    const auto b = SpinGeometry::plane(8, 2.0, 0.5, 42, 0.2);
    ASSERT_EQ(a.size(), 8u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.positions[i], b.positions[i]);
        for (std::size_t j = i + 1; j < a.size(); ++j)
            EXPECT_GE((a.positions[i] - a.positions[j]).norm(), 0.2);
    }
}
