#ifndef SPINPAIR_ANALYSIS_HPP
#define SPINPAIR_ANALYSIS_HPP

#include "spinpair/core.hpp"
#include "spinpair/dense.hpp"
#include "spinpair/spin_core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <vector>

namespace spinpair {

namespace detail {

inline void require_state(const Mat4& rho, const char* who, double tol = 1e-8) {
    if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > tol)
        throw DomainError(std::string(who) + ": matrix is not Hermitian");
    Eigen::SelfAdjointEigenSolver<Mat4> es(rho, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -tol) throw DomainError(std::string(who) + ": matrix is not positive semidefinite");
}

inline double wrap_phase(double phi) {
    double out = std::fmod(phi, 2.0 * pi);
    if (out < 0.0) out += 2.0 * pi;
    if (out >= 2.0 * pi) out = 0.0;
    return out;
}

}  // namespace detail

/// Wootters concurrence.  With rho = A A^dag, the square roots of the
/// eigenvalues of rho rho~ are the singular values of the symmetric matrix
/// A^T (sigma_y x sigma_y) A.  Working with A instead of sqrt(rho rho~) keeps
/// pure states accurate to machine precision.
inline double concurrence(const Mat4& rho) {
    detail::require_state(rho, "concurrence");
    Eigen::SelfAdjointEigenSolver<Mat4> es(0.5 * (rho + rho.adjoint()));
    const double cutoff = 1e-13 * std::max(1.0, es.eigenvalues().maxCoeff());
    Eigen::Vector4d root;
    for (int k = 0; k < 4; ++k) root(k) = es.eigenvalues()(k) > cutoff ? std::sqrt(es.eigenvalues()(k)) : 0.0;
    const Mat4 a = es.eigenvectors() * root.cast<cplx>().asDiagonal();
    const Mat4 yy = MatX(kron(MatX(pauli::y()), MatX(pauli::y())));
    const Mat4 b = a.transpose() * yy * a;
    Eigen::JacobiSVD<Mat4> svd(b);
    const Eigen::Vector4d lam = svd.singularValues();  // descending
    return std::max(0.0, lam(0) - lam(1) - lam(2) - lam(3));
}

/// (|+1,-1> - e^{i phi} |-1,+1>) / sqrt(2).
inline Eigen::Vector4cd phased_singlet(double phi) {
    Eigen::Vector4cd s = Eigen::Vector4cd::Zero();
    s(1) = 1.0 / std::sqrt(2.0);
    s(2) = -std::exp(I_unit * phi) / std::sqrt(2.0);
    return s;
}

/// <S(phi)| rho |S(phi)> = (rho11 + rho22)/2 - Re(e^{i phi} rho12).
inline double pair_fidelity(const Mat4& rho, double phi) {
    return 0.5 * (rho(1, 1).real() + rho(2, 2).real()) - (std::exp(I_unit * phi) * rho(1, 2)).real();
}

struct PhaseFit {
    double phase = 0.0;  // in [0, 2 pi)
    double fidelity = 0.0;
};

inline PhaseFit best_phase(const Mat4& rho) {
    const cplx r12 = rho(1, 2);
    const double base = 0.5 * (rho(1, 1).real() + rho(2, 2).real());
    if (std::abs(r12) == 0.0) return {0.0, base};
    return {detail::wrap_phase(pi - std::arg(r12)), base + std::abs(r12)};
}

struct AssignedPair {
    std::size_t i = 0;
    std::size_t j = 0;
    double phase = 0.0;
    double fidelity = 0.0;
    double concurrence = 0.0;
    bool paired = false;  // fidelity above the pairing threshold
};

struct PairAssignment {
    std::vector<AssignedPair> pairs;  // disjoint, in selection order
    std::size_t paired_count() const {
        return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.paired; }));
    }
    bool any_paired() const { return paired_count() > 0; }
};

struct PairScore {
    std::size_t i = 0;
    std::size_t j = 0;
    double phase = 0.0;
    double fidelity = 0.0;
    double concurrence = 0.0;
};

inline std::vector<PairScore> score_pairs(const std::vector<PairMarginal>& rdms) {
    std::vector<PairScore> out;
    out.reserve(rdms.size());
    for (const auto& pm : rdms) {
        const auto fit = best_phase(pm.rho);
        out.push_back({pm.i, pm.j, fit.phase, fit.fidelity, concurrence(pm.rho)});
    }
    return out;
}

/// Greedy matching on best-phase fidelity: take the highest remaining pair
/// whose spins are both free; ties go to the lexicographically smaller pair.
inline PairAssignment detect_pairing(const std::vector<PairMarginal>& rdms, double threshold = 0.5) {
    std::vector<PairScore> scores = score_pairs(rdms);
    std::stable_sort(scores.begin(), scores.end(), [](const PairScore& a, const PairScore& b) {
        if (a.fidelity != b.fidelity) return a.fidelity > b.fidelity;
        return std::pair(a.i, a.j) < std::pair(b.i, b.j);
    });
    std::size_t n = 0;
    for (const auto& s : scores) n = std::max({n, s.i + 1, s.j + 1});
    std::vector<bool> used(n, false);
    PairAssignment out;
    for (const auto& s : scores) {
        if (used[s.i] || used[s.j]) continue;
        used[s.i] = used[s.j] = true;
        out.pairs.push_back({s.i, s.j, s.phase, s.fidelity, s.concurrence, s.fidelity > threshold});
    }
    return out;
}

/// Mean concurrence over every spin pair.
inline double average_concurrence(const std::vector<PairMarginal>& rdms) {
    if (rdms.empty()) return 0.0;
    double s = 0.0;
    for (const auto& pm : rdms) s += concurrence(pm.rho);
    return s / static_cast<double>(rdms.size());
}

struct ClassicalReport {
    double offdiagonal_norm = 0.0;       // Frobenius norm off the diagonal in the H_B eigenbasis
    std::vector<double> eigenvalues;     // descending
    std::size_t rank = 0;                // eigenvalues above the support tolerance
    double purity = 0.0;
    std::vector<std::size_t> support;    // H_B eigenbasis states carrying weight
    std::vector<int> support_alignment;  // sum_k s_k, s_k = +1 when spin k is aligned with g_k
    bool two_branch = false;             // support is {|phi_1..phi_N>, |phi_1^perp..phi_N^perp>}
};

/// Per-spin eigenbasis of g_k . sigma, aligned state first.  Uncoupled spins
/// use the computational basis.
inline std::vector<Mat2> bath_eigenbasis(const CouplingSet& c) {
    std::vector<Mat2> out;
    for (const auto& g : c.g) {
        if (g.norm() == 0.0) {
            out.push_back(Mat2::Identity());
            continue;
        }
        Eigen::SelfAdjointEigenSolver<Mat2> es(pauli::dot(g));
        Mat2 b;
        b.col(0) = es.eigenvectors().col(1);
        b.col(1) = es.eigenvectors().col(0);
        out.push_back(b);
    }
    return out;
}

/// Certifies the classically correlated steady state of the omega = 0 dynamics.
inline ClassicalReport classical_steady_state_check(const BathStateDense& s, const CouplingSet& c,
                                                    double support_tol = 1e-8) {
    if (c.omega != 0.0) throw DomainError("classical_steady_state_check: requires omega = 0");
    if (c.size() != s.n_spins) throw DomainError("classical_steady_state_check: coupling count mismatch");
    const std::size_t n = s.n_spins;
    const MatX b = kron_all(bath_eigenbasis(c));
    MatX in_basis = b.adjoint() * s.rho * b;

    ClassicalReport r;
    r.purity = purity(s.rho);
    for (Eigen::Index i = 0; i < in_basis.rows(); ++i) {
        const double w = in_basis(i, i).real();
        if (w > support_tol) {
            r.support.push_back(static_cast<std::size_t>(i));
            int align = 0;
            for (std::size_t k = 0; k < n; ++k) align += ((static_cast<std::size_t>(i) >> (n - 1 - k)) & 1U) ? -1 : 1;
            r.support_alignment.push_back(align);
        }
    }
    in_basis.diagonal().setZero();
    r.offdiagonal_norm = in_basis.norm();

    Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (s.rho + s.rho.adjoint()), Eigen::EigenvaluesOnly);
    for (Eigen::Index i = es.eigenvalues().size(); i-- > 0;) r.eigenvalues.push_back(es.eigenvalues()(i));
    r.rank = static_cast<std::size_t>(
        std::count_if(r.eigenvalues.begin(), r.eigenvalues.end(), [&](double v) { return v > support_tol; }));
    const std::size_t all_ones = register_dim(n) - 1;
    r.two_branch = r.support.size() == 2 && (r.support[0] ^ r.support[1]) == all_ones;
    return r;
}

}  // namespace spinpair

#endif  // SPINPAIR_ANALYSIS_HPP
