#ifndef SPINPAIR_REFERENCE_HPP
#define SPINPAIR_REFERENCE_HPP

// Brute-force constructions used as independent oracles: explicit joint
// central+bath Hamiltonians, exponentiated by diagonalization, and the
// physical rotate-evolve-rotate-project readout.  Exponential in N; tests
// and selftest only.

#include "spinpair/core.hpp"
#include "spinpair/spin_core.hpp"

#include <Eigen/Eigenvalues>

namespace spinpair::reference {

/// exp(i H t) for Hermitian H.
inline MatX expi_hermitian(const MatX& h, double t) {
    Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (h + h.adjoint()));
    const VecX phases = (I_unit * t * es.eigenvalues().cast<cplx>()).array().exp();
    return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

/// Operator `op` on spin k of an n-spin register, as a full matrix.
inline MatX embed(const Mat2& op, std::size_t n, std::size_t k) {
    MatX out = MatX::Identity(1, 1);
    for (std::size_t q = 0; q < n; ++q) out = kron(out, q == k ? MatX(op) : MatX(Mat2::Identity()));
    return out;
}

/// sum_k omega_k sigma^z_k + sign * g_k . sigma_k on the bath register.
inline MatX bath_hamiltonian(const std::vector<Vec3>& g, const std::vector<double>& omega, double sign) {
    const std::size_t n = g.size();
    const auto d = static_cast<Eigen::Index>(register_dim(n));
    MatX h = MatX::Zero(d, d);
    for (std::size_t k = 0; k < n; ++k)
        h += embed(omega[k] * pauli::z() + sign * pauli::dot(g[k]), n, k);
    return h;
}

inline MatX bath_hamiltonian(const CouplingSet& c, double sign) {
    return bath_hamiltonian(c.g, std::vector<double>(c.size(), c.omega), sign);
}

/// Joint Hamiltonian |+1><+1| (x) H+ + |-1><-1| (x) H-, central spin first.
inline MatX joint_hamiltonian(const CouplingSet& c) {
    Mat2 up = Mat2::Zero(), down = Mat2::Zero();
    up(0, 0) = 1.0;
    down(1, 1) = 1.0;
    return kron(MatX(up), bath_hamiltonian(c, +1.0)) + kron(MatX(down), bath_hamiltonian(c, -1.0));
}

/// exp(-i theta/2 sigma^x).
inline Mat2 rotation_x(double theta) {
    return std::cos(0.5 * theta) * Mat2::Identity() - I_unit * std::sin(0.5 * theta) * pauli::x();
}

/// Central-spin unitary R with R|-1> = alpha|+1> + beta|-1>.
inline Mat2 preparation_rotation(cplx alpha, cplx beta) {
    Mat2 r;
    r << -std::conj(beta), alpha, std::conj(alpha), beta;
    return r;
}

struct Readout {
    MatX state;  // normalized post-readout bath state
    double probability = 0.0;
};

/// Central spin starts in |-1>, rotated by R, joint evolution exp(i H tau),
/// rotated back by R^dag, then projected onto |-1>.
inline Readout joint_sequence(const CouplingSet& c, double tau, const Mat2& r, const MatX& bath) {
    const std::size_t n = c.size();
    const auto d = static_cast<Eigen::Index>(register_dim(n));
    Mat2 start = Mat2::Zero();
    start(1, 1) = 1.0;
    const MatX rot = kron(MatX(r), MatX::Identity(d, d));
    const MatX u = expi_hermitian(joint_hamiltonian(c), tau);
    const MatX total = rot.adjoint() * u * rot;
    const MatX out = total * kron(MatX(start), bath) * total.adjoint();
    Readout res;
    const MatX block = out.bottomRightCorner(d, d);
    res.probability = block.trace().real();
    res.state = block / res.probability;
    return res;
}

/// V assembled from exponentiated bath Hamiltonians.
inline MatX brute_force_V(const CouplingSet& c, double tau, cplx alpha, cplx beta) {
    return std::norm(alpha) * expi_hermitian(bath_hamiltonian(c, +1.0), tau) +
           std::norm(beta) * expi_hermitian(bath_hamiltonian(c, -1.0), tau);
}

}  // namespace spinpair::reference

#endif  // SPINPAIR_REFERENCE_HPP
