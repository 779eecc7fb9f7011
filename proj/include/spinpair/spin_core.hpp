#ifndef SPINPAIR_SPIN_CORE_HPP
#define SPINPAIR_SPIN_CORE_HPP

// Geometry of the nuclear-spin bath, the secular dipolar couplings to the
// central spin, and the exact per-spin propagators of the two conditional
// bath Hamiltonians
//
//     H(+/-) = sum_k omega I^z_k  +/-  sum_k g_k . I_k
//
// with I represented by Pauli matrices (eigenvalues +/-1).

#include "spinpair/core.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace spinpair {

/// Bath spin positions (nm) relative to the central spin at the origin.
/// The quantization axis is z.
struct SpinGeometry {
    std::vector<Vec3> positions;

    std::size_t size() const { return positions.size(); }

    void validate() const {
        if (positions.empty()) throw DomainError("SpinGeometry: need at least one bath spin");
        for (std::size_t k = 0; k < positions.size(); ++k) {
            const Vec3& p = positions[k];
            if (!std::isfinite(p.x()) || !std::isfinite(p.y()) || !std::isfinite(p.z()))
                throw DomainError("SpinGeometry: non-finite position for spin " + std::to_string(k));
            if (p.norm() == 0.0)
                throw DomainError("SpinGeometry: spin " + std::to_string(k) + " sits at the origin");
        }
    }

    /// Linear chain along x at height z0: x_k = x_offset + k*spacing, k = 1..n.
    static SpinGeometry chain(std::size_t n, double spacing, double z0, double x_offset = 0.0) {
        SpinGeometry g;
        g.positions.reserve(n);
        for (std::size_t k = 1; k <= n; ++k)
            g.positions.emplace_back(x_offset + static_cast<double>(k) * spacing, 0.0, z0);
        return g;
    }

    /// n spins drawn uniformly in the square [-box/2, box/2]^2 at height z0,
    /// rejecting draws closer than min_separation to an earlier spin.
    static SpinGeometry plane(std::size_t n, double box, double z0, std::uint64_t seed,
                              double min_separation = 0.0) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-0.5 * box, 0.5 * box);
        SpinGeometry g;
        std::size_t attempts = 0;
        while (g.positions.size() < n) {
            if (++attempts > 100000 * (n + 1))
                throw DomainError("SpinGeometry::plane: cannot place spins with the requested separation");
            const double x = u(rng);
            const double y = u(rng);
            Vec3 p(x, y, z0);
            bool ok = p.norm() > 0.0;
            for (const auto& q : g.positions) ok = ok && (p - q).norm() >= min_separation;
            if (ok) g.positions.push_back(p);
        }
        return g;
    }
};

/// Per-spin coupling vectors (rad/s) plus the uniform Larmor frequency.
struct CouplingSet {
    std::vector<Vec3> g;
    double omega = 0.0;

    std::size_t size() const { return g.size(); }

    CouplingSet scaled(double factor) const {
        CouplingSet c = *this;
        for (auto& v : c.g) v *= factor;
        return c;
    }
};

/// Conditional single-spin propagators for a fixed dwell time.
struct PropagatorPair {
    Mat2 plus = Mat2::Identity();
    Mat2 minus = Mat2::Identity();
};

/// Secular dipolar field of a z-polarized central spin at the origin:
/// g_k = prefactor / r^3 * (3 (z.r_hat) r_hat - z).
inline CouplingSet dipolar_couplings(const SpinGeometry& geom, double prefactor = 1.0) {
    if (geom.positions.empty()) throw DomainError("dipolar_couplings: empty geometry");
    CouplingSet c;
    c.g.reserve(geom.size());
    for (std::size_t k = 0; k < geom.size(); ++k) {
        const Vec3& r = geom.positions[k];
        const double rn = r.norm();
        if (!(rn > 0.0))
            throw DomainError("dipolar_couplings: spin " + std::to_string(k) + " has zero radius");
        const Vec3 rh = r / rn;
        c.g.push_back(prefactor / (rn * rn * rn) * (3.0 * rh.z() * rh - Vec3::UnitZ()));
    }
    return c;
}

/// exp(i (omega z + sign g) . sigma tau) in closed form.
inline Mat2 conditional_propagator(const Vec3& g, double omega, double tau, double sign) {
    const Vec3 n = omega * Vec3::UnitZ() + sign * g;
    const double delta = n.norm();
    const double phase = delta * tau;
    // sin(delta tau)/delta, continuous through delta = 0
    const double sinc_tau = phase < 1e-8 ? tau * (1.0 - phase * phase / 6.0) : std::sin(phase) / delta;
    return std::cos(phase) * Mat2::Identity() + I_unit * sinc_tau * pauli::dot(n);
}

inline PropagatorPair single_spin_propagators(const Vec3& g, double omega, double tau) {
    if (tau < 0.0) throw DomainError("single_spin_propagators: tau must be non-negative");
    return {conditional_propagator(g, omega, tau, +1.0), conditional_propagator(g, omega, tau, -1.0)};
}

inline std::vector<PropagatorPair> propagators(const CouplingSet& c, double tau) {
    std::vector<PropagatorPair> out;
    out.reserve(c.size());
    for (const auto& g : c.g) out.push_back(single_spin_propagators(g, c.omega, tau));
    return out;
}

/// Per-spin Larmor frequencies (used by multi-species baths).
inline std::vector<PropagatorPair> propagators(const std::vector<Vec3>& g, const std::vector<double>& omega,
                                               double tau) {
    if (g.size() != omega.size()) throw DomainError("propagators: coupling/frequency length mismatch");
    std::vector<PropagatorPair> out;
    out.reserve(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) out.push_back(single_spin_propagators(g[k], omega[k], tau));
    return out;
}

/// sqrt(1/N sum_k |g_k|^2), the unit of the omega-tau scan axes.
inline double effective_coupling(const CouplingSet& c) {
    if (c.g.empty()) throw DomainError("effective_coupling: empty coupling set");
    double s = 0.0;
    for (const auto& v : c.g) s += v.squaredNorm();
    return std::sqrt(s / static_cast<double>(c.g.size()));
}

struct FieldAndTime {
    double omega;
    double tau;
};

/// Heuristic operating point: omega = (1/2N) sum_k sum_l |g^l_k|, tau = 1/omega.
inline FieldAndTime optimal_params(const CouplingSet& c) {
    if (c.g.empty()) throw DomainError("optimal_params: empty coupling set");
    double s = 0.0;
    for (const auto& v : c.g) s += v.cwiseAbs().sum();
    const double omega = s / (2.0 * static_cast<double>(c.g.size()));
    if (!(omega > 0.0)) throw DomainError("optimal_params: all couplings are zero");
    return {omega, 1.0 / omega};
}

}  // namespace spinpair

#endif  // SPINPAIR_SPIN_CORE_HPP
