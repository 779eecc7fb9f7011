#ifndef SPINPAIR_PROTOCOLS_HPP
#define SPINPAIR_PROTOCOLS_HPP

// Pulse-sequence protocols on the central spin.
//
// Echo sequence: R(pi/2) [U(tau) R(pi) U(tau)]^m R_final, with
// R(theta) = exp(-i theta sigma^x / 2) and the joint free evolution
// U(tau) = |+1><+1| (x) U+ + |-1><-1| (x) U-.  Each pi pulse swaps the branch,
// so the bath sees W_s = prod_j U_{s^j} U_{s^(j-1)} for initial branch s, and
//
//     P_flip = sum_{s,s'} c_s conj(c_s') Tr[W_{s'}^dag W_s rho],
//     c_s    = R_final(1, s^m) (-i)^m R(pi/2)(s, 0).
//
// W_s is a product over bath spins, so the trace factorizes over the
// independent blocks (single spins or pairs) of the bath preparation.
// R_final = R(-pi/2 - m pi) undoes the pulse train, so without a bath the
// central spin always returns to its start (no flip).

#include "spinpair/core.hpp"
#include "spinpair/parallel.hpp"
#include "spinpair/spin_core.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace spinpair {

inline Mat2 rotation_x(double theta) {
    return std::cos(0.5 * theta) * Mat2::Identity() - I_unit * std::sin(0.5 * theta) * pauli::x();
}

/// Bath spins with individual Larmor frequencies.
struct SpinBath {
    std::vector<Vec3> g;
    std::vector<double> omega;

    std::size_t size() const { return g.size(); }
    static SpinBath uniform(const CouplingSet& c) { return {c.g, std::vector<double>(c.size(), c.omega)}; }
};

/// Independent blocks of a product bath state: one spin (2x2) or two (4x4,
/// ordered as kron(spins[0], spins[1])).
struct BathBlock {
    std::vector<std::size_t> spins;
    MatX rho;
};

struct BathPreparation {
    std::vector<BathBlock> blocks;

    static BathPreparation mixed(std::size_t n) {
        BathPreparation p;
        for (std::size_t k = 0; k < n; ++k) p.blocks.push_back({{k}, MatX::Identity(2, 2) / 2.0});
        return p;
    }

    /// Every spin in |+1>.
    static BathPreparation polarized(std::size_t n) {
        BathPreparation p;
        MatX up = MatX::Zero(2, 2);
        up(0, 0) = 1.0;
        for (std::size_t k = 0; k < n; ++k) p.blocks.push_back({{k}, up});
        return p;
    }

    /// Singlets (|+1,-1> - |-1,+1>)/sqrt(2) on the listed pairs, every other spin mixed.
    static BathPreparation singlet_paired(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
        BathPreparation p;
        std::vector<bool> used(n, false);
        VecX s = VecX::Zero(4);
        s(1) = 1.0 / std::sqrt(2.0);
        s(2) = -1.0 / std::sqrt(2.0);
        for (const auto& [a, b] : pairs) {
            if (a >= n || b >= n || a == b || used[a] || used[b])
                throw DomainError("singlet_paired: pairs must be disjoint valid spin indices");
            used[a] = used[b] = true;
            p.blocks.push_back({{a, b}, s * s.adjoint()});
        }
        for (std::size_t k = 0; k < n; ++k)
            if (!used[k]) p.blocks.push_back({{k}, MatX::Identity(2, 2) / 2.0});
        return p;
    }

    void validate(std::size_t n) const {
        std::vector<int> seen(n, 0);
        for (const auto& b : blocks) {
            const auto dim = static_cast<Eigen::Index>(register_dim(b.spins.size()));
            if (b.spins.empty() || b.spins.size() > 2 || b.rho.rows() != dim || b.rho.cols() != dim)
                throw DomainError("BathPreparation: blocks hold one or two spins with matching matrices");
            for (auto k : b.spins) {
                if (k >= n) throw DomainError("BathPreparation: spin index out of range");
                ++seen[k];
            }
        }
        for (int v : seen)
            if (v != 1) throw DomainError("BathPreparation: every spin must belong to exactly one block");
    }
};

struct EchoSequence {
    int repetitions = 1;  // m
    double tau = 0.0;     // free evolution on each side of a pi pulse
};

namespace detail {

/// Per-spin bath operators W_0, W_1 of the echo train.
inline std::pair<Mat2, Mat2> echo_operators(const PropagatorPair& u, int m) {
    Mat2 w0 = Mat2::Identity(), w1 = Mat2::Identity();
    const Mat2 block0 = u.minus * u.plus;  // enter in +1, leave in -1
    const Mat2 block1 = u.plus * u.minus;
    for (int j = 0; j < m; ++j) {
        const bool even = j % 2 == 0;
        w0 = (even ? block0 : block1) * w0;
        w1 = (even ? block1 : block0) * w1;
    }
    return {w0, w1};
}

/// Tr[(kron_k a_k)^dag (kron_k b_k) rho] for the product preparation.
inline cplx product_expectation(const std::vector<Mat2>& a, const std::vector<Mat2>& b, const BathPreparation& prep) {
    cplx total{1.0, 0.0};
    for (const auto& blk : prep.blocks) {
        if (blk.spins.size() == 1) {
            const std::size_t k = blk.spins[0];
            total *= (a[k].adjoint() * b[k] * blk.rho).trace();
        } else {
            const std::size_t i = blk.spins[0], j = blk.spins[1];
            const MatX op = kron(MatX(a[i].adjoint() * b[i]), MatX(a[j].adjoint() * b[j]));
            total *= (op * blk.rho).trace();
        }
    }
    return total;
}

}  // namespace detail

/// Probability that the central spin, started in |+1>, ends in |-1>.
inline double echo_flip_probability(const SpinBath& bath, const BathPreparation& prep, const EchoSequence& seq) {
    if (seq.repetitions < 1) throw ConfigError("echo sequence needs at least one repetition");
    if (!(seq.tau >= 0.0)) throw ConfigError("echo sequence needs tau >= 0");
    prep.validate(bath.size());
    const auto props = propagators(bath.g, bath.omega, seq.tau);
    std::vector<Mat2> w0, w1;
    for (const auto& u : props) {
        const auto [a, b] = detail::echo_operators(u, seq.repetitions);
        w0.push_back(a);
        w1.push_back(b);
    }
    const int m = seq.repetitions;
    const Mat2 first = rotation_x(pi / 2);
    const Mat2 last = rotation_x(-pi / 2 - m * pi);
    const cplx pulse_phase = std::pow(-I_unit, m);
    cplx c[2];
    for (int s = 0; s < 2; ++s) c[s] = last(1, (s + m) % 2) * pulse_phase * first(s, 0);
    const std::vector<Mat2>* w[2] = {&w0, &w1};
    double p = 0.0;
    for (int s = 0; s < 2; ++s)
        for (int t = 0; t < 2; ++t)
            p += (c[s] * std::conj(c[t]) * detail::product_expectation(*w[t], *w[s], prep)).real();
    return std::clamp(p, 0.0, 1.0);
}

/// Two-spin verification bath: H = S^z (g1 I^x_1 + g2 I^x_2) + omega (I^z_1 + I^z_2).
inline SpinBath verification_bath(double g1, double g2, double omega) {
    return {{Vec3(g1, 0, 0), Vec3(g2, 0, 0)}, {omega, omega}};
}

struct VerificationResult {
    std::vector<double> flip_probability;  // index m-1
    std::optional<int> m_star;             // first m above threshold
    double max_probability = 0.0;
    int max_at = 0;

    std::string describe() const {
        if (m_star) return "m* = " + std::to_string(*m_star);
        return "threshold not reached (max " + std::to_string(max_probability) + " at m = " + std::to_string(max_at) + ")";
    }
};

/// Dynamical-decoupling resonance of a Larmor frequency in the Pauli convention.
inline double resonant_tau(double omega) { return pi / (4.0 * omega); }

inline VerificationResult verification_scan(const SpinBath& bath, const BathPreparation& prep, double tau_v, int m_max,
                                            double threshold = 0.5) {
    if (m_max < 1) throw ConfigError("verification_scan: m_max must be >= 1");
    VerificationResult r;
    for (int m = 1; m <= m_max; ++m) {
        const double p = echo_flip_probability(bath, prep, {m, tau_v});
        r.flip_probability.push_back(p);
        if (p > r.max_probability) {
            r.max_probability = p;
            r.max_at = m;
        }
        if (!r.m_star && p > threshold) r.m_star = m;
    }
    return r;
}

/// |Tr[U-(t)^dag U+(t) rho]| for the central spin prepared in (|+1> + |-1>)/sqrt(2).
inline std::vector<double> coherence_trace(const SpinBath& bath, const BathPreparation& prep,
                                           const std::vector<double>& t_grid) {
    prep.validate(bath.size());
    std::vector<double> out;
    out.reserve(t_grid.size());
    for (double t : t_grid) {
        if (!(t >= 0.0)) throw ConfigError("coherence_trace: times must be >= 0");
        const auto props = propagators(bath.g, bath.omega, t);
        std::vector<Mat2> up, um;
        for (const auto& u : props) {
            up.push_back(u.plus);
            um.push_back(u.minus);
        }
        out.push_back(std::min(1.0, std::abs(detail::product_expectation(um, up, prep))));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Multi-species spectroscopy

struct SpeciesGroup {
    std::string label;
    double omega = 0.0;
    std::vector<Vec3> g;
};

enum class Preparation { unpolarized, polarized, singlet_paired };

inline const char* to_string(Preparation p) {
    switch (p) {
        case Preparation::unpolarized: return "unpolarized";
        case Preparation::polarized: return "polarized";
        case Preparation::singlet_paired: return "singlet_paired";
    }
    return "?";
}

/// Group 0 is the strongly coupled host species whose consecutive spins
/// (0,1), (2,3), ... are paired under the singlet preparation; the other
/// groups are probed species and always start unpolarized.
struct SpeciesBath {
    std::vector<SpeciesGroup> groups;

    SpinBath flatten() const {
        SpinBath b;
        for (const auto& grp : groups)
            for (const auto& g : grp.g) {
                b.g.push_back(g);
                b.omega.push_back(grp.omega);
            }
        return b;
    }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& grp : groups) n += grp.g.size();
        return n;
    }

    BathPreparation preparation(Preparation p) const {
        const std::size_t n = size();
        if (p == Preparation::unpolarized) return BathPreparation::mixed(n);
        if (p == Preparation::polarized) return BathPreparation::polarized(n);
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        if (!groups.empty())
            for (std::size_t k = 0; k + 1 < groups[0].g.size(); k += 2) pairs.emplace_back(k, k + 1);
        return BathPreparation::singlet_paired(n, pairs);
    }

    /// Same bath with the host species removed.
    SpeciesBath without_host() const {
        SpeciesBath out;
        out.groups.assign(groups.begin() + (groups.empty() ? 0 : 1), groups.end());
        return out;
    }
};

struct SpectroscopyDesign {
    double omega = 1.0;
    double epsilon = 0.1;        // side species at omega +/- epsilon
    double host_coupling = 0.3;  // transverse coupling of the host pairs
    double pair_mismatch = 0.01; // relative coupling difference inside a host pair
    std::size_t host_pairs = 2;
    double probe_coupling = 0.02;
    int repetitions = 40;
};

/// Host pairs with nearly equal transverse couplings plus one weakly coupled
/// spin per side species.
inline SpeciesBath make_species_bath(const SpectroscopyDesign& d) {
    if (d.epsilon < 0.0) throw ConfigError("spectroscopy: epsilon must be >= 0");
    SpeciesBath b;
    SpeciesGroup host{"host", d.omega, {}};
    for (std::size_t p = 0; p < d.host_pairs; ++p) {
        const double phi = 0.7 * static_cast<double>(p);
        const double scale = d.host_coupling / (1.0 + static_cast<double>(p));
        const Vec3 dir(std::cos(phi), std::sin(phi), 0.0);
        host.g.push_back(scale * dir);
        host.g.push_back(scale * (1.0 + d.pair_mismatch) * dir);
    }
    b.groups.push_back(host);
    b.groups.push_back({"upper", d.omega + d.epsilon, {Vec3(d.probe_coupling, 0.0, 0.0)}});
    b.groups.push_back({"lower", d.omega - d.epsilon, {Vec3(0.0, d.probe_coupling, 0.0)}});
    return b;
}

/// Central-spin flip probability after a fixed echo train, versus tau.
inline std::vector<double> spectroscopy_scan(const SpeciesBath& bath, Preparation prep,
                                             const std::vector<double>& tau_grid, int repetitions,
                                             unsigned workers = 1) {
    const SpinBath flat = bath.flatten();
    const BathPreparation bp = bath.preparation(prep);
    std::vector<double> out(tau_grid.size());
    parallel_for(tau_grid.size(), workers,
                 [&](std::size_t i) { out[i] = echo_flip_probability(flat, bp, {repetitions, tau_grid[i]}); });
    return out;
}

struct Feature {
    std::size_t index = 0;
    double position = 0.0;
    double height = 0.0;
    double prominence = 0.0;
};

/// Local maxima whose topographic prominence reaches min_prominence.
inline std::vector<Feature> find_features(const std::vector<double>& x, const std::vector<double>& y,
                                          double min_prominence) {
    if (x.size() != y.size()) throw DomainError("find_features: grid and signal lengths differ");
    std::vector<Feature> out;
    const std::size_t n = y.size();
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!(y[i] > y[i - 1] && y[i] >= y[i + 1])) continue;
        double left = y[i], right = y[i];
        std::size_t j = i;
        while (j > 0 && y[j - 1] <= y[i]) left = std::min(left, y[--j]);
        bool left_bounded = j > 0;
        j = i;
        while (j + 1 < n && y[j + 1] <= y[i]) right = std::min(right, y[++j]);
        bool right_bounded = j + 1 < n;
        // an unbounded side is measured against its lowest point
        double base;
        if (left_bounded && right_bounded) base = std::max(left, right);
        else if (left_bounded) base = left;
        else if (right_bounded) base = right;
        else base = std::min(left, right);
        const double prom = y[i] - base;
        if (prom >= min_prominence) out.push_back({i, x[i], y[i], prom});
    }
    return out;
}

struct ResolutionReport {
    double tau_upper = 0.0;  // resonance of omega + epsilon
    double tau_lower = 0.0;  // resonance of omega - epsilon
    std::optional<Feature> upper;
    std::optional<Feature> lower;
    bool resolved = false;  // two distinct features, one at each side resonance
};

/// A side species counts as resolved when a feature sits within `window`
/// (relative) of its resonance and the two features are distinct.
inline ResolutionReport side_features(const std::vector<double>& tau, const std::vector<double>& signal, double omega,
                                      double epsilon, double min_prominence, double window) {
    ResolutionReport r;
    r.tau_upper = resonant_tau(omega + epsilon);
    r.tau_lower = resonant_tau(omega - epsilon);
    const auto feats = find_features(tau, signal, min_prominence);
    auto nearest = [&](double target) -> std::optional<Feature> {
        std::optional<Feature> best;
        for (const auto& f : feats) {
            if (std::abs(f.position - target) > window * target) continue;
            if (!best || std::abs(f.position - target) < std::abs(best->position - target)) best = f;
        }
        return best;
    };
    r.upper = nearest(r.tau_upper);
    r.lower = nearest(r.tau_lower);
    r.resolved = r.upper && r.lower && r.upper->index != r.lower->index;
    return r;
}

}  // namespace spinpair

#endif  // SPINPAIR_PROTOCOLS_HPP
