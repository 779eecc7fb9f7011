#ifndef SPINPAIR_DENSE_HPP
#define SPINPAIR_DENSE_HPP

// Exact conditional evolution of the full 2^N bath density matrix under
// repeated successful central-spin readouts.
//
// A successful readout in the state alpha|1> + beta|-1> acts on the bath as
//
//     V = |alpha|^2 U+ + |beta|^2 U-,     U(+/-) = kron_k U(+/-)_k,
//
// and the bath is renormalized by the success probability Tr[V rho V^dag].
// V is never formed explicitly on the hot path: both branches are Kronecker
// products, so V rho V^dag costs O(N 4^N) instead of O(8^N).

#include "spinpair/core.hpp"
#include "spinpair/spin_core.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace spinpair {

struct ProtocolConfig {
    double omega = 0.0;
    double tau = 0.0;
    int max_measurements = 1;
    cplx alpha{1.0 / std::sqrt(2.0), 0.0};
    cplx beta{1.0 / std::sqrt(2.0), 0.0};
    double dephasing_rate = 0.0;  // gamma_d, 1/s
    double readout_time = 0.0;    // time the dephasing channel acts per round
    double extinction_floor = 1e-14;

    /// Collects every violated invariant into one message.
    std::vector<std::string> problems() const {
        std::vector<std::string> out;
        if (max_measurements < 1) out.emplace_back("max_measurements must be >= 1");
        if (!(tau >= 0.0) || !std::isfinite(tau)) out.emplace_back("tau must be finite and >= 0");
        if (!std::isfinite(omega)) out.emplace_back("omega must be finite");
        const double norm = std::norm(alpha) + std::norm(beta);
        if (std::abs(norm - 1.0) > 1e-12) out.emplace_back("|alpha|^2 + |beta|^2 must equal 1");
        if (!(dephasing_rate >= 0.0)) out.emplace_back("dephasing_rate must be >= 0");
        if (!(readout_time >= 0.0)) out.emplace_back("readout_time must be >= 0");
        if (!(extinction_floor >= 0.0)) out.emplace_back("extinction_floor must be >= 0");
        return out;
    }

    void validate() const {
        const auto p = problems();
        if (p.empty()) return;
        std::string msg = "ProtocolConfig:";
        for (const auto& s : p) msg += " " + s + ";";
        throw ConfigError(msg);
    }
};

/// Bath density matrix on n_spins spins.
struct BathStateDense {
    MatX rho;
    std::size_t n_spins = 0;

    static BathStateDense maximally_mixed(std::size_t n) {
        const auto d = static_cast<Eigen::Index>(register_dim(n));
        return {MatX::Identity(d, d) / static_cast<double>(d), n};
    }

    static BathStateDense pure(const VecX& psi, std::size_t n) {
        if (static_cast<std::size_t>(psi.size()) != register_dim(n))
            throw DomainError("BathStateDense::pure: vector length does not match 2^N");
        const VecX u = psi / psi.norm();
        return {u * u.adjoint(), n};
    }

    static BathStateDense product(std::span<const Vec2c> spins) {
        return pure(kron_state(spins), spins.size());
    }

    /// Checks Hermiticity, unit trace and positivity at the given tolerances.
    bool is_valid(double tol = 1e-12, double eig_tol = 1e-10) const {
        if (static_cast<std::size_t>(rho.rows()) != register_dim(n_spins) || rho.rows() != rho.cols())
            return false;
        if (max_abs(rho - rho.adjoint()) > tol) return false;
        if (std::abs(rho.trace() - cplx{1.0, 0.0}) > tol) return false;
        Eigen::SelfAdjointEigenSolver<MatX> es(rho, Eigen::EigenvaluesOnly);
        return es.eigenvalues().minCoeff() >= -eig_tol;
    }
};

/// Tr[rho^2] for a Hermitian rho.
inline double purity(const MatX& rho) { return rho.cwiseAbs2().sum(); }
inline double purity(const BathStateDense& s) { return purity(s.rho); }

/// The non-unitary conditional map V in factorized form.
struct ConditionalMap {
    std::vector<Mat2> plus;
    std::vector<Mat2> minus;
    std::vector<Mat2> plus_adj;
    std::vector<Mat2> minus_adj;
    double w_plus = 0.5;   // |alpha|^2
    double w_minus = 0.5;  // |beta|^2

    std::size_t n_spins() const { return plus.size(); }

    /// Explicit 2^N x 2^N matrix (tests and small registers only).
    MatX matrix() const {
        return w_plus * kron_all(plus) + w_minus * kron_all(minus);
    }

    MatX apply(const MatX& m) const {
        MatX out = w_plus * apply_product_left(m, plus);
        if (w_minus != 0.0) out += w_minus * apply_product_left(m, minus);
        return out;
    }
};

inline ConditionalMap build_V(const CouplingSet& c, double tau, cplx alpha, cplx beta) {
    const double wp = std::norm(alpha);
    const double wm = std::norm(beta);
    if (std::abs(wp + wm - 1.0) > 1e-12) throw ConfigError("build_V: |alpha|^2 + |beta|^2 must equal 1");
    ConditionalMap v;
    v.w_plus = wp;
    v.w_minus = wm;
    for (const auto& pp : propagators(c, tau)) {
        v.plus.push_back(pp.plus);
        v.minus.push_back(pp.minus);
        v.plus_adj.push_back(pp.plus.adjoint());
        v.minus_adj.push_back(pp.minus.adjoint());
    }
    return v;
}

struct ProjectionResult {
    BathStateDense state;
    double probability = 0.0;
    bool extinct = false;
};

namespace detail {

/// Unnormalized post-readout bath state, optionally with the central-spin
/// depolarizing channel (survival factor `coherence` = exp(-gamma t)) applied
/// to the joint state just before the projective readout.
inline MatX conditional_update(const MatX& rho, const ConditionalMap& v, double coherence) {
    MatX xp = apply_product_left(rho, v.plus);
    MatX xm = v.w_minus != 0.0 ? apply_product_left(rho, v.minus) : MatX::Zero(rho.rows(), rho.cols());
    const MatX w = v.w_plus * xp + v.w_minus * xm;
    MatX out = v.w_plus * apply_product_right(w, v.plus_adj);
    if (v.w_minus != 0.0) out += v.w_minus * apply_product_right(w, v.minus_adj);
    if (coherence < 1.0) {
        MatX mixed = v.w_plus * apply_product_right(xp, v.plus_adj);
        if (v.w_minus != 0.0) mixed += v.w_minus * apply_product_right(xm, v.minus_adj);
        out = coherence * out + 0.5 * (1.0 - coherence) * mixed;
    }
    return out;
}

inline void hermitize(MatX& m) { m = 0.5 * (m + m.adjoint()).eval(); }

}  // namespace detail

/// rho -> V rho V^dag / p with p = Tr[V rho V^dag].  Below `floor` the
/// trajectory is reported extinct and the state is left unnormalized.
inline ProjectionResult apply_projection(const BathStateDense& s, const ConditionalMap& v,
                                         double floor = 1e-14) {
    if (v.n_spins() != s.n_spins) throw DomainError("apply_projection: register size mismatch");
    MatX out = detail::conditional_update(s.rho, v, 1.0);
    const double p = out.trace().real();
    if (!(p >= floor)) return {{std::move(out), s.n_spins}, p, true};
    out /= p;
    detail::hermitize(out);
    return {{std::move(out), s.n_spins}, p, false};
}

/// Same as apply_projection with the readout dephasing channel folded in.
inline ProjectionResult apply_projection_dephased(const BathStateDense& s, const ConditionalMap& v,
                                                  double gamma_d, double readout_time, double floor = 1e-14) {
    if (gamma_d < 0.0) throw ConfigError("dephasing rate must be >= 0");
    MatX out = detail::conditional_update(s.rho, v, std::exp(-gamma_d * readout_time));
    const double p = out.trace().real();
    if (!(p >= floor)) return {{std::move(out), s.n_spins}, p, true};
    out /= p;
    detail::hermitize(out);
    return {{std::move(out), s.n_spins}, p, false};
}

/// Joint (central x bath) state; the central spin is the most significant qubit.
inline MatX joint_state(const Mat2& central, const MatX& bath) { return kron(MatX(central), bath); }

/// Partial trace over the central spin of a joint state.
inline MatX trace_central(const MatX& joint) {
    const Eigen::Index d = joint.rows() / 2;
    return joint.topLeftCorner(d, d) + joint.bottomRightCorner(d, d);
}

/// Central-spin marginal of a joint state.
inline Mat2 central_marginal(const MatX& joint) {
    const Eigen::Index d = joint.rows() / 2;
    Mat2 out;
    out(0, 0) = joint.topLeftCorner(d, d).trace();
    out(0, 1) = joint.topRightCorner(d, d).trace();
    out(1, 0) = joint.bottomLeftCorner(d, d).trace();
    out(1, 1) = joint.bottomRightCorner(d, d).trace();
    return out;
}

/// Markovian central-spin channel
///   E(rho) = 1/2 (1 - e^{-gamma t}) 1 (x) Tr_S(rho) + e^{-gamma t} rho.
inline MatX dephase(const MatX& joint, double gamma_d, double t) {
    if (gamma_d < 0.0) throw ConfigError("dephase: gamma_d must be >= 0");
    if (joint.rows() % 2 != 0 || joint.rows() != joint.cols())
        throw DomainError("dephase: joint state must be square with even dimension");
    const double keep = std::exp(-gamma_d * t);
    if (keep == 1.0) return joint;
    const MatX bath = trace_central(joint);
    return 0.5 * (1.0 - keep) * kron(MatX::Identity(2, 2), bath) + keep * joint;
}

struct StepRecord {
    int step = 0;
    double conditional_p = 0.0;
    double cumulative_p = 0.0;
    double log10_cumulative_p = 0.0;
    double purity = 0.0;
};

enum class RunStatus { complete, extinct };

struct Trajectory {
    std::vector<StepRecord> steps;
    RunStatus status = RunStatus::complete;
    int extinct_step = 0;  // 1-based index of the failing readout
    BathStateDense final_state;
};

/// Called after each successful readout with the step number and new state.
using StepObserver = std::function<void(int, const BathStateDense&)>;

/// Repeated readouts: each round applies V (and the readout dephasing when
/// dephasing_rate > 0) and renormalizes.  cfg.omega overrides c.omega.
inline Trajectory run_protocol(const BathStateDense& rho0, const ProtocolConfig& cfg, const CouplingSet& c,
                               const StepObserver& observer = {}) {
    cfg.validate();
    if (c.size() != rho0.n_spins) throw DomainError("run_protocol: coupling count does not match bath size");
    CouplingSet cc = c;
    cc.omega = cfg.omega;
    const ConditionalMap v = build_V(cc, cfg.tau, cfg.alpha, cfg.beta);
    const double coherence = std::exp(-cfg.dephasing_rate * cfg.readout_time);

    Trajectory traj;
    traj.steps.reserve(static_cast<std::size_t>(cfg.max_measurements));
    MatX rho = rho0.rho;
    double log_cum = 0.0;
    for (int m = 1; m <= cfg.max_measurements; ++m) {
        MatX next = detail::conditional_update(rho, v, coherence);
        const double p = next.trace().real();
        if (!(p >= cfg.extinction_floor)) {
            traj.status = RunStatus::extinct;
            traj.extinct_step = m;
            break;
        }
        next /= p;
        detail::hermitize(next);
        rho = std::move(next);
        log_cum += std::log10(p);
        StepRecord rec;
        rec.step = m;
        rec.conditional_p = p;
        rec.log10_cumulative_p = log_cum;
        rec.cumulative_p = std::pow(10.0, log_cum);
        rec.purity = purity(rho);
        traj.steps.push_back(rec);
        if (observer) observer(m, BathStateDense{rho, rho0.n_spins});
    }
    traj.final_state = {std::move(rho), rho0.n_spins};
    return traj;
}

struct PowerResult {
    BathStateDense state;
    double log10_p = 0.0;  // log10 Tr[V^M rho V^M^dag]
    long long measurements = 0;
};

/// State after M = 2^doublings successful readouts (no dephasing), using
/// repeated squaring of V with rescaling so long runs do not underflow.
inline PowerResult repeated_projection(const BathStateDense& s, const ConditionalMap& v, int doublings) {
    if (doublings < 0 || doublings > 60) throw ConfigError("repeated_projection: doublings must be in [0, 60]");
    if (v.n_spins() != s.n_spins) throw DomainError("repeated_projection: register size mismatch");
    MatX w = v.matrix();
    double log10_scale = 0.0;  // w = V^M / 10^log10_scale
    for (int k = 0; k < doublings; ++k) {
        w = (w * w).eval();
        log10_scale *= 2.0;
        const double norm = w.norm();
        if (!(norm > 0.0)) throw DomainError("repeated_projection: V^M vanished");
        w /= norm;
        log10_scale += std::log10(norm);
    }
    MatX out = w * s.rho * w.adjoint();
    const double t = out.trace().real();
    out /= t;
    detail::hermitize(out);
    return {{std::move(out), s.n_spins}, std::log10(t) + 2.0 * log10_scale, 1LL << doublings};
}

struct PairMarginal {
    std::size_t i = 0;
    std::size_t j = 0;
    Mat4 rho = Mat4::Zero();
};

/// All N(N-1)/2 two-spin marginals in lexicographic (i, j) order.
inline std::vector<PairMarginal> pair_marginals(const BathStateDense& s) {
    std::vector<PairMarginal> out;
    for (std::size_t i = 0; i < s.n_spins; ++i)
        for (std::size_t j = i + 1; j < s.n_spins; ++j) out.push_back({i, j, two_spin_marginal(s.rho, s.n_spins, i, j)});
    return out;
}

}  // namespace spinpair

#endif  // SPINPAIR_DENSE_HPP
