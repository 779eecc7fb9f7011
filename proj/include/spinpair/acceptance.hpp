#ifndef SPINPAIR_ACCEPTANCE_HPP
#define SPINPAIR_ACCEPTANCE_HPP

// End-to-end acceptance checks shared by the acceptance binary and the
// `selftest` subcommand.  Each check returns a verdict plus the measured
// numbers behind it.

#include "spinpair/analysis.hpp"
#include "spinpair/dense.hpp"
#include "spinpair/factored.hpp"
#include "spinpair/protocols.hpp"
#include "spinpair/reference.hpp"
#include "spinpair/runner.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <random>

namespace spinpair::acceptance {

struct Verdict {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

namespace detail {

inline CouplingSet random_couplings(std::size_t n, std::mt19937_64& rng, double omega) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    CouplingSet c;
    for (std::size_t k = 0; k < n; ++k) c.g.emplace_back(u(rng), u(rng), u(rng));
    c.omega = omega;
    return c;
}

inline Vec2c random_spin(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    return Vec2c(cplx{g(rng), g(rng)}, cplx{g(rng), g(rng)}).normalized();
}

inline MatX random_density(std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    const auto d = static_cast<Eigen::Index>(dim);
    MatX a(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) a(i, j) = cplx{g(rng), g(rng)};
    MatX rho = a * a.adjoint();
    return rho / rho.trace().real();
}

inline CouplingSet chain_couplings(std::size_t n) {
    const double d = 0.2;
    auto c = dipolar_couplings(SpinGeometry::chain(n, d, 30 * d, 45 * d));
    c.omega = optimal_params(c).omega;
    return c;
}

inline ProtocolConfig optimal_protocol(const CouplingSet& c, int measurements) {
    ProtocolConfig p;
    const auto op = optimal_params(c);
    p.omega = op.omega;
    p.tau = op.tau;
    p.max_measurements = measurements;
    p.readout_time = op.tau;
    return p;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

/// V formalism against the explicit joint rotate-evolve-rotate-project sequence.
inline Verdict oracle_equivalence() {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_p = 0.0, worst_rho = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(trial % 4);
        const auto c = detail::random_couplings(n, rng, 2.0 * u(rng) - 1.0);
        const double tau = 0.2 + 1.5 * u(rng);
        // odd trials use a general readout state, even trials the pi/2 pulse
        cplx a{1.0 / std::sqrt(2.0), 0.0}, b = a;
        Mat2 r = reference::rotation_x(pi / 2);
        if (trial % 2 == 1) {
            const double th = pi * u(rng), p1 = 2 * pi * u(rng), p2 = 2 * pi * u(rng);
            a = std::cos(th / 2) * std::exp(I_unit * p1);
            b = std::sin(th / 2) * std::exp(I_unit * p2);
            r = reference::preparation_rotation(a, b);
        }
        const BathStateDense s{detail::random_density(register_dim(n), rng), n};
        const auto mine = apply_projection(s, build_V(c, tau, a, b));
        const auto ref = reference::joint_sequence(c, tau, r, s.rho);
        worst_p = std::max(worst_p, std::abs(mine.probability - ref.probability));
        worst_rho = std::max(worst_rho, max_abs(mine.state.rho - ref.state));
    }
    return {1, "oracle equivalence (N<=4, 20 coupling sets)", worst_p <= 1e-10 && worst_rho <= 1e-10,
            fmt::format("max |dp| = {:.3e}, max |drho| = {:.3e} (tol 1e-10)", worst_p, worst_rho)};
}

/// Dense engine against the branch-ensemble engine on pure product inputs.
inline Verdict dense_vs_factored() {
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_p = 0.0, worst_rdm = 0.0;
    const std::size_t n = 6;
    for (int trial = 0; trial < 20; ++trial) {
        const auto c = detail::random_couplings(n, rng, 2.0 * u(rng) - 1.0);
        ProtocolConfig p;
        p.omega = c.omega;
        p.tau = 0.3 + u(rng);
        p.max_measurements = 8;
        std::vector<Vec2c> in;
        for (std::size_t k = 0; k < n; ++k) in.push_back(detail::random_spin(rng));
        const auto dense = run_protocol(BathStateDense::product(in), p, c);
        const auto fact = run_factored(in, p, c);
        if (dense.steps.size() != fact.steps.size())
            return {2, "dense vs factored (N=6, M=8)", false, "step counts differ"};
        for (std::size_t m = 0; m < dense.steps.size(); ++m)
            worst_p = std::max(worst_p, std::abs(dense.steps[m].cumulative_p - fact.steps[m].cumulative_p));
        const auto a = pair_marginals(dense.final_state);
        const auto b = pair_marginals(fact.ensemble);
        for (std::size_t k = 0; k < a.size(); ++k) worst_rdm = std::max(worst_rdm, max_abs(MatX(a[k].rho - b[k].rho)));
    }
    return {2, "dense vs factored (N=6, M=8, 20 coupling sets)", worst_p <= 1e-10 && worst_rdm <= 1e-10,
            fmt::format("max |dP_S| = {:.3e}, max |dRDM| = {:.3e} (tol 1e-10)", worst_p, worst_rdm)};
}

struct ChainRun {
    Trajectory traj;
    PairAssignment pairing;
};

inline ChainRun chain_run() {
    const auto c = detail::chain_couplings(10);
    ChainRun r;
    r.traj = run_protocol(BathStateDense::maximally_mixed(10), detail::optimal_protocol(c, 100), c);
    if (r.traj.status == RunStatus::complete) r.pairing = detect_pairing(pair_marginals(r.traj.final_state), 0.9);
    return r;
}

/// Purity growth and success-probability plateau on the N=10 chain.
inline Verdict chain_purification(const ChainRun& run) {
    const auto& s = run.traj.steps;
    if (run.traj.status != RunStatus::complete || s.size() != 100)
        return {3, "N=10 chain purification", false, "trajectory went extinct"};
    int first = 0;
    for (const auto& r : s)
        if (!first && r.purity > 0.9) first = r.step;
    double min_last = 1.0;
    for (std::size_t k = s.size() - 10; k < s.size(); ++k) min_last = std::min(min_last, s[k].conditional_p);
    const bool ok = first > 0 && min_last > 0.99;
    return {3, "N=10 chain purification and P_S plateau", ok,
            fmt::format("initial purity 2^-10, purity > 0.9 first at M = {}, final purity {:.6f}, "
                        "min conditional p over last 10 steps {:.6f} (need > 0.99), final P_S {:.4e}",
                        first, s.back().purity, min_last, s.back().cumulative_p)};
}

/// Nearest-neighbour singlet matching in the same run.
inline Verdict chain_pairing(const ChainRun& run) {
    if (run.traj.status != RunStatus::complete) return {4, "nearest-neighbour pairing", false, "no final state"};
    bool ok = run.pairing.pairs.size() == 5;
    double worst = 1.0;
    std::string got;
    for (const auto& p : run.pairing.pairs) {
        got += fmt::format("({},{})", p.i + 1, p.j + 1);
        worst = std::min(worst, p.fidelity);
        ok = ok && p.j == p.i + 1 && p.i % 2 == 0 && p.fidelity > 0.9;
    }
    return {4, "nearest-neighbour pairing on the N=10 chain", ok,
            fmt::format("matching {} min fidelity {:.6f} (need > 0.9)", got, worst)};
}

/// omega = 0: two-branch steady state for random couplings and the 1/6 state
/// for identical couplings.  "Steady" is M = 2^17 readouts, reached by
/// repeated squaring of V; the spectral gap for N = 6 can need ~10^4 steps.
inline Verdict classical_regime() {
    constexpr int doublings = 17;
    const cplx h{1.0 / std::sqrt(2.0), 0.0};
    std::mt19937_64 rng(303);
    bool ok = true;
    std::string detail;
    for (std::size_t n : {4u, 6u}) {
        for (int trial = 0; trial < 3; ++trial) {
            const auto c = detail::random_couplings(n, rng, 0.0);
            const auto st = repeated_projection(BathStateDense::maximally_mixed(n), build_V(c, 0.5, h, h), doublings);
            const auto r = classical_steady_state_check(st.state, c);
            const bool good = std::abs(r.purity - 0.5) <= 0.05 && std::abs(r.eigenvalues[0] - 0.5) <= 0.05 &&
                              std::abs(r.eigenvalues[1] - 0.5) <= 0.05;
            ok = ok && good;
            detail += fmt::format("N={} purity {:.4f} lambda {:.4f}/{:.4f}; ", n, r.purity, r.eigenvalues[0],
                                  r.eigenvalues[1]);
        }
    }
    const Vec3 g(0.0, 0.0, 1.0);
    const CouplingSet same{{g, g, g, g}, 0.0};
    const auto st = repeated_projection(BathStateDense::maximally_mixed(4), build_V(same, 0.3, h, h), doublings);
    const auto r = classical_steady_state_check(st.state, same);
    bool sector = true;
    for (int a : r.support_alignment) sector = sector && a == 0;
    ok = ok && std::abs(r.purity - 1.0 / 6.0) <= 1e-6 && sector;
    detail += fmt::format("identical N=4 purity {:.9f} (1/6), zero-magnetization support {}; M = 2^{}", r.purity,
                          sector ? "yes" : "no", doublings);
    return {5, "classical regime at omega = 0", ok, detail};
}

/// Echo verification ratio for (g1, g2) = (3, 4) and the decoupled singlet.
inline Verdict verification_ratio() {
    const auto res = verify_protocol(VerifySpec{});
    VerifySpec same;
    same.g1 = same.g2 = 3.0;
    const auto dec = verify_protocol(same);
    bool ok = res.unpolarized.m_star && res.singlet.m_star && !dec.singlet.m_star;
    double ratio = 0.0;
    if (res.unpolarized.m_star && res.singlet.m_star) {
        ratio = static_cast<double>(*res.singlet.m_star) / *res.unpolarized.m_star;
        ok = ok && std::abs(ratio - 5.0) <= 0.25 * 5.0;
    }
    return {6, "verification ratio law", ok,
            fmt::format("unpolarized {}, singlet {}, ratio {:.3f} (target 5 +/- 25%); g1 = g2 singlet: {}",
                        res.unpolarized.describe(), res.singlet.describe(), ratio, dec.singlet.describe())};
}

/// Average concurrence versus readout dephasing on the N=6 chain.
inline Verdict dephasing_trend() {
    const auto c = detail::chain_couplings(6);
    std::vector<double> conc;
    std::string detail;
    for (double gt : {0.0, 0.01, 0.03, 0.1, 0.3}) {
        auto p = detail::optimal_protocol(c, 300);
        p.dephasing_rate = gt / p.tau;
        const auto t = run_protocol(BathStateDense::maximally_mixed(6), p, c);
        conc.push_back(t.status == RunStatus::complete ? average_concurrence(pair_marginals(t.final_state))
                                                       : std::nan(""));
        detail += fmt::format("{}:{:.6f} ", gt, conc.back());
    }
    bool ok = true;
    for (std::size_t k = 1; k < conc.size(); ++k) ok = ok && conc[k] <= conc[k - 1] + 1e-12;
    return {7, "concurrence non-increasing in gamma_d tau", ok, "gamma_d tau:C " + detail};
}

/// Side-species spectroscopy and paired-bath coherence.
inline Verdict sensing() {
    SpectroscopyDesign d;
    const auto bath = make_species_bath(d);
    std::vector<double> tau;
    for (int i = 0; i <= 300; ++i) tau.push_back(0.6 + 0.4 * i / 300.0);
    const auto paired = spectroscopy_scan(bath, Preparation::singlet_paired, tau, d.repetitions);
    const auto unpol = spectroscopy_scan(bath, Preparation::unpolarized, tau, d.repetitions);
    const auto rp = side_features(tau, paired, d.omega, d.epsilon, 0.25, 0.02);
    const auto ru = side_features(tau, unpol, d.omega, d.epsilon, 0.25, 0.02);

    const auto c = detail::chain_couplings(6);
    const double ge = effective_coupling(c);
    std::vector<double> t;
    for (int i = 1; i <= 40; ++i) t.push_back(8.0 * i / 40.0 / ge);
    const auto sb = SpinBath::uniform(c);
    const auto lm = coherence_trace(sb, BathPreparation::mixed(6), t);
    const auto lp = coherence_trace(sb, BathPreparation::singlet_paired(6, consecutive_pairs(6)), t);
    bool above = true;
    double margin = 1.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        above = above && lp[i] > lm[i];
        margin = std::min(margin, lp[i] - lm[i]);
    }
    return {8, "sensing: side features and paired coherence", rp.resolved && !ru.resolved && above,
            fmt::format("epsilon = omega/10: paired resolved {}, unpolarized resolved {}; "
                        "coherence paired > mixed at all {} points {} (min margin {:.3e})",
                        rp.resolved, ru.resolved, t.size(), above, margin)};
}

/// 16x16 scan at N=8, run twice; timing and byte comparison.
inline Verdict scan_determinism(const std::filesystem::path& scratch, unsigned threads) {
    ParsedConfig pc;
    pc.cfg.geometry.n = 8;
    for (int i = 0; i < 16; ++i) {
        pc.cfg.scan_omega.push_back(0.25 + 3.75 * i / 15.0);
        pc.cfg.scan_tau.push_back(0.25 + 3.75 * i / 15.0);
    }
    pc.cfg.seed = 7;
    pc.cfg.threads = threads;
    std::string a, b;
    double seconds = 0.0;
    for (int run = 0; run < 2; ++run) {
        pc.cfg.out = (scratch / fmt::format("scan{}", run)).string();
        const auto t0 = std::chrono::steady_clock::now();
        run_scan(validate_config(pc));
        seconds = std::max(seconds,
                           std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        (run == 0 ? a : b) = detail::read_file(std::filesystem::path(pc.cfg.out) / "scan.tsv");
    }
    const bool same = !a.empty() && a == b;
    return {9, "16x16 scan at N=8: byte-reproducible and under 30 min", same && seconds < 1800.0,
            fmt::format("identical tables {}, slowest run {:.1f} s with {} worker(s)", same, seconds, threads)};
}

/// Runs every criterion in order, reporting each one through `report` as it
/// finishes.
inline std::vector<Verdict> run_all(const std::filesystem::path& scratch, unsigned threads,
                                    const std::function<void(const Verdict&)>& report = {}) {
    std::vector<Verdict> out;
    auto timed = [&](const std::function<Verdict()>& f) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = f();
        } catch (const std::exception& e) {
            v.detail = std::string("exception: ") + e.what();
        }
        v.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(v);
        if (report) report(out.back());
    };
    timed(oracle_equivalence);
    timed(dense_vs_factored);
    ChainRun chain;
    timed([&] {
        chain = chain_run();
        return chain_purification(chain);
    });
    timed([&] { return chain_pairing(chain); });
    timed(classical_regime);
    timed(verification_ratio);
    timed(dephasing_trend);
    timed(sensing);
    timed([&] { return scan_determinism(scratch, threads); });
    return out;
}

inline std::string format_verdict(const Verdict& v) {
    return fmt::format("AC{} {} {} [{:.1f}s]: {}", v.id, v.passed ? "PASS" : "FAIL", v.name, v.seconds, v.detail);
}

}  // namespace spinpair::acceptance

#endif  // SPINPAIR_ACCEPTANCE_HPP
