#ifndef SPINPAIR_FACTORED_HPP
#define SPINPAIR_FACTORED_HPP

// Large-register engine.  For a product input |psi> = kron_k |psi_k>,
//
//     V^m |psi> = sum over bit strings s of length m of
//                 w_s kron_k (U_{s_m,k} ... U_{s_1,k}) |psi_k>,
//
// with bit 0 selecting U+ (weight |alpha|^2) and bit 1 selecting U-
// (weight |beta|^2).  The ensemble stores the 2^m branches as per-spin
// 2-vectors, never a 2^N state.  Norms and reduced density matrices only
// need the per-spin overlap (Gram) matrices G_k(a, b) = <v_{a,k}|v_{b,k}>.
//
// Cost of extend at step m: O(2^m N) vector updates plus O(4^m N) for the
// two new off-diagonal Gram blocks; the diagonal blocks are inherited
// unchanged because the branch propagators are unitary.

#include "spinpair/core.hpp"
#include "spinpair/dense.hpp"
#include "spinpair/parallel.hpp"
#include "spinpair/spin_core.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace spinpair {

struct EnsembleLimits {
    std::size_t max_branches = std::size_t{1} << 20;
    double max_gram_bytes = 4.0 * 1024 * 1024 * 1024;
};

/// Throws CapacityError when an ensemble of `branches` branches on `n_spins`
/// spins would exceed the branch cap or the overlap-cache budget.
inline void check_capacity(std::size_t branches, std::size_t n_spins, const EnsembleLimits& limits) {
    if (branches > limits.max_branches)
        throw CapacityError("branch ensemble would hold " + std::to_string(branches) + " branches (cap " +
                            std::to_string(limits.max_branches) + "); use the dense engine or fewer measurements");
    const double gram_bytes =
        static_cast<double>(branches) * static_cast<double>(branches) * static_cast<double>(n_spins) * sizeof(cplx);
    if (gram_bytes > limits.max_gram_bytes)
        throw CapacityError("branch ensemble overlap cache would need " + std::to_string(gram_bytes / 1e9) +
                            " GB; use the dense engine or fewer measurements");
}

/// Up-front check for a run of `measurements` readouts (2^M branches).
inline void check_run_capacity(int measurements, std::size_t n_spins, const EnsembleLimits& limits) {
    if (measurements >= 63) check_capacity(std::numeric_limits<std::size_t>::max(), n_spins, limits);
    check_capacity(std::size_t{1} << measurements, n_spins, limits);
}

class BranchEnsemble {
public:
    BranchEnsemble() = default;

    /// Single branch holding a product state.
    static BranchEnsemble from_product(std::span<const Vec2c> spins, EnsembleLimits limits = {}) {
        if (spins.empty()) throw DomainError("BranchEnsemble: need at least one spin");
        BranchEnsemble e;
        e.n_spins_ = spins.size();
        e.limits_ = limits;
        e.weights_ = {cplx{1.0, 0.0}};
        e.vecs_.assign(spins.begin(), spins.end());
        e.gram_.resize(e.n_spins_);
        for (std::size_t k = 0; k < e.n_spins_; ++k) {
            e.gram_[k].resize(1, 1);
            e.gram_[k](0, 0) = spins[k].squaredNorm();
        }
        return e;
    }

    std::size_t n_spins() const { return n_spins_; }
    std::size_t branch_count() const { return weights_.size(); }
    int measurements() const { return measurements_; }
    const std::vector<cplx>& weights() const { return weights_; }
    const Vec2c& vec(std::size_t branch, std::size_t spin) const { return vecs_[branch * n_spins_ + spin]; }
    const MatX& gram(std::size_t spin) const {
        if (!has_overlap_cache()) throw DomainError("BranchEnsemble: overlap cache was released");
        return gram_[spin];
    }
    const EnsembleLimits& limits() const { return limits_; }

    /// One more successful readout.  Branch a keeps index a for the U+ child
    /// and gets index a + B for the U- child, where B is the old count.
    BranchEnsemble extend(std::span<const PropagatorPair> props, cplx alpha, cplx beta) const {
        if (props.size() != n_spins_) throw DomainError("extend: propagator count does not match spin count");
        if (!has_overlap_cache()) throw DomainError("extend: overlap cache was released");
        const double wp = std::norm(alpha), wm = std::norm(beta);
        if (std::abs(wp + wm - 1.0) > 1e-12) throw ConfigError("extend: |alpha|^2 + |beta|^2 must equal 1");
        const std::size_t b_old = branch_count();
        const std::size_t b_new = 2 * b_old;
        check_capacity(b_new, n_spins_, limits_);

        BranchEnsemble out;
        out.n_spins_ = n_spins_;
        out.limits_ = limits_;
        out.measurements_ = measurements_ + 1;
        out.weights_.resize(b_new);
        out.vecs_.resize(b_new * n_spins_);
        for (std::size_t a = 0; a < b_old; ++a) {
            out.weights_[a] = weights_[a] * wp;
            out.weights_[a + b_old] = weights_[a] * wm;
            for (std::size_t k = 0; k < n_spins_; ++k) {
                const Vec2c& v = vecs_[a * n_spins_ + k];
                out.vecs_[a * n_spins_ + k] = props[k].plus * v;
                out.vecs_[(a + b_old) * n_spins_ + k] = props[k].minus * v;
            }
        }
        out.gram_.resize(n_spins_);
        const auto bo = static_cast<Eigen::Index>(b_old);
        for (std::size_t k = 0; k < n_spins_; ++k) {
            Eigen::Matrix<cplx, 2, Eigen::Dynamic> old_vecs(2, bo);
            for (std::size_t a = 0; a < b_old; ++a) old_vecs.col(static_cast<Eigen::Index>(a)) = vecs_[a * n_spins_ + k];
            const Mat2 cross_op = props[k].plus.adjoint() * props[k].minus;
            const MatX cross = old_vecs.adjoint() * (cross_op * old_vecs);
            MatX& g = out.gram_[k];
            g.resize(2 * bo, 2 * bo);
            g.topLeftCorner(bo, bo) = gram_[k];
            g.bottomRightCorner(bo, bo) = gram_[k];
            g.topRightCorner(bo, bo) = cross;
            g.bottomLeftCorner(bo, bo) = cross.adjoint();
        }
        return out;
    }

    /// Frees the per-spin overlap matrices; weights and vectors stay usable
    /// (ensemble_overlap, to_state_vector) but extend and the marginals do not.
    void release_overlap_cache() {
        gram_.clear();
        gram_.shrink_to_fit();
    }

    bool has_overlap_cache() const { return gram_.size() == n_spins_; }

    /// Overlaps recomputed from the stored vectors (consistency checks).
    MatX gram_from_scratch(std::size_t spin) const {
        const std::size_t b = branch_count();
        MatX g(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b));
        for (std::size_t a = 0; a < b; ++a)
            for (std::size_t c = 0; c < b; ++c)
                g(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) = vec(a, spin).dot(vec(c, spin));
        return g;
    }

    /// Full 2^N state vector sum_a w_a kron_k v_{a,k} (small N only).
    VecX to_state_vector() const {
        VecX psi = VecX::Zero(static_cast<Eigen::Index>(register_dim(n_spins_)));
        std::vector<Vec2c> spins(n_spins_);
        for (std::size_t a = 0; a < branch_count(); ++a) {
            for (std::size_t k = 0; k < n_spins_; ++k) spins[k] = vec(a, k);
            psi += weights_[a] * kron_state(spins);
        }
        return psi;
    }

private:
    std::size_t n_spins_ = 0;
    int measurements_ = 0;
    EnsembleLimits limits_{};
    std::vector<cplx> weights_;
    std::vector<Vec2c> vecs_;  // branch-major: vecs_[a * n_spins_ + k]
    std::vector<MatX> gram_;
};

/// Rows of the Gram double sum are reduced in fixed blocks of this size; block
/// partials are added in block order whatever the worker count.
inline constexpr std::size_t kReductionBlock = 64;

/// ||V^m psi||^2 = sum_{a,b} conj(w_a) w_b prod_k G_k(a, b).
inline double success_probability(const BranchEnsemble& e, unsigned workers = 1) {
    const std::size_t b = e.branch_count();
    const std::size_t n_blocks = (b + kReductionBlock - 1) / kReductionBlock;
    std::vector<cplx> partial(n_blocks, cplx{0.0, 0.0});
    const auto& w = e.weights();
    parallel_for(n_blocks, workers, [&](std::size_t blk) {
        const std::size_t a0 = blk * kReductionBlock;
        const std::size_t a1 = std::min(b, a0 + kReductionBlock);
        cplx acc{0.0, 0.0};
        for (std::size_t a = a0; a < a1; ++a) {
            cplx row{0.0, 0.0};
            for (std::size_t c = 0; c < b; ++c) {
                cplx prod = w[c];
                for (std::size_t k = 0; k < e.n_spins(); ++k)
                    prod *= e.gram(k)(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
                row += prod;
            }
            acc += std::conj(w[a]) * row;
        }
        partial[blk] = acc;
    });
    cplx total{0.0, 0.0};
    for (const auto& p : partial) total += p;
    return total.real();
}

namespace detail {

inline MatX gram_product(const BranchEnsemble& e, std::size_t skip_i, std::size_t skip_j) {
    const auto b = static_cast<Eigen::Index>(e.branch_count());
    MatX q = MatX::Ones(b, b);
    for (std::size_t k = 0; k < e.n_spins(); ++k)
        if (k != skip_i && k != skip_j) q.array() *= e.gram(k).array();
    return q;
}

/// rho_ij (unnormalized) = X Q^T X^dag with X(pq, b) = w_b v_{b,i}[p] v_{b,j}[q].
inline Mat4 pair_block(const BranchEnsemble& e, std::size_t i, std::size_t j, const MatX& q) {
    const auto b = static_cast<Eigen::Index>(e.branch_count());
    Eigen::Matrix<cplx, 4, Eigen::Dynamic> x(4, b);
    for (Eigen::Index a = 0; a < b; ++a) {
        const auto ua = static_cast<std::size_t>(a);
        const Vec2c& vi = e.vec(ua, i);
        const Vec2c& vj = e.vec(ua, j);
        const cplx w = e.weights()[ua];
        x(0, a) = w * vi(0) * vj(0);
        x(1, a) = w * vi(0) * vj(1);
        x(2, a) = w * vi(1) * vj(0);
        x(3, a) = w * vi(1) * vj(1);
    }
    return x * q.transpose() * x.adjoint();
}

}  // namespace detail

/// Normalized two-spin reduced density matrix of spins (i, j), ordered as kron(i, j).
inline Mat4 reduced_density_matrix(const BranchEnsemble& e, std::size_t i, std::size_t j) {
    if (i == j) throw DomainError("reduced_density_matrix: spin indices must differ");
    if (i >= e.n_spins() || j >= e.n_spins()) throw DomainError("reduced_density_matrix: spin index out of range");
    Mat4 r = detail::pair_block(e, i, j, detail::gram_product(e, i, j));
    const double tr = r.trace().real();
    if (!(tr > 0.0)) throw DomainError("reduced_density_matrix: ensemble has zero norm");
    r /= tr;
    return 0.5 * (r + r.adjoint());
}

/// Unnormalized marginals for every pair (trace = squared norm), lexicographic order.
/// Uses prefix/suffix Gram products so each pair costs O(4^m).
inline std::vector<PairMarginal> unnormalized_pair_marginals(const BranchEnsemble& e) {
    const std::size_t n = e.n_spins();
    const auto b = static_cast<Eigen::Index>(e.branch_count());
    std::vector<MatX> prefix(n + 1), suffix(n + 2);
    prefix[0] = MatX::Ones(b, b);
    for (std::size_t k = 0; k < n; ++k) prefix[k + 1] = prefix[k].cwiseProduct(e.gram(k));
    suffix[n] = MatX::Ones(b, b);
    for (std::size_t k = n; k-- > 0;) suffix[k] = suffix[k + 1].cwiseProduct(e.gram(k));
    std::vector<PairMarginal> out;
    for (std::size_t i = 0; i < n; ++i) {
        MatX middle = MatX::Ones(b, b);
        for (std::size_t j = i + 1; j < n; ++j) {
            if (j > i + 1) middle = middle.cwiseProduct(e.gram(j - 1));
            const MatX q = prefix[i].cwiseProduct(middle).cwiseProduct(suffix[j + 1]);
            out.push_back({i, j, detail::pair_block(e, i, j, q)});
        }
    }
    return out;
}

inline std::vector<PairMarginal> pair_marginals(const BranchEnsemble& e) {
    auto out = unnormalized_pair_marginals(e);
    for (auto& pm : out) {
        const double tr = pm.rho.trace().real();
        if (!(tr > 0.0)) throw DomainError("pair_marginals: ensemble has zero norm");
        pm.rho /= tr;
        pm.rho = (0.5 * (pm.rho + pm.rho.adjoint())).eval();
    }
    return out;
}

/// <phi|chi> for two ensembles over the same spins.
inline cplx ensemble_overlap(const BranchEnsemble& phi, const BranchEnsemble& chi) {
    if (phi.n_spins() != chi.n_spins()) throw DomainError("ensemble_overlap: spin count mismatch");
    cplx total{0.0, 0.0};
    for (std::size_t a = 0; a < phi.branch_count(); ++a) {
        cplx row{0.0, 0.0};
        for (std::size_t c = 0; c < chi.branch_count(); ++c) {
            cplx prod = chi.weights()[c];
            for (std::size_t k = 0; k < phi.n_spins(); ++k) prod *= phi.vec(a, k).dot(chi.vec(c, k));
            row += prod;
        }
        total += std::conj(phi.weights()[a]) * row;
    }
    return total;
}

struct FactoredRun {
    std::vector<StepRecord> steps;  // purity is 1 for pure inputs
    BranchEnsemble ensemble;
    RunStatus status = RunStatus::complete;
    int extinct_step = 0;
};

/// Pure product input pushed through cfg.max_measurements readouts.
inline FactoredRun run_factored(std::span<const Vec2c> product_input, const ProtocolConfig& cfg,
                                const CouplingSet& c, EnsembleLimits limits = {}, unsigned workers = 1) {
    cfg.validate();
    if (cfg.dephasing_rate > 0.0)
        throw ConfigError("the factored engine evolves pure states only; dephasing needs the dense engine");
    if (product_input.size() != c.size()) throw DomainError("run_factored: input size does not match couplings");
    check_run_capacity(cfg.max_measurements, c.size(), limits);
    CouplingSet cc = c;
    cc.omega = cfg.omega;
    const auto props = propagators(cc, cfg.tau);
    FactoredRun run;
    run.ensemble = BranchEnsemble::from_product(product_input, limits);
    double prev = success_probability(run.ensemble, workers);
    double log_cum = 0.0;
    for (int m = 1; m <= cfg.max_measurements; ++m) {
        BranchEnsemble next = run.ensemble.extend(props, cfg.alpha, cfg.beta);
        const double norm = success_probability(next, workers);
        const double p = norm / prev;
        if (!(p >= cfg.extinction_floor)) {
            run.status = RunStatus::extinct;
            run.extinct_step = m;
            break;
        }
        log_cum += std::log10(p);
        run.steps.push_back({m, p, std::pow(10.0, log_cum), log_cum, 1.0});
        run.ensemble = std::move(next);
        prev = norm;
    }
    return run;
}

enum class Unraveling { haar, z_basis };

struct MonteCarloOptions {
    std::size_t samples = 1000;
    std::uint64_t seed = 1;
    Unraveling unraveling = Unraveling::haar;
    std::size_t purity_pairs = 256;  // disjoint sample pairs used for the purity estimate
    unsigned workers = 1;
    EnsembleLimits limits{};
};

struct MonteCarloResult {
    std::size_t samples = 0;
    double success_probability = 0.0;  // estimate of Tr[V^M rho0 V^M^dag]
    double success_stderr = 0.0;
    double purity_estimate = 0.0;      // Tr[rho^2] from distinct-sample overlaps
    std::vector<PairMarginal> pair_rdms;  // normalized
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::vector<Vec2c> sample_product_state(std::size_t n, std::uint64_t seed, Unraveling how) {
    std::mt19937_64 rng(seed);
    std::vector<Vec2c> out(n);
    if (how == Unraveling::haar) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (auto& v : out) {
            v(0) = cplx{gauss(rng), gauss(rng)};
            v(1) = cplx{gauss(rng), gauss(rng)};
            v.normalize();
        }
    } else {
        std::bernoulli_distribution coin(0.5);
        for (auto& v : out) v = coin(rng) ? Vec2c(0.0, 1.0) : Vec2c(1.0, 0.0);
    }
    return out;
}

}  // namespace detail

/// Unravels the maximally mixed bath into random product states; V^M acts
/// linearly, so averaging the unnormalized outcomes estimates V^M rho0 V^M^dag.
/// Per-sample seeds are derived from (seed, sample index), so results do not
/// depend on the worker count.
inline MonteCarloResult mixed_state_monte_carlo(const CouplingSet& c, const ProtocolConfig& cfg,
                                                const MonteCarloOptions& opt) {
    cfg.validate();
    if (opt.samples < 1) throw ConfigError("mixed_state_monte_carlo: need at least one sample");
    if (cfg.dephasing_rate > 0.0) throw ConfigError("mixed_state_monte_carlo: dephasing needs the dense engine");
    check_run_capacity(cfg.max_measurements, c.size(), opt.limits);
    CouplingSet cc = c;
    cc.omega = cfg.omega;
    const auto props = propagators(cc, cfg.tau);
    const std::size_t n = c.size();

    struct Sample {
        double norm = 0.0;
        std::vector<PairMarginal> rdms;
        BranchEnsemble ensemble;
    };
    const std::size_t n_pairs = std::min(opt.purity_pairs, opt.samples / 2);
    std::vector<Sample> samples(opt.samples);
    parallel_for(opt.samples, opt.workers, [&](std::size_t s) {
        const auto input = detail::sample_product_state(n, detail::splitmix64(opt.seed ^ detail::splitmix64(s)),
                                                        opt.unraveling);
        BranchEnsemble e = BranchEnsemble::from_product(input, opt.limits);
        for (int m = 0; m < cfg.max_measurements; ++m) e = e.extend(props, cfg.alpha, cfg.beta);
        samples[s].norm = success_probability(e);
        samples[s].rdms = unnormalized_pair_marginals(e);
        if (s < 2 * n_pairs) {
            e.release_overlap_cache();
            samples[s].ensemble = std::move(e);
        }
    });

    MonteCarloResult out;
    out.samples = opt.samples;
    const double r = static_cast<double>(opt.samples);
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& s : samples) {
        sum += s.norm;
        sum_sq += s.norm * s.norm;
    }
    out.success_probability = sum / r;
    const double var = opt.samples > 1 ? (sum_sq - sum * sum / r) / (r - 1.0) : 0.0;
    out.success_stderr = std::sqrt(std::max(var, 0.0) / r);

    out.pair_rdms = samples.front().rdms;
    for (auto& pm : out.pair_rdms) pm.rho.setZero();
    for (const auto& s : samples)
        for (std::size_t p = 0; p < s.rdms.size(); ++p) out.pair_rdms[p].rho += s.rdms[p].rho;
    for (auto& pm : out.pair_rdms) {
        pm.rho /= pm.rho.trace().real();
        pm.rho = (0.5 * (pm.rho + pm.rho.adjoint())).eval();
    }

    if (n_pairs > 0) {
        std::vector<double> terms(n_pairs);
        parallel_for(n_pairs, opt.workers, [&](std::size_t t) {
            terms[t] = std::norm(ensemble_overlap(samples[2 * t].ensemble, samples[2 * t + 1].ensemble));
        });
        double acc = 0.0;
        for (double v : terms) acc += v;
        out.purity_estimate = (acc / static_cast<double>(n_pairs)) / (out.success_probability * out.success_probability);
    }
    return out;
}

}  // namespace spinpair

#endif  // SPINPAIR_FACTORED_HPP
