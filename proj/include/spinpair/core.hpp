#ifndef SPINPAIR_CORE_HPP
#define SPINPAIR_CORE_HPP

// Shared numeric types, error classes and qubit-register helpers.
//
// Basis convention used everywhere in the library: a single spin has basis
// index 0 for the I^z = +1 eigenstate and index 1 for I^z = -1.  In a register
// of N spins, spin 0 is the most significant bit of the basis index, so
// operators compose as kron(op_0, op_1, ..., op_{N-1}).

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spinpair {

using cplx = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2cd;
using Mat4 = Eigen::Matrix4cd;
using Vec2c = Eigen::Vector2cd;
using MatX = Eigen::MatrixXcd;
using VecX = Eigen::VectorXcd;

inline constexpr cplx I_unit{0.0, 1.0};
inline constexpr double pi = 3.14159265358979323846;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent parameters (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// A representation outgrew its configured size cap (CLI exit code 4).
class CapacityError : public Error {
public:
    using Error::Error;
};

namespace pauli {
inline Mat2 identity() { return Mat2::Identity(); }
inline Mat2 x() {
    Mat2 m;
    m << 0.0, 1.0, 1.0, 0.0;
    return m;
}
inline Mat2 y() {
    Mat2 m;
    m << 0.0, -I_unit, I_unit, 0.0;
    return m;
}
inline Mat2 z() {
    Mat2 m;
    m << 1.0, 0.0, 0.0, -1.0;
    return m;
}
/// n.sigma for a real 3-vector n.
inline Mat2 dot(const Vec3& n) { return n.x() * x() + n.y() * y() + n.z() * z(); }
}  // namespace pauli

inline std::size_t register_dim(std::size_t n_spins) { return std::size_t{1} << n_spins; }

/// Kronecker product of two dense matrices.
inline MatX kron(const MatX& a, const MatX& b) {
    MatX out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

/// kron(ops[0], ops[1], ...) as an explicit 2^N x 2^N matrix.
inline MatX kron_all(std::span<const Mat2> ops) {
    MatX out = MatX::Identity(1, 1);
    for (const auto& op : ops) out = kron(out, MatX(op));
    return out;
}

namespace detail {

// Plain complex arithmetic: std::complex operator* handles inf/nan per
// Annex G, which keeps the hot loops from vectorizing.
inline cplx cmul(cplx a, cplx b) {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

inline cplx cfma2(cplx a, cplx x, cplx b, cplx y) { return cmul(a, x) + cmul(b, y); }

}  // namespace detail

/// Left-multiply m by `op` acting on spin k of an n-spin register (in place).
inline void apply_left(MatX& m, std::size_t n_spins, std::size_t k, const Mat2& op) {
    const Eigen::Index stride = Eigen::Index{1} << (n_spins - 1 - k);
    const Eigen::Index rows = m.rows();
    const cplx a = op(0, 0), b = op(0, 1), c = op(1, 0), d = op(1, 1);
    for (Eigen::Index col = 0; col < m.cols(); ++col) {
        cplx* v = m.col(col).data();
        for (Eigen::Index base = 0; base < rows; base += 2 * stride) {
            for (Eigen::Index i = base; i < base + stride; ++i) {
                const cplx x0 = v[i], x1 = v[i + stride];
                v[i] = detail::cfma2(a, x0, b, x1);
                v[i + stride] = detail::cfma2(c, x0, d, x1);
            }
        }
    }
}

/// Right-multiply m by `op` acting on spin k of an n-spin register (in place).
inline void apply_right(MatX& m, std::size_t n_spins, std::size_t k, const Mat2& op) {
    const Eigen::Index stride = Eigen::Index{1} << (n_spins - 1 - k);
    const Eigen::Index cols = m.cols();
    const cplx a = op(0, 0), b = op(0, 1), c = op(1, 0), d = op(1, 1);
    const Eigen::Index rows = m.rows();
    for (Eigen::Index base = 0; base < cols; base += 2 * stride) {
        for (Eigen::Index j = base; j < base + stride; ++j) {
            cplx* c0 = m.col(j).data();
            cplx* c1 = m.col(j + stride).data();
            for (Eigen::Index r = 0; r < rows; ++r) {
                const cplx x0 = c0[r], x1 = c1[r];
                c0[r] = detail::cfma2(a, x0, c, x1);
                c1[r] = detail::cfma2(b, x0, d, x1);
            }
        }
    }
}

/// (kron ops) * m, applied factor by factor without forming the product.
inline MatX apply_product_left(const MatX& m, std::span<const Mat2> ops) {
    MatX out = m;
    for (std::size_t k = 0; k < ops.size(); ++k) apply_left(out, ops.size(), k, ops[k]);
    return out;
}

/// m * (kron ops), applied factor by factor.
inline MatX apply_product_right(const MatX& m, std::span<const Mat2> ops) {
    MatX out = m;
    for (std::size_t k = 0; k < ops.size(); ++k) apply_right(out, ops.size(), k, ops[k]);
    return out;
}

/// Kronecker product of per-spin 2-vectors.
inline VecX kron_state(std::span<const Vec2c> spins) {
    VecX out = VecX::Ones(1);
    for (const auto& s : spins) {
        VecX next(out.size() * 2);
        for (Eigen::Index i = 0; i < out.size(); ++i) {
            next(2 * i) = out(i) * s(0);
            next(2 * i + 1) = out(i) * s(1);
        }
        out = std::move(next);
    }
    return out;
}

/// Reduced density matrix of spins (i, j), i != j, ordered as kron(spin_i, spin_j).
inline Mat4 two_spin_marginal(const MatX& rho, std::size_t n_spins, std::size_t i, std::size_t j) {
    if (i == j || i >= n_spins || j >= n_spins)
        throw DomainError("two_spin_marginal: need two distinct spin indices below " +
                          std::to_string(n_spins));
    const std::size_t dim = register_dim(n_spins);
    const std::size_t bi = n_spins - 1 - i, bj = n_spins - 1 - j;
    const std::size_t mask = (std::size_t{1} << bi) | (std::size_t{1} << bj);
    Mat4 out = Mat4::Zero();
    for (std::size_t r = 0; r < dim; ++r) {
        const std::size_t rest = r & ~mask;
        const int rl = static_cast<int>(((r >> bi) & 1U) * 2 + ((r >> bj) & 1U));
        for (int cl = 0; cl < 4; ++cl) {
            const std::size_t c = rest | ((static_cast<std::size_t>(cl) >> 1) << bi) |
                                  ((static_cast<std::size_t>(cl) & 1U) << bj);
            out(rl, cl) += rho(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        }
    }
    return out;
}

/// Single-spin reduced density matrix.
inline Mat2 one_spin_marginal(const MatX& rho, std::size_t n_spins, std::size_t k) {
    const std::size_t dim = register_dim(n_spins);
    const std::size_t bit = std::size_t{1} << (n_spins - 1 - k);
    Mat2 out = Mat2::Zero();
    for (std::size_t r = 0; r < dim; ++r) {
        const int rl = (r & bit) ? 1 : 0;
        const std::size_t rest = r & ~bit;
        for (int cl = 0; cl < 2; ++cl) {
            const std::size_t c = rest | (cl ? bit : 0);
            out(rl, cl) += rho(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        }
    }
    return out;
}

inline double max_abs(const MatX& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace spinpair

#endif  // SPINPAIR_CORE_HPP
