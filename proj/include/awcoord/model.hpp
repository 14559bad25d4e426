#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "awcoord/errors.hpp"

namespace awcoord {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Unit saturation: clamp each entry to [-1, 1].
inline double saturate(double v) { return std::clamp(v, -1.0, 1.0); }

inline Vector saturate(const Vector& v) { return v.cwiseMax(-1.0).cwiseMin(1.0); }

/// Dead-zone dz(v) = v - sat(v). Computed literally from the saturation so
/// that saturate(v) + deadzone(v) == v holds bitwise, entry by entry.
inline double deadzone(double v) { return v - saturate(v); }

inline Vector deadzone(const Vector& v) { return v - saturate(v); }

/// Validated resource-coupling matrix: strictly diagonally row-dominant with
/// positive diagonal and non-positive off-diagonal entries (an M-matrix,
/// hence an entrywise non-negative inverse). Immutable; build one through
/// validate_coupling().
class CouplingMatrix {
public:
    static constexpr double kInverseTol = 1e-10;

    int n() const { return static_cast<int>(b_.rows()); }
    const Matrix& b() const { return b_; }
    /// Explicit inverse M = B^-1 (refined; entries >= -kInverseTol).
    const Matrix& m() const { return m_; }
    /// row_sums[i] = M_i * 1, always strictly positive.
    const Vector& row_sums() const { return row_sums_; }

    /// Solves b * y = rhs through the cached LU factorization with one step
    /// of iterative refinement. Preferred over m() * rhs for accuracy.
    Vector solve(const Vector& rhs) const {
        Vector y = lu_.solve(rhs);
        y += lu_.solve(rhs - b_ * y);
        return y;
    }

private:
    friend CouplingMatrix validate_coupling(const Matrix& raw);

    CouplingMatrix(Matrix b, Matrix m, Vector row_sums, Eigen::PartialPivLU<Matrix> lu)
        : b_(std::move(b)), m_(std::move(m)), row_sums_(std::move(row_sums)), lu_(std::move(lu)) {}

    Matrix b_;
    Matrix m_;
    Vector row_sums_;
    Eigen::PartialPivLU<Matrix> lu_;
};

/// Checks the sign pattern and strict diagonal row dominance of `raw`,
/// inverts it (partial-pivot LU plus one Newton correction of the inverse)
/// and verifies the inverse a posteriori.
///
/// Throws BadSignPattern, NotRowDominant or SingularOrNegativeInverse.
inline CouplingMatrix validate_coupling(const Matrix& raw) {
    if (raw.rows() != raw.cols() || raw.rows() < 1) {
        throw ValidationError("coupling matrix must be square with n >= 1, got " +
                              std::to_string(raw.rows()) + "x" + std::to_string(raw.cols()));
    }
    if (!raw.allFinite()) throw ValidationError("coupling matrix has non-finite entries");
    const int n = static_cast<int>(raw.rows());

    for (int i = 0; i < n; ++i) {
        if (!(raw(i, i) > 0.0)) {
            throw BadSignPattern("diagonal entry (" + std::to_string(i) + "," + std::to_string(i) +
                                 ") = " + std::to_string(raw(i, i)) + " is not strictly positive");
        }
        for (int j = 0; j < n; ++j) {
            if (j != i && raw(i, j) > 0.0) {
                throw BadSignPattern("off-diagonal entry (" + std::to_string(i) + "," +
                                     std::to_string(j) + ") = " + std::to_string(raw(i, j)) +
                                     " is positive");
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        const double off = raw.row(i).cwiseAbs().sum() - std::abs(raw(i, i));
        if (!(raw(i, i) > off)) {
            throw NotRowDominant("row " + std::to_string(i) + ": diagonal " +
                                 std::to_string(raw(i, i)) + " does not strictly dominate " +
                                 std::to_string(off));
        }
    }

    Eigen::PartialPivLU<Matrix> lu(raw);
    Matrix m = lu.inverse();
    if (!m.allFinite()) throw SingularOrNegativeInverse("matrix inversion produced non-finite entries");
    // One Newton correction, X <- X + X(I - B X), tightens B*m toward I.
    const Matrix identity = Matrix::Identity(n, n);
    m += m * (identity - raw * m);

    const double inv_residual = (raw * m - identity).cwiseAbs().maxCoeff();
    if (!(inv_residual <= CouplingMatrix::kInverseTol)) {
        throw SingularOrNegativeInverse("inverse residual " + std::to_string(inv_residual) +
                                        " exceeds tolerance");
    }
    if (m.minCoeff() < -CouplingMatrix::kInverseTol) {
        throw SingularOrNegativeInverse("inverse has an entry below -1e-10: " +
                                        std::to_string(m.minCoeff()));
    }

    Vector row_sums = m * Vector::Ones(n);
    if (!(row_sums.minCoeff() > 0.0)) {
        throw SingularOrNegativeInverse("inverse has a non-positive row sum");
    }
    return CouplingMatrix(raw, std::move(m), std::move(row_sums), std::move(lu));
}

/// Diagonal PI gains plus the scalar anti-windup gain. All strictly positive.
struct ControllerGains {
    Vector p;
    Vector r;
    double beta = 1.0;
    /// True iff p_i > r_i for every agent (the conjectured convergence condition).
    bool conjecture_ok = false;

    static ControllerGains checked(Vector p, Vector r, double beta) {
        if (p.size() != r.size() || p.size() < 1) {
            throw ValidationError("gain vectors must be non-empty and equally sized");
        }
        if (!p.allFinite() || !r.allFinite() || !std::isfinite(beta)) {
            throw ValidationError("gains must be finite");
        }
        if (!(p.minCoeff() > 0.0)) throw ValidationError("proportional gains must be strictly positive");
        if (!(r.minCoeff() > 0.0)) throw ValidationError("integral gains must be strictly positive");
        if (!(beta > 0.0)) throw ValidationError("anti-windup gain beta must be strictly positive");
        ControllerGains g{std::move(p), std::move(r), beta, false};
        g.conjecture_ok = (g.p.array() > g.r.array()).all();
        return g;
    }

    /// n agents with identical gains.
    static ControllerGains uniform(int n, double p, double r, double beta) {
        return checked(Vector::Constant(n, p), Vector::Constant(n, r), beta);
    }
};

/// Constant additive disturbance acting on the plant.
struct Disturbance {
    Vector w;

    explicit Disturbance(Vector values) : w(std::move(values)) {
        if (w.size() < 1) throw ValidationError("disturbance must be non-empty");
        if (!w.allFinite()) throw ValidationError("disturbance must be finite");
    }
};

/// Plant state x and integrator state z. The control u is derived, see control_law().
struct ClosedLoopState {
    Vector x;
    Vector z;
};

/// u = -P x - R z, componentwise.
inline Vector control_law(const ClosedLoopState& state, const ControllerGains& gains) {
    if (state.x.size() != state.z.size() || state.x.size() != gains.p.size()) {
        throw ValidationError("control_law: state/gain dimensions disagree");
    }
    return -(gains.p.array() * state.x.array()) - (gains.r.array() * state.z.array());
}

}  // namespace awcoord
