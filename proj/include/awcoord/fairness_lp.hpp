#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "awcoord/equilibrium.hpp"
#include "awcoord/model.hpp"

namespace awcoord {

/// Numerical certificate that the closed-form equilibrium value solves the
/// min-infinity-norm allocation problem. gamma_star comes from an
/// independent LP bisection that never touches the closed form.
struct FairnessCertificate {
    double gamma_star = 0.0;
    Vector x_star;
    Vector u_star;
    double closed_form_value = 0.0;  ///< max_i |dz(M_i w)| / (M_i 1)
    bool agreement = false;          ///< |gamma_star - closed_form| <= 1e-7 max(1, closed_form)
};

struct FeasibilityResult {
    bool feasible = false;
    Vector u;  ///< witness, meaningful only when feasible
};

namespace detail {

/// Phase-1 simplex deciding: does some u in [-1,1]^n satisfy
/// ||B u + w||_inf <= gamma?
///
/// The two-sided band is folded into equality rows B u + s = gamma 1 - w with
/// ranged slacks s in [0, 2 gamma], so the only inequalities left are variable
/// bounds. Rows whose slack cannot absorb the initial residual get an
/// artificial variable; feasibility means the artificials can be driven to
/// (numerical) zero. Bland's rule is used for both the entering and the
/// leaving choice, with a hard pivot cap instead of open-ended degeneracy
/// handling.
class BoundedPhaseOneSimplex {
public:
    static constexpr int kPivotCap = 10000;

    BoundedPhaseOneSimplex(const Matrix& b_mat, const Vector& w, double gamma)
        : n_(static_cast<int>(b_mat.rows())) {
        const int cols = 2 * n_;
        lo_.resize(cols);
        hi_.resize(cols);
        val_.resize(cols);
        stat_.resize(cols);
        for (int j = 0; j < n_; ++j) {
            lo_[j] = -1.0;
            hi_[j] = 1.0;
            lo_[n_ + j] = 0.0;
            hi_[n_ + j] = 2.0 * gamma;
        }

        const Vector rhs = Vector::Constant(n_, gamma) - w;
        // Start with every u_j nonbasic at its lower bound.
        for (int j = 0; j < n_; ++j) {
            stat_[j] = Status::Lower;
            val_[j] = lo_[j];
        }
        Vector q = rhs + b_mat.rowwise().sum();  // rhs - B * (-1)

        tab_.resize(n_, cols);
        basis_.resize(n_);
        xb_.resize(n_);
        art_row_.assign(n_, false);
        for (int i = 0; i < n_; ++i) {
            if (q[i] >= 0.0 && q[i] <= hi_[n_ + i]) {
                // Slack absorbs the residual: basic, identity column.
                basis_[i] = n_ + i;
                stat_[n_ + i] = Status::Basic;
                xb_[i] = q[i];
                val_[n_ + i] = 0.0;
                tab_.row(i).head(n_) = b_mat.row(i);
                tab_.row(i).tail(n_).setZero();
                tab_(i, n_ + i) = 1.0;
            } else {
                const double sv = (q[i] < 0.0) ? 0.0 : hi_[n_ + i];
                const double residual = q[i] - sv;
                const double sigma = (residual >= 0.0) ? 1.0 : -1.0;
                stat_[n_ + i] = (sv == 0.0) ? Status::Lower : Status::Upper;
                val_[n_ + i] = sv;
                basis_[i] = kArtificial;
                art_row_[i] = true;
                xb_[i] = sigma * residual;  // = |residual|
                tab_.row(i).head(n_) = sigma * b_mat.row(i);
                tab_.row(i).tail(n_).setZero();
                tab_(i, n_ + i) = sigma;
            }
        }
    }

    /// Runs phase 1. Returns true when the residual objective reaches zero.
    /// Throws NumericalFailure past the pivot cap.
    bool solve() {
        for (int iter = 0; iter < kPivotCap; ++iter) {
            int enter = -1;
            double dir = 0.0;
            for (int j = 0; j < 2 * n_; ++j) {
                if (stat_[j] != Status::Lower && stat_[j] != Status::Upper) continue;
                if (!(hi_[j] - lo_[j] > 0.0)) continue;  // pinned column can never move
                const double d = reduced_cost(j);
                if (stat_[j] == Status::Lower && d < -kOptTol) {
                    enter = j;
                    dir = 1.0;
                    break;
                }
                if (stat_[j] == Status::Upper && d > kOptTol) {
                    enter = j;
                    dir = -1.0;
                    break;
                }
            }
            if (enter < 0) return objective() <= kFeasTol;

            // Ratio test: smallest step at which a basic variable or the
            // entering variable itself hits a bound.
            double best_t = hi_[enter] - lo_[enter];
            int leave_row = -1;  // -1 = bound flip
            bool leave_at_upper = false;
            for (int i = 0; i < n_; ++i) {
                const double g = dir * tab_(i, enter);
                double t = -1.0;
                bool at_upper = false;
                if (g > kPivTol) {
                    const double lb = (basis_[i] == kArtificial) ? 0.0 : lo_[basis_[i]];
                    t = (xb_[i] - lb) / g;
                } else if (g < -kPivTol) {
                    if (basis_[i] == kArtificial) continue;  // unbounded above
                    t = (hi_[basis_[i]] - xb_[i]) / (-g);
                    at_upper = true;
                } else {
                    continue;
                }
                if (t < 0.0) t = 0.0;
                if (t < best_t - kTieTol) {
                    best_t = t;
                    leave_row = i;
                    leave_at_upper = at_upper;
                } else if (leave_row >= 0 && std::abs(t - best_t) <= kTieTol &&
                           var_index(basis_[i]) < var_index(basis_[leave_row])) {
                    leave_row = i;  // Bland tie-break on the leaving variable
                    leave_at_upper = at_upper;
                }
            }
            if (!std::isfinite(best_t)) {
                throw NumericalFailure("phase-1 simplex: unbounded ray in a bounded problem");
            }

            const double t = best_t;
            for (int i = 0; i < n_; ++i) xb_[i] -= t * dir * tab_(i, enter);

            if (leave_row < 0) {
                // Entering variable crosses to its other bound; basis unchanged.
                stat_[enter] = (stat_[enter] == Status::Lower) ? Status::Upper : Status::Lower;
                val_[enter] = (stat_[enter] == Status::Lower) ? lo_[enter] : hi_[enter];
                continue;
            }

            const int leaving = basis_[leave_row];
            if (leaving == kArtificial) {
                art_row_[leave_row] = false;  // dropped for good, pinned at zero
            } else {
                stat_[leaving] = leave_at_upper ? Status::Upper : Status::Lower;
                val_[leaving] = leave_at_upper ? hi_[leaving] : lo_[leaving];
            }

            const double entering_value = val_[enter] + dir * t;
            const double piv = tab_(leave_row, enter);
            tab_.row(leave_row) /= piv;
            for (int i = 0; i < n_; ++i) {
                if (i == leave_row) continue;
                const double f = tab_(i, enter);
                if (f != 0.0) tab_.row(i) -= f * tab_.row(leave_row);
            }
            basis_[leave_row] = enter;
            stat_[enter] = Status::Basic;
            xb_[leave_row] = entering_value;
        }
        throw NumericalFailure("phase-1 simplex: pivot cap exceeded (degenerate problem?)");
    }

    /// Witness u; call only after a feasible solve().
    Vector witness() const {
        Vector u(n_);
        for (int j = 0; j < n_; ++j) u[j] = val_[j];
        for (int i = 0; i < n_; ++i) {
            if (basis_[i] >= 0 && basis_[i] < n_) u[basis_[i]] = xb_[i];
        }
        return u;
    }

private:
    enum class Status : std::uint8_t { Lower, Upper, Basic };
    static constexpr int kArtificial = -2;
    static constexpr double kOptTol = 1e-9;
    static constexpr double kPivTol = 1e-10;
    static constexpr double kTieTol = 1e-12;
    static constexpr double kFeasTol = 1e-9;

    double reduced_cost(int j) const {
        double d = 0.0;
        for (int i = 0; i < n_; ++i) {
            if (basis_[i] == kArtificial) d -= tab_(i, j);
        }
        return d;
    }

    double objective() const {
        double obj = 0.0;
        for (int i = 0; i < n_; ++i) {
            if (basis_[i] == kArtificial) obj += std::max(xb_[i], 0.0);
        }
        return obj;
    }

    // Artificials sort after every structural column for Bland's purposes.
    int var_index(int col) const { return col == kArtificial ? 2 * n_ : col; }

    int n_;
    Matrix tab_;
    std::vector<int> basis_;
    std::vector<double> xb_;
    std::vector<double> lo_, hi_, val_;
    std::vector<Status> stat_;
    std::vector<bool> art_row_;
};

}  // namespace detail

/// True iff some u in [-1,1]^n keeps ||B u + w||_inf <= gamma, decided by
/// exact LP feasibility (no sampling). Returns the witness on success.
inline FeasibilityResult lp_feasible(const CouplingMatrix& coupling, const Disturbance& w,
                                     double gamma) {
    if (!(gamma >= 0.0)) throw ValidationError("gamma must be non-negative");
    if (w.w.size() != coupling.n()) throw ValidationError("disturbance dimension mismatch");
    detail::BoundedPhaseOneSimplex lp(coupling.b(), w.w, gamma);
    FeasibilityResult out;
    out.feasible = lp.solve();
    if (out.feasible) out.u = lp.witness();
    return out;
}

/// Minimizes ||x||_inf subject to -x + B u + w = 0 and -1 <= u <= 1 by
/// bisecting gamma over [0, ||w||_inf] with lp_feasible as the decision
/// procedure (the upper end is always feasible through u = 0). The returned
/// certificate compares the LP optimum against the closed-form equilibrium
/// value; the LP side never evaluates the closed form.
inline FairnessCertificate min_infnorm(const CouplingMatrix& coupling, const Disturbance& w,
                                       double tol = 1e-9) {
    if (!(tol > 0.0)) throw ValidationError("bisection tolerance must be positive");
    double hi = w.w.size() > 0 ? w.w.cwiseAbs().maxCoeff() : 0.0;
    FeasibilityResult probe = lp_feasible(coupling, w, hi);
    if (!probe.feasible) {
        throw NumericalFailure("upper bisection bracket gamma = ||w||_inf reported infeasible");
    }
    Vector witness = probe.u;
    double lo = 0.0;
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        FeasibilityResult r = lp_feasible(coupling, w, mid);
        if (r.feasible) {
            hi = mid;
            witness = std::move(r.u);
        } else {
            lo = mid;
        }
    }

    FairnessCertificate cert;
    cert.gamma_star = hi;
    cert.u_star = std::move(witness);
    cert.x_star = coupling.b() * cert.u_star + w.w;
    cert.closed_form_value = maximizing_set(coupling, w).value;
    cert.agreement = std::abs(cert.gamma_star - cert.closed_form_value) <=
                     1e-7 * std::max(1.0, cert.closed_form_value);
    return cert;
}

}  // namespace awcoord
