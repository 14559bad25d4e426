#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "awcoord/model.hpp"

namespace awcoord {

enum class Existence { StrictlySatisfied, WeaklySatisfied, Violated };

inline const char* to_string(Existence e) {
    switch (e) {
        case Existence::StrictlySatisfied: return "strictly_satisfied";
        case Existence::WeaklySatisfied: return "weakly_satisfied";
        case Existence::Violated: return "violated";
    }
    return "?";
}

/// Outcome of the disturbance-size condition that decides whether the
/// saturated loop admits an equilibrium at all.
struct ExistenceStatus {
    Existence status = Existence::Violated;
    double lhs = 0.0;  ///< max_i (M_i w - 1) / (M_i 1)
    double rhs = 0.0;  ///< min_j (M_j w + 1) / (M_j 1)
    double gap = 0.0;  ///< rhs - lhs
};

/// The set of agents most affected by the disturbance.
struct MaximizerSet {
    std::vector<int> indices;  ///< ascending, non-empty
    double value = 0.0;        ///< max_i |dz(M_i w)| / (M_i 1); equals ||x0||_inf
    bool unique = false;       ///< value == 0 (nobody saturates) or a single maximizer
};

struct EquilibriumTolerances {
    double strict_tol = 1e-9;    ///< absolute, on the gap rhs - lhs
    double tie_tol = 1e-9;       ///< relative, on maximizer ties
    double residual_tol = 1e-9;  ///< max-abs residual accepted for a computed point
};

/// Evaluates max_i (M_i w - 1)/(M_i 1) against min_j (M_j w + 1)/(M_j 1).
/// The loop has an equilibrium iff lhs <= rhs; strictness (gap > strict_tol)
/// is what the uniqueness argument needs.
inline ExistenceStatus existence_condition(const CouplingMatrix& coupling, const Disturbance& w,
                                           double strict_tol = 1e-9) {
    if (!(strict_tol > 0.0)) throw ValidationError("strict_tol must be positive");
    if (w.w.size() != coupling.n()) throw ValidationError("disturbance dimension mismatch");
    const Vector mw = coupling.solve(w.w);
    const Vector& s = coupling.row_sums();
    ExistenceStatus out;
    out.lhs = ((mw.array() - 1.0) / s.array()).maxCoeff();
    out.rhs = ((mw.array() + 1.0) / s.array()).minCoeff();
    out.gap = out.rhs - out.lhs;
    if (out.gap > strict_tol) {
        out.status = Existence::StrictlySatisfied;
    } else if (out.gap < -strict_tol) {
        out.status = Existence::Violated;
    } else {
        out.status = Existence::WeaklySatisfied;
    }
    return out;
}

/// All indices attaining max_i |dz(M_i w)| / (M_i 1) within a relative tie
/// tolerance. When the maximum is zero no agent saturates and every index is
/// reported with unique = true (the degenerate branch).
inline MaximizerSet maximizing_set(const CouplingMatrix& coupling, const Disturbance& w,
                                   double tie_tol = 1e-9) {
    if (tie_tol < 0.0) throw ValidationError("tie_tol must be non-negative");
    if (w.w.size() != coupling.n()) throw ValidationError("disturbance dimension mismatch");
    const Vector mw = coupling.solve(w.w);
    const Vector& s = coupling.row_sums();
    const Vector ratios = deadzone(mw).cwiseAbs().cwiseQuotient(s);

    MaximizerSet out;
    out.value = ratios.maxCoeff();
    if (out.value == 0.0) {
        out.indices.resize(coupling.n());
        for (int i = 0; i < coupling.n(); ++i) out.indices[i] = i;
        out.unique = true;
        return out;
    }
    const double cutoff = out.value * (1.0 - tie_tol);
    for (int i = 0; i < coupling.n(); ++i) {
        if (ratios[i] >= cutoff) out.indices.push_back(i);
    }
    out.unique = out.indices.size() == 1;
    return out;
}

/// Closed-form equilibrium candidate. x0 is a constant vector; u0 is the
/// unsaturated controller output; z0 follows from the control law.
struct EquilibriumPoint {
    Vector x0;
    Vector u0;
    Vector z0;
    int k = 0;                        ///< maximizing index used
    double residual_plant = 0.0;      ///< ||-x0 + B sat(u0) + w||_inf
    double residual_integrator = 0.0; ///< ||x0 + beta 1 1^T dz(u0)||_inf
};

/// Builds the candidate equilibrium for maximizing index k:
///   x0   = 1 * dz(M_k w) / (M_k 1)
///   u0_k = -sat(M_k w) - dz(M_k w) / (beta M_k 1)
///   u0_i = -M_i w + (M_i 1 / M_k 1) dz(M_k w),  i != k
///   z0   = -R^-1 (u0 + P x0)
/// x0 and u0 depend only on B, w and beta; the PI gains enter z0 alone.
///
/// Throws ConditionViolated when the existence condition fails outright and
/// ResidualTooLarge when the computed point does not close the equilibrium
/// equations to residual_tol (a conditioning problem, not a modelling one).
inline EquilibriumPoint candidate_equilibrium(const CouplingMatrix& coupling, const Disturbance& w,
                                              const ControllerGains& gains, int k,
                                              const EquilibriumTolerances& tol = {}) {
    const ExistenceStatus ex = existence_condition(coupling, w, tol.strict_tol);
    if (ex.status == Existence::Violated) {
        throw ConditionViolated("no equilibrium exists: lhs " + std::to_string(ex.lhs) +
                                " > rhs " + std::to_string(ex.rhs));
    }
    const MaximizerSet ms = maximizing_set(coupling, w, tol.tie_tol);
    if (std::find(ms.indices.begin(), ms.indices.end(), k) == ms.indices.end()) {
        throw ValidationError("index " + std::to_string(k) + " is not a maximizing index");
    }
    if (gains.p.size() != coupling.n()) throw ValidationError("gain dimension mismatch");

    const int n = coupling.n();
    const Vector mw = coupling.solve(w.w);
    const Vector& s = coupling.row_sums();
    const double dzk = deadzone(mw[k]);

    EquilibriumPoint pt;
    pt.k = k;
    pt.x0 = Vector::Constant(n, dzk / s[k]);
    pt.u0.resize(n);
    for (int i = 0; i < n; ++i) {
        pt.u0[i] = (i == k) ? -saturate(mw[k]) - dzk / (gains.beta * s[k])
                            : -mw[i] + (s[i] / s[k]) * dzk;
    }
    pt.z0 = -(pt.u0.array() + gains.p.array() * pt.x0.array()) / gains.r.array();

    pt.residual_plant = (-pt.x0 + coupling.b() * saturate(pt.u0) + w.w).cwiseAbs().maxCoeff();
    pt.residual_integrator =
        (pt.x0.array() + gains.beta * deadzone(pt.u0).sum()).abs().maxCoeff();
    if (pt.residual_plant > tol.residual_tol || pt.residual_integrator > tol.residual_tol) {
        throw ResidualTooLarge("equilibrium residuals " + std::to_string(pt.residual_plant) +
                               ", " + std::to_string(pt.residual_integrator) +
                               " exceed " + std::to_string(tol.residual_tol));
    }
    return pt;
}

/// One-call bundle: existence classification, maximizer set, and (when the
/// condition holds strictly) the closed-form point for the smallest
/// maximizing index.
struct EquilibriumReport {
    ExistenceStatus existence;
    MaximizerSet maximizers;
    std::optional<EquilibriumPoint> point;
    bool a1_strict = false;  ///< disturbance condition holds strictly
    bool a2_unique = false;  ///< maximizer unique (or nobody saturates)
    std::string warning;     ///< empty when both assumptions hold
};

inline EquilibriumReport equilibrium_report(const CouplingMatrix& coupling, const Disturbance& w,
                                            const ControllerGains& gains,
                                            const EquilibriumTolerances& tol = {}) {
    EquilibriumReport rep;
    rep.existence = existence_condition(coupling, w, tol.strict_tol);
    rep.maximizers = maximizing_set(coupling, w, tol.tie_tol);
    rep.a1_strict = rep.existence.status == Existence::StrictlySatisfied;
    rep.a2_unique = rep.maximizers.unique;
    if (rep.a1_strict) {
        rep.point = candidate_equilibrium(coupling, w, gains, rep.maximizers.indices.front(), tol);
    }
    if (!rep.a2_unique && rep.maximizers.value != 0.0) {
        rep.warning =
            "maximizing index is tied; the computed point uses the smallest one and "
            "equilibrium uniqueness is not guaranteed";
    } else if (rep.existence.status == Existence::WeaklySatisfied) {
        rep.warning =
            "disturbance condition holds only with equality; an equilibrium exists but no "
            "point was computed and uniqueness is not guaranteed";
    }
    return rep;
}

}  // namespace awcoord
