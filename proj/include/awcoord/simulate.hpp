#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "awcoord/model.hpp"

namespace awcoord {

/// Disturbance as a function of time: constant or piecewise linear between
/// breakpoints, clamped to the end values outside the covered range.
class DisturbanceSchedule {
public:
    struct Breakpoint {
        double t;
        Vector w;
    };

    static DisturbanceSchedule constant(Vector w) {
        if (w.size() < 1 || !w.allFinite()) throw ValidationError("schedule vector must be finite and non-empty");
        DisturbanceSchedule s;
        s.pts_.push_back({0.0, std::move(w)});
        return s;
    }

    static DisturbanceSchedule piecewise_linear(std::vector<Breakpoint> pts) {
        if (pts.empty()) throw ValidationError("schedule needs at least one breakpoint");
        const Eigen::Index dim = pts.front().w.size();
        if (dim < 1) throw ValidationError("schedule vectors must be non-empty");
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (!std::isfinite(pts[i].t) || !pts[i].w.allFinite()) {
                throw ValidationError("schedule breakpoints must be finite");
            }
            if (pts[i].w.size() != dim) throw ValidationError("schedule vectors must share one dimension");
            if (i > 0 && !(pts[i].t > pts[i - 1].t)) {
                throw ValidationError("schedule breakpoint times must be strictly increasing");
            }
        }
        DisturbanceSchedule s;
        s.pts_ = std::move(pts);
        return s;
    }

    bool is_constant() const { return pts_.size() == 1; }
    int dimension() const { return static_cast<int>(pts_.front().w.size()); }
    const std::vector<Breakpoint>& breakpoints() const { return pts_; }
    double end_time() const { return pts_.back().t; }

    /// Evaluates into `out`; breakpoints are returned exactly, not interpolated.
    void eval(double t, Vector& out) const {
        if (t <= pts_.front().t) {
            out = pts_.front().w;
            return;
        }
        if (t >= pts_.back().t) {
            out = pts_.back().w;
            return;
        }
        auto it = std::lower_bound(pts_.begin(), pts_.end(), t,
                                   [](const Breakpoint& p, double v) { return p.t < v; });
        if (it->t == t) {
            out = it->w;
            return;
        }
        const Breakpoint& hi = *it;
        const Breakpoint& lo = *(it - 1);
        const double theta = (t - lo.t) / (hi.t - lo.t);
        out = (1.0 - theta) * lo.w + theta * hi.w;
    }

    Vector at(double t) const {
        Vector v;
        eval(t, v);
        return v;
    }

private:
    DisturbanceSchedule() = default;
    std::vector<Breakpoint> pts_;
};

struct StepControl {
    double initial_step = 1e-3;
    double min_step = 1e-10;
    double max_step = 100.0;
    double rel_tol = 1e-8;
    double abs_tol = 1e-10;
};

struct SimulationConfig {
    double horizon = 1e6;
    StepControl step;
    double stop_abs = 1e-8;   ///< derivative magnitude threshold
    double stop_rel = 1e-6;   ///< |derivative / state| threshold
    double rel_floor = 1e-12; ///< states below this count as settled for the relative test
    int sample_stride = 1;    ///< record/stop-check every this many accepted steps
    bool stop_on_equilibrium = true;
    bool record_trajectory = true;
};

enum class LoopVariant { Coordinated, Uncoordinated };

struct Derivatives {
    Vector x_dot;
    Vector z_dot;
};

/// Coordinated closed loop: the scalar sum of all dead-zones is broadcast to
/// every integrator (never materialized as an n-by-n matrix).
///   x' = -x + B sat(u) + w
///   z' = x + beta * (1^T dz(u)) * 1
inline Derivatives rhs_coordinated(const ClosedLoopState& state, const CouplingMatrix& coupling,
                                   const Vector& w, const ControllerGains& gains) {
    const Vector u = control_law(state, gains);
    const Vector su = saturate(u);
    Derivatives d;
    d.x_dot = -state.x + coupling.b() * su + w;
    d.z_dot = state.x.array() + gains.beta * (u - su).sum();
    return d;
}

/// Local anti-windup variant: each integrator sees only its own dead-zone,
///   z'_i = x_i + beta * dz(u_i).
inline Derivatives rhs_uncoordinated(const ClosedLoopState& state, const CouplingMatrix& coupling,
                                     const Vector& w, const ControllerGains& gains) {
    const Vector u = control_law(state, gains);
    const Vector su = saturate(u);
    Derivatives d;
    d.x_dot = -state.x + coupling.b() * su + w;
    d.z_dot = state.x + gains.beta * (u - su);
    return d;
}

struct TrajectorySample {
    double t = 0.0;
    Vector x;
    Vector z;
    Vector u;
    Vector sat_u;
    double sum_dz = 0.0;  ///< 1^T dz(u)
};

struct SimulationResult {
    bool converged = false;
    double t_final = 0.0;
    ClosedLoopState final_state;
    std::vector<TrajectorySample> trajectory;
    std::optional<double> distance_to_equilibrium;  ///< ||x_final - x0||_inf
    long accepted_steps = 0;
    long rejected_steps = 0;
};

namespace detail {

/// Allocation-free right-hand side of either loop variant on the stacked
/// state y = [x; z].
class ClosedLoopRhs {
public:
    ClosedLoopRhs(LoopVariant variant, const CouplingMatrix& coupling, const ControllerGains& gains,
                  const DisturbanceSchedule& schedule)
        : variant_(variant), coupling_(coupling), gains_(gains), schedule_(schedule),
          n_(coupling.n()), u_(n_), su_(n_), du_(n_), w_(n_) {
        if (schedule.dimension() != n_) throw ValidationError("schedule dimension mismatch");
        if (gains.p.size() != n_) throw ValidationError("gain dimension mismatch");
        schedule_.eval(0.0, w_);
    }

    void operator()(double t, const Vector& y, Vector& dy) {
        const auto x = y.head(n_);
        const auto z = y.tail(n_);
        u_ = -(gains_.p.array() * x.array()) - (gains_.r.array() * z.array());
        su_ = u_.cwiseMax(-1.0).cwiseMin(1.0);
        du_ = u_ - su_;
        if (!schedule_.is_constant()) schedule_.eval(t, w_);
        dy.head(n_).noalias() = coupling_.b() * su_;
        dy.head(n_) += w_ - x;
        if (variant_ == LoopVariant::Coordinated) {
            dy.tail(n_).array() = x.array() + gains_.beta * du_.sum();
        } else {
            dy.tail(n_) = x + gains_.beta * du_;
        }
    }

    const Vector& last_u() const { return u_; }
    const Vector& last_sat_u() const { return su_; }
    double last_sum_dz() const { return du_.sum(); }

private:
    LoopVariant variant_;
    const CouplingMatrix& coupling_;
    const ControllerGains& gains_;
    const DisturbanceSchedule& schedule_;
    int n_;
    Vector u_, su_, du_, w_;
};

}  // namespace detail

/// Integrates the closed loop with an embedded Dormand-Prince 5(4) pair and
/// per-step error control.
///
/// The stopping rule follows the randomized-study recipe: at accepted steps
/// (every sample_stride-th one) the exact right-hand side is checked and the
/// run stops once every |x'_i|, |z'_i| < stop_abs and every state is either
/// below rel_floor or changing relatively slower than stop_rel. Saturation
/// kinks are left to the error controller; the right-hand side is globally
/// Lipschitz so no event location is performed.
///
/// Throws StepUnderflow when error control pushes the step below
/// step.min_step and NonFiniteState when the state leaves the finite range.
inline SimulationResult integrate(LoopVariant variant, const ClosedLoopState& initial,
                                  const DisturbanceSchedule& schedule,
                                  const CouplingMatrix& coupling, const ControllerGains& gains,
                                  const SimulationConfig& config,
                                  const std::optional<Vector>& reference_x0 = {}) {
    const int n = coupling.n();
    if (initial.x.size() != n || initial.z.size() != n) {
        throw ValidationError("initial state dimension mismatch");
    }
    if (!initial.x.allFinite() || !initial.z.allFinite()) {
        throw ValidationError("initial state must be finite");
    }
    if (!(config.horizon > 0.0)) throw ValidationError("horizon must be positive");
    if (!(config.step.rel_tol > 0.0) || !(config.step.abs_tol > 0.0) ||
        !(config.step.initial_step > 0.0) || !(config.step.min_step > 0.0) ||
        !(config.step.max_step > 0.0) || !(config.stop_abs > 0.0) || !(config.stop_rel > 0.0) ||
        !(config.rel_floor > 0.0)) {
        throw ValidationError("simulation tolerances and steps must be positive");
    }
    if (config.sample_stride < 1) throw ValidationError("sample_stride must be >= 1");
    if (reference_x0 && reference_x0->size() != n) {
        throw ValidationError("reference equilibrium dimension mismatch");
    }

    // Dormand-Prince 5(4) coefficients.
    constexpr double a21 = 1.0 / 5;
    constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                     a54 = -212.0 / 729;
    constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                     a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                     b6 = 11.0 / 84;
    constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                     e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;

    detail::ClosedLoopRhs rhs(variant, coupling, gains, schedule);
    const int dim = 2 * n;
    Vector y(dim), ytmp(dim), ynew(dim), errv(dim);
    y.head(n) = initial.x;
    y.tail(n) = initial.z;
    Vector k1(dim), k2(dim), k3(dim), k4(dim), k5(dim), k6(dim), k7(dim);

    SimulationResult result;
    const auto record = [&](double t, const Vector& state) {
        ClosedLoopState s{state.head(n), state.tail(n)};
        Vector u = control_law(s, gains);
        Vector su = saturate(u);
        result.trajectory.push_back(
            {t, std::move(s.x), std::move(s.z), std::move(u), std::move(su), 0.0});
        result.trajectory.back().sum_dz =
            deadzone(result.trajectory.back().u).sum();
    };

    double t = 0.0;
    double h = std::clamp(config.step.initial_step, config.step.min_step, config.step.max_step);
    rhs(t, y, k1);
    if (config.record_trajectory) record(t, y);

    const auto settled = [&](const auto& v, const auto& dv) {
        for (int i = 0; i < n; ++i) {
            if (!(std::abs(dv[i]) < config.stop_abs)) return false;
            if (!(std::abs(v[i]) < config.rel_floor ||
                  std::abs(dv[i]) < config.stop_rel * std::abs(v[i]))) {
                return false;
            }
        }
        return true;
    };

    bool last_sample_is_final = config.record_trajectory;
    while (t < config.horizon) {
        const double h_step = std::min(h, config.horizon - t);

        ytmp = y + h_step * (a21 * k1);
        rhs(t + c2 * h_step, ytmp, k2);
        ytmp = y + h_step * (a31 * k1 + a32 * k2);
        rhs(t + c3 * h_step, ytmp, k3);
        ytmp = y + h_step * (a41 * k1 + a42 * k2 + a43 * k3);
        rhs(t + c4 * h_step, ytmp, k4);
        ytmp = y + h_step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        rhs(t + c5 * h_step, ytmp, k5);
        ytmp = y + h_step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        rhs(t + h_step, ytmp, k6);
        ynew = y + h_step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        rhs(t + h_step, ynew, k7);  // FSAL: becomes k1 of the next step
        errv = h_step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

        double err_sq = 0.0;
        for (int i = 0; i < dim; ++i) {
            const double scale = config.step.abs_tol +
                                 config.step.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            const double q = errv[i] / scale;
            err_sq += q * q;
        }
        double err = std::sqrt(err_sq / dim);
        if (!std::isfinite(err)) err = 1e6;

        if (err <= 1.0) {
            t += h_step;
            y.swap(ynew);
            k1.swap(k7);
            ++result.accepted_steps;
            if (!y.allFinite()) {
                throw NonFiniteState("state became non-finite at t = " + std::to_string(t));
            }
            const bool checkpoint = result.accepted_steps % config.sample_stride == 0;
            if (config.record_trajectory && checkpoint) {
                record(t, y);
                last_sample_is_final = true;
            } else {
                last_sample_is_final = false;
            }
            if (config.stop_on_equilibrium && checkpoint &&
                settled(y.head(n), k1.head(n)) && settled(y.tail(n), k1.tail(n))) {
                result.converged = true;
                break;
            }
            const double fac = (err == 0.0) ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
            h = std::min(h_step * fac, config.step.max_step);
        } else {
            ++result.rejected_steps;
            const double fac = std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9);
            h = h_step * fac;
            if (h < config.step.min_step) {
                throw StepUnderflow("step size fell below min_step at t = " + std::to_string(t));
            }
        }
    }

    result.t_final = t;
    result.final_state = ClosedLoopState{y.head(n), y.tail(n)};
    if (config.record_trajectory && !last_sample_is_final) record(t, y);
    if (reference_x0) {
        result.distance_to_equilibrium = (result.final_state.x - *reference_x0).cwiseAbs().maxCoeff();
    }
    return result;
}

}  // namespace awcoord
