#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "awcoord/equilibrium.hpp"
#include "awcoord/fairness_lp.hpp"
#include "awcoord/model.hpp"
#include "awcoord/simulate.hpp"

namespace awcoord {

/// Settings for the randomized convergence study. The defaults reproduce the
/// full-scale recipe (1000 systems x 100 initial conditions, sizes 5..15);
/// the bundled acceptance run scales this down to 100 x 10.
struct RandomStudyConfig {
    int n_systems = 1000;
    int ics_per_system = 100;
    int n_min = 5;
    int n_max = 15;
    std::uint64_t seed = 0;
    double convergence_tol = 0.005;  ///< accepted ||x_final - x0||_inf
    double gain_floor = 1e-3;        ///< keeps sampled p_i, r_i strictly positive
    double beta_floor = 1e-3;
    int max_rejections = 10000;      ///< disturbance draws per system before giving up
    SimulationConfig sim;
    int threads = 0;  ///< 0 = hardware concurrency

    void validate() const {
        if (n_systems < 1 || ics_per_system < 1) throw ValidationError("study counts must be >= 1");
        if (n_min < 1 || n_max > 64 || n_min > n_max) {
            throw ValidationError("system size range must satisfy 1 <= n_min <= n_max <= 64");
        }
        if (!(convergence_tol > 0.0)) throw ValidationError("convergence_tol must be positive");
        if (!(gain_floor > 0.0) || !(beta_floor > 0.0)) throw ValidationError("gain floors must be positive");
        if (max_rejections < 1) throw ValidationError("max_rejections must be >= 1");
        if (threads < 0) throw ValidationError("threads must be >= 0");
    }
};

/// One randomly drawn closed-loop instance satisfying both standing
/// assumptions (strict disturbance condition, unique maximizer).
struct RandomSystem {
    CouplingMatrix coupling;
    ControllerGains gains;
    Disturbance w;
    int rejections_a1 = 0;  ///< w draws rejected by the strict existence condition
    int rejections_a2 = 0;  ///< w draws rejected by maximizer ties
    bool gain_floor_applied = false;
    bool floor_broke_ordering = false;  ///< flooring produced some r_i >= p_i
};

/// Draws one system:
///   n uniform in [n_min, n_max]; B = C + D with C_ij = -|c_ij|, c_ij ~ N(0,1)
///   and D_ii = sum_j |C_ij| + |d_i|, d_i ~ N(0,n); beta uniform in (0,10];
///   p_i = |N(0,1)|; r_i uniform in [0, p_i]; gains floored from below;
///   w_i ~ N(0,5) redrawn until both assumptions hold.
///
/// Throws RejectionBudgetExhausted when max_rejections disturbance draws all
/// fail; callers normally respond by redrawing the whole system.
inline RandomSystem random_system(std::mt19937_64& rng, const RandomStudyConfig& cfg) {
    std::uniform_int_distribution<int> size_dist(cfg.n_min, cfg.n_max);
    std::normal_distribution<double> unit_normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit_uniform(0.0, 1.0);

    const int n = size_dist(rng);
    Matrix b(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) b(i, j) = -std::abs(unit_normal(rng));
    }
    {
        std::normal_distribution<double> d_dist(0.0, static_cast<double>(n));
        for (int i = 0; i < n; ++i) {
            const double off = b.row(i).cwiseAbs().sum();  // includes |c_ii|; B_ii = off - |c_ii| + |d_i| + |c_ii|
            b(i, i) += off + std::abs(d_dist(rng));
        }
    }
    CouplingMatrix coupling = validate_coupling(b);

    RandomSystem out{std::move(coupling),
                     ControllerGains{},
                     Disturbance{Vector::Zero(n)}};

    const double beta = std::max(cfg.beta_floor, 10.0 * unit_uniform(rng));
    Vector p(n), r(n);
    for (int i = 0; i < n; ++i) {
        const double raw = std::abs(unit_normal(rng));
        if (raw < cfg.gain_floor) out.gain_floor_applied = true;
        p[i] = std::max(cfg.gain_floor, raw);
    }
    for (int i = 0; i < n; ++i) {
        const double raw = unit_uniform(rng) * p[i];
        if (raw < cfg.gain_floor) out.gain_floor_applied = true;
        r[i] = std::max(cfg.gain_floor, raw);
        if (r[i] >= p[i]) out.floor_broke_ordering = true;
    }
    out.gains = ControllerGains::checked(std::move(p), std::move(r), beta);

    std::normal_distribution<double> w_dist(0.0, 5.0);
    for (int attempt = 0; attempt < cfg.max_rejections; ++attempt) {
        Vector w(n);
        for (int i = 0; i < n; ++i) w[i] = w_dist(rng);
        Disturbance dist(std::move(w));
        if (existence_condition(out.coupling, dist).status != Existence::StrictlySatisfied) {
            ++out.rejections_a1;
            continue;
        }
        if (!maximizing_set(out.coupling, dist).unique) {
            ++out.rejections_a2;
            continue;
        }
        out.w = std::move(dist);
        return out;
    }
    throw RejectionBudgetExhausted("no admissible disturbance after " +
                                   std::to_string(cfg.max_rejections) + " draws");
}

struct InitialConditionRecord {
    bool converged = false;
    double t_final = 0.0;
    double distance = 0.0;  ///< ||x_final - x0||_inf
    bool failed = false;
    std::string error;
};

struct SystemRecord {
    int system_index = 0;
    std::uint64_t system_seed = 0;
    int n = 0;
    double equilibrium_value = 0.0;  ///< ||x0||_inf
    double gamma_star = 0.0;
    bool lp_agreement = false;
    bool conjecture_ok = false;
    bool gain_floor_applied = false;
    bool floor_broke_ordering = false;
    int rejections_a1 = 0;
    int rejections_a2 = 0;
    int system_redraws = 0;
    bool failed = false;
    std::string error;
    std::vector<InitialConditionRecord> runs;
};

struct StudyAggregate {
    double max_distance = 0.0;
    int runs_total = 0;
    int runs_converged = 0;
    int runs_exceeding_tol = 0;
    int runs_failed = 0;
    long long rejections_a1 = 0;
    long long rejections_a2 = 0;
    int systems_with_floored_gains = 0;
    int systems_with_broken_ordering = 0;
    int lp_disagreements = 0;
};

struct StudyReport {
    RandomStudyConfig config;
    std::vector<SystemRecord> systems;
    StudyAggregate aggregate;
};

namespace detail {

/// splitmix64 step; derives independent per-item seeds from a master seed so
/// the work items can run on any number of threads without changing results.
inline std::uint64_t split_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline SystemRecord run_study_system(int index, const RandomStudyConfig& cfg) {
    SystemRecord rec;
    rec.system_index = index;
    rec.system_seed = split_seed(cfg.seed, static_cast<std::uint64_t>(index));
    std::mt19937_64 rng(rec.system_seed);

    constexpr int kRedrawCap = 64;
    std::optional<RandomSystem> sys;
    for (int attempt = 0; attempt < kRedrawCap && !sys; ++attempt) {
        try {
            sys = random_system(rng, cfg);
        } catch (const RejectionBudgetExhausted&) {
            ++rec.system_redraws;
        }
    }
    if (!sys) {
        rec.failed = true;
        rec.error = "system redraw cap exceeded";
        return rec;
    }

    rec.n = sys->coupling.n();
    rec.rejections_a1 = sys->rejections_a1;
    rec.rejections_a2 = sys->rejections_a2;
    rec.conjecture_ok = sys->gains.conjecture_ok;
    rec.gain_floor_applied = sys->gain_floor_applied;
    rec.floor_broke_ordering = sys->floor_broke_ordering;

    try {
        const MaximizerSet ms = maximizing_set(sys->coupling, sys->w);
        const EquilibriumPoint point =
            candidate_equilibrium(sys->coupling, sys->w, sys->gains, ms.indices.front());
        rec.equilibrium_value = ms.value;

        const FairnessCertificate cert = min_infnorm(sys->coupling, sys->w);
        rec.gamma_star = cert.gamma_star;
        rec.lp_agreement = cert.agreement;

        SimulationConfig sim = cfg.sim;
        sim.record_trajectory = false;
        const DisturbanceSchedule schedule = DisturbanceSchedule::constant(sys->w.w);
        std::normal_distribution<double> ic_dist(0.0, 100.0);
        rec.runs.reserve(cfg.ics_per_system);
        for (int run = 0; run < cfg.ics_per_system; ++run) {
            ClosedLoopState initial;
            initial.x.resize(rec.n);
            initial.z.resize(rec.n);
            for (int i = 0; i < rec.n; ++i) initial.x[i] = ic_dist(rng);
            for (int i = 0; i < rec.n; ++i) initial.z[i] = ic_dist(rng);
            InitialConditionRecord icr;
            try {
                const SimulationResult res =
                    integrate(LoopVariant::Coordinated, initial, schedule, sys->coupling,
                              sys->gains, sim, point.x0);
                icr.converged = res.converged;
                icr.t_final = res.t_final;
                icr.distance = res.distance_to_equilibrium.value_or(
                    std::numeric_limits<double>::quiet_NaN());
            } catch (const Error& e) {
                icr.failed = true;
                icr.error = e.what();
            }
            rec.runs.push_back(std::move(icr));
        }
    } catch (const Error& e) {
        rec.failed = true;
        rec.error = e.what();
    }
    return rec;
}

}  // namespace detail

/// Runs the seeded randomized study: per system the closed-form equilibrium,
/// the LP certificate, and one coordinated simulation per initial condition
/// (states drawn from N(0, 100), i.e. standard deviation 100). Systems are
/// independent work items; the report is assembled by index, so thread count
/// never affects the result.
inline StudyReport run_convergence_study(const RandomStudyConfig& cfg) {
    cfg.validate();
    StudyReport report;
    report.config = cfg;
    report.systems.resize(cfg.n_systems);

    unsigned int nthreads = cfg.threads > 0 ? static_cast<unsigned int>(cfg.threads)
                                            : std::max(1u, std::thread::hardware_concurrency());
    nthreads = std::min<unsigned int>(nthreads, static_cast<unsigned int>(cfg.n_systems));

    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int idx = next.fetch_add(1);
            if (idx >= cfg.n_systems) break;
            report.systems[idx] = detail::run_study_system(idx, cfg);
        }
    };
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nthreads);
        for (unsigned int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    StudyAggregate& agg = report.aggregate;
    for (const SystemRecord& rec : report.systems) {
        agg.rejections_a1 += rec.rejections_a1;
        agg.rejections_a2 += rec.rejections_a2;
        if (rec.gain_floor_applied) ++agg.systems_with_floored_gains;
        if (rec.floor_broke_ordering) ++agg.systems_with_broken_ordering;
        if (rec.failed) {
            ++agg.runs_failed;
            continue;
        }
        if (!rec.lp_agreement) ++agg.lp_disagreements;
        for (const InitialConditionRecord& icr : rec.runs) {
            ++agg.runs_total;
            if (icr.failed) {
                ++agg.runs_failed;
                continue;
            }
            if (icr.converged) ++agg.runs_converged;
            agg.max_distance = std::max(agg.max_distance, icr.distance);
            if (!(icr.distance <= cfg.convergence_tol)) ++agg.runs_exceeding_tol;
        }
    }
    return report;
}

/// District-heating comparison scenario: five buildings behind one heat
/// source, PI gains p = 1, r = 1.5, beta = 1, and a synthetic cold-spell
/// outdoor profile. w_i(t) = temperature_scale * (T_out(t) - comfort).
struct HeatingScenario {
    Matrix b = default_coupling();
    Vector p = Vector::Constant(5, 1.0);
    Vector r = Vector::Constant(5, 1.5);
    double beta = 1.0;
    /// (time, outdoor temperature in C). Default: comfort-neutral hold, ramp
    /// down to a -20 C plateau, ramp back.
    std::vector<std::pair<double, double>> outdoor_profile = {
        {0.0, 20.0}, {10.0, 20.0}, {15.0, -20.0}, {35.0, -20.0}, {40.0, 20.0}};
    double comfort_temperature = 20.0;
    double temperature_scale = 1.0;
    double settle_tail = 10.0;  ///< extra simulated time past the last breakpoint

    static Matrix default_coupling() {
        Matrix b(5, 5);
        b << 260, -30, -30, -45, -50,
            -15, 250, -30, -45, -50,
            -15, -20, 210, -45, -50,
            -15, -20, -30, 175, -50,
            -15, -20, -30, -40, 110;
        return b;
    }
};

struct HeatingComparison {
    SimulationResult coordinated;
    SimulationResult uncoordinated;
    double worst_coordinated = 0.0;    ///< max over time and agents of |x_i(t)|
    double worst_uncoordinated = 0.0;
    int worst_coordinated_agent = 0;   ///< 1-based
    int worst_uncoordinated_agent = 0; ///< 1-based
    double coldest_w = 0.0;            ///< per-agent disturbance on the cold plateau
    int analytic_k = 0;                ///< 1-based maximizing agent at the coldest w
    double analytic_plateau_value = 0.0;  ///< dz(M_k w)/(M_k 1), the equalized deviation
    double plateau_time = 0.0;         ///< end of the coldest plateau
    double plateau_spread = 0.0;       ///< max_i x_i - min_i x_i there (coordinated)
    double plateau_deviation = 0.0;    ///< max_i |x_i - analytic| there (coordinated)
    bool approaches_equilibrium = false;  ///< plateau_deviation <= 0.05
};

namespace detail {

inline std::pair<double, int> worst_deviation(const SimulationResult& res) {
    double worst = 0.0;
    int agent = 1;
    for (const TrajectorySample& s : res.trajectory) {
        for (int i = 0; i < s.x.size(); ++i) {
            if (std::abs(s.x[i]) > worst) {
                worst = std::abs(s.x[i]);
                agent = i + 1;
            }
        }
    }
    return {worst, agent};
}

}  // namespace detail

/// Runs the coordinated and the uncoordinated loop on the identical outdoor
/// profile from x = z = 0 and compares worst temperature deviations. Also
/// evaluates the analytic equilibrium for the coldest plateau and how closely
/// the coordinated trajectory approaches it there.
inline HeatingComparison run_heating_comparison(const HeatingScenario& scenario,
                                                const SimulationConfig& config) {
    if (scenario.outdoor_profile.empty()) throw ValidationError("outdoor profile is empty");
    CouplingMatrix coupling = validate_coupling(scenario.b);
    const int n = coupling.n();
    ControllerGains gains = ControllerGains::checked(scenario.p, scenario.r, scenario.beta);
    if (!(scenario.temperature_scale > 0.0)) throw ValidationError("temperature_scale must be positive");

    std::vector<DisturbanceSchedule::Breakpoint> pts;
    pts.reserve(scenario.outdoor_profile.size());
    double coldest_temp = scenario.outdoor_profile.front().second;
    for (const auto& [time, temp] : scenario.outdoor_profile) {
        if (!std::isfinite(temp)) throw ValidationError("outdoor temperatures must be finite");
        const double w = scenario.temperature_scale * (temp - scenario.comfort_temperature);
        pts.push_back({time, Vector::Constant(n, w)});
        coldest_temp = std::min(coldest_temp, temp);
    }
    const DisturbanceSchedule schedule = pts.size() == 1
                                             ? DisturbanceSchedule::constant(pts.front().w)
                                             : DisturbanceSchedule::piecewise_linear(std::move(pts));

    // End of the coldest stretch: the last profile time attaining the minimum.
    double plateau_end = scenario.outdoor_profile.front().first;
    for (const auto& [time, temp] : scenario.outdoor_profile) {
        if (temp == coldest_temp) plateau_end = time;
    }

    SimulationConfig run_cfg = config;
    run_cfg.horizon = schedule.end_time() + scenario.settle_tail;
    if (run_cfg.horizon <= 0.0) run_cfg.horizon = scenario.settle_tail > 0 ? scenario.settle_tail : 1.0;
    run_cfg.stop_on_equilibrium = false;  // the profile varies; run it to the end
    run_cfg.record_trajectory = true;
    run_cfg.sample_stride = 1;
    // Keep steps small enough that sampled extrema and the plateau snapshot
    // are meaningful.
    run_cfg.step.max_step = std::min(run_cfg.step.max_step, 0.25);

    ClosedLoopState origin{Vector::Zero(n), Vector::Zero(n)};
    HeatingComparison out;
    out.coordinated = integrate(LoopVariant::Coordinated, origin, schedule, coupling, gains, run_cfg);
    out.uncoordinated =
        integrate(LoopVariant::Uncoordinated, origin, schedule, coupling, gains, run_cfg);

    std::tie(out.worst_coordinated, out.worst_coordinated_agent) =
        detail::worst_deviation(out.coordinated);
    std::tie(out.worst_uncoordinated, out.worst_uncoordinated_agent) =
        detail::worst_deviation(out.uncoordinated);

    out.coldest_w = scenario.temperature_scale * (coldest_temp - scenario.comfort_temperature);
    const Disturbance cold(Vector::Constant(n, out.coldest_w));
    const MaximizerSet ms = maximizing_set(coupling, cold);
    const EquilibriumPoint pt = candidate_equilibrium(coupling, cold, gains, ms.indices.front());
    out.analytic_k = ms.indices.front() + 1;
    out.analytic_plateau_value = pt.x0[0];
    out.plateau_time = plateau_end;

    // Coordinated state at the last sample inside the plateau.
    const TrajectorySample* at_plateau = nullptr;
    for (const TrajectorySample& s : out.coordinated.trajectory) {
        if (s.t <= plateau_end) at_plateau = &s;
    }
    if (at_plateau != nullptr) {
        out.plateau_spread = at_plateau->x.maxCoeff() - at_plateau->x.minCoeff();
        out.plateau_deviation =
            (at_plateau->x.array() - out.analytic_plateau_value).abs().maxCoeff();
        out.approaches_equilibrium = out.plateau_deviation <= 0.05;
    }
    return out;
}

}  // namespace awcoord
