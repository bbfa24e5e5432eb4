#pragma once

#include "ccbf/certify.hpp"
#include "ccbf/controller.hpp"
#include "ccbf/dynamics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace ccbf {

/// Matched sinusoidal disturbance d_i(t) = A_i sin(w_i t), added to the
/// commanded torque inside the dynamics.
struct DisturbanceSpec {
    Vec amplitudes;   // [N·m]
    Vec frequencies;  // [rad/s]

    Vec value(double t) const {
        Vec d(amplitudes.size());
        for (Eigen::Index i = 0; i < d.size(); ++i)
            d[i] = amplitudes[i] * std::sin(frequencies[i] * t);
        return d;
    }
};

enum class Integrator { rk4 };

struct SimConfig {
    double dt = 1e-3;      // [s]
    double horizon = 30.0; // [s]
    Integrator integrator = Integrator::rk4;
    std::optional<DisturbanceSpec> disturbance;

    void validate(int input_dim) const {
        if (!(dt > 0.0)) throw ConfigError("simulation step must be positive");
        if (!(horizon >= dt)) throw ConfigError("simulation horizon must be at least one step");
        if (disturbance &&
            (disturbance->amplitudes.size() != input_dim ||
             disturbance->frequencies.size() != input_dim))
            throw ConfigError("disturbance dimensions must match the input dimension");
    }
};

/// Closed-loop log, one row per step start plus the terminal state. Scalars
/// without a defined value for the active barrier form (clearance and its
/// rate for relative-degree-one barriers) are NaN.
struct Trajectory {
    std::vector<double> time;
    std::vector<Vec> state;
    std::vector<Vec> control;  // commanded u*(x), excludes the disturbance
    std::vector<double> barrier_value;      // h
    std::vector<double> lyapunov_value;     // V
    std::vector<double> margin;             // z
    std::vector<double> clearance;          // c
    std::vector<double> clearance_rate;     // cdot
    std::vector<double> rest_margin_value;  // margin at rest for the logged q
    std::vector<double> supply_residual;
    std::vector<Branch> branch;
    bool aborted = false;
    std::string abort_reason;

    std::size_t rows() const { return time.size(); }
};

namespace detail {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline void log_row(Trajectory& traj, const MechanicalModel& model, const CompatController& ctrl,
                    double t, const Vec& x) {
    const ControlDecision dec = evaluate_control(ctrl, model, x);
    traj.time.push_back(t);
    traj.state.push_back(x);
    traj.control.push_back(dec.u);
    traj.barrier_value.push_back(ctrl.barrier.value(x));
    traj.lyapunov_value.push_back(lyapunov(ctrl.nominal, model, x));
    traj.margin.push_back(dec.margin);
    traj.clearance.push_back(ctrl.barrier.clearance(state_q(model, x)).value_or(kNaN));
    traj.clearance_rate.push_back(ctrl.barrier.clearance_rate(x).value_or(kNaN));
    traj.rest_margin_value.push_back(
        ctrl.barrier.high_order() ? rest_margin(ctrl.barrier, model, ctrl.nominal, state_q(model, x))
                                  : kNaN);
    traj.supply_residual.push_back(supply_rate_residual(ctrl, model, x, dec.u));
    traj.branch.push_back(dec.branch);
}

}  // namespace detail

/// Fixed-step classical 4-stage integration of
/// xdot = f(x) + g(x) (u*(x) + d(t)), with the control re-evaluated at every
/// stage. Identical inputs produce bit-identical trajectories. A degenerate
/// filter or a non-finite state aborts with the partial log and a diagnostic.
inline Trajectory integrate(const MechanicalModel& model, const CompatController& ctrl,
                            const Vec& x0, const SimConfig& cfg) {
    cfg.validate(model.dof);
    ctrl.validate();
    if (!x0.allFinite() || x0.size() != 2 * model.dof)
        throw ConfigError("initial state must be finite with dimension 2*dof");

    const auto steps = static_cast<std::size_t>(std::llround(cfg.horizon / cfg.dt));
    Trajectory traj;
    traj.time.reserve(steps + 1);

    auto field = [&](const Vec& x, double t) {
        Vec u = evaluate_control(ctrl, model, x).u;
        if (cfg.disturbance) u += cfg.disturbance->value(t);
        return mechanical_rhs(model, x, u);
    };

    Vec x = x0;
    double t = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
        try {
            detail::log_row(traj, model, ctrl, t, x);
            const double h = cfg.dt;
            const Vec k1 = field(x, t);
            const Vec k2 = field(x + 0.5 * h * k1, t + 0.5 * h);
            const Vec k3 = field(x + 0.5 * h * k2, t + 0.5 * h);
            const Vec k4 = field(x + h * k3, t + h);
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t = static_cast<double>(k + 1) * cfg.dt;
        } catch (const DegenerateFilterError& e) {
            traj.aborted = true;
            traj.abort_reason = e.what();
            return traj;
        }
        if (!x.allFinite()) {
            traj.aborted = true;
            traj.abort_reason = "state became non-finite at t = " + std::to_string(t);
            return traj;
        }
    }
    try {
        detail::log_row(traj, model, ctrl, t, x);
    } catch (const DegenerateFilterError& e) {
        traj.aborted = true;
        traj.abort_reason = e.what();
    }
    return traj;
}

/// Summary of the safety/stability quantities a run is judged on.
struct TrajectoryMetrics {
    double min_barrier = 0.0;
    double min_clearance = 0.0;                // NaN when no clearance is defined
    double max_step_lyapunov_increase = 0.0;   // max over steps of V_{k+1} - V_k
    double terminal_state_norm = 0.0;
    double max_supply_residual = 0.0;
    std::array<std::size_t, 3> branch_counts{{0, 0, 0}};
    std::size_t steps = 0;
};

inline TrajectoryMetrics trajectory_metrics(const Trajectory& traj) {
    if (traj.rows() == 0) throw ConfigError("cannot summarize an empty trajectory");
    TrajectoryMetrics m;
    m.steps = traj.rows() - 1;
    m.min_barrier = std::numeric_limits<double>::infinity();
    m.min_clearance = detail::kNaN;
    m.max_step_lyapunov_increase = -std::numeric_limits<double>::infinity();
    m.max_supply_residual = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < traj.rows(); ++i) {
        m.min_barrier = std::min(m.min_barrier, traj.barrier_value[i]);
        const double c = traj.clearance[i];
        if (!std::isnan(c)) m.min_clearance = std::isnan(m.min_clearance) ? c : std::min(m.min_clearance, c);
        m.max_supply_residual = std::max(m.max_supply_residual, traj.supply_residual[i]);
        m.branch_counts[static_cast<std::size_t>(traj.branch[i])]++;
        if (i + 1 < traj.rows())
            m.max_step_lyapunov_increase = std::max(
                m.max_step_lyapunov_increase, traj.lyapunov_value[i + 1] - traj.lyapunov_value[i]);
    }
    if (traj.rows() == 1) m.max_step_lyapunov_increase = 0.0;
    m.terminal_state_norm = traj.state.back().norm();
    return m;
}

/// CSV with the fixed header
/// t,q1..qn,v1..vn,u1..un,h,V,z,c,cdot,branch,supply_residual.
inline void write_trajectory_csv(const Trajectory& traj, std::ostream& os) {
    if (traj.rows() == 0) return;
    const auto n = traj.state.front().size() / 2;
    os << "t";
    for (Eigen::Index i = 1; i <= n; ++i) os << ",q" << i;
    for (Eigen::Index i = 1; i <= n; ++i) os << ",v" << i;
    for (Eigen::Index i = 1; i <= n; ++i) os << ",u" << i;
    os << ",h,V,z,c,cdot,branch,supply_residual\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << ',' << buf;
    };
    for (std::size_t r = 0; r < traj.rows(); ++r) {
        std::snprintf(buf, sizeof buf, "%.17g", traj.time[r]);
        os << buf;
        for (Eigen::Index i = 0; i < 2 * n; ++i) put(traj.state[r][i]);
        for (Eigen::Index i = 0; i < n; ++i) put(traj.control[r][i]);
        put(traj.barrier_value[r]);
        put(traj.lyapunov_value[r]);
        put(traj.margin[r]);
        put(traj.clearance[r]);
        put(traj.clearance_rate[r]);
        os << ',' << static_cast<int>(traj.branch[r]);
        put(traj.supply_residual[r]);
        os << '\n';
    }
}

}  // namespace ccbf
