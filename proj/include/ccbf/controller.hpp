#pragma once

#include "ccbf/barrier.hpp"
#include "ccbf/dynamics.hpp"
#include "ccbf/errors.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace ccbf {

/// Nominal stabilizing laws for mechanical systems.
///  pd_gravity:      k = tau_g - K_p q - K_d v, paired with V = v'Mv/2 + q'K_p q/2
///  computed_torque: k = Cv + tau_g + M(-K_p q - K_d v), paired with V = (q'K_p q + v'v)/2
enum class NominalKind { pd_gravity, computed_torque };

struct NominalLaw {
    NominalKind kind = NominalKind::pd_gravity;
    Mat K_p;
    Mat K_d;

    void validate() const {
        if (!is_symmetric(K_p) || !is_symmetric(K_d))
            throw ConfigError("controller gains must be symmetric");
        if (min_symmetric_eigenvalue(K_p) <= 0.0 || min_symmetric_eigenvalue(K_d) <= 0.0)
            throw ConfigError("controller gains must be positive definite");
    }
};

inline Vec nominal_control(const NominalLaw& law, const MechanicalModel& model, const Vec& x) {
    const Vec q = state_q(model, x);
    const Vec v = state_v(model, x);
    const Vec pd = -(law.K_p * q) - law.K_d * v;
    if (law.kind == NominalKind::pd_gravity) return model.gravity_torque(q) + pd;
    return model.coriolis(q, v) * v + model.gravity_torque(q) + model.mass_matrix(q) * pd;
}

/// Lyapunov function paired with the law (see NominalKind).
inline double lyapunov(const NominalLaw& law, const MechanicalModel& model, const Vec& x) {
    const Vec q = state_q(model, x);
    const Vec v = state_v(model, x);
    if (law.kind == NominalKind::pd_gravity)
        return 0.5 * v.dot(model.mass_matrix(q) * v) + 0.5 * q.dot(law.K_p * q);
    return 0.5 * (q.dot(law.K_p * q) + v.dot(v));
}

/// Exact state gradient of the paired Lyapunov function. For pd_gravity the
/// q-part carries the configuration dependence of the kinetic term:
/// dV/dq_k = (K_p q)_k + v'(dM/dq_k)v / 2.
inline Vec lyapunov_gradient(const NominalLaw& law, const MechanicalModel& model, const Vec& x) {
    const Vec q = state_q(model, x);
    const Vec v = state_v(model, x);
    Vec g(2 * model.dof);
    if (law.kind == NominalKind::pd_gravity) {
        const auto parts = model.mass_partials(q);
        Vec gq = law.K_p * q;
        for (int k = 0; k < model.dof; ++k)
            gq[k] += 0.5 * v.dot(parts[static_cast<std::size_t>(k)] * v);
        g.head(model.dof) = gq;
        g.tail(model.dof) = model.mass_matrix(q) * v;
    } else {
        g.head(model.dof) = law.K_p * q;
        g.tail(model.dof) = v;
    }
    return g;
}

/// Configuration potential P(q) = q'K_p q / 2 and its level-set membership.
inline double potential(const NominalLaw& law, const Vec& q) { return 0.5 * q.dot(law.K_p * q); }

inline bool in_potential_levelset(const NominalLaw& law, const Vec& q, double nu) {
    return potential(law, q) <= nu;
}

/// Choice of the weighting matrix G(x) in the filter cost |u - k|_G^2 / 2.
enum class WeightKind { identity, gram_input, inverse_mass, inverse_mass_squared };

struct WeightChoice {
    WeightKind kind = WeightKind::identity;

    /// G(x) as an explicit matrix (offline checks, oracles).
    Mat matrix(const MechanicalModel& model, const Vec& q) const {
        const int n = model.dof;
        switch (kind) {
            case WeightKind::identity:
                return Mat::Identity(n, n);
            case WeightKind::inverse_mass:
                return mass_llt(model, q).solve(Mat::Identity(n, n));
            case WeightKind::gram_input:
            case WeightKind::inverse_mass_squared: {
                const Mat minv = mass_llt(model, q).solve(Mat::Identity(n, n));
                return minv.transpose() * minv;
            }
        }
        return Mat::Identity(n, n);
    }

    /// G(x)^-1 y using exact products with M (no extra solves).
    Vec inverse_apply(const MechanicalModel& model, const Vec& q, const Vec& y) const {
        switch (kind) {
            case WeightKind::identity:
                return y;
            case WeightKind::inverse_mass:
                return model.mass_matrix(q) * y;
            case WeightKind::gram_input:
            case WeightKind::inverse_mass_squared: {
                const Mat M = model.mass_matrix(q);
                return M * (M * y);
            }
        }
        return y;
    }
};

/// Which expression produced the command.
enum class Branch { nominal = 0, filtered = 1, filtered_augmented = 2 };

/// Safety-filtered controller: nominal law, barrier, weight, and (for the
/// augmented mechanical form) the velocity-gap gain rho.
struct CompatController {
    NominalLaw nominal;
    BarrierSpec barrier;
    WeightChoice weight;
    double rho = 0.0;
    bool augmented = false;

    void validate() const {
        nominal.validate();
        barrier.alpha.validate();
        if (augmented) {
            if (!barrier.high_order())
                throw ConfigError("augmented controller requires a high-order barrier");
            if (!(rho > 0.0)) throw ConfigError("augmented controller requires rho > 0");
        }
    }
};

struct ControlDecision {
    Vec u;
    Branch branch = Branch::nominal;
    double margin = 0.0;  // z at the evaluated state
};

namespace detail {

/// Below this input-direction norm the constrained branch refuses to act.
inline constexpr double kDegenerateDirectionTol = 1e-12;

struct FilterCore {
    Vec k;
    LieDerivatives lie;
    double z = 0.0;
};

inline FilterCore filter_core(const CompatController& ctrl, const MechanicalModel& model,
                              const Vec& x) {
    FilterCore core;
    core.k = nominal_control(ctrl.nominal, model, x);
    core.lie = lie_derivatives(ctrl.barrier, model, x);
    core.z = core.lie.along_drift + core.lie.along_input.dot(core.k)
           + ctrl.barrier.alpha(ctrl.barrier.value(x));
    return core;
}

/// Constrained branch ubar = k - z G^-1 Lgh' / |Lgh'|_{G^-1}^2.
inline Vec constrained_command(const CompatController& ctrl, const MechanicalModel& model,
                               const Vec& x, const FilterCore& core) {
    const Vec lg = core.lie.along_input.transpose();
    if (lg.norm() < kDegenerateDirectionTol) {
        std::ostringstream msg;
        msg << "safety filter is degenerate: margin " << core.z
            << " < 0 with vanishing barrier input direction";
        throw DegenerateFilterError(msg.str(), x);
    }
    const Vec q = state_q(model, x);
    const Vec ginv_lg = ctrl.weight.inverse_apply(model, q, lg);
    const double denom = lg.dot(ginv_lg);
    return core.k - (core.z / denom) * ginv_lg;
}

}  // namespace detail

/// Closed-form minimally invasive filter: the unique minimizer of
/// |u - k|_G^2 / 2 subject to L_f h + L_g h u >= -alpha(h). Nominal when the
/// margin is already nonnegative, otherwise the single-constraint projection.
inline ControlDecision qp_filter(const CompatController& ctrl, const MechanicalModel& model,
                                 const Vec& x) {
    const auto core = detail::filter_core(ctrl, model, x);
    if (core.z >= 0.0) return {core.k, Branch::nominal, core.z};
    return {detail::constrained_command(ctrl, model, x, core), Branch::filtered, core.z};
}

/// Augmented mechanical controller (high-order barrier, G = M^-1): adds the
/// velocity-aligned term xi = rho^2 z cdot / |grad c|_{M^-1}^2 * v on the
/// branch where the filter would otherwise feed energy back into the system.
inline ControlDecision augmented_control(const CompatController& ctrl,
                                         const MechanicalModel& model, const Vec& x) {
    if (!ctrl.barrier.high_order())
        throw ConfigError("augmented control requires a high-order barrier");
    if (ctrl.weight.kind != WeightKind::inverse_mass)
        throw ConfigError("augmented control requires the inverse-mass weight");
    if (!(ctrl.rho > 0.0)) throw ConfigError("augmented control requires rho > 0");

    const auto core = detail::filter_core(ctrl, model, x);
    if (core.z >= 0.0) return {core.k, Branch::nominal, core.z};

    const Vec ubar = detail::constrained_command(ctrl, model, x, core);
    const double cdot = *ctrl.barrier.clearance_rate(x);
    if (cdot <= 0.0) return {ubar, Branch::filtered, core.z};

    const Vec q = state_q(model, x);
    const Vec v = state_v(model, x);
    const Vec gc = ctrl.barrier.high_order_spec().constraint.gradient(q);
    const double denom = gc.dot(mass_llt(model, q).solve(gc));  // |grad c|_{M^-1}^2
    const Vec xi = (ctrl.rho * ctrl.rho * core.z * cdot / denom) * v;
    return {ubar + xi, Branch::filtered_augmented, core.z};
}

/// Dispatch on the controller form.
inline ControlDecision evaluate_control(const CompatController& ctrl,
                                        const MechanicalModel& model, const Vec& x) {
    return ctrl.augmented ? augmented_control(ctrl, model, x) : qp_filter(ctrl, model, x);
}

/// Passivity monitor: Vdot(x, u) - v'mu with supply input mu = -K_d v and
/// output v. Vdot is the exact gradient contracted with the closed-loop field,
/// not a finite difference of logged values.
inline double supply_rate_residual(const CompatController& ctrl, const MechanicalModel& model,
                                   const Vec& x, const Vec& u) {
    const Vec v = state_v(model, x);
    const double vdot = lyapunov_gradient(ctrl.nominal, model, x).dot(mechanical_rhs(model, x, u));
    return vdot + v.dot(ctrl.nominal.K_d * v);
}

}  // namespace ccbf
