#pragma once

#include "ccbf/dynamics.hpp"
#include "ccbf/errors.hpp"
#include "ccbf/linalg.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <variant>

namespace ccbf {

/// Extended class-K gain. Only the linear family alpha(s) = gain * s is
/// implemented; the tag keeps the door open for other shapes.
enum class KappaKind { linear };

struct ClassKappa {
    KappaKind kind = KappaKind::linear;
    double gain = 1.0;

    double operator()(double s) const { return gain * s; }
    double slope(double /*s*/) const { return gain; }

    void validate() const {
        if (!(gain > 0.0)) throw ConfigError("class-K gain must be positive");
    }
};

/// C^2 unit saturation: identity-like cubic ((s/knee)-1)^3 + 1 below the knee,
/// exactly 1 above it. Value and first two derivatives are continuous at the
/// knee, and it vanishes exactly at s = 0.
struct SmoothSaturation {
    double value = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
};

inline SmoothSaturation smooth_saturate(double s, double knee) {
    if (!(knee > 0.0)) throw ConfigError("saturation knee must be positive");
    if (s / knee > 1.0) return {1.0, 0.0, 0.0};
    const double t = s / knee - 1.0;
    return {t * t * t + 1.0, 3.0 * t * t / knee, 6.0 * t / (knee * knee)};
}

/// Raw keep-in constraint cbar(q) = a - (q - center)' shape (q - center).
struct EllipsoidConstraint {
    double a = 0.0;
    Vec center;
    Mat shape;  // symmetric

    double value(const Vec& q) const {
        const Vec d = q - center;
        return a - d.dot(shape * d);
    }
    Vec gradient(const Vec& q) const { return -2.0 * (shape * (q - center)); }
    Mat hessian() const { return -2.0 * shape; }
};

/// Constraint with the gradient singularity at the center removed: for
/// knee > 0, c(q) = saturate(cbar(q)); the plateau above the knee makes both
/// gradient and Hessian vanish together wherever the gradient vanishes.
/// knee <= 0 disables the smoothing (c = cbar), kept for negative controls.
struct SmoothedConstraint {
    EllipsoidConstraint base;
    double knee = 0.0;

    bool smoothed() const { return knee > 0.0; }

    double value(const Vec& q) const {
        const double cb = base.value(q);
        return smoothed() ? smooth_saturate(cb, knee).value : cb;
    }
    Vec gradient(const Vec& q) const {
        const Vec gb = base.gradient(q);
        if (!smoothed()) return gb;
        return smooth_saturate(base.value(q), knee).d1 * gb;
    }
    Mat hessian(const Vec& q) const {
        if (!smoothed()) return base.hessian();
        const auto s = smooth_saturate(base.value(q), knee);
        const Vec gb = base.gradient(q);
        return s.d2 * (gb * gb.transpose()) + s.d1 * base.hessian();
    }
};

/// Relative-degree-one quadratic barrier h = b - (q'P_q q + v'P_v v)/2.
struct RelDeg1Spec {
    double b = 0.0;
    Mat P_q;
    Mat P_v;  // positive definite
};

/// High-order barrier h = cdot + phi(c) built from a configuration constraint.
struct HighOrderSpec {
    SmoothedConstraint constraint;
    ClassKappa phi;
};

/// A zeroing barrier plus the class-K rate gain used in the filter condition
/// hdot >= -alpha(h).
struct BarrierSpec {
    std::variant<RelDeg1Spec, HighOrderSpec> form;
    ClassKappa alpha;

    bool high_order() const { return std::holds_alternative<HighOrderSpec>(form); }
    const HighOrderSpec& high_order_spec() const { return std::get<HighOrderSpec>(form); }
    const RelDeg1Spec& rel_deg1_spec() const { return std::get<RelDeg1Spec>(form); }

    /// h(x) with x = (q, v).
    double value(const Vec& x) const {
        const auto n = x.size() / 2;
        const Vec q = x.head(n);
        const Vec v = x.tail(n);
        if (high_order()) {
            const auto& ho = high_order_spec();
            return ho.constraint.gradient(q).dot(v) + ho.phi(ho.constraint.value(q));
        }
        const auto& r1 = rel_deg1_spec();
        return r1.b - 0.5 * (q.dot(r1.P_q * q) + v.dot(r1.P_v * v));
    }

    /// Full-state gradient of h.
    Vec state_gradient(const Vec& x) const {
        const auto n = x.size() / 2;
        const Vec q = x.head(n);
        const Vec v = x.tail(n);
        Vec g(2 * n);
        if (high_order()) {
            const auto& ho = high_order_spec();
            const Vec gc = ho.constraint.gradient(q);
            g.head(n) = ho.constraint.hessian(q) * v + ho.phi.slope(ho.constraint.value(q)) * gc;
            g.tail(n) = gc;
        } else {
            const auto& r1 = rel_deg1_spec();
            g.head(n) = -(r1.P_q * q);
            g.tail(n) = -(r1.P_v * v);
        }
        return g;
    }

    /// Configuration clearance c(q); empty for relative-degree-one barriers.
    std::optional<double> clearance(const Vec& q) const {
        if (!high_order()) return std::nullopt;
        return high_order_spec().constraint.value(q);
    }

    /// cdot = grad c(q) . v; empty for relative-degree-one barriers.
    std::optional<double> clearance_rate(const Vec& x) const {
        if (!high_order()) return std::nullopt;
        const auto n = x.size() / 2;
        return high_order_spec().constraint.gradient(x.head(n)).dot(x.tail(n));
    }
};

struct LieDerivatives {
    double along_drift = 0.0;  // L_f h
    RowVec along_input;        // L_g h
};

/// Lie derivatives of h along the mechanical embedding f = (v, M^-1(-Cv - tau_g)),
/// g = (0; M^-1):
///   high-order: L_f h = grad_c' M^-1 (-Cv - tau_g) + phi' grad_c'v + v' hess_c v,
///               L_g h = grad_c' M^-1
///   rel-deg-1:  L_f h = -q'P_q v - v'P_v M^-1 (-Cv - tau_g),
///               L_g h = -v'P_v M^-1
inline LieDerivatives lie_derivatives(const BarrierSpec& spec, const MechanicalModel& model,
                                      const Vec& x) {
    const Vec q = state_q(model, x);
    const Vec v = state_v(model, x);
    const auto llt = mass_llt(model, q);
    const Vec drift_accel = llt.solve(-model.coriolis(q, v) * v - model.gravity_torque(q));

    LieDerivatives out;
    if (spec.high_order()) {
        const auto& ho = spec.high_order_spec();
        const Vec gc = ho.constraint.gradient(q);
        const double c = ho.constraint.value(q);
        out.along_drift = gc.dot(drift_accel) + ho.phi.slope(c) * gc.dot(v)
                        + v.dot(ho.constraint.hessian(q) * v);
        out.along_input = llt.solve(gc).transpose();  // M symmetric
    } else {
        const auto& r1 = spec.rel_deg1_spec();
        const Vec pv = r1.P_v * v;
        out.along_drift = -q.dot(r1.P_q * v) - pv.dot(drift_accel);
        out.along_input = -llt.solve(pv).transpose();
    }
    return out;
}

/// Filter margin z = L_f h + L_g h k(x) + alpha(h); its sign selects the
/// controller branch (z >= 0: nominal command already satisfies the barrier).
inline double filter_margin(const BarrierSpec& spec, const MechanicalModel& model,
                            const std::function<Vec(const Vec&)>& nominal, const Vec& x) {
    const auto lie = lie_derivatives(spec, model, x);
    return lie.along_drift + lie.along_input.dot(nominal(x)) + spec.alpha(spec.value(x));
}

}  // namespace ccbf
