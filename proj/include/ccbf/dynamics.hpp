#pragma once

#include "ccbf/errors.hpp"
#include "ccbf/grid.hpp"
#include "ccbf/linalg.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace ccbf {

/// Full state x = (q, v) for mechanical systems, plain x otherwise.
using StateVec = Eigen::VectorXd;

/// Control-affine system xdot = drift(x) + input_matrix(x) u. Evaluation maps
/// must be deterministic and dimension-consistent; models are immutable after
/// construction and safe to share across threads.
struct AffineDynamics {
    int state_dim = 0;
    int input_dim = 0;
    std::function<Vec(const Vec&)> drift;
    std::function<Mat(const Vec&)> input_matrix;
};

/// Rigid-body mechanical system M(q) vdot + C(q,v) v + tau_g(q) = u with the
/// usual structure: M symmetric positive definite, C built so that
/// v'(Mdot/2 - C)v = 0. `mass_partials` returns dM/dq_k for k = 0..dof-1 and
/// backs the analytic Mdot used by the energy bookkeeping.
struct MechanicalModel {
    int dof = 0;
    std::function<Mat(const Vec&)> mass_matrix;
    std::function<Mat(const Vec&, const Vec&)> coriolis;
    std::function<Vec(const Vec&)> gravity_torque;
    std::function<std::vector<Mat>(const Vec&)> mass_partials;
};

inline Vec state_q(const MechanicalModel& m, const Vec& x) { return x.head(m.dof); }
inline Vec state_v(const MechanicalModel& m, const Vec& x) { return x.tail(m.dof); }

/// Cholesky factor of M(q); throws SingularMassError if M is not positive definite.
inline Eigen::LLT<Mat> mass_llt(const MechanicalModel& m, const Vec& q) {
    Eigen::LLT<Mat> llt(m.mass_matrix(q));
    if (llt.info() != Eigen::Success)
        throw SingularMassError("mass matrix is not positive definite at queried configuration");
    return llt;
}

/// Mdot(q, v) = sum_k dM/dq_k * v_k.
inline Mat mass_rate(const MechanicalModel& m, const Vec& q, const Vec& v) {
    const auto parts = m.mass_partials(q);
    Mat md = Mat::Zero(m.dof, m.dof);
    for (int k = 0; k < m.dof; ++k) md += parts[static_cast<std::size_t>(k)] * v[k];
    return md;
}

/// v' (Mdot/2 - C) v; zero for a consistent Coriolis construction.
inline double skew_symmetry_defect(const MechanicalModel& m, const Vec& q, const Vec& v) {
    const Mat md = mass_rate(m, q, v);
    return v.dot((0.5 * md - m.coriolis(q, v)) * v);
}

/// Closed-loop right-hand side (v, M^-1(-Cv - tau_g + u)).
inline Vec mechanical_rhs(const MechanicalModel& m, const Vec& x, const Vec& u) {
    const Vec q = state_q(m, x);
    const Vec v = state_v(m, x);
    const auto llt = mass_llt(m, q);
    Vec dx(2 * m.dof);
    dx.head(m.dof) = v;
    dx.tail(m.dof) = llt.solve(-m.coriolis(q, v) * v - m.gravity_torque(q) + u);
    return dx;
}

/// Embed a mechanical model as xdot = f(x) + g(x) u with
/// f = (v, M^-1(-Cv - tau_g)) and g = (0; M^-1), i.e. g = E gbar, gbar = M^-1.
inline AffineDynamics to_affine(const MechanicalModel& m) {
    AffineDynamics dyn;
    dyn.state_dim = 2 * m.dof;
    dyn.input_dim = m.dof;
    dyn.drift = [m](const Vec& x) {
        return mechanical_rhs(m, x, Vec::Zero(m.dof));
    };
    dyn.input_matrix = [m](const Vec& x) {
        const Vec q = state_q(m, x);
        const auto llt = mass_llt(m, q);
        Mat g = Mat::Zero(2 * m.dof, m.dof);
        g.bottomRows(m.dof) = llt.solve(Mat::Identity(m.dof, m.dof));
        return g;
    };
    return dyn;
}

/// Planar two-link arm parameters: point masses at the distal link ends,
/// joint angles measured from the horizontal, gravity along -y.
struct TwoLinkArmParams {
    double l1 = 1.0;  // [m]
    double l2 = 1.0;  // [m]
    double m1 = 1.0;  // [kg]
    double m2 = 1.0;  // [kg]
    double g0 = 9.81; // [m/s^2]

    void validate() const {
        if (!(l1 > 0 && l2 > 0 && m1 > 0 && m2 > 0 && g0 > 0))
            throw ConfigError("two-link arm parameters must be strictly positive");
    }
};

/// Standard planar 2R manipulator with point masses at the link ends. The
/// Coriolis matrix comes from the Christoffel symbols of M(q), which makes
/// Mdot - 2C skew-symmetric identically.
inline MechanicalModel two_link_arm(const TwoLinkArmParams& p = {}) {
    p.validate();
    const double alpha = (p.m1 + p.m2) * p.l1 * p.l1 + p.m2 * p.l2 * p.l2;
    const double beta = p.m2 * p.l1 * p.l2;       // cos-coupling coefficient
    const double delta = p.m2 * p.l2 * p.l2;

    MechanicalModel m;
    m.dof = 2;
    m.mass_matrix = [=](const Vec& q) {
        const double c2 = std::cos(q[1]);
        Mat M(2, 2);
        M << alpha + 2.0 * beta * c2, delta + beta * c2,
             delta + beta * c2,       delta;
        return M;
    };
    m.coriolis = [=](const Vec& q, const Vec& v) {
        const double hc = -beta * std::sin(q[1]);
        Mat C(2, 2);
        C << hc * v[1], hc * (v[0] + v[1]),
             -hc * v[0], 0.0;
        return C;
    };
    m.gravity_torque = [=](const Vec& q) {
        Vec tau(2);
        tau[0] = (p.m1 + p.m2) * p.g0 * p.l1 * std::cos(q[0])
               + p.m2 * p.g0 * p.l2 * std::cos(q[0] + q[1]);
        tau[1] = p.m2 * p.g0 * p.l2 * std::cos(q[0] + q[1]);
        return tau;
    };
    m.mass_partials = [=](const Vec& q) {
        const double s2 = std::sin(q[1]);
        std::vector<Mat> parts(2, Mat::Zero(2, 2));
        parts[1] << -2.0 * beta * s2, -beta * s2,
                    -beta * s2,       0.0;
        return parts;
    };
    return m;
}

/// Velocity-homogeneous Coriolis bound: smallest k_c with |C(q,v)|_2 <= k_c |v|_2
/// over the given configuration grid, estimated from unit-velocity samples and
/// inflated by `safety` to guard grid undercoverage. Assumes C linear in v
/// (true for the Christoffel construction).
inline double coriolis_bound(const MechanicalModel& m, const GridSpec& q_grid,
                             double safety = 1.05, int unit_samples = 64) {
    q_grid.validate();
    std::vector<Vec> dirs;
    if (m.dof == 1) {
        dirs.push_back(Vec::Ones(1));
    } else if (m.dof == 2) {
        dirs.reserve(static_cast<std::size_t>(unit_samples));
        for (int i = 0; i < unit_samples; ++i) {
            const double th = 2.0 * M_PI * static_cast<double>(i) / unit_samples;
            Vec d(2);
            d << std::cos(th), std::sin(th);
            dirs.push_back(d);
        }
    } else {
        std::mt19937 rng(12345);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (int i = 0; i < unit_samples; ++i) {
            Vec d(m.dof);
            for (int k = 0; k < m.dof; ++k) d[k] = gauss(rng);
            d.normalize();
            dirs.push_back(d);
        }
    }
    double worst = 0.0;
    for_each_point(q_grid, [&](std::size_t, const Vec& q) {
        for (const auto& d : dirs)
            worst = std::max(worst, spectral_norm(m.coriolis(q, d)));
    });
    return safety * worst;
}

}  // namespace ccbf
