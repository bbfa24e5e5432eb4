#include "ccbf/controller.hpp"

#include "ccbf/certify.hpp"
#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace ccbf;

namespace {

const Mat kI = Mat::Identity(2, 2);

NominalLaw pd_law() { return {NominalKind::pd_gravity, kI, 0.5 * kI}; }
NominalLaw ct_law() { return {NominalKind::computed_torque, kI, 0.5 * kI}; }

BarrierSpec ellipsoid_barrier() {
    EllipsoidConstraint raw{0.8, (Vec(2) << 0.9, 0.0).finished(),
                            (Mat(2, 2) << 1, 0, 0, 2).finished()};
    BarrierSpec spec;
    spec.form = HighOrderSpec{SmoothedConstraint{raw, 0.7}, ClassKappa{}};
    spec.alpha = ClassKappa{};
    return spec;
}

BarrierSpec velocity_barrier() {
    BarrierSpec spec;
    spec.form = RelDeg1Spec{0.01, Mat::Zero(2, 2), kI};
    spec.alpha = ClassKappa{};
    return spec;
}

CompatController reldeg2_controller(double rho = 0.0, bool augmented = false) {
    CompatController c;
    c.nominal = pd_law();
    c.barrier = ellipsoid_barrier();
    c.weight = WeightChoice{WeightKind::inverse_mass};
    c.rho = rho;
    c.augmented = augmented;
    return c;
}

CompatController reldeg1_controller() {
    CompatController c;
    c.nominal = ct_law();
    c.barrier = velocity_barrier();
    c.weight = WeightChoice{WeightKind::inverse_mass_squared};
    return c;
}

Vec random_state(std::mt19937& rng) {
    Vec x(4);
    x << oracles::random_vec(rng, 2, -1.0, 2.0), oracles::random_vec(rng, 2, -1.5, 1.5);
    return x;
}

}  // namespace

TEST_CASE("nominal laws") {
    const auto arm = two_link_arm();
    const Vec origin = Vec::Zero(4);

    SECTION("both laws reduce to gravity compensation at the origin") {
        const Vec tau0 = arm.gravity_torque(Vec::Zero(2));
        REQUIRE((nominal_control(pd_law(), arm, origin) - tau0).norm() == 0.0);
        REQUIRE((nominal_control(ct_law(), arm, origin) - tau0).norm() == 0.0);
        REQUIRE(nominal_control(pd_law(), arm, origin)[0] == Catch::Approx(29.43));
        REQUIRE(nominal_control(pd_law(), arm, origin)[1] == Catch::Approx(9.81));
    }

    SECTION("origin is a closed-loop equilibrium") {
        for (const auto& law : {pd_law(), ct_law()}) {
            const Vec u = nominal_control(law, arm, origin);
            REQUIRE(mechanical_rhs(arm, origin, u).norm() == 0.0);
        }
    }

    SECTION("gain validation") {
        NominalLaw bad{NominalKind::pd_gravity, -kI, 0.5 * kI};
        REQUIRE_THROWS_AS(bad.validate(), ConfigError);
        NominalLaw asym{NominalKind::pd_gravity, (Mat(2, 2) << 1, 1, 0, 1).finished(), kI};
        REQUIRE_THROWS_AS(asym.validate(), ConfigError);
    }
}

TEST_CASE("paired Lyapunov functions") {
    const auto arm = two_link_arm();

    SECTION("zero at the origin") {
        REQUIRE(lyapunov(pd_law(), arm, Vec::Zero(4)) == 0.0);
        REQUIRE(lyapunov(ct_law(), arm, Vec::Zero(4)) == 0.0);
    }
    SECTION("kinetic term uses the configuration-dependent mass") {
        Vec x(4);
        x << 0.0, 0.0, 1.0, 0.0;
        REQUIRE(lyapunov(pd_law(), arm, x) == Catch::Approx(2.5).margin(1e-14));
    }
    SECTION("computed-torque pairing is the flat quadratic") {
        Vec x(4);
        x << 1.0, 0.0, 0.0, 0.0;
        REQUIRE(lyapunov(ct_law(), arm, x) == Catch::Approx(0.5).margin(1e-15));
    }
    SECTION("gradient matches finite differences") {
        std::mt19937 rng(31);
        for (const auto& law : {pd_law(), ct_law()}) {
            auto value = [&](const Vec& x) { return lyapunov(law, arm, x); };
            for (int i = 0; i < 100; ++i) {
                const Vec x = random_state(rng);
                const Vec g = lyapunov_gradient(law, arm, x);
                REQUIRE((g - oracles::fd_gradient(value, x)).norm() <=
                        1e-6 * std::max(1.0, g.norm()));
            }
        }
    }
    SECTION("potential level-set membership") {
        const auto law = pd_law();
        REQUIRE(potential(law, (Vec(2) << 1.0, 0.0).finished()) == Catch::Approx(0.5));
        REQUIRE(in_potential_levelset(law, (Vec(2) << 1.0, 0.0).finished(), 0.5));
        REQUIRE_FALSE(in_potential_levelset(law, (Vec(2) << 1.1, 0.0).finished(), 0.5));
    }
}

TEST_CASE("closed-form filter against the KKT oracle") {
    const auto arm = two_link_arm();
    std::mt19937 rng(37);

    for (const auto& ctrl : {reldeg2_controller(), reldeg1_controller()}) {
        int found = 0;
        while (found < 300) {
            const Vec x = random_state(rng);
            const auto dec = qp_filter(ctrl, arm, x);
            if (dec.margin >= 0.0) {
                // nominal branch must return the nominal command bit-exactly
                REQUIRE((dec.u - nominal_control(ctrl.nominal, arm, x)).norm() == 0.0);
                continue;
            }
            ++found;
            const Vec q = x.head(2);
            const Mat G = ctrl.weight.matrix(arm, q);
            const Vec k = nominal_control(ctrl.nominal, arm, x);
            const auto lie = lie_derivatives(ctrl.barrier, arm, x);
            const double b = -(lie.along_drift + ctrl.barrier.alpha(ctrl.barrier.value(x)));
            const Vec u_oracle = oracles::kkt_active_solution(G, k, lie.along_input, b);
            REQUIRE((dec.u - u_oracle).cwiseAbs().maxCoeff() < 1e-8);
            REQUIRE(dec.branch == Branch::filtered);
        }
    }
}

TEST_CASE("filtered branch holds the barrier constraint with equality") {
    const auto arm = two_link_arm();
    std::mt19937 rng(41);
    for (const auto& ctrl : {reldeg2_controller(), reldeg1_controller()}) {
        int found = 0;
        while (found < 200) {
            const Vec x = random_state(rng);
            const auto dec = qp_filter(ctrl, arm, x);
            if (dec.branch != Branch::filtered) continue;
            ++found;
            const auto lie = lie_derivatives(ctrl.barrier, arm, x);
            const double residual = lie.along_drift + lie.along_input.dot(dec.u) +
                                    ctrl.barrier.alpha(ctrl.barrier.value(x));
            REQUIRE(std::abs(residual) < 1e-10);
        }
    }
}

TEST_CASE("filter optimality among feasible commands") {
    const auto arm = two_link_arm();
    std::mt19937 rng(43);
    const auto ctrl = reldeg2_controller();
    int found = 0;
    while (found < 20) {
        const Vec x = random_state(rng);
        const auto dec = qp_filter(ctrl, arm, x);
        if (dec.branch != Branch::filtered) continue;
        ++found;
        const Vec q = x.head(2);
        const Mat G = ctrl.weight.matrix(arm, q);
        const Vec k = nominal_control(ctrl.nominal, arm, x);
        const auto lie = lie_derivatives(ctrl.barrier, arm, x);
        const double best = (dec.u - k).dot(G * (dec.u - k));
        for (int i = 0; i < 100; ++i) {
            Vec w = oracles::random_vec(rng, 2, -1.0, 1.0);
            if (lie.along_input.dot(w) < 0.0) w = -w;  // keep the constraint satisfied
            const Vec u_alt = dec.u + w;
            REQUIRE((u_alt - k).dot(G * (u_alt - k)) >= best - 1e-12);
        }
    }
}

TEST_CASE("branch continuity across the margin switch") {
    const auto arm = two_link_arm();
    const auto ctrl = reldeg2_controller();
    std::mt19937 rng(47);
    // bisect along a velocity ray to land just below the switching surface
    int found = 0;
    while (found < 20) {
        Vec x = random_state(rng);
        auto margin_at = [&](double s) {
            Vec y = x;
            y.tail(2) *= s;
            return qp_filter(ctrl, arm, y).margin;
        };
        if (margin_at(0.0) <= 0.0 || margin_at(1.0) >= 0.0) continue;
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            (margin_at(mid) >= 0.0 ? lo : hi) = mid;
        }
        Vec y = x;
        y.tail(2) *= hi;
        const auto dec = qp_filter(ctrl, arm, y);
        if (!(dec.margin < 0.0 && dec.margin > -1e-6)) continue;
        ++found;
        const Vec k = nominal_control(ctrl.nominal, arm, y);
        REQUIRE((dec.u - k).norm() < 1e-4);  // |ubar - k| -> 0 as z -> 0-
    }
}

TEST_CASE("weighted-norm identity for the inverse-mass weight") {
    const auto arm = two_link_arm();
    const auto ctrl = reldeg2_controller();
    std::mt19937 rng(53);
    for (int i = 0; i < 300; ++i) {
        const Vec x = random_state(rng);
        const Vec q = x.head(2);
        const auto lie = lie_derivatives(ctrl.barrier, arm, x);
        const Vec lg = lie.along_input.transpose();
        const double denom = lg.dot(ctrl.weight.inverse_apply(arm, q, lg));
        const Vec gc = ctrl.barrier.high_order_spec().constraint.gradient(q);
        const double direct = gc.dot(arm.mass_matrix(q).llt().solve(gc));
        REQUIRE(std::abs(denom - direct) < 1e-12 * std::max(1.0, std::abs(direct)));
    }
}

TEST_CASE("equilibrium preservation") {
    const auto arm = two_link_arm();
    const Vec origin = Vec::Zero(4);
    const auto ctrl = reldeg1_controller();
    const auto dec = qp_filter(ctrl, arm, origin);
    REQUIRE(dec.branch == Branch::nominal);
    REQUIRE((dec.u - nominal_control(ctrl.nominal, arm, origin)).norm() == 0.0);
    REQUIRE(mechanical_rhs(arm, origin, dec.u).norm() == 0.0);
}

TEST_CASE("degenerate filter detection") {
    const auto arm = two_link_arm();
    CompatController ctrl;
    ctrl.nominal = pd_law();
    // position-weighted velocity barrier: at rest the input direction vanishes
    // while h < 0 makes the margin negative
    BarrierSpec spec;
    spec.form = RelDeg1Spec{0.01, kI, kI};
    spec.alpha = ClassKappa{};
    ctrl.barrier = spec;
    ctrl.weight = WeightChoice{WeightKind::identity};
    Vec x(4);
    x << 1.0, 0.0, 0.0, 0.0;
    REQUIRE_THROWS_AS(qp_filter(ctrl, arm, x), DegenerateFilterError);
    try {
        qp_filter(ctrl, arm, x);
    } catch (const DegenerateFilterError& e) {
        REQUIRE((e.state - x).norm() == 0.0);
    }
}

TEST_CASE("augmented controller") {
    const auto arm = two_link_arm();
    const auto ctrl = reldeg2_controller(25.0, true);
    std::mt19937 rng(59);

    SECTION("preconditions are enforced") {
        CompatController bad = ctrl;
        bad.weight = WeightChoice{WeightKind::identity};
        REQUIRE_THROWS_AS(augmented_control(bad, arm, Vec::Zero(4)), ConfigError);
        CompatController bad2 = ctrl;
        bad2.barrier = velocity_barrier();
        REQUIRE_THROWS_AS(augmented_control(bad2, arm, Vec::Zero(4)), ConfigError);
        CompatController bad3 = ctrl;
        bad3.rho = 0.0;
        REQUIRE_THROWS_AS(augmented_control(bad3, arm, Vec::Zero(4)), ConfigError);
    }

    SECTION("at rest with positive rest margin the nominal branch is active") {
        Vec x(4);
        x << 0.5, 0.1, 0.0, 0.0;
        REQUIRE(rest_margin(ctrl.barrier, arm, ctrl.nominal, x.head(2)) > 0.0);
        const auto dec = augmented_control(ctrl, arm, x);
        REQUIRE(dec.branch == Branch::nominal);
        REQUIRE((dec.u - nominal_control(ctrl.nominal, arm, x)).norm() == 0.0);
    }

    SECTION("outward motion matches the plain filter") {
        int found = 0;
        while (found < 100) {
            const Vec x = random_state(rng);
            const auto dec = augmented_control(ctrl, arm, x);
            if (dec.branch != Branch::filtered) continue;
            ++found;
            REQUIRE(*ctrl.barrier.clearance_rate(x) <= 0.0);
            const auto plain = qp_filter(ctrl, arm, x);
            REQUIRE((dec.u - plain.u).norm() == 0.0);
        }
    }

    SECTION("augmented branch adds exactly the velocity-aligned correction") {
        int found = 0;
        while (found < 100) {
            const Vec x = random_state(rng);
            const auto dec = augmented_control(ctrl, arm, x);
            if (dec.branch != Branch::filtered_augmented) continue;
            ++found;
            const Vec q = x.head(2), v = x.tail(2);
            const double z = filter_margin(ctrl.barrier, arm,
                                           [&](const Vec& s) { return nominal_control(ctrl.nominal, arm, s); },
                                           x);
            REQUIRE(z < 0.0);
            const auto& c = ctrl.barrier.high_order_spec().constraint;
            const double cdot = c.gradient(q).dot(v);
            REQUIRE(cdot > 0.0);
            const double wnorm = c.gradient(q).dot(arm.mass_matrix(q).llt().solve(c.gradient(q)));
            const Vec xi = (ctrl.rho * ctrl.rho * z * cdot / wnorm) * v;
            const Vec ubar = qp_filter(ctrl, arm, x).u;
            REQUIRE((dec.u - ubar - xi).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, xi.norm()));
        }
    }
}

TEST_CASE("supply-rate residual") {
    const auto arm = two_link_arm();
    std::mt19937 rng(61);

    SECTION("zero at rest") {
        for (const auto& ctrl : {reldeg2_controller(), reldeg1_controller()}) {
            Vec x(4);
            x << oracles::random_vec(rng, 2, -1.0, 1.0), Vec::Zero(2);
            const Vec u = nominal_control(ctrl.nominal, arm, x);
            REQUIRE(supply_rate_residual(ctrl, arm, x, u) == 0.0);
        }
    }

    SECTION("nominal branch dissipates exactly at rate v'K_d v") {
        for (const auto& ctrl : {reldeg2_controller(), reldeg1_controller()}) {
            for (int i = 0; i < 200; ++i) {
                const Vec x = random_state(rng);
                const Vec u = nominal_control(ctrl.nominal, arm, x);
                REQUIRE(std::abs(supply_rate_residual(ctrl, arm, x, u)) < 1e-11);
            }
        }
    }

    SECTION("filtered branch never exceeds the supply rate") {
        const auto ctrl = reldeg2_controller();
        int found = 0;
        while (found < 200) {
            const Vec x = random_state(rng);
            const auto dec = qp_filter(ctrl, arm, x);
            if (dec.branch != Branch::filtered) continue;
            const double cdot = *ctrl.barrier.clearance_rate(x);
            if (cdot > 0.0) continue;  // augmented-territory states excluded
            ++found;
            REQUIRE(supply_rate_residual(ctrl, arm, x, dec.u) <= 1e-11);
        }
    }
}

TEST_CASE("level-set alignment reductions") {
    const auto arm = two_link_arm();
    std::mt19937 rng(67);

    SECTION("computed torque with velocity barrier and squared inverse-mass weight") {
        const auto ctrl = reldeg1_controller();
        for (int i = 0; i < 300; ++i) {
            const Vec x = random_state(rng);
            const Vec v = x.tail(2);
            const double lhs = gradient_alignment(ctrl, arm, x);
            REQUIRE(std::abs(lhs + v.squaredNorm()) < 1e-10 * std::max(1.0, v.squaredNorm()));
        }
    }

    SECTION("pd-gravity with high-order barrier and inverse-mass weight gives cdot") {
        const auto ctrl = reldeg2_controller();
        for (int i = 0; i < 300; ++i) {
            const Vec x = random_state(rng);
            const double lhs = gradient_alignment(ctrl, arm, x);
            const double cdot = *ctrl.barrier.clearance_rate(x);
            REQUIRE(std::abs(lhs - cdot) < 1e-10 * std::max(1.0, std::abs(cdot)));
        }
    }

    SECTION("zero at rest for both pairings") {
        for (const auto& ctrl : {reldeg2_controller(), reldeg1_controller()}) {
            Vec x(4);
            x << oracles::random_vec(rng, 2, -1.0, 1.0), Vec::Zero(2);
            REQUIRE(gradient_alignment(ctrl, arm, x) == 0.0);
        }
    }
}
