#include "ccbf/dynamics.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace ccbf;

namespace {

MechanicalModel zero_coriolis_model() {
    MechanicalModel m;
    m.dof = 2;
    m.mass_matrix = [](const Vec&) { return Mat::Identity(2, 2); };
    m.coriolis = [](const Vec&, const Vec&) { return Mat::Zero(2, 2); };
    m.gravity_torque = [](const Vec&) { return Vec::Zero(2); };
    m.mass_partials = [](const Vec&) { return std::vector<Mat>(2, Mat::Zero(2, 2)); };
    return m;
}

}  // namespace

TEST_CASE("two-link mass matrix at the outstretched configuration") {
    const auto arm = two_link_arm();
    const Vec q0 = Vec::Zero(2);
    const Mat M = arm.mass_matrix(q0);

    Mat expected(2, 2);
    expected << 5.0, 2.0, 2.0, 1.0;
    REQUIRE((M - expected).cwiseAbs().maxCoeff() < 1e-14);
    REQUIRE(M.determinant() == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("two-link gravity torque at the outstretched configuration") {
    const auto arm = two_link_arm();
    const Vec tau = arm.gravity_torque(Vec::Zero(2));
    REQUIRE(tau[0] == Catch::Approx(29.43).margin(1e-12));
    REQUIRE(tau[1] == Catch::Approx(9.81).margin(1e-12));
}

TEST_CASE("Coriolis matrix vanishes at rest") {
    const auto arm = two_link_arm();
    std::mt19937 rng(7);
    for (int i = 0; i < 20; ++i) {
        const Vec q = oracles::random_vec(rng, 2, -M_PI, M_PI);
        REQUIRE(arm.coriolis(q, Vec::Zero(2)).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("mass matrix is symmetric positive definite over the workspace") {
    const auto arm = two_link_arm();
    const auto grid = GridSpec::uniform({-M_PI, -M_PI}, {M_PI, M_PI}, {21, 21});
    for_each_point(grid, [&](std::size_t, const Vec& q) {
        const Mat M = arm.mass_matrix(q);
        REQUIRE(is_symmetric(M));
        REQUIRE(min_symmetric_eigenvalue(M) > 0.0);
    });
}

TEST_CASE("skew symmetry of Mdot - 2C, analytic and finite-difference Mdot") {
    const auto arm = two_link_arm();
    std::mt19937 rng(42);
    double worst_analytic = 0.0;
    double worst_fd = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Vec q = oracles::random_vec(rng, 2, -M_PI, M_PI);
        const Vec v = oracles::random_vec(rng, 2, -3.0, 3.0);
        worst_analytic = std::max(worst_analytic, std::abs(skew_symmetry_defect(arm, q, v)));

        // cross-check: central finite differences of M along the flow of v
        const double eps = 1e-6;
        const Mat md_fd = (arm.mass_matrix(q + eps * v) - arm.mass_matrix(q - eps * v)) / (2 * eps);
        worst_fd = std::max(worst_fd,
                            std::abs(v.dot((0.5 * md_fd - arm.coriolis(q, v)) * v)));
    }
    REQUIRE(worst_analytic <= 1e-9);
    REQUIRE(worst_fd <= 1e-6);
}

TEST_CASE("affine embedding matches the mechanical structure") {
    const auto arm = two_link_arm();
    const auto dyn = to_affine(arm);
    REQUIRE(dyn.state_dim == 4);
    REQUIRE(dyn.input_dim == 2);

    SECTION("input matrix lower block is the inverse mass matrix at q = 0") {
        Vec x = Vec::Zero(4);
        Mat expected(2, 2);
        expected << 1.0, -2.0, -2.0, 5.0;
        const Mat g = dyn.input_matrix(x);
        REQUIRE(g.topRows(2).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE((g.bottomRows(2) - expected).cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("drift upper block is the velocity, zero at rest") {
        std::mt19937 rng(3);
        for (int i = 0; i < 20; ++i) {
            Vec x(4);
            x << oracles::random_vec(rng, 2, -M_PI, M_PI), Vec::Zero(2);
            REQUIRE(dyn.drift(x).head(2).cwiseAbs().maxCoeff() == 0.0);
        }
    }

    SECTION("drift lower block at q = 0 is -M^-1 tau_g") {
        Vec x = Vec::Zero(4);
        Mat minv(2, 2);
        minv << 1.0, -2.0, -2.0, 5.0;
        const Vec expected = -(minv * arm.gravity_torque(Vec::Zero(2)));
        REQUIRE((dyn.drift(x).tail(2) - expected).cwiseAbs().maxCoeff() < 1e-10);
    }

    SECTION("reassembly: M * (lower drift) + C v + tau_g = 0") {
        std::mt19937 rng(11);
        for (int i = 0; i < 200; ++i) {
            Vec x(4);
            x << oracles::random_vec(rng, 2, -M_PI, M_PI), oracles::random_vec(rng, 2, -2, 2);
            const Vec q = x.head(2), v = x.tail(2);
            const Vec accel = dyn.drift(x).tail(2);
            const Vec residual =
                arm.mass_matrix(q) * accel + arm.coriolis(q, v) * v + arm.gravity_torque(q);
            REQUIRE(residual.cwiseAbs().maxCoeff() < 1e-10);
        }
    }
}

TEST_CASE("singular mass matrix raises") {
    MechanicalModel bad = zero_coriolis_model();
    bad.mass_matrix = [](const Vec&) {
        Mat m(2, 2);
        m << 1.0, 2.0, 2.0, 1.0;  // indefinite
        return m;
    };
    REQUIRE_THROWS_AS(mechanical_rhs(bad, Vec::Zero(4), Vec::Zero(2)), SingularMassError);
    REQUIRE_THROWS_AS(to_affine(bad).input_matrix(Vec::Zero(4)), SingularMassError);
}

TEST_CASE("coriolis bound") {
    const auto arm = two_link_arm();

    SECTION("zero-Coriolis model gives zero") {
        const auto grid = GridSpec::uniform({-1, -1}, {1, 1}, {5, 5});
        REQUIRE(coriolis_bound(zero_coriolis_model(), grid) == 0.0);
    }

    SECTION("single-point grid matches dense unit-circle sampling at q = 0") {
        GridSpec one;
        one.axes = {{0.0, 0.0, 1}, {0.0, 0.0, 1}};
        const double k = coriolis_bound(arm, one, 1.05, 256);
        double expected = 0.0;
        for (int i = 0; i < 4096; ++i) {
            const double th = 2 * M_PI * i / 4096.0;
            Vec v(2);
            v << std::cos(th), std::sin(th);
            expected = std::max(expected, spectral_norm(arm.coriolis(Vec::Zero(2), v)));
        }
        REQUIRE(k == Catch::Approx(1.05 * expected).epsilon(1e-3));
    }

    SECTION("workspace grid agrees with a 10x finer brute-force search within 2%") {
        const auto grid = GridSpec::uniform({-M_PI, -M_PI}, {M_PI, M_PI}, {41, 41});
        const double k = coriolis_bound(arm, grid);
        const auto fine = GridSpec::uniform({-M_PI, -M_PI}, {M_PI, M_PI}, {401, 401});
        double brute = 0.0;
        for_each_point(fine, [&](std::size_t, const Vec& q) {
            for (int i = 0; i < 64; ++i) {
                const double th = 2 * M_PI * i / 64.0;
                Vec v(2);
                v << std::cos(th), std::sin(th);
                brute = std::max(brute, spectral_norm(arm.coriolis(q, v)));
            }
        });
        REQUIRE(k == Catch::Approx(1.05 * brute).epsilon(0.02));
    }

    SECTION("bound dominates the Coriolis norm at random states") {
        const auto grid = GridSpec::uniform({-M_PI, -M_PI}, {M_PI, M_PI}, {41, 41});
        const double k = coriolis_bound(arm, grid);
        std::mt19937 rng(5);
        for (int i = 0; i < 10000; ++i) {
            const Vec q = oracles::random_vec(rng, 2, -M_PI, M_PI);
            const Vec v = oracles::random_vec(rng, 2, -3.0, 3.0);
            REQUIRE(spectral_norm(arm.coriolis(q, v)) <= k * v.norm() + 1e-12);
        }
    }
}

TEST_CASE("grid mechanics") {
    SECTION("refinement keeps existing samples") {
        const auto g = GridSpec::uniform({-1.0}, {1.0}, {11});
        const auto r = g.refined(2);
        REQUIRE(r.axes[0].count == 21);
        for (int i = 0; i <= 10; ++i)
            REQUIRE(r.axes[0].coord(2 * i) == Catch::Approx(g.axes[0].coord(i)).margin(1e-15));
    }

    SECTION("invalid grids raise") {
        GridSpec g;
        REQUIRE_THROWS_AS(g.validate(), EmptyGridError);
        g.axes = {{0.0, 1.0, 0}};
        REQUIRE_THROWS_AS(g.validate(), EmptyGridError);
        g.axes = {{0.0, 1.0, 1}};  // single sample must pin lo == hi
        REQUIRE_THROWS_AS(g.validate(), EmptyGridError);
        g.axes = {{1.0, 0.0, 5}};
        REQUIRE_THROWS_AS(g.validate(), EmptyGridError);
    }

    SECTION("row-major point enumeration, last axis fastest") {
        const auto g = GridSpec::uniform({0.0, 10.0}, {1.0, 12.0}, {2, 3});
        REQUIRE(g.size() == 6);
        REQUIRE(g.point(0)[0] == 0.0);
        REQUIRE(g.point(0)[1] == 10.0);
        REQUIRE(g.point(1)[1] == 11.0);
        REQUIRE(g.point(3)[0] == 1.0);
        REQUIRE(g.point(3)[1] == 10.0);
    }
}

TEST_CASE("two-link parameter validation") {
    TwoLinkArmParams p;
    p.m2 = 0.0;
    REQUIRE_THROWS_AS(two_link_arm(p), ConfigError);
}
