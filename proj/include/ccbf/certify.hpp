#pragma once

#include "ccbf/barrier.hpp"
#include "ccbf/controller.hpp"
#include "ccbf/dynamics.hpp"
#include "ccbf/grid.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace ccbf {

/// A grid point that violated a certification condition.
struct Counterexample {
    Vec x;
    std::string condition;
    double value = 0.0;
};

/// Outcome of a grid verification pass. `counterexamples` keeps at most
/// `kMaxStored` entries in grid order; `violation_count` is the full tally.
struct CertReport {
    static constexpr std::size_t kMaxStored = 64;

    bool pass = false;
    double nu = 0.0;
    std::optional<double> rho;
    std::vector<Counterexample> counterexamples;
    std::size_t violation_count = 0;
    GridSpec grid;
    double wall_time_s = 0.0;
};

/// Generic hooks over which the level-set certification runs. Mechanical
/// setups are assembled by make_problem(); hand-built systems (scalar toys,
/// adversarial constructions) fill the fields directly. All hooks must be
/// pure; grid scans evaluate them concurrently.
struct CompatProblem {
    AffineDynamics dynamics;
    std::function<double(const Vec&)> lyapunov;
    std::function<Vec(const Vec&)> lyapunov_gradient;
    std::function<double(const Vec&)> barrier;
    std::function<Vec(const Vec&)> barrier_gradient;
    std::function<Vec(const Vec&)> nominal;
    std::function<Vec(const Vec&, const Vec&)> weight_inverse_apply;  // (x, y) -> G(x)^-1 y
    ClassKappa alpha;
    /// Configuration clearance c for barriers carrying a separate keep-in set;
    /// empty when membership is h >= 0 alone.
    std::function<double(const Vec&)> clearance;
};

inline CompatProblem make_problem(const MechanicalModel& model, const CompatController& ctrl) {
    CompatProblem p;
    p.dynamics = to_affine(model);
    p.lyapunov = [model, law = ctrl.nominal](const Vec& x) { return lyapunov(law, model, x); };
    p.lyapunov_gradient = [model, law = ctrl.nominal](const Vec& x) {
        return lyapunov_gradient(law, model, x);
    };
    p.barrier = [spec = ctrl.barrier](const Vec& x) { return spec.value(x); };
    p.barrier_gradient = [spec = ctrl.barrier](const Vec& x) { return spec.state_gradient(x); };
    p.nominal = [model, law = ctrl.nominal](const Vec& x) { return nominal_control(law, model, x); };
    p.weight_inverse_apply = [model, w = ctrl.weight](const Vec& x, const Vec& y) {
        return w.inverse_apply(model, x.head(model.dof), y);
    };
    p.alpha = ctrl.barrier.alpha;
    if (ctrl.barrier.high_order()) {
        p.clearance = [model, c = ctrl.barrier.high_order_spec().constraint](const Vec& x) {
            return c.value(x.head(model.dof));
        };
    }
    return p;
}

/// Weighted alignment of the Lyapunov and barrier gradients,
/// grad V' g G^-1 g' grad h. Negative means the active safety filter can only
/// increase the Lyapunov decrease rate at that state.
inline double gradient_alignment(const CompatProblem& p, const Vec& x) {
    const Mat g = p.dynamics.input_matrix(x);
    const Vec gv = g.transpose() * p.lyapunov_gradient(x);
    const Vec gh = g.transpose() * p.barrier_gradient(x);
    return gv.dot(p.weight_inverse_apply(x, gh));
}

inline double gradient_alignment(const CompatController& ctrl, const MechanicalModel& model,
                                 const Vec& x) {
    return gradient_alignment(make_problem(model, ctrl), x);
}

/// Filter margin z from the generic hooks.
inline double filter_margin(const CompatProblem& p, const Vec& x) {
    const Vec gh = p.barrier_gradient(x);
    const double lfh = gh.dot(p.dynamics.drift(x));
    const Vec lgh = p.dynamics.input_matrix(x).transpose() * gh;
    return lfh + lgh.dot(p.nominal(x)) + p.alpha(p.barrier(x));
}

namespace detail {

/// Scan [0, n) with `eval(i)` returning an optional counterexample. Chunks are
/// contiguous per worker and merged in index order, so the report is
/// deterministic for any thread count. Stores at most `cap` counterexamples.
template <class F>
inline std::pair<std::vector<Counterexample>, std::size_t> scan_indices(std::size_t n,
                                                                        int threads, F&& eval,
                                                                        std::size_t cap) {
    if (threads <= 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        threads = static_cast<int>(std::clamp(hw, 1u, 8u));
    }
    const auto nt = static_cast<std::size_t>(threads);
    if (n < 4096 || nt == 1) {
        std::vector<Counterexample> ces;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (auto ce = eval(i)) {
                ++count;
                if (ces.size() < cap) ces.push_back(std::move(*ce));
            }
        }
        return {std::move(ces), count};
    }

    std::vector<std::vector<Counterexample>> partial(nt);
    std::vector<std::size_t> counts(nt, 0);
    std::vector<std::thread> workers;
    workers.reserve(nt);
    const std::size_t chunk = (n + nt - 1) / nt;
    for (std::size_t w = 0; w < nt; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        workers.emplace_back([&, w, lo, hi] {
            for (std::size_t i = lo; i < hi; ++i) {
                if (auto ce = eval(i)) {
                    ++counts[w];
                    if (partial[w].size() < cap) partial[w].push_back(std::move(*ce));
                }
            }
        });
    }
    for (auto& t : workers) t.join();

    std::vector<Counterexample> ces;
    std::size_t count = 0;
    for (std::size_t w = 0; w < nt; ++w) {
        count += counts[w];
        for (auto& ce : partial[w])
            if (ces.size() < cap) ces.push_back(std::move(ce));
    }
    return {std::move(ces), count};
}

inline double elapsed_s(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/// Grid check of the level-set compatibility condition: at every admissible
/// grid point (inside the Lyapunov sublevel set and the safe set), either the
/// gradient alignment is negative or the nominal margin z is nonnegative.
inline CertReport verify_cbf_stabilizable(const CompatProblem& p, double nu,
                                          const GridSpec& state_grid, int threads = 0) {
    state_grid.validate();
    const auto start = std::chrono::steady_clock::now();

    auto eval = [&](std::size_t i) -> std::optional<Counterexample> {
        const Vec x = state_grid.point(i);
        if (p.clearance && p.clearance(x) < 0.0) return std::nullopt;
        if (p.barrier(x) < 0.0) return std::nullopt;
        if (p.lyapunov(x) > nu) return std::nullopt;
        if (gradient_alignment(p, x) < 0.0) return std::nullopt;
        const double z = filter_margin(p, x);
        if (z >= 0.0) return std::nullopt;
        return Counterexample{x, "compatibility-margin", z};
    };

    auto [ces, count] = detail::scan_indices(state_grid.size(), threads, eval,
                                             CertReport::kMaxStored);
    CertReport report;
    report.nu = nu;
    report.grid = state_grid;
    report.counterexamples = std::move(ces);
    report.violation_count = count;
    report.pass = (count == 0);
    report.wall_time_s = detail::elapsed_s(start);
    return report;
}

/// Threshold below which the barrier input direction counts as vanished.
inline constexpr double kVanishingInputDirTol = 1e-10;
/// Full-state barrier gradient must be this small wherever the input
/// direction vanishes.
inline constexpr double kVanishingGradientTol = 1e-8;

/// Regularity diagnostic for the filter: inside the Lyapunov sublevel set,
/// the barrier input direction L_g h may vanish only at interior points
/// (h > 0, and c > 0 where a clearance exists) where the whole gradient of h
/// vanishes as well.
inline CertReport check_assumption3(const BarrierSpec& barrier, const MechanicalModel& model,
                                    const NominalLaw& law, double nu, const GridSpec& state_grid,
                                    int threads = 0) {
    state_grid.validate();
    const auto start = std::chrono::steady_clock::now();

    auto eval = [&](std::size_t i) -> std::optional<Counterexample> {
        const Vec x = state_grid.point(i);
        if (lyapunov(law, model, x) > nu) return std::nullopt;
        const auto lie = lie_derivatives(barrier, model, x);
        if (lie.along_input.norm() > kVanishingInputDirTol) return std::nullopt;
        const double h = barrier.value(x);
        const auto c = barrier.clearance(x.head(model.dof));
        if (!(h > 0.0) || (c && !(*c > 0.0)))
            return Counterexample{x, "degenerate-direction-not-interior", std::min(h, c.value_or(h))};
        const double gnorm = barrier.state_gradient(x).norm();
        if (gnorm > kVanishingGradientTol)
            return Counterexample{x, "degenerate-direction-gradient-nonzero", gnorm};
        return std::nullopt;
    };

    auto [ces, count] = detail::scan_indices(state_grid.size(), threads, eval,
                                             CertReport::kMaxStored);
    CertReport report;
    report.nu = nu;
    report.grid = state_grid;
    report.counterexamples = std::move(ces);
    report.violation_count = count;
    report.pass = (count == 0);
    report.wall_time_s = detail::elapsed_s(start);
    return report;
}

/// Margin of the filter at rest: for v = 0 the filter margin reduces to
/// psi(q) = -grad c' M^-1 K_p q + alpha(phi(c(q))). Positive rest margin on
/// the whole search region is the practical offline condition for the
/// augmented controller.
inline double rest_margin(const BarrierSpec& barrier, const MechanicalModel& model,
                          const NominalLaw& law, const Vec& q) {
    if (!barrier.high_order())
        throw ConfigError("rest margin is defined for high-order barriers");
    const auto& ho = barrier.high_order_spec();
    const Vec gc = ho.constraint.gradient(q);
    const double pull = gc.dot(mass_llt(model, q).solve(law.K_p * q));
    return -pull + barrier.alpha(ho.phi(ho.constraint.value(q)));
}

/// Grid check that the rest margin is strictly positive on
/// {P(q) <= nu} intersected with the keep-in set.
inline CertReport verify_rest_margin(const BarrierSpec& barrier, const MechanicalModel& model,
                                     const NominalLaw& law, double nu, const GridSpec& q_grid,
                                     int threads = 0) {
    q_grid.validate();
    const auto start = std::chrono::steady_clock::now();

    auto eval = [&](std::size_t i) -> std::optional<Counterexample> {
        const Vec q = q_grid.point(i);
        if (!in_potential_levelset(law, q, nu)) return std::nullopt;
        if (*barrier.clearance(q) < 0.0) return std::nullopt;
        const double m = rest_margin(barrier, model, law, q);
        if (m > 0.0) return std::nullopt;
        return Counterexample{q, "rest-margin", m};
    };

    auto [ces, count] = detail::scan_indices(q_grid.size(), threads, eval, CertReport::kMaxStored);
    CertReport report;
    report.nu = nu;
    report.grid = q_grid;
    report.counterexamples = std::move(ces);
    report.violation_count = count;
    report.pass = (count == 0);
    report.wall_time_s = detail::elapsed_s(start);
    return report;
}

/// Augmentation gain for the third controller branch: the largest positive
/// root of rho^2 psi - rho eta1 - eta2 = 0 over the admissible configuration
/// grid, with eta1 = k_c |grad c' M^-1|_2 + |hess c|_2 and
/// eta2 = |grad c' M^-1 K_d|_2. Requires a strictly positive rest margin at
/// every admissible grid point. Optionally reports the maximizing q.
inline double tune_rho(const BarrierSpec& barrier, const MechanicalModel& model,
                       const NominalLaw& law, double nu, const GridSpec& q_grid,
                       double coriolis_k, Vec* argmax_q = nullptr) {
    q_grid.validate();
    if (!barrier.high_order())
        throw ConfigError("rho tuning is defined for high-order barriers");
    const auto& ho = barrier.high_order_spec();

    double best = -1.0;
    Vec best_q;
    bool any = false;
    for_each_point(q_grid, [&](std::size_t, const Vec& q) {
        if (!in_potential_levelset(law, q, nu)) return;
        if (ho.constraint.value(q) < 0.0) return;
        any = true;
        const double psi = rest_margin(barrier, model, law, q);
        if (!(psi > 0.0))
            throw NonpositiveRestMarginError("rho tuning requires positive rest margin on the grid",
                                             q, psi);
        const Vec w = mass_llt(model, q).solve(ho.constraint.gradient(q));  // (grad c' M^-1)'
        const double eta1 = coriolis_k * w.norm() + spectral_norm(ho.constraint.hessian(q));
        const double eta2 = (law.K_d * w).norm();
        const double rho_q = (eta1 + std::sqrt(eta1 * eta1 + 4.0 * psi * eta2)) / (2.0 * psi);
        if (rho_q > best) {
            best = rho_q;
            best_q = q;
        }
    });
    if (!any)
        throw EmptyGridError("no grid point lies in the potential level set and keep-in set");
    if (argmax_q) *argmax_q = best_q;
    return best;
}

/// Result of the largest-certifiable-level search.
struct LevelSearchResult {
    double nu_star = 0.0;
    CertReport report;       // report at nu_star
    bool non_monotone = false;
    std::vector<std::pair<double, bool>> probes;  // (nu, passed) in probe order
};

/// Bisection for the largest passing level in [nu_lo, nu_hi]. Monotonicity of
/// the passing set is not assumed: the result is the largest passing probe,
/// and `non_monotone` flags any failing probe observed below a passing one.
inline LevelSearchResult max_certifiable_level(const std::function<CertReport(double)>& verify,
                                               double nu_lo, double nu_hi, int iterations = 20) {
    if (!(nu_lo > 0.0) || !(nu_hi >= nu_lo))
        throw ConfigError("level search requires 0 < nu_lo <= nu_hi");

    LevelSearchResult res;
    CertReport lo_report = verify(nu_lo);
    res.probes.emplace_back(nu_lo, lo_report.pass);
    if (!lo_report.pass)
        throw NonePassingError("lower level endpoint fails verification");

    CertReport hi_report = verify(nu_hi);
    res.probes.emplace_back(nu_hi, hi_report.pass);
    if (hi_report.pass) {
        res.nu_star = nu_hi;
        res.report = std::move(hi_report);
        return res;
    }

    double lo = nu_lo, hi = nu_hi;
    CertReport best = std::move(lo_report);
    double best_nu = nu_lo;
    for (int i = 0; i < iterations; ++i) {
        const double mid = 0.5 * (lo + hi);
        CertReport r = verify(mid);
        res.probes.emplace_back(mid, r.pass);
        if (r.pass) {
            lo = mid;
            if (mid > best_nu) {
                best_nu = mid;
                best = std::move(r);
            }
        } else {
            hi = mid;
        }
    }
    res.nu_star = best_nu;
    res.report = std::move(best);
    for (const auto& [nu_f, ok_f] : res.probes)
        if (!ok_f && nu_f < res.nu_star) res.non_monotone = true;
    return res;
}

inline LevelSearchResult max_certifiable_level(const CompatProblem& p, const GridSpec& state_grid,
                                               double nu_lo, double nu_hi, int iterations = 20,
                                               int threads = 0) {
    return max_certifiable_level(
        [&](double nu) { return verify_cbf_stabilizable(p, nu, state_grid, threads); }, nu_lo,
        nu_hi, iterations);
}

}  // namespace ccbf
