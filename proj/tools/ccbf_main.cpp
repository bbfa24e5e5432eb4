// Scenario-driven front end: certification, gain tuning, closed-loop
// simulation, and initial-condition sweeps for safety-filtered controllers.
//
// Exit codes: 0 success, 1 certification/property failure, 2 usage or
// configuration error.

#include "ccbf/scenario.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using ccbf::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

constexpr double kSafetyTol = -1e-6;    // min h / min c floor
constexpr double kMonotoneTol = 1e-9;   // per-step V increase ceiling
constexpr double kResidualTol = 1e-9;   // supply-rate residual ceiling

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    int threads = 0;
    unsigned seed = 0;
    bool force = false;
};

ccbf::ScenarioConfig load_config(const CommonOpts& opts) {
    auto cfg = ccbf::load_scenario(opts.config_path);
    if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
    fs::create_directories(cfg.output_dir);
    return cfg;
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path);
    out << j.dump(2) << '\n';
}

void print_report(const std::string& label, const ccbf::CertReport& r) {
    std::cout << label << ": " << (r.pass ? "pass" : "FAIL") << " (nu=" << r.nu
              << ", violations=" << r.violation_count << ", " << r.wall_time_s << " s)\n";
    for (const auto& ce : r.counterexamples) {
        std::cout << "  counterexample [" << ce.condition << "] value=" << ce.value << " at x=(";
        for (Eigen::Index i = 0; i < ce.x.size(); ++i)
            std::cout << (i ? "," : "") << ce.x[i];
        std::cout << ")\n";
        if (&ce - r.counterexamples.data() >= 7 && r.counterexamples.size() > 8) {
            std::cout << "  ... " << (r.violation_count - 8) << " more\n";
            break;
        }
    }
}

/// Runs the full offline certification for a scenario. Mechanical rel-deg-2
/// path: regularity check, rest-margin check, then gain tuning. Generic path:
/// regularity check plus the level-set compatibility scan.
json run_certification(const ccbf::ScenarioConfig& cfg, int threads, bool& pass,
                       std::optional<double>& tuned_rho) {
    const auto model = cfg.build_model();
    const auto barrier = cfg.build_barrier();
    const ccbf::NominalLaw law{cfg.nominal_kind, cfg.K_p, cfg.K_d};

    json out;
    out["scenario"] = cfg.name;
    out["nu"] = cfg.level_nu;
    pass = true;

    const auto a3 = ccbf::check_assumption3(barrier, model, law, cfg.level_nu,
                                            cfg.regularity_grid, threads);
    print_report("regularity (vanishing-direction check)", a3);
    out["regularity"] = ccbf::report_to_json(a3);
    pass = pass && a3.pass;

    if (cfg.augmented) {
        const auto psi = ccbf::verify_rest_margin(barrier, model, law, cfg.level_nu,
                                                  cfg.config_grid, threads);
        print_report("rest-margin condition", psi);
        out["rest_margin"] = ccbf::report_to_json(psi);
        pass = pass && psi.pass;

        if (psi.pass) {
            const double k_c = ccbf::coriolis_bound(model, cfg.config_grid);
            ccbf::Vec argmax_q;
            const double rho =
                ccbf::tune_rho(barrier, model, law, cfg.level_nu, cfg.config_grid, k_c, &argmax_q);
            tuned_rho = rho;
            out["coriolis_bound"] = k_c;
            out["rho"] = rho;
            out["rho_argmax_q"] = ccbf::detail::vec_to_json(argmax_q);
            std::cout << "tuned rho = " << rho << " (coriolis bound k_c = " << k_c << ")\n";
        } else {
            std::cout << "rest-margin condition failed; rho not tuned\n";
        }
    } else {
        const auto ctrl = cfg.build_controller();
        const auto problem = ccbf::make_problem(model, ctrl);
        const auto stab = ccbf::verify_cbf_stabilizable(problem, cfg.level_nu, cfg.state_grid,
                                                        threads);
        print_report("level-set compatibility", stab);
        out["stabilizable"] = ccbf::report_to_json(stab);
        pass = pass && stab.pass;
    }
    out["pass"] = pass;
    return out;
}

int cmd_certify(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    bool pass = false;
    std::optional<double> tuned_rho;
    const json report = run_certification(cfg, opts.threads, pass, tuned_rho);
    write_json(report, fs::path(cfg.output_dir) / "cert_report.json");
    std::cout << (pass ? "CERTIFIED" : "NOT CERTIFIED") << '\n';
    return pass ? kExitOk : kExitFailure;
}

int cmd_tune_rho(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    if (!cfg.augmented) {
        std::cerr << "tune-rho requires an augmented scenario\n";
        return kExitUsage;
    }
    const auto model = cfg.build_model();
    const auto barrier = cfg.build_barrier();
    const ccbf::NominalLaw law{cfg.nominal_kind, cfg.K_p, cfg.K_d};

    const auto psi = ccbf::verify_rest_margin(barrier, model, law, cfg.level_nu, cfg.config_grid,
                                              opts.threads);
    print_report("rest-margin condition", psi);
    if (!psi.pass) {
        std::cout << "rest margin not positive on the grid; rho undefined\n";
        return kExitFailure;
    }
    const double k_c = ccbf::coriolis_bound(model, cfg.config_grid);
    ccbf::Vec argmax_q;
    const double rho = ccbf::tune_rho(barrier, model, law, cfg.level_nu, cfg.config_grid, k_c,
                                      &argmax_q);
    std::cout << "rho = " << rho << " at q = (" << argmax_q.transpose() << "), k_c = " << k_c
              << '\n';
    json j{{"rho", rho}, {"coriolis_bound", k_c},
           {"argmax_q", ccbf::detail::vec_to_json(argmax_q)}, {"nu", cfg.level_nu}};
    write_json(j, fs::path(cfg.output_dir) / "rho.json");
    return kExitOk;
}

std::vector<ccbf::Vec> parse_x0_list(const std::string& arg, int dof) {
    std::vector<ccbf::Vec> out;
    std::stringstream ss(arg);
    std::string item;
    while (std::getline(ss, item, ';')) {
        std::stringstream es(item);
        std::string num;
        std::vector<double> vals;
        while (std::getline(es, num, ',')) vals.push_back(std::stod(num));
        if (static_cast<int>(vals.size()) != 2 * dof)
            throw ccbf::ConfigError("--x0 entries need 2*dof comma-separated numbers");
        ccbf::Vec x(2 * dof);
        for (int i = 0; i < 2 * dof; ++i) x[i] = vals[static_cast<std::size_t>(i)];
        out.push_back(x);
    }
    if (out.empty()) throw ccbf::ConfigError("--x0 list is empty");
    return out;
}

double resolve_rho(const ccbf::ScenarioConfig& cfg, const fs::path& report_path) {
    if (cfg.rho) return *cfg.rho;
    if (fs::exists(report_path)) {
        std::ifstream in(report_path);
        json j;
        in >> j;
        if (j.contains("rho")) return j.at("rho").get<double>();
    }
    throw ccbf::ConfigError("augmented scenario needs rho from config or a certification report");
}

struct RunOutcome {
    ccbf::TrajectoryMetrics metrics;
    bool aborted = false;
    std::string abort_reason;
    bool safety_ok = true;
    bool monotone_ok = true;
    bool residual_ok = true;
    bool bounded_ok = true;
    bool recompute_ok = true;
};

/// Spot-recompute logged scalars at a few random rows; guards the log against
/// drifting out of sync with the evaluators.
bool spot_recompute(const ccbf::Trajectory& traj, const ccbf::MechanicalModel& model,
                    const ccbf::CompatController& ctrl, unsigned seed) {
    if (traj.rows() == 0) return true;
    std::mt19937 rng(seed == 0 ? 1234u : seed);
    std::uniform_int_distribution<std::size_t> pick(0, traj.rows() - 1);
    for (int i = 0; i < 16; ++i) {
        const std::size_t r = pick(rng);
        const auto& x = traj.state[r];
        if (std::abs(ctrl.barrier.value(x) - traj.barrier_value[r]) > 1e-12) return false;
        if (std::abs(ccbf::lyapunov(ctrl.nominal, model, x) - traj.lyapunov_value[r]) > 1e-12)
            return false;
        const auto dec = ccbf::evaluate_control(ctrl, model, x);
        if (std::abs(dec.margin - traj.margin[r]) > 1e-12) return false;
        if ((dec.u - traj.control[r]).cwiseAbs().maxCoeff() > 1e-12) return false;
    }
    return true;
}

RunOutcome assess_run(const ccbf::Trajectory& traj, const ccbf::MechanicalModel& model,
                      const ccbf::CompatController& ctrl, bool disturbed, unsigned seed) {
    RunOutcome out;
    out.aborted = traj.aborted;
    out.abort_reason = traj.abort_reason;
    out.metrics = ccbf::trajectory_metrics(traj);
    out.safety_ok = out.metrics.min_barrier >= kSafetyTol &&
                    (std::isnan(out.metrics.min_clearance) || out.metrics.min_clearance >= kSafetyTol);
    if (!disturbed) {
        out.monotone_ok = out.metrics.max_step_lyapunov_increase <= kMonotoneTol;
        out.residual_ok = out.metrics.max_supply_residual <= kResidualTol;
    } else if (!traj.time.empty() && traj.time.back() > 10.0) {
        double ref = 0.0, sup = 0.0;
        for (std::size_t i = 0; i < traj.rows(); ++i) {
            if (traj.time[i] < 10.0) continue;
            const double nx = traj.state[i].norm();
            if (ref == 0.0) ref = nx;
            sup = std::max(sup, nx);
        }
        out.bounded_ok = sup <= 5.0 * ref;
    }
    out.recompute_ok = spot_recompute(traj, model, ctrl, seed);
    return out;
}

json outcome_to_json(const RunOutcome& o) {
    json j = ccbf::metrics_to_json(o.metrics);
    j["aborted"] = o.aborted;
    if (o.aborted) j["abort_reason"] = o.abort_reason;
    j["safety_ok"] = o.safety_ok;
    j["monotone_ok"] = o.monotone_ok;
    j["residual_ok"] = o.residual_ok;
    j["bounded_ok"] = o.bounded_ok;
    j["recompute_ok"] = o.recompute_ok;
    return j;
}

bool outcome_pass(const RunOutcome& o) {
    return !o.aborted && o.safety_ok && o.monotone_ok && o.residual_ok && o.bounded_ok &&
           o.recompute_ok;
}

int cmd_simulate(const CommonOpts& opts, const std::string& x0_arg) {
    const auto cfg = load_config(opts);
    const fs::path report_path = fs::path(cfg.output_dir) / "cert_report.json";
    if (!opts.force) {
        bool certified = false;
        if (fs::exists(report_path)) {
            std::ifstream in(report_path);
            json j;
            in >> j;
            certified = j.value("pass", false);
        }
        if (!certified) {
            std::cerr << "scenario is not certified (run `ccbf certify` first or pass --force)\n";
            return kExitFailure;
        }
    }

    const auto model = cfg.build_model();
    auto ctrl = cfg.build_controller(cfg.augmented ? std::optional<double>(resolve_rho(cfg, report_path))
                                                   : std::nullopt);
    const auto x0s = parse_x0_list(x0_arg, cfg.dof());
    const bool disturbed = cfg.sim.disturbance.has_value();

    json summary;
    summary["scenario"] = cfg.name;
    summary["runs"] = json::array();
    bool all_ok = true;
    for (std::size_t i = 0; i < x0s.size(); ++i) {
        const auto traj = ccbf::integrate(model, ctrl, x0s[i], cfg.sim);
        const auto outcome = assess_run(traj, model, ctrl, disturbed, opts.seed);
        const fs::path csv = fs::path(cfg.output_dir) / ("traj_" + std::to_string(i) + ".csv");
        std::ofstream out(csv);
        ccbf::write_trajectory_csv(traj, out);
        json row = outcome_to_json(outcome);
        row["x0"] = ccbf::detail::vec_to_json(x0s[i]);
        row["csv"] = csv.string();
        summary["runs"].push_back(row);
        const bool ok = outcome_pass(outcome);
        all_ok = all_ok && ok;
        std::cout << "run " << i << ": " << (ok ? "ok" : "VIOLATION") << "  min_h="
                  << outcome.metrics.min_barrier << " terminal=" << outcome.metrics.terminal_state_norm
                  << (outcome.aborted ? ("  aborted: " + outcome.abort_reason) : "") << '\n';
    }
    summary["pass"] = all_ok;
    write_json(summary, fs::path(cfg.output_dir) / "sim_summary.json");
    return all_ok ? kExitOk : kExitFailure;
}

int cmd_sweep(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    const auto model = cfg.build_model();
    const fs::path report_path = fs::path(cfg.output_dir) / "cert_report.json";
    auto ctrl = cfg.build_controller(cfg.augmented ? std::optional<double>(resolve_rho(cfg, report_path))
                                                   : std::nullopt);
    const bool disturbed = cfg.sim.disturbance.has_value();
    const ccbf::NominalLaw law{cfg.nominal_kind, cfg.K_p, cfg.K_d};

    // Intake: admit only initial conditions inside the certified region.
    std::vector<ccbf::Vec> admitted;
    json rejected = json::array();
    ccbf::for_each_point(cfg.sweep_q0_grid, [&](std::size_t, const ccbf::Vec& q0) {
        ccbf::Vec x0(2 * cfg.dof());
        x0 << q0, cfg.sweep_v0;
        std::string why;
        if (ccbf::lyapunov(law, model, x0) > cfg.level_nu) why = "outside Lyapunov level set";
        else if (ctrl.barrier.value(x0) < 0.0) why = "outside barrier set";
        else if (const auto c = ctrl.barrier.clearance(q0); c && *c < 0.0) why = "outside keep-in set";
        if (why.empty()) {
            admitted.push_back(x0);
        } else {
            std::cout << "rejected x0=(" << x0.transpose() << "): " << why << '\n';
            rejected.push_back({{"x0", ccbf::detail::vec_to_json(x0)}, {"reason", why}});
        }
    });
    if (admitted.empty()) {
        std::cerr << "empty sweep: no grid point lies in the certified region\n";
        return kExitFailure;
    }

    std::vector<std::future<std::pair<ccbf::Trajectory, RunOutcome>>> futures;
    futures.reserve(admitted.size());
    for (const auto& x0 : admitted)
        futures.push_back(std::async(std::launch::async, [&, x0] {
            auto traj = ccbf::integrate(model, ctrl, x0, cfg.sim);
            auto outcome = assess_run(traj, model, ctrl, disturbed, opts.seed);
            return std::make_pair(std::move(traj), std::move(outcome));
        }));

    json summary;
    summary["scenario"] = cfg.name;
    summary["rejected"] = rejected;
    summary["runs"] = json::array();
    std::size_t ok_count = 0;
    for (std::size_t i = 0; i < futures.size(); ++i) {
        auto [traj, outcome] = futures[i].get();
        const fs::path csv = fs::path(cfg.output_dir) / ("sweep_" + std::to_string(i) + ".csv");
        std::ofstream out(csv);
        ccbf::write_trajectory_csv(traj, out);
        json row = outcome_to_json(outcome);
        row["x0"] = ccbf::detail::vec_to_json(admitted[i]);
        row["csv"] = csv.string();
        summary["runs"].push_back(row);
        if (outcome_pass(outcome)) ++ok_count;
    }
    summary["admitted"] = admitted.size();
    summary["passed"] = ok_count;
    const bool all_ok = ok_count == admitted.size();
    summary["pass"] = all_ok;
    write_json(summary, fs::path(cfg.output_dir) / "sweep_summary.json");
    std::cout << ok_count << "/" << admitted.size() << " admitted runs passed ("
              << rejected.size() << " rejected at intake)\n";
    return all_ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"safety-filtered controller certification and simulation"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string x0_arg;

    auto add_common = [&](CLI::App* sub, bool with_force) {
        sub->add_option("--config", opts.config_path, "scenario file")->required();
        sub->add_option("--out", opts.out_dir, "output directory (overrides config)");
        sub->add_option("--threads", opts.threads, "worker threads (0 = auto)");
        sub->add_option("--seed", opts.seed, "seed for randomized spot checks");
        if (with_force)
            sub->add_flag("--force", opts.force, "run without a passing certification report");
    };

    auto* certify = app.add_subcommand("certify", "run the offline certification checks");
    add_common(certify, false);
    auto* tune = app.add_subcommand("tune-rho", "tune the augmentation gain");
    add_common(tune, false);
    auto* simulate = app.add_subcommand("simulate", "integrate the closed loop from given states");
    add_common(simulate, true);
    simulate->add_option("--x0", x0_arg, "semicolon-separated q1,..,v1,.. initial states")
        ->required();
    auto* sweep = app.add_subcommand("sweep", "simulate a grid of initial conditions");
    add_common(sweep, true);

    try {
        app.parse(argc, argv);
        if (certify->parsed()) return cmd_certify(opts);
        if (tune->parsed()) return cmd_tune_rho(opts);
        if (simulate->parsed()) return cmd_simulate(opts, x0_arg);
        if (sweep->parsed()) return cmd_sweep(opts);
        return kExitUsage;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const ccbf::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ccbf::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}
