#pragma once

#include "ccbf/barrier.hpp"
#include "ccbf/certify.hpp"
#include "ccbf/controller.hpp"
#include "ccbf/dynamics.hpp"
#include "ccbf/sim.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace ccbf {

using json = nlohmann::json;

namespace detail {

inline Mat mat_from_json(const json& j) {
    const auto rows = j.size();
    if (rows == 0) throw ConfigError("matrix field is empty");
    const auto cols = j.at(0).size();
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        if (j.at(r).size() != cols) throw ConfigError("matrix field is ragged");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j.at(r).at(c).get<double>();
    }
    return m;
}

inline json mat_to_json(const Mat& m) {
    json j = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        j.push_back(row);
    }
    return j;
}

inline Vec vec_from_json(const json& j) {
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
    return v;
}

inline json vec_to_json(const Vec& v) {
    json j = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

inline std::vector<double> dbls(const json& j) { return j.get<std::vector<double>>(); }
inline std::vector<int> ints(const json& j) { return j.get<std::vector<int>>(); }

inline GridSpec state_grid_from_json(const json& j) {
    GridSpec q = GridSpec::uniform(dbls(j.at("q_min_rad")), dbls(j.at("q_max_rad")),
                                   ints(j.at("q_points")));
    GridSpec v = GridSpec::uniform(dbls(j.at("v_min_rad_per_s")), dbls(j.at("v_max_rad_per_s")),
                                   ints(j.at("v_points")));
    return q.concat(v);
}

inline json state_grid_to_json(const GridSpec& g, int dof) {
    json j;
    json qmin = json::array(), qmax = json::array(), qn = json::array();
    json vmin = json::array(), vmax = json::array(), vn = json::array();
    for (int i = 0; i < dof; ++i) {
        const auto& a = g.axes[static_cast<std::size_t>(i)];
        qmin.push_back(a.lo); qmax.push_back(a.hi); qn.push_back(a.count);
        const auto& b = g.axes[static_cast<std::size_t>(dof + i)];
        vmin.push_back(b.lo); vmax.push_back(b.hi); vn.push_back(b.count);
    }
    j["q_min_rad"] = qmin; j["q_max_rad"] = qmax; j["q_points"] = qn;
    j["v_min_rad_per_s"] = vmin; j["v_max_rad_per_s"] = vmax; j["v_points"] = vn;
    return j;
}

}  // namespace detail

/// Barrier configuration as it appears in scenario files.
struct BarrierConfig {
    std::string type;  // "velocity_norm" | "configuration_ellipsoid"
    double alpha_gain = 1.0;
    // velocity_norm
    double bound = 0.0;
    Mat position_weight;
    Mat velocity_weight;
    // configuration_ellipsoid
    double clearance_offset = 0.0;
    Vec center;
    Mat shape;
    double smoothing_knee = 0.0;
    double phi_gain = 1.0;
};

/// A complete experiment description: plant, barrier, nominal law, filter
/// weight, certification level and grids, simulation setup, sweep box.
struct ScenarioConfig {
    std::string name;
    TwoLinkArmParams model_params;
    BarrierConfig barrier;
    NominalKind nominal_kind = NominalKind::pd_gravity;
    Mat K_p, K_d;
    WeightKind weight = WeightKind::identity;
    bool augmented = false;
    std::optional<double> rho;
    double level_nu = 1.0;
    GridSpec state_grid;       // q-axes then v-axes
    GridSpec config_grid;      // q-axes only
    GridSpec regularity_grid;  // q-axes then v-axes, centered so gradient
                               // singularities of the constraint are on-grid
    SimConfig sim;
    GridSpec sweep_q0_grid;
    Vec sweep_v0;
    std::string output_dir = "out";

    int dof() const { return 2; }

    MechanicalModel build_model() const { return two_link_arm(model_params); }

    BarrierSpec build_barrier() const {
        BarrierSpec spec;
        spec.alpha = ClassKappa{KappaKind::linear, barrier.alpha_gain};
        if (barrier.type == "velocity_norm") {
            spec.form = RelDeg1Spec{barrier.bound, barrier.position_weight, barrier.velocity_weight};
        } else if (barrier.type == "configuration_ellipsoid") {
            EllipsoidConstraint raw{barrier.clearance_offset, barrier.center, barrier.shape};
            SmoothedConstraint c{raw, barrier.smoothing_knee};
            spec.form = HighOrderSpec{c, ClassKappa{KappaKind::linear, barrier.phi_gain}};
        } else {
            throw ConfigError("unknown barrier type: " + barrier.type);
        }
        return spec;
    }

    CompatController build_controller(std::optional<double> rho_override = {}) const {
        CompatController ctrl;
        ctrl.nominal = NominalLaw{nominal_kind, K_p, K_d};
        ctrl.barrier = build_barrier();
        ctrl.weight = WeightChoice{weight};
        ctrl.augmented = augmented;
        ctrl.rho = rho_override.value_or(rho.value_or(0.0));
        if (!augmented) ctrl.validate();
        return ctrl;
    }

    void validate() const {
        model_params.validate();
        const int n = dof();
        if (K_p.rows() != n || K_d.rows() != n) throw ConfigError("gain dimensions must match dof");
        NominalLaw{nominal_kind, K_p, K_d}.validate();
        if (!(level_nu > 0.0)) throw ConfigError("level_nu must be positive");
        if (barrier.type == "velocity_norm") {
            if (barrier.position_weight.rows() != n || barrier.velocity_weight.rows() != n)
                throw ConfigError("barrier weight dimensions must match dof");
            if (!is_symmetric(barrier.velocity_weight) ||
                min_symmetric_eigenvalue(barrier.velocity_weight) <= 0.0)
                throw ConfigError("velocity weight must be symmetric positive definite");
            if (!(barrier.bound > 0.0)) throw ConfigError("velocity bound must be positive");
        } else if (barrier.type == "configuration_ellipsoid") {
            if (barrier.center.size() != n || barrier.shape.rows() != n)
                throw ConfigError("constraint dimensions must match dof");
            if (!is_symmetric(barrier.shape)) throw ConfigError("constraint shape must be symmetric");
            if (!(barrier.phi_gain > 0.0) ) throw ConfigError("phi gain must be positive");
            if (barrier.smoothing_knee < 0.0) throw ConfigError("smoothing knee must be >= 0");
        } else {
            throw ConfigError("unknown barrier type: " + barrier.type);
        }
        if (!(barrier.alpha_gain > 0.0)) throw ConfigError("alpha gain must be positive");
        if (augmented && barrier.type != "configuration_ellipsoid")
            throw ConfigError("augmented controller requires the configuration-ellipsoid barrier");
        if (augmented != (weight == WeightKind::inverse_mass))
            throw ConfigError("inverse-mass weight and the augmented controller go together");
        if (rho && !(*rho > 0.0)) throw ConfigError("rho must be positive when given");
        state_grid.validate();
        config_grid.validate();
        regularity_grid.validate();
        if (state_grid.dim() != 2 * n || regularity_grid.dim() != 2 * n || config_grid.dim() != n)
            throw ConfigError("grid dimensions must match the model");
        sim.validate(n);
        sweep_q0_grid.validate();
        if (sweep_q0_grid.dim() != n || sweep_v0.size() != n)
            throw ConfigError("sweep grid dimensions must match dof");
    }
};

inline ScenarioConfig scenario_from_json(const json& j) {
    try {
        ScenarioConfig s;
        s.name = j.at("name").get<std::string>();

        const auto& jm = j.at("model");
        if (jm.at("type").get<std::string>() != "two_link_arm")
            throw ConfigError("unknown model type");
        s.model_params.l1 = jm.at("link1_length_m").get<double>();
        s.model_params.l2 = jm.at("link2_length_m").get<double>();
        s.model_params.m1 = jm.at("link1_mass_kg").get<double>();
        s.model_params.m2 = jm.at("link2_mass_kg").get<double>();
        s.model_params.g0 = jm.at("gravity_m_per_s2").get<double>();

        const auto& jb = j.at("barrier");
        s.barrier.type = jb.at("type").get<std::string>();
        s.barrier.alpha_gain = jb.at("alpha_gain").get<double>();
        if (s.barrier.type == "velocity_norm") {
            s.barrier.bound = jb.at("bound").get<double>();
            s.barrier.position_weight = detail::mat_from_json(jb.at("position_weight"));
            s.barrier.velocity_weight = detail::mat_from_json(jb.at("velocity_weight"));
        } else {
            s.barrier.clearance_offset = jb.at("clearance_offset").get<double>();
            s.barrier.center = detail::vec_from_json(jb.at("center_rad"));
            s.barrier.shape = detail::mat_from_json(jb.at("shape"));
            s.barrier.smoothing_knee = jb.at("smoothing_knee").get<double>();
            s.barrier.phi_gain = jb.at("phi_gain").get<double>();
        }

        const auto& jn = j.at("nominal");
        const auto kind = jn.at("type").get<std::string>();
        if (kind == "pd_gravity") s.nominal_kind = NominalKind::pd_gravity;
        else if (kind == "computed_torque") s.nominal_kind = NominalKind::computed_torque;
        else throw ConfigError("unknown nominal law type: " + kind);
        s.K_p = detail::mat_from_json(jn.at("stiffness"));
        s.K_d = detail::mat_from_json(jn.at("damping"));

        const auto w = j.at("weight").get<std::string>();
        if (w == "identity") s.weight = WeightKind::identity;
        else if (w == "gram_input") s.weight = WeightKind::gram_input;
        else if (w == "inverse_mass") s.weight = WeightKind::inverse_mass;
        else if (w == "inverse_mass_squared") s.weight = WeightKind::inverse_mass_squared;
        else throw ConfigError("unknown weight kind: " + w);

        s.augmented = j.at("augmented").get<bool>();
        if (j.contains("rho")) s.rho = j.at("rho").get<double>();
        s.level_nu = j.at("level_nu").get<double>();

        const auto& jg = j.at("grids");
        s.state_grid = detail::state_grid_from_json(jg.at("state"));
        s.config_grid = GridSpec::uniform(detail::dbls(jg.at("config").at("q_min_rad")),
                                          detail::dbls(jg.at("config").at("q_max_rad")),
                                          detail::ints(jg.at("config").at("q_points")));
        s.regularity_grid = detail::state_grid_from_json(jg.at("regularity"));

        const auto& js = j.at("sim");
        s.sim.dt = js.at("dt_s").get<double>();
        s.sim.horizon = js.at("horizon_s").get<double>();
        if (js.at("integrator").get<std::string>() != "rk4")
            throw ConfigError("unknown integrator");
        s.sim.integrator = Integrator::rk4;
        if (j.contains("disturbance")) {
            DisturbanceSpec d;
            d.amplitudes = detail::vec_from_json(j.at("disturbance").at("amplitude_Nm"));
            d.frequencies = detail::vec_from_json(j.at("disturbance").at("frequency_rad_per_s"));
            s.sim.disturbance = d;
        }

        const auto& jw = j.at("sweep");
        s.sweep_q0_grid = GridSpec::uniform(detail::dbls(jw.at("q0_min_rad")),
                                            detail::dbls(jw.at("q0_max_rad")),
                                            detail::ints(jw.at("q0_points")));
        s.sweep_v0 = detail::vec_from_json(jw.at("v0_rad_per_s"));
        s.output_dir = j.value("output_dir", std::string("out"));

        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed scenario: ") + e.what());
    }
}

inline json scenario_to_json(const ScenarioConfig& s) {
    json j;
    j["name"] = s.name;
    j["model"] = {{"type", "two_link_arm"},
                  {"link1_length_m", s.model_params.l1},
                  {"link2_length_m", s.model_params.l2},
                  {"link1_mass_kg", s.model_params.m1},
                  {"link2_mass_kg", s.model_params.m2},
                  {"gravity_m_per_s2", s.model_params.g0}};
    json jb;
    jb["type"] = s.barrier.type;
    jb["alpha_gain"] = s.barrier.alpha_gain;
    if (s.barrier.type == "velocity_norm") {
        jb["bound"] = s.barrier.bound;
        jb["position_weight"] = detail::mat_to_json(s.barrier.position_weight);
        jb["velocity_weight"] = detail::mat_to_json(s.barrier.velocity_weight);
    } else {
        jb["clearance_offset"] = s.barrier.clearance_offset;
        jb["center_rad"] = detail::vec_to_json(s.barrier.center);
        jb["shape"] = detail::mat_to_json(s.barrier.shape);
        jb["smoothing_knee"] = s.barrier.smoothing_knee;
        jb["phi_gain"] = s.barrier.phi_gain;
    }
    j["barrier"] = jb;
    j["nominal"] = {{"type", s.nominal_kind == NominalKind::pd_gravity ? "pd_gravity"
                                                                       : "computed_torque"},
                    {"stiffness", detail::mat_to_json(s.K_p)},
                    {"damping", detail::mat_to_json(s.K_d)}};
    switch (s.weight) {
        case WeightKind::identity: j["weight"] = "identity"; break;
        case WeightKind::gram_input: j["weight"] = "gram_input"; break;
        case WeightKind::inverse_mass: j["weight"] = "inverse_mass"; break;
        case WeightKind::inverse_mass_squared: j["weight"] = "inverse_mass_squared"; break;
    }
    j["augmented"] = s.augmented;
    if (s.rho) j["rho"] = *s.rho;
    j["level_nu"] = s.level_nu;
    json jg;
    jg["state"] = detail::state_grid_to_json(s.state_grid, s.dof());
    {
        json jc;
        json qmin = json::array(), qmax = json::array(), qn = json::array();
        for (const auto& a : s.config_grid.axes) {
            qmin.push_back(a.lo); qmax.push_back(a.hi); qn.push_back(a.count);
        }
        jc["q_min_rad"] = qmin; jc["q_max_rad"] = qmax; jc["q_points"] = qn;
        jg["config"] = jc;
    }
    jg["regularity"] = detail::state_grid_to_json(s.regularity_grid, s.dof());
    j["grids"] = jg;
    j["sim"] = {{"dt_s", s.sim.dt}, {"horizon_s", s.sim.horizon}, {"integrator", "rk4"}};
    if (s.sim.disturbance)
        j["disturbance"] = {{"amplitude_Nm", detail::vec_to_json(s.sim.disturbance->amplitudes)},
                            {"frequency_rad_per_s", detail::vec_to_json(s.sim.disturbance->frequencies)}};
    json jw;
    {
        json qmin = json::array(), qmax = json::array(), qn = json::array();
        for (const auto& a : s.sweep_q0_grid.axes) {
            qmin.push_back(a.lo); qmax.push_back(a.hi); qn.push_back(a.count);
        }
        jw["q0_min_rad"] = qmin; jw["q0_max_rad"] = qmax; jw["q0_points"] = qn;
        jw["v0_rad_per_s"] = detail::vec_to_json(s.sweep_v0);
    }
    j["sweep"] = jw;
    j["output_dir"] = s.output_dir;
    return j;
}

inline ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("cannot parse scenario file: ") + e.what());
    }
    return scenario_from_json(j);
}

inline void save_scenario(const ScenarioConfig& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write scenario file: " + path);
    out << scenario_to_json(s).dump(2) << '\n';
}

inline json report_to_json(const CertReport& r) {
    json j;
    j["pass"] = r.pass;
    j["nu"] = r.nu;
    if (r.rho) j["rho"] = *r.rho;
    j["violation_count"] = r.violation_count;
    j["wall_time_s"] = r.wall_time_s;
    json ces = json::array();
    for (const auto& ce : r.counterexamples)
        ces.push_back({{"x", detail::vec_to_json(ce.x)},
                       {"condition", ce.condition},
                       {"value", ce.value}});
    j["counterexamples"] = ces;
    return j;
}

inline json metrics_to_json(const TrajectoryMetrics& m) {
    json j;
    j["min_h"] = m.min_barrier;
    if (std::isnan(m.min_clearance)) j["min_c"] = nullptr;
    else j["min_c"] = m.min_clearance;
    j["max_step_V_increase"] = m.max_step_lyapunov_increase;
    j["terminal_state_norm"] = m.terminal_state_norm;
    j["max_supply_residual"] = m.max_supply_residual;
    j["branch_counts"] = {m.branch_counts[0], m.branch_counts[1], m.branch_counts[2]};
    j["steps"] = m.steps;
    return j;
}

}  // namespace ccbf
