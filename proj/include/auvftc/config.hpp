#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "auvftc/allocation.hpp"
#include "auvftc/backstepping.hpp"
#include "auvftc/dynamics.hpp"
#include "auvftc/estimation.hpp"
#include "auvftc/lmpc.hpp"
#include "auvftc/supervisor.hpp"
#include "auvftc/types.hpp"

namespace auvftc {

enum class ControllerKind { Almpc, Ampc, Bsc };

inline const char* to_string(ControllerKind c) {
    switch (c) {
        case ControllerKind::Almpc: return "almpc";
        case ControllerKind::Ampc: return "ampc";
        case ControllerKind::Bsc: return "bsc";
    }
    return "?";
}

inline ControllerKind controller_from_string(const std::string& s) {
    if (s == "almpc") return ControllerKind::Almpc;
    if (s == "ampc") return ControllerKind::Ampc;
    if (s == "bsc") return ControllerKind::Bsc;
    throw std::invalid_argument("unknown controller: " + s);
}

/// One entry of the fault-injection schedule.  mode_index ties the truth
/// parameters to a library hypothesis so detection timing can be scored;
/// -1 marks an out-of-library fault (timers skip it).
struct FaultEvent {
    double t = 0.0;
    FaultParameters params;
    int mode_index = -1;
};

/// Everything a closed-loop run needs.  Construct through case_default()
/// and optionally override fields from a JSON file; every key is optional.
struct ScenarioConfig {
    int case_id = 1;
    ControllerKind controller = ControllerKind::Almpc;
    double duration = 30.0;
    double dt = 0.1;
    double dt_sim = 0.01;
    Vec6 initial_state = (Vec6() << 0.5, 0, 0, 0, 0, 0).finished();
    std::uint64_t seed = 1;

    double measurement_noise_scale = 0.02;
    bool disturbance_enabled = false;
    Vec3 disturbance_bound = Vec3(5.0, 5.0, 2.0);

    HydroModel hydro = HydroModel::default_rov();
    ThrusterLayout layout = ThrusterLayout::vectored_x();
    InputLimits limits;
    BackstepGains gains;
    OcpConfig ocp;
    ModeLibrary library = ModeLibrary::standard_three_mode();
    FusionConfig fusion;

    Mat6 ukf_Q = UkfState::default_process_noise();
    Mat6 ukf_R = UkfState::default_measurement_noise();
    UtParams ut;
    double ukf_jitter = 1e-9;
    double ukf_p0 = 1e-4;
    double rho = 0.9995;
    double bayes_max_gap = 3.0;
    double bayes_p_floor = 0.0;
    // Filters of modes whose posterior sits below this floor are re-anchored
    // to the fused estimate each step, so dormant hypotheses score fresh
    // evidence against the current state instead of a long-diverged one.
    // Anchoring pauses whenever the believed (MAP) filter's innovation
    // chi-square exceeds release_gate: a believed model that stops
    // explaining the data releases the bank to compete freely, which is
    // what makes detection fast and avoids probability lock-in.
    // reanchor_floor = 0 disables the mechanism.
    double reanchor_floor = 0.05;
    double release_gate = 0.5;

    std::vector<FaultEvent> fault_schedule;
    std::string out_path;
    bool dump_telemetry = false;

    static ScenarioConfig case_default(int case_id,
                                       ControllerKind controller = ControllerKind::Almpc) {
        ScenarioConfig c;
        c.case_id = case_id;
        c.controller = controller;
        c.ocp.terminal_c = OcpConfig::terminal_level(c.gains, c.hydro);
        if (case_id == 1) {
            c.duration = 30.0;
            c.fault_schedule = {{15.0, c.library.modes[1], 1}};
        } else if (case_id == 2) {
            c.duration = 40.0;
            c.fault_schedule = {{10.0, c.library.modes[1], 1},
                                {20.0, c.library.modes[2], 2}};
        } else {
            throw std::invalid_argument("ScenarioConfig: case must be 1 or 2");
        }
        if (controller == ControllerKind::Ampc) {
            c.ocp.descent_constraint = false;
            c.ocp.terminal_constraint = false;
        }
        return c;
    }

    void validate() const {
        if (!(dt > 0.0 && dt_sim > 0.0)) throw std::invalid_argument("config: dt, dt_sim > 0");
        if (duration < 0.0) throw std::invalid_argument("config: duration >= 0");
        double prev = -1.0;
        for (const auto& ev : fault_schedule) {
            if (ev.t <= prev)
                throw std::invalid_argument("config: fault times must be strictly increasing");
            if (ev.t > duration)
                throw std::invalid_argument("config: fault beyond scenario horizon");
            ev.params.validate();
            prev = ev.t;
        }
        limits.validate();
        fusion.validate();
        ocp.validate();
        library.validate();
        if (std::abs(ocp.dt - dt) > 1e-12)
            throw std::invalid_argument("config: controller dt must match ocp dt");
    }
};

namespace detail {

inline Vec3 vec3_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected 3-array");
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}
inline Vec4 vec4_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 4) throw std::invalid_argument("expected 4-array");
    return Vec4(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}
inline Vec6 vec6_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 6) throw std::invalid_argument("expected 6-array");
    Vec6 v;
    for (int i = 0; i < 6; ++i) v(i) = j[static_cast<size_t>(i)].get<double>();
    return v;
}
inline nlohmann::json to_json(const Vec3& v) { return {v(0), v(1), v(2)}; }

}  // namespace detail

/**
 * Hydrodynamic parameter file (versioned JSON): inertia M (row-major 3x3 or
 * diagonal 3-array), linear damping, quadratic damping coefficients and the
 * operating-box velocity bounds.
 */
inline HydroModel load_hydro_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open hydro parameter file: " + path);
    nlohmann::json j;
    in >> j;
    if (j.value("schema_version", 0) != 1)
        throw std::runtime_error("hydro file: unsupported schema_version");
    auto mat3 = [](const nlohmann::json& m) {
        Mat3 out;
        if (m.size() == 3 && m[0].is_number()) {
            out = detail::vec3_from_json(m).asDiagonal();
        } else {
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) out(r, c) = m[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
        }
        return out;
    };
    const Mat3 M = mat3(j.at("M"));
    const Mat3 Dl = mat3(j.at("D_lin"));
    const Vec3 Dq = detail::vec3_from_json(j.at("D_quad"));
    const Vec3 box = j.contains("nu_max") ? detail::vec3_from_json(j.at("nu_max"))
                                          : Vec3(2.0, 2.0, 2.0);
    return HydroModel::make(M, Dl, Dq, box);
}

inline void save_hydro_file(const HydroModel& h, const std::string& path,
                            const std::string& vehicle = "generic-60kg-rov") {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["vehicle"] = vehicle;
    j["M"] = {{h.M(0, 0), h.M(0, 1), h.M(0, 2)},
              {h.M(1, 0), h.M(1, 1), h.M(1, 2)},
              {h.M(2, 0), h.M(2, 1), h.M(2, 2)}};
    j["D_lin"] = {{h.D_lin(0, 0), h.D_lin(0, 1), h.D_lin(0, 2)},
                  {h.D_lin(1, 0), h.D_lin(1, 1), h.D_lin(1, 2)},
                  {h.D_lin(2, 0), h.D_lin(2, 1), h.D_lin(2, 2)}};
    j["D_quad"] = detail::to_json(h.D_quad);
    j["nu_max"] = detail::to_json(h.nu_max);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write hydro parameter file: " + path);
    out << j.dump(2) << "\n";
}

/// Applies a JSON override file on top of an existing config.  Unknown keys
/// are rejected so typos fail loudly.
inline void apply_config_overrides(ScenarioConfig& cfg, const nlohmann::json& j) {
    using nlohmann::json;
    static const std::vector<std::string> known = {
        "case", "controller", "duration", "dt", "dt_sim", "initial_state", "seed",
        "measurement_noise_scale", "disturbance", "hydro_file", "hydro", "layout",
        "limits", "gains", "ocp", "bayes", "ukf", "fusion", "fault_schedule", "out"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw std::invalid_argument("config: unknown key '" + it.key() + "'");
    }
    if (j.contains("case")) cfg.case_id = j["case"].get<int>();
    if (j.contains("controller"))
        cfg.controller = controller_from_string(j["controller"].get<std::string>());
    if (j.contains("duration")) cfg.duration = j["duration"].get<double>();
    if (j.contains("dt")) {
        cfg.dt = j["dt"].get<double>();
        cfg.ocp.dt = cfg.dt;
    }
    if (j.contains("dt_sim")) cfg.dt_sim = j["dt_sim"].get<double>();
    if (j.contains("initial_state")) cfg.initial_state = detail::vec6_from_json(j["initial_state"]);
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("measurement_noise_scale"))
        cfg.measurement_noise_scale = j["measurement_noise_scale"].get<double>();
    if (j.contains("disturbance")) {
        const auto& d = j["disturbance"];
        cfg.disturbance_enabled = d.value("enabled", cfg.disturbance_enabled);
        if (d.contains("bound")) cfg.disturbance_bound = detail::vec3_from_json(d["bound"]);
    }
    if (j.contains("hydro_file")) cfg.hydro = load_hydro_file(j["hydro_file"].get<std::string>());
    if (j.contains("hydro")) {
        const auto& h = j["hydro"];
        auto mat3 = [](const nlohmann::json& m) {
            if (m.size() == 3 && m[0].is_number())
                return Mat3(detail::vec3_from_json(m).asDiagonal());
            Mat3 out;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) out(r, c) = m[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
            return out;
        };
        const Mat3 M = h.contains("M") ? mat3(h["M"]) : cfg.hydro.M;
        const Mat3 Dl = h.contains("D_lin") ? mat3(h["D_lin"]) : cfg.hydro.D_lin;
        const Vec3 Dq = h.contains("D_quad") ? detail::vec3_from_json(h["D_quad"])
                                             : cfg.hydro.D_quad;
        const Vec3 box = h.contains("nu_max") ? detail::vec3_from_json(h["nu_max"])
                                              : cfg.hydro.nu_max;
        cfg.hydro = HydroModel::make(M, Dl, Dq, box);
    }
    if (j.contains("layout")) {
        const auto& l = j["layout"];
        Eigen::Matrix<double, 4, 2> pos = cfg.layout.positions, dir = cfg.layout.directions;
        if (l.contains("positions"))
            for (int i = 0; i < 4; ++i)
                for (int k = 0; k < 2; ++k) pos(i, k) = l["positions"][static_cast<size_t>(i)][static_cast<size_t>(k)].get<double>();
        if (l.contains("directions"))
            for (int i = 0; i < 4; ++i)
                for (int k = 0; k < 2; ++k) dir(i, k) = l["directions"][static_cast<size_t>(i)][static_cast<size_t>(k)].get<double>();
        cfg.layout = ThrusterLayout::make(pos, dir);
    }
    if (j.contains("limits")) {
        const auto& l = j["limits"];
        if (l.contains("u_min")) cfg.limits.u_min = detail::vec4_from_json(l["u_min"]);
        if (l.contains("u_max")) cfg.limits.u_max = detail::vec4_from_json(l["u_max"]);
        if (l.contains("rate_max")) cfg.limits.rate_max = l["rate_max"].get<double>();
    }
    if (j.contains("gains")) {
        const auto& g = j["gains"];
        const Mat3 Kp = g.contains("Kp") ? Mat3(detail::vec3_from_json(g["Kp"]).asDiagonal())
                                         : cfg.gains.Kp;
        const Mat3 Kd = g.contains("Kd") ? Mat3(detail::vec3_from_json(g["Kd"]).asDiagonal())
                                         : cfg.gains.Kd;
        const Mat3 Pd = g.contains("Pd") ? Mat3(detail::vec3_from_json(g["Pd"]).asDiagonal())
                                         : cfg.gains.Pd;
        const Mat3 La = g.contains("Lambda")
                            ? Mat3(detail::vec3_from_json(g["Lambda"]).asDiagonal())
                            : cfg.gains.Lambda;
        cfg.gains = BackstepGains::make(Kp, Kd, Pd, La);
        cfg.ocp.terminal_c = OcpConfig::terminal_level(cfg.gains, cfg.hydro);
    }
    if (j.contains("ocp")) {
        const auto& o = j["ocp"];
        if (o.contains("N")) cfg.ocp.N = o["N"].get<int>();
        if (o.contains("Q_eta")) cfg.ocp.Q_eta = detail::vec3_from_json(o["Q_eta"]).asDiagonal();
        if (o.contains("Q_s")) cfg.ocp.Q_s = detail::vec3_from_json(o["Q_s"]).asDiagonal();
        if (o.contains("Q_d")) cfg.ocp.Q_d = detail::vec3_from_json(o["Q_d"]).asDiagonal();
        if (o.contains("R_du")) cfg.ocp.R_du = Mat4(detail::vec4_from_json(o["R_du"]).asDiagonal());
        if (o.contains("alpha")) cfg.ocp.alpha = o["alpha"].get<double>();
        // paper-silent values, carried as explicit configuration
        if (o.contains("terminal_c")) cfg.ocp.terminal_c = o["terminal_c"].get<double>();
        if (o.contains("max_sqp_iterations"))
            cfg.ocp.max_sqp_iterations = o["max_sqp_iterations"].get<int>();
        if (o.contains("kkt_tol")) cfg.ocp.kkt_tol = o["kkt_tol"].get<double>();
        if (o.contains("descent_constraint"))
            cfg.ocp.descent_constraint = o["descent_constraint"].get<bool>();
        if (o.contains("terminal_constraint"))
            cfg.ocp.terminal_constraint = o["terminal_constraint"].get<bool>();
    }
    if (j.contains("bayes")) {
        const auto& b = j["bayes"];
        if (b.contains("t_diag"))
            cfg.library = ModeLibrary::standard_three_mode(b["t_diag"].get<double>());
        if (b.contains("rho")) cfg.rho = b["rho"].get<double>();
        if (b.contains("max_gap")) cfg.bayes_max_gap = b["max_gap"].get<double>();
        if (b.contains("p_floor")) cfg.bayes_p_floor = b["p_floor"].get<double>();
        if (b.contains("reanchor_floor")) cfg.reanchor_floor = b["reanchor_floor"].get<double>();
        if (b.contains("release_gate")) cfg.release_gate = b["release_gate"].get<double>();
    }
    if (j.contains("ukf")) {
        const auto& u = j["ukf"];
        if (u.contains("Q")) cfg.ukf_Q = detail::vec6_from_json(u["Q"]).asDiagonal();
        if (u.contains("R")) cfg.ukf_R = detail::vec6_from_json(u["R"]).asDiagonal();
        if (u.contains("alpha")) cfg.ut.alpha = u["alpha"].get<double>();
        if (u.contains("beta")) cfg.ut.beta = u["beta"].get<double>();
        if (u.contains("kappa")) cfg.ut.kappa = u["kappa"].get<double>();
        if (u.contains("jitter")) cfg.ukf_jitter = u["jitter"].get<double>();
        if (u.contains("p0")) cfg.ukf_p0 = u["p0"].get<double>();
    }
    if (j.contains("fusion")) {
        const auto& f = j["fusion"];
        if (f.contains("p_on")) cfg.fusion.p_on = f["p_on"].get<double>();
        if (f.contains("p_off")) cfg.fusion.p_off = f["p_off"].get<double>();
        if (f.contains("n_on")) cfg.fusion.n_on = f["n_on"].get<int>();
        if (f.contains("n_off")) cfg.fusion.n_off = f["n_off"].get<int>();
        if (f.contains("blend_enabled")) cfg.fusion.blend_enabled = f["blend_enabled"].get<bool>();
    }
    if (j.contains("fault_schedule")) {
        cfg.fault_schedule.clear();
        for (const auto& e : j["fault_schedule"]) {
            FaultEvent ev;
            ev.t = e.at("t").get<double>();
            if (e.contains("mode_index")) {
                ev.mode_index = e["mode_index"].get<int>();
                ev.params = cfg.library.modes.at(static_cast<size_t>(ev.mode_index));
            }
            if (e.contains("gamma")) ev.params.gamma = detail::vec4_from_json(e["gamma"]);
            if (e.contains("theta")) ev.params.theta = detail::vec4_from_json(e["theta"]);
            cfg.fault_schedule.push_back(ev);
        }
    }
    if (j.contains("out")) cfg.out_path = j["out"].get<std::string>();
}

inline ScenarioConfig load_scenario_config(const std::string& path, int default_case = 1,
                                           ControllerKind default_controller =
                                               ControllerKind::Almpc) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    nlohmann::json j;
    in >> j;
    const int case_id = j.value("case", default_case);
    ControllerKind ctrl = default_controller;
    if (j.contains("controller"))
        ctrl = controller_from_string(j["controller"].get<std::string>());
    ScenarioConfig cfg = ScenarioConfig::case_default(case_id, ctrl);
    apply_config_overrides(cfg, j);
    cfg.validate();
    return cfg;
}

}  // namespace auvftc
