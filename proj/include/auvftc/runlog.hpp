#pragma once

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "auvftc/supervisor.hpp"
#include "auvftc/types.hpp"

namespace auvftc {

/// One control period of a closed-loop run.  Optional fields are empty for
/// controllers without that subsystem (BSC has no estimator, only ALMPC
/// blends).
struct LogRow {
    double t = 0.0;
    Vec3 eta = Vec3::Zero();
    Vec3 nu = Vec3::Zero();
    Vec3 eta_d = Vec3::Zero();
    Vec3 error = Vec3::Zero();  // truth minus reference, heading wrapped
    Vec4 u = Vec4::Zero();
    Vec3 tau_cmd = Vec3::Zero();  // commanded generalized force
    std::optional<Vec3> posteriors;
    std::string solver_status;  // empty for BSC
    std::optional<int> sqp_iterations;
    std::optional<double> kkt_residual;
    double lyapunov = 0.0;  // V at the true augmented error
    std::optional<double> descent_margin;
    bool fallback = false;
    int locked_mode = -1;  // -1 while blending
    int true_mode = -1;    // -1 for out-of-library faults
    std::optional<bool> jensen_ok;
    std::optional<Vec3> innovation_chi2;
};

/// Per-axis tracking metrics over a full run.
struct MetricsReport {
    Vec3 rmse = Vec3::Zero();
    Vec3 max_ae = Vec3::Zero();
    Vec3 sse = Vec3::Zero();
    Vec3 iae = Vec3::Zero();
};

struct RunLog {
    std::vector<LogRow> rows;
    double dt = 0.1;

    // run-level counters used by the acceptance suite
    long total_steps = 0;
    long fallback_steps = 0;
    long contraction_checked = 0;
    long contraction_violations = 0;
    long jensen_checked = 0;
    long jensen_satisfied = 0;
    long lock_events = 0;
    long unlock_events = 0;
    std::vector<TransitionTimer> timers;
};

/// RMSE/MaxAE/SSE per sample set; IAE by the trapezoidal rule, so a
/// constant |e| = 0.1 over 10 s gives IAE = 1.0 while SSE counts all
/// n = 101 samples.
inline MetricsReport compute_metrics(const RunLog& log) {
    if (log.rows.empty()) throw std::invalid_argument("compute_metrics: empty log");
    MetricsReport m;
    const size_t n = log.rows.size();
    for (int a = 0; a < 3; ++a) {
        double sse = 0.0, iae = 0.0, maxae = 0.0;
        for (size_t k = 0; k < n; ++k) {
            const double e = std::abs(log.rows[k].error(a));
            sse += e * e;
            maxae = std::max(maxae, e);
            const double w = (k == 0 || k + 1 == n) ? 0.5 : 1.0;
            iae += w * e * log.dt;
        }
        if (n == 1) iae = 0.0;
        m.sse(a) = sse;
        m.max_ae(a) = maxae;
        m.rmse(a) = std::sqrt(sse / static_cast<double>(n));
        m.iae(a) = iae;
    }
    return m;
}

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void append_opt(std::string& line, const std::optional<double>& v) {
    line += ',';
    if (v) line += format_double(*v);
}

}  // namespace detail

inline const char* csv_header() {
    return "t,x,y,psi,u,v,r,x_d,y_d,psi_d,e_x,e_y,e_psi,"
           "u1,u2,u3,u4,tau_x,tau_y,tau_n,p1,p2,p3,"
           "solver_status,sqp_iters,kkt_res,V,descent_margin,fallback,"
           "locked_mode,true_mode,jensen_ok,innov_chi2_1,innov_chi2_2,innov_chi2_3";
}

/// Serializes the log with the documented fixed column order.  Doubles are
/// written with %.17g so a parse reproduces them bit-exactly.
inline std::string serialize_csv(const RunLog& log) {
    std::string out(csv_header());
    out += '\n';
    for (const auto& r : log.rows) {
        std::string line = detail::format_double(r.t);
        auto push = [&line](double v) {
            line += ',';
            line += detail::format_double(v);
        };
        for (int i = 0; i < 3; ++i) push(r.eta(i));
        for (int i = 0; i < 3; ++i) push(r.nu(i));
        for (int i = 0; i < 3; ++i) push(r.eta_d(i));
        for (int i = 0; i < 3; ++i) push(r.error(i));
        for (int i = 0; i < 4; ++i) push(r.u(i));
        for (int i = 0; i < 3; ++i) push(r.tau_cmd(i));
        for (int i = 0; i < 3; ++i) {
            line += ',';
            if (r.posteriors) line += detail::format_double((*r.posteriors)(i));
        }
        line += ',';
        line += r.solver_status;
        line += ',';
        if (r.sqp_iterations) line += std::to_string(*r.sqp_iterations);
        detail::append_opt(line, r.kkt_residual);
        push(r.lyapunov);
        detail::append_opt(line, r.descent_margin);
        line += ',';
        line += r.fallback ? '1' : '0';
        line += ',';
        line += std::to_string(r.locked_mode);
        line += ',';
        line += std::to_string(r.true_mode);
        line += ',';
        if (r.jensen_ok) line += (*r.jensen_ok ? '1' : '0');
        for (int i = 0; i < 3; ++i) {
            line += ',';
            if (r.innovation_chi2) line += detail::format_double((*r.innovation_chi2)(i));
        }
        out += line;
        out += '\n';
    }
    return out;
}

/// Parses a CSV produced by serialize_csv back into rows (header checked).
inline RunLog parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("parse_csv: empty input");
    if (line != csv_header()) throw std::runtime_error("parse_csv: unexpected header");
    RunLog log;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        f.reserve(36);
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                f.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        f.push_back(cur);
        if (f.size() != 35) throw std::runtime_error("parse_csv: bad field count");
        auto num = [&](size_t i) { return std::stod(f[i]); };
        auto opt = [&](size_t i) -> std::optional<double> {
            if (f[i].empty()) return std::nullopt;
            return std::stod(f[i]);
        };
        LogRow r;
        size_t i = 0;
        r.t = num(i++);
        for (int k = 0; k < 3; ++k) r.eta(k) = num(i++);
        for (int k = 0; k < 3; ++k) r.nu(k) = num(i++);
        for (int k = 0; k < 3; ++k) r.eta_d(k) = num(i++);
        for (int k = 0; k < 3; ++k) r.error(k) = num(i++);
        for (int k = 0; k < 4; ++k) r.u(k) = num(i++);
        for (int k = 0; k < 3; ++k) r.tau_cmd(k) = num(i++);
        if (!f[i].empty()) {
            Vec3 p;
            for (int k = 0; k < 3; ++k) p(k) = num(i + static_cast<size_t>(k));
            r.posteriors = p;
        }
        i += 3;
        r.solver_status = f[i++];
        if (!f[i].empty()) r.sqp_iterations = std::stoi(f[i]);
        ++i;
        r.kkt_residual = opt(i++);
        r.lyapunov = num(i++);
        r.descent_margin = opt(i++);
        r.fallback = (f[i++] == "1");
        r.locked_mode = std::stoi(f[i++]);
        r.true_mode = std::stoi(f[i++]);
        if (!f[i].empty()) r.jensen_ok = (f[i] == "1");
        ++i;
        if (!f[i].empty()) {
            Vec3 c;
            for (int k = 0; k < 3; ++k) c(k) = num(i + static_cast<size_t>(k));
            r.innovation_chi2 = c;
        }
        log.rows.push_back(r);
    }
    if (log.rows.size() >= 2) log.dt = log.rows[1].t - log.rows[0].t;
    return log;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path);
}

/// Structured-text run summary: metrics, detection/accommodation times per
/// scheduled transition ("n/a" when the controller has no estimator or the
/// event was never confirmed), and solver statistics.
inline std::string serialize_summary(const RunLog& log, const MetricsReport& m,
                                     const std::string& case_name,
                                     const std::string& controller_name,
                                     std::uint64_t seed, bool has_estimator) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["case"] = case_name;
    j["controller"] = controller_name;
    j["seed"] = seed;
    j["samples"] = log.rows.size();
    auto axis = [&](int a) {
        nlohmann::json x;
        x["rmse"] = m.rmse(a);
        x["max_ae"] = m.max_ae(a);
        x["sse"] = m.sse(a);
        x["iae"] = m.iae(a);
        return x;
    };
    j["metrics"]["x"] = axis(0);
    j["metrics"]["y"] = axis(1);
    j["metrics"]["psi"] = axis(2);
    j["transitions"] = nlohmann::json::array();
    for (const auto& timer : log.timers) {
        nlohmann::json t;
        t["t_fault"] = timer.t_fault;
        t["true_mode"] = timer.true_mode;
        if (!has_estimator) {
            t["T_det"] = "n/a";
            t["T_acc"] = timer.accommodation_time()
                             ? nlohmann::json(*timer.accommodation_time())
                             : nlohmann::json("n/a");
        } else {
            t["T_det"] = timer.detection_time() ? nlohmann::json(*timer.detection_time())
                                                : nlohmann::json("n/a");
            t["T_acc"] = timer.accommodation_time()
                             ? nlohmann::json(*timer.accommodation_time())
                             : nlohmann::json("n/a");
        }
        j["transitions"].push_back(t);
    }
    j["solver"]["total_steps"] = log.total_steps;
    j["solver"]["fallback_steps"] = log.fallback_steps;
    j["solver"]["contraction_checked"] = log.contraction_checked;
    j["solver"]["contraction_violations"] = log.contraction_violations;
    j["solver"]["jensen_checked"] = log.jensen_checked;
    j["solver"]["jensen_satisfied"] = log.jensen_satisfied;
    j["supervisor"]["lock_events"] = log.lock_events;
    j["supervisor"]["unlock_events"] = log.unlock_events;
    return j.dump(2) + "\n";
}

}  // namespace auvftc
