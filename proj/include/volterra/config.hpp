#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "volterra/errors.hpp"
#include "volterra/expr.hpp"
#include "volterra/grids.hpp"
#include "volterra/pde_backend.hpp"
#include "volterra/problem.hpp"
#include "volterra/volterra_system.hpp"

namespace volterra {

using json = nlohmann::json;

// Resolved run configuration.  Coefficient entries hold canonicalized
// expression text; two configs are interchangeable iff their to_json() agree
// (the preset name is provenance, not state).
struct RunConfig {
    // [problem]
    std::string f, ds_f = "0", dy_f = "0", dz_f = "0";
    std::string xi, ds_xi = "0";
    std::string sigma;
    std::string b;        // empty: no drift
    std::string fbar;     // nonempty switches to the control/HJB pipeline
    std::string ds_fbar = "0";
    std::vector<double> control;
    double x0 = 0.0;
    double sigma_max = -1.0;  // <0: derive (constant sigma) or fall back to 1
    double L_f = 1.0, L_dsf = 0.0;
    int z_diag = -1;  // -1 auto, 0 false, 1 true

    // [grids]
    double T = 1.0;
    int M = 200, J = 200;
    double x_lo = std::nan(""), x_hi = std::nan("");
    double dx = 0.05;

    // [mc]
    int n_paths = 512;
    std::uint64_t seed = 9001;
    int degree = 2;

    // [picard]
    double tol = 1e-6;
    int max_iter = 50;
    double theta = 0.55;
    std::string solver = "full";  // full | simplified

    // [pde]
    std::string pde_enable = "auto";  // auto | on | off
    int substeps = 0;                 // 0 auto

    // [output]
    std::string directory = "out";
    std::string formats = "json,csv";
    std::string reference;  // optional expression in (s,t,x)

    std::string preset_name;  // provenance only

    bool hjb_mode() const { return !fbar.empty(); }
    bool pde_on() const { return pde_enable == "on" || (pde_enable == "auto" && hjb_mode()); }

    double resolved_sigma_max() const {
        if (sigma_max >= 0.0) return sigma_max;
        try {
            expr::Compiled c(sigma, "tx", "sigma");
            if (!c.uses(expr::VT) && !c.uses(expr::VX)) {
                double env[expr::VAR_COUNT] = {0};
                return std::abs(c(env));
            }
        } catch (...) {}
        return 1.0;
    }

    bool z_diag_resolved() const {
        if (z_diag >= 0) return z_diag != 0;
        if (f.empty()) return false;
        expr::Compiled c(f, "stxyzuv", "f");
        return c.uses(expr::VV);
    }

    XGrid xgrid() const {
        const double smax = resolved_sigma_max();
        const double width = 6.0 * std::max(smax, 1e-3) * std::sqrt(T);
        const double lo = std::isnan(x_lo) ? x0 - width : x_lo;
        const double hi = std::isnan(x_hi) ? x0 + width : x_hi;
        const int cells = std::max(4, static_cast<int>(std::lround((hi - lo) / dx)));
        return XGrid::uniform(lo, hi, cells);
    }

    json to_json() const {
        json j;
        j["problem"] = {{"f", f},       {"ds_f", ds_f},     {"dy_f", dy_f},   {"dz_f", dz_f},
                        {"xi", xi},     {"ds_xi", ds_xi},   {"sigma", sigma}, {"b", b},
                        {"fbar", fbar}, {"ds_fbar", ds_fbar}, {"control", control},
                        {"x0", x0},     {"sigma_max", resolved_sigma_max()},
                        {"L_f", L_f},   {"L_dsf", L_dsf},   {"z_diag", z_diag_resolved()}};
        j["grids"] = {{"T", T}, {"M", M}, {"J", J}, {"dx", dx}};
        const XGrid xg = xgrid();
        j["grids"]["x_lo"] = xg.lo;
        j["grids"]["x_hi"] = xg.hi;
        j["mc"] = {{"n_paths", n_paths}, {"seed", seed}, {"degree", degree}};
        j["picard"] = {{"tol", tol}, {"max_iter", max_iter}, {"theta", theta}, {"solver", solver}};
        j["pde"] = {{"enable", pde_enable}, {"substeps", substeps}};
        j["output"] = {{"directory", directory}, {"formats", formats}, {"reference", reference}};
        return j;
    }
};

namespace config_detail {

struct Entry {
    std::string section, key, value;
    int line = 0;
};

inline std::vector<Entry> tokenize(const std::string& text) {
    std::vector<Entry> out;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        Entry e;
        e.section = section;
        e.key = trim(line.substr(0, eq));
        e.value = trim(line.substr(eq + 1));
        e.line = lineno;
        if (e.section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside any [section]");
        out.push_back(e);
    }
    return out;
}

inline double to_num(const Entry& e) {
    try {
        std::size_t used = 0;
        const double v = std::stod(e.value, &used);
        if (used != e.value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw ConfigError("key " + e.section + "." + e.key + ": expected a number, got '" + e.value + "'");
    }
}

inline int to_int(const Entry& e) {
    const double v = to_num(e);
    if (v != std::floor(v)) throw ConfigError("key " + e.section + "." + e.key + ": expected an integer");
    return static_cast<int>(v);
}

// catalog of shipped problems; each preset is a list of section.key = value
// pairs applied before the explicit file entries
inline const std::map<std::string, std::vector<Entry>>& preset_catalog() {
    static const std::map<std::string, std::vector<Entry>> cat = {
        {"zero",
         {{"problem", "f", "0", 0}, {"problem", "xi", "0", 0}, {"problem", "sigma", "0", 0}}},
        {"exp_diag",
         {{"problem", "f", "u", 0}, {"problem", "xi", "1", 0}, {"problem", "sigma", "0", 0}}},
        {"brownian_identity",
         {{"problem", "f", "0", 0}, {"problem", "xi", "s*x", 0}, {"problem", "ds_xi", "x", 0},
          {"problem", "sigma", "1", 0}, {"grids", "M", "50", 0}, {"grids", "J", "50", 0},
          {"mc", "n_paths", "10000", 0}}},
        {"linear_z",
         {{"problem", "f", "z", 0}, {"problem", "dz_f", "1", 0}, {"problem", "xi", "x", 0},
          {"problem", "sigma", "1", 0}, {"grids", "T", "0.25", 0}, {"grids", "M", "50", 0},
          {"grids", "J", "50", 0}, {"mc", "n_paths", "4000", 0}}},
        {"sin_nonlinear",
         {{"problem", "f", "sin(y)", 0}, {"problem", "dy_f", "cos(y)", 0}, {"problem", "xi", "x", 0},
          {"problem", "sigma", "1", 0}, {"grids", "T", "0.25", 0}, {"grids", "M", "50", 0},
          {"grids", "J", "50", 0}, {"mc", "n_paths", "10000", 0}}},
        {"wy_vs_bkm_controlfree",
         {{"problem", "fbar", "0", 0}, {"problem", "control", "0", 0},
          {"problem", "xi", "s*cos(x)", 0}, {"problem", "ds_xi", "cos(x)", 0},
          {"problem", "sigma", "1", 0}, {"grids", "M", "50", 0}, {"grids", "J", "50", 0}}},
    };
    return cat;
}

inline void apply_entry(RunConfig& c, const Entry& e) {
    const std::string& s = e.section;
    const std::string& k = e.key;
    auto is = [&](const char* sec, const char* key) { return s == sec && k == key; };
    if (is("problem", "preset")) return;  // handled by the caller
    if (is("problem", "f")) c.f = e.value;
    else if (is("problem", "ds_f")) c.ds_f = e.value;
    else if (is("problem", "dy_f")) c.dy_f = e.value;
    else if (is("problem", "dz_f")) c.dz_f = e.value;
    else if (is("problem", "xi")) c.xi = e.value;
    else if (is("problem", "ds_xi")) c.ds_xi = e.value;
    else if (is("problem", "sigma")) c.sigma = e.value;
    else if (is("problem", "b")) c.b = e.value;
    else if (is("problem", "fbar")) c.fbar = e.value;
    else if (is("problem", "ds_fbar")) c.ds_fbar = e.value;
    else if (is("problem", "control")) {
        c.control.clear();
        std::istringstream in(e.value);
        std::string tok;
        while (std::getline(in, tok, ',')) {
            try {
                c.control.push_back(std::stod(tok));
            } catch (...) {
                throw ConfigError("problem.control: malformed number '" + tok + "'");
            }
        }
    } else if (is("problem", "x0")) c.x0 = to_num(e);
    else if (is("problem", "sigma_max")) c.sigma_max = to_num(e);
    else if (is("problem", "L_f")) c.L_f = to_num(e);
    else if (is("problem", "L_dsf")) c.L_dsf = to_num(e);
    else if (is("problem", "z_diag")) {
        if (e.value == "auto") c.z_diag = -1;
        else if (e.value == "true") c.z_diag = 1;
        else if (e.value == "false") c.z_diag = 0;
        else throw ConfigError("problem.z_diag: expected auto|true|false");
    } else if (is("grids", "T")) c.T = to_num(e);
    else if (is("grids", "M")) c.M = to_int(e);
    else if (is("grids", "J")) c.J = to_int(e);
    else if (is("grids", "x_lo")) c.x_lo = to_num(e);
    else if (is("grids", "x_hi")) c.x_hi = to_num(e);
    else if (is("grids", "dx")) c.dx = to_num(e);
    else if (is("mc", "n_paths")) c.n_paths = to_int(e);
    else if (is("mc", "seed")) c.seed = static_cast<std::uint64_t>(to_num(e));
    else if (is("mc", "degree")) c.degree = to_int(e);
    else if (is("picard", "tol")) c.tol = to_num(e);
    else if (is("picard", "max_iter")) c.max_iter = to_int(e);
    else if (is("picard", "theta")) c.theta = to_num(e);
    else if (is("picard", "solver")) {
        if (e.value != "full" && e.value != "simplified")
            throw ConfigError("picard.solver: expected full|simplified");
        c.solver = e.value;
    } else if (is("pde", "enable")) {
        if (e.value != "auto" && e.value != "on" && e.value != "off")
            throw ConfigError("pde.enable: expected auto|on|off");
        c.pde_enable = e.value;
    } else if (is("pde", "substeps")) {
        if (e.value == "auto") c.substeps = 0;
        else c.substeps = to_int(e);
    } else if (is("output", "directory")) c.directory = e.value;
    else if (is("output", "formats")) c.formats = e.value;
    else if (is("output", "reference")) c.reference = e.value;
    else throw ConfigError("unknown key '" + k + "' in section [" + s + "]");
}

} // namespace config_detail

inline RunConfig parse_config_text(const std::string& text) {
    using namespace config_detail;
    const std::vector<Entry> entries = tokenize(text);

    RunConfig cfg;
    std::string preset;
    for (const Entry& e : entries)
        if (e.section == "problem" && e.key == "preset") {
            const auto& cat = preset_catalog();
            auto it = cat.find(e.value);
            if (it == cat.end()) throw ConfigError("unknown preset '" + e.value + "'");
            preset = e.value;
        }
    if (!preset.empty())
        for (const Entry& pe : preset_catalog().at(preset)) apply_entry(cfg, pe);
    for (const Entry& e : entries) apply_entry(cfg, e);
    cfg.preset_name = preset;

    if (cfg.f.empty() && cfg.fbar.empty())
        throw ConfigError("problem.preset or problem.f required");
    if (!cfg.hjb_mode() && (cfg.xi.empty() || cfg.sigma.empty()))
        throw ConfigError("missing required key: problem." + std::string(cfg.xi.empty() ? "xi" : "sigma"));
    if (cfg.hjb_mode() && cfg.control.empty())
        throw ConfigError("missing required key: problem.control (control grid for the HJB pipeline)");
    if (cfg.M < 1 || cfg.J < 1) throw ConfigError("grids.M and grids.J must be >= 1");
    if (!(cfg.T > 0.0)) throw ConfigError("grids.T must be > 0");

    // canonicalize the expression texts (also surfaces parse errors early)
    auto canon = [](std::string& txt, const char* allowed, const char* role) {
        if (txt.empty()) return;
        txt = expr::Compiled(txt, allowed, role).canonical_text();
    };
    canon(cfg.f, "stxyzuv", "problem.f");
    canon(cfg.ds_f, "stxyzuv", "problem.ds_f");
    canon(cfg.dy_f, "stxyzuv", "problem.dy_f");
    canon(cfg.dz_f, "stxyzuv", "problem.dz_f");
    canon(cfg.xi, "sx", "problem.xi");
    canon(cfg.ds_xi, "sx", "problem.ds_xi");
    canon(cfg.sigma, "tx", "problem.sigma");
    canon(cfg.b, "txa", "problem.b");  // control argument only reachable in the HJB pipeline
    canon(cfg.fbar, "stxa", "problem.fbar");
    canon(cfg.ds_fbar, "stxa", "problem.ds_fbar");
    canon(cfg.reference, "stx", "output.reference");
    return cfg;
}

inline RunConfig parse_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

// Compile the scalar (n = m = d = 1) expression problem.
inline ProblemSpec to_problem_spec(const RunConfig& cfg) {
    if (cfg.hjb_mode()) throw ConfigError("to_problem_spec: config declares an HJB problem (fbar)");
    ProblemSpec spec;
    spec.n = spec.m = spec.d = 1;
    spec.x0 = {cfg.x0};
    spec.sigma_max = cfg.resolved_sigma_max();
    spec.lipschitz = {cfg.L_f, cfg.L_dsf};
    spec.z_diagonal_in_generator = cfg.z_diag_resolved();

    auto gen = [](const std::string& text, const char* role) {
        return expr::Compiled(text, "stxyzuv", role);
    };
    const expr::Compiled cf = gen(cfg.f, "problem.f");
    const expr::Compiled cds = gen(cfg.ds_f, "problem.ds_f");
    const expr::Compiled cdy = gen(cfg.dy_f, "problem.dy_f");
    const expr::Compiled cdz = gen(cfg.dz_f, "problem.dz_f");
    const expr::Compiled cxi(cfg.xi, "sx", "problem.xi");
    const expr::Compiled cdxi(cfg.ds_xi, "sx", "problem.ds_xi");
    const expr::Compiled csig(cfg.sigma, "tx", "problem.sigma");

    auto genfn = [](const expr::Compiled& c) {
        return [c](double s, double t, const double* x, const double* y, const double* z,
                   const double* u, const double* v, double* o) {
            double env[expr::VAR_COUNT] = {s, t, x[0], y[0], z[0], u[0], v[0], 0.0};
            o[0] = c(env);
        };
    };
    spec.f = genfn(cf);
    spec.ds_f = genfn(cds);
    spec.dy_f = genfn(cdy);
    spec.dz_f = {JacFn(genfn(cdz))};
    spec.xi = [cxi](double s, const double* x, double* o) {
        double env[expr::VAR_COUNT] = {s, 0.0, x[0], 0, 0, 0, 0, 0};
        o[0] = cxi(env);
    };
    spec.ds_xi = [cdxi](double s, const double* x, double* o) {
        double env[expr::VAR_COUNT] = {s, 0.0, x[0], 0, 0, 0, 0, 0};
        o[0] = cdxi(env);
    };
    spec.sigma = [csig](double t, const double* x, double* o) {
        double env[expr::VAR_COUNT] = {0.0, t, x[0], 0, 0, 0, 0, 0};
        o[0] = csig(env);
    };
    if (!cfg.b.empty() && cfg.b != "0") {
        const expr::Compiled cb(cfg.b, "tx", "problem.b");
        spec.drift_b = [cb](double t, const double* x, double* o) {
            double env[expr::VAR_COUNT] = {0.0, t, x[0], 0, 0, 0, 0, 0};
            o[0] = cb(env);
        };
    }
    return spec;
}

inline HjbSpec to_hjb_spec(const RunConfig& cfg) {
    if (!cfg.hjb_mode()) throw ConfigError("to_hjb_spec: config has no fbar");
    HjbSpec h;
    const expr::Compiled cf(cfg.fbar, "stxa", "problem.fbar");
    const expr::Compiled cds(cfg.ds_fbar, "stxa", "problem.ds_fbar");
    const expr::Compiled cxi(cfg.xi, "sx", "problem.xi");
    const expr::Compiled cdxi(cfg.ds_xi, "sx", "problem.ds_xi");
    const expr::Compiled csig(cfg.sigma, "tx", "problem.sigma");
    h.bar_f = [cf](double s, double t, double x, double a) {
        double env[expr::VAR_COUNT] = {s, t, x, 0, 0, 0, 0, a};
        return cf(env);
    };
    h.ds_bar_f = [cds](double s, double t, double x, double a) {
        double env[expr::VAR_COUNT] = {s, t, x, 0, 0, 0, 0, a};
        return cds(env);
    };
    h.xi = [cxi](double s, double x) {
        double env[expr::VAR_COUNT] = {s, 0, x, 0, 0, 0, 0, 0};
        return cxi(env);
    };
    h.ds_xi = [cdxi](double s, double x) {
        double env[expr::VAR_COUNT] = {s, 0, x, 0, 0, 0, 0, 0};
        return cdxi(env);
    };
    h.sigma = [csig](double t, double x) {
        double env[expr::VAR_COUNT] = {0, t, x, 0, 0, 0, 0, 0};
        return csig(env);
    };
    if (!cfg.b.empty() && cfg.b != "0") {
        const expr::Compiled cb(cfg.b, "txa", "problem.b");
        h.b = [cb](double t, double x, double a) {
            double env[expr::VAR_COUNT] = {0, t, x, 0, 0, 0, 0, a};
            return cb(env);
        };
    }
    h.control = ControlSet::of(cfg.control);
    h.sigma_max = cfg.resolved_sigma_max();
    return h;
}

inline std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& kv : config_detail::preset_catalog()) names.push_back(kv.first);
    return names;
}

} // namespace volterra
