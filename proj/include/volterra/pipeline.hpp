#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "volterra/config.hpp"
#include "volterra/io.hpp"
#include "volterra/mc_forward.hpp"
#include "volterra/metrics.hpp"
#include "volterra/pde_backend.hpp"
#include "volterra/rng.hpp"
#include "volterra/volterra_system.hpp"

namespace volterra {

namespace pipeline_detail {

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::uint64_t grid_hash(const RunConfig& cfg) {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    auto mix = [&h](std::uint64_t v) { h = detail::splitmix64(h ^ v); };
    mix(static_cast<std::uint64_t>(cfg.M));
    mix(static_cast<std::uint64_t>(cfg.J));
    mix(static_cast<std::uint64_t>(cfg.n_paths));
    std::uint64_t tbits;
    static_assert(sizeof(double) == 8);
    std::memcpy(&tbits, &cfg.T, 8);
    mix(tbits);
    return h;
}

inline json residual_json(const char* op, const ResidualReport& r) {
    return {{"op", op}, {"rms", r.rms}, {"conditioned_rms", r.conditioned_rms}, {"max", r.max_over_index}};
}

} // namespace pipeline_detail

struct RunResult {
    int exit_code = 0;
    json report;
    std::shared_ptr<const FieldSolution> field;  // set on a converged MC run
    std::shared_ptr<const PdeSolution> pde;     // set when the PDE backend ran
};

// RMS over the whole family of U against a reference expression in (s, t, x).
inline double reference_rms(const FieldSolution& f, const PathEnsemble& ens,
                            const expr::Compiled& ref) {
    double acc = 0.0;
    long cnt = 0;
    for (int j = 0; j <= f.J(); ++j)
        for (int i = 0; i <= f.M(); ++i)
            for (int p = 0; p < f.n_paths; ++p) {
                double env[expr::VAR_COUNT] = {f.sgrid.nodes[static_cast<std::size_t>(j)],
                                               f.tgrid.nodes[static_cast<std::size_t>(i)],
                                               ens.state(p, i)[0], 0, 0, 0, 0, 0};
                const double e = *f.u_at(j, i, p) - ref(env);
                acc += e * e;
                ++cnt;
            }
    return std::sqrt(acc / std::max<long>(1, cnt));
}

// Full experiment pipeline: simulate -> solve -> diagnose -> cross-check.
// Throws nothing; solver failures are folded into the exit code with all
// partial outputs kept in the report.
inline RunResult run_pipeline(const RunConfig& cfg) {
    RunResult res;
    json& rep = res.report;
    rep["config"] = cfg.to_json();
    rep["provenance"] = {{"seed", cfg.seed},
                         {"grid_hash", pipeline_detail::grid_hash(cfg)},
                         {"preset", cfg.preset_name},
                         {"backend", cfg.hjb_mode() ? "pde_hjb" : (cfg.solver == "simplified" ? "mc_simplified" : "mc_full")}};

    const TimeGrid tgrid = TimeGrid::uniform(cfg.T, cfg.M);
    const ParamGrid sgrid = ParamGrid::uniform(cfg.T, cfg.J);

    if (cfg.hjb_mode()) {
        const HjbSpec hjb = to_hjb_spec(cfg);
        const XGrid xg = cfg.xgrid();
        try {
            const PdeSolution wy = solve_hjb_wy(hjb, tgrid, sgrid, xg, cfg.substeps);
            const PdeSolution bkm = solve_hjb_bkm(hjb, tgrid, sgrid, xg, cfg.substeps);
            const EquivalenceReport eq = check_equivalence(wy, bkm, hjb);
            rep["equivalence"] = {{"op", "check_equivalence"},
                                  {"sup_value_diff", eq.sup_value_diff},
                                  {"sup_value_diff_full", eq.sup_value_diff_full},
                                  {"sup_bkm_residual", eq.sup_bkm_residual},
                                  {"inconclusive", false}};
            rep["pde"] = {{"op", "solve_hjb_wy+solve_hjb_bkm"},
                          {"x_lo", xg.lo},
                          {"x_hi", xg.hi},
                          {"cells", xg.cells}};
            res.pde = std::make_shared<PdeSolution>(wy);
        } catch (const DivergenceError& e) {
            rep["equivalence"] = {{"op", "check_equivalence"}, {"inconclusive", true}, {"error", e.what()}};
            res.exit_code = 2;
        }
        return res;
    }

    const ProblemSpec spec = to_problem_spec(cfg);
    const PathEnsemble ens = simulate_paths(spec, tgrid, cfg.n_paths, cfg.seed);
    rep["mc"] = {{"op", "simulate_paths"},
                 {"n_paths", cfg.n_paths},
                 {"qv_residual", quadratic_variation_check(ens, spec)}};

    const RegressionBasis basis{cfg.degree};
    const PicardOptions opts{cfg.tol, cfg.max_iter, cfg.theta};
    const bool simplified = cfg.solver == "simplified";

    std::shared_ptr<FieldSolution> field;
    try {
        field = std::make_shared<FieldSolution>(
            simplified ? solve_system_simplified(spec, ens, tgrid, sgrid, basis, opts)
                       : solve_system(spec, ens, tgrid, sgrid, basis, opts));
    } catch (const NonConvergenceError& e) {
        rep["picard"] = {{"op", "solve_system"},
                         {"converged", false},
                         {"trace", e.trace},
                         {"iterations", e.trace.size()},
                         {"distance", e.achieved},
                         {"error", e.what()}};
        res.exit_code = 2;
        return res;
    }

    res.field = field;
    rep["picard"] = {{"op", "solve_system"},
                     {"converged", true},
                     {"trace", field->picard_trace},
                     {"iterations", field->picard_trace.size()},
                     {"distance", field->achieved_distance}};

    const BsvieSolution sol = extract_bsvie(field, ens, spec);
    rep["identification"] = {{"op", "extract_bsvie"},
                             {"err_Y", sol.ident_err_Y},
                             {"err_Z", sol.ident_err_Z}};

    // mean diagonal value at t = 0 (d = 1 in the expression pipeline)
    {
        double y0 = 0.0;
        for (int p = 0; p < field->n_paths; ++p) y0 += field->Ydiag[field->doff(0, p)];
        rep["ydiag0"] = {{"op", "extract_bsvie"}, {"mean", y0 / field->n_paths}};
    }

    const NormReport norms = compute_norms(*field, ens, spec);
    rep["norms"] = {{"op", "compute_norms"}, {"s2_sup", norms.s2_sup},   {"h2", norms.h2},
                    {"s22_sup", norms.s22_sup}, {"h22_sup", norms.h22_sup}, {"diag_h2", norms.diag_h2},
                    {"l2", norms.l2},           {"hbar22", norms.hbar22()}, {"c", norms.c}};

    rep["residuals"]["ortho"] = {{"op", "solve_system"},
                                 {"family_mean", field->ortho_residuals.family_mean},
                                 {"family_cond", field->ortho_residuals.family_cond},
                                 {"deriv_mean", field->ortho_residuals.deriv_mean},
                                 {"deriv_cond", field->ortho_residuals.deriv_cond},
                                 {"diag_mean", field->ortho_residuals.diag_mean},
                                 {"diag_cond", field->ortho_residuals.diag_cond}};
    if (!simplified) {
        rep["residuals"]["diagonal_dynamics"] =
            pipeline_detail::residual_json("check_diagonal_dynamics",
                                           check_diagonal_dynamics(*field, spec, ens, basis));
        const ConstraintDReport dc = check_constraint_D(*field, ens, spec);
        rep["residuals"]["constraint_D"] = {{"op", "check_constraint_D"},
                                            {"max_U", dc.max_U},
                                            {"max_V", dc.max_V},
                                            {"per_s_U", dc.residual_U}};
    }
    rep["residuals"]["m_property"] =
        pipeline_detail::residual_json("check_M_property", check_M_property(sol, ens));

    const AprioriReport ap = apriori_report(*field, spec, ens);
    rep["apriori"] = {{"op", "apriori_report"}, {"i0_sq", ap.i0_sq}, {"sol_sq", ap.sol_sq},
                      {"anomaly", ap.anomaly}};
    if (ap.ratio) rep["apriori"]["ratio"] = *ap.ratio;
    else rep["apriori"]["ratio"] = "0/0";

    if (!cfg.reference.empty()) {
        const expr::Compiled ref(cfg.reference, "stx", "output.reference");
        rep["reference_error"] = {{"op", "run"}, {"rms", reference_rms(*field, ens, ref)}};
    }

    if (cfg.pde_on()) {
        if (spec.n != 1) {
            rep["fk"] = {{"op", "feynman_kac_check"}, {"skipped", "pde backend is 1-D"}};
        } else {
            const XGrid xg = cfg.xgrid();
            try {
                const PdeSolution pde = solve_representation_pde(spec, tgrid, sgrid, xg, cfg.substeps);
                const FeynmanKacReport fk = feynman_kac_check(pde, sol, ens);
                rep["fk"] = {{"op", "feynman_kac_check"},
                             {"rms_Y", fk.rms_Y},
                             {"rms_Z", fk.rms_Z},
                             {"exit_fraction", fk.exit_fraction}};
                rep["pde"] = {{"op", "solve_representation_pde"}, {"x_lo", xg.lo}, {"x_hi", xg.hi},
                              {"cells", xg.cells}};
                res.pde = std::make_shared<PdeSolution>(pde);
            } catch (const DivergenceError& e) {
                rep["fk"] = {{"op", "feynman_kac_check"}, {"inconclusive", true}, {"error", e.what()}};
                res.exit_code = 2;
            }
        }
    }
    return res;
}

// -------- persistent outputs --------

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for write: " + path);
    f << text;
}

inline void write_report_files(const RunResult& res, const RunConfig& cfg, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_text(dir + "/report.json", res.report.dump(2) + "\n");
    json meta = {{"written_unix_ms",
                  std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count()},
                 {"exit_code", res.exit_code}};
    write_text(dir + "/meta.json", meta.dump(2) + "\n");
    (void)cfg;
}

// Diagonal series as a plot-ready CSV (17 significant digits).
inline void write_diag_csv(const FieldSolution& f, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    out << "t,ydiag_mean,udiag_mean,zdiag_mean\n";
    for (int i = 0; i <= f.M(); ++i) {
        double y = 0.0, u = 0.0, z = 0.0;
        for (int p = 0; p < f.n_paths; ++p) {
            y += f.Ydiag[f.doff(i, p)];
            u += f.Udiag[f.doff(i, p)];
            z += f.Zdiag[f.zoff(i, p)];
        }
        out << pipeline_detail::fmt17(f.tgrid.nodes[static_cast<std::size_t>(i)]) << ','
            << pipeline_detail::fmt17(y / f.n_paths) << ',' << pipeline_detail::fmt17(u / f.n_paths) << ','
            << pipeline_detail::fmt17(z / f.n_paths) << '\n';
    }
}

// PdeSolution export: (s, t, x, v, vx) rows plus a JSON grid sidecar.
inline void write_pde_csv(const PdeSolution& p, const std::string& path, const std::string& sidecar) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    out << "s,t,x,v,vx\n";
    for (int j = 0; j <= p.J(); ++j)
        for (int i = 0; i <= p.M(); ++i)
            for (int k = 0; k <= p.K(); ++k)
                out << pipeline_detail::fmt17(p.sgrid.nodes[static_cast<std::size_t>(j)]) << ','
                    << pipeline_detail::fmt17(p.tgrid.nodes[static_cast<std::size_t>(i)]) << ','
                    << pipeline_detail::fmt17(p.xgrid.nodes[static_cast<std::size_t>(k)]) << ','
                    << pipeline_detail::fmt17(p.v[p.off(j, i, k)]) << ','
                    << pipeline_detail::fmt17(p.vx[p.off(j, i, k)]) << '\n';
    json side = {{"T", p.tgrid.horizon}, {"M", p.M()},        {"J", p.J()},
                 {"x_lo", p.xgrid.lo},   {"x_hi", p.xgrid.hi}, {"cells", p.K()}};
    write_text(sidecar, side.dump(2) + "\n");
}

// -------- refinement study --------

struct StudyRow {
    int M = 0, J = 0, n_paths = 0;
    std::uint64_t seed = 0;
    std::string status = "ok";
    double ref_rms = std::nan("");
    double diag_dyn_rms = std::nan("");
    double diag_dyn_cond = std::nan("");
    double qv_residual = std::nan("");
    int iterations = 0;
};

struct StudyResult {
    std::vector<StudyRow> rows;
    json orders;  // fitted order per column over the successful rungs
};

// Reruns the pipeline over an M-ladder (J moves with M to keep alignment)
// with per-rung derived seeds and fits observed orders in dt.
inline StudyResult convergence_study(const RunConfig& base, const std::vector<int>& ladder) {
    StudyResult out;
    for (std::size_t r = 0; r < ladder.size(); ++r) {
        RunConfig cfg = base;
        cfg.M = ladder[r];
        cfg.J = ladder[r];
        cfg.seed = detail::splitmix64(base.seed + 1000003ULL * (r + 1));
        StudyRow row;
        row.M = cfg.M;
        row.J = cfg.J;
        row.n_paths = cfg.n_paths;
        row.seed = cfg.seed;
        try {
            const RunResult rr = run_pipeline(cfg);
            if (rr.exit_code == 2) {
                row.status = "non_convergence";
            } else {
                if (rr.report.contains("reference_error"))
                    row.ref_rms = rr.report["reference_error"]["rms"].get<double>();
                if (rr.report.contains("residuals") && rr.report["residuals"].contains("diagonal_dynamics")) {
                    row.diag_dyn_rms = rr.report["residuals"]["diagonal_dynamics"]["rms"].get<double>();
                    row.diag_dyn_cond = rr.report["residuals"]["diagonal_dynamics"]["conditioned_rms"].get<double>();
                }
                if (rr.report.contains("mc")) row.qv_residual = rr.report["mc"]["qv_residual"].get<double>();
                if (rr.report.contains("picard")) row.iterations = static_cast<int>(rr.report["picard"]["iterations"].get<std::size_t>());
            }
        } catch (const ConfigError&) {
            row.status = "config_error";
        } catch (const Error&) {
            row.status = "failed";
        }
        out.rows.push_back(row);
    }

    auto fit_order = [&](auto getter) -> json {
        std::vector<double> lh, le;
        for (const StudyRow& row : out.rows) {
            if (row.status != "ok") continue;
            const double e = getter(row);
            if (!std::isfinite(e) || e <= 0.0) continue;
            lh.push_back(std::log(1.0 / row.M));
            le.push_back(std::log(e));
        }
        if (lh.size() < 2) return nullptr;
        double mh = 0.0, me = 0.0;
        for (std::size_t k = 0; k < lh.size(); ++k) {
            mh += lh[k];
            me += le[k];
        }
        mh /= lh.size();
        me /= le.size();
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < lh.size(); ++k) {
            num += (lh[k] - mh) * (le[k] - me);
            den += (lh[k] - mh) * (lh[k] - mh);
        }
        return den > 0.0 ? json(num / den) : json(nullptr);
    };
    out.orders["ref_rms"] = fit_order([](const StudyRow& r) { return r.ref_rms; });
    out.orders["diag_dyn_rms"] = fit_order([](const StudyRow& r) { return r.diag_dyn_rms; });
    out.orders["diag_dyn_cond"] = fit_order([](const StudyRow& r) { return r.diag_dyn_cond; });
    out.orders["qv_residual"] = fit_order([](const StudyRow& r) { return r.qv_residual; });
    return out;
}

inline void write_study_csv(const StudyResult& st, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream out(dir + "/study.csv", std::ios::binary);
    out << "M,J,n_paths,seed,status,ref_rms,diag_dyn_rms,diag_dyn_cond,qv_residual,iterations\n";
    for (const StudyRow& r : st.rows) {
        out << r.M << ',' << r.J << ',' << r.n_paths << ',' << r.seed << ',' << r.status << ','
            << pipeline_detail::fmt17(r.ref_rms) << ',' << pipeline_detail::fmt17(r.diag_dyn_rms) << ','
            << pipeline_detail::fmt17(r.diag_dyn_cond) << ',' << pipeline_detail::fmt17(r.qv_residual) << ','
            << r.iterations << '\n';
    }
    std::ofstream ord(dir + "/study_orders.csv", std::ios::binary);
    ord << "column,order\n";
    for (auto it = st.orders.begin(); it != st.orders.end(); ++it)
        ord << it.key() << ','
            << (it.value().is_null() ? std::string("") : pipeline_detail::fmt17(it.value().get<double>()))
            << '\n';
}

} // namespace volterra
