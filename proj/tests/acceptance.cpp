// Acceptance gate: one line per criterion, nonzero exit if any fails.
// Oracle values are analytic or computed by the independent fine-grid
// steppers coded inline; tolerances are fixed here, not tuned at runtime.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "volterra/pipeline.hpp"

using namespace volterra;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what) {
    std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion, what.c_str());
    if (!pass) ++g_failures;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

struct Solved {
    ProblemSpec spec;
    TimeGrid tgrid;
    ParamGrid sgrid;
    PathEnsemble ens;
    std::shared_ptr<const FieldSolution> field;
};

Solved solve_text(const std::string& cfg_text) {
    const RunConfig cfg = parse_config_text(cfg_text);
    Solved s;
    s.spec = to_problem_spec(cfg);
    s.tgrid = TimeGrid::uniform(cfg.T, cfg.M);
    s.sgrid = ParamGrid::uniform(cfg.T, cfg.J);
    s.ens = simulate_paths(s.spec, s.tgrid, cfg.n_paths, cfg.seed);
    const PicardOptions opts{cfg.tol, cfg.max_iter, cfg.theta};
    s.field = std::make_shared<const FieldSolution>(
        cfg.solver == "simplified"
            ? solve_system_simplified(s.spec, s.ens, s.tgrid, s.sgrid, RegressionBasis{cfg.degree}, opts)
            : solve_system(s.spec, s.ens, s.tgrid, s.sgrid, RegressionBasis{cfg.degree}, opts));
    return s;
}

// independent oracle for criterion 2: fine-grid RK4 of D' = -D, D(T) = 1
double volterra_ode_oracle() {
    const int N = 4000;
    const double h = 1.0 / N;
    double D = 1.0;
    for (int k = 0; k < N; ++k) {
        const double k1 = D, k2 = D + 0.5 * h * k1, k3 = D + 0.5 * h * k2, k4 = D + h * k3;
        D += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return D;
}

void criterion_1_zero_exactness() {
    const Solved s = solve_text("[problem]\npreset = zero\n[grids]\nM = 50\nJ = 50\n[mc]\nn_paths = 64\n");
    double mx = 0.0;
    for (const auto* arr : {&s.field->U, &s.field->V, &s.field->dU, &s.field->dV, &s.field->Ydiag,
                            &s.field->Zdiag, &s.field->Vdiag_reconstructed})
        for (double v : *arr) mx = std::max(mx, std::abs(v));
    const NormReport n = compute_norms(*s.field, s.ens, s.spec);
    for (double v : {n.s2_sup, n.h2, n.s22_sup, n.h22_sup, n.diag_h2, n.l2}) mx = std::max(mx, v);
    const ResidualReport dd = check_diagonal_dynamics(*s.field, s.spec, s.ens, RegressionBasis{2});
    const ResidualReport mp = check_M_property(extract_bsvie(s.field, s.ens, s.spec), s.ens);
    const ConstraintDReport dc = check_constraint_D(*s.field, s.ens, s.spec);
    mx = std::max({mx, dd.rms, mp.max_over_index, dc.max_U, dc.max_V,
                   quadratic_variation_check(s.ens, s.spec)});
    const bool one_iter = s.field->picard_trace.size() == 1;
    report(1, mx <= 1e-14 && one_iter,
           "zero data: max magnitude " + fmt(mx) + ", picard iterations " +
               std::to_string(s.field->picard_trace.size()));
}

void criterion_2_volterra_oracle() {
    const double oracle = volterra_ode_oracle();
    const Solved s = solve_text("[problem]\npreset = exp_diag\n");  // T=1, M=J=200
    double worst = 0.0;
    for (int j = 0; j <= s.field->J(); ++j) {
        double mean = 0.0;
        for (int p = 0; p < s.field->n_paths; ++p) mean += *s.field->u_at(j, 0, p);
        mean /= s.field->n_paths;
        worst = std::max(worst, std::abs(mean - oracle));
    }
    const RunConfig study_cfg = parse_config_text(
        "[problem]\npreset = exp_diag\n[mc]\nn_paths = 64\n[output]\nreference = exp(1-t)\n");
    const StudyResult st = convergence_study(study_cfg, {50, 100, 200});
    const bool have_order = !st.orders["ref_rms"].is_null();
    const double order = have_order ? st.orders["ref_rms"].get<double>() : 0.0;
    report(2, worst < 1e-3 && have_order && order >= 0.8 && order <= 1.3,
           "Y_0^s vs e: max error " + fmt(worst) + " (tol 1e-3), fitted dt-order " + fmt(order) +
               " in [0.8, 1.3]");
}

void criterion_3_conditional_expectation() {
    const Solved s = solve_text("[problem]\npreset = brownian_identity\n");  // M=J=50, 1e4 paths
    double acc = 0.0, zacc = 0.0;
    long cnt = 0, zcnt = 0;
    for (int j = 0; j <= s.field->J(); ++j)
        for (int i = 0; i <= s.field->M(); ++i)
            for (int p = 0; p < s.field->n_paths; ++p) {
                const double e = *s.field->u_at(j, i, p) -
                                 s.sgrid.nodes[static_cast<std::size_t>(j)] * s.ens.state(p, i)[0];
                acc += e * e;
                ++cnt;
            }
    for (int i = 0; i < s.field->M(); ++i)
        for (int p = 0; p < s.field->n_paths; ++p) {
            const double e = s.field->Zdiag[s.field->zoff(i, p)] - s.tgrid.nodes[static_cast<std::size_t>(i)];
            zacc += e * e;
            ++zcnt;
        }
    const double rmsU = std::sqrt(acc / cnt), rmsZ = std::sqrt(zacc / zcnt);
    report(3, rmsU < 0.05 && rmsZ < 0.1,
           "U vs s X rms " + fmt(rmsU) + " (tol 0.05), Zdiag vs t rms " + fmt(rmsZ) + " (tol 0.1)");
}

void criterion_4_diagonal_dynamics() {
    // presets 1-3 at their scale, then the M-doubling shrink
    bool pass = true;
    std::string what;

    const Solved z = solve_text("[problem]\npreset = zero\n[grids]\nM = 40\nJ = 40\n[mc]\nn_paths = 32\n");
    const double rz = check_diagonal_dynamics(*z.field, z.spec, z.ens, RegressionBasis{2}).conditioned_rms;
    pass = pass && rz < 1e-3;

    auto exp_at = [&](int M) {
        const Solved e = solve_text("[problem]\npreset = exp_diag\n[grids]\nM = " + std::to_string(M) +
                                    "\nJ = " + std::to_string(M) + "\n[mc]\nn_paths = 32\n");
        return check_diagonal_dynamics(*e.field, e.spec, e.ens, RegressionBasis{2}).conditioned_rms;
    };
    const double re100 = exp_at(100), re200 = exp_at(200);
    pass = pass && re100 < 1e-3 && re100 / re200 >= 1.7;

    auto brw_at = [&](int M) {
        const Solved b = solve_text("[problem]\npreset = brownian_identity\n[grids]\nM = " + std::to_string(M) +
                                    "\nJ = " + std::to_string(M) + "\n[mc]\nn_paths = 2000\n");
        return check_diagonal_dynamics(*b.field, b.spec, b.ens, RegressionBasis{2}).conditioned_rms;
    };
    const double rb50 = brw_at(50), rb100 = brw_at(100);
    pass = pass && rb50 < 0.05 && rb50 / rb100 >= 1.7;

    what = "conditioned residuals: zero " + fmt(rz) + ", exp " + fmt(re100) + " shrink x" +
           fmt(re100 / re200) + ", brownian " + fmt(rb50) + " shrink x" + fmt(rb50 / rb100);
    report(4, pass, what);
}

void criterion_5_constraint_D() {
    auto max_res = [&](const std::string& xi, const std::string& dsxi, int MJ) {
        const Solved s = solve_text("[problem]\nf = 0\nxi = " + xi + "\nds_xi = " + dsxi +
                                    "\nsigma = 0\n[grids]\nM = " + std::to_string(MJ) + "\nJ = " +
                                    std::to_string(MJ) + "\n[mc]\nn_paths = 8\n");
        const ConstraintDReport r = check_constraint_D(*s.field, s.ens, s.spec);
        return std::max(r.max_U, r.max_V);
    };
    // xi = s^2 per the gate; its trapezoid integrand is linear in s, so both
    // rungs sit at the exactness floor and the shrink ratio is vacuous there
    const double r40 = max_res("s^2", "2*s", 40);
    const double r80 = max_res("s^2", "2*s", 80);
    const bool quad_ok = (r40 <= 1e-12 && r80 <= 1e-12) || (r40 / r80 >= 3.5);
    // curvature case demonstrates the genuine second-order shrink
    const double c40 = max_res("s^3", "3*s^2", 40);
    const double c80 = max_res("s^3", "3*s^2", 80);
    const bool cubic_ok = c40 / c80 >= 3.5;
    const double rconst = max_res("1", "0", 40);
    report(5, quad_ok && cubic_ok && rconst <= 1e-12,
           "s^2 residuals " + fmt(r40) + "/" + fmt(r80) + " (floor), s^3 shrink x" + fmt(c40 / c80) +
               " (>= 3.5), s-independent " + fmt(rconst));
}

void criterion_6_m_property() {
    const Solved b = solve_text("[problem]\npreset = brownian_identity\n");
    const double rb = check_M_property(extract_bsvie(b.field, b.ens, b.spec), b.ens).rms;
    const Solved e = solve_text("[problem]\npreset = exp_diag\n[grids]\nM = 50\nJ = 50\n[mc]\nn_paths = 16\n");
    const double re = check_M_property(extract_bsvie(e.field, e.ens, e.spec), e.ens).max_over_index;
    const Solved z = solve_text("[problem]\npreset = zero\n[grids]\nM = 30\nJ = 30\n[mc]\nn_paths = 16\n");
    const double rz = check_M_property(extract_bsvie(z.field, z.ens, z.spec), z.ens).max_over_index;
    report(6, rb < 0.05 && re < 1e-12 && rz < 1e-12,
           "brownian rms " + fmt(rb) + " (tol 0.05), deterministic max " + fmt(std::max(re, rz)) +
               " (tol 1e-12)");
}

void criterion_7_identification() {
    // tol-scale identification errors at the fixed point
    const double tol = 1e-6;
    const Solved e = solve_text("[problem]\npreset = exp_diag\n[grids]\nM = 100\nJ = 100\n[mc]\nn_paths = 32\n");
    const BsvieSolution se = extract_bsvie(e.field, e.ens, e.spec);
    const double scale = 1.0 + std::exp(1.0);  // relative stopping magnitude
    const bool ident_ok = se.ident_err_Y <= 5 * tol * scale && se.ident_err_Z <= 5 * tol * scale;

    // simplified and full solvers on a diagonal-free spec, shared seed
    const std::string base =
        "[problem]\npreset = linear_z\n[grids]\nM = 25\nJ = 25\n[mc]\nn_paths = 800\n[picard]\ntol = 1e-13\n";
    const Solved full = solve_text(base);
    const Solved simp = solve_text(base + "solver = simplified\n");
    double sup = 0.0;
    for (std::size_t k = 0; k < full.field->U.size(); ++k)
        sup = std::max(sup, std::abs(full.field->U[k] - simp.field->U[k]));
    for (std::size_t k = 0; k < full.field->V.size(); ++k)
        sup = std::max(sup, std::abs(full.field->V[k] - simp.field->V[k]));
    report(7, ident_ok && sup < 1e-10,
           "identification errs (" + fmt(se.ident_err_Y) + ", " + fmt(se.ident_err_Z) + ") <= 5 tol, " +
               "full-vs-simplified sup " + fmt(sup) + " (tol 1e-10)");
}

void criterion_8_contraction() {
    auto decays = [](const std::vector<double>& trace) {
        for (std::size_t k = 1; k + 1 < trace.size(); ++k)
            if (trace[k] > 1e-14 && trace[k + 1] > 0.9 * trace[k]) return false;
        return true;
    };
    const Solved a = solve_text(
        "[problem]\nf = u\nxi = 1\nsigma = 0\n[grids]\nT = 0.25\nM = 25\nJ = 25\n[mc]\nn_paths = 16\n");
    const Solved b = solve_text(
        "[problem]\nf = sin(u)\ndy_f = 0\nds_f = 0\ndz_f = 0\nxi = x\nds_xi = 0\nsigma = 1\n"
        "[grids]\nT = 0.25\nM = 25\nJ = 25\n[mc]\nn_paths = 2000\n");
    double worst = 0.0;
    for (const auto* tr : {&a.field->picard_trace, &b.field->picard_trace})
        for (std::size_t k = 1; k + 1 < tr->size(); ++k)
            if ((*tr)[k] > 1e-14) worst = std::max(worst, (*tr)[k + 1] / (*tr)[k]);
    report(8, decays(a.field->picard_trace) && decays(b.field->picard_trace),
           "T=0.25, L=1 presets: worst successive ratio " + fmt(worst) + " (bound 0.9)");
}

void criterion_9_feynman_kac() {
    auto fk_of = [](const std::string& preset) {
        const RunConfig cfg =
            parse_config_text("[problem]\npreset = " + preset + "\n[grids]\ndx = 0.05\n[pde]\nenable = on\n");
        const ProblemSpec spec = to_problem_spec(cfg);
        const TimeGrid tg = TimeGrid::uniform(cfg.T, cfg.M);
        const ParamGrid sg = ParamGrid::uniform(cfg.T, cfg.J);
        const PathEnsemble ens = simulate_paths(spec, tg, cfg.n_paths, cfg.seed);
        auto field = std::make_shared<const FieldSolution>(
            solve_system(spec, ens, tg, sg, RegressionBasis{cfg.degree},
                         PicardOptions{cfg.tol, cfg.max_iter, cfg.theta}));
        const PdeSolution pde = solve_representation_pde(spec, tg, sg, cfg.xgrid(), cfg.substeps);
        return feynman_kac_check(pde, extract_bsvie(field, ens, spec), ens);
    };
    const FeynmanKacReport fb = fk_of("brownian_identity");
    const FeynmanKacReport fs = fk_of("sin_nonlinear");
    report(9, fb.rms_Y < 0.05 && fs.rms_Y < 0.05,
           "MC-vs-PDE rms: brownian " + fmt(fb.rms_Y) + ", sin " + fmt(fs.rms_Y) +
               " (tol 0.05; exit fractions " + fmt(fb.exit_fraction) + ", " + fmt(fs.exit_fraction) + ")");
}

void criterion_10_equivalence() {
    auto eq_of = [](const std::string& xi, const std::string& dsxi, int MJ) {
        const RunConfig cfg = parse_config_text(
            "[problem]\nfbar = 0\ncontrol = 0\nxi = " + xi + "\nds_xi = " + dsxi +
            "\nsigma = 1\n[grids]\nM = " + std::to_string(MJ) + "\nJ = " + std::to_string(MJ) + "\n");
        const HjbSpec hjb = to_hjb_spec(cfg);
        const TimeGrid tg = TimeGrid::uniform(cfg.T, cfg.M);
        const ParamGrid sg = ParamGrid::uniform(cfg.T, cfg.J);
        const XGrid xg = cfg.xgrid();
        return check_equivalence(solve_hjb_wy(hjb, tg, sg, xg), solve_hjb_bkm(hjb, tg, sg, xg), hjb);
    };
    const EquivalenceReport flat = eq_of("cos(x)", "0", 40);
    const EquivalenceReport c50 = eq_of("s*cos(x)", "cos(x)", 50);
    const EquivalenceReport c100 = eq_of("s*cos(x)", "cos(x)", 100);
    const double shrink = c50.sup_value_diff / c100.sup_value_diff;
    const double rshrink = c50.sup_bkm_residual / c100.sup_bkm_residual;
    report(10, flat.sup_value_diff < 1e-12 && shrink >= 1.7 && rshrink >= 1.7,
           "s-independent sup " + fmt(flat.sup_value_diff) + " (tol 1e-12), joint-doubling shrink x" +
               fmt(shrink) + ", residual shrink x" + fmt(rshrink) + " (>= 1.7)");
}

void criterion_11_stability() {
    const DataFn eta = [](double, const double*, double* o) { o[0] = 1.0; };
    const DataFn ds_eta = [](double, const double*, double* o) { o[0] = 0.0; };
    // linear preset: exact ratio 10 across {0.1, 0.01}
    const RunConfig lc = parse_config_text(
        "[problem]\npreset = brownian_identity\n[grids]\nM = 20\nJ = 20\n[mc]\nn_paths = 2000\n");
    const ProblemSpec lspec = to_problem_spec(lc);
    const TimeGrid ltg = TimeGrid::uniform(lc.T, lc.M);
    const ParamGrid lsg = ParamGrid::uniform(lc.T, lc.J);
    const PathEnsemble lens = simulate_paths(lspec, ltg, lc.n_paths, lc.seed);
    const auto lrows = stability_experiment(lspec, eta, ds_eta, {0.1, 0.01}, lens, ltg, lsg,
                                            RegressionBasis{2}, PicardOptions{});
    const double lratio = lrows[0].diff_norm / lrows[1].diff_norm;

    const RunConfig sc = parse_config_text(
        "[problem]\npreset = sin_nonlinear\n[grids]\nM = 20\nJ = 20\n[mc]\nn_paths = 2000\n");
    const ProblemSpec sspec = to_problem_spec(sc);
    const TimeGrid stg = TimeGrid::uniform(sc.T, sc.M);
    const ParamGrid ssg = ParamGrid::uniform(sc.T, sc.J);
    const PathEnsemble sens = simulate_paths(sspec, stg, sc.n_paths, sc.seed);
    const auto srows = stability_experiment(sspec, eta, ds_eta, {0.1, 0.01, 0.001}, sens, stg, ssg,
                                            RegressionBasis{2}, PicardOptions{});
    const double r1 = srows[0].diff_norm / srows[1].diff_norm;
    const double r2 = srows[1].diff_norm / srows[2].diff_norm;
    report(11, std::abs(lratio - 10.0) < 1e-6 && r1 >= 5.0 && r1 <= 20.0 && r2 >= 5.0 && r2 <= 20.0,
           "linear ratio " + fmt(lratio) + " (10 +- 1e-6), sin ratios " + fmt(r1) + ", " + fmt(r2) +
               " in [5, 20]");
}

void criterion_12_nabla_assembly() {
    ProblemSpec s;
    s.n = s.m = s.d = 1;
    s.x0 = {0.0};
    s.sigma = [](double, const double*, double* o) { o[0] = 1.0; };
    s.xi = [](double, const double*, double* o) { o[0] = 0.0; };
    s.f = [](double sv, double t, const double* x, const double* y, const double* z, const double* u,
             const double* v, double* o) {
        o[0] = std::sin(sv * y[0]) + sv * sv * z[0] + 0.25 * std::exp(z[0]) * std::cos(sv) + t * x[0] +
               0.1 * u[0] * v[0];
    };
    s.ds_f = [](double sv, double, const double*, const double* y, const double* z, const double*,
                const double*, double* o) {
        o[0] = y[0] * std::cos(sv * y[0]) + 2.0 * sv * z[0] - 0.25 * std::exp(z[0]) * std::sin(sv);
    };
    s.dy_f = [](double sv, double, const double*, const double* y, const double*, const double*,
                const double*, double* o) { o[0] = sv * std::cos(sv * y[0]); };
    s.dz_f = {[](double sv, double, const double*, const double*, const double* z, const double*,
                 const double*, double* o) { o[0] = sv * sv + 0.25 * std::exp(z[0]) * std::cos(sv); }};

    int ok = 0;
    const int trials = 100;
    for (int k = 0; k < trials; ++k) {
        const double s0 = 0.2 + 0.6 * detail::to_unit(detail::mix(77, k, 0, 0));
        const double y0 = -1.0 + 2.0 * detail::to_unit(detail::mix(77, k, 1, 0));
        const double z0 = -1.0 + 2.0 * detail::to_unit(detail::mix(77, k, 2, 0));
        const double up = -2.0 + 4.0 * detail::to_unit(detail::mix(77, k, 3, 0));
        const double vp = -2.0 + 4.0 * detail::to_unit(detail::mix(77, k, 4, 0));
        const double u = detail::to_unit(detail::mix(77, k, 5, 0));
        const double v = detail::to_unit(detail::mix(77, k, 6, 0));
        const double x = 0.4, t = 0.3;
        double exact = 0.0;
        assemble_nabla_f(s, s0, t, &x, &up, &vp, &y0, &z0, &u, &v, &exact);
        auto phi = [&](double sv) {
            const double y = y0 + up * (sv - s0), z = z0 + vp * (sv - s0);
            double o;
            s.f(sv, t, &x, &y, &z, &u, &v, &o);
            return o;
        };
        auto err = [&](double h) { return std::abs((phi(s0 + h) - phi(s0 - h)) / (2 * h) - exact); };
        const double e3 = err(1e-3), e4 = err(1e-4);
        if ((e3 < 1e-12 && e4 < 1e-12) || std::log10(std::max(e3, 1e-300) / std::max(e4, 1e-300)) >= 1.8)
            ++ok;
    }
    report(12, ok == trials,
           "finite-difference agreement on " + std::to_string(ok) + "/100 random curves at order >= 1.8");
}

void criterion_13_reproducibility() {
    const std::string text =
        "[problem]\npreset = brownian_identity\n[grids]\nM = 15\nJ = 15\n[mc]\nn_paths = 500\n"
        "[pde]\nenable = on\n[output]\ndirectory = accept_repro\n";
    const RunConfig cfg1 = parse_config_text(text);
    const RunConfig cfg2 = parse_config_text(text);
    const RunResult a = run_pipeline(cfg1);
    const RunResult b = run_pipeline(cfg2);
    write_report_files(a, cfg1, "accept_repro_a");
    write_report_files(b, cfg2, "accept_repro_b");
    auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        std::ostringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    const std::string ra = slurp("accept_repro_a/report.json");
    const std::string rb = slurp("accept_repro_b/report.json");
    report(13, !ra.empty() && ra == rb,
           std::string("two runs produce byte-identical report.json (") +
               std::to_string(ra.size()) + " bytes)");
    std::remove("accept_repro_a/report.json");
    std::remove("accept_repro_a/meta.json");
    std::remove("accept_repro_b/report.json");
    std::remove("accept_repro_b/meta.json");
}

} // namespace

int main() {
    try {
        criterion_1_zero_exactness();
        criterion_2_volterra_oracle();
        criterion_3_conditional_expectation();
        criterion_4_diagonal_dynamics();
        criterion_5_constraint_D();
        criterion_6_m_property();
        criterion_7_identification();
        criterion_8_contraction();
        criterion_9_feynman_kac();
        criterion_10_equivalence();
        criterion_11_stability();
        criterion_12_nabla_assembly();
        criterion_13_reproducibility();
    } catch (const std::exception& e) {
        std::cerr << "[FAIL] acceptance aborted: " << e.what() << "\n";
        return 1;
    }
    if (g_failures) {
        std::cout << g_failures << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all 13 criteria passed\n";
    return 0;
}
