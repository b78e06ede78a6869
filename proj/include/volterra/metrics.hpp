#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "volterra/ensemble.hpp"
#include "volterra/errors.hpp"
#include "volterra/fields.hpp"
#include "volterra/problem.hpp"
#include "volterra/volterra_system.hpp"

namespace volterra {

// Monte-Carlo estimators of the function-space norms.  All entries are
// SQUARED norms (the zero field maps to all zeros; scaling a field by
// lambda scales every entry by lambda^2 exactly).
struct NormReport {
    double s2_sup = 0.0;    // diagonal process, S^2
    double h2 = 0.0;        // diagonal integrand, H^2
    double s22_sup = 0.0;   // sup over s of per-slice S^2
    double h22_sup = 0.0;   // sup over s of per-slice H^2
    double diag_h2 = 0.0;   // Z-diagonal H^2, the extra term of the barred norm
    double l2 = 0.0;        // diagonal process, L^2
    double c = 0.0;         // exponential weight used

    double hbar22() const { return h22_sup + diag_h2; }
};

namespace norms {

// one-parameter slice arr[(M+1)][P][k]
inline double s2(const std::vector<double>& a, const TimeGrid& g, int P, int k, double c = 0.0) {
    const int M = g.steps;
    double acc = 0.0;
    for (int p = 0; p < P; ++p) {
        double mx = 0.0;
        for (int i = 0; i <= M; ++i) {
            const double w = std::exp(c * g.nodes[static_cast<std::size_t>(i)]);
            double q = 0.0;
            for (int cc = 0; cc < k; ++cc) {
                const double v = a[(static_cast<std::size_t>(i) * P + p) * k + cc];
                q += v * v;
            }
            mx = std::max(mx, w * q);
        }
        acc += mx;
    }
    return acc / P;
}

inline double l2(const std::vector<double>& a, const TimeGrid& g, int P, int k, double c = 0.0) {
    const int M = g.steps;
    const double dt = g.dt();
    double acc = 0.0;
    for (int p = 0; p < P; ++p)
        for (int i = 0; i < M; ++i) {
            const double w = std::exp(c * g.nodes[static_cast<std::size_t>(i)]);
            double q = 0.0;
            for (int cc = 0; cc < k; ++cc) {
                const double v = a[(static_cast<std::size_t>(i) * P + p) * k + cc];
                q += v * v;
            }
            acc += w * q * dt;
        }
    return acc / P;
}

// E[(int |phi| dr)^2] for a per-(step,path) magnitude table
inline double l12(const std::vector<double>& mags, const TimeGrid& g, int P, double c = 0.0) {
    const int M = g.steps;
    const double dt = g.dt();
    double acc = 0.0;
    for (int p = 0; p < P; ++p) {
        double s = 0.0;
        for (int i = 0; i < M; ++i)
            s += std::exp(0.5 * c * g.nodes[static_cast<std::size_t>(i)]) * mags[static_cast<std::size_t>(i) * P + p] * dt;
        acc += s * s;
    }
    return acc / P;
}

// sigma-weighted H^2 of a z-slice arr[(M+1)][P][n*d]
inline double h2(const std::vector<double>& z, const PathEnsemble& ens, const ProblemSpec& spec, double c = 0.0) {
    const int M = ens.grid.steps, P = ens.n_paths, n = spec.n, m = spec.m, d = spec.d;
    const double dt = ens.grid.dt();
    std::vector<double> sg(static_cast<std::size_t>(n) * m);
    double acc = 0.0;
    for (int p = 0; p < P; ++p) {
        double s = 0.0;
        for (int i = 0; i < M; ++i) {
            spec.sigma(ens.grid.nodes[static_cast<std::size_t>(i)], ens.state(p, i), sg.data());
            const double w = std::exp(c * ens.grid.nodes[static_cast<std::size_t>(i)]);
            const double* zr = z.data() + (static_cast<std::size_t>(i) * P + p) * n * d;
            for (int k = 0; k < m; ++k)
                for (int cc = 0; cc < d; ++cc) {
                    double e = 0.0;
                    for (int a = 0; a < n; ++a) e += sg[static_cast<std::size_t>(a) * m + k] * zr[static_cast<std::size_t>(a) * d + cc];
                    s += w * e * e * dt;
                }
        }
        acc += s;
    }
    return acc / P;
}

} // namespace norms

inline NormReport compute_norms(const FieldSolution& f, const PathEnsemble& ens,
                                const ProblemSpec& spec, double c = 0.0) {
    NormReport r;
    r.c = c;
    const int P = f.n_paths, d = f.d, nd = f.n * f.d;
    r.s2_sup = norms::s2(f.Ydiag, f.tgrid, P, d, c);
    r.h2 = norms::h2(f.Zdiag, ens, spec, c);
    r.l2 = norms::l2(f.Ydiag, f.tgrid, P, d, c);
    const int M = f.M();
    std::vector<double> slice_u(static_cast<std::size_t>(M + 1) * P * d);
    std::vector<double> slice_v(static_cast<std::size_t>(M + 1) * P * nd);
    for (int j = 0; j <= f.J(); ++j) {
        std::copy(f.U.begin() + f.uoff(j, 0, 0), f.U.begin() + f.uoff(j, 0, 0) + slice_u.size(), slice_u.begin());
        std::copy(f.V.begin() + f.voff(j, 0, 0), f.V.begin() + f.voff(j, 0, 0) + slice_v.size(), slice_v.begin());
        r.s22_sup = std::max(r.s22_sup, norms::s2(slice_u, f.tgrid, P, d, c));
        r.h22_sup = std::max(r.h22_sup, norms::h2(slice_v, ens, spec, c));
    }
    const std::vector<double>& zd = f.simplified ? f.Zdiag : f.Vdiag_reconstructed;
    r.diag_h2 = norms::h2(zd, ens, spec, c);
    return r;
}

struct AprioriReport {
    double i0_sq = 0.0;
    double sol_sq = 0.0;
    std::optional<double> ratio;  // empty on the 0/0 sentinel
    bool anomaly = false;         // zero data but nonzero solution norm
};

// Proposition-6.1 style diagnostic: squared data norm I0^2 assembled from the
// free term, its s-derivative and the generators evaluated at zero arguments;
// the constant C is not quantified, so only the ratio is reported.
inline AprioriReport apriori_report(const FieldSolution& f, const ProblemSpec& spec_in,
                                    const PathEnsemble& ens) {
    const ProblemSpec spec = with_drift_folded(spec_in);
    const int P = f.n_paths, d = f.d, M = f.M(), J = f.J();
    AprioriReport rep;

    std::vector<double> buf(static_cast<std::size_t>(d));
    std::vector<double> zeros(static_cast<std::size_t>(spec.n) * d, 0.0);
    std::vector<double> zd(static_cast<std::size_t>(d), 0.0);

    // ||xi(T)||_{L^2}^2 and sup_s per-slice L^2 of xi, ds_xi
    double xiT = 0.0, xiSup = 0.0, dxiSup = 0.0;
    for (int j = 0; j <= J; ++j) {
        const double s = f.sgrid.nodes[static_cast<std::size_t>(j)];
        double a = 0.0, b = 0.0;
        for (int p = 0; p < P; ++p) {
            spec.xi(s, ens.state(p, M), buf.data());
            for (int c = 0; c < d; ++c) a += buf[static_cast<std::size_t>(c)] * buf[static_cast<std::size_t>(c)];
            if (spec.ds_xi) {
                spec.ds_xi(s, ens.state(p, M), buf.data());
                for (int c = 0; c < d; ++c) b += buf[static_cast<std::size_t>(c)] * buf[static_cast<std::size_t>(c)];
            }
        }
        a /= P;
        b /= P;
        xiSup = std::max(xiSup, a);
        dxiSup = std::max(dxiSup, b);
        if (j == J) xiT = a;
    }

    // generators at the zero arguments
    std::vector<double> mag(static_cast<std::size_t>(M + 1) * P, 0.0);
    auto l12_of = [&](const std::function<void(double t, const double* x, double* out)>& fn) {
        for (int i = 0; i < M; ++i)
            for (int p = 0; p < P; ++p) {
                fn(f.tgrid.nodes[static_cast<std::size_t>(i)], ens.state(p, i), buf.data());
                double q = 0.0;
                for (int c = 0; c < d; ++c) q += buf[static_cast<std::size_t>(c)] * buf[static_cast<std::size_t>(c)];
                mag[static_cast<std::size_t>(i) * P + p] = std::sqrt(q);
            }
        return norms::l12(mag, f.tgrid, P, 0.0);
    };

    const double htilde = l12_of([&](double t, const double* x, double* o) {
        spec.f(t, t, x, zd.data(), zeros.data(), zd.data(), zeros.data(), o);
    });
    double gSup = 0.0, dgSup = 0.0;
    for (int j = 0; j <= J; ++j) {
        const double s = f.sgrid.nodes[static_cast<std::size_t>(j)];
        gSup = std::max(gSup, l12_of([&](double t, const double* x, double* o) {
                            spec.f(s, t, x, zd.data(), zeros.data(), zd.data(), zeros.data(), o);
                        }));
        if (spec.ds_f)
            dgSup = std::max(dgSup, l12_of([&](double t, const double* x, double* o) {
                                 spec.ds_f(s, t, x, zd.data(), zeros.data(), zd.data(), zeros.data(), o);
                             }));
    }
    rep.i0_sq = xiT + xiSup + dxiSup + htilde + gSup + dgSup;

    NormReport nr = compute_norms(f, ens, spec);
    rep.sol_sq = nr.s2_sup + nr.h2 + nr.s22_sup + nr.hbar22();
    if (!f.simplified) {
        std::vector<double> slice(static_cast<std::size_t>(M + 1) * P * d);
        double dus = 0.0, dvs = 0.0;
        std::vector<double> zslice(static_cast<std::size_t>(M + 1) * P * f.n * d);
        for (int j = 0; j <= J; ++j) {
            std::copy(f.dU.begin() + f.uoff(j, 0, 0), f.dU.begin() + f.uoff(j, 0, 0) + slice.size(), slice.begin());
            std::copy(f.dV.begin() + f.voff(j, 0, 0), f.dV.begin() + f.voff(j, 0, 0) + zslice.size(), zslice.begin());
            dus = std::max(dus, norms::s2(slice, f.tgrid, P, d));
            dvs = std::max(dvs, norms::h2(zslice, ens, spec));
        }
        rep.sol_sq += dus + dvs;
    }

    const double floor = 1e-300;
    if (rep.i0_sq > floor)
        rep.ratio = rep.sol_sq / rep.i0_sq;
    else if (rep.sol_sq > 1e-20)
        rep.anomaly = true;  // zero data cannot carry a nonzero solution
    return rep;
}

struct StabilityRow {
    double eps = 0.0;
    double diff_norm = 0.0;  // not squared
    bool converged = false;
};

// Solves the system for xi and xi + eps * eta under common random numbers and
// reports the solution-difference norms.
inline std::vector<StabilityRow> stability_experiment(
    const ProblemSpec& base, const DataFn& eta, const DataFn& ds_eta,
    const std::vector<double>& eps_list, const PathEnsemble& ens,
    const TimeGrid& tgrid, const ParamGrid& sgrid, const RegressionBasis& basis,
    const PicardOptions& opts, bool simplified = false) {
    auto solve = [&](const ProblemSpec& s) {
        return simplified ? solve_system_simplified(s, ens, tgrid, sgrid, basis, opts)
                          : solve_system(s, ens, tgrid, sgrid, basis, opts);
    };
    FieldSolution ref = solve(base);
    std::vector<StabilityRow> rows;
    for (double eps : eps_list) {
        StabilityRow row;
        row.eps = eps;
        ProblemSpec pert = base;
        DataFn xi0 = base.xi, dxi0 = base.ds_xi;
        const int d = base.d;
        pert.xi = [xi0, eta, eps, d](double s, const double* x, double* o) {
            xi0(s, x, o);
            std::vector<double> e(static_cast<std::size_t>(d));
            eta(s, x, e.data());
            for (int c = 0; c < d; ++c) o[c] += eps * e[static_cast<std::size_t>(c)];
        };
        if (dxi0 && ds_eta)
            pert.ds_xi = [dxi0, ds_eta, eps, d](double s, const double* x, double* o) {
                dxi0(s, x, o);
                std::vector<double> e(static_cast<std::size_t>(d));
                ds_eta(s, x, e.data());
                for (int c = 0; c < d; ++c) o[c] += eps * e[static_cast<std::size_t>(c)];
            };
        try {
            FieldSolution per = solve(pert);
            double acc = detail::s2_sq(detail::diff(per.Ydiag, ref.Ydiag), tgrid, ref.n_paths, ref.d) +
                         detail::h2_sq(detail::diff(per.Zdiag, ref.Zdiag), ens, base);
            std::vector<double> du = detail::diff(per.U, ref.U);
            std::vector<double> dv = detail::diff(per.V, ref.V);
            const int P = ref.n_paths;
            std::vector<double> su(static_cast<std::size_t>(tgrid.steps + 1) * P * base.d);
            std::vector<double> sv(static_cast<std::size_t>(tgrid.steps + 1) * P * base.n * base.d);
            double s22 = 0.0, h22 = 0.0;
            for (int j = 0; j <= ref.J(); ++j) {
                std::copy(du.begin() + ref.uoff(j, 0, 0), du.begin() + ref.uoff(j, 0, 0) + su.size(), su.begin());
                std::copy(dv.begin() + ref.voff(j, 0, 0), dv.begin() + ref.voff(j, 0, 0) + sv.size(), sv.begin());
                s22 = std::max(s22, detail::s2_sq(su, tgrid, P, base.d));
                h22 = std::max(h22, detail::h2_sq(sv, ens, base));
            }
            row.diff_norm = std::sqrt(acc + s22 + h22);
            row.converged = true;
        } catch (const NonConvergenceError&) {
            row.converged = false;
        }
        rows.push_back(row);
    }
    return rows;
}

} // namespace volterra
