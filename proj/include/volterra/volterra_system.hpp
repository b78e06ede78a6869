#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "volterra/bsde_engine.hpp"
#include "volterra/ensemble.hpp"
#include "volterra/errors.hpp"
#include "volterra/fields.hpp"
#include "volterra/grids.hpp"
#include "volterra/problem.hpp"

namespace volterra {

struct PicardOptions {
    double tol = 1e-6;
    int max_iter = 50;
    double theta = 0.55;  // generator quadrature weight of the backward engine
};

// Diagonal state carried between Picard iterations; only (Ydiag, Zdiag) feed
// the frozen coupling slots, the rest rides along for inspection.
struct DiagonalGuess {
    std::vector<double> Ydiag;  // (M+1)P d
    std::vector<double> Zdiag;  // (M+1)P nd
    std::vector<double> Udiag, Vdiag, dUdiag;

    static DiagonalGuess zero(const TimeGrid& g, int P, int n, int d) {
        DiagonalGuess z;
        z.Ydiag.assign(static_cast<std::size_t>(g.steps + 1) * P * d, 0.0);
        z.Zdiag.assign(static_cast<std::size_t>(g.steps + 1) * P * n * d, 0.0);
        z.Udiag = z.Ydiag;
        z.dUdiag = z.Ydiag;
        z.Vdiag = z.Zdiag;
        return z;
    }
};

namespace detail {

// discrete S^2 (mean over paths of max over t) and H^2 (mean of the
// sigma-weighted quadratic variation) of one-parameter arrays; squared values
inline double s2_sq(const std::vector<double>& a, const TimeGrid& g, int P, int d) {
    const int M = g.steps;
    double acc = 0.0;
    for (int p = 0; p < P; ++p) {
        double mx = 0.0;
        for (int i = 0; i <= M; ++i) {
            double q = 0.0;
            for (int c = 0; c < d; ++c) {
                const double v = a[(static_cast<std::size_t>(i) * P + p) * d + c];
                q += v * v;
            }
            mx = std::max(mx, q);
        }
        acc += mx;
    }
    return acc / P;
}

inline double h2_sq(const std::vector<double>& z, const PathEnsemble& ens, const ProblemSpec& spec) {
    const int M = ens.grid.steps, P = ens.n_paths, n = spec.n, m = spec.m, d = spec.d;
    const double dt = ens.grid.dt();
    std::vector<double> sg(static_cast<std::size_t>(n) * m);
    double acc = 0.0;
    for (int p = 0; p < P; ++p) {
        double s = 0.0;
        for (int i = 0; i < M; ++i) {
            spec.sigma(ens.grid.nodes[static_cast<std::size_t>(i)], ens.state(p, i), sg.data());
            const double* zr = z.data() + (static_cast<std::size_t>(i) * P + p) * n * d;
            for (int k = 0; k < m; ++k)
                for (int c = 0; c < d; ++c) {
                    double e = 0.0;
                    for (int a = 0; a < n; ++a) e += sg[static_cast<std::size_t>(a) * m + k] * zr[static_cast<std::size_t>(a) * d + c];
                    s += e * e * dt;
                }
        }
        acc += s;
    }
    return acc / P;
}

inline std::vector<double> diff(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> r(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) r[k] = a[k] - b[k];
    return r;
}

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double a = 0.0;
    for (double x : v) a += x;
    return a / static_cast<double>(v.size());
}

} // namespace detail

// (D)-constraint antiderivative: Vdiag at t_i is V^{s_J}(t_i) minus the
// trapezoid integral of dV^{r}(t_i) over r in [t_i, T] on the s-grid.
inline std::vector<double> reconstruct_diagonal_V(const FieldSolution& field) {
    require_matching(field.sgrid, field.tgrid, "reconstruct_diagonal_V");
    if (field.dV.empty()) throw StateError("reconstruct_diagonal_V: derivative family not populated");
    const int M = field.M(), J = field.J(), P = field.n_paths, nd = field.n * field.d;
    const double ds = field.sgrid.ds();
    std::vector<double> out(static_cast<std::size_t>(M + 1) * P * nd, 0.0);
    for (int i = 0; i <= M; ++i) {
        for (int p = 0; p < P; ++p) {
            double* o = out.data() + (static_cast<std::size_t>(i) * P + p) * nd;
            const double* vT = field.v_at(J, i, p);
            for (int k = 0; k < nd; ++k) o[k] = vT[k];
            if (i == J) continue;  // empty integration range at s = T
            for (int r = i; r <= J; ++r) {
                const double w = (r == i || r == J) ? 0.5 * ds : ds;
                const double* dv = field.dv_at(r, i, p);
                for (int k = 0; k < nd; ++k) o[k] -= w * dv[k];
            }
        }
    }
    return out;
}

// One application of the contraction map: solve the family and (for the full
// system) the derivative family against the frozen diagonal guess, read the
// new diagonals, reconstruct the V-diagonal, then solve the diagonal
// equation with generator f(t,t,...) - dUdiag.
inline FieldSolution picard_step(const ProblemSpec& spec, const PathEnsemble& ens,
                                 const TimeGrid& tgrid, const ParamGrid& sgrid,
                                 const DiagonalGuess& guess, const RegressionBasis& basis,
                                 const PicardOptions& opts, bool simplified,
                                 const BasisCache* cache = nullptr) {
    require_matching(sgrid, tgrid, simplified ? "solve_system_simplified" : "solve_system");
    const int M = tgrid.steps, J = sgrid.segments(), P = ens.n_paths, n = spec.n, d = spec.d;
    const int nd = n * d;
    if (!simplified && !spec.has_nabla_data())
        throw ConfigError("solve_system: full path needs ds_f, dy_f and dz_f (or use the simplified solver)");

    FieldSolution out;
    out.tgrid = tgrid;
    out.sgrid = sgrid;
    out.n_paths = P;
    out.n = n;
    out.d = d;
    out.simplified = simplified;
    out.U.assign(static_cast<std::size_t>(J + 1) * (M + 1) * P * d, 0.0);
    out.V.assign(static_cast<std::size_t>(J + 1) * (M + 1) * P * nd, 0.0);
    if (!simplified) {
        out.dU.assign(out.U.size(), 0.0);
        out.dV.assign(out.V.size(), 0.0);
    }

    std::vector<double> terminal(static_cast<std::size_t>(P) * d);
    double fam_mean = 0.0, fam_cond = 0.0, der_mean = 0.0, der_cond = 0.0;
    int fam_cnt = 0, der_cnt = 0;

    // (a) family slices, coupling (u, v) frozen at the guess
    for (int j = 0; j <= J; ++j) {
        const double s = sgrid.nodes[static_cast<std::size_t>(j)];
        for (int p = 0; p < P; ++p)
            spec.xi(s, ens.state(p, M), terminal.data() + static_cast<std::size_t>(p) * d);
        SliceGenFn gen = [&, s](int i, int p, const double* own_u, const double* own_v, double* o) {
            spec.f(s, tgrid.nodes[static_cast<std::size_t>(i)], ens.state(p, i), own_u, own_v,
                   guess.Ydiag.data() + (static_cast<std::size_t>(i) * P + p) * d,
                   guess.Zdiag.data() + (static_cast<std::size_t>(i) * P + p) * nd, o);
        };
        SliceResult r = solve_slice(ens, spec, terminal, gen, basis, opts.theta,
                                    "family s=" + std::to_string(s), cache);
        std::copy(r.U.begin(), r.U.end(), out.U.begin() + out.uoff(j, 0, 0));
        std::copy(r.V.begin(), r.V.end(), out.V.begin() + out.voff(j, 0, 0));
        fam_mean += detail::mean_of(r.ortho_mean);
        fam_cond += detail::mean_of(r.ortho_cond_rms);
        ++fam_cnt;
    }

    // (b) derivative family with the assembled nabla-f generator; its own pair
    // enters linearly, the family slice enters as data
    if (!simplified) {
        for (int j = 0; j <= J; ++j) {
            const double s = sgrid.nodes[static_cast<std::size_t>(j)];
            for (int p = 0; p < P; ++p)
                spec.ds_xi(s, ens.state(p, M), terminal.data() + static_cast<std::size_t>(p) * d);
            SliceGenFn gen = [&, s, j](int i, int p, const double* own_u, const double* own_v, double* o) {
                assemble_nabla_f(spec, s, tgrid.nodes[static_cast<std::size_t>(i)], ens.state(p, i),
                                 own_u, own_v,
                                 out.u_at(j, i, p), out.v_at(j, i, p),
                                 guess.Ydiag.data() + (static_cast<std::size_t>(i) * P + p) * d,
                                 guess.Zdiag.data() + (static_cast<std::size_t>(i) * P + p) * nd, o);
            };
            SliceResult r = solve_slice(ens, spec, terminal, gen, basis, opts.theta,
                                        "derivative family s=" + std::to_string(s), cache);
            std::copy(r.U.begin(), r.U.end(), out.dU.begin() + out.uoff(j, 0, 0));
            std::copy(r.V.begin(), r.V.end(), out.dV.begin() + out.voff(j, 0, 0));
            der_mean += detail::mean_of(r.ortho_mean);
            der_cond += detail::mean_of(r.ortho_cond_rms);
            ++der_cnt;
        }
    }

    // (c) diagonal reads (s-grid coincides with the time grid)
    out.Udiag.assign(static_cast<std::size_t>(M + 1) * P * d, 0.0);
    out.dUdiag.assign(simplified ? 0 : static_cast<std::size_t>(M + 1) * P * d, 0.0);
    for (int i = 0; i <= M; ++i)
        for (int p = 0; p < P; ++p) {
            const double* u = out.u_at(i, i, p);
            double* o = out.Udiag.data() + out.doff(i, p);
            for (int c = 0; c < d; ++c) o[c] = u[c];
            if (!simplified) {
                const double* du = out.du_at(i, i, p);
                double* q = out.dUdiag.data() + out.doff(i, p);
                for (int c = 0; c < d; ++c) q[c] = du[c];
            }
        }

    // (d) V-diagonal via the (D) antiderivative identity
    if (!simplified) out.Vdiag_reconstructed = reconstruct_diagonal_V(out);

    // (e) diagonal equation; simplified path reads the family diagonal instead
    if (simplified) {
        out.Ydiag = out.Udiag;
        out.Zdiag.assign(static_cast<std::size_t>(M + 1) * P * nd, 0.0);
        for (int i = 0; i <= M; ++i)
            for (int p = 0; p < P; ++p) {
                const double* v = out.v_at(i, i, p);
                double* o = out.Zdiag.data() + out.zoff(i, p);
                for (int k = 0; k < nd; ++k) o[k] = v[k];
            }
    } else {
        for (int p = 0; p < P; ++p)
            spec.xi(tgrid.horizon, ens.state(p, M), terminal.data() + static_cast<std::size_t>(p) * d);
        SliceGenFn gen = [&](int i, int p, const double* own_u, const double* own_v, double* o) {
            const double t = tgrid.nodes[static_cast<std::size_t>(i)];
            spec.f(t, t, ens.state(p, i), own_u, own_v,
                   out.Udiag.data() + out.doff(i, p),
                   out.Vdiag_reconstructed.data() + out.zoff(i, p), o);
            const double* du = out.dUdiag.data() + out.doff(i, p);
            for (int c = 0; c < d; ++c) o[c] -= du[c];
        };
        SliceResult r = solve_slice(ens, spec, terminal, gen, basis, opts.theta, "diagonal equation", cache);
        out.Ydiag = std::move(r.U);
        out.Zdiag = std::move(r.V);
        out.ortho_residuals.diag_mean = detail::mean_of(r.ortho_mean);
        out.ortho_residuals.diag_cond = detail::mean_of(r.ortho_cond_rms);
    }

    out.ortho_residuals.family_mean = fam_cnt ? fam_mean / fam_cnt : 0.0;
    out.ortho_residuals.family_cond = fam_cnt ? fam_cond / fam_cnt : 0.0;
    out.ortho_residuals.deriv_mean = der_cnt ? der_mean / der_cnt : 0.0;
    out.ortho_residuals.deriv_cond = der_cnt ? der_cond / der_cnt : 0.0;
    return out;
}

namespace detail {

inline double guess_distance_sq(const FieldSolution& cand, const DiagonalGuess& guess,
                                const PathEnsemble& ens, const ProblemSpec& spec) {
    return s2_sq(diff(cand.Ydiag, guess.Ydiag), cand.tgrid, cand.n_paths, cand.d) +
           h2_sq(diff(cand.Zdiag, guess.Zdiag), ens, spec);
}

inline double magnitude(const FieldSolution& cand, const PathEnsemble& ens, const ProblemSpec& spec) {
    return std::sqrt(s2_sq(cand.Ydiag, cand.tgrid, cand.n_paths, cand.d) +
                     h2_sq(cand.Zdiag, ens, spec));
}

inline DiagonalGuess to_guess(const FieldSolution& f) {
    DiagonalGuess g;
    g.Ydiag = f.Ydiag;
    g.Zdiag = f.Zdiag;
    g.Udiag = f.Udiag;
    g.dUdiag = f.dUdiag;
    g.Vdiag = f.Vdiag_reconstructed;
    return g;
}

inline FieldSolution solve_system_impl(const ProblemSpec& spec_in, const PathEnsemble& ens,
                                       const TimeGrid& tgrid, const ParamGrid& sgrid,
                                       const RegressionBasis& basis, const PicardOptions& opts,
                                       bool simplified) {
    if (!(opts.tol > 0.0)) throw ConfigError("picard tol must be > 0");
    const ProblemSpec spec = with_drift_folded(spec_in);
    spec.validate();
    DiagonalGuess guess = DiagonalGuess::zero(tgrid, ens.n_paths, spec.n, spec.d);
    const BasisCache cache = BasisCache::build(ens, basis);
    std::vector<double> trace;
    for (int k = 0; k < opts.max_iter; ++k) {
        FieldSolution cand = picard_step(spec, ens, tgrid, sgrid, guess, basis, opts, simplified, &cache);
        const double dist = std::sqrt(guess_distance_sq(cand, guess, ens, spec));
        trace.push_back(dist);
        const double stop = opts.tol * (1.0 + magnitude(cand, ens, spec));
        if (dist < stop) {
            cand.picard_trace = trace;
            cand.achieved_distance = dist;
            cand.converged = true;
            return cand;
        }
        guess = to_guess(cand);
    }
    throw NonConvergenceError("picard iteration did not reach tol " + std::to_string(opts.tol) +
                                  " within " + std::to_string(opts.max_iter) + " iterations",
                              trace, trace.empty() ? 0.0 : trace.back());
}

} // namespace detail

inline FieldSolution solve_system(const ProblemSpec& spec, const PathEnsemble& ens,
                                  const TimeGrid& tgrid, const ParamGrid& sgrid,
                                  const RegressionBasis& basis, const PicardOptions& opts) {
    return detail::solve_system_impl(spec, ens, tgrid, sgrid, basis, opts, false);
}

// Specialised path for generators without the v-diagonal argument: no
// derivative family, no V-diagonal reconstruction; the diagonal pair is read
// from the family itself.
inline FieldSolution solve_system_simplified(const ProblemSpec& spec, const PathEnsemble& ens,
                                             const TimeGrid& tgrid, const ParamGrid& sgrid,
                                             const RegressionBasis& basis, const PicardOptions& opts) {
    if (spec.z_diagonal_in_generator)
        throw ConfigError("solve_system_simplified: spec declares z-diagonal dependence in the generator");
    return detail::solve_system_impl(spec, ens, tgrid, sgrid, basis, opts, true);
}

// Theorem-4.1 extraction with fixed-point identification errors recorded.
inline BsvieSolution extract_bsvie(std::shared_ptr<const FieldSolution> field,
                                   const PathEnsemble& ens, const ProblemSpec& spec) {
    if (!field->converged) throw StateError("extract_bsvie: field is not a converged fixed point");
    BsvieSolution out;
    out.field = field;
    out.backend = field->simplified ? "mc_simplified" : "mc_full";
    out.ident_err_Y = detail::s2_sq(detail::diff(field->Ydiag, field->Udiag),
                                    field->tgrid, field->n_paths, field->d);
    if (!field->simplified)
        out.ident_err_Z = detail::h2_sq(detail::diff(field->Zdiag, field->Vdiag_reconstructed), ens, spec);
    out.ident_err_Y = std::sqrt(out.ident_err_Y);
    out.ident_err_Z = std::sqrt(out.ident_err_Z);
    return out;
}

struct ResidualReport {
    double rms = 0.0;
    double conditioned_rms = 0.0;
    double max_over_index = 0.0;
    std::vector<double> per_index;  // per time node or per s node, context dependent
};

// Discrete residual of the diagonal dynamics
// (dU_t^t picks up the generator at the diagonal minus the s-derivative).
inline ResidualReport check_diagonal_dynamics(const FieldSolution& field, const ProblemSpec& spec_in,
                                              const PathEnsemble& ens, const RegressionBasis& basis) {
    if (field.simplified) throw StateError("check_diagonal_dynamics: needs the full solver output (dUdiag)");
    const ProblemSpec spec = with_drift_folded(spec_in);
    const int M = field.M(), P = field.n_paths, n = field.n, d = field.d;
    const double dt = field.tgrid.dt();
    ResidualReport rep;
    rep.per_index.assign(static_cast<std::size_t>(M), 0.0);
    std::vector<double> g(static_cast<std::size_t>(d));
    std::vector<double> resid(static_cast<std::size_t>(P) * d);
    std::vector<double> features(static_cast<std::size_t>(P) * n);
    double acc = 0.0, cacc = 0.0;
    std::size_t cnt = 0;
    for (int i = 0; i < M; ++i) {
        const double t = field.tgrid.nodes[static_cast<std::size_t>(i)];
        double step_acc = 0.0;
        for (int p = 0; p < P; ++p) {
            spec.f(t, t, ens.state(p, i),
                   field.Udiag.data() + field.doff(i, p),
                   field.Vdiag_reconstructed.data() + field.zoff(i, p),
                   field.Ydiag.data() + field.doff(i, p),
                   field.Zdiag.data() + field.zoff(i, p), g.data());
            const double* dud = field.dUdiag.data() + field.doff(i, p);
            const double* vd = field.Vdiag_reconstructed.data() + field.zoff(i, p);
            const double* dx = ens.incr(p, i);
            for (int c = 0; c < d; ++c) {
                double vdx = 0.0;
                for (int a = 0; a < n; ++a) vdx += vd[static_cast<std::size_t>(a) * d + c] * dx[a];
                const double r = field.Udiag[field.doff(i + 1, p) + c] - field.Udiag[field.doff(i, p) + c] +
                                 dt * (g[static_cast<std::size_t>(c)] - dud[c]) - vdx;
                resid[static_cast<std::size_t>(p) * d + c] = r;
                step_acc += r * r;
                acc += r * r;
                ++cnt;
            }
            for (int c = 0; c < n; ++c) features[static_cast<std::size_t>(p) * n + c] = ens.state(p, i)[c];
        }
        rep.per_index[static_cast<std::size_t>(i)] = std::sqrt(step_acc / (static_cast<double>(P) * d));
        FittedBasis fb(features.data(), P, n, basis);
        std::vector<double> cond(static_cast<std::size_t>(P) * d);
        fb.project(resid.data(), d, cond.data());
        for (double v : cond) cacc += v * v;
    }
    rep.rms = std::sqrt(acc / static_cast<double>(cnt));
    rep.conditioned_rms = std::sqrt(cacc / static_cast<double>(cnt));
    for (double v : rep.per_index) rep.max_over_index = std::max(rep.max_over_index, v);
    return rep;
}

// M-property: Y_t^t - E[Y_t^t] - int_0^t Z_r^t dX_r, per time node.
inline ResidualReport check_M_property(const BsvieSolution& sol, const PathEnsemble& ens) {
    const FieldSolution& f = *sol.field;
    require_matching(f.sgrid, f.tgrid, "check_M_property");
    const int M = f.M(), P = f.n_paths, n = f.n, d = f.d;
    ResidualReport rep;
    rep.per_index.assign(static_cast<std::size_t>(M + 1), 0.0);
    double acc = 0.0;
    for (int i = 0; i <= M; ++i) {
        std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
        for (int p = 0; p < P; ++p)
            for (int c = 0; c < d; ++c) mean[static_cast<std::size_t>(c)] += f.Ydiag[f.doff(i, p) + c];
        for (int c = 0; c < d; ++c) mean[static_cast<std::size_t>(c)] /= P;
        double step = 0.0;
        for (int p = 0; p < P; ++p) {
            for (int c = 0; c < d; ++c) {
                double integral = 0.0;
                for (int k = 0; k < i; ++k) {
                    const double* z = f.v_at(i, k, p);  // slice s = t_i at time t_k
                    const double* dx = ens.incr(p, k);
                    for (int a = 0; a < n; ++a) integral += z[static_cast<std::size_t>(a) * d + c] * dx[a];
                }
                const double r = f.Ydiag[f.doff(i, p) + c] - mean[static_cast<std::size_t>(c)] - integral;
                step += r * r;
            }
        }
        rep.per_index[static_cast<std::size_t>(i)] = std::sqrt(step / (static_cast<double>(P) * d));
        acc += step / (static_cast<double>(P) * d);
    }
    rep.rms = std::sqrt(acc / (M + 1));
    for (double v : rep.per_index) rep.max_over_index = std::max(rep.max_over_index, v);
    return rep;
}

struct ConstraintDReport {
    std::vector<double> residual_U;  // per s node, discrete S^2 norm (not squared)
    std::vector<double> residual_V;  // per s node, discrete H^2 norm
    double max_U = 0.0, max_V = 0.0;
};

// Constraint (D): U^T - U^s must equal the trapezoid s-integral of dU^r
// (V likewise, in the sigma geometry).
inline ConstraintDReport check_constraint_D(const FieldSolution& field, const PathEnsemble& ens,
                                            const ProblemSpec& spec) {
    if (field.simplified) throw StateError("check_constraint_D: needs the full solver output");
    require_matching(field.sgrid, field.tgrid, "check_constraint_D");
    const int M = field.M(), J = field.J(), P = field.n_paths, n = field.n, d = field.d;
    const int nd = n * d;
    const double ds = field.sgrid.ds();
    ConstraintDReport rep;
    rep.residual_U.assign(static_cast<std::size_t>(J + 1), 0.0);
    rep.residual_V.assign(static_cast<std::size_t>(J + 1), 0.0);
    std::vector<double> gapU(static_cast<std::size_t>(M + 1) * P * d);
    std::vector<double> gapV(static_cast<std::size_t>(M + 1) * P * nd);
    for (int j = 0; j <= J; ++j) {
        for (int i = 0; i <= M; ++i)
            for (int p = 0; p < P; ++p) {
                double* gu = gapU.data() + (static_cast<std::size_t>(i) * P + p) * d;
                double* gv = gapV.data() + (static_cast<std::size_t>(i) * P + p) * nd;
                const double* uT = field.u_at(J, i, p);
                const double* uj = field.u_at(j, i, p);
                for (int c = 0; c < d; ++c) gu[c] = uT[c] - uj[c];
                const double* vT = field.v_at(J, i, p);
                const double* vj = field.v_at(j, i, p);
                for (int k = 0; k < nd; ++k) gv[k] = vT[k] - vj[k];
                if (j < J)
                    for (int r = j; r <= J; ++r) {
                        const double w = (r == j || r == J) ? 0.5 * ds : ds;
                        const double* du = field.du_at(r, i, p);
                        const double* dv = field.dv_at(r, i, p);
                        for (int c = 0; c < d; ++c) gu[c] -= w * du[c];
                        for (int k = 0; k < nd; ++k) gv[k] -= w * dv[k];
                    }
            }
        rep.residual_U[static_cast<std::size_t>(j)] = std::sqrt(detail::s2_sq(gapU, field.tgrid, P, d));
        rep.residual_V[static_cast<std::size_t>(j)] = std::sqrt(detail::h2_sq(gapV, ens, spec));
        rep.max_U = std::max(rep.max_U, rep.residual_U[static_cast<std::size_t>(j)]);
        rep.max_V = std::max(rep.max_V, rep.residual_V[static_cast<std::size_t>(j)]);
    }
    return rep;
}

} // namespace volterra
