#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "volterra/ensemble.hpp"
#include "volterra/errors.hpp"
#include "volterra/fields.hpp"
#include "volterra/grids.hpp"
#include "volterra/problem.hpp"

namespace volterra {

// Uniform truncated spatial grid for the 1-D backends.
struct XGrid {
    double lo = -1.0, hi = 1.0;
    int cells = 1;
    std::vector<double> nodes;

    static XGrid uniform(double lo, double hi, int cells) {
        if (!(hi > lo)) throw ConfigError("XGrid: x_hi must exceed x_lo");
        if (cells < 4) throw ConfigError("XGrid: need at least 4 cells");
        XGrid g;
        g.lo = lo;
        g.hi = hi;
        g.cells = cells;
        g.nodes.resize(static_cast<std::size_t>(cells) + 1);
        for (int k = 0; k <= cells; ++k) g.nodes[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / cells;
        return g;
    }
    double dx() const { return (hi - lo) / cells; }
};

struct ControlSet {
    std::vector<double> points;

    static ControlSet of(std::vector<double> pts) {
        if (pts.empty()) throw ConfigError("ControlSet: empty control grid");
        for (std::size_t k = 1; k < pts.size(); ++k)
            if (!(pts[k] > pts[k - 1])) throw ConfigError("ControlSet: points must be strictly ascending");
        ControlSet c;
        c.points = std::move(pts);
        return c;
    }
};

// Data of the time-inconsistent control problem: running reward bar_f, drift
// b, diffusion sigma, free term xi, all scalar-state.
struct HjbSpec {
    std::function<double(double s, double t, double x, double a)> bar_f;
    std::function<double(double s, double t, double x, double a)> ds_bar_f;  // optional
    std::function<double(double t, double x, double a)> b;                   // optional, 0 when empty
    std::function<double(double t, double x)> sigma;
    std::function<double(double s, double x)> xi;
    std::function<double(double s, double x)> ds_xi;  // optional
    ControlSet control;
    double sigma_max = 1.0;

    double gbar(double s, double t, double x, double a, double v) const {
        const double drift = b ? sigma(t, x) * b(t, x, a) : 0.0;
        return bar_f(s, t, x, a) + v * drift;
    }
};

struct ArgmaxResult {
    double a_star = 0.0;
    double value = 0.0;
    int index = 0;
};

// Exhaustive maximisation of gbar over the control grid; ties break to the
// smallest index.
inline ArgmaxResult hamiltonian_argmax(const HjbSpec& hjb, double s, double t, double x, double v) {
    ArgmaxResult best;
    bool first = true;
    for (std::size_t k = 0; k < hjb.control.points.size(); ++k) {
        const double a = hjb.control.points[k];
        const double val = hjb.gbar(s, t, x, a, v);
        if (!std::isfinite(val))
            throw NumericError("hamiltonian_argmax: gbar non-finite at control a = " + std::to_string(a));
        if (first || val > best.value) {
            best.a_star = a;
            best.value = val;
            best.index = static_cast<int>(k);
            first = false;
        }
    }
    return best;
}

enum class PdeKind { Representation, HjbWY, HjbBKM };

// Grid functions live on the stored (s, t, x) grid; diffusion sub-stepping is
// internal and keeps the explicit stencil inside its CFL bound.
struct PdeSolution {
    PdeKind kind = PdeKind::Representation;
    TimeGrid tgrid;
    ParamGrid sgrid;
    XGrid xgrid;
    std::vector<double> v;    // (J+1)(M+1)(K+1)
    std::vector<double> vx;   // same shape
    std::vector<double> Vfun;     // BKM value function, (M+1)(K+1)
    std::vector<double> Vfun_x;   // its gradient

    int J() const { return sgrid.segments(); }
    int M() const { return tgrid.steps; }
    int K() const { return xgrid.cells; }
    std::size_t off(int j, int i, int k) const {
        return (static_cast<std::size_t>(j) * (M() + 1) + i) * (K() + 1) + k;
    }
    std::size_t voff(int i, int k) const { return static_cast<std::size_t>(i) * (K() + 1) + k; }
};

namespace pde_detail {

inline void gradient(const std::vector<double>& w, double dx, std::vector<double>& out) {
    const int K = static_cast<int>(w.size()) - 1;
    out.resize(w.size());
    for (int k = 1; k < K; ++k) out[static_cast<std::size_t>(k)] = (w[static_cast<std::size_t>(k) + 1] - w[static_cast<std::size_t>(k) - 1]) / (2.0 * dx);
    out[0] = (-3.0 * w[0] + 4.0 * w[1] - w[2]) / (2.0 * dx);
    out[static_cast<std::size_t>(K)] = (3.0 * w[static_cast<std::size_t>(K)] - 4.0 * w[static_cast<std::size_t>(K) - 1] + w[static_cast<std::size_t>(K) - 2]) / (2.0 * dx);
}

inline int resolve_substeps(double dt, double dx, double sigma_max, int requested) {
    const double dt_max = 0.4 * dx * dx / std::max(sigma_max * sigma_max, 1e-300);
    if (requested > 0) {
        if (dt / requested > dt_max * (1.0 + 1e-12))
            throw ConfigError("explicit-scheme CFL violated: maximal admissible dt is " +
                              std::to_string(dt_max) + ", configured sub-step is " +
                              std::to_string(dt / requested));
        return requested;
    }
    return std::max(1, static_cast<int>(std::ceil(dt / dt_max)));
}

// One coarse backward step t_{i+1} -> t_i of a single slice with an explicit
// stencil.  The generator is applied once per coarse step (evaluated on the
// known t_{i+1} slice, like the lagged diagonal couplings); only the
// diffusion is sub-stepped to stay inside the CFL bound, so the scheme's
// time order is governed by the coarse grid.
template <typename Source>
inline void march_slice(std::vector<double>& w, double t_eval, double dt, int substeps,
                        const XGrid& xg, const std::function<double(double, double)>& half_ss,
                        const Source& source, double s_tag, double t_tag) {
    const int K = xg.cells;
    const double dx = xg.dx();
    const double dq = dt / substeps;
    std::vector<double> grad, next(w.size()), src(w.size(), 0.0);
    gradient(w, dx, grad);
    for (int k = 1; k < K; ++k)
        src[static_cast<std::size_t>(k)] = source(k, w[static_cast<std::size_t>(k)], grad[static_cast<std::size_t>(k)]);
    for (int q = 0; q < substeps; ++q) {
        for (int k = 1; k < K; ++k) {
            const double x = xg.nodes[static_cast<std::size_t>(k)];
            const double curv = (w[static_cast<std::size_t>(k) + 1] - 2.0 * w[static_cast<std::size_t>(k)] + w[static_cast<std::size_t>(k) - 1]) / (dx * dx);
            next[static_cast<std::size_t>(k)] = w[static_cast<std::size_t>(k)] +
                                                dq * (half_ss(t_eval, x) * curv + src[static_cast<std::size_t>(k)]);
        }
        next[0] = 2.0 * next[1] - next[2];
        next[static_cast<std::size_t>(K)] = 2.0 * next[static_cast<std::size_t>(K) - 1] - next[static_cast<std::size_t>(K) - 2];
        w.swap(next);
        for (int k = 0; k <= K; ++k)
            if (!(std::abs(w[static_cast<std::size_t>(k)]) < 1e12))
                throw DivergenceError("pde value blew up at (s=" + std::to_string(s_tag) +
                                      ", t=" + std::to_string(t_tag) + ", x=" +
                                      std::to_string(xg.nodes[static_cast<std::size_t>(k)]) + ")");
    }
}

} // namespace pde_detail

// Representation PDE of the type-I family: all s-slices marched with the
// diagonal value/gradient arguments read from the already-computed s = t_{i+1}
// slice (lagged one step).
inline PdeSolution solve_representation_pde(const ProblemSpec& spec, const TimeGrid& tgrid,
                                            const ParamGrid& sgrid, const XGrid& xg,
                                            int substeps_req = 0) {
    if (spec.n != 1 || spec.d != 1)
        throw ConfigError("solve_representation_pde: 1-D backend requires n = d = 1");
    require_matching(sgrid, tgrid, "solve_representation_pde");
    const int M = tgrid.steps, J = sgrid.segments(), K = xg.cells, m = spec.m;
    const double dt = tgrid.dt(), dx = xg.dx();
    const int substeps = pde_detail::resolve_substeps(dt, dx, spec.sigma_max, substeps_req);

    PdeSolution out;
    out.kind = PdeKind::Representation;
    out.tgrid = tgrid;
    out.sgrid = sgrid;
    out.xgrid = xg;
    out.v.assign(static_cast<std::size_t>(J + 1) * (M + 1) * (K + 1), 0.0);
    out.vx.assign(out.v.size(), 0.0);

    auto half_ss = [&spec, m](double t, double x) {
        std::vector<double> sg(static_cast<std::size_t>(m));
        spec.sigma(t, &x, sg.data());
        double s2 = 0.0;
        for (int k = 0; k < m; ++k) s2 += sg[static_cast<std::size_t>(k)] * sg[static_cast<std::size_t>(k)];
        return 0.5 * s2;
    };
    auto sigma_b = [&spec, m](double t, double x) {
        if (!spec.drift_b) return 0.0;
        std::vector<double> sg(static_cast<std::size_t>(m)), bv(static_cast<std::size_t>(m));
        spec.sigma(t, &x, sg.data());
        spec.drift_b(t, &x, bv.data());
        double acc = 0.0;
        for (int k = 0; k < m; ++k) acc += sg[static_cast<std::size_t>(k)] * bv[static_cast<std::size_t>(k)];
        return acc;
    };

    for (int j = 0; j <= J; ++j)
        for (int k = 0; k <= K; ++k) {
            double val;
            spec.xi(sgrid.nodes[static_cast<std::size_t>(j)], &xg.nodes[static_cast<std::size_t>(k)], &val);
            out.v[out.off(j, M, k)] = val;
        }

    std::vector<double> w(static_cast<std::size_t>(K) + 1), grad;
    std::vector<double> diag_v(static_cast<std::size_t>(K) + 1), diag_vx(static_cast<std::size_t>(K) + 1);
    for (int i = M - 1; i >= 0; --i) {
        const double te = tgrid.nodes[static_cast<std::size_t>(i + 1)];
        const int jd = i + 1;  // s = t_{i+1} slice
        for (int k = 0; k <= K; ++k) diag_v[static_cast<std::size_t>(k)] = out.v[out.off(jd, i + 1, k)];
        pde_detail::gradient(diag_v, dx, diag_vx);
        for (int j = 0; j <= J; ++j) {
            const double s = sgrid.nodes[static_cast<std::size_t>(j)];
            for (int k = 0; k <= K; ++k) w[static_cast<std::size_t>(k)] = out.v[out.off(j, i + 1, k)];
            auto source = [&](int k, double val, double gr) {
                const double x = xg.nodes[static_cast<std::size_t>(k)];
                double fv;
                spec.f(s, te, &x, &val, &gr, &diag_v[static_cast<std::size_t>(k)], &diag_vx[static_cast<std::size_t>(k)], &fv);
                return fv + gr * sigma_b(te, x);
            };
            pde_detail::march_slice(w, te, dt, substeps, xg, half_ss, source, s, tgrid.nodes[static_cast<std::size_t>(i)]);
            pde_detail::gradient(w, dx, grad);
            for (int k = 0; k <= K; ++k) {
                out.v[out.off(j, i, k)] = w[static_cast<std::size_t>(k)];
                out.vx[out.off(j, i, k)] = grad[static_cast<std::size_t>(k)];
            }
        }
    }
    // gradients at the terminal slice
    for (int j = 0; j <= J; ++j) {
        for (int k = 0; k <= K; ++k) w[static_cast<std::size_t>(k)] = out.v[out.off(j, M, k)];
        pde_detail::gradient(w, dx, grad);
        for (int k = 0; k <= K; ++k) out.vx[out.off(j, M, k)] = grad[static_cast<std::size_t>(k)];
    }
    return out;
}

// Extended-domain equilibrium equation: every slice is driven by the DIAGONAL
// slice's gradient and the control maximised at that gradient.
inline PdeSolution solve_hjb_wy(const HjbSpec& hjb, const TimeGrid& tgrid, const ParamGrid& sgrid,
                                const XGrid& xg, int substeps_req = 0) {
    require_matching(sgrid, tgrid, "solve_hjb_wy");
    const int M = tgrid.steps, J = sgrid.segments(), K = xg.cells;
    const double dt = tgrid.dt(), dx = xg.dx();
    const int substeps = pde_detail::resolve_substeps(dt, dx, hjb.sigma_max, substeps_req);

    PdeSolution out;
    out.kind = PdeKind::HjbWY;
    out.tgrid = tgrid;
    out.sgrid = sgrid;
    out.xgrid = xg;
    out.v.assign(static_cast<std::size_t>(J + 1) * (M + 1) * (K + 1), 0.0);
    out.vx.assign(out.v.size(), 0.0);

    auto half_ss = [&hjb](double t, double x) {
        const double s = hjb.sigma(t, x);
        return 0.5 * s * s;
    };

    for (int j = 0; j <= J; ++j)
        for (int k = 0; k <= K; ++k)
            out.v[out.off(j, M, k)] = hjb.xi(sgrid.nodes[static_cast<std::size_t>(j)], xg.nodes[static_cast<std::size_t>(k)]);

    std::vector<double> w(static_cast<std::size_t>(K) + 1), grad;
    std::vector<double> diag_v(static_cast<std::size_t>(K) + 1), diag_vx(static_cast<std::size_t>(K) + 1);
    std::vector<double> astar(static_cast<std::size_t>(K) + 1);
    for (int i = M - 1; i >= 0; --i) {
        const double te = tgrid.nodes[static_cast<std::size_t>(i + 1)];
        const int jd = i + 1;
        for (int k = 0; k <= K; ++k) diag_v[static_cast<std::size_t>(k)] = out.v[out.off(jd, i + 1, k)];
        pde_detail::gradient(diag_v, dx, diag_vx);
        for (int k = 0; k <= K; ++k)
            astar[static_cast<std::size_t>(k)] =
                hamiltonian_argmax(hjb, te, te, xg.nodes[static_cast<std::size_t>(k)], diag_vx[static_cast<std::size_t>(k)]).a_star;
        for (int j = 0; j <= J; ++j) {
            const double s = sgrid.nodes[static_cast<std::size_t>(j)];
            for (int k = 0; k <= K; ++k) w[static_cast<std::size_t>(k)] = out.v[out.off(j, i + 1, k)];
            auto source = [&](int k, double, double) {
                const double x = xg.nodes[static_cast<std::size_t>(k)];
                return hjb.gbar(s, te, x, astar[static_cast<std::size_t>(k)], diag_vx[static_cast<std::size_t>(k)]);
            };
            pde_detail::march_slice(w, te, dt, substeps, xg, half_ss, source, s, tgrid.nodes[static_cast<std::size_t>(i)]);
            pde_detail::gradient(w, dx, grad);
            for (int k = 0; k <= K; ++k) {
                out.v[out.off(j, i, k)] = w[static_cast<std::size_t>(k)];
                out.vx[out.off(j, i, k)] = grad[static_cast<std::size_t>(k)];
            }
        }
    }
    for (int j = 0; j <= J; ++j) {
        for (int k = 0; k <= K; ++k) w[static_cast<std::size_t>(k)] = out.v[out.off(j, M, k)];
        pde_detail::gradient(w, dx, grad);
        for (int k = 0; k <= K; ++k) out.vx[out.off(j, M, k)] = grad[static_cast<std::size_t>(k)];
    }
    return out;
}

// Coupled value-function / auxiliary-field system: J-slices use their own
// gradients with the control maximised at the value function's gradient; the
// value function picks up H minus the one-sided s-derivative of J at the
// diagonal.
inline PdeSolution solve_hjb_bkm(const HjbSpec& hjb, const TimeGrid& tgrid, const ParamGrid& sgrid,
                                 const XGrid& xg, int substeps_req = 0) {
    require_matching(sgrid, tgrid, "solve_hjb_bkm");
    const int M = tgrid.steps, J = sgrid.segments(), K = xg.cells;
    if (J < 2) throw ConfigError("solve_hjb_bkm: J >= 2 required for the one-sided s-difference");
    const double dt = tgrid.dt(), dx = xg.dx(), ds = sgrid.ds();
    const int substeps = pde_detail::resolve_substeps(dt, dx, hjb.sigma_max, substeps_req);

    PdeSolution out;
    out.kind = PdeKind::HjbBKM;
    out.tgrid = tgrid;
    out.sgrid = sgrid;
    out.xgrid = xg;
    out.v.assign(static_cast<std::size_t>(J + 1) * (M + 1) * (K + 1), 0.0);
    out.vx.assign(out.v.size(), 0.0);
    out.Vfun.assign(static_cast<std::size_t>(M + 1) * (K + 1), 0.0);
    out.Vfun_x.assign(out.Vfun.size(), 0.0);

    auto half_ss = [&hjb](double t, double x) {
        const double s = hjb.sigma(t, x);
        return 0.5 * s * s;
    };

    for (int k = 0; k <= K; ++k) out.Vfun[out.voff(M, k)] = hjb.xi(tgrid.horizon, xg.nodes[static_cast<std::size_t>(k)]);
    for (int j = 0; j <= J; ++j)
        for (int k = 0; k <= K; ++k)
            out.v[out.off(j, M, k)] = hjb.xi(sgrid.nodes[static_cast<std::size_t>(j)], xg.nodes[static_cast<std::size_t>(k)]);

    std::vector<double> w(static_cast<std::size_t>(K) + 1), grad;
    std::vector<double> Vx(static_cast<std::size_t>(K) + 1), astar(static_cast<std::size_t>(K) + 1);
    std::vector<double> Hval(static_cast<std::size_t>(K) + 1), dsJ(static_cast<std::size_t>(K) + 1);
    for (int i = M - 1; i >= 0; --i) {
        const double te = tgrid.nodes[static_cast<std::size_t>(i + 1)];
        for (int k = 0; k <= K; ++k) w[static_cast<std::size_t>(k)] = out.Vfun[out.voff(i + 1, k)];
        pde_detail::gradient(w, dx, Vx);
        for (int k = 0; k <= K; ++k) {
            const ArgmaxResult am = hamiltonian_argmax(hjb, te, te, xg.nodes[static_cast<std::size_t>(k)], Vx[static_cast<std::size_t>(k)]);
            astar[static_cast<std::size_t>(k)] = am.a_star;
            Hval[static_cast<std::size_t>(k)] = am.value;
        }
        // second-order one-sided s-difference of J at s = t_{i+1}, lagged slice
        const int jd = i + 1;
        for (int k = 0; k <= K; ++k) {
            double v0 = out.v[out.off(jd, i + 1, k)];
            double d;
            if (jd + 2 <= J) {
                d = (-3.0 * v0 + 4.0 * out.v[out.off(jd + 1, i + 1, k)] - out.v[out.off(jd + 2, i + 1, k)]) / (2.0 * ds);
            } else {
                d = (3.0 * v0 - 4.0 * out.v[out.off(jd - 1, i + 1, k)] + out.v[out.off(jd - 2, i + 1, k)]) / (2.0 * ds);
            }
            dsJ[static_cast<std::size_t>(k)] = d;
        }
        // value function step
        auto vsource = [&](int k, double, double) { return Hval[static_cast<std::size_t>(k)] - dsJ[static_cast<std::size_t>(k)]; };
        pde_detail::march_slice(w, te, dt, substeps, xg, half_ss, vsource, tgrid.nodes[static_cast<std::size_t>(i)],
                                tgrid.nodes[static_cast<std::size_t>(i)]);
        pde_detail::gradient(w, dx, grad);
        for (int k = 0; k <= K; ++k) {
            out.Vfun[out.voff(i, k)] = w[static_cast<std::size_t>(k)];
            out.Vfun_x[out.voff(i, k)] = grad[static_cast<std::size_t>(k)];
        }
        // auxiliary family, own-slice gradient in gbar
        for (int j = 0; j <= J; ++j) {
            const double s = sgrid.nodes[static_cast<std::size_t>(j)];
            for (int k = 0; k <= K; ++k) w[static_cast<std::size_t>(k)] = out.v[out.off(j, i + 1, k)];
            auto source = [&](int k, double, double gr) {
                return hjb.gbar(s, te, xg.nodes[static_cast<std::size_t>(k)], astar[static_cast<std::size_t>(k)], gr);
            };
            pde_detail::march_slice(w, te, dt, substeps, xg, half_ss, source, s, tgrid.nodes[static_cast<std::size_t>(i)]);
            pde_detail::gradient(w, dx, grad);
            for (int k = 0; k <= K; ++k) {
                out.v[out.off(j, i, k)] = w[static_cast<std::size_t>(k)];
                out.vx[out.off(j, i, k)] = grad[static_cast<std::size_t>(k)];
            }
        }
    }
    for (int j = 0; j <= J; ++j) {
        for (int k = 0; k <= K; ++k) w[static_cast<std::size_t>(k)] = out.v[out.off(j, M, k)];
        pde_detail::gradient(w, dx, grad);
        for (int k = 0; k <= K; ++k) out.vx[out.off(j, M, k)] = grad[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k <= K; ++k) w[static_cast<std::size_t>(k)] = out.Vfun[out.voff(M, k)];
    pde_detail::gradient(w, dx, grad);
    for (int k = 0; k <= K; ++k) out.Vfun_x[out.voff(M, k)] = grad[static_cast<std::size_t>(k)];
    return out;
}

struct EquivalenceReport {
    double sup_value_diff = 0.0;     // |Vfun - diag(WY)| on the trimmed grid
    double sup_bkm_residual = 0.0;   // BKM residual of the WY-constructed pair
    double sup_value_diff_full = 0.0;
    bool inconclusive = false;
};

// Theorem-5.2 cross-check of the two equilibrium formulations on identical
// grids from the same data.
inline EquivalenceReport check_equivalence(const PdeSolution& wy, const PdeSolution& bkm,
                                           const HjbSpec& hjb) {
    if (wy.kind != PdeKind::HjbWY || bkm.kind != PdeKind::HjbBKM)
        throw ConfigError("check_equivalence: expects one WY and one BKM solution");
    if (wy.M() != bkm.M() || wy.J() != bkm.J() || wy.K() != bkm.K())
        throw ConfigError("check_equivalence: grid mismatch between the two solutions");
    const int M = wy.M(), J = wy.J(), K = wy.K();
    const double dt = wy.tgrid.dt(), dx = wy.xgrid.dx(), ds = wy.sgrid.ds();
    const int trim = std::max(1, K / 10);

    EquivalenceReport rep;
    for (int i = 0; i <= M; ++i)
        for (int k = 0; k <= K; ++k) {
            const double diff = std::abs(bkm.Vfun[bkm.voff(i, k)] - wy.v[wy.off(i, i, k)]);
            rep.sup_value_diff_full = std::max(rep.sup_value_diff_full, diff);
            if (k >= trim && k <= K - trim) rep.sup_value_diff = std::max(rep.sup_value_diff, diff);
        }

    // residual of the value-function equation evaluated on (diag WY, WY)
    for (int i = 0; i < M; ++i) {
        const double te = wy.tgrid.nodes[static_cast<std::size_t>(i + 1)];
        for (int k = trim; k <= K - trim; ++k) {
            const double x = wy.xgrid.nodes[static_cast<std::size_t>(k)];
            const double vh_next = wy.v[wy.off(i + 1, i + 1, k)];
            const double vh_cur = wy.v[wy.off(i, i, k)];
            const double curv = (wy.v[wy.off(i + 1, i + 1, k + 1)] - 2.0 * vh_next + wy.v[wy.off(i + 1, i + 1, k - 1)]) / (dx * dx);
            const double gr = (wy.v[wy.off(i + 1, i + 1, k + 1)] - wy.v[wy.off(i + 1, i + 1, k - 1)]) / (2.0 * dx);
            const double H = hamiltonian_argmax(hjb, te, te, x, gr).value;
            const int jd = i + 1;
            double dsJ;
            if (jd + 2 <= J)
                dsJ = (-3.0 * wy.v[wy.off(jd, i + 1, k)] + 4.0 * wy.v[wy.off(jd + 1, i + 1, k)] -
                       wy.v[wy.off(jd + 2, i + 1, k)]) / (2.0 * ds);
            else
                dsJ = (3.0 * wy.v[wy.off(jd, i + 1, k)] - 4.0 * wy.v[wy.off(jd - 1, i + 1, k)] +
                       wy.v[wy.off(jd - 2, i + 1, k)]) / (2.0 * ds);
            const double sg = hjb.sigma(te, x);
            const double res = (vh_next - vh_cur) / dt + 0.5 * sg * sg * curv + H - dsJ;
            rep.sup_bkm_residual = std::max(rep.sup_bkm_residual, std::abs(res));
        }
    }
    return rep;
}

struct FeynmanKacReport {
    double rms_Y = 0.0;
    double rms_Z = 0.0;
    double exit_fraction = 0.0;
};

// Cross-validation of the probabilistic and analytic solutions: Y against v
// and Z against the spatial gradient, linear interpolation in x.
inline FeynmanKacReport feynman_kac_check(const PdeSolution& pde, const BsvieSolution& sol,
                                          const PathEnsemble& ens) {
    const FieldSolution& f = *sol.field;
    if (f.n != 1 || f.d != 1) throw ConfigError("feynman_kac_check: 1-D backend requires n = d = 1");
    if (pde.M() != f.M() || pde.J() != f.J())
        throw ConfigError("feynman_kac_check: PDE and MC grids differ");
    const int M = f.M(), J = f.J(), P = f.n_paths, K = pde.K();
    const double lo = pde.xgrid.lo, hi = pde.xgrid.hi, dx = pde.xgrid.dx();

    // exit accounting over path-nodes
    long exits = 0;
    for (int i = 0; i <= M; ++i)
        for (int p = 0; p < P; ++p) {
            const double x = ens.state(p, i)[0];
            if (x < lo || x > hi) ++exits;
        }
    FeynmanKacReport rep;
    rep.exit_fraction = static_cast<double>(exits) / (static_cast<double>(M + 1) * P);
    if (rep.exit_fraction > 0.05)
        throw DomainError("feynman_kac_check: exit fraction " + std::to_string(rep.exit_fraction) +
                          " exceeds 5%; widen the xgrid");

    auto interp = [&](const std::vector<double>& a, int j, int i, double x) {
        double u = (x - lo) / dx;
        int k = static_cast<int>(std::floor(u));
        if (k < 0) k = 0;
        if (k >= K) k = K - 1;
        const double w = u - k;
        return (1.0 - w) * a[pde.off(j, i, k)] + w * a[pde.off(j, i, k + 1)];
    };

    double accY = 0.0, accZ = 0.0;
    long cntY = 0, cntZ = 0;
    for (int j = 0; j <= J; ++j)
        for (int i = 0; i <= M; ++i)
            for (int p = 0; p < P; ++p) {
                const double x = ens.state(p, i)[0];
                if (x < lo || x > hi) continue;
                const double ev = *f.u_at(j, i, p) - interp(pde.v, j, i, x);
                accY += ev * ev;
                ++cntY;
                if (i < M) {
                    const double ez = *f.v_at(j, i, p) - interp(pde.vx, j, i, x);
                    accZ += ez * ez;
                    ++cntZ;
                }
            }
    rep.rms_Y = std::sqrt(accY / std::max<long>(1, cntY));
    rep.rms_Z = std::sqrt(accZ / std::max<long>(1, cntZ));
    return rep;
}

} // namespace volterra
