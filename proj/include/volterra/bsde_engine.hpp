#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "volterra/ensemble.hpp"
#include "volterra/errors.hpp"
#include "volterra/problem.hpp"
#include "volterra/regression.hpp"

namespace volterra {

// Generator of one parameterized slice, evaluated per (step, path) at the
// slice's own running pair.  Coupling inputs are captured by the callable.
using SliceGenFn = std::function<void(int i, int p, const double* own_u, const double* own_v, double* out_d)>;

struct SliceResult {
    // U: (M+1) x P x d, V: (M+1) x P x (n*d); V at the terminal node is zero
    // (the integrand lives on [t_i, t_{i+1}), the last slice never enters a norm).
    std::vector<double> U, V;
    // per-step martingale residual diagnostics
    std::vector<double> ortho_mean;      // |ensemble mean of the step residual|
    std::vector<double> ortho_cond_rms;  // RMS of the basis-conditioned residual
};

namespace detail {

// sigma sigma^T at (t_i, X_i^p) applied through the pseudo-inverse; sigma is
// not assumed invertible, so rank-deficient directions are zeroed.
inline void project_z_row(const ProblemSpec& spec, double t, const double* x,
                          const double* raw_nd, double dt, double* out_nd) {
    const int n = spec.n, m = spec.m, d = spec.d;
    if (n == 1) {
        double sg1m[16];
        std::vector<double> sg;
        double* sp = sg1m;
        if (m > 16) { sg.resize(static_cast<std::size_t>(m)); sp = sg.data(); }
        spec.sigma(t, x, sp);
        double s2 = 0.0;
        for (int k = 0; k < m; ++k) s2 += sp[k] * sp[k];
        const double cutoff = 1e-12 * std::max(1.0, spec.sigma_max * spec.sigma_max);
        const double inv = (s2 > cutoff) ? 1.0 / (s2 * dt) : 0.0;
        for (int c = 0; c < d; ++c) out_nd[c] = raw_nd[c] * inv;
        return;
    }
    std::vector<double> sg(static_cast<std::size_t>(n) * m), ssT(static_cast<std::size_t>(n) * n);
    spec.sigma(t, x, sg.data());
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            double acc = 0.0;
            for (int k = 0; k < m; ++k) acc += sg[static_cast<std::size_t>(a) * m + k] * sg[static_cast<std::size_t>(b) * m + k];
            ssT[static_cast<std::size_t>(a) * n + b] = acc;
        }
    std::vector<double> scaled(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n * d; ++i) scaled[static_cast<std::size_t>(i)] = raw_nd[i] / dt;
    pinv_apply(ssT.data(), n, scaled.data(), d, out_nd,
               1e-12 * std::max(1.0, spec.sigma_max * spec.sigma_max));
}

} // namespace detail

// One backward dynamic-programming step: conditional expectation of the
// value plus generator, and the increment projection for the integrand
// against dX.  generator_at_step is already evaluated per path.
inline void backward_step(const PathEnsemble& ens, int i,
                          const std::vector<double>& next_values,
                          const std::function<void(int p, double* out_d)>& generator_at_step,
                          const ProblemSpec& spec, const RegressionBasis& basis,
                          std::vector<double>& u_out, std::vector<double>& v_out) {
    const int P = ens.n_paths, n = spec.n, d = spec.d, M = ens.grid.steps;
    if (i < 0 || i >= M) throw ShapeError("backward_step: step index out of range");
    const double dt = ens.grid.dt();
    const double t = ens.grid.nodes[static_cast<std::size_t>(i)];

    std::vector<double> features(static_cast<std::size_t>(P) * n);
    for (int p = 0; p < P; ++p)
        for (int c = 0; c < n; ++c) features[static_cast<std::size_t>(p) * n + c] = ens.state(p, i)[c];
    FittedBasis fb(features.data(), P, n, basis);
    if (P < fb.n_columns())
        throw DataError("backward_step: fewer paths than basis functions");

    // v_i = pinv(sigma sigma^T) . E[dX next^T | X_i] / dt
    std::vector<double> vt(static_cast<std::size_t>(P) * n * d);
    for (int p = 0; p < P; ++p) {
        const double* dx = ens.incr(p, i);
        const double* nv = next_values.data() + static_cast<std::size_t>(p) * d;
        double* row = vt.data() + static_cast<std::size_t>(p) * n * d;
        for (int a = 0; a < n; ++a)
            for (int c = 0; c < d; ++c) row[static_cast<std::size_t>(a) * d + c] = dx[a] * nv[c];
    }
    std::vector<double> vfit(static_cast<std::size_t>(P) * n * d);
    fb.project(vt.data(), n * d, vfit.data());
    v_out.assign(static_cast<std::size_t>(P) * n * d, 0.0);
    for (int p = 0; p < P; ++p)
        detail::project_z_row(spec, t, ens.state(p, i),
                              vfit.data() + static_cast<std::size_t>(p) * n * d, dt,
                              v_out.data() + static_cast<std::size_t>(p) * n * d);

    std::vector<double> targets(static_cast<std::size_t>(P) * d);
    std::vector<double> g(static_cast<std::size_t>(d));
    for (int p = 0; p < P; ++p) {
        generator_at_step(p, g.data());
        const double* nv = next_values.data() + static_cast<std::size_t>(p) * d;
        for (int c = 0; c < d; ++c) targets[static_cast<std::size_t>(p) * d + c] = nv[c] + dt * g[static_cast<std::size_t>(c)];
    }
    u_out.assign(static_cast<std::size_t>(P) * d, 0.0);
    fb.project(targets.data(), d, u_out.data());
}

// Per-step fitted designs; they depend only on the ensemble, so one cache
// serves every slice and every Picard iteration.
struct BasisCache {
    std::vector<FittedBasis> steps;  // index 0..M-1

    static BasisCache build(const PathEnsemble& ens, const RegressionBasis& basis) {
        BasisCache c;
        const int P = ens.n_paths, n = ens.n, M = ens.grid.steps;
        c.steps.reserve(static_cast<std::size_t>(M));
        std::vector<double> features(static_cast<std::size_t>(P) * n);
        for (int i = 0; i < M; ++i) {
            for (int p = 0; p < P; ++p)
                for (int cc = 0; cc < n; ++cc) features[static_cast<std::size_t>(p) * n + cc] = ens.state(p, i)[cc];
            c.steps.emplace_back(features.data(), P, n, basis);
        }
        return c;
    }
};

// Backward induction over the whole grid.  The generator's dr-integral uses
// a theta-weighted two-point rule; the slice's own value enters
// semi-implicitly through one provisional regression and one re-evaluation.
// The z argument is the time-t_i projection throughout (predictable
// integrand convention).
inline SliceResult solve_slice(const PathEnsemble& ens, const ProblemSpec& spec,
                               const std::vector<double>& terminal,
                               const SliceGenFn& gen, const RegressionBasis& basis,
                               double theta, const std::string& label,
                               const BasisCache* cache = nullptr) {
    const int P = ens.n_paths, n = spec.n, d = spec.d, M = ens.grid.steps;
    if (static_cast<int>(terminal.size()) != P * d)
        throw ShapeError("solve_slice(" + label + "): terminal has wrong shape");
    const double dt = ens.grid.dt();

    SliceResult out;
    out.U.assign(static_cast<std::size_t>(M + 1) * P * d, 0.0);
    out.V.assign(static_cast<std::size_t>(M + 1) * P * n * d, 0.0);
    out.ortho_mean.assign(static_cast<std::size_t>(M), 0.0);
    out.ortho_cond_rms.assign(static_cast<std::size_t>(M), 0.0);

    std::copy(terminal.begin(), terminal.end(), out.U.begin() + static_cast<std::size_t>(M) * P * d);

    std::vector<double> features(static_cast<std::size_t>(P) * n);
    std::vector<double> vt(static_cast<std::size_t>(P) * n * d);
    std::vector<double> vfit(static_cast<std::size_t>(P) * n * d);
    std::vector<double> gright(static_cast<std::size_t>(P) * d);
    std::vector<double> gleft(static_cast<std::size_t>(P) * d);
    std::vector<double> targets(static_cast<std::size_t>(P) * d);
    std::vector<double> uprov(static_cast<std::size_t>(P) * d);
    std::vector<double> resid(static_cast<std::size_t>(P) * d);

    std::optional<FittedBasis> local;
    for (int i = M - 1; i >= 0; --i) {
        const double t = ens.grid.nodes[static_cast<std::size_t>(i)];
        const double* next = out.U.data() + static_cast<std::size_t>(i + 1) * P * d;

        if (!cache) {
            for (int p = 0; p < P; ++p)
                for (int c = 0; c < n; ++c) features[static_cast<std::size_t>(p) * n + c] = ens.state(p, i)[c];
            local.emplace(features.data(), P, n, basis);
        }
        const FittedBasis& fb = cache ? cache->steps[static_cast<std::size_t>(i)] : *local;
        if (P < fb.n_columns())
            throw DataError("solve_slice(" + label + "): fewer paths than basis functions");

        // increment projection first: v_i serves as the predictable z in both
        // generator evaluations of the step
        for (int p = 0; p < P; ++p) {
            const double* dx = ens.incr(p, i);
            const double* nv = next + static_cast<std::size_t>(p) * d;
            double* row = vt.data() + static_cast<std::size_t>(p) * n * d;
            for (int a = 0; a < n; ++a)
                for (int c = 0; c < d; ++c) row[static_cast<std::size_t>(a) * d + c] = dx[a] * nv[c];
        }
        fb.project(vt.data(), n * d, vfit.data());
        double* vi = out.V.data() + static_cast<std::size_t>(i) * P * n * d;
        for (int p = 0; p < P; ++p)
            detail::project_z_row(spec, t, ens.state(p, i),
                                  vfit.data() + static_cast<std::size_t>(p) * n * d, dt,
                                  vi + static_cast<std::size_t>(p) * n * d);

        for (int p = 0; p < P; ++p)
            gen(i + 1, p, next + static_cast<std::size_t>(p) * d, vi + static_cast<std::size_t>(p) * n * d,
                gright.data() + static_cast<std::size_t>(p) * d);

        // provisional value, then one re-evaluation of the left generator
        for (int p = 0; p < P; ++p)
            for (int c = 0; c < d; ++c)
                targets[static_cast<std::size_t>(p) * d + c] =
                    next[static_cast<std::size_t>(p) * d + c] + dt * (1.0 - theta) * gright[static_cast<std::size_t>(p) * d + c];
        fb.project(targets.data(), d, uprov.data());

        double* ui = out.U.data() + static_cast<std::size_t>(i) * P * d;
        for (int sweep = 0; sweep < 2; ++sweep) {
            for (int p = 0; p < P; ++p)
                gen(i, p, uprov.data() + static_cast<std::size_t>(p) * d, vi + static_cast<std::size_t>(p) * n * d,
                    gleft.data() + static_cast<std::size_t>(p) * d);
            for (int p = 0; p < P; ++p)
                for (int c = 0; c < d; ++c)
                    targets[static_cast<std::size_t>(p) * d + c] =
                        next[static_cast<std::size_t>(p) * d + c] +
                        dt * ((1.0 - theta) * gright[static_cast<std::size_t>(p) * d + c] +
                              theta * gleft[static_cast<std::size_t>(p) * d + c]);
            fb.project(targets.data(), d, ui);
            double change = 0.0;
            for (int k = 0; k < P * d; ++k) change = std::max(change, std::abs(ui[k] - uprov[static_cast<std::size_t>(k)]));
            if (change > 1e6)
                throw DivergenceError("solve_slice(" + label + "): inner sweep change " +
                                      std::to_string(change) + " at step " + std::to_string(i));
            std::copy(ui, ui + static_cast<std::size_t>(P) * d, uprov.begin());
        }

        // step residual: value_{i+1} + g dt - value_i - v.dX, raw ensemble
        // mean and its basis-conditioned part
        double meanacc = 0.0;
        for (int c = 0; c < d; ++c) {
            double mc = 0.0;
            for (int p = 0; p < P; ++p) {
                const double* dx = ens.incr(p, i);
                const double* vr = vi + static_cast<std::size_t>(p) * n * d;
                double vdx = 0.0;
                for (int a = 0; a < n; ++a) vdx += vr[static_cast<std::size_t>(a) * d + c] * dx[a];
                const double r = targets[static_cast<std::size_t>(p) * d + c] - ui[static_cast<std::size_t>(p) * d + c] - vdx;
                resid[static_cast<std::size_t>(p) * d + c] = r;
                mc += r;
            }
            mc /= P;
            meanacc += mc * mc;
        }
        out.ortho_mean[static_cast<std::size_t>(i)] = std::sqrt(meanacc);
        fb.project(resid.data(), d, targets.data());  // reuse buffer for conditioned residual
        double rms = 0.0;
        for (int k = 0; k < P * d; ++k) rms += targets[static_cast<std::size_t>(k)] * targets[static_cast<std::size_t>(k)];
        out.ortho_cond_rms[static_cast<std::size_t>(i)] = std::sqrt(rms / (static_cast<double>(P) * d));
    }
    return out;
}

} // namespace volterra
