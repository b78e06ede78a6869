#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "volterra/errors.hpp"

namespace volterra {

// Coefficient callables write into caller-provided buffers; all matrices are
// row-major. Shapes: sigma -> n x m, generator/free term -> d, Jacobians -> d x d,
// z and v arguments -> n x d.
using SigmaFn = std::function<void(double t, const double* x, double* out_nm)>;
using DriftFn = std::function<void(double t, const double* x, double* out_m)>;
using GenFn   = std::function<void(double s, double t, const double* x,
                                   const double* y, const double* z,
                                   const double* u, const double* v, double* out_d)>;
using JacFn   = std::function<void(double s, double t, const double* x,
                                   const double* y, const double* z,
                                   const double* u, const double* v, double* out_dd)>;
using DataFn  = std::function<void(double s, const double* x, double* out_d)>;

struct LipschitzInfo {
    double L_f = 1.0;
    double L_dsf = 0.0;
};

// Full problem statement for the type-I equation with diagonal coupling:
// the generator signature is f(s, t, x, y, z, u, v) where (y, z) is the
// running slice and (u, v) the diagonal pair.  Partial derivatives in
// (s, y, z) are part of the data (they assemble the derivative-family
// generator); they are only exercised by the full solver path.
struct ProblemSpec {
    int n = 1;  // state dimension
    int m = 1;  // Brownian dimension
    int d = 1;  // solution dimension

    std::vector<double> x0;
    double sigma_max = 1.0;  // declared bound on |sigma|

    SigmaFn sigma;
    DriftFn drift_b;  // may be empty: b == 0

    GenFn f;
    GenFn ds_f;
    JacFn dy_f;
    std::vector<JacFn> dz_f;  // one per state row i: d/d z_{:i}

    DataFn xi;
    DataFn ds_xi;

    LipschitzInfo lipschitz;
    bool z_diagonal_in_generator = true;

    void validate() const {
        if (n < 1 || m < 1 || d < 1) throw ConfigError("ProblemSpec: dims must be >= 1");
        if (static_cast<int>(x0.size()) != n)
            throw ShapeError("ProblemSpec: x0 has size " + std::to_string(x0.size()) +
                             ", expected n = " + std::to_string(n));
        if (!sigma) throw ConfigError("ProblemSpec: sigma is required");
        if (!f) throw ConfigError("ProblemSpec: generator f is required");
        if (!xi) throw ConfigError("ProblemSpec: free term xi is required");
    }

    bool has_nabla_data() const { return static_cast<bool>(ds_f) && static_cast<bool>(dy_f) && !dz_f.empty(); }
};

// nabla_f(s,t,x,u',v',y,z,u,v) = ds_f + dy_f * u' + sum_i dz_f[i] * v'_{i:}
// evaluated at (s,t,x,y,z,u,v); (u',v') is the derivative-family point.
inline void assemble_nabla_f(const ProblemSpec& spec,
                             double s, double t, const double* x,
                             const double* uprime, const double* vprime,
                             const double* y, const double* z,
                             const double* u, const double* v,
                             double* out_d) {
    const int d = spec.d, n = spec.n;
    if (!spec.ds_f) throw ShapeError("assemble_nabla_f: ds_f missing from spec");
    if (!spec.dy_f) throw ShapeError("assemble_nabla_f: dy_f missing from spec");
    if (static_cast<int>(spec.dz_f.size()) != n)
        throw ShapeError("assemble_nabla_f: dz_f supplies " + std::to_string(spec.dz_f.size()) +
                         " row derivatives, expected n = " + std::to_string(n));

    spec.ds_f(s, t, x, y, z, u, v, out_d);

    std::vector<double> jac(static_cast<std::size_t>(d) * d);
    spec.dy_f(s, t, x, y, z, u, v, jac.data());
    for (int r = 0; r < d; ++r) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += jac[static_cast<std::size_t>(r) * d + c] * uprime[c];
        out_d[r] += acc;
    }
    for (int i = 0; i < n; ++i) {
        if (!spec.dz_f[static_cast<std::size_t>(i)])
            throw ShapeError("assemble_nabla_f: dz_f[" + std::to_string(i) + "] is empty");
        spec.dz_f[static_cast<std::size_t>(i)](s, t, x, y, z, u, v, jac.data());
        const double* vrow = vprime + static_cast<std::size_t>(i) * d;  // v'_{i:}
        for (int r = 0; r < d; ++r) {
            double acc = 0.0;
            for (int c = 0; c < d; ++c) acc += jac[static_cast<std::size_t>(r) * d + c] * vrow[c];
            out_d[r] += acc;
        }
    }
}

// Folds the Girsanov drift term into the generator: f + z^T sigma b, and the
// matching v'^T sigma b into the derivative family (the map z -> z^T sigma b
// is linear with s-independent coefficients).  Returns spec unchanged when no
// drift is declared.
inline ProblemSpec with_drift_folded(const ProblemSpec& spec) {
    if (!spec.drift_b) return spec;
    ProblemSpec out = spec;
    const int n = spec.n, m = spec.m, d = spec.d;
    SigmaFn sig = spec.sigma;
    DriftFn b = spec.drift_b;

    auto sigma_b = [sig, b, n, m](double t, const double* x, double* out_n) {
        std::vector<double> sg(static_cast<std::size_t>(n) * m), bv(static_cast<std::size_t>(m));
        sig(t, x, sg.data());
        b(t, x, bv.data());
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int k = 0; k < m; ++k) acc += sg[static_cast<std::size_t>(i) * m + k] * bv[k];
            out_n[i] = acc;
        }
    };

    GenFn f0 = spec.f;
    out.f = [f0, sigma_b, n, d](double s, double t, const double* x, const double* y,
                                const double* z, const double* u, const double* v, double* o) {
        f0(s, t, x, y, z, u, v, o);
        std::vector<double> sb(static_cast<std::size_t>(n));
        sigma_b(t, x, sb.data());
        for (int k = 0; k < d; ++k) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += z[static_cast<std::size_t>(i) * d + k] * sb[i];
            o[k] += acc;
        }
    };
    // d/dz_{:i} of z^T sigma b is (sigma b)_i * I.
    out.dz_f.clear();
    for (int i = 0; i < n; ++i) {
        JacFn base = (static_cast<std::size_t>(i) < spec.dz_f.size()) ? spec.dz_f[static_cast<std::size_t>(i)] : JacFn{};
        out.dz_f.push_back([base, sigma_b, n, d, i](double s, double t, const double* x, const double* y,
                                                    const double* z, const double* u, const double* v, double* o) {
            if (base) base(s, t, x, y, z, u, v, o);
            else std::fill(o, o + static_cast<std::size_t>(d) * d, 0.0);
            std::vector<double> sb(static_cast<std::size_t>(n));
            sigma_b(t, x, sb.data());
            for (int r = 0; r < d; ++r) o[static_cast<std::size_t>(r) * d + r] += sb[i];
        });
    }
    return out;
}

} // namespace volterra
