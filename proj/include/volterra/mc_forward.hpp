#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "volterra/ensemble.hpp"
#include "volterra/errors.hpp"
#include "volterra/problem.hpp"
#include "volterra/rng.hpp"

namespace volterra {

// Euler-Maruyama for the driftless martingale dX = sigma(t, X) dB.
// sigma is sampled at the left node (predictable integrand); increments are
// Normal(0, dt I_m) keyed by (seed, path, step, component).
inline PathEnsemble simulate_paths(const ProblemSpec& spec, const TimeGrid& grid,
                                   int n_paths, std::uint64_t seed) {
    spec.validate();
    if (n_paths < 1) throw ConfigError("simulate_paths: n_paths must be >= 1");

    const int n = spec.n, m = spec.m, M = grid.steps;
    const double dt = grid.dt();
    const double sdt = std::sqrt(dt);

    PathEnsemble ens;
    ens.grid = grid;
    ens.n_paths = n_paths;
    ens.n = n;
    ens.seed = seed;
    ens.states.assign(static_cast<std::size_t>(n_paths) * (M + 1) * n, 0.0);
    ens.dX.assign(static_cast<std::size_t>(n_paths) * M * n, 0.0);

    std::vector<double> sg(static_cast<std::size_t>(n) * m);
    std::vector<double> db(static_cast<std::size_t>(m));

    for (int p = 0; p < n_paths; ++p) {
        double* x = ens.state(p, 0);
        for (int c = 0; c < n; ++c) x[c] = spec.x0[static_cast<std::size_t>(c)];
        for (int i = 0; i < M; ++i) {
            const double* xi_ = ens.state(p, i);
            spec.sigma(grid.nodes[static_cast<std::size_t>(i)], xi_, sg.data());
            for (double vv : sg)
                if (!std::isfinite(vv))
                    throw SimulationError("sigma evaluated non-finite at path " + std::to_string(p) +
                                          ", step " + std::to_string(i));
            for (int k = 0; k < m; ++k)
                db[static_cast<std::size_t>(k)] =
                    sdt * gaussian_at(seed, static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(i),
                                      static_cast<std::uint64_t>(k));
            double* dx = ens.incr(p, i);
            for (int c = 0; c < n; ++c) {
                double acc = 0.0;
                for (int k = 0; k < m; ++k) acc += sg[static_cast<std::size_t>(c) * m + k] * db[static_cast<std::size_t>(k)];
                dx[c] = acc;
            }
            double* xn = ens.state(p, i + 1);
            for (int c = 0; c < n; ++c) xn[c] = xi_[c] + dx[c];
        }
    }
    return ens;
}

// Ensemble average of | sum_i dX_i dX_i^T - sum_i sigma sigma^T(t_i, X_i) dt |_F.
// Contract: O(M^{-1/2}) in root mean square as the grid refines.
inline double quadratic_variation_check(const PathEnsemble& ens, const ProblemSpec& spec) {
    if (ens.n != spec.n) throw ShapeError("quadratic_variation_check: ensemble/state dimension mismatch");
    const int n = spec.n, m = spec.m, M = ens.grid.steps;
    const double dt = ens.grid.dt();

    std::vector<double> sg(static_cast<std::size_t>(n) * m);
    std::vector<double> acc(static_cast<std::size_t>(n) * n);
    double total = 0.0;
    for (int p = 0; p < ens.n_paths; ++p) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int i = 0; i < M; ++i) {
            const double* dx = ens.incr(p, i);
            spec.sigma(ens.grid.nodes[static_cast<std::size_t>(i)], ens.state(p, i), sg.data());
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b) {
                    double ssT = 0.0;
                    for (int k = 0; k < m; ++k)
                        ssT += sg[static_cast<std::size_t>(a) * m + k] * sg[static_cast<std::size_t>(b) * m + k];
                    acc[static_cast<std::size_t>(a) * n + b] += dx[a] * dx[b] - ssT * dt;
                }
        }
        double fro = 0.0;
        for (double vv : acc) fro += vv * vv;
        total += std::sqrt(fro);
    }
    return total / ens.n_paths;
}

} // namespace volterra
