#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "volterra/errors.hpp"

namespace volterra {

// Uniform grid t_0 = 0 < t_1 < ... < t_M = T.
struct TimeGrid {
    double horizon = 0.0;
    int steps = 0;
    std::vector<double> nodes;

    static TimeGrid uniform(double T, int M) {
        if (!(T > 0.0)) throw ConfigError("TimeGrid: horizon T must be > 0, got " + std::to_string(T));
        if (M < 1) throw ConfigError("TimeGrid: steps M must be >= 1, got " + std::to_string(M));
        TimeGrid g;
        g.horizon = T;
        g.steps = M;
        g.nodes.resize(static_cast<std::size_t>(M) + 1);
        for (int i = 0; i <= M; ++i) g.nodes[static_cast<std::size_t>(i)] = T * static_cast<double>(i) / M;
        g.nodes.back() = T;
        return g;
    }

    double dt() const { return horizon / steps; }
};

// Parameter grid s_0 = 0 < ... < s_J = T for the family index s.
// For diagonal extraction and the PDE backend the nodes must coincide with
// the TimeGrid nodes; `aligned_with` records that.
struct ParamGrid {
    std::vector<double> nodes;

    static ParamGrid uniform(double T, int J) {
        if (!(T > 0.0)) throw ConfigError("ParamGrid: horizon T must be > 0");
        if (J < 1) throw ConfigError("ParamGrid: node count J must be >= 1");
        ParamGrid g;
        g.nodes.resize(static_cast<std::size_t>(J) + 1);
        for (int j = 0; j <= J; ++j) g.nodes[static_cast<std::size_t>(j)] = T * static_cast<double>(j) / J;
        g.nodes.back() = T;
        return g;
    }

    static ParamGrid like(const TimeGrid& t) {
        ParamGrid g;
        g.nodes = t.nodes;
        return g;
    }

    int segments() const { return static_cast<int>(nodes.size()) - 1; }
    double ds() const { return (nodes.back() - nodes.front()) / segments(); }

    bool subset_of(const TimeGrid& t, double tol = 1e-12) const {
        for (double s : nodes) {
            bool found = false;
            for (double u : t.nodes)
                if (std::abs(s - u) <= tol * (1.0 + std::abs(u))) { found = true; break; }
            if (!found) return false;
        }
        return true;
    }

    // Node-for-node identical to the time grid (required by the solvers that
    // read diagonals by direct slice indexing).
    bool matches(const TimeGrid& t, double tol = 1e-12) const {
        if (nodes.size() != t.nodes.size()) return false;
        for (std::size_t k = 0; k < nodes.size(); ++k)
            if (std::abs(nodes[k] - t.nodes[k]) > tol * (1.0 + std::abs(t.nodes[k]))) return false;
        return true;
    }
};

inline void require_subset(const ParamGrid& s, const TimeGrid& t) {
    if (!s.subset_of(t))
        throw ConfigError("ParamGrid nodes are not a subset of TimeGrid nodes; alignment was requested");
}

inline void require_matching(const ParamGrid& s, const TimeGrid& t, const char* who) {
    if (!s.matches(t))
        throw ConfigError(std::string(who) + " requires the s-grid to coincide with the time grid (set J = M)");
}

} // namespace volterra
