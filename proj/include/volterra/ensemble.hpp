#pragma once

#include <cstdint>
#include <vector>

#include "volterra/grids.hpp"

namespace volterra {

// Simulated forward paths.  Layout: states[p][i][comp] and dX[p][i][comp],
// flattened row-major; states holds M+1 nodes per path, dX holds M increments.
// Invariant: states[p][i+1] = states[p][i] + dX[p][i] exactly (bitwise sums).
struct PathEnsemble {
    TimeGrid grid;
    int n_paths = 0;
    int n = 0;
    std::uint64_t seed = 0;
    std::vector<double> states;
    std::vector<double> dX;

    const double* state(int p, int i) const {
        return states.data() + (static_cast<std::size_t>(p) * (grid.steps + 1) + i) * n;
    }
    double* state(int p, int i) {
        return states.data() + (static_cast<std::size_t>(p) * (grid.steps + 1) + i) * n;
    }
    const double* incr(int p, int i) const {
        return dX.data() + (static_cast<std::size_t>(p) * grid.steps + i) * n;
    }
    double* incr(int p, int i) {
        return dX.data() + (static_cast<std::size_t>(p) * grid.steps + i) * n;
    }
};

} // namespace volterra
