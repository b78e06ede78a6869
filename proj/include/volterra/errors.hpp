#pragma once

#include <stdexcept>
#include <string>

namespace volterra {

// Error taxonomy mirrors the CLI exit codes: ConfigError -> 1,
// NonConvergenceError / DivergenceError -> 2, everything else is a bug
// in the caller's data and surfaces as a plain failure.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

struct SimulationError : Error {
    explicit SimulationError(const std::string& msg) : Error("simulation error: " + msg) {}
};

struct DivergenceError : Error {
    explicit DivergenceError(const std::string& msg) : Error("divergence: " + msg) {}
};

struct StateError : Error {
    explicit StateError(const std::string& msg) : Error("state error: " + msg) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

struct NonConvergenceError : Error {
    std::vector<double> trace;
    double achieved;
    NonConvergenceError(const std::string& msg, std::vector<double> tr, double dist)
        : Error("non-convergence: " + msg), trace(std::move(tr)), achieved(dist) {}
};

} // namespace volterra
