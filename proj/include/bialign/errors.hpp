#pragma once

#include <stdexcept>
#include <string>

namespace bialign {

// Error hierarchy; the CLI maps each class to a distinct exit code.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration: invalid model/align settings, family overlap, flag conflicts.
struct ConfigError : Error {
    using Error::Error;
};

// Bad or missing data: unreadable files, malformed records, infeasible generation.
struct DataError : Error {
    using Error::Error;
};

// Numerical aborts: non-finite losses or gradients, domain violations.
struct NumericalError : Error {
    using Error::Error;
};

// API misuse: backward on a non-recorded tensor, shape mismatches, bad spans.
struct UsageError : Error {
    using Error::Error;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int data = 3;
inline constexpr int numerical = 4;
inline constexpr int usage = 64;
} // namespace exit_code

} // namespace bialign
