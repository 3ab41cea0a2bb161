#pragma once

#include <stdexcept>
#include <string>

namespace dim {

// Shape or dimension disagreement between tensors or model blocks.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input outside an operation's mathematical domain (log of non-positive, |rho| >= 1, ...).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or violated numeric guards during computation.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration. `line` is 0 when the error is not tied to a file line.
struct ConfigError : std::runtime_error {
    int line;
    explicit ConfigError(const std::string& msg, int line_no = 0)
        : std::runtime_error(msg), line(line_no) {}
};

// Unreadable, truncated, or version-mismatched files (checkpoints, datasets).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dim
