#pragma once

#include <stdexcept>
#include <string>

namespace ehr {

// Validation failures: bad configs, bad data, violated invariants. The CLI
// maps these to exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SplitError : std::runtime_error {
    explicit SplitError(const std::string& msg) : std::runtime_error(msg) {}
};

struct OptimError : std::runtime_error {
    explicit OptimError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateDirectionError : std::runtime_error {
    explicit DegenerateDirectionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Parse errors carry the offending line number when one exists.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failures. The CLI maps these to exit code 2.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ehr
