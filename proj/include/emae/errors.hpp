#ifndef EMAE_ERRORS_HPP
#define EMAE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace emae {

// Invalid configuration, bad flag values, incompatible shapes of a run setup.
// CLI maps this family to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape mismatch; message carries both shapes.
struct ShapeError : ConfigError {
    explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

// Checkpoint does not match the requested model/data geometry.
struct IncompatibleCheckpoint : ConfigError {
    explicit IncompatibleCheckpoint(const std::string& msg) : ConfigError(msg) {}
};

// Non-finite loss or gradient during optimization. CLI maps to exit code 3.
struct NumericError : std::runtime_error {
    std::string where;
    NumericError(const std::string& msg, std::string where_ = "")
        : std::runtime_error(msg), where(std::move(where_)) {}
};

// Malformed on-disk artifact (dataset, checkpoint). CLI maps to exit code 4.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failures. CLI maps to exit code 4.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace emae

#endif  // EMAE_ERRORS_HPP
