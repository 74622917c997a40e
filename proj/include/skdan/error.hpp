#pragma once

#include <stdexcept>
#include <string>

namespace skdan {

// Error hierarchy used across the library. Every error carries a stable
// machine-readable category string that the CLI maps to an exit code.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& msg)
        : std::runtime_error(msg), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

// Incompatible tensor/matrix shapes (e.g. matmul inner dimensions).
struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error("dimension", msg) {}
};

// Sequence too short for the requested operation (pooling, conv, resampling).
struct LengthError : Error {
    explicit LengthError(const std::string& msg) : Error("length", msg) {}
};

// Malformed or inconsistent input data (non-monotone time, empty domain, ...).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data", msg) {}
};

// Input file does not match the documented schema (missing CSV column, ...).
struct SchemaError : Error {
    explicit SchemaError(const std::string& msg) : Error("schema", msg) {}
};

// Invalid configuration value (dropout rate out of range, zero trials, ...).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

// Filesystem failure (missing path, unreadable file).
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};

// Numerical breakdown during training (NaN/Inf loss).
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

}  // namespace skdan
