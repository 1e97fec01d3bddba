#pragma once

#include <stdexcept>
#include <string>

namespace cipl {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension or extent mismatch between tensors.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid value fed to a kernel (log of non-positive, non-finite input).
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Prototype projection could not satisfy the distinct-source guarantee.
struct ProjectionError : Error {
    explicit ProjectionError(const std::string& msg) : Error(msg) {}
};

struct SamplingError : Error {
    explicit SamplingError(const std::string& msg) : Error(msg) {}
};

struct GenerationError : Error {
    explicit GenerationError(const std::string& msg) : Error(msg) {}
};

}  // namespace cipl
