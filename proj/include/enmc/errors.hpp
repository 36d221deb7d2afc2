#pragma once

#include <stdexcept>
#include <string>

namespace enmc {

// Error categories map 1:1 onto the CLI's machine-parseable failure lines.
struct EnmcError : std::runtime_error {
    EnmcError(std::string cat, const std::string& msg)
        : std::runtime_error(msg), category(std::move(cat)) {}
    std::string category;
};

struct ParseError : EnmcError {
    explicit ParseError(const std::string& msg) : EnmcError("parse", msg) {}
};

struct ShapeError : EnmcError {
    explicit ShapeError(const std::string& msg) : EnmcError("shape", msg) {}
};

struct DomainError : EnmcError {
    explicit DomainError(const std::string& msg) : EnmcError("domain", msg) {}
};

struct ConfigError : EnmcError {
    explicit ConfigError(const std::string& msg) : EnmcError("config", msg) {}
};

struct StateError : EnmcError {
    explicit StateError(const std::string& msg) : EnmcError("state", msg) {}
};

struct DegenerateInputError : EnmcError {
    explicit DegenerateInputError(const std::string& msg) : EnmcError("degenerate-input", msg) {}
};

struct UndefinedMetricError : EnmcError {
    explicit UndefinedMetricError(const std::string& msg) : EnmcError("undefined-metric", msg) {}
};

struct GenerationError : EnmcError {
    explicit GenerationError(const std::string& msg) : EnmcError("generation", msg) {}
};

struct IoError : EnmcError {
    explicit IoError(const std::string& msg) : EnmcError("io", msg) {}
};

struct TrainingError : EnmcError {
    explicit TrainingError(const std::string& msg) : EnmcError("training", msg) {}
};

struct ReportError : EnmcError {
    explicit ReportError(const std::string& msg) : EnmcError("report", msg) {}
};

} // namespace enmc
