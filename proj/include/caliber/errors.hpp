#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace caliber {

// Exception taxonomy used across the library. The CLI maps these onto
// process exit codes (see tools/caliber.cpp).

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File/stream parse failures. Carries the byte offset where parsing stopped.
struct FormatError : std::runtime_error {
    std::size_t byte_offset;
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
};

struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// All audio frames of a sample are masked out; callers decide the fallback.
struct ContextError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Required input missing for the requested mode (e.g. audio-free sample fed
// to an audio-conditioned variant).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace caliber
