#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace grace {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

/// A public operation produced or was handed a non-finite value.
struct NumericError : Error {
    using Error::Error;
};

/// Operation called on an object in the wrong state (frozen model, missing grad).
struct StateError : Error {
    using Error::Error;
};

/// Out-of-range index (class label, layer index).
struct RangeError : Error {
    using Error::Error;
};

/// Invalid argument value (empty dataset, bad spec).
struct ArgumentError : Error {
    using Error::Error;
};

/// Invalid run configuration.
struct ConfigError : Error {
    using Error::Error;
};

/// Corrupt or version-mismatched file.
struct FormatError : Error {
    using Error::Error;
};

/// Caller violated an operation's precondition.
struct ContractError : Error {
    using Error::Error;
};

/// Same query edited with contradictory labels; unsatisfiable split.
struct EditConflictError : Error {
    using Error::Error;
};

/// Iterative training failed (non-finite loss); message carries the step index.
struct TrainingError : Error {
    using Error::Error;
};

/// Filesystem failure.
struct IoError : Error {
    using Error::Error;
};

// 64-bit FNV-1a over raw bytes. Used for frozen-weight digests.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<std::uint64_t>(p[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::vector<double>& v, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    return v.empty() ? seed : fnv1a64(v.data(), v.size() * sizeof(double), seed);
}

// Shortest decimal form that parses back to the same double; "nan"/"inf"
// come out as those literals. Used by the CSV writers.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace grace
