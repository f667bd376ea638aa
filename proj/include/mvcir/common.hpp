#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvcir {

using Vec = std::vector<double>;
using TokenList = std::vector<int>;
using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Error types. Constructors take a human-readable message; the CLI maps all
// of these to exit code 1.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid argument values (bad bounds, mismatched shapes, tau <= 0, ...).
struct ParameterError : Error {
    using Error::Error;
};

/// Malformed persisted data. Carries the 1-based line number when known.
struct ParseError : Error {
    int line = 0;
    ParseError(const std::string& msg, int line_no)
        : Error("line " + std::to_string(line_no) + ": " + msg), line(line_no) {}
};

/// Sequence exceeds a configured capacity (max_seq_len).
struct CapacityError : Error {
    using Error::Error;
};

/// Position or index out of range.
struct IndexError : Error {
    using Error::Error;
};

/// Referenced entity (product id) does not exist.
struct LookupError : Error {
    using Error::Error;
};

/// Dataset-level problems (empty split, empty gallery, missing truth).
struct DataError : Error {
    using Error::Error;
};

/// Inconsistent configuration wiring (loss term supplied while its gate is off).
struct ConfigError : Error {
    using Error::Error;
};

/// A pluggable client violated its protocol (selected an id outside the
/// candidate list).
struct ProtocolError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// RNG helpers. All randomness in the project flows through an explicitly
// seeded mt19937_64 so every operation is reproducible.
// ---------------------------------------------------------------------------

inline double uniform01(Rng& rng) {
    // 53-bit mantissa draw, uniform in [0,1).
    return double(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
    if (hi < lo) throw ParameterError("uniform_int: hi < lo");
    const uint64_t span = uint64_t(hi - lo) + 1;
    return lo + int(rng() % span);
}

inline double gauss(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return n(rng);
}

// ---------------------------------------------------------------------------
// Small vector math used across modules.
// ---------------------------------------------------------------------------

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw ParameterError("dot: dimension mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Vec& a) {
    double s = 0.0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
}

/// Cosine similarity with the project-wide convention that any zero-norm
/// operand scores 0 (keeps degenerate mean-pooled vectors NaN-free).
inline double cosine(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw ParameterError("cosine: dimension mismatch");
    const double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

}  // namespace mvcir
