#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cass {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape / axis disagreement between tensors or layer specs.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Value outside its documented domain (percent > 100, severity < 0, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// Malformed or corrupt on-disk artifact (weight file, image, manifest).
class FormatError : public Error {
public:
    using Error::Error;
};

// Bad call arguments (empty batch list, empty vote list, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Prediction/label sets that do not describe the same hierarchy.
class ConsistencyError : public Error {
public:
    using Error::Error;
};

// Non-finite gradients or broken optimizer state; carries the parameter name.
class OptimizerError : public Error {
public:
    using Error::Error;
};

// Learning-rate range test could not produce a usable band.
class RangeError : public Error {
public:
    using Error::Error;
};

// Inpainting cannot make progress (e.g. fully masked image).
class InpaintError : public Error {
public:
    using Error::Error;
};

// Report text that is recognizably wrong (not merely unparseable).
// Carries the byte span of the offending fragment.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t begin, std::size_t end)
        : Error(msg + " [span " + std::to_string(begin) + ".." + std::to_string(end) + ")"),
          span_begin(begin),
          span_end(end) {}
    std::size_t span_begin = 0;
    std::size_t span_end = 0;
};

// ---------------------------------------------------------------------------
// Logging (CASS_LOG={error|info|debug}, default error)
// ---------------------------------------------------------------------------

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level();
void set_log_level(LogLevel lvl);
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

// ---------------------------------------------------------------------------
// Worker threads. Default 1: single-threaded runs are the deterministic
// reference configuration; parallel runs are deterministic for a fixed count.
// ---------------------------------------------------------------------------

int max_threads();
void set_max_threads(int n);

// Splits [0, n) into contiguous chunks, one worker per chunk. With
// max_threads() == 1 this is a plain serial loop. `fn` gets (begin, end).
template <typename Fn>
void parallel_for_chunks(std::int64_t n, Fn&& fn) {
    const int workers = max_threads();
    if (workers <= 1 || n <= 1) {
        fn(std::int64_t{0}, n);
        return;
    }
    const int used = static_cast<int>(std::min<std::int64_t>(workers, n));
    const std::int64_t chunk = (n + used - 1) / used;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(used));
    for (int t = 0; t < used; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

// Deterministic 64-bit mix for deriving per-patient / per-branch seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace cass
