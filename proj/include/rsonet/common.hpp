#ifndef RSONET_COMMON_HPP
#define RSONET_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rsonet {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/operator contract violations (axis mismatches, bad extents).
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct ValueError : Error {
    explicit ValueError(const std::string& msg) : Error(msg) {}
};

// Bad or inconsistent run configuration (CLI exit code 1).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Missing/unreadable datasets, images, checkpoints (CLI exit code 2).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Non-finite values during optimization (CLI exit code 3).
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

struct CheckpointError : Error {
    enum class Kind { BadMagic, Version, Checksum, Truncated, Inventory, Io };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

// Intra-op worker cap, RSONET_THREADS (default 1: bit-deterministic runs).
inline int max_threads() {
    static const int cached = [] {
        if (const char* env = std::getenv("RSONET_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        return 1;
    }();
    return cached;
}

// Splits [0,n) into fixed-size chunks and distributes them over workers.
// Chunk geometry depends only on n, never on the worker count, so any
// per-chunk computation yields bit-identical results for 1..k threads.
template <class F>
void parallel_chunks(std::int64_t n, std::int64_t chunk, F&& body) {
    if (n <= 0) return;
    const int workers = max_threads();
    const std::int64_t nchunks = (n + chunk - 1) / chunk;
    if (workers <= 1 || nchunks <= 1) {
        for (std::int64_t c = 0; c < nchunks; ++c)
            body(c * chunk, std::min(n, (c + 1) * chunk));
        return;
    }
    std::vector<std::thread> pool;
    const int k = static_cast<int>(std::min<std::int64_t>(workers, nchunks));
    pool.reserve(k);
    for (int t = 0; t < k; ++t) {
        pool.emplace_back([=, &body] {
            for (std::int64_t c = t; c < nchunks; c += k)
                body(c * chunk, std::min(n, (c + 1) * chunk));
        });
    }
    for (auto& th : pool) th.join();
}

template <class T>
bool all_finite(const std::vector<T>& v) {
    for (const T& x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

// Debug builds verify forward ops leave only finite values behind.
template <class T>
void debug_assert_finite([[maybe_unused]] const std::vector<T>& v,
                         [[maybe_unused]] const char* what) {
#ifndef NDEBUG
    if (!all_finite(v)) throw NumericError(std::string(what) + " produced a non-finite value");
#endif
}

using Rng = std::mt19937;

// Engine keyed by a list of 64-bit values (seed_seq wants one uniform type).
inline Rng seeded_rng(std::initializer_list<std::uint64_t> keys) {
    std::seed_seq seq(keys.begin(), keys.end());
    return Rng(seq);
}

}  // namespace rsonet

#endif
