#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sar3d {

// ---------------------------------------------------------------------------
// Errors. Each maps to one failure class named in the public contracts; the
// CLI turns them into exit codes (format -> 2, shape -> 3, anything else -> 4).
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct InvalidPose : Error { using Error::Error; };
struct DegenerateRay : Error { using Error::Error; };
struct InvalidCode : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct InvalidTruncation : Error { using Error::Error; };
struct PrefixError : Error { using Error::Error; };
struct RangeError : Error { using Error::Error; };
struct InstructionError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Grid: dense row-major h x w x c float map. The workhorse container for
// images, feature planes and per-view tensors.
// ---------------------------------------------------------------------------

struct Grid {
    int h = 0, w = 0, c = 0;
    std::vector<float> data;

    Grid() = default;
    Grid(int h_, int w_, int c_, float fill = 0.0f)
        : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, fill) {
        if (h_ < 1 || w_ < 1 || c_ < 1) {
            throw ShapeError("Grid: dimensions must be >= 1");
        }
    }

    size_t size() const { return data.size(); }

    float& at(int y, int x, int ch) {
        return data[(static_cast<size_t>(y) * w + x) * c + ch];
    }
    float at(int y, int x, int ch) const {
        return data[(static_cast<size_t>(y) * w + x) * c + ch];
    }

    float* pixel(int y, int x) { return data.data() + (static_cast<size_t>(y) * w + x) * c; }
    const float* pixel(int y, int x) const {
        return data.data() + (static_cast<size_t>(y) * w + x) * c;
    }

    bool same_shape(const Grid& o) const { return h == o.h && w == o.w && c == o.c; }
};

inline void require_same_shape(const Grid& a, const Grid& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.h) + "x" +
                         std::to_string(a.w) + "x" + std::to_string(a.c) + " vs " +
                         std::to_string(b.h) + "x" + std::to_string(b.w) + "x" +
                         std::to_string(b.c) + ")");
    }
}

// ---------------------------------------------------------------------------
// Counter-based RNG. Every random draw in the library is a pure function of
// (seed, key_hi, key_lo), so parallel evaluation order cannot change results.
// Mixing is the splitmix64 finalizer applied over the three words.
// ---------------------------------------------------------------------------

inline uint64_t mix64(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
}

inline uint64_t counter_hash(uint64_t seed, uint64_t key_hi, uint64_t key_lo) {
    uint64_t h = mix64(seed + 0x9e3779b97f4a7c15ULL);
    h = mix64(h ^ (key_hi + 0xbf58476d1ce4e5b9ULL));
    h = mix64(h ^ (key_lo + 0x94d049bb133111ebULL));
    return h;
}

// Uniform in [0, 1), 53-bit resolution.
inline double counter_uniform(uint64_t seed, uint64_t key_hi, uint64_t key_lo) {
    return static_cast<double>(counter_hash(seed, key_hi, key_lo) >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two keyed uniforms.
inline double counter_normal(uint64_t seed, uint64_t key_hi, uint64_t key_lo) {
    double u1 = counter_uniform(seed, key_hi, key_lo);
    double u2 = counter_uniform(seed ^ 0x5851f42d4c957f2dULL, key_hi, key_lo);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// ---------------------------------------------------------------------------
// FNV-1a 64-bit, used for content hashes in sidecar files.
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

// ---------------------------------------------------------------------------
// parallel_for: items are independent and write to disjoint locations, so the
// result is identical for every thread count. Contiguous chunking keeps the
// per-item work assignment fixed.
// ---------------------------------------------------------------------------

template <typename Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    size_t nt = std::min<size_t>(static_cast<size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(nt);
    size_t chunk = (n + nt - 1) / nt;
    for (size_t t = 0; t < nt; ++t) {
        size_t lo = t * chunk;
        size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

inline bool all_finite(const std::vector<float>& v) {
    for (float x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace sar3d
