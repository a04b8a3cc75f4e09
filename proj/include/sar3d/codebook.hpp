#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sar3d/common.hpp"

namespace sar3d {

// Shared quantization codebook. Rows are l2-normalized on load; quantization
// and lookup are pure, so one immutable instance serves all scales, planes
// and threads.
struct Codebook {
    int vocab = 0;     // V
    int code_dim = 0;  // C
    std::vector<float> entries;  // V x C row-major

    Codebook() = default;
    Codebook(int v, int c) : vocab(v), code_dim(c), entries(static_cast<size_t>(v) * c, 0.0f) {
        if (v < 1 || c < 1) throw ShapeError("Codebook: V and C must be >= 1");
    }

    float* row(int i) { return entries.data() + static_cast<size_t>(i) * code_dim; }
    const float* row(int i) const { return entries.data() + static_cast<size_t>(i) * code_dim; }
};

// Normalizes every row in place. Zero or non-finite rows are invalid input.
inline void normalize_codebook_rows(Codebook& cb) {
    for (int v = 0; v < cb.vocab; ++v) {
        float* r = cb.row(v);
        double s = 0.0;
        for (int c = 0; c < cb.code_dim; ++c) {
            if (!std::isfinite(r[c])) throw InvalidCode("codebook row " + std::to_string(v) + " is not finite");
            s += static_cast<double>(r[c]) * r[c];
        }
        if (s == 0.0) throw InvalidCode("codebook row " + std::to_string(v) + " is zero");
        double inv = 1.0 / std::sqrt(s);
        for (int c = 0; c < cb.code_dim; ++c) r[c] = static_cast<float>(r[c] * inv);
    }
}

// Exact nearest-code search: full scan, squared distances accumulated in
// double, ties resolved to the lowest index. Over unit-norm rows the result
// depends only on the feature's direction; the zero-norm query maps to the
// designated null slot, index 0.
inline int quantize_nearest(const float* feature, const Codebook& cb) {
    double qnorm = 0.0;
    for (int c = 0; c < cb.code_dim; ++c) {
        if (!std::isfinite(feature[c])) throw InvalidCode("quantize_nearest: non-finite feature");
        qnorm += static_cast<double>(feature[c]) * feature[c];
    }
    if (qnorm == 0.0) return 0;

    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int v = 0; v < cb.vocab; ++v) {
        const float* r = cb.row(v);
        double d = 0.0;
        for (int c = 0; c < cb.code_dim; ++c) {
            double diff = static_cast<double>(feature[c]) - r[c];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = v;
        }
    }
    return best;
}

inline int quantize_nearest(const std::vector<float>& feature, const Codebook& cb) {
    if (static_cast<int>(feature.size()) != cb.code_dim) {
        throw ShapeError("quantize_nearest: feature dimension mismatch");
    }
    return quantize_nearest(feature.data(), cb);
}

inline const float* lookup(int index, const Codebook& cb) {
    if (index < 0 || index >= cb.vocab) {
        throw IndexError("lookup: token " + std::to_string(index) + " outside [0, " +
                         std::to_string(cb.vocab) + ")");
    }
    return cb.row(index);
}

}  // namespace sar3d
