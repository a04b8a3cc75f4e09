#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "sar3d/codebook.hpp"
#include "sar3d/common.hpp"

namespace sar3d {

// ---------------------------------------------------------------------------
// Scale schedule: ordered (h_k, w_k) list, non-decreasing, ending at the
// latent resolution.
// ---------------------------------------------------------------------------

struct ScaleSchedule {
    std::vector<std::pair<int, int>> scales;

    int count() const { return static_cast<int>(scales.size()); }
    int final_h() const { return scales.back().first; }
    int final_w() const { return scales.back().second; }

    void validate() const {
        if (scales.empty()) throw ShapeError("schedule must have at least one scale");
        for (size_t k = 0; k < scales.size(); ++k) {
            if (scales[k].first < 1 || scales[k].second < 1) {
                throw ShapeError("schedule resolutions must be >= 1");
            }
            if (k > 0 && (scales[k].first < scales[k - 1].first ||
                          scales[k].second < scales[k - 1].second)) {
                throw ShapeError("schedule resolutions must be non-decreasing");
            }
        }
    }

    // The production schedule: ten square scales up to 16x16.
    static ScaleSchedule standard() {
        ScaleSchedule s;
        for (int n : {1, 2, 3, 4, 5, 6, 8, 10, 13, 16}) s.scales.push_back({n, n});
        return s;
    }
};

// ---------------------------------------------------------------------------
// Latent triplane and token pyramid.
// ---------------------------------------------------------------------------

struct LatentTriplane {
    std::vector<Grid> planes;  // 3 planes (1 in single-plane test mode), equal shapes

    void validate() const {
        if (planes.size() != 3 && planes.size() != 1) {
            throw ShapeError("latent triplane must have 3 planes (or 1 in single-plane mode)");
        }
        for (const auto& p : planes) {
            require_same_shape(planes[0], p, "latent triplane");
            if (!all_finite(p.data)) throw RangeError("latent triplane has non-finite values");
        }
    }

    int plane_count() const { return static_cast<int>(planes.size()); }
    int h() const { return planes[0].h; }
    int w() const { return planes[0].w; }
    int c() const { return planes[0].c; }

    static LatentTriplane zeros(int planes, int h, int w, int c) {
        LatentTriplane t;
        for (int i = 0; i < planes; ++i) t.planes.emplace_back(h, w, c);
        return t;
    }
};

// Tokens per scale in (plane, row, col) order; scales follow the schedule.
struct TokenPyramid {
    ScaleSchedule schedule;
    int planes = 0;
    int vocab = 0;
    std::vector<std::vector<int32_t>> scales;  // scales[k][plane*h_k*w_k + row*w_k + col]

    int scale_count() const { return static_cast<int>(scales.size()); }

    int32_t token(int k, int plane, int y, int x) const {
        const auto& [h, w] = schedule.scales[k];
        (void)h;
        return scales[k][(static_cast<size_t>(plane) * schedule.scales[k].first + y) * w + x];
    }

    size_t total_tokens() const {
        size_t n = 0;
        for (const auto& s : scales) n += s.size();
        return n;
    }

    void validate() const {
        schedule.validate();
        if (planes != 3 && planes != 1) {
            throw ShapeError("token pyramid must have 3 planes (or 1 in single-plane mode)");
        }
        if (scales.size() != schedule.scales.size()) {
            throw ShapeError("token pyramid scale count does not match schedule");
        }
        for (size_t k = 0; k < scales.size(); ++k) {
            size_t want = static_cast<size_t>(planes) * schedule.scales[k].first *
                          schedule.scales[k].second;
            if (scales[k].size() != want) throw ShapeError("token map size mismatch at scale " + std::to_string(k));
            for (int32_t t : scales[k]) {
                if (t < 0 || t >= vocab) throw IndexError("token outside [0, V)");
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Per-(scale, plane) code filters: small odd-square convolutions applied to
// code maps after upsampling. An absent kernel is the exact identity.
// ---------------------------------------------------------------------------

struct ConvKernel {
    int out_c = 0, in_c = 0, kh = 0, kw = 0;
    std::vector<float> weights;  // out_c x in_c x kh x kw

    float at(int oc, int ic, int y, int x) const {
        return weights[((static_cast<size_t>(oc) * in_c + ic) * kh + y) * kw + x];
    }
};

struct ConvStack {
    // kernels[k][i]; empty kernel (no weights) means identity.
    std::vector<std::vector<ConvKernel>> kernels;

    bool is_identity(int k, int i) const {
        if (k >= static_cast<int>(kernels.size())) return true;
        if (i >= static_cast<int>(kernels[k].size())) return true;
        return kernels[k][i].weights.empty();
    }

    const ConvKernel& kernel(int k, int i) const { return kernels[k][i]; }

    static ConvStack identity() { return {}; }

    // A literal Dirac kernel; exercises the convolution path with the same
    // result as the identity fast path.
    static ConvKernel dirac(int channels, int ksize = 3) {
        ConvKernel k;
        k.out_c = k.in_c = channels;
        k.kh = k.kw = ksize;
        k.weights.assign(static_cast<size_t>(channels) * channels * ksize * ksize, 0.0f);
        int mid = ksize / 2;
        for (int c = 0; c < channels; ++c) {
            k.weights[((static_cast<size_t>(c) * channels + c) * ksize + mid) * ksize + mid] = 1.0f;
        }
        return k;
    }
};

// Same-size convolution, zero padding, stride 1. Accumulates in double with a
// fixed (channel, ky, kx) order so results are bit-stable.
inline Grid conv2d_same(const Grid& in, const ConvKernel& k) {
    if (k.in_c != in.c) throw ShapeError("conv2d_same: channel mismatch");
    if (k.kh % 2 == 0 || k.kw % 2 == 0) throw ShapeError("conv2d_same: kernel must be odd");
    Grid out(in.h, in.w, k.out_c);
    const int ry = k.kh / 2, rx = k.kw / 2;
    for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < in.w; ++x) {
            for (int oc = 0; oc < k.out_c; ++oc) {
                double acc = 0.0;
                for (int ic = 0; ic < k.in_c; ++ic) {
                    for (int ky = 0; ky < k.kh; ++ky) {
                        int sy = y + ky - ry;
                        if (sy < 0 || sy >= in.h) continue;
                        for (int kx = 0; kx < k.kw; ++kx) {
                            int sx = x + kx - rx;
                            if (sx < 0 || sx >= in.w) continue;
                            acc += static_cast<double>(in.at(sy, sx, ic)) * k.at(oc, ic, ky, kx);
                        }
                    }
                }
                out.at(y, x, oc) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

inline Grid apply_filter(const Grid& in, const ConvStack& phi, int k, int i) {
    if (phi.is_identity(k, i)) return in;
    return conv2d_same(in, phi.kernel(k, i));
}

// ---------------------------------------------------------------------------
// Bilinear resize with half-pixel-center sampling and border clamp:
// s = (t + 0.5) * src/dst - 0.5. Lerp is written a + w*(b-a) so constant
// regions reproduce exactly.
// ---------------------------------------------------------------------------

inline Grid resize_plane(const Grid& in, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("resize_plane: target must be >= 1");
    if (in.h == out_h && in.w == out_w) return in;

    Grid out(out_h, out_w, in.c);
    const double sy_scale = static_cast<double>(in.h) / out_h;
    const double sx_scale = static_cast<double>(in.w) / out_w;
    auto lerp = [](float a, float b, double w) {
        return static_cast<float>(a + w * (static_cast<double>(b) - a));
    };
    for (int ty = 0; ty < out_h; ++ty) {
        double sy = (ty + 0.5) * sy_scale - 0.5;
        int y0 = static_cast<int>(std::floor(sy));
        double wy = sy - y0;
        int y0c = std::clamp(y0, 0, in.h - 1);
        int y1c = std::clamp(y0 + 1, 0, in.h - 1);
        for (int tx = 0; tx < out_w; ++tx) {
            double sx = (tx + 0.5) * sx_scale - 0.5;
            int x0 = static_cast<int>(std::floor(sx));
            double wx = sx - x0;
            int x0c = std::clamp(x0, 0, in.w - 1);
            int x1c = std::clamp(x0 + 1, 0, in.w - 1);
            for (int ch = 0; ch < in.c; ++ch) {
                float top = lerp(in.at(y0c, x0c, ch), in.at(y0c, x1c, ch), wx);
                float bot = lerp(in.at(y1c, x0c, ch), in.at(y1c, x1c, ch), wx);
                out.at(ty, tx, ch) = lerp(top, bot, wy);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Multi-scale residual encoding. Per plane: quantize the resized residual,
// look the tokens back up, upsample, filter, subtract, repeat. Planes never
// mix, so they may run on separate threads.
// ---------------------------------------------------------------------------

inline Grid lookup_token_grid(const std::vector<int32_t>& tokens, int h, int w,
                              const Codebook& cb) {
    Grid g(h, w, cb.code_dim);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float* code = lookup(tokens[static_cast<size_t>(y) * w + x], cb);
            std::memcpy(g.pixel(y, x), code, sizeof(float) * cb.code_dim);
        }
    }
    return g;
}

inline TokenPyramid encode_pyramid(const LatentTriplane& latent, const Codebook& cb,
                                   const ScaleSchedule& sched, const ConvStack& phi,
                                   int threads = 1) {
    latent.validate();
    sched.validate();
    if (sched.final_h() != latent.h() || sched.final_w() != latent.w()) {
        throw ShapeError("encode_pyramid: schedule resolution does not match latent");
    }
    if (latent.c() != cb.code_dim) {
        throw ShapeError("encode_pyramid: latent channels do not match codebook dimension");
    }

    const int K = sched.count();
    const int planes = latent.plane_count();
    TokenPyramid out;
    out.schedule = sched;
    out.planes = planes;
    out.vocab = cb.vocab;
    out.scales.resize(K);
    for (int k = 0; k < K; ++k) {
        out.scales[k].resize(static_cast<size_t>(planes) * sched.scales[k].first *
                             sched.scales[k].second);
    }

    parallel_for(planes, threads, [&](size_t i) {
        Grid residual = latent.planes[i];
        for (int k = 0; k < K; ++k) {
            const auto [hk, wk] = sched.scales[k];
            Grid query = resize_plane(residual, hk, wk);
            std::vector<int32_t> tokens(static_cast<size_t>(hk) * wk);
            for (int y = 0; y < hk; ++y) {
                for (int x = 0; x < wk; ++x) {
                    tokens[static_cast<size_t>(y) * wk + x] = quantize_nearest(query.pixel(y, x), cb);
                }
            }
            std::copy(tokens.begin(), tokens.end(),
                      out.scales[k].begin() + static_cast<size_t>(i) * hk * wk);

            Grid code = lookup_token_grid(tokens, hk, wk, cb);
            Grid up = resize_plane(code, sched.final_h(), sched.final_w());
            Grid contrib = apply_filter(up, phi, k, static_cast<int>(i));
            for (size_t n = 0; n < residual.data.size(); ++n) {
                residual.data[n] -= contrib.data[n];
            }
        }
    });
    return out;
}

// Reconstruction: sum of filtered, upsampled code maps in scale order.
// An empty pyramid is allowed here and yields the zero triplane.
inline LatentTriplane reconstruct_pyramid(const TokenPyramid& pyr, const Codebook& cb,
                                          const ConvStack& phi, int threads = 1) {
    if (pyr.scale_count() == 0) {
        return LatentTriplane::zeros(pyr.planes > 0 ? pyr.planes : 3, 1, 1, cb.code_dim);
    }
    pyr.schedule.validate();
    const int full_h = pyr.schedule.final_h();
    const int full_w = pyr.schedule.final_w();
    const int planes = pyr.planes;

    LatentTriplane out = LatentTriplane::zeros(planes, full_h, full_w, cb.code_dim);
    parallel_for(planes, threads, [&](size_t i) {
        for (int k = 0; k < pyr.scale_count(); ++k) {
            const auto [hk, wk] = pyr.schedule.scales[k];
            std::vector<int32_t> tokens(
                pyr.scales[k].begin() + static_cast<size_t>(i) * hk * wk,
                pyr.scales[k].begin() + static_cast<size_t>(i + 1) * hk * wk);
            Grid code = lookup_token_grid(tokens, hk, wk, cb);
            Grid up = resize_plane(code, full_h, full_w);
            Grid contrib = apply_filter(up, phi, k, static_cast<int>(i));
            for (size_t n = 0; n < contrib.data.size(); ++n) {
                out.planes[i].data[n] += contrib.data[n];
            }
        }
    });
    return out;
}

// Incremental form used by the generation loop: adds one scale's contribution
// onto a running full-resolution reconstruction.
inline void accumulate_scale(LatentTriplane& recon, const std::vector<int32_t>& scale_tokens,
                             int k, const ScaleSchedule& sched, const Codebook& cb,
                             const ConvStack& phi) {
    const auto [hk, wk] = sched.scales[k];
    for (int i = 0; i < recon.plane_count(); ++i) {
        std::vector<int32_t> tokens(scale_tokens.begin() + static_cast<size_t>(i) * hk * wk,
                                    scale_tokens.begin() + static_cast<size_t>(i + 1) * hk * wk);
        Grid code = lookup_token_grid(tokens, hk, wk, cb);
        Grid up = resize_plane(code, sched.final_h(), sched.final_w());
        Grid contrib = apply_filter(up, phi, k, i);
        for (size_t n = 0; n < contrib.data.size(); ++n) {
            recon.planes[i].data[n] += contrib.data[n];
        }
    }
}

// ---------------------------------------------------------------------------
// Quantization loss. Forward-only engine: the stop-gradient split is
// bookkeeping, so both terms share the same mean squared error.
// ---------------------------------------------------------------------------

struct VqLoss {
    double encoding_error = 0.0;
    double commitment = 0.0;
};

inline VqLoss vq_loss(const LatentTriplane& f, const LatentTriplane& fhat, double beta) {
    if (f.plane_count() != fhat.plane_count()) throw ShapeError("vq_loss: plane count mismatch");
    double sum = 0.0;
    size_t n = 0;
    for (int i = 0; i < f.plane_count(); ++i) {
        require_same_shape(f.planes[i], fhat.planes[i], "vq_loss");
        for (size_t j = 0; j < f.planes[i].data.size(); ++j) {
            double d = static_cast<double>(f.planes[i].data[j]) - fhat.planes[i].data[j];
            sum += d * d;
        }
        n += f.planes[i].data.size();
    }
    double mse = sum / static_cast<double>(n);
    return {mse, beta * mse};
}

// ---------------------------------------------------------------------------
// Token accounting for scale truncation.
// ---------------------------------------------------------------------------

struct TokenCounts {
    int64_t total = 0;
    int64_t kept = 0;
    double ratio = 0.0;
};

inline TokenCounts token_counts(const ScaleSchedule& sched, int planes, int truncate_last) {
    sched.validate();
    if (truncate_last < 0 || truncate_last >= sched.count()) {
        throw InvalidTruncation("truncate_last must be in [0, K)");
    }
    TokenCounts tc;
    for (int k = 0; k < sched.count(); ++k) {
        int64_t a = static_cast<int64_t>(planes) * sched.scales[k].first * sched.scales[k].second;
        tc.total += a;
        if (k < sched.count() - truncate_last) tc.kept += a;
    }
    tc.ratio = static_cast<double>(tc.kept) / static_cast<double>(tc.total);
    return tc;
}

}  // namespace sar3d
