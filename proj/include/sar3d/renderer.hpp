#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <vector>

#include "sar3d/common.hpp"
#include "sar3d/geometry.hpp"
#include "sar3d/msvq.hpp"

namespace sar3d {

// ---------------------------------------------------------------------------
// Decoder: per-plane upsample + linear map from latent C to triplane C_t.
// Planes never mix.
// ---------------------------------------------------------------------------

struct PlaneLinear {
    int out_c = 0, in_c = 0;
    std::vector<float> weight;  // out_c x in_c row-major
    std::vector<float> bias;    // out_c
};

struct DecoderWeights {
    int target_h = 64, target_w = 64;
    std::vector<PlaneLinear> per_plane;  // one per latent plane
};

enum class PlaneAggregation { Sum, Concat };

// Density/color head: two hidden layers, rectifier activations, softplus
// density and logistic color.
struct FieldHead {
    int in_c = 0, hidden = 32;
    std::vector<float> w1, b1;   // hidden x in_c, hidden
    std::vector<float> w2, b2;   // hidden x hidden, hidden
    std::vector<float> wo, bo;   // 4 x hidden, 4 (density, rgb)
};

struct TriplaneField {
    std::vector<Grid> planes;  // equal shapes, H_t x W_t x C_t
    FieldHead head;
    PlaneAggregation aggregation = PlaneAggregation::Sum;
    // bounding box is the fixed cube [-1, 1]^3
};

inline Grid apply_plane_linear(const Grid& in, const PlaneLinear& lin) {
    if (lin.in_c != in.c) throw ShapeError("decoder: plane linear input channels mismatch");
    Grid out(in.h, in.w, lin.out_c);
    for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < in.w; ++x) {
            const float* px = in.pixel(y, x);
            float* po = out.pixel(y, x);
            for (int oc = 0; oc < lin.out_c; ++oc) {
                double acc = lin.bias.empty() ? 0.0 : lin.bias[oc];
                const float* wr = lin.weight.data() + static_cast<size_t>(oc) * lin.in_c;
                for (int ic = 0; ic < lin.in_c; ++ic) acc += static_cast<double>(wr[ic]) * px[ic];
                po[oc] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

inline TriplaneField decode_triplane(const LatentTriplane& latent, const DecoderWeights& dec,
                                     const FieldHead& head,
                                     PlaneAggregation agg = PlaneAggregation::Sum) {
    latent.validate();
    if (static_cast<int>(dec.per_plane.size()) != latent.plane_count()) {
        throw ShapeError("decode_triplane: decoder plane count mismatch");
    }
    TriplaneField field;
    field.head = head;
    field.aggregation = agg;
    for (int i = 0; i < latent.plane_count(); ++i) {
        Grid up = resize_plane(latent.planes[i], dec.target_h, dec.target_w);
        field.planes.push_back(apply_plane_linear(up, dec.per_plane[i]));
    }
    int feat = field.planes[0].c;
    int head_in = (agg == PlaneAggregation::Concat) ? feat * static_cast<int>(field.planes.size())
                                                    : feat;
    if (field.head.in_c != head_in) {
        throw ShapeError("decode_triplane: head input width does not match aggregation");
    }
    return field;
}

// ---------------------------------------------------------------------------
// Field sampling. Points live in [-1,1]^3; each plane is bilinearly sampled
// with half-pixel centers and border clamp, matching resize_plane semantics.
// ---------------------------------------------------------------------------

inline void bilinear_sample(const Grid& g, double u, double v, float* out) {
    // u, v in [-1, 1] map to continuous pixel coords
    double sx = (u + 1.0) * 0.5 * g.w - 0.5;
    double sy = (v + 1.0) * 0.5 * g.h - 0.5;
    int x0 = static_cast<int>(std::floor(sx));
    int y0 = static_cast<int>(std::floor(sy));
    double wx = sx - x0, wy = sy - y0;
    int x0c = std::clamp(x0, 0, g.w - 1), x1c = std::clamp(x0 + 1, 0, g.w - 1);
    int y0c = std::clamp(y0, 0, g.h - 1), y1c = std::clamp(y0 + 1, 0, g.h - 1);
    for (int ch = 0; ch < g.c; ++ch) {
        double a = g.at(y0c, x0c, ch), b = g.at(y0c, x1c, ch);
        double c = g.at(y1c, x0c, ch), d = g.at(y1c, x1c, ch);
        double top = a + wx * (b - a);
        double bot = c + wx * (d - c);
        out[ch] = static_cast<float>(top + wy * (bot - top));
    }
}

inline double softplus(double x) {
    if (x > 20.0) return x;
    return std::log1p(std::exp(x));
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct FieldSample {
    float density = 0.0f;
    std::array<float, 3> rgb{0.0f, 0.0f, 0.0f};
};

inline FieldSample sample_field(const TriplaneField& field, const Vec3& p) {
    if (p.x < -1.0 || p.x > 1.0 || p.y < -1.0 || p.y > 1.0 || p.z < -1.0 || p.z > 1.0) {
        return {};  // outside the box is empty space
    }
    const int nplanes = static_cast<int>(field.planes.size());
    const int feat = field.planes[0].c;
    // plane projections: XY <- (x,y), XZ <- (x,z), YZ <- (y,z)
    const double uv[3][2] = {{p.x, p.y}, {p.x, p.z}, {p.y, p.z}};

    std::vector<float> agg(field.head.in_c, 0.0f);
    std::vector<float> tmp(feat);
    for (int i = 0; i < nplanes; ++i) {
        bilinear_sample(field.planes[i], uv[i][0], uv[i][1], tmp.data());
        if (field.aggregation == PlaneAggregation::Sum) {
            for (int c = 0; c < feat; ++c) agg[c] += tmp[c];
        } else {
            std::copy(tmp.begin(), tmp.end(), agg.begin() + static_cast<size_t>(i) * feat);
        }
    }

    const FieldHead& h = field.head;
    std::vector<double> h1(h.hidden), h2(h.hidden);
    for (int o = 0; o < h.hidden; ++o) {
        double acc = h.b1[o];
        const float* wr = h.w1.data() + static_cast<size_t>(o) * h.in_c;
        for (int c = 0; c < h.in_c; ++c) acc += static_cast<double>(wr[c]) * agg[c];
        h1[o] = std::max(0.0, acc);
    }
    for (int o = 0; o < h.hidden; ++o) {
        double acc = h.b2[o];
        const float* wr = h.w2.data() + static_cast<size_t>(o) * h.hidden;
        for (int c = 0; c < h.hidden; ++c) acc += static_cast<double>(wr[c]) * h1[c];
        h2[o] = std::max(0.0, acc);
    }
    double raw[4];
    for (int o = 0; o < 4; ++o) {
        double acc = h.bo[o];
        const float* wr = h.wo.data() + static_cast<size_t>(o) * h.hidden;
        for (int c = 0; c < h.hidden; ++c) acc += static_cast<double>(wr[c]) * h2[c];
        raw[o] = acc;
    }
    FieldSample s;
    s.density = static_cast<float>(softplus(raw[0]));
    for (int c = 0; c < 3; ++c) s.rgb[c] = static_cast<float>(logistic(raw[1 + c]));
    return s;
}

// Finite-difference density gradient; visualization helper only.
inline Vec3 density_normal(const TriplaneField& field, const Vec3& p, double eps = 1e-3) {
    auto d = [&](const Vec3& q) { return static_cast<double>(sample_field(field, q).density); };
    Vec3 g{(d({p.x + eps, p.y, p.z}) - d({p.x - eps, p.y, p.z})) / (2 * eps),
           (d({p.x, p.y + eps, p.z}) - d({p.x, p.y - eps, p.z})) / (2 * eps),
           (d({p.x, p.y, p.z + eps}) - d({p.x, p.y, p.z - eps})) / (2 * eps)};
    double n = g.norm();
    if (n == 0.0) return {0, 0, 0};
    return g * (-1.0 / n);
}

// ---------------------------------------------------------------------------
// Volume rendering. Each ray takes n stratified samples over [near, far] with
// fixed segment length delta = (far-near)/n; jitter comes from the keyed RNG
// on (seed, ray_index, sample_index), or the segment midpoint when disabled.
// ---------------------------------------------------------------------------

struct RenderParams {
    double near = 0.1;
    double far = 4.0;
    int n_samples = 64;
    uint64_t seed = 0;
    bool jitter = false;
    std::array<float, 3> background{1.0f, 1.0f, 1.0f};  // composited where alpha < 1
    int threads = 1;
};

struct RenderOutput {
    Grid rgb;    // H x W x 3
    Grid depth;  // H x W x 1
    Grid alpha;  // H x W x 1
};

struct RaySample {
    std::array<double, 3> rgb{0, 0, 0};
    double depth = 0;
    double alpha = 0;
};

inline RaySample render_one_ray(const TriplaneField& field, const Ray& ray, size_t ray_index,
                                const RenderParams& rp) {
    const double delta = (rp.far - rp.near) / rp.n_samples;
    double transmittance = 1.0;
    RaySample out;
    for (int j = 0; j < rp.n_samples; ++j) {
        double u = rp.jitter ? counter_uniform(rp.seed, ray_index, static_cast<uint64_t>(j)) : 0.5;
        double t = rp.near + (j + u) * delta;
        Vec3 p = ray.origin + ray.direction * t;
        FieldSample s = sample_field(field, p);
        double a = 1.0 - std::exp(-static_cast<double>(s.density) * delta);
        double weight = a * transmittance;
        for (int c = 0; c < 3; ++c) out.rgb[c] += weight * s.rgb[c];
        out.depth += weight * t;
        out.alpha += weight;
        transmittance *= (1.0 - a);
    }
    for (int c = 0; c < 3; ++c) out.rgb[c] += (1.0 - out.alpha) * rp.background[c];
    return out;
}

inline RenderOutput render_rays(const TriplaneField& field, const std::vector<Ray>& rays, int h,
                                int w, const RenderParams& rp) {
    if (!(rp.near < rp.far)) throw RangeError("render_rays: near must be < far");
    if (rp.n_samples < 1) throw RangeError("render_rays: n_samples must be >= 1");
    if (rays.size() != static_cast<size_t>(h) * w) throw ShapeError("render_rays: ray count mismatch");

    RenderOutput out{Grid(h, w, 3), Grid(h, w, 1), Grid(h, w, 1)};
    parallel_for(rays.size(), rp.threads, [&](size_t i) {
        RaySample s = render_one_ray(field, rays[i], i, rp);
        int y = static_cast<int>(i) / w, x = static_cast<int>(i) % w;
        for (int c = 0; c < 3; ++c) out.rgb.at(y, x, c) = static_cast<float>(s.rgb[c]);
        out.depth.at(y, x, 0) = static_cast<float>(s.depth);
        out.alpha.at(y, x, 0) = static_cast<float>(s.alpha);
    });
    return out;
}

inline RenderOutput render_view(const TriplaneField& field, const CameraPose& pose,
                                const RenderParams& rp) {
    return render_rays(field, generate_rays(pose), pose.height, pose.width, rp);
}

// ---------------------------------------------------------------------------
// Render loss: weighted MAE over rgb, masked depth, and alpha-vs-mask.
// Perceptual and adversarial weights are accepted for config compatibility;
// their terms are zero in this engine and trigger a one-time warning.
// ---------------------------------------------------------------------------

struct RenderLossWeights {
    double rgb = 1.0;
    double depth = 1.0;
    double alpha = 1.0;
    double perceptual = 0.0;  // term evaluates to zero here
    double gan = 0.0;         // term evaluates to zero here
};

inline double render_loss(const RenderOutput& out, const Grid& gt_rgb, const Grid& gt_depth,
                          const Grid& gt_mask, const RenderLossWeights& weights) {
    require_same_shape(out.rgb, gt_rgb, "render_loss rgb");
    require_same_shape(out.depth, gt_depth, "render_loss depth");
    require_same_shape(out.alpha, gt_mask, "render_loss mask");

    if (weights.perceptual != 0.0 || weights.gan != 0.0) {
        static bool warned = false;
        if (!warned) {
            std::fprintf(stderr,
                         "warning: perceptual/adversarial loss weights are configured but those "
                         "terms evaluate to zero in this engine\n");
            warned = true;
        }
    }

    double rgb_sum = 0.0;
    for (size_t i = 0; i < out.rgb.data.size(); ++i) {
        rgb_sum += std::abs(static_cast<double>(out.rgb.data[i]) - gt_rgb.data[i]);
    }
    double rgb_mae = rgb_sum / static_cast<double>(out.rgb.data.size());

    double depth_sum = 0.0;
    size_t depth_n = 0;
    for (size_t i = 0; i < out.depth.data.size(); ++i) {
        if (gt_mask.data[i] > 0.0f) {
            depth_sum += std::abs(static_cast<double>(out.depth.data[i]) - gt_depth.data[i]);
            ++depth_n;
        }
    }
    double depth_mae = depth_n > 0 ? depth_sum / static_cast<double>(depth_n) : 0.0;

    double alpha_sum = 0.0;
    for (size_t i = 0; i < out.alpha.data.size(); ++i) {
        alpha_sum += std::abs(static_cast<double>(out.alpha.data[i]) - gt_mask.data[i]);
    }
    double alpha_mae = alpha_sum / static_cast<double>(out.alpha.data.size());

    return weights.rgb * rgb_mae + weights.depth * depth_mae + weights.alpha * alpha_mae;
}

}  // namespace sar3d
