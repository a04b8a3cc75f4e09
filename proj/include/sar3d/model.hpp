#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "sar3d/codebook.hpp"
#include "sar3d/common.hpp"
#include "sar3d/msvq.hpp"

namespace sar3d {

// ---------------------------------------------------------------------------
// Config and condition features.
// ---------------------------------------------------------------------------

enum class BlockOrder { SelfThenCross, CrossThenSelf };

struct ModelConfig {
    int depth = 4;
    int heads = 4;
    int dim = 64;          // model width d, divisible by heads
    int vocab = 0;         // must match the codebook V
    int planes = 3;
    int code_dim = 8;      // latent channel count C fed to the input projection
    int condition_dim = 64;
    int ffn_ratio = 4;
    BlockOrder block_order = BlockOrder::CrossThenSelf;
    ScaleSchedule schedule;

    int head_dim() const { return dim / heads; }

    void validate() const {
        if (dim % heads != 0) throw ShapeError("model width must be divisible by heads");
        if (depth < 1 || vocab < 1 || condition_dim < 1) throw ShapeError("invalid model config");
        if (planes != 3 && planes != 1) throw ShapeError("planes must be 3 (or 1 in single-plane mode)");
        schedule.validate();
    }
};

struct ConditionFeatures {
    int dim = 0;
    int count = 0;                // m rows in sequence
    std::vector<float> pooled;    // dim
    std::vector<float> sequence;  // count x dim
    bool null_flag = false;

    ConditionFeatures as_null() const {
        ConditionFeatures c = *this;
        c.null_flag = true;
        return c;
    }
};

// ---------------------------------------------------------------------------
// Weights. Linear layers are stored [out x in] row-major with y = W x + b.
// LayerNorms under AdaLN modulation carry no affine parameters; the
// cross-attention and final norms do.
// ---------------------------------------------------------------------------

struct TransformerLayer {
    std::vector<float> ada_w, ada_b;  // 4d x d, 4d -> (shift_a, scale_a, shift_f, scale_f)
    std::vector<float> wq, bq, wk, bk, wv, bv, wo, bo;          // self-attention, d x d
    std::vector<float> lnc_g, lnc_b;                            // cross-attention norm
    std::vector<float> cwq, cbq, cwo, cbo;                      // d x d
    std::vector<float> cwk, cbk, cwv, cbv;                      // d x condition_dim
    std::vector<float> ffn_w1, ffn_b1, ffn_w2, ffn_b2;          // ratio*d x d, d x ratio*d
};

struct TransformerWeights {
    ModelConfig config;

    std::vector<float> cond_proj_w, cond_proj_b;  // d x condition_dim, d
    std::vector<float> null_pooled;               // condition_dim
    std::vector<float> null_seq;                  // condition_dim (single row)
    std::vector<float> input_proj_w, input_proj_b;  // d x code_dim, d
    std::vector<float> plane_emb;                 // planes x d
    std::vector<float> scale_emb;                 // (K-1) x d, row j applies to block j+2
    std::vector<TransformerLayer> layers;
    std::vector<float> final_ln_g, final_ln_b;    // d
    std::vector<float> out_w, out_b;              // V x d, V
};

// ---------------------------------------------------------------------------
// Numeric helpers. Accumulation is double throughout with fixed loop order;
// activations and logits are stored f32.
// ---------------------------------------------------------------------------

namespace detail {

inline void linear(const float* w, const float* b, const float* in, float* out, int n_out,
                   int n_in) {
    for (int o = 0; o < n_out; ++o) {
        double acc = b ? b[o] : 0.0;
        const float* wr = w + static_cast<size_t>(o) * n_in;
        for (int i = 0; i < n_in; ++i) acc += static_cast<double>(wr[i]) * in[i];
        out[o] = static_cast<float>(acc);
    }
}

inline void layer_norm(const float* in, float* out, int d, const float* gamma, const float* beta,
                       double eps = 1e-5) {
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += in[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
        double dv = in[i] - mean;
        var += dv * dv;
    }
    var /= d;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < d; ++i) {
        double v = (in[i] - mean) * inv;
        if (gamma) v = v * gamma[i] + (beta ? beta[i] : 0.0);
        out[i] = static_cast<float>(v);
    }
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / 1.4142135623730951)); }

// Softmax-weighted value aggregation over keys [0, kend), double precision.
inline void attend(const float* q, const float* keys, const float* values, int kend, int stride,
                   int head_dim, double inv_sqrt_d, float* out) {
    thread_local std::vector<double> scores;
    scores.resize(kend);
    double max_s = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < kend; ++j) {
        const float* k = keys + static_cast<size_t>(j) * stride;
        double s = 0.0;
        for (int c = 0; c < head_dim; ++c) s += static_cast<double>(q[c]) * k[c];
        s *= inv_sqrt_d;
        scores[j] = s;
        if (s > max_s) max_s = s;
    }
    double denom = 0.0;
    for (int j = 0; j < kend; ++j) {
        scores[j] = std::exp(scores[j] - max_s);
        denom += scores[j];
    }
    for (int c = 0; c < head_dim; ++c) {
        double acc = 0.0;
        for (int j = 0; j < kend; ++j) {
            acc += scores[j] * values[static_cast<size_t>(j) * stride + c];
        }
        out[c] = static_cast<float>(acc / denom);
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Embedded sequence: block B_1 carries `planes` copies of the projected
// pooled condition (one per plane); block B_k re-embeds the cumulative
// reconstruction of scales < k resized to (h_k, w_k), flattened plane-major
// row-major, plus scale and plane embeddings.
// ---------------------------------------------------------------------------

struct EmbeddedSequence {
    int dim = 0;
    std::vector<float> rows;                  // n x dim
    std::vector<std::pair<int, int>> blocks;  // (start, len), contiguous

    int positions() const { return dim > 0 ? static_cast<int>(rows.size()) / dim : 0; }
};

struct ResolvedCondition {
    std::vector<float> pooled;    // condition_dim
    std::vector<float> sequence;  // m x condition_dim
    int count = 0;
};

inline ResolvedCondition resolve_condition(const ConditionFeatures& cond,
                                           const TransformerWeights& w) {
    const int cd = w.config.condition_dim;
    if (cond.null_flag) {
        return {w.null_pooled, w.null_seq, 1};
    }
    if (cond.dim != cd) throw ShapeError("condition dimension does not match model");
    if (cond.count < 1) throw ShapeError("condition sequence is empty");
    if (!all_finite(cond.pooled) || !all_finite(cond.sequence)) {
        throw RangeError("condition features must be finite");
    }
    return {cond.pooled, cond.sequence, cond.count};
}

// Rows for a single block (1-based k). recon is the cumulative reconstruction
// of scales < k at full resolution; unused for k = 1.
inline std::vector<float> block_input_rows(int k, const LatentTriplane* recon,
                                           const ConditionFeatures& cond,
                                           const TransformerWeights& w) {
    const ModelConfig& cfg = w.config;
    const int d = cfg.dim;
    std::vector<float> rows;
    if (k == 1) {
        ResolvedCondition rc = resolve_condition(cond, w);
        std::vector<float> cond_emb(d);
        detail::linear(w.cond_proj_w.data(), w.cond_proj_b.data(), rc.pooled.data(),
                       cond_emb.data(), d, cfg.condition_dim);
        rows.resize(static_cast<size_t>(cfg.planes) * d);
        for (int i = 0; i < cfg.planes; ++i) {
            for (int c = 0; c < d; ++c) {
                rows[static_cast<size_t>(i) * d + c] =
                    cond_emb[c] + w.plane_emb[static_cast<size_t>(i) * d + c];
            }
        }
        return rows;
    }
    const auto [hk, wk] = cfg.schedule.scales[k - 1];
    const float* semb = w.scale_emb.data() + static_cast<size_t>(k - 2) * d;
    rows.resize(static_cast<size_t>(cfg.planes) * hk * wk * d);
    for (int i = 0; i < cfg.planes; ++i) {
        Grid resized = resize_plane(recon->planes[i], hk, wk);
        const float* pemb = w.plane_emb.data() + static_cast<size_t>(i) * d;
        for (int y = 0; y < hk; ++y) {
            for (int x = 0; x < wk; ++x) {
                float* row = rows.data() +
                             ((static_cast<size_t>(i) * hk + y) * wk + x) * d;
                detail::linear(w.input_proj_w.data(), w.input_proj_b.data(), resized.pixel(y, x),
                               row, d, cfg.code_dim);
                for (int c = 0; c < d; ++c) row[c] += semb[c] + pemb[c];
            }
        }
    }
    return rows;
}

// Blocks B_1 .. B_{min(j+1, K)} for a prefix of j scales. Block B_k depends
// only on scales < k, so extending the prefix never changes earlier blocks.
inline EmbeddedSequence build_input_blocks(const TokenPyramid& prefix,
                                           const ConditionFeatures& cond, const Codebook& cb,
                                           const ConvStack& phi, const TransformerWeights& w) {
    const ModelConfig& cfg = w.config;
    cfg.validate();
    const int K = cfg.schedule.count();
    const int j = prefix.scale_count();
    if (j > K) throw PrefixError("prefix has more scales than the schedule");
    if (j > 0) {
        if (prefix.planes != cfg.planes) throw PrefixError("prefix plane count mismatch");
        for (int k = 0; k < j; ++k) {
            size_t want = static_cast<size_t>(cfg.planes) * cfg.schedule.scales[k].first *
                          cfg.schedule.scales[k].second;
            if (prefix.scales[k].size() != want) {
                throw PrefixError("prefix scale " + std::to_string(k) +
                                  " does not match the schedule");
            }
        }
    }

    EmbeddedSequence seq;
    seq.dim = cfg.dim;
    const int nblocks = std::min(j + 1, K);

    LatentTriplane recon =
        LatentTriplane::zeros(cfg.planes, cfg.schedule.final_h(), cfg.schedule.final_w(),
                              cfg.code_dim);
    for (int k = 1; k <= nblocks; ++k) {
        std::vector<float> rows = block_input_rows(k, &recon, cond, w);
        int start = seq.positions();
        seq.rows.insert(seq.rows.end(), rows.begin(), rows.end());
        seq.blocks.push_back({start, static_cast<int>(rows.size()) / cfg.dim});
        if (k <= j && k < nblocks) {
            accumulate_scale(recon, prefix.scales[k - 1], k - 1, cfg.schedule, cb, phi);
        }
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Per-forward conditioning state: AdaLN shift/scale pairs and projected
// cross-attention keys/values. Both are functions of the condition alone.
// ---------------------------------------------------------------------------

struct CondState {
    std::vector<float> cond_emb;                   // d
    std::vector<std::vector<float>> ada;           // per layer, 4d
    std::vector<std::vector<float>> cross_k;       // per layer, m x d
    std::vector<std::vector<float>> cross_v;       // per layer, m x d
    int cross_len = 0;
};

inline CondState make_cond_state(const ConditionFeatures& cond, const TransformerWeights& w) {
    const ModelConfig& cfg = w.config;
    const int d = cfg.dim;
    ResolvedCondition rc = resolve_condition(cond, w);

    CondState st;
    st.cond_emb.resize(d);
    detail::linear(w.cond_proj_w.data(), w.cond_proj_b.data(), rc.pooled.data(),
                   st.cond_emb.data(), d, cfg.condition_dim);

    std::vector<float> silu_emb(d);
    for (int c = 0; c < d; ++c) silu_emb[c] = static_cast<float>(detail::silu(st.cond_emb[c]));

    st.cross_len = rc.count;
    st.ada.resize(cfg.depth);
    st.cross_k.resize(cfg.depth);
    st.cross_v.resize(cfg.depth);
    for (int L = 0; L < cfg.depth; ++L) {
        const TransformerLayer& ly = w.layers[L];
        st.ada[L].resize(static_cast<size_t>(4) * d);
        detail::linear(ly.ada_w.data(), ly.ada_b.data(), silu_emb.data(), st.ada[L].data(), 4 * d,
                       d);
        st.cross_k[L].resize(static_cast<size_t>(rc.count) * d);
        st.cross_v[L].resize(static_cast<size_t>(rc.count) * d);
        for (int m = 0; m < rc.count; ++m) {
            const float* crow = rc.sequence.data() + static_cast<size_t>(m) * cfg.condition_dim;
            detail::linear(ly.cwk.data(), ly.cbk.data(), crow,
                           st.cross_k[L].data() + static_cast<size_t>(m) * d, d,
                           cfg.condition_dim);
            detail::linear(ly.cwv.data(), ly.cbv.data(), crow,
                           st.cross_v[L].data() + static_cast<size_t>(m) * d, d,
                           cfg.condition_dim);
        }
    }
    return st;
}

namespace detail {

// y = ln(x) * (1 + scale) + shift, parameter-free LayerNorm.
inline void modulate(const float* x, const float* shift, const float* scale, float* out, int d) {
    layer_norm(x, out, d, nullptr, nullptr);
    for (int c = 0; c < d; ++c) {
        out[c] = static_cast<float>(static_cast<double>(out[c]) * (1.0 + scale[c]) + shift[c]);
    }
}

struct AttnBuffers {
    std::vector<float> normed, q, k, v, attn, proj;
};

// Self-attention over rows [0, n) of x, writing residuals in place. Keys and
// values for positions [0, prior_len) come from `prior` (the KV cache); new
// keys/values are appended to it. key_end gives, per new position, one past
// the last attendable key in the combined (prior + new) indexing.
inline void self_attention(std::vector<float>& x, int n, const TransformerLayer& ly,
                           const float* ada, std::vector<float>& prior_k,
                           std::vector<float>& prior_v, int prior_len,
                           const std::vector<int>& key_end, const ModelConfig& cfg) {
    const int d = cfg.dim;
    const int hd = cfg.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    const float* shift_a = ada;
    const float* scale_a = ada + d;

    AttnBuffers b;
    b.normed.resize(static_cast<size_t>(n) * d);
    b.q.resize(static_cast<size_t>(n) * d);
    b.attn.resize(d);
    b.proj.resize(d);

    prior_k.resize(static_cast<size_t>(prior_len + n) * d);
    prior_v.resize(static_cast<size_t>(prior_len + n) * d);
    for (int p = 0; p < n; ++p) {
        float* u = b.normed.data() + static_cast<size_t>(p) * d;
        modulate(x.data() + static_cast<size_t>(p) * d, shift_a, scale_a, u, d);
        linear(ly.wq.data(), ly.bq.data(), u, b.q.data() + static_cast<size_t>(p) * d, d, d);
        linear(ly.wk.data(), ly.bk.data(), u,
               prior_k.data() + static_cast<size_t>(prior_len + p) * d, d, d);
        linear(ly.wv.data(), ly.bv.data(), u,
               prior_v.data() + static_cast<size_t>(prior_len + p) * d, d, d);
    }
    for (int p = 0; p < n; ++p) {
        for (int h = 0; h < cfg.heads; ++h) {
            attend(b.q.data() + static_cast<size_t>(p) * d + h * hd, prior_k.data() + h * hd,
                   prior_v.data() + h * hd, key_end[p], d, hd, inv_sqrt, b.attn.data() + h * hd);
        }
        linear(ly.wo.data(), ly.bo.data(), b.attn.data(), b.proj.data(), d, d);
        float* row = x.data() + static_cast<size_t>(p) * d;
        for (int c = 0; c < d; ++c) row[c] += b.proj[c];
    }
}

inline void cross_attention(std::vector<float>& x, int n, const TransformerLayer& ly,
                            const std::vector<float>& ck, const std::vector<float>& cv,
                            int cross_len, const ModelConfig& cfg) {
    const int d = cfg.dim;
    const int hd = cfg.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<float> u(d), q(d), attn(d), proj(d);
    for (int p = 0; p < n; ++p) {
        float* row = x.data() + static_cast<size_t>(p) * d;
        layer_norm(row, u.data(), d, ly.lnc_g.data(), ly.lnc_b.data());
        linear(ly.cwq.data(), ly.cbq.data(), u.data(), q.data(), d, d);
        for (int h = 0; h < cfg.heads; ++h) {
            attend(q.data() + h * hd, ck.data() + h * hd, cv.data() + h * hd, cross_len, d, hd,
                   inv_sqrt, attn.data() + h * hd);
        }
        linear(ly.cwo.data(), ly.cbo.data(), attn.data(), proj.data(), d, d);
        for (int c = 0; c < d; ++c) row[c] += proj[c];
    }
}

inline void ffn(std::vector<float>& x, int n, const TransformerLayer& ly, const float* ada,
                const ModelConfig& cfg) {
    const int d = cfg.dim;
    const int hidden = cfg.ffn_ratio * d;
    const float* shift_f = ada + 2 * d;
    const float* scale_f = ada + 3 * d;
    std::vector<float> u(d), h(hidden), y(d);
    for (int p = 0; p < n; ++p) {
        float* row = x.data() + static_cast<size_t>(p) * d;
        modulate(row, shift_f, scale_f, u.data(), d);
        linear(ly.ffn_w1.data(), ly.ffn_b1.data(), u.data(), h.data(), hidden, d);
        for (int c = 0; c < hidden; ++c) h[c] = static_cast<float>(gelu(h[c]));
        linear(ly.ffn_w2.data(), ly.ffn_b2.data(), h.data(), y.data(), d, hidden);
        for (int c = 0; c < d; ++c) row[c] += y[c];
    }
}

inline void head_logits(const std::vector<float>& x, int n, const TransformerWeights& w,
                        std::vector<float>& logits) {
    const int d = w.config.dim;
    const int v = w.config.vocab;
    std::vector<float> u(d);
    logits.resize(static_cast<size_t>(n) * v);
    for (int p = 0; p < n; ++p) {
        layer_norm(x.data() + static_cast<size_t>(p) * d, u.data(), d, w.final_ln_g.data(),
                   w.final_ln_b.data());
        linear(w.out_w.data(), w.out_b.data(), u.data(),
               logits.data() + static_cast<size_t>(p) * v, v, d);
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Uncached full-sequence forward with the block-causal mask: every position
// of block B_k attends to all positions of blocks B_1..B_k.
// ---------------------------------------------------------------------------

inline std::vector<float> forward_blocks(const EmbeddedSequence& seq,
                                         const ConditionFeatures& cond,
                                         const TransformerWeights& w) {
    const ModelConfig& cfg = w.config;
    cfg.validate();
    if (seq.dim != cfg.dim) throw ShapeError("forward_blocks: sequence width mismatch");
    if (static_cast<int>(w.layers.size()) != cfg.depth) {
        throw ShapeError("forward_blocks: layer count mismatch");
    }
    const int n = seq.positions();

    std::vector<int> key_end(n);
    for (const auto& [start, len] : seq.blocks) {
        for (int p = start; p < start + len; ++p) key_end[p] = start + len;
    }

    CondState st = make_cond_state(cond, w);
    std::vector<float> x = seq.rows;
    for (int L = 0; L < cfg.depth; ++L) {
        const TransformerLayer& ly = w.layers[L];
        std::vector<float> k_buf, v_buf;
        if (cfg.block_order == BlockOrder::CrossThenSelf) {
            detail::cross_attention(x, n, ly, st.cross_k[L], st.cross_v[L], st.cross_len, cfg);
            detail::self_attention(x, n, ly, st.ada[L].data(), k_buf, v_buf, 0, key_end, cfg);
        } else {
            detail::self_attention(x, n, ly, st.ada[L].data(), k_buf, v_buf, 0, key_end, cfg);
            detail::cross_attention(x, n, ly, st.cross_k[L], st.cross_v[L], st.cross_len, cfg);
        }
        detail::ffn(x, n, ly, st.ada[L].data(), cfg);
    }
    std::vector<float> logits;
    detail::head_logits(x, n, w, logits);
    return logits;
}

// ---------------------------------------------------------------------------
// KV-cached forward, one block per call. Produces bit-identical logits to the
// uncached path: per-position arithmetic and summation order are the same.
// ---------------------------------------------------------------------------

struct KvCache {
    int len = 0;
    bool primed = false;
    CondState cond_state;
    std::vector<std::vector<float>> k, v;  // per layer, len x d
};

inline std::vector<float> forward_block_cached(KvCache& cache, const std::vector<float>& rows,
                                               const ConditionFeatures& cond,
                                               const TransformerWeights& w) {
    const ModelConfig& cfg = w.config;
    const int d = cfg.dim;
    const int n = static_cast<int>(rows.size()) / d;
    if (!cache.primed) {
        cache.cond_state = make_cond_state(cond, w);
        cache.k.resize(cfg.depth);
        cache.v.resize(cfg.depth);
        cache.primed = true;
    }

    std::vector<int> key_end(n, cache.len + n);
    std::vector<float> x = rows;
    for (int L = 0; L < cfg.depth; ++L) {
        const TransformerLayer& ly = w.layers[L];
        if (cfg.block_order == BlockOrder::CrossThenSelf) {
            detail::cross_attention(x, n, ly, cache.cond_state.cross_k[L],
                                    cache.cond_state.cross_v[L], cache.cond_state.cross_len, cfg);
            detail::self_attention(x, n, ly, cache.cond_state.ada[L].data(), cache.k[L],
                                   cache.v[L], cache.len, key_end, cfg);
        } else {
            detail::self_attention(x, n, ly, cache.cond_state.ada[L].data(), cache.k[L],
                                   cache.v[L], cache.len, key_end, cfg);
            detail::cross_attention(x, n, ly, cache.cond_state.cross_k[L],
                                    cache.cond_state.cross_v[L], cache.cond_state.cross_len, cfg);
        }
        detail::ffn(x, n, ly, cache.cond_state.ada[L].data(), cfg);
    }
    cache.len += n;
    std::vector<float> logits;
    detail::head_logits(x, n, w, logits);
    return logits;
}

// ---------------------------------------------------------------------------
// Teacher-forcing negative log-likelihood. Logits for block k score the
// tokens of scale k; log-softmax runs in double.
// ---------------------------------------------------------------------------

struct NllResult {
    double total = 0.0;
    std::vector<double> per_scale;
};

inline double log_softmax_at(const float* logits, int vocab, int index) {
    double max_l = -std::numeric_limits<double>::infinity();
    for (int v = 0; v < vocab; ++v) max_l = std::max(max_l, static_cast<double>(logits[v]));
    double denom = 0.0;
    for (int v = 0; v < vocab; ++v) denom += std::exp(static_cast<double>(logits[v]) - max_l);
    return static_cast<double>(logits[index]) - max_l - std::log(denom);
}

inline NllResult teacher_forcing_nll(const TokenPyramid& pyramid, const ConditionFeatures& cond,
                                     const Codebook& cb, const ConvStack& phi,
                                     const TransformerWeights& w) {
    const ModelConfig& cfg = w.config;
    pyramid.validate();
    if (pyramid.scale_count() != cfg.schedule.count()) {
        throw ShapeError("teacher_forcing_nll: pyramid is not complete for the schedule");
    }
    if (pyramid.vocab != cfg.vocab) throw IndexError("teacher_forcing_nll: vocab mismatch");

    EmbeddedSequence seq = build_input_blocks(pyramid, cond, cb, phi, w);
    std::vector<float> logits = forward_blocks(seq, cond, w);

    NllResult res;
    res.per_scale.resize(pyramid.scale_count(), 0.0);
    for (int k = 0; k < pyramid.scale_count(); ++k) {
        const auto [start, len] = seq.blocks[k];
        for (int p = 0; p < len; ++p) {
            int32_t target = pyramid.scales[k][p];
            double lp = log_softmax_at(logits.data() + static_cast<size_t>(start + p) * cfg.vocab,
                                       cfg.vocab, target);
            res.per_scale[k] -= lp;
        }
        res.total += res.per_scale[k];
    }
    return res;
}

}  // namespace sar3d
