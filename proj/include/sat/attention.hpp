#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sat/common.hpp"
#include "sat/geometry.hpp"
#include "sat/nn.hpp"
#include "sat/tensor.hpp"

namespace sat {

// How the two granularity branches combine, and whether the coarse branch
// exists at all. These mirror the ablation rows exactly.
enum class ShuntMode { concat, sum };
enum class MgaMode { full, point_only };

// ---------------------------------------------------------------------------
// Windowed multi-head attention (shared by both branches)
// ---------------------------------------------------------------------------

// Total number of evaluated (query, key) pairs, and the flat index of a pair
// in iteration order: segments ascending, then query-major within a segment.
inline int64_t attention_pair_count(const SegmentMap& qseg, const SegmentMap& kvseg) {
    int64_t pairs = 0;
    for (int32_t s = 0; s < qseg.num_segments(); ++s)
        pairs += qseg.segment_size(s) * kvseg.segment_size(s);
    return pairs;
}

// Scaled dot-product attention restricted to segments: query row i attends to
// the key/value rows whose segment equals qseg.segment_of(i). Queries and
// keys iterate in segment-layout order, so the accumulation order is the
// canonical one chosen by the index builder. Softmax scale is 1/sqrt(d) with
// d = width / num_heads.
//
// `pair_bias`, when defined, holds one additive logit per (pair, head) in
// pair iteration order and participates in the backward pass. `pair_count`,
// when given, accumulates the number of pairs the attention evaluates.
template <typename T>
Tensor<T> windowed_mha(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                       const SegmentMap& qseg, const SegmentMap& kvseg, int num_heads,
                       int64_t* pair_count = nullptr, const Tensor<T>& pair_bias = {}) {
    detail::require_rank2(q, "windowed_mha");
    detail::require_rank2(k, "windowed_mha");
    detail::require_rank2(v, "windowed_mha");
    const int64_t nq = q.dim(0), width = q.dim(1);
    const int64_t nk = k.dim(0);
    if (k.dim(1) != width || v.dim(1) != width || v.dim(0) != nk)
        throw ShapeError("windowed_mha: query/key/value widths must agree");
    if (num_heads < 1 || width % num_heads != 0)
        throw ShapeError("windowed_mha: width must be divisible by head count");
    if (qseg.size() != nq || kvseg.size() != nk)
        throw IndexError("windowed_mha: segment maps do not cover the token rows");
    if (qseg.num_segments() != kvseg.num_segments())
        throw IndexError("windowed_mha: query and key segment counts differ");
    const int64_t d = width / num_heads;
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
    const int32_t ns = qseg.num_segments();
    const bool biased = pair_bias.defined();
    if (biased && (pair_bias.rank() != 2 || pair_bias.dim(0) != attention_pair_count(qseg, kvseg) ||
                   pair_bias.dim(1) != num_heads))
        throw ShapeError("windowed_mha: pair bias must be [pair count, heads]");

    // Attention probabilities are kept for the backward pass, one block of
    // nq_s * nk_s per segment and head.
    std::vector<int64_t> prob_offset(static_cast<size_t>(ns) + 1, 0);
    std::vector<int64_t> pair_offset(static_cast<size_t>(ns) + 1, 0);
    for (int32_t s = 0; s < ns; ++s) {
        const int64_t pairs = qseg.segment_size(s) * kvseg.segment_size(s);
        prob_offset[static_cast<size_t>(s) + 1] = prob_offset[static_cast<size_t>(s)] + pairs * num_heads;
        pair_offset[static_cast<size_t>(s) + 1] = pair_offset[static_cast<size_t>(s)] + pairs;
    }
    std::vector<T> probs(static_cast<size_t>(prob_offset[static_cast<size_t>(ns)]));

    std::vector<T> out(static_cast<size_t>(nq * width), T(0));
    const T* pq = q.values().data();
    const T* pk = k.values().data();
    const T* pv = v.values().data();
    const T* pb = biased ? pair_bias.values().data() : nullptr;
    std::vector<T> scores;
    for (int32_t s = 0; s < ns; ++s) {
        const auto qe = qseg.segment_elements(s);
        const auto ke = kvseg.segment_elements(s);
        if (qe.empty()) continue;
        if (ke.empty()) throw IndexError("windowed_mha: segment " + std::to_string(s) + " has queries but no keys");
        if (pair_count) *pair_count += static_cast<int64_t>(qe.size()) * static_cast<int64_t>(ke.size());
        const int64_t m = static_cast<int64_t>(ke.size());
        scores.resize(static_cast<size_t>(m));
        T* pblock = probs.data() + prob_offset[static_cast<size_t>(s)];
        for (int h = 0; h < num_heads; ++h) {
            const int64_t hoff = static_cast<int64_t>(h) * d;
            for (size_t qi = 0; qi < qe.size(); ++qi) {
                const T* qrow = pq + qe[qi] * width + hoff;
                const int64_t pair_row = pair_offset[static_cast<size_t>(s)] + static_cast<int64_t>(qi) * m;
                T mx = -std::numeric_limits<T>::infinity();
                for (int64_t j = 0; j < m; ++j) {
                    const T* krow = pk + ke[static_cast<size_t>(j)] * width + hoff;
                    T dot = T(0);
                    for (int64_t c = 0; c < d; ++c) dot += qrow[c] * krow[c];
                    scores[static_cast<size_t>(j)] = dot * inv_sqrt_d;
                    if (biased) scores[static_cast<size_t>(j)] += pb[(pair_row + j) * num_heads + h];
                    mx = std::max(mx, scores[static_cast<size_t>(j)]);
                }
                T sum = T(0);
                for (int64_t j = 0; j < m; ++j) {
                    scores[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - mx);
                    sum += scores[static_cast<size_t>(j)];
                }
                T* arow = pblock + (static_cast<int64_t>(h) * static_cast<int64_t>(qe.size()) +
                                    static_cast<int64_t>(qi)) * m;
                T* orow = out.data() + qe[qi] * width + hoff;
                for (int64_t j = 0; j < m; ++j) {
                    const T a = scores[static_cast<size_t>(j)] / sum;
                    arow[j] = a;
                    const T* vrow = pv + ke[static_cast<size_t>(j)] * width + hoff;
                    for (int64_t c = 0; c < d; ++c) orow[c] += a * vrow[c];
                }
            }
        }
    }

    auto qn = q.node();
    auto kn = k.node();
    auto vn = v.node();
    std::vector<Tensor<T>> inputs = {q, k, v};
    if (biased) inputs.push_back(pair_bias);
    auto bn = biased ? pair_bias.node() : nullptr;
    return Tensor<T>::make_op({nq, width}, std::move(out), std::move(inputs),
                              [qn, kn, vn, bn, qseg, kvseg, num_heads, d, inv_sqrt_d, ns,
                               probs = std::move(probs), prob_offset = std::move(prob_offset),
                               pair_offset = std::move(pair_offset)](auto& self) {
        const bool need_q = qn->requires_grad, need_k = kn->requires_grad, need_v = vn->requires_grad;
        const bool need_b = bn && bn->requires_grad;
        if (need_q) qn->ensure_grad();
        if (need_k) kn->ensure_grad();
        if (need_v) vn->ensure_grad();
        if (need_b) bn->ensure_grad();
        const int64_t width = static_cast<int64_t>(num_heads) * d;
        const T* dout = self.grad.data();
        std::vector<T> da, ds;
        for (int32_t s = 0; s < ns; ++s) {
            const auto qe = qseg.segment_elements(s);
            const auto ke = kvseg.segment_elements(s);
            if (qe.empty()) continue;
            const int64_t m = static_cast<int64_t>(ke.size());
            da.resize(static_cast<size_t>(m));
            ds.resize(static_cast<size_t>(m));
            const T* pblock = probs.data() + prob_offset[static_cast<size_t>(s)];
            for (int h = 0; h < num_heads; ++h) {
                const int64_t hoff = static_cast<int64_t>(h) * d;
                for (size_t qi = 0; qi < qe.size(); ++qi) {
                    const T* arow = pblock + (static_cast<int64_t>(h) * static_cast<int64_t>(qe.size()) +
                                              static_cast<int64_t>(qi)) * m;
                    const T* drow = dout + qe[qi] * width + hoff;
                    const int64_t pair_row = pair_offset[static_cast<size_t>(s)] + static_cast<int64_t>(qi) * m;
                    // dV += a * dO ; dA = dO . V
                    T rowdot = T(0);
                    for (int64_t j = 0; j < m; ++j) {
                        const int64_t kr = ke[static_cast<size_t>(j)];
                        const T* vrow = vn->data.data() + kr * width + hoff;
                        T acc = T(0);
                        for (int64_t c = 0; c < d; ++c) acc += drow[c] * vrow[c];
                        da[static_cast<size_t>(j)] = acc;
                        rowdot += acc * arow[j];
                        if (need_v) {
                            T* gv = vn->grad.data() + kr * width + hoff;
                            const T a = arow[j];
                            for (int64_t c = 0; c < d; ++c) gv[c] += a * drow[c];
                        }
                    }
                    if (!need_q && !need_k && !need_b) continue;
                    // Plain score gradient; the 1/sqrt(d) factor applies only
                    // to the dot-product route, not the additive bias.
                    for (int64_t j = 0; j < m; ++j)
                        ds[static_cast<size_t>(j)] = arow[j] * (da[static_cast<size_t>(j)] - rowdot);
                    if (need_b)
                        for (int64_t j = 0; j < m; ++j)
                            bn->grad[static_cast<size_t>((pair_row + j) * num_heads + h)] +=
                                ds[static_cast<size_t>(j)];
                    if (!need_q && !need_k) continue;
                    const T* qrow = qn->data.data() + qe[qi] * width + hoff;
                    T* gq = need_q ? qn->grad.data() + qe[qi] * width + hoff : nullptr;
                    for (int64_t j = 0; j < m; ++j) {
                        const int64_t kr = ke[static_cast<size_t>(j)];
                        const T* krow = kn->data.data() + kr * width + hoff;
                        const T dsj = ds[static_cast<size_t>(j)] * inv_sqrt_d;
                        if (need_q)
                            for (int64_t c = 0; c < d; ++c) gq[c] += dsj * krow[c];
                        if (need_k) {
                            T* gk = kn->grad.data() + kr * width + hoff;
                            for (int64_t c = 0; c < d; ++c) gk[c] += dsj * qrow[c];
                        }
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Multi-granularity attention parameters
// ---------------------------------------------------------------------------

// One attention layer: a fine point branch in base windows and a coarse
// point-voxel branch in voxel windows, shunted across disjoint head groups.
// In the default concat mode each branch projects to half width and owns half
// of the heads; in sum mode both branches run at full width and are summed;
// in point_only mode the coarse branch is absent.
template <typename T>
struct MgaParams {
    int channels = 0;
    int heads = 0;
    ShuntMode shunt = ShuntMode::concat;
    MgaMode mode = MgaMode::full;
    bool use_output_projection = true;

    LayerNormParams<T> ln_points;
    LayerNormParams<T> ln_voxels;
    Mlp2<T> phi;  // voxel tokenizer MLP

    Tensor<T> q_fine, k_fine, v_fine;        // [C, branch_width]
    Tensor<T> q_coarse, k_coarse, v_coarse;  // [C, branch_width]
    Tensor<T> out_w, out_b;                  // [C, C], [C]

    // Optional learned relative-position bias for the point branch: an MLP
    // over coordinate offsets producing one logit per branch head. Off by
    // default; the plain model is purely feature-attentive.
    bool use_position_bias = false;
    Mlp2<T> position_bias;  // 3 -> 8 -> branch heads

    bool has_coarse_branch() const { return mode == MgaMode::full; }

    int branch_heads() const {
        if (mode == MgaMode::point_only || shunt == ShuntMode::sum) return heads;
        return heads / 2;
    }

    int branch_width() const { return channels / heads * branch_heads(); }

    int head_dim() const { return channels / heads; }

    static MgaParams init(int channels, int heads, Rng& rng, ShuntMode shunt = ShuntMode::concat,
                          MgaMode mode = MgaMode::full, bool use_output_projection = true) {
        if (heads < 1 || channels % heads != 0) throw ConfigError("channels must be divisible by heads");
        if (mode == MgaMode::full && shunt == ShuntMode::concat && heads % 2 != 0)
            throw ConfigError("head count must be even to split between branches");
        MgaParams p;
        p.channels = channels;
        p.heads = heads;
        p.shunt = shunt;
        p.mode = mode;
        p.use_output_projection = use_output_projection;
        const int bw = p.branch_width();
        const double s = Mlp2<T>::xavier(channels, bw);
        p.ln_points = LayerNormParams<T>::init(channels);
        p.q_fine = Tensor<T>::randn({channels, bw}, rng, s, true);
        p.k_fine = Tensor<T>::randn({channels, bw}, rng, s, true);
        p.v_fine = Tensor<T>::randn({channels, bw}, rng, s, true);
        if (p.has_coarse_branch()) {
            p.ln_voxels = LayerNormParams<T>::init(channels);
            p.phi = Mlp2<T>::init(channels, channels, channels, rng);
            p.q_coarse = Tensor<T>::randn({channels, bw}, rng, s, true);
            p.k_coarse = Tensor<T>::randn({channels, bw}, rng, s, true);
            p.v_coarse = Tensor<T>::randn({channels, bw}, rng, s, true);
        }
        if (use_output_projection) {
            p.out_w = Tensor<T>::randn({channels, channels}, rng, Mlp2<T>::xavier(channels, channels), true);
            p.out_b = Tensor<T>::zeros({channels}, true);
        }
        return p;
    }

    void enable_position_bias(Rng& rng) {
        use_position_bias = true;
        position_bias = Mlp2<T>::init(3, 8, branch_heads(), rng);
    }

    void collect(const std::string& prefix, NamedParams<T>& out) const {
        ln_points.collect(prefix + ".ln_points", out);
        out.emplace_back(prefix + ".q_fine", q_fine);
        out.emplace_back(prefix + ".k_fine", k_fine);
        out.emplace_back(prefix + ".v_fine", v_fine);
        if (has_coarse_branch()) {
            ln_voxels.collect(prefix + ".ln_voxels", out);
            phi.collect(prefix + ".phi", out);
            out.emplace_back(prefix + ".q_coarse", q_coarse);
            out.emplace_back(prefix + ".k_coarse", k_coarse);
            out.emplace_back(prefix + ".v_coarse", v_coarse);
        }
        if (use_output_projection) {
            out.emplace_back(prefix + ".out_w", out_w);
            out.emplace_back(prefix + ".out_b", out_b);
        }
        if (use_position_bias) position_bias.collect(prefix + ".position_bias", out);
    }
};

// ---------------------------------------------------------------------------
// Voxel tokenization (per-voxel feature mean followed by an MLP)
// ---------------------------------------------------------------------------

// phi == nullptr is the identity hook used by tests.
template <typename T>
Tensor<T> voxel_tokenize(const Tensor<T>& point_feats, const WindowIndex& widx, const Mlp2<T>* phi) {
    if (point_feats.dim(0) != widx.num_points)
        throw ShapeError("voxel_tokenize: feature rows do not match the window index");
    Tensor<T> means = segmented_reduce(point_feats, widx.points_by_voxel, ReduceKind::mean);
    return phi ? phi->forward(means) : means;
}

// ---------------------------------------------------------------------------
// Branches
// ---------------------------------------------------------------------------

namespace detail {

// Coarse branch on pre-normalized inputs: point queries against voxel tokens
// restricted to the point's voxel window.
template <typename T>
Tensor<T> attend_coarse_prenormed(const Tensor<T>& points_ln, const Tensor<T>& voxels_ln,
                                  const WindowIndex& widx, const MgaParams<T>& p,
                                  int64_t* pair_count = nullptr) {
    Tensor<T> q = matmul(points_ln, p.q_coarse);
    Tensor<T> k = matmul(voxels_ln, p.k_coarse);
    Tensor<T> v = matmul(voxels_ln, p.v_coarse);
    return windowed_mha(q, k, v, widx.points_by_voxel_window, widx.voxels_by_voxel_window,
                        p.branch_heads(), pair_count);
}

// Coordinate offsets (query minus key) for every point-branch pair, in the
// attention's pair iteration order.
template <typename T>
Tensor<T> base_window_pair_offsets(const WindowIndex& widx) {
    const SegmentMap& seg = widx.points_by_base_window;
    const int64_t pairs = attention_pair_count(seg, seg);
    std::vector<T> data(static_cast<size_t>(pairs * 3));
    int64_t row = 0;
    for (int32_t s = 0; s < seg.num_segments(); ++s) {
        const auto elems = seg.segment_elements(s);
        for (const int64_t qi : elems)
            for (const int64_t kj : elems) {
                for (int a = 0; a < 3; ++a)
                    data[static_cast<size_t>(row * 3 + a)] =
                        static_cast<T>(widx.point_coords[static_cast<size_t>(qi)][static_cast<size_t>(a)] -
                                       widx.point_coords[static_cast<size_t>(kj)][static_cast<size_t>(a)]);
                ++row;
            }
    }
    return Tensor<T>::from_data({pairs, 3}, std::move(data));
}

// Fine branch on pre-normalized input: point attention inside base windows.
template <typename T>
Tensor<T> attend_fine_prenormed(const Tensor<T>& points_ln, const WindowIndex& widx, const MgaParams<T>& p,
                                int64_t* pair_count = nullptr) {
    Tensor<T> q = matmul(points_ln, p.q_fine);
    Tensor<T> k = matmul(points_ln, p.k_fine);
    Tensor<T> v = matmul(points_ln, p.v_fine);
    Tensor<T> bias;
    if (p.use_position_bias)
        bias = p.position_bias.forward(base_window_pair_offsets<T>(widx));
    return windowed_mha(q, k, v, widx.points_by_base_window, widx.points_by_base_window,
                        p.branch_heads(), pair_count, bias);
}

}  // namespace detail

// Point-voxel cross attention: layer-norms both inputs, projects, and attends
// point queries to the voxel tokens of their voxel window.
template <typename T>
Tensor<T> pvca(const Tensor<T>& point_feats, const Tensor<T>& voxel_feats, const WindowIndex& widx,
               const MgaParams<T>& p, int64_t* pair_count = nullptr) {
    Tensor<T> fn = p.ln_points.forward(point_feats);
    Tensor<T> vn = p.ln_voxels.forward(voxel_feats);
    return detail::attend_coarse_prenormed(fn, vn, widx, p, pair_count);
}

// Windowed point attention inside base windows.
template <typename T>
Tensor<T> point_attention(const Tensor<T>& point_feats, const WindowIndex& widx, const MgaParams<T>& p,
                          int64_t* pair_count = nullptr) {
    Tensor<T> fn = p.ln_points.forward(point_feats);
    return detail::attend_fine_prenormed(fn, widx, p, pair_count);
}

struct MgaPairCounts {
    int64_t fine = 0;
    int64_t coarse = 0;
};

// Full multi-granularity attention layer. The fine branch occupies the first
// half of the channel layout (heads 1..H/2), the coarse branch the second.
template <typename T>
Tensor<T> mga(const Tensor<T>& point_feats, const WindowIndex& widx, const MgaParams<T>& p,
              MgaPairCounts* pairs = nullptr) {
    Tensor<T> fn = p.ln_points.forward(point_feats);
    Tensor<T> fine =
        detail::attend_fine_prenormed(fn, widx, p, pairs ? &pairs->fine : nullptr);
    Tensor<T> combined;
    if (p.has_coarse_branch()) {
        Tensor<T> voxels = voxel_tokenize(point_feats, widx, &p.phi);
        Tensor<T> vn = p.ln_voxels.forward(voxels);
        Tensor<T> coarse =
            detail::attend_coarse_prenormed(fn, vn, widx, p, pairs ? &pairs->coarse : nullptr);
        combined = p.shunt == ShuntMode::concat ? concat_lastdim(fine, coarse) : add(fine, coarse);
    } else {
        combined = fine;
    }
    if (!p.use_output_projection) return combined;
    return linear(combined, p.out_w, p.out_b);
}

// ---------------------------------------------------------------------------
// Re-attention gate
// ---------------------------------------------------------------------------

// Per-point, per-head sigmoid gate computed from the block input (the feature
// before it enters MGA) and multiplied onto the MGA output.
template <typename T>
Tensor<T> re_attention(const Tensor<T>& block_input, const Tensor<T>& mga_out, const Mlp2<T>& gamma,
                       int heads, Tensor<T>* alpha_out = nullptr) {
    const int64_t head_dim = mga_out.dim(1) / heads;
    Tensor<T> alpha = sigmoid(gamma.forward(block_input));
    if (alpha.dim(1) != heads) throw ShapeError("re_attention: gate width must equal head count");
    if (alpha_out) *alpha_out = alpha;
    return mul(mga_out, repeat_interleave_cols(alpha, head_dim));
}

// ---------------------------------------------------------------------------
// Transformer block
// ---------------------------------------------------------------------------

template <typename T>
struct SatBlockParams {
    MgaParams<T> mga;
    Mlp2<T> gate;  // gamma: channels -> heads -> heads
    bool use_re_attention = true;
    LayerNormParams<T> ffn_ln;
    Mlp2<T> ffn;  // channels -> 4*channels -> channels
    bool shifted = false;

    static SatBlockParams init(int channels, int heads, bool shifted, Rng& rng,
                               ShuntMode shunt = ShuntMode::concat, MgaMode mode = MgaMode::full,
                               bool use_re_attention = true, bool use_output_projection = true) {
        SatBlockParams p;
        p.mga = MgaParams<T>::init(channels, heads, rng, shunt, mode, use_output_projection);
        p.use_re_attention = use_re_attention;
        // The gate draws from the RNG even when disabled so that the shared
        // parameters of ablation variants line up with the full model's.
        // Its final layer starts small, keeping gates near the neutral 0.5
        // without deadening the first layer's gradient.
        Mlp2<T> gate = Mlp2<T>::init(channels, heads, heads, rng);
        for (auto& v : gate.w2.values()) v *= T(0.1);
        if (use_re_attention) p.gate = gate;
        p.ffn_ln = LayerNormParams<T>::init(channels);
        p.ffn = Mlp2<T>::init(channels, 4 * channels, channels, rng);
        p.shifted = shifted;
        return p;
    }

    void collect(const std::string& prefix, NamedParams<T>& out) const {
        mga.collect(prefix + ".mga", out);
        if (use_re_attention) gate.collect(prefix + ".gate", out);
        ffn_ln.collect(prefix + ".ffn_ln", out);
        ffn.collect(prefix + ".ffn", out);
    }
};

// Pre-norm residual block: the gated MGA output is added to the input, then a
// layer-normed FFN with its own residual.
template <typename T>
Tensor<T> sat_block(const Tensor<T>& f_in, const WindowIndex& widx, const SatBlockParams<T>& p,
                    Tensor<T>* alpha_out = nullptr) {
    Tensor<T> fprime = mga(f_in, widx, p.mga);
    Tensor<T> gated;
    if (p.use_re_attention) {
        gated = re_attention(f_in, fprime, p.gate, p.mga.heads, alpha_out);
    } else {
        gated = fprime;  // alpha == 1 identically
        if (alpha_out) *alpha_out = Tensor<T>::filled({f_in.dim(0), p.mga.heads}, T(1));
    }
    Tensor<T> f1 = add(f_in, gated);
    return add(f1, p.ffn.forward(p.ffn_ln.forward(f1)));
}

// ---------------------------------------------------------------------------
// Attention cost accounting
// ---------------------------------------------------------------------------

struct AttentionMacs {
    long long fine_branch = 0;         // sum_w n_w^2 * (C/2)
    long long coarse_branch = 0;       // sum_W n_W * v_W * (C/2)
    long long baseline_full_point = 0; // sum_w n_w^2 * C
    long long point_pairs = 0;         // sum_w n_w^2
    long long pvca_pairs = 0;          // sum_W n_W * v_W

    long long mga_total() const { return fine_branch + coarse_branch; }
};

// Multiply-accumulate counts of the attention score products per window, for
// the fine branch, the coarse branch, and a full-width point-attention
// baseline in the same base windows.
inline AttentionMacs count_attention_macs(const WindowIndex& widx, int channels) {
    AttentionMacs m;
    for (int32_t w = 0; w < widx.num_base_windows; ++w) {
        const long long n = widx.points_by_base_window.segment_size(w);
        m.point_pairs += n * n;
    }
    for (int32_t w = 0; w < widx.num_voxel_windows; ++w) {
        const long long n = widx.points_by_voxel_window.segment_size(w);
        const long long v = widx.voxels_by_voxel_window.segment_size(w);
        m.pvca_pairs += n * v;
    }
    m.fine_branch = m.point_pairs * (channels / 2);
    m.coarse_branch = m.pvca_pairs * (channels / 2);
    m.baseline_full_point = m.point_pairs * channels;
    return m;
}

}  // namespace sat
