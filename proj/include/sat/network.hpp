#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sat/attention.hpp"
#include "sat/common.hpp"
#include "sat/geometry.hpp"
#include "sat/nn.hpp"
#include "sat/tensor.hpp"

namespace sat {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct StageConfig {
    int channels = 0;
    int blocks = 1;
    int heads = 0;
    double base_window = 0.16;  // meters
    int coarse_ratio = 2;       // voxel window edge = coarse_ratio * base_window
    double voxel_size = 0.08;   // meters
    // One flag per block; defaults to shifting every odd-indexed block.
    std::vector<uint8_t> shifted_blocks;

    void fill_default_shifts() {
        shifted_blocks.resize(static_cast<size_t>(blocks));
        for (int b = 0; b < blocks; ++b) shifted_blocks[static_cast<size_t>(b)] = (b % 2 == 1);
    }
};

struct VariantConfig {
    bool re_attention = true;
    ShuntMode shunt = ShuntMode::concat;
    MgaMode mga = MgaMode::full;
    bool lite_windows = false;  // coarse branch uses the base window
};

// Named ablation switches. Rows follow the ablation table: each "removing"
// row disables re-attention as well.
inline VariantConfig variant_from_name(const std::string& name) {
    VariantConfig v;
    if (name == "full") return v;
    if (name == "no-reattention") {
        v.re_attention = false;
        return v;
    }
    if (name == "sum-shunted") {
        v.re_attention = false;
        v.shunt = ShuntMode::sum;
        return v;
    }
    if (name == "point-only") {
        v.re_attention = false;
        v.mga = MgaMode::point_only;
        return v;
    }
    if (name == "lite-mga") {
        v.lite_windows = true;
        return v;
    }
    throw ConfigError("unknown variant '" + name + "' (expected full, no-reattention, sum-shunted, "
                      "point-only, or lite-mga)");
}

struct ModelConfig {
    std::vector<StageConfig> stages;
    int input_channels = 6;  // xyz + rgb
    int num_classes = 7;
    int downsample_ratio = 4;
    int knn_pool = 16;
    VariantConfig variant;
    bool output_projection = true;
    bool use_window_shift = true;
    bool position_bias = false;  // learned relative-position bias, point branch

    void validate() const {
        if (stages.empty()) throw ConfigError("model needs at least one stage");
        if (input_channels < 1 || num_classes < 2) throw ConfigError("bad input/class configuration");
        if (downsample_ratio < 2) throw ConfigError("downsample ratio must be at least 2");
        for (const auto& s : stages) {
            if (s.blocks < 1) throw ConfigError("stage needs at least one block");
            if (s.channels < 1 || s.heads < 1 || s.channels % s.heads != 0)
                throw ConfigError("stage channels must be divisible by heads");
            if (variant.mga == MgaMode::full && variant.shunt == ShuntMode::concat && s.heads % 2 != 0)
                throw ConfigError("stage head count must be even");
            if (s.coarse_ratio < 1) throw ConfigError("coarse ratio must be >= 1");
            if (!(s.base_window > 0.0) || !(s.voxel_size > 0.0))
                throw ConfigError("window and voxel sizes must be positive");
            if (static_cast<int>(s.shifted_blocks.size()) != s.blocks)
                throw ConfigError("per-block shift flags not initialized");
        }
    }

    WindowSpec window_spec(int stage, bool shifted) const {
        const StageConfig& s = stages.at(static_cast<size_t>(stage));
        WindowSpec w;
        w.base_edge = s.base_window;
        w.coarse_ratio = variant.lite_windows ? 1 : s.coarse_ratio;
        w.voxel_edge = s.voxel_size;
        w.shifted = shifted && use_window_shift;
        return w;
    }

    static ModelConfig s3dis_preset(int num_classes = 13);
    static ModelConfig scannet_preset(int num_classes = 20);
    static ModelConfig desk_preset(int num_classes = 7);
};

namespace detail {

inline StageConfig make_stage(int channels, int blocks, double bw, int ratio, double vox) {
    StageConfig s;
    s.channels = channels;
    s.blocks = blocks;
    s.heads = channels / 8;  // head width fixed at 8
    s.base_window = bw;
    s.coarse_ratio = ratio;
    s.voxel_size = vox;
    s.fill_default_shifts();
    return s;
}

}  // namespace detail

inline ModelConfig ModelConfig::s3dis_preset(int num_classes) {
    ModelConfig c;
    c.num_classes = num_classes;
    c.stages = {
        detail::make_stage(48, 2, 0.16, 2, 0.08),
        detail::make_stage(96, 2, 0.32, 2, 0.16),
        detail::make_stage(192, 6, 0.64, 2, 0.16),
        detail::make_stage(384, 2, 1.28, 2, 0.32),
    };
    return c;
}

inline ModelConfig ModelConfig::scannet_preset(int num_classes) {
    ModelConfig c;
    c.num_classes = num_classes;
    c.stages = {
        detail::make_stage(48, 3, 0.1, 3, 0.1),
        detail::make_stage(96, 6, 0.2, 3, 0.2),
        detail::make_stage(192, 6, 0.4, 3, 0.2),
        detail::make_stage(384, 6, 0.8, 3, 0.4),
        detail::make_stage(384, 3, 1.6, 3, 0.4),
    };
    return c;
}

// Two-stage configuration small enough to train on a laptop CPU while still
// exercising every architectural element.
inline ModelConfig ModelConfig::desk_preset(int num_classes) {
    ModelConfig c;
    c.num_classes = num_classes;
    c.stages = {
        detail::make_stage(16, 1, 0.8, 2, 0.4),
        detail::make_stage(32, 1, 1.6, 2, 0.8),
    };
    return c;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename T>
struct TransitionDownParams {
    Tensor<T> w, b;  // lift C_in -> C_out before neighborhood max-pooling

    static TransitionDownParams init(int in, int out, Rng& rng) {
        TransitionDownParams p;
        p.w = Tensor<T>::randn({in, out}, rng, Mlp2<T>::xavier(in, out), true);
        p.b = Tensor<T>::zeros({out}, true);
        return p;
    }

    void collect(const std::string& prefix, NamedParams<T>& out) const {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

template <typename T>
struct TransitionUpParams {
    Tensor<T> proj_coarse_w, proj_coarse_b;  // C_coarse -> C_fine
    Tensor<T> proj_skip_w, proj_skip_b;      // C_fine -> C_fine
    Mlp2<T> mlp;                             // C_fine -> C_fine -> C_fine

    static TransitionUpParams init(int coarse, int fine, Rng& rng) {
        TransitionUpParams p;
        p.proj_coarse_w = Tensor<T>::randn({coarse, fine}, rng, Mlp2<T>::xavier(coarse, fine), true);
        p.proj_coarse_b = Tensor<T>::zeros({fine}, true);
        p.proj_skip_w = Tensor<T>::randn({fine, fine}, rng, Mlp2<T>::xavier(fine, fine), true);
        p.proj_skip_b = Tensor<T>::zeros({fine}, true);
        p.mlp = Mlp2<T>::init(fine, fine, fine, rng);
        return p;
    }

    void collect(const std::string& prefix, NamedParams<T>& out) const {
        out.emplace_back(prefix + ".proj_coarse_w", proj_coarse_w);
        out.emplace_back(prefix + ".proj_coarse_b", proj_coarse_b);
        out.emplace_back(prefix + ".proj_skip_w", proj_skip_w);
        out.emplace_back(prefix + ".proj_skip_b", proj_skip_b);
        mlp.collect(prefix + ".mlp", out);
    }
};

template <typename T>
struct Model {
    ModelConfig config;
    Mlp2<T> embedding;  // input_channels -> C1 -> C1
    std::vector<std::vector<SatBlockParams<T>>> encoder;  // per stage
    std::vector<TransitionDownParams<T>> downs;           // between consecutive stages
    std::vector<TransitionUpParams<T>> ups;               // decoder, one per stage pair
    Tensor<T> head_w, head_b;                             // C1 -> num_classes

    NamedParams<T> named_parameters() const {
        NamedParams<T> out;
        embedding.collect("embedding", out);
        for (size_t s = 0; s < encoder.size(); ++s)
            for (size_t b = 0; b < encoder[s].size(); ++b)
                encoder[s][b].collect("stage" + std::to_string(s) + ".block" + std::to_string(b), out);
        for (size_t i = 0; i < downs.size(); ++i) downs[i].collect("down" + std::to_string(i), out);
        for (size_t i = 0; i < ups.size(); ++i) ups[i].collect("up" + std::to_string(i), out);
        out.emplace_back("head.w", head_w);
        out.emplace_back("head.b", head_b);
        return out;
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : named_parameters()) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : named_parameters()) t.zero_grad();
    }
};

template <typename T>
Model<T> build_model(const ModelConfig& config, uint64_t seed = 1) {
    config.validate();
    Rng rng(seed);
    Model<T> m;
    m.config = config;
    const int c1 = config.stages.front().channels;
    m.embedding = Mlp2<T>::init(config.input_channels, c1, c1, rng);
    m.encoder.resize(config.stages.size());
    for (size_t s = 0; s < config.stages.size(); ++s) {
        const StageConfig& st = config.stages[s];
        for (int b = 0; b < st.blocks; ++b) {
            SatBlockParams<T> blk = SatBlockParams<T>::init(
                st.channels, st.heads, st.shifted_blocks[static_cast<size_t>(b)] != 0, rng,
                config.variant.shunt, config.variant.mga, config.variant.re_attention,
                config.output_projection);
            if (config.position_bias) blk.mga.enable_position_bias(rng);
            m.encoder[s].push_back(std::move(blk));
        }
    }
    for (size_t s = 0; s + 1 < config.stages.size(); ++s)
        m.downs.push_back(TransitionDownParams<T>::init(config.stages[s].channels,
                                                        config.stages[s + 1].channels, rng));
    for (size_t s = 0; s + 1 < config.stages.size(); ++s)
        m.ups.push_back(TransitionUpParams<T>::init(config.stages[s + 1].channels,
                                                    config.stages[s].channels, rng));
    const int ck = config.stages.front().channels;
    m.head_w = Tensor<T>::randn({ck, config.num_classes}, rng, Mlp2<T>::xavier(ck, config.num_classes), true);
    m.head_b = Tensor<T>::zeros({config.num_classes}, true);
    return m;
}

// Rebuild a model with one ablation switch applied. Parameter shapes match
// the source wherever the switch leaves them unchanged.
inline ModelConfig apply_variant(ModelConfig config, const std::string& name) {
    config.variant = variant_from_name(name);
    return config;
}

// ---------------------------------------------------------------------------
// Transitions
// ---------------------------------------------------------------------------

template <typename T>
struct StageState {
    std::vector<Point3> coords;
    Tensor<T> feats;
    std::vector<int64_t> origin;  // index into the original cloud
};

// FPS to ceil(N/ratio) points, then max-pool MLP-lifted features over each
// selected point's k nearest neighbors in the finer set.
template <typename T>
StageState<T> transition_down(const StageState<T>& fine, const TransitionDownParams<T>& p, int ratio,
                              int knn_pool) {
    const int64_t n = static_cast<int64_t>(fine.coords.size());
    if (n < 1) throw ConfigError("transition_down: empty stage");
    const int64_t m = (n + ratio - 1) / ratio;
    const std::vector<int64_t> selected = farthest_point_sample(fine.coords, m);

    StageState<T> coarse;
    coarse.coords.resize(static_cast<size_t>(m));
    coarse.origin.resize(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
        coarse.coords[static_cast<size_t>(i)] = fine.coords[static_cast<size_t>(selected[static_cast<size_t>(i)])];
        coarse.origin[static_cast<size_t>(i)] = fine.origin[static_cast<size_t>(selected[static_cast<size_t>(i)])];
    }

    const int64_t k = std::min<int64_t>(knn_pool, n);
    const KnnResult nn = knn_search(fine.coords, coarse.coords, k);
    Tensor<T> lifted = gelu(linear(fine.feats, p.w, p.b));
    Tensor<T> gathered = gather_rows(lifted, nn.indices);
    std::vector<int32_t> seg_ids(static_cast<size_t>(m * k));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < k; ++j) seg_ids[static_cast<size_t>(i * k + j)] = static_cast<int32_t>(i);
    const SegmentMap seg = SegmentMap::build(seg_ids, static_cast<int32_t>(m));
    coarse.feats = segmented_reduce(gathered, seg, ReduceKind::max);
    return coarse;
}

// Interpolate projected coarse features onto the fine positions, add the
// projected skip features, and refine with an MLP.
template <typename T>
Tensor<T> transition_up(const StageState<T>& coarse, const StageState<T>& fine_skip,
                        const TransitionUpParams<T>& p) {
    Tensor<T> projected = linear(coarse.feats, p.proj_coarse_w, p.proj_coarse_b);
    Tensor<T> up = interpolate_3nn<T>(coarse.coords, projected, fine_skip.coords);
    Tensor<T> skip = linear(fine_skip.feats, p.proj_skip_w, p.proj_skip_b);
    return p.mlp.forward(add(up, skip));
}

// ---------------------------------------------------------------------------
// Full segmentation forward
// ---------------------------------------------------------------------------

// Per-block gate values captured during a forward pass, with provenance back
// to the original point indices.
template <typename T>
struct ForwardCapture {
    struct Layer {
        int stage = 0;
        int block = 0;
        int heads = 0;
        Tensor<T> alpha;               // [points at this stage, heads]
        std::vector<int64_t> origin;   // original cloud index per row
    };
    std::vector<Layer> layers;
};

namespace detail {

template <typename T>
void check_finite(const Tensor<T>& t, int stage, int block) {
    for (const T v : t.values()) {
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError("non-finite activation at stage " + std::to_string(stage) + " block " +
                               std::to_string(block));
    }
}

}  // namespace detail

// Runs the hierarchical encoder/decoder and returns per-point class logits
// [N, num_classes] in the input point order.
template <typename T>
Tensor<T> forward_segmentation(const Model<T>& model, std::span<const Point3> coords,
                               const Tensor<T>& features, ForwardCapture<T>* capture = nullptr) {
    const ModelConfig& cfg = model.config;
    const int64_t n = static_cast<int64_t>(coords.size());
    if (n < 1) throw ConfigError("forward_segmentation: empty cloud");
    if (features.dim(0) != n || features.dim(1) != cfg.input_channels)
        throw ShapeError("forward_segmentation: feature matrix must be [points, input_channels]");

    StageState<T> state;
    state.coords.assign(coords.begin(), coords.end());
    state.feats = model.embedding.forward(features);
    state.origin.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) state.origin[static_cast<size_t>(i)] = i;

    const size_t num_stages = cfg.stages.size();
    std::vector<StageState<T>> skips(num_stages);
    for (size_t s = 0; s < num_stages; ++s) {
        // Two possible window layouts per stage (plain and shifted); build lazily.
        std::map<bool, WindowIndex> indices;
        for (size_t b = 0; b < model.encoder[s].size(); ++b) {
            const SatBlockParams<T>& blk = model.encoder[s][b];
            const bool shifted = blk.shifted && cfg.use_window_shift;
            auto it = indices.find(shifted);
            if (it == indices.end())
                it = indices.emplace(shifted, build_window_index(state.coords, cfg.window_spec(
                                                  static_cast<int>(s), shifted))).first;
            Tensor<T> alpha;
            state.feats = sat_block(state.feats, it->second, blk, capture ? &alpha : nullptr);
            detail::check_finite(state.feats, static_cast<int>(s), static_cast<int>(b));
            if (capture) {
                typename ForwardCapture<T>::Layer layer;
                layer.stage = static_cast<int>(s);
                layer.block = static_cast<int>(b);
                layer.heads = blk.mga.heads;
                layer.alpha = alpha;
                layer.origin = state.origin;
                capture->layers.push_back(std::move(layer));
            }
        }
        skips[s] = state;
        if (s + 1 < num_stages)
            state = transition_down(state, model.downs[s], cfg.downsample_ratio, cfg.knn_pool);
    }

    // Decoder: walk back up, one interpolation + skip per stage pair.
    StageState<T> decoded = skips.back();
    for (size_t s = num_stages - 1; s-- > 0;) {
        Tensor<T> f = transition_up(decoded, skips[s], model.ups[s]);
        decoded = skips[s];
        decoded.feats = f;
    }
    return linear(decoded.feats, model.head_w, model.head_b);
}

}  // namespace sat
