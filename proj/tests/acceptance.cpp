// Acceptance suite: runs every gate criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "attention_oracles.hpp"
#include "sat/attention.hpp"
#include "sat/checkpoint.hpp"
#include "sat/data.hpp"
#include "sat/evalbench.hpp"
#include "sat/geometry.hpp"
#include "sat/network.hpp"
#include "sat/tensor.hpp"
#include "sat/train.hpp"

using namespace sat;
using oracles::Vec;

namespace {

int failures = 0;

void report(int criterion, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %2d: %-34s %s\n", ok ? "PASS" : "FAIL", criterion, name.c_str(),
                detail.c_str());
    if (!ok) ++failures;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), pattern, a, b, c);
    return buf;
}

// --------------------------------------------------------------------------
// 1. Oracle equivalence for PVCA, point attention, MGA, and tokenization.
// --------------------------------------------------------------------------
void criterion_1() {
    Timer timer;
    Rng rng(101);
    double worst_attn = 0.0, worst_tok = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 16 + static_cast<int>(rng.uniform_int(49));  // up to 64 points
        const int c = 16, h = 4;
        // Points inside a 0.2 cube over a 0.1 voxel grid: at most 8 voxels.
        const auto pts = oracles::random_points(n, rng, 0.0, 0.199);
        const WindowIndex widx = build_window_index(pts, WindowSpec{0.1, 2, 0.1, false});
        if (widx.num_voxels > 8) {
            report(1, "oracle equivalence", false, "voxel cap exceeded");
            return;
        }
        MgaParams<double> params = MgaParams<double>::init(c, h, rng);
        const Vec fv = oracles::random_vec(static_cast<size_t>(n * c), rng);
        Tensor<double> f = Tensor<double>::from_data({n, c}, Vec(fv));

        Tensor<double> voxels = voxel_tokenize<double>(f, widx, &params.phi);
        worst_tok = std::max(worst_tok,
                             oracles::max_abs_diff(voxels, oracles::tokenize_oracle(
                                                               fv, n, c, widx.voxel_of, widx.num_voxels, &params)));
        worst_attn = std::max(worst_attn, oracles::max_abs_diff(pvca(f, voxels, widx, params),
                                                                oracles::pvca_oracle(fv, n, c, widx, params)));
        worst_attn = std::max(worst_attn,
                              oracles::max_abs_diff(point_attention(f, widx, params),
                                                    oracles::point_attention_oracle(fv, n, c, widx, params)));
        worst_attn = std::max(worst_attn, oracles::max_abs_diff(mga(f, widx, params),
                                                                oracles::mga_oracle(fv, n, c, widx, params)));
    }
    const bool ok = worst_attn < 1e-6 && worst_tok < 1e-10 && timer.seconds() < 60.0;
    report(1, "oracle equivalence", ok,
           fmt("attention err %.2e, tokenize err %.2e, %.1fs", worst_attn, worst_tok, timer.seconds()));
}

// --------------------------------------------------------------------------
// 2. Gradient correctness on every primitive and the full block.
// --------------------------------------------------------------------------
void criterion_2() {
    Timer timer;
    Rng rng(102);
    double worst = 0.0;
    const auto check = [&](auto&& fn, std::vector<Tensor<double>> leaves, int coords = 0) {
        const double err = grad_check(fn, leaves, {.step = 1e-5, .max_coords_per_tensor = coords});
        worst = std::max(worst, err);
    };
    const auto weighted = [&](const Tensor<double>& t, const Vec& r) {
        Tensor<double> w = Tensor<double>::from_data(t.shape(), Vec(r));
        return sum_all(mul(t, w));
    };

    const int m = 5, k = 6;
    Tensor<double> a = Tensor<double>::randn({m, k}, rng, 1.0, true);
    Tensor<double> b = Tensor<double>::randn({k, m}, rng, 1.0, true);
    const Vec r_mm = oracles::random_vec(static_cast<size_t>(m * m), rng);
    check([&] { return weighted(matmul(a, b), r_mm); }, {a, b});

    Tensor<double> x = Tensor<double>::randn({m, k}, rng, 1.0, true);
    const Vec r_mk = oracles::random_vec(static_cast<size_t>(m * k), rng);
    check([&] { return weighted(softmax_rows(x), r_mk); }, {x});
    check([&] { return weighted(gelu(x), r_mk); }, {x});
    check([&] { return weighted(sigmoid(x), r_mk); }, {x});

    Tensor<double> gain = Tensor<double>::randn({k}, rng, 1.0, true);
    Tensor<double> bias = Tensor<double>::randn({k}, rng, 1.0, true);
    check([&] { return weighted(layer_norm(x, gain, bias), r_mk); }, {x, gain, bias});

    std::vector<int32_t> seg = {0, 2, 0, 1, 2};
    const SegmentMap map = SegmentMap::build(seg, 3);
    const Vec r_seg = oracles::random_vec(static_cast<size_t>(3 * k), rng);
    for (const ReduceKind kind : {ReduceKind::mean, ReduceKind::sum, ReduceKind::max})
        check([&] { return weighted(segmented_reduce(x, map, kind), r_seg); }, {x});

    Tensor<double> y = Tensor<double>::randn({m, k}, rng, 1.0, true);
    check([&] { return weighted(mul(x, y), r_mk); }, {x, y});
    const Vec r_cat = oracles::random_vec(static_cast<size_t>(m * 2 * k), rng);
    check([&] { return weighted(concat_lastdim(x, y), r_cat); }, {x, y});
    Tensor<double> rowb = Tensor<double>::randn({k}, rng, 1.0, true);
    check([&] { return weighted(add(x, rowb), r_mk); }, {x, rowb});
    const std::vector<int64_t> idx = {1, 1, 4, 0};
    const Vec r_g = oracles::random_vec(static_cast<size_t>(4 * k), rng);
    check([&] { return weighted(gather_rows(x, idx), r_g); }, {x});
    Tensor<double> hmat = Tensor<double>::randn({m, 3}, rng, 1.0, true);
    const Vec r_rep = oracles::random_vec(static_cast<size_t>(m * 6), rng);
    check([&] { return weighted(repeat_interleave_cols(hmat, 2), r_rep); }, {hmat});
    const std::vector<int> labels = {0, 2, 1, 0, 3};
    Tensor<double> wlab = Tensor<double>::randn({k, 4}, rng, 0.5, true);
    check([&] { return cross_entropy_mean(matmul(x, wlab), labels); }, {x, wlab});

    // Full block on 56 points, every parameter sampled.
    const int n = 56, c = 16, h = 4;
    const auto pts = oracles::random_points(n, rng, 0.0, 0.4);
    const WindowIndex widx = build_window_index(pts, WindowSpec{0.2, 2, 0.1, false});
    SatBlockParams<double> blk = SatBlockParams<double>::init(c, h, false, rng);
    Tensor<double> f = Tensor<double>::randn({n, c}, rng, 1.0, true);
    NamedParams<double> named;
    blk.collect("blk", named);
    std::vector<Tensor<double>> leaves = {f};
    for (auto& [name, t] : named) leaves.push_back(t);
    const Vec r_blk = oracles::random_vec(static_cast<size_t>(n * c), rng);
    check([&] { return weighted(sat_block(f, widx, blk), r_blk); }, leaves, 4);

    const bool ok = worst < 1e-4 && timer.seconds() < 300.0;
    report(2, "gradient correctness", ok, fmt("max rel err %.2e, %.1fs", worst, timer.seconds()));
}

// --------------------------------------------------------------------------
// 3. Complexity structure: exact pair counts and density scaling.
// --------------------------------------------------------------------------
PointCloud dense_patch(double density, uint64_t seed) {
    SceneSpec spec;
    spec.room_w = 2.0;
    spec.room_d = 1.5;
    spec.room_h = 1.0;
    spec.density = density;
    spec.min_clutter = 1;
    spec.max_clutter = 2;
    return generate_scene(spec, seed);
}

void criterion_3() {
    Rng rng(103);
    // Exact pair-count identity on a random scene.
    const PointCloud scene = dense_patch(120.0, 5);
    const WindowIndex widx = build_window_index(scene.coords, WindowSpec{0.16, 2, 0.08, false});
    MgaParams<double> params = MgaParams<double>::init(16, 4, rng);
    Tensor<double> f = Tensor<double>::randn({scene.size(), 16}, rng);
    Tensor<double> voxels = voxel_tokenize<double>(f, widx, &params.phi);
    int64_t measured = 0;
    pvca(f, voxels, widx, params, &measured);
    const AttentionMacs macs = count_attention_macs(widx, 16);
    const bool pairs_ok = measured == macs.pvca_pairs;

    // Density doubling at fixed window/voxel sizes: same surfaces (a floor
    // and a wall patch), twice the samples.
    const auto surface_cloud = [](int n, uint64_t seed) {
        Rng srng(seed);
        std::vector<Point3> pts;
        pts.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            if (i % 2 == 0)
                pts.push_back({srng.uniform(0.0, 2.0), srng.uniform(0.0, 1.5), 0.04 + srng.normal(0.0, 0.005)});
            else
                pts.push_back({srng.uniform(0.0, 2.0), 0.03 + srng.normal(0.0, 0.005), srng.uniform(0.0, 1.5)});
        }
        return pts;
    };
    const auto lo = surface_cloud(12000, 7);
    const auto hi = surface_cloud(24000, 8);
    const WindowSpec stage1{0.16, 2, 0.08, false};
    const AttentionMacs mlo = count_attention_macs(build_window_index(lo, stage1), 48);
    const AttentionMacs mhi = count_attention_macs(build_window_index(hi, stage1), 48);
    const double base_ratio = static_cast<double>(mhi.baseline_full_point) /
                              static_cast<double>(mlo.baseline_full_point);
    const double pvca_ratio = static_cast<double>(mhi.coarse_branch) /
                              static_cast<double>(mlo.coarse_branch);
    const bool scaling_ok = base_ratio > 3.6 && base_ratio < 4.4 && pvca_ratio < 3.0 &&
                            pvca_ratio < base_ratio;
    report(3, "complexity structure", pairs_ok && scaling_ok,
           fmt("pairs exact=%.0f, baseline x%.2f, pvca x%.2f", pairs_ok ? 1.0 : 0.0, base_ratio, pvca_ratio));
}

// --------------------------------------------------------------------------
// 4. Lite configuration: MGA under 60% of full-width point attention.
// --------------------------------------------------------------------------
void criterion_4() {
    // Equal windows for both branches (the lite swap) at scan density.
    double worst_ratio = 0.0;
    for (uint64_t seed = 0; seed < 3; ++seed) {
        const PointCloud scene = dense_patch(2500.0, seed);
        const WindowIndex widx = build_window_index(scene.coords, WindowSpec{0.16, 1, 0.08, false});
        const AttentionMacs macs = count_attention_macs(widx, 48);
        const double ratio = static_cast<double>(macs.mga_total()) /
                             static_cast<double>(macs.baseline_full_point);
        worst_ratio = std::max(worst_ratio, ratio);
    }
    report(4, "lite cost under 60%", worst_ratio < 0.6, fmt("worst MGA/baseline = %.3f", worst_ratio));
}

// --------------------------------------------------------------------------
// 5. Branch disentanglement over 50 random trials.
// --------------------------------------------------------------------------
void criterion_5() {
    Rng rng(105);
    const int n = 24, c = 16, h = 4;
    bool ok = true;
    for (int trial = 0; trial < 50 && ok; ++trial) {
        const auto pts = oracles::random_points(n, rng, 0.0, 0.4);
        const WindowIndex widx = build_window_index(pts, WindowSpec{0.2, 2, 0.1, false});
        MgaParams<double> p = MgaParams<double>::init(c, h, rng);
        p.use_output_projection = false;
        Tensor<double> f = Tensor<double>::randn({n, c}, rng);
        Tensor<double> base = mga(f, widx, p);

        MgaParams<double> pv = p;  // perturb the voxel branch
        pv.q_coarse = Tensor<double>::randn({c, 8}, rng, 1.0, true);
        pv.k_coarse = Tensor<double>::randn({c, 8}, rng, 1.0, true);
        pv.v_coarse = Tensor<double>::randn({c, 8}, rng, 1.0, true);
        pv.phi = Mlp2<double>::init(c, c, c, rng);
        Tensor<double> voxed = mga(f, widx, pv);
        MgaParams<double> pp = p;  // perturb the point branch
        pp.q_fine = Tensor<double>::randn({c, 8}, rng, 1.0, true);
        pp.k_fine = Tensor<double>::randn({c, 8}, rng, 1.0, true);
        pp.v_fine = Tensor<double>::randn({c, 8}, rng, 1.0, true);
        Tensor<double> pointed = mga(f, widx, pp);

        for (int i = 0; i < n && ok; ++i)
            for (int j = 0; j < 8 && ok; ++j) {
                if (voxed.at(i, j) != base.at(i, j)) ok = false;           // fine half must hold
                if (pointed.at(i, 8 + j) != base.at(i, 8 + j)) ok = false; // coarse half must hold
            }
    }
    report(5, "branch disentanglement", ok, ok ? "50/50 trials bit-identical" : "leak detected");
}

// --------------------------------------------------------------------------
// 6. Permutation equivariance and fixed-seed reproducibility.
// --------------------------------------------------------------------------
void criterion_6() {
    Rng rng(106);
    const int n = 220;
    const auto pts = oracles::random_points(n, rng, 0.0, 2.0);
    const Vec feat_data = oracles::random_vec(static_cast<size_t>(n * 6), rng);
    Model<double> model = build_model<double>(ModelConfig::desk_preset(), 5);

    std::vector<int64_t> perm(n);
    std::iota(perm.begin(), perm.end(), int64_t{0});
    rng.shuffle(perm);
    std::vector<Point3> ppts(n);
    Vec pfeat(feat_data.size());
    for (int i = 0; i < n; ++i) {
        ppts[static_cast<size_t>(i)] = pts[static_cast<size_t>(perm[static_cast<size_t>(i)])];
        for (int j = 0; j < 6; ++j)
            pfeat[static_cast<size_t>(i * 6 + j)] = feat_data[static_cast<size_t>(perm[static_cast<size_t>(i)] * 6 + j)];
    }
    Tensor<double> out_a = forward_segmentation(model, pts, Tensor<double>::from_data({n, 6}, Vec(feat_data)));
    Tensor<double> out_b = forward_segmentation(model, ppts, Tensor<double>::from_data({n, 6}, std::move(pfeat)));
    bool equivariant = true;
    for (int i = 0; i < n && equivariant; ++i)
        for (int j = 0; j < 7 && equivariant; ++j)
            if (out_b.at(i, j) != out_a.at(perm[static_cast<size_t>(i)], j)) equivariant = false;

    // Fixed-seed training reproducibility at 64-bit.
    std::vector<PointCloud> scenes;
    for (uint64_t s = 0; s < 2; ++s) scenes.push_back(dense_patch(10.0, s));
    TrainOptions opts;
    opts.epochs = 4;
    opts.max_points = 200;
    opts.eval_every = 0;
    opts.seed = 9;
    Model<double> m1 = build_model<double>(ModelConfig::desk_preset(), 9);
    Model<double> m2 = build_model<double>(ModelConfig::desk_preset(), 9);
    const TrainStats s1 = train_model(m1, scenes, {}, opts);
    const TrainStats s2 = train_model(m2, scenes, {}, opts);
    bool reproducible = s1.loss_curve.size() == s2.loss_curve.size();
    for (size_t i = 0; reproducible && i < s1.loss_curve.size(); ++i)
        if (s1.loss_curve[i] != s2.loss_curve[i]) reproducible = false;

    report(6, "equivariance + determinism", equivariant && reproducible,
           fmt("equivariant=%.0f, bitwise curves=%.0f", equivariant ? 1.0 : 0.0, reproducible ? 1.0 : 0.0));
}

// --------------------------------------------------------------------------
// 7. Trainability: overfit eight scenes within 500 steps.
// --------------------------------------------------------------------------
Model<float> overfit_model_storage = Model<float>{};
std::vector<PointCloud> overfit_scenes_storage;

void criterion_7() {
    Timer timer;
    std::vector<PointCloud> scenes;
    for (uint64_t s = 0; s < 8; ++s) scenes.push_back(generate_scene(SceneSpec{}, 1000 + s));
    int64_t largest = 0;
    for (const auto& c : scenes) largest = std::max(largest, c.size());

    Model<float> model = build_model<float>(ModelConfig::desk_preset(), 1);
    TrainOptions opts;
    opts.epochs = 63;
    opts.max_steps = 500;
    opts.seed = 1;
    opts.eval_every = 0;
    const TrainStats stats = train_model(model, scenes, {}, opts);

    const SegMetrics metrics = miou_macc(evaluate_model(model, scenes));
    const bool ok = largest <= 2048 && stats.steps <= 500 && stats.final_accuracy >= 0.95 &&
                    metrics.miou >= 90.0 && timer.seconds() < 900.0;
    report(7, "trainability (overfit)", ok,
           fmt("acc %.1f%%, train mIoU %.1f, %.0fs", 100.0 * stats.final_accuracy, metrics.miou,
               timer.seconds()));
    overfit_model_storage = std::move(model);
    overfit_scenes_storage = std::move(scenes);
}

// --------------------------------------------------------------------------
// 8. Ablation harness: all variants build and train; gate-off equivalence.
// --------------------------------------------------------------------------
void criterion_8() {
    std::vector<PointCloud> scenes;
    for (uint64_t s = 0; s < 2; ++s) scenes.push_back(dense_patch(10.0, 40 + s));
    bool all_train = true;
    std::string detail;
    for (const std::string name : {"full", "no-reattention", "sum-shunted", "point-only", "lite-mga"}) {
        Model<float> model = build_model<float>(apply_variant(ModelConfig::desk_preset(), name), 3);
        TrainOptions opts;
        opts.epochs = 3;
        opts.max_points = 220;
        opts.eval_every = 0;
        const TrainStats stats = train_model(model, scenes, {}, opts);
        if (!(stats.loss_curve.back() < stats.loss_curve.front())) {
            all_train = false;
            detail = name + " did not descend";
        }
    }

    // Removing re-attention equals forcing alpha to one.
    Rng rng(108);
    const auto pts = oracles::random_points(40, rng, 0.0, 1.0);
    const WindowIndex widx = build_window_index(pts, WindowSpec{0.5, 2, 0.25, false});
    SatBlockParams<double> blk = SatBlockParams<double>::init(16, 2, false, rng, ShuntMode::concat,
                                                              MgaMode::full, false);
    Tensor<double> f = Tensor<double>::randn({40, 16}, rng);
    Tensor<double> got = sat_block(f, widx, blk);
    Tensor<double> fprime = mga(f, widx, blk.mga);
    Tensor<double> ones = Tensor<double>::filled({40, 2}, 1.0);
    Tensor<double> f1 = add(f, mul(fprime, repeat_interleave_cols(ones, 8)));
    Tensor<double> expect = add(f1, blk.ffn.forward(blk.ffn_ln.forward(f1)));
    bool gate_equiv = true;
    for (int64_t i = 0; i < got.numel(); ++i)
        if (got.at(i) != expect.at(i)) gate_equiv = false;

    report(8, "ablation harness", all_train && gate_equiv,
           all_train && gate_equiv ? "5 variants trained; alpha==1 equivalence exact"
                                   : (detail.empty() ? "gate equivalence broken" : detail));
}

// --------------------------------------------------------------------------
// 9. Metric correctness including the benchmark-table variance ranking.
// --------------------------------------------------------------------------
void criterion_9() {
    Rng rng(109);
    bool oracle_ok = true;
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 500, k = 5;
        std::vector<int> truth(n), pred(n);
        for (auto& t : truth) t = static_cast<int>(rng.uniform_int(k));
        for (auto& p : pred) p = static_cast<int>(rng.uniform_int(k));
        ConfusionMatrix cm(k);
        cm.accumulate(truth, pred);
        const SegMetrics m = miou_macc(cm);
        for (int c = 0; c < k; ++c) {
            int64_t tp = 0, fp = 0, fn = 0;
            for (int i = 0; i < n; ++i) {
                if (truth[static_cast<size_t>(i)] == c && pred[static_cast<size_t>(i)] == c) ++tp;
                if (truth[static_cast<size_t>(i)] != c && pred[static_cast<size_t>(i)] == c) ++fp;
                if (truth[static_cast<size_t>(i)] == c && pred[static_cast<size_t>(i)] != c) ++fn;
            }
            if (m.per_class_iou[static_cast<size_t>(c)] !=
                100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp + fn))
                oracle_ok = false;
        }
    }

    ConfusionMatrix hand(2);
    hand.add(0, 0, 3);
    hand.add(0, 1, 1);
    hand.add(1, 0, 1);
    hand.add(1, 1, 3);
    const SegMetrics h = miou_macc(hand);
    const bool hand_ok = std::abs(h.miou - 60.0) < 1e-12 && std::abs(h.macc - 75.0) < 1e-12;

    // Benchmark-table rows with full per-class data, beam column excluded.
    const std::map<std::string, std::vector<double>> rows = {
        {"pointnet", {88.8, 97.3, 69.8, 1.0, 3.9, 46.3, 10.8, 59.0, 52.6, 5.9, 40.3, 26.4, 33.2}},
        {"rsnet", {93.3, 98.3, 79.2, 0.0, 15.8, 45.4, 50.1, 67.9, 65.5, 52.5, 22.5, 41.0, 43.6}},
        {"pointcnn", {92.3, 98.2, 79.4, 0.0, 17.6, 22.8, 62.1, 74.4, 80.6, 31.7, 66.7, 62.1, 56.7}},
        {"spgraph", {89.4, 96.9, 78.1, 0.0, 42.8, 48.9, 61.6, 84.7, 75.4, 69.8, 52.6, 2.1, 52.2}},
        {"pccn", {92.3, 96.2, 75.9, 3.0, 6.0, 69.5, 63.5, 66.9, 65.6, 47.3, 68.9, 59.1, 46.2}},
        {"pointweb", {92.0, 98.5, 79.4, 0.0, 21.1, 59.7, 34.8, 76.3, 88.3, 46.9, 69.3, 64.9, 52.5}},
        {"minkowski", {91.8, 98.7, 86.2, 0.0, 34.1, 48.9, 62.4, 81.6, 89.8, 47.2, 74.9, 74.4, 58.6}},
        {"kpconv", {92.8, 97.3, 82.4, 0.0, 23.9, 58.0, 69.0, 81.5, 91.0, 75.4, 75.3, 66.7, 58.9}},
        {"cbl", {93.9, 98.4, 84.2, 0.0, 37.0, 57.7, 71.9, 91.7, 81.8, 77.8, 75.6, 69.1, 62.9}},
        {"point_transformer", {94.0, 98.5, 86.3, 0.0, 38.0, 63.4, 74.3, 82.4, 89.1, 80.2, 74.3, 76.0, 59.3}},
        {"pointnext_xl", {94.2, 98.5, 84.4, 0.0, 37.7, 59.3, 74.0, 83.1, 91.6, 77.4, 76.72, 78.8, 60.6}},
        {"stratified", {96.2, 98.7, 85.6, 0.0, 46.1, 60.0, 76.8, 92.6, 84.5, 77.8, 75.2, 78.1, 64.0}},
        {"sat", {93.6, 98.5, 87.2, 0.0, 49.3, 61.1, 73.6, 83.7, 91.8, 81.7, 77.9, 82.3, 63.4}},
    };
    std::string lowest_name;
    double lowest = 1e300;
    for (const auto& [name, row] : rows) {
        const double var = class_iou_variance(row, {3});
        if (var < lowest) {
            lowest = var;
            lowest_name = name;
        }
    }
    const bool variance_ok = lowest_name == "sat";
    report(9, "metric correctness", oracle_ok && hand_ok && variance_ok,
           fmt("loop oracle=%.0f, hand case=%.0f, variance rank lowest=%.0f", oracle_ok ? 1.0 : 0.0,
               hand_ok ? 1.0 : 0.0, variance_ok ? 1.0 : 0.0));
}

// --------------------------------------------------------------------------
// 10. Re-attention diagnostics: neutral gate and post-training report.
// --------------------------------------------------------------------------
void criterion_10() {
    // Zero-gate checkpoint emits exactly 0.5 everywhere.
    Model<float> zero = build_model<float>(ModelConfig::desk_preset(), 2);
    for (auto& stage : zero.encoder)
        for (auto& blk : stage) {
            for (auto& v : blk.gate.w2.values()) v = 0.f;
            for (auto& v : blk.gate.b2.values()) v = 0.f;
        }
    std::vector<PointCloud> probe = {generate_scene(SceneSpec{}, 77)};
    const ReAttentionReport zr = collect_reattention(zero, probe);
    bool half_ok = true;
    for (const auto& layer : zr.layers)
        for (int c = 0; c < zr.num_classes; ++c) {
            if (layer.class_count[static_cast<size_t>(c)] == 0) continue;
            for (int hd = 0; hd < layer.heads; ++hd)
                if (layer.class_mean[static_cast<size_t>(c * layer.heads + hd)] != 0.5) half_ok = false;
        }

    // The trained model from criterion 7: per-layer [classes, heads] report
    // with every value inside (0,1).
    bool trained_ok = overfit_scenes_storage.empty() ? false : true;
    double stage1_dist = 0.0, stage2_dist = 0.0;
    if (trained_ok) {
        const ReAttentionReport tr = collect_reattention(overfit_model_storage, overfit_scenes_storage);
        if (tr.layers.size() != 2) trained_ok = false;
        for (const auto& layer : tr.layers) {
            if (layer.class_mean.size() != static_cast<size_t>(tr.num_classes * layer.heads))
                trained_ok = false;
            for (int c = 0; c < tr.num_classes && trained_ok; ++c) {
                if (layer.class_count[static_cast<size_t>(c)] == 0) continue;
                for (int hd = 0; hd < layer.heads; ++hd) {
                    const double v = layer.class_mean[static_cast<size_t>(c * layer.heads + hd)];
                    if (!(v > 0.0 && v < 1.0)) trained_ok = false;
                }
            }
        }
        if (trained_ok) {
            const auto dist = [](const ReAttentionReport::Layer& layer) {
                const std::span<const double> small(layer.size_mean.data() + kSizeSmall * layer.heads,
                                                    static_cast<size_t>(layer.heads));
                const std::span<const double> large(layer.size_mean.data() + kSizeLarge * layer.heads,
                                                    static_cast<size_t>(layer.heads));
                return cosine_distance(small, large);
            };
            stage1_dist = dist(tr.layers[0]);
            stage2_dist = dist(tr.layers[1]);
        }
    }
    report(10, "re-attention diagnostics", half_ok && trained_ok,
           fmt("zero-gate exact 0.5=%.0f; size gap stage1 %.2e vs stage2 %.2e (reported)",
               half_ok ? 1.0 : 0.0, stage1_dist, stage2_dist));
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all 10 acceptance criteria passed\n");
    return 0;
}
