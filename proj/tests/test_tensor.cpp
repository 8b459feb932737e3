#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sat/checkpoint.hpp"
#include "sat/common.hpp"
#include "sat/tensor.hpp"

using namespace sat;

namespace {

// ---- independent oracles (kept free of the implementation paths) ----------

std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b, int m,
                                  int k, int n) {
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int l = 0; l < k; ++l) c[static_cast<size_t>(i * n + j)] += a[static_cast<size_t>(i * k + l)] * b[static_cast<size_t>(l * n + j)];
    return c;
}

// Direct exp/sum without max subtraction; valid at small magnitudes.
std::vector<double> softmax_oracle(const std::vector<double>& x, int m, int n) {
    std::vector<double> y(x.size());
    for (int i = 0; i < m; ++i) {
        double sum = 0.0;
        for (int j = 0; j < n; ++j) sum += std::exp(x[static_cast<size_t>(i * n + j)]);
        for (int j = 0; j < n; ++j) y[static_cast<size_t>(i * n + j)] = std::exp(x[static_cast<size_t>(i * n + j)]) / sum;
    }
    return y;
}

// Explicit two-pass mean/variance.
std::vector<double> layer_norm_oracle(const std::vector<double>& x, const std::vector<double>& g,
                                      const std::vector<double>& b, int m, int d, double eps) {
    std::vector<double> y(x.size());
    for (int i = 0; i < m; ++i) {
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += x[static_cast<size_t>(i * d + j)];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = x[static_cast<size_t>(i * d + j)] - mean;
            var += c * c;
        }
        var /= d;
        for (int j = 0; j < d; ++j)
            y[static_cast<size_t>(i * d + j)] =
                g[static_cast<size_t>(j)] * (x[static_cast<size_t>(i * d + j)] - mean) / std::sqrt(var + eps) +
                b[static_cast<size_t>(j)];
    }
    return y;
}

double gelu_oracle(double x) {
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / 3.141592653589793) * (x + 0.044715 * x * x * x)));
}

std::vector<double> random_vec(size_t n, Rng& rng, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, scale);
    return v;
}

// Scalar loss sum(op_output * r) with fixed random weights r, so the gradient
// exercises every output coordinate distinctly.
Tensor<double> weighted_sum(const Tensor<double>& t, const std::vector<double>& r) {
    Tensor<double> w = Tensor<double>::from_data(t.shape(), std::vector<double>(r.begin(), r.end()));
    return sum_all(mul(t, w));
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
    Rng rng(1);
    Tensor<double> x = Tensor<double>::randn({2, 5}, rng);
    Tensor<double> i2 = Tensor<double>::identity(2);
    Tensor<double> y = matmul(i2, x);
    for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(y.at(i) == x.at(i));

    Tensor<double> a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
    Tensor<double> b = Tensor<double>::from_data({2, 1}, {1, 1});
    Tensor<double> c = matmul(a, b);
    REQUIRE(c.at(0, 0) == 3.0);
    REQUIRE(c.at(1, 0) == 7.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(2);
    const int m = 5, k = 4, n = 3;
    const auto av = random_vec(static_cast<size_t>(m * k), rng);
    const auto bv = random_vec(static_cast<size_t>(k * n), rng);
    Tensor<double> a = Tensor<double>::from_data({m, k}, std::vector<double>(av));
    Tensor<double> b = Tensor<double>::from_data({k, n}, std::vector<double>(bv));
    Tensor<double> c = matmul(a, b);
    const auto expect = matmul_oracle(av, bv, m, k, n);
    for (int64_t i = 0; i < c.numel(); ++i)
        REQUIRE(std::abs(c.at(i) - expect[static_cast<size_t>(i)]) < 1e-12);
}

TEST_CASE("matmul shape mismatch raises") {
    Tensor<double> a = Tensor<double>::zeros({2, 3});
    Tensor<double> b = Tensor<double>::zeros({4, 2});
    REQUIRE_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("softmax rows: symmetry, stabilization, oracle") {
    Tensor<double> flat = softmax_rows(Tensor<double>::from_data({1, 3}, {0, 0, 0}));
    for (int j = 0; j < 3; ++j) REQUIRE(std::abs(flat.at(0, j) - 1.0 / 3.0) < 1e-15);

    Tensor<double> big = softmax_rows(Tensor<double>::from_data({1, 2}, {1000, 0}));
    REQUIRE(std::abs(big.at(0, 0) - 1.0) < 1e-12);
    REQUIRE(std::abs(big.at(0, 1) - 0.0) < 1e-12);

    Rng rng(3);
    const int m = 6, n = 7;
    const auto xv = random_vec(static_cast<size_t>(m * n), rng, 0.5);
    Tensor<double> y = softmax_rows(Tensor<double>::from_data({m, n}, std::vector<double>(xv)));
    const auto expect = softmax_oracle(xv, m, n);
    for (int64_t i = 0; i < y.numel(); ++i)
        REQUIRE(std::abs(y.at(i) - expect[static_cast<size_t>(i)]) < 1e-12);
    for (int i = 0; i < m; ++i) {
        double sum = 0.0;
        for (int j = 0; j < n; ++j) sum += y.at(i, j);
        REQUIRE(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax row sums at 32-bit precision") {
    Rng rng(4);
    std::vector<float> xv(64 * 9);
    for (auto& v : xv) v = static_cast<float>(rng.normal(0.0, 3.0));
    Tensor<float> y = softmax_rows(Tensor<float>::from_data({64, 9}, std::move(xv)));
    for (int i = 0; i < 64; ++i) {
        float sum = 0.f;
        for (int j = 0; j < 9; ++j) sum += y.at(i, j);
        REQUIRE(std::abs(sum - 1.f) < 1e-6f);
    }
}

TEST_CASE("layer_norm trivial and oracle cases") {
    Tensor<double> g1 = Tensor<double>::filled({4}, 1.0);
    Tensor<double> b1 = Tensor<double>::zeros({4});
    Tensor<double> constant = layer_norm(Tensor<double>::from_data({1, 4}, {1, 1, 1, 1}), g1, b1);
    for (int j = 0; j < 4; ++j) REQUIRE(std::abs(constant.at(0, j)) < 1e-12);

    Tensor<double> g2 = Tensor<double>::filled({2}, 1.0);
    Tensor<double> b2 = Tensor<double>::zeros({2});
    Tensor<double> pair = layer_norm(Tensor<double>::from_data({1, 2}, {-1, 1}), g2, b2);
    REQUIRE(std::abs(pair.at(0, 0) + 1.0) < 1e-4);  // unit variance up to eps
    REQUIRE(std::abs(pair.at(0, 1) - 1.0) < 1e-4);

    // Degenerate width: a single-column row has zero variance and
    // normalizes to zero, leaving only the affine part.
    Tensor<double> g0 = Tensor<double>::filled({1}, 3.0);
    Tensor<double> b0 = Tensor<double>::filled({1}, 0.25);
    REQUIRE(layer_norm(Tensor<double>::from_data({2, 1}, {5.0, -2.0}), g0, b0).at(1, 0) == 0.25);

    Rng rng(5);
    const int m = 4, d = 8;
    const auto xv = random_vec(static_cast<size_t>(m * d), rng);
    const auto gv = random_vec(static_cast<size_t>(d), rng);
    const auto bv = random_vec(static_cast<size_t>(d), rng);
    Tensor<double> y = layer_norm(Tensor<double>::from_data({m, d}, std::vector<double>(xv)),
                                  Tensor<double>::from_data({d}, std::vector<double>(gv)),
                                  Tensor<double>::from_data({d}, std::vector<double>(bv)));
    const auto expect = layer_norm_oracle(xv, gv, bv, m, d, 1e-5);
    for (int64_t i = 0; i < y.numel(); ++i)
        REQUIRE(std::abs(y.at(i) - expect[static_cast<size_t>(i)]) < 1e-10);
}

TEST_CASE("segmented_reduce trivial, oracle, and empty-segment flag") {
    Rng rng(6);
    const int m = 20, d = 3;
    const auto xv = random_vec(static_cast<size_t>(m * d), rng);
    Tensor<double> x = Tensor<double>::from_data({m, d}, std::vector<double>(xv));

    // One segment holding all rows: column means.
    std::vector<int32_t> one(m, 0);
    Tensor<double> mean1 = segmented_reduce(x, SegmentMap::build(one, 1), ReduceKind::mean);
    for (int j = 0; j < d; ++j) {
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += xv[static_cast<size_t>(i * d + j)];
        REQUIRE(std::abs(mean1.at(0, j) - s / m) < 1e-12);
    }

    // Each row its own segment: identity.
    std::vector<int32_t> own(m);
    for (int i = 0; i < m; ++i) own[static_cast<size_t>(i)] = i;
    Tensor<double> ident = segmented_reduce(x, SegmentMap::build(own, m), ReduceKind::mean);
    for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(ident.at(i) == x.at(i));

    // Random 4-segment instance against a per-segment loop oracle.
    std::vector<int32_t> seg(m);
    for (int i = 0; i < m; ++i) seg[static_cast<size_t>(i)] = static_cast<int32_t>(rng.uniform_int(4));
    const SegmentMap map = SegmentMap::build(seg, 4);
    for (const ReduceKind kind : {ReduceKind::mean, ReduceKind::sum, ReduceKind::max}) {
        Tensor<double> y = segmented_reduce(x, map, kind);
        for (int s = 0; s < 4; ++s)
            for (int j = 0; j < d; ++j) {
                double acc = kind == ReduceKind::max ? -1e300 : 0.0;
                int count = 0;
                for (int i = 0; i < m; ++i) {
                    if (seg[static_cast<size_t>(i)] != s) continue;
                    ++count;
                    const double v = xv[static_cast<size_t>(i * d + j)];
                    if (kind == ReduceKind::max) acc = std::max(acc, v);
                    else acc += v;
                }
                if (count == 0) acc = 0.0;
                else if (kind == ReduceKind::mean) acc /= count;
                REQUIRE(std::abs(y.at(s, j) - acc) < 1e-12);
            }
    }

    // Empty segments produce zeros and are flagged.
    std::vector<int32_t> gappy = {0, 0, 2};
    Tensor<double> x3 = Tensor<double>::from_data({3, 1}, {1.0, 3.0, 5.0});
    std::vector<int32_t> empties;
    Tensor<double> r = segmented_reduce(x3, SegmentMap::build(gappy, 3), ReduceKind::mean, &empties);
    REQUIRE(empties == std::vector<int32_t>{1});
    REQUIRE(r.at(1, 0) == 0.0);
    REQUIRE(r.at(0, 0) == 2.0);

    // Out-of-range segment id is rejected at construction.
    std::vector<int32_t> bad = {0, 5};
    REQUIRE_THROWS_AS(SegmentMap::build(bad, 3), IndexError);
}

TEST_CASE("segmented mean of within-segment constant inputs is exact") {
    Rng rng(7);
    const int m = 40, d = 4;
    std::vector<int32_t> seg(m);
    for (int i = 0; i < m; ++i) seg[static_cast<size_t>(i)] = static_cast<int32_t>(rng.uniform_int(5));
    std::vector<double> values(5);
    for (auto& v : values) v = rng.normal();
    std::vector<double> xv(static_cast<size_t>(m * d));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) xv[static_cast<size_t>(i * d + j)] = values[static_cast<size_t>(seg[static_cast<size_t>(i)])];
    const SegmentMap map = SegmentMap::build(seg, 5);
    Tensor<double> y = segmented_reduce(Tensor<double>::from_data({m, d}, std::move(xv)), map, ReduceKind::mean);
    // Gathering the segment mean back to each row reproduces the input bits.
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j)
            REQUIRE(y.at(seg[static_cast<size_t>(i)], j) == values[static_cast<size_t>(seg[static_cast<size_t>(i)])]);
}

TEST_CASE("elementwise ops: sigmoid, gelu oracle, concat, broadcast errors") {
    REQUIRE(sigmoid(Tensor<double>::from_data({1}, {0.0})).item() == 0.5);

    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
        const double x = rng.normal(0.0, 2.0);
        const double got = gelu(Tensor<double>::from_data({1}, {x})).item();
        REQUIRE(std::abs(got - gelu_oracle(x)) < 1e-6);
    }

    Tensor<double> a = Tensor<double>::randn({6, 4}, rng);
    Tensor<double> b = Tensor<double>::randn({6, 4}, rng);
    Tensor<double> cat = concat_lastdim(a, b);
    REQUIRE(cat.shape() == std::vector<int64_t>{6, 8});
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 4; ++j) {
            REQUIRE(cat.at(i, j) == a.at(i, j));
            REQUIRE(cat.at(i, 4 + j) == b.at(i, j));
        }
    }

    Tensor<double> bias = Tensor<double>::randn({4}, rng);
    Tensor<double> rowcast = add(a, bias);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j) REQUIRE(rowcast.at(i, j) == a.at(i, j) + bias.at(j));

    Tensor<double> wrong = Tensor<double>::randn({5}, rng);
    REQUIRE_THROWS_AS(add(a, wrong), ShapeError);
    REQUIRE_THROWS_AS(concat_lastdim(a, Tensor<double>::randn({5, 4}, rng)), ShapeError);
}

TEST_CASE("backward of every primitive passes grad_check") {
    Rng rng(9);
    const int m = 4, k = 5, n = 3;
    Tensor<double> a = Tensor<double>::randn({m, k}, rng, 1.0, true);
    Tensor<double> b = Tensor<double>::randn({k, n}, rng, 1.0, true);
    const auto r_mm = random_vec(static_cast<size_t>(m * n), rng);
    std::vector<Tensor<double>> mm_params = {a, b};
    REQUIRE(grad_check([&] { return weighted_sum(matmul(a, b), r_mm); }, mm_params) < 1e-6);

    Tensor<double> x = Tensor<double>::randn({m, k}, rng, 1.0, true);
    const auto r_mk = random_vec(static_cast<size_t>(m * k), rng);
    std::vector<Tensor<double>> x_only = {x};
    REQUIRE(grad_check([&] { return weighted_sum(softmax_rows(x), r_mk); }, x_only) < 1e-6);
    REQUIRE(grad_check([&] { return weighted_sum(gelu(x), r_mk); }, x_only) < 1e-6);
    REQUIRE(grad_check([&] { return weighted_sum(sigmoid(x), r_mk); }, x_only) < 1e-6);

    Tensor<double> gain = Tensor<double>::randn({k}, rng, 1.0, true);
    Tensor<double> bias = Tensor<double>::randn({k}, rng, 1.0, true);
    std::vector<Tensor<double>> ln_params = {x, gain, bias};
    REQUIRE(grad_check([&] { return weighted_sum(layer_norm(x, gain, bias), r_mk); }, ln_params) < 1e-4);

    std::vector<int32_t> seg = {0, 1, 0, 2};
    const SegmentMap map = SegmentMap::build(seg, 3);
    const auto r_seg = random_vec(static_cast<size_t>(3 * k), rng);
    for (const ReduceKind kind : {ReduceKind::mean, ReduceKind::sum, ReduceKind::max})
        REQUIRE(grad_check([&] { return weighted_sum(segmented_reduce(x, map, kind), r_seg); }, x_only) < 1e-6);

    Tensor<double> y = Tensor<double>::randn({m, k}, rng, 1.0, true);
    std::vector<Tensor<double>> xy = {x, y};
    REQUIRE(grad_check([&] { return weighted_sum(mul(x, y), r_mk); }, xy) < 1e-6);
    const auto r_cat = random_vec(static_cast<size_t>(m * 2 * k), rng);
    REQUIRE(grad_check([&] { return weighted_sum(concat_lastdim(x, y), r_cat); }, xy) < 1e-6);

    Tensor<double> rowbias = Tensor<double>::randn({k}, rng, 1.0, true);
    std::vector<Tensor<double>> bc = {x, rowbias};
    REQUIRE(grad_check([&] { return weighted_sum(add(x, rowbias), r_mk); }, bc) < 1e-6);
    REQUIRE(grad_check([&] { return weighted_sum(mul(x, rowbias), r_mk); }, bc) < 1e-6);

    const std::vector<int64_t> idx = {2, 0, 0, 3};
    const auto r_gather = random_vec(static_cast<size_t>(4 * k), rng);
    REQUIRE(grad_check([&] { return weighted_sum(gather_rows(x, idx), r_gather); }, x_only) < 1e-6);

    Tensor<double> h = Tensor<double>::randn({m, 3}, rng, 1.0, true);
    const auto r_rep = random_vec(static_cast<size_t>(m * 6), rng);
    std::vector<Tensor<double>> h_only = {h};
    REQUIRE(grad_check([&] { return weighted_sum(repeat_interleave_cols(h, 2), r_rep); }, h_only) < 1e-6);
}

TEST_CASE("grad_check on quadratic matches analytic 2x") {
    Rng rng(10);
    Tensor<double> x = Tensor<double>::randn({10}, rng, 1.0, true);
    std::vector<Tensor<double>> params = {x};
    const double err = grad_check([&] { return sum_all(mul(x, x)); }, params);
    REQUIRE(err < 1e-8);
    // The analytic gradient itself is 2x.
    x.zero_grad();
    Tensor<double> loss = sum_all(mul(x, x));
    loss.backward();
    for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(std::abs(x.grad()[static_cast<size_t>(i)] - 2.0 * x.at(i)) < 1e-12);
}

TEST_CASE("softmax cross-entropy layer grad_check") {
    Rng rng(11);
    Tensor<double> w = Tensor<double>::randn({5, 4}, rng, 0.5, true);
    Tensor<double> x = Tensor<double>::randn({6, 5}, rng, 1.0, true);
    const std::vector<int> labels = {0, 3, 1, 2, 0, 1};
    std::vector<Tensor<double>> params = {w, x};
    const double err =
        grad_check([&] { return cross_entropy_mean(matmul(x, w), labels); }, params);
    REQUIRE(err < 1e-6);
}

TEST_CASE("gradient accumulates over reuse and backward populates all leaves") {
    Rng rng(12);
    Tensor<double> x = Tensor<double>::randn({3, 3}, rng, 1.0, true);
    Tensor<double> y = add(mul(x, x), x);  // x used twice
    sum_all(y).backward();
    REQUIRE(x.has_grad());
    for (int64_t i = 0; i < x.numel(); ++i)
        REQUIRE(std::abs(x.grad()[static_cast<size_t>(i)] - (2.0 * x.at(i) + 1.0)) < 1e-12);
}

TEST_CASE("ops are deterministic: identical inputs give identical bits") {
    Rng rng(13);
    Tensor<double> a = Tensor<double>::randn({17, 9}, rng);
    Tensor<double> b = Tensor<double>::randn({9, 11}, rng);
    Tensor<double> c1 = matmul(a, b);
    Tensor<double> c2 = matmul(a, b);
    for (int64_t i = 0; i < c1.numel(); ++i) REQUIRE(c1.at(i) == c2.at(i));

    std::vector<int32_t> seg(17);
    for (int i = 0; i < 17; ++i) seg[static_cast<size_t>(i)] = static_cast<int32_t>(rng.uniform_int(4));
    const SegmentMap map = SegmentMap::build(seg, 4);
    Tensor<double> r1 = segmented_reduce(a, map, ReduceKind::mean);
    Tensor<double> r2 = segmented_reduce(a, map, ReduceKind::mean);
    for (int64_t i = 0; i < r1.numel(); ++i) REQUIRE(r1.at(i) == r2.at(i));
}

TEST_CASE("no-grad guard suppresses history") {
    Rng rng(14);
    Tensor<double> x = Tensor<double>::randn({2, 2}, rng, 1.0, true);
    NoGradGuard guard;
    Tensor<double> y = mul(x, x);
    REQUIRE_FALSE(y.requires_grad());
}

TEST_CASE("checkpoint round trip preserves names, shapes, float32 values") {
    Rng rng(15);
    std::vector<std::pair<std::string, Tensor<double>>> params;
    params.emplace_back("layer.w", Tensor<double>::randn({3, 4}, rng));
    params.emplace_back("layer.b", Tensor<double>::randn({4}, rng));
    const std::string path = "ckpt_test.bin";
    save_checkpoint(path, params);
    const auto entries = load_checkpoint(path);
    REQUIRE(entries.size() == 2);
    REQUIRE(entries[0].name == "layer.w");
    REQUIRE(entries[0].shape == std::vector<int64_t>{3, 4});
    for (size_t i = 0; i < entries[0].values.size(); ++i)
        REQUIRE(entries[0].values[i] == static_cast<float>(params[0].second.at(static_cast<int64_t>(i))));

    std::vector<std::pair<std::string, Tensor<double>>> fresh;
    fresh.emplace_back("layer.w", Tensor<double>::zeros({3, 4}));
    fresh.emplace_back("layer.b", Tensor<double>::zeros({4}));
    apply_checkpoint(entries, fresh);
    REQUIRE(fresh[0].second.at(2, 1) == static_cast<double>(static_cast<float>(params[0].second.at(2, 1))));

    std::vector<std::pair<std::string, Tensor<double>>> wrong;
    wrong.emplace_back("layer.w", Tensor<double>::zeros({4, 3}));
    wrong.emplace_back("layer.b", Tensor<double>::zeros({4}));
    REQUIRE_THROWS_AS(apply_checkpoint(entries, wrong), ConfigError);
    std::remove(path.c_str());
}

TEST_CASE("segment map layout respects a custom ranking") {
    std::vector<int32_t> ids = {1, 0, 1, 0};
    std::vector<int64_t> ranking = {3, 2, 1, 0};  // reverse order
    const SegmentMap m = SegmentMap::build_ordered(ids, 2, ranking);
    const auto s0 = m.segment_elements(0);
    REQUIRE(std::vector<int64_t>(s0.begin(), s0.end()) == std::vector<int64_t>{3, 1});
    const auto s1 = m.segment_elements(1);
    REQUIRE(std::vector<int64_t>(s1.begin(), s1.end()) == std::vector<int64_t>{2, 0});
    REQUIRE(m.offsets().back() == 4);
}
