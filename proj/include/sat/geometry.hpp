#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "sat/common.hpp"
#include "sat/tensor.hpp"

namespace sat {

// ---------------------------------------------------------------------------
// Uniform grid assignment
// ---------------------------------------------------------------------------

using Cell3 = std::array<int64_t, 3>;

struct GridAssignment {
    std::vector<int32_t> cell_of_point;  // dense ids, one per point
    int32_t num_cells = 0;
    std::vector<Cell3> cell_coords;  // per dense id, lexicographically ascending
};

namespace detail {

// Dense ids in lexicographic order of the integer cell coordinates, so ids
// depend only on the geometry, not on point order.
inline GridAssignment dense_cell_ids(std::vector<Cell3> raw) {
    std::vector<Cell3> uniq = raw;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    GridAssignment out;
    out.num_cells = static_cast<int32_t>(uniq.size());
    out.cell_of_point.resize(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        const auto it = std::lower_bound(uniq.begin(), uniq.end(), raw[i]);
        out.cell_of_point[i] = static_cast<int32_t>(it - uniq.begin());
    }
    out.cell_coords = std::move(uniq);
    return out;
}

inline std::vector<Cell3> raw_cells(std::span<const Point3> coords, double edge, double shift) {
    std::vector<Cell3> raw(coords.size());
    for (size_t i = 0; i < coords.size(); ++i) {
        for (size_t axis = 0; axis < 3; ++axis) {
            const double c = coords[i][axis];
            if (!std::isfinite(c)) throw NumericError("non-finite coordinate");
            raw[i][axis] = static_cast<int64_t>(std::floor((c + shift) / edge));
        }
    }
    return raw;
}

inline int64_t floor_div(int64_t a, int64_t b) {
    return a >= 0 ? a / b : -((-a + b - 1) / b);
}

}  // namespace detail

// Assigns each point to the axis-aligned cubic cell floor((c + shift)/edge).
inline GridAssignment assign_to_grid(std::span<const Point3> coords, double edge, double shift = 0.0) {
    if (!(edge > 0.0)) throw ConfigError("grid edge must be positive");
    return detail::dense_cell_ids(detail::raw_cells(coords, edge, shift));
}

// ---------------------------------------------------------------------------
// Nested window partition
// ---------------------------------------------------------------------------

struct WindowSpec {
    double base_edge = 0.16;   // point-attention window
    int coarse_ratio = 2;      // voxel window edge = coarse_ratio * base_edge
    double voxel_edge = 0.08;  // voxel grid inside the voxel window
    bool shifted = false;      // shift both window levels by base_edge / 2
};

// Point-to-window and point-to-voxel assignment for one stage. Voxels are
// global-grid cells intersected with their voxel window, so a grid cell that
// straddles a window boundary splits into one voxel per window. All segment
// maps use the coordinate-canonical within-segment order (lexicographic by
// coordinates, ties by input index), which makes every downstream reduction
// independent of input point order.
struct WindowIndex {
    WindowSpec spec;
    int64_t num_points = 0;

    std::vector<int32_t> base_window_of;   // per point
    std::vector<int32_t> voxel_window_of;  // per point
    std::vector<int32_t> voxel_of;         // per point
    int32_t num_base_windows = 0;
    int32_t num_voxel_windows = 0;
    int32_t num_voxels = 0;
    std::vector<int32_t> voxel_window_of_voxel;  // per voxel

    SegmentMap points_by_base_window;
    SegmentMap points_by_voxel_window;
    SegmentMap points_by_voxel;
    SegmentMap voxels_by_voxel_window;

    std::vector<int64_t> canonical_point_order;
    std::vector<Point3> point_coords;
};

namespace detail {

inline std::vector<int64_t> canonical_order(std::span<const Point3> coords) {
    std::vector<int64_t> order(coords.size());
    std::iota(order.begin(), order.end(), int64_t{0});
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        const auto& pa = coords[static_cast<size_t>(a)];
        const auto& pb = coords[static_cast<size_t>(b)];
        if (pa != pb) return pa < pb;
        return a < b;
    });
    return order;
}

}  // namespace detail

inline WindowIndex build_window_index(std::span<const Point3> coords, const WindowSpec& spec) {
    if (spec.coarse_ratio < 1) throw ConfigError("coarse_ratio must be a positive integer");
    if (!(spec.base_edge > 0.0) || !(spec.voxel_edge > 0.0))
        throw ConfigError("window and voxel edges must be positive");
    WindowIndex idx;
    idx.spec = spec;
    idx.num_points = static_cast<int64_t>(coords.size());
    const double shift = spec.shifted ? spec.base_edge * 0.5 : 0.0;

    // Voxel-window cells derive from base cells by integer division, which
    // makes the nesting of base windows inside voxel windows exact.
    const std::vector<Cell3> base_raw = detail::raw_cells(coords, spec.base_edge, shift);
    std::vector<Cell3> vwin_raw(base_raw.size());
    for (size_t i = 0; i < base_raw.size(); ++i)
        for (size_t a = 0; a < 3; ++a)
            vwin_raw[i][a] = detail::floor_div(base_raw[i][a], spec.coarse_ratio);
    const GridAssignment base = detail::dense_cell_ids(base_raw);
    const GridAssignment vwin = detail::dense_cell_ids(std::move(vwin_raw));
    const GridAssignment vox = assign_to_grid(coords, spec.voxel_edge, 0.0);  // voxel grid stays global

    idx.base_window_of = base.cell_of_point;
    idx.voxel_window_of = vwin.cell_of_point;
    idx.num_base_windows = base.num_cells;
    idx.num_voxel_windows = vwin.num_cells;

    // Composite voxel key (voxel window, grid cell), ordered by window then
    // cell so voxels of one window are contiguous and intrinsically numbered.
    std::map<std::pair<int32_t, int32_t>, int32_t> voxel_ids;
    for (int64_t i = 0; i < idx.num_points; ++i)
        voxel_ids.emplace(std::make_pair(vwin.cell_of_point[static_cast<size_t>(i)],
                                         vox.cell_of_point[static_cast<size_t>(i)]),
                          0);
    int32_t next = 0;
    for (auto& [key, id] : voxel_ids) id = next++;
    idx.num_voxels = next;
    idx.voxel_of.resize(static_cast<size_t>(idx.num_points));
    idx.voxel_window_of_voxel.resize(static_cast<size_t>(idx.num_voxels));
    for (int64_t i = 0; i < idx.num_points; ++i) {
        const auto key = std::make_pair(vwin.cell_of_point[static_cast<size_t>(i)],
                                        vox.cell_of_point[static_cast<size_t>(i)]);
        const int32_t v = voxel_ids.at(key);
        idx.voxel_of[static_cast<size_t>(i)] = v;
        idx.voxel_window_of_voxel[static_cast<size_t>(v)] = key.first;
    }

    idx.canonical_point_order = detail::canonical_order(coords);
    idx.point_coords.assign(coords.begin(), coords.end());
    idx.points_by_base_window =
        SegmentMap::build_ordered(idx.base_window_of, idx.num_base_windows, idx.canonical_point_order);
    idx.points_by_voxel_window =
        SegmentMap::build_ordered(idx.voxel_window_of, idx.num_voxel_windows, idx.canonical_point_order);
    idx.points_by_voxel = SegmentMap::build_ordered(idx.voxel_of, idx.num_voxels, idx.canonical_point_order);
    idx.voxels_by_voxel_window = SegmentMap::build(idx.voxel_window_of_voxel, idx.num_voxel_windows);
    return idx;
}

// ---------------------------------------------------------------------------
// Farthest point sampling
// ---------------------------------------------------------------------------

namespace detail {

inline double dist2(const Point3& a, const Point3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace detail

inline int64_t lexicographic_min_index(std::span<const Point3> coords) {
    if (coords.empty()) throw ConfigError("empty point set");
    int64_t best = 0;
    for (int64_t i = 1; i < static_cast<int64_t>(coords.size()); ++i)
        if (coords[static_cast<size_t>(i)] < coords[static_cast<size_t>(best)]) best = i;
    return best;
}

// Greedy max-min selection. Start defaults to the lexicographically smallest
// coordinate; distance ties break toward the lowest index. Returned indices
// are in pick order, which depends only on the point set, not its ordering.
inline std::vector<int64_t> farthest_point_sample(std::span<const Point3> coords, int64_t m,
                                                  int64_t start = -1) {
    const int64_t n = static_cast<int64_t>(coords.size());
    if (m < 1 || m > n) throw ConfigError("farthest_point_sample: need 1 <= m <= n");
    if (start < 0) start = lexicographic_min_index(coords);
    std::vector<int64_t> selected;
    selected.reserve(static_cast<size_t>(m));
    selected.push_back(start);
    std::vector<double> min_d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    int64_t last = start;
    for (int64_t round = 1; round < m; ++round) {
        int64_t best = -1;
        double best_d2 = -1.0;
        for (int64_t i = 0; i < n; ++i) {
            const double d2 = detail::dist2(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(last)]);
            if (d2 < min_d2[static_cast<size_t>(i)]) min_d2[static_cast<size_t>(i)] = d2;
            if (min_d2[static_cast<size_t>(i)] > best_d2) {
                best_d2 = min_d2[static_cast<size_t>(i)];
                best = i;
            }
        }
        selected.push_back(best);
        last = best;
    }
    return selected;
}

// ---------------------------------------------------------------------------
// k nearest neighbors (brute force; ties by lowest index; self-match allowed)
// ---------------------------------------------------------------------------

struct KnnResult {
    int64_t k = 0;
    std::vector<int64_t> indices;    // [num_queries * k], row-major
    std::vector<double> distances;   // Euclidean, same layout
};

inline KnnResult knn_search(std::span<const Point3> data, std::span<const Point3> queries, int64_t k) {
    const int64_t n = static_cast<int64_t>(data.size());
    const int64_t m = static_cast<int64_t>(queries.size());
    if (k < 1 || k > n) throw ConfigError("knn_search: need 1 <= k <= number of data points");
    KnnResult out;
    out.k = k;
    out.indices.resize(static_cast<size_t>(m * k));
    out.distances.resize(static_cast<size_t>(m * k));
    std::vector<std::pair<double, int64_t>> cand(static_cast<size_t>(n));
    for (int64_t q = 0; q < m; ++q) {
        for (int64_t i = 0; i < n; ++i)
            cand[static_cast<size_t>(i)] = {detail::dist2(queries[static_cast<size_t>(q)], data[static_cast<size_t>(i)]), i};
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (int64_t j = 0; j < k; ++j) {
            out.indices[static_cast<size_t>(q * k + j)] = cand[static_cast<size_t>(j)].second;
            out.distances[static_cast<size_t>(q * k + j)] = std::sqrt(cand[static_cast<size_t>(j)].first);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Downsampling plan and 3-NN interpolation
// ---------------------------------------------------------------------------

struct SamplingResult {
    std::vector<int64_t> selected;      // unique indices, in pick order
    std::vector<int64_t> neighbors;     // [n * 3], indices into `selected`
    std::vector<double> weights;        // [n * 3], nonnegative, rows sum to 1
};

namespace detail {

// Inverse-distance weights over the 3 nearest anchors (fewer if the anchor
// set is smaller). An exact match concentrates the weight mass on it.
inline void inverse_distance_weights(std::span<const Point3> anchors, std::span<const Point3> queries,
                                     std::vector<int64_t>& neighbors, std::vector<double>& weights) {
    const int64_t k = std::min<int64_t>(3, static_cast<int64_t>(anchors.size()));
    const KnnResult nn = knn_search(anchors, queries, k);
    const int64_t n = static_cast<int64_t>(queries.size());
    neighbors.assign(static_cast<size_t>(n * 3), 0);
    weights.assign(static_cast<size_t>(n * 3), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        double sum = 0.0;
        double w[3] = {0, 0, 0};
        for (int64_t j = 0; j < k; ++j) {
            w[j] = 1.0 / (nn.distances[static_cast<size_t>(i * k + j)] + 1e-8);
            sum += w[j];
        }
        for (int64_t j = 0; j < k; ++j) {
            neighbors[static_cast<size_t>(i * 3 + j)] = nn.indices[static_cast<size_t>(i * k + j)];
            weights[static_cast<size_t>(i * 3 + j)] = w[j] / sum;
        }
    }
}

}  // namespace detail

inline SamplingResult downsample_plan(std::span<const Point3> coords, int64_t m) {
    SamplingResult out;
    out.selected = farthest_point_sample(coords, m);
    std::vector<Point3> anchors(out.selected.size());
    for (size_t i = 0; i < out.selected.size(); ++i) anchors[i] = coords[static_cast<size_t>(out.selected[i])];
    detail::inverse_distance_weights(anchors, coords, out.neighbors, out.weights);
    return out;
}

// Differentiable 3-NN inverse-distance interpolation of coarse features onto
// fine positions.
template <typename T>
Tensor<T> interpolate_3nn(std::span<const Point3> coarse_coords, const Tensor<T>& coarse_feats,
                          std::span<const Point3> fine_coords) {
    if (coarse_coords.empty()) throw ConfigError("interpolate_3nn: empty coarse set");
    if (coarse_feats.dim(0) != static_cast<int64_t>(coarse_coords.size()))
        throw ShapeError("interpolate_3nn: one feature row per coarse point required");
    std::vector<int64_t> neighbors;
    std::vector<double> weights;
    detail::inverse_distance_weights(coarse_coords, fine_coords, neighbors, weights);
    const int64_t n = static_cast<int64_t>(fine_coords.size());
    const int64_t d = coarse_feats.dim(1);
    std::vector<T> out(static_cast<size_t>(n * d), T(0));
    const T* pc = coarse_feats.values().data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < 3; ++j) {
            const T w = static_cast<T>(weights[static_cast<size_t>(i * 3 + j)]);
            if (w == T(0)) continue;
            const T* row = pc + neighbors[static_cast<size_t>(i * 3 + j)] * d;
            T* orow = out.data() + i * d;
            for (int64_t c = 0; c < d; ++c) orow[c] += w * row[c];
        }
    auto cn = coarse_feats.node();
    return Tensor<T>::make_op({n, d}, std::move(out), {coarse_feats},
                              [cn, neighbors = std::move(neighbors), weights = std::move(weights), n, d](auto& self) {
        if (!cn->requires_grad) return;
        cn->ensure_grad();
        const T* dy = self.grad.data();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < 3; ++j) {
                const T w = static_cast<T>(weights[static_cast<size_t>(i * 3 + j)]);
                if (w == T(0)) continue;
                T* grow = cn->grad.data() + neighbors[static_cast<size_t>(i * 3 + j)] * d;
                for (int64_t c = 0; c < d; ++c) grow[c] += w * dy[i * d + c];
            }
    });
}

}  // namespace sat
