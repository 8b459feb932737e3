#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sat/common.hpp"
#include "sat/tensor.hpp"

namespace sat {

// ---------------------------------------------------------------------------
// Point cloud container and the SATPC1 text format
// ---------------------------------------------------------------------------

struct PointCloud {
    std::vector<Point3> coords;
    std::vector<std::array<double, 3>> colors;  // in [0, 1]
    std::vector<int> labels;
    std::vector<int> size_class;  // 0 small, 1 medium, 2 large; may be empty
    int num_classes = 7;

    int64_t size() const { return static_cast<int64_t>(coords.size()); }
};

// Default desk palette: seven classes mirroring the size extremes of indoor
// scenes (large architecture, medium furniture, small objects).
inline const std::vector<std::string>& class_names() {
    static const std::vector<std::string> names = {"floor", "wall",  "ceiling", "table",
                                                   "board", "chair", "clutter"};
    return names;
}

enum SizeClassId { kSizeSmall = 0, kSizeMedium = 1, kSizeLarge = 2 };

inline int default_size_class(int label) {
    switch (label) {
        case 0: case 1: case 2: return kSizeLarge;   // floor, wall, ceiling
        case 3: case 4: return kSizeMedium;          // table, board
        default: return kSizeSmall;                  // chair, clutter
    }
}

inline const char* size_class_name(int sc) {
    switch (sc) {
        case kSizeSmall: return "small";
        case kSizeMedium: return "medium";
        default: return "large";
    }
}

// Header "SATPC1 N C K", then N lines "x y z c1 .. cC label". Written with
// six decimal places, which round-trips coordinates to 1e-6.
inline void write_cloud(const std::string& path, const PointCloud& cloud) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "SATPC1 " << cloud.size() << " 3 " << cloud.num_classes << "\n";
    char line[256];
    for (int64_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.coords[static_cast<size_t>(i)];
        const auto& c = cloud.colors[static_cast<size_t>(i)];
        std::snprintf(line, sizeof(line), "%.6f %.6f %.6f %.6f %.6f %.6f %d\n", p[0], p[1], p[2], c[0],
                      c[1], c[2], cloud.labels[static_cast<size_t>(i)]);
        os << line;
    }
    if (!os) throw IoError("write failed: " + path);
}

inline PointCloud read_cloud(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    std::string header;
    if (!std::getline(is, header)) throw ParseError(path + ": empty file");
    std::istringstream hs(header);
    std::string magic;
    int64_t n = 0;
    int channels = 0, classes = 0;
    if (!(hs >> magic >> n >> channels >> classes) || magic != "SATPC1")
        throw ParseError(path + ":1: malformed header (expected 'SATPC1 N C K')");
    if (n < 1) throw ParseError(path + ":1: point count must be positive");
    if (channels != 3) throw ParseError(path + ":1: expected 3 color channels");
    if (classes < 1) throw ParseError(path + ":1: class count must be positive");

    PointCloud cloud;
    cloud.num_classes = classes;
    cloud.coords.resize(static_cast<size_t>(n));
    cloud.colors.resize(static_cast<size_t>(n));
    cloud.labels.resize(static_cast<size_t>(n));
    std::string line;
    for (int64_t i = 0; i < n; ++i) {
        if (!std::getline(is, line))
            throw ParseError(path + ":" + std::to_string(i + 2) + ": unexpected end of file");
        std::istringstream ls(line);
        auto& p = cloud.coords[static_cast<size_t>(i)];
        auto& c = cloud.colors[static_cast<size_t>(i)];
        int label;
        if (!(ls >> p[0] >> p[1] >> p[2] >> c[0] >> c[1] >> c[2] >> label))
            throw ParseError(path + ":" + std::to_string(i + 2) + ": malformed row");
        if (label < 0 || label >= classes)
            throw ValidationError(path + ":" + std::to_string(i + 2) + ": label " + std::to_string(label) +
                                  " out of range [0, " + std::to_string(classes) + ")");
        cloud.labels[static_cast<size_t>(i)] = label;
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
            throw ValidationError(path + ":" + std::to_string(i + 2) + ": non-finite coordinate");
    }
    cloud.size_class.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        cloud.size_class[static_cast<size_t>(i)] = default_size_class(cloud.labels[static_cast<size_t>(i)]);
    return cloud;
}

// ---------------------------------------------------------------------------
// Synthetic size-varied scenes
// ---------------------------------------------------------------------------

struct SceneSpec {
    double room_w = 4.0, room_d = 3.0, room_h = 2.5;  // meters
    double density = 22.0;                            // points per m^2 of surface
    double noise = 0.005;                             // jitter sigma, meters
    bool walls = true;
    bool ceiling = true;
    int min_tables = 1, max_tables = 2;
    int min_boards = 1, max_boards = 2;
    int min_chairs = 1, max_chairs = 3;
    int min_clutter = 2, max_clutter = 5;
    int num_classes = 7;

    void validate() const {
        if (!(room_w > 0.2) || !(room_d > 0.2) || !(room_h > 0.2))
            throw ConfigError("degenerate room extents");
        if (!(density > 0.0)) throw ConfigError("density must be positive");
        if (min_tables > max_tables || min_boards > max_boards || min_chairs > max_chairs ||
            min_clutter > max_clutter)
            throw ConfigError("object count ranges must be nondecreasing");
    }
};

namespace detail {

struct SceneBuilder {
    PointCloud cloud;
    Rng rng;
    double noise;

    SceneBuilder(uint64_t seed, double noise_sigma) : rng(seed), noise(noise_sigma) {}

    void push(double x, double y, double z, int label, const std::array<double, 3>& base_color) {
        cloud.coords.push_back({x + rng.normal(0.0, noise), y + rng.normal(0.0, noise),
                                z + rng.normal(0.0, noise)});
        std::array<double, 3> c;
        for (int i = 0; i < 3; ++i)
            c[static_cast<size_t>(i)] =
                std::clamp(base_color[static_cast<size_t>(i)] + rng.normal(0.0, 0.03), 0.0, 1.0);
        cloud.colors.push_back(c);
        cloud.labels.push_back(label);
        cloud.size_class.push_back(default_size_class(label));
    }

    // Rectangle with one fixed axis; axes u, v span the free directions.
    void plane(int fixed_axis, double fixed_value, double u0, double u1, double v0, double v1,
               double density, int label, const std::array<double, 3>& color) {
        const double area = std::abs(u1 - u0) * std::abs(v1 - v0);
        const int64_t count = std::max<int64_t>(1, static_cast<int64_t>(std::llround(area * density)));
        for (int64_t i = 0; i < count; ++i) {
            const double u = rng.uniform(u0, u1);
            const double v = rng.uniform(v0, v1);
            double xyz[3];
            xyz[fixed_axis] = fixed_value;
            xyz[(fixed_axis + 1) % 3] = u;
            xyz[(fixed_axis + 2) % 3] = v;
            push(xyz[0], xyz[1], xyz[2], label, color);
        }
    }

    void sphere(const Point3& center, double radius, double density, int label,
                const std::array<double, 3>& color) {
        const double area = 4.0 * 3.141592653589793 * radius * radius;
        const int64_t count = std::max<int64_t>(1, static_cast<int64_t>(std::llround(area * density)));
        for (int64_t i = 0; i < count; ++i) {
            // Uniform direction via normalized Gaussian triple.
            double v[3] = {rng.normal(), rng.normal(), rng.normal()};
            const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) + 1e-12;
            push(center[0] + radius * v[0] / len, center[1] + radius * v[1] / len,
                 center[2] + radius * v[2] / len, label, color);
        }
    }

    // Vertical strip approximating a leg: a thin line with xy jitter.
    void leg(double x, double y, double z0, double z1, double density, int label,
             const std::array<double, 3>& color) {
        const int64_t count = std::max<int64_t>(2, static_cast<int64_t>(std::llround((z1 - z0) * 0.1 * density)));
        for (int64_t i = 0; i < count; ++i)
            push(x + rng.normal(0.0, 0.01), y + rng.normal(0.0, 0.01), rng.uniform(z0, z1), label, color);
    }

    int count_between(int lo, int hi) {
        if (hi <= lo) return lo;
        return lo + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(hi - lo + 1)));
    }
};

}  // namespace detail

// Deterministic scene: planes for the large classes, box/plane furniture for
// the medium classes, spheres for the small ones. Class-correlated colors.
inline PointCloud generate_scene(const SceneSpec& spec, uint64_t seed) {
    spec.validate();
    detail::SceneBuilder b(seed, spec.noise);
    const double w = spec.room_w, d = spec.room_d, h = spec.room_h;
    const double rho = spec.density;

    const std::array<double, 3> col_floor{0.45, 0.42, 0.40}, col_wall{0.75, 0.73, 0.70},
        col_ceil{0.92, 0.92, 0.90}, col_table{0.55, 0.35, 0.20}, col_board{0.15, 0.25, 0.15},
        col_chair{0.60, 0.15, 0.15}, col_clutter{0.30, 0.45, 0.65};

    b.plane(2, 0.0, 0.0, w, 0.0, d, rho, 0, col_floor);  // floor
    if (spec.ceiling) b.plane(2, h, 0.0, w, 0.0, d, rho, 2, col_ceil);
    if (spec.walls) {
        b.plane(0, 0.0, 0.0, d, 0.0, h, rho, 1, col_wall);
        b.plane(0, w, 0.0, d, 0.0, h, rho, 1, col_wall);
        b.plane(1, 0.0, 0.0, h, 0.0, w, rho, 1, col_wall);
        b.plane(1, d, 0.0, h, 0.0, w, rho, 1, col_wall);
    }

    const int tables = b.count_between(spec.min_tables, spec.max_tables);
    std::vector<Point3> table_tops;
    for (int t = 0; t < tables; ++t) {
        const double cx = b.rng.uniform(0.7, w - 0.7), cy = b.rng.uniform(0.6, d - 0.6);
        const double hw = 0.55, hd = 0.38, top = 0.72;
        b.plane(2, top, cx - hw, cx + hw, cy - hd, cy + hd, rho * 1.5, 3, col_table);
        b.leg(cx - hw + 0.05, cy - hd + 0.05, 0.0, top, rho, 3, col_table);
        b.leg(cx + hw - 0.05, cy - hd + 0.05, 0.0, top, rho, 3, col_table);
        b.leg(cx - hw + 0.05, cy + hd - 0.05, 0.0, top, rho, 3, col_table);
        b.leg(cx + hw - 0.05, cy + hd - 0.05, 0.0, top, rho, 3, col_table);
        table_tops.push_back({cx, cy, top});
    }

    const int boards = b.count_between(spec.min_boards, spec.max_boards);
    for (int k = 0; k < boards; ++k) {
        // Pick one of the four walls, inset slightly into the room.
        const int wall = static_cast<int>(b.rng.uniform_int(4));
        const double bw = 1.2, bh = 0.8, zc = b.rng.uniform(1.2, 1.8);
        if (wall < 2) {
            const double x = wall == 0 ? 0.02 : w - 0.02;
            const double yc = b.rng.uniform(bw / 2 + 0.1, d - bw / 2 - 0.1);
            b.plane(0, x, yc - bw / 2, yc + bw / 2, zc - bh / 2, zc + bh / 2, rho * 1.5, 4, col_board);
        } else {
            const double y = wall == 2 ? 0.02 : d - 0.02;
            const double xc = b.rng.uniform(bw / 2 + 0.1, w - bw / 2 - 0.1);
            b.plane(1, y, zc - bh / 2, zc + bh / 2, xc - bw / 2, xc + bw / 2, rho * 1.5, 4, col_board);
        }
    }

    const int chairs = b.count_between(spec.min_chairs, spec.max_chairs);
    for (int k = 0; k < chairs; ++k) {
        const double cx = b.rng.uniform(0.4, w - 0.4), cy = b.rng.uniform(0.4, d - 0.4);
        b.plane(2, 0.45, cx - 0.2, cx + 0.2, cy - 0.2, cy + 0.2, rho * 6.0, 5, col_chair);  // seat
        b.plane(1, cy - 0.2, 0.45, 0.9, cx - 0.2, cx + 0.2, rho * 6.0, 5, col_chair);       // back
    }

    const int clutter = b.count_between(spec.min_clutter, spec.max_clutter);
    for (int k = 0; k < clutter; ++k) {
        Point3 c;
        if (!table_tops.empty() && b.rng.uniform() < 0.5) {
            const auto& t = table_tops[static_cast<size_t>(b.rng.uniform_int(table_tops.size()))];
            c = {t[0] + b.rng.uniform(-0.3, 0.3), t[1] + b.rng.uniform(-0.2, 0.2), t[2] + 0.08};
        } else {
            c = {b.rng.uniform(0.3, w - 0.3), b.rng.uniform(0.3, d - 0.3), 0.08};
        }
        b.sphere(c, 0.07, rho * 20.0, 6, col_clutter);
    }

    b.cloud.num_classes = spec.num_classes;
    return b.cloud;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

inline PointCloud subsample_cloud(const PointCloud& cloud, int64_t max_points, Rng& rng) {
    if (cloud.size() <= max_points) return cloud;
    std::vector<int64_t> idx(static_cast<size_t>(cloud.size()));
    std::iota(idx.begin(), idx.end(), int64_t{0});
    // Partial Fisher-Yates: the first max_points entries become the sample.
    for (int64_t i = 0; i < max_points; ++i) {
        const int64_t j = i + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(cloud.size() - i)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(max_points));
    std::sort(idx.begin(), idx.end());
    PointCloud out;
    out.num_classes = cloud.num_classes;
    out.coords.reserve(idx.size());
    for (const int64_t i : idx) {
        out.coords.push_back(cloud.coords[static_cast<size_t>(i)]);
        out.colors.push_back(cloud.colors[static_cast<size_t>(i)]);
        out.labels.push_back(cloud.labels[static_cast<size_t>(i)]);
        if (!cloud.size_class.empty()) out.size_class.push_back(cloud.size_class[static_cast<size_t>(i)]);
    }
    return out;
}

// Deterministic crop of each cloud to at most max_points points. Evaluation
// code passes whole scenes instead of going through this.
inline std::vector<PointCloud> make_batches(const std::vector<PointCloud>& clouds, int64_t max_points,
                                            uint64_t seed) {
    if (max_points < 1) throw ConfigError("make_batches: max_points must be positive");
    std::vector<PointCloud> out;
    out.reserve(clouds.size());
    Rng base(seed);
    for (size_t i = 0; i < clouds.size(); ++i) {
        Rng rng = base.fork(i);
        out.push_back(subsample_cloud(clouds[i], max_points, rng));
    }
    return out;
}

template <typename T>
Tensor<T> features_from_cloud(const PointCloud& cloud) {
    const int64_t n = cloud.size();
    std::vector<T> data(static_cast<size_t>(n * 6));
    for (int64_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) {
            data[static_cast<size_t>(i * 6 + a)] = static_cast<T>(cloud.coords[static_cast<size_t>(i)][static_cast<size_t>(a)]);
            data[static_cast<size_t>(i * 6 + 3 + a)] = static_cast<T>(cloud.colors[static_cast<size_t>(i)][static_cast<size_t>(a)]);
        }
    }
    return Tensor<T>::from_data({n, 6}, std::move(data));
}

}  // namespace sat
