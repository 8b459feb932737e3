#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sat/attention.hpp"
#include "sat/common.hpp"
#include "sat/data.hpp"
#include "sat/network.hpp"

namespace sat {

// ---------------------------------------------------------------------------
// Confusion matrix and segmentation metrics
// ---------------------------------------------------------------------------

class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int num_classes)
        : k_(num_classes), counts_(static_cast<size_t>(num_classes) * static_cast<size_t>(num_classes), 0) {}

    int num_classes() const { return k_; }

    void add(int truth, int predicted, int64_t count = 1) {
        if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_)
            throw IndexError("confusion matrix: class id out of range");
        counts_[static_cast<size_t>(truth * k_ + predicted)] += count;
    }

    void accumulate(std::span<const int> truth, std::span<const int> predicted) {
        if (truth.size() != predicted.size()) throw ShapeError("confusion matrix: size mismatch");
        for (size_t i = 0; i < truth.size(); ++i) add(truth[i], predicted[i]);
    }

    int64_t at(int truth, int predicted) const {
        return counts_.at(static_cast<size_t>(truth * k_ + predicted));
    }

    int64_t total() const {
        int64_t t = 0;
        for (const int64_t c : counts_) t += c;
        return t;
    }

private:
    int k_ = 0;
    std::vector<int64_t> counts_;
};

struct SegMetrics {
    std::vector<double> per_class_iou;     // percent; meaningless where !class_present
    std::vector<bool> class_present;       // union (TP+FP+FN) > 0
    std::vector<double> per_class_recall;  // percent; meaningless where gt count == 0
    std::vector<bool> class_has_truth;
    double miou = 0.0;  // percent, over present classes
    double macc = 0.0;  // percent, over classes with ground truth
};

// IoU_k = TP/(TP+FP+FN); classes with an empty union are excluded from the
// mean. mAcc is the mean per-class recall over classes that have ground
// truth.
inline SegMetrics miou_macc(const ConfusionMatrix& cm) {
    const int k = cm.num_classes();
    if (cm.total() == 0) throw ConfigError("miou_macc: empty confusion matrix");
    SegMetrics out;
    out.per_class_iou.assign(static_cast<size_t>(k), 0.0);
    out.class_present.assign(static_cast<size_t>(k), false);
    out.per_class_recall.assign(static_cast<size_t>(k), 0.0);
    out.class_has_truth.assign(static_cast<size_t>(k), false);
    double iou_sum = 0.0, recall_sum = 0.0;
    int iou_n = 0, recall_n = 0;
    for (int c = 0; c < k; ++c) {
        int64_t tp = cm.at(c, c), fp = 0, fn = 0;
        for (int o = 0; o < k; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        if (tp + fp + fn > 0) {
            out.class_present[static_cast<size_t>(c)] = true;
            out.per_class_iou[static_cast<size_t>(c)] =
                100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
            iou_sum += out.per_class_iou[static_cast<size_t>(c)];
            ++iou_n;
        }
        if (tp + fn > 0) {
            out.class_has_truth[static_cast<size_t>(c)] = true;
            out.per_class_recall[static_cast<size_t>(c)] =
                100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
            recall_sum += out.per_class_recall[static_cast<size_t>(c)];
            ++recall_n;
        }
    }
    out.miou = iou_n > 0 ? iou_sum / iou_n : 0.0;
    out.macc = recall_n > 0 ? recall_sum / recall_n : 0.0;
    return out;
}

// Population variance of the included per-class IoUs. Structurally absent
// classes are excluded through an explicit set, never silently.
inline double class_iou_variance(std::span<const double> per_class_iou, const std::set<int>& exclude = {}) {
    std::vector<double> vals;
    for (size_t i = 0; i < per_class_iou.size(); ++i)
        if (!exclude.count(static_cast<int>(i))) vals.push_back(per_class_iou[i]);
    if (vals.size() < 2) throw ConfigError("class_iou_variance: need at least two included classes");
    double mean = 0.0;
    for (const double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (const double v : vals) var += (v - mean) * (v - mean);
    return var / static_cast<double>(vals.size());
}

// ---------------------------------------------------------------------------
// Model evaluation
// ---------------------------------------------------------------------------

template <typename T>
std::vector<int> predict_labels(const Model<T>& model, const PointCloud& cloud) {
    NoGradGuard guard;
    Tensor<T> logits = forward_segmentation(model, cloud.coords, features_from_cloud<T>(cloud));
    const int64_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int> pred(static_cast<size_t>(n));
    const T* p = logits.values().data();
    for (int64_t i = 0; i < n; ++i) {
        int best = 0;
        for (int64_t j = 1; j < k; ++j)
            if (p[i * k + j] > p[i * k + best]) best = static_cast<int>(j);
        pred[static_cast<size_t>(i)] = best;
    }
    return pred;
}

template <typename T>
ConfusionMatrix evaluate_model(const Model<T>& model, const std::vector<PointCloud>& clouds) {
    ConfusionMatrix cm(model.config.num_classes);
    for (const auto& cloud : clouds) {
        const std::vector<int> pred = predict_labels(model, cloud);
        cm.accumulate(cloud.labels, pred);
    }
    return cm;
}

// ---------------------------------------------------------------------------
// Attention cost benchmark
// ---------------------------------------------------------------------------

struct BenchRow {
    int64_t n_points = 0;
    int64_t n_voxels = 0;
    long long macs_fine = 0;
    long long macs_coarse = 0;
    long long macs_baseline = 0;
    double ms_forward = 0.0;
};

// Counts attention MACs for the first-stage window layout of `config` on each
// scene and times one MGA forward pass at that stage's width.
template <typename T>
std::vector<BenchRow> bench_attention(const ModelConfig& config, const std::vector<PointCloud>& scenes,
                                      uint64_t seed = 7) {
    const StageConfig& st = config.stages.front();
    std::vector<BenchRow> rows;
    for (const auto& scene : scenes) {
        const WindowIndex widx = build_window_index(scene.coords, config.window_spec(0, false));
        const AttentionMacs macs = count_attention_macs(widx, st.channels);
        BenchRow row;
        row.n_points = scene.size();
        row.n_voxels = widx.num_voxels;
        row.macs_fine = macs.fine_branch;
        row.macs_coarse = macs.coarse_branch;
        row.macs_baseline = macs.baseline_full_point;

        Rng rng(seed);
        MgaParams<T> params = MgaParams<T>::init(st.channels, st.heads, rng, config.variant.shunt,
                                                 config.variant.mga, config.output_projection);
        Tensor<T> feats = Tensor<T>::randn({scene.size(), st.channels}, rng, 0.5);
        NoGradGuard guard;
        const auto t0 = std::chrono::steady_clock::now();
        Tensor<T> out = mga(feats, widx, params);
        const auto t1 = std::chrono::steady_clock::now();
        row.ms_forward = std::chrono::duration<double, std::milli>(t1 - t0).count();
        (void)out;
        rows.push_back(row);
    }
    return rows;
}

inline void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "n_points,n_voxels,macs_fine,macs_coarse,macs_baseline,ms_forward\n";
    for (const auto& r : rows)
        os << r.n_points << "," << r.n_voxels << "," << r.macs_fine << "," << r.macs_coarse << ","
           << r.macs_baseline << "," << r.ms_forward << "\n";
    if (!os) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Re-attention diagnostics
// ---------------------------------------------------------------------------

struct ReAttentionReport {
    int num_classes = 0;
    struct Layer {
        int stage = 0;
        int block = 0;
        int heads = 0;
        std::vector<double> class_mean;   // [num_classes * heads]
        std::vector<int64_t> class_count; // [num_classes]
        std::vector<double> size_mean;    // [3 * heads]
        std::vector<int64_t> size_count;  // [3]
    };
    std::vector<Layer> layers;
};

// Runs the model over the clouds with gate capture and averages the per-head
// gate values per class (and per size class) at every block.
template <typename T>
ReAttentionReport collect_reattention(const Model<T>& model, const std::vector<PointCloud>& clouds) {
    ReAttentionReport report;
    report.num_classes = model.config.num_classes;
    bool first_cloud = true;
    for (const auto& cloud : clouds) {
        NoGradGuard guard;
        ForwardCapture<T> capture;
        forward_segmentation(model, cloud.coords, features_from_cloud<T>(cloud), &capture);
        if (first_cloud) {
            report.layers.resize(capture.layers.size());
            for (size_t l = 0; l < capture.layers.size(); ++l) {
                auto& layer = report.layers[l];
                layer.stage = capture.layers[l].stage;
                layer.block = capture.layers[l].block;
                layer.heads = capture.layers[l].heads;
                layer.class_mean.assign(static_cast<size_t>(report.num_classes * layer.heads), 0.0);
                layer.class_count.assign(static_cast<size_t>(report.num_classes), 0);
                layer.size_mean.assign(static_cast<size_t>(3 * layer.heads), 0.0);
                layer.size_count.assign(3, 0);
            }
            first_cloud = false;
        }
        for (size_t l = 0; l < capture.layers.size(); ++l) {
            auto& layer = report.layers[l];
            const auto& cap = capture.layers[l];
            const int heads = cap.heads;
            const T* alpha = cap.alpha.values().data();
            for (int64_t row = 0; row < cap.alpha.dim(0); ++row) {
                const int64_t orig = cap.origin[static_cast<size_t>(row)];
                const int label = cloud.labels[static_cast<size_t>(orig)];
                const int sc = cloud.size_class.empty() ? default_size_class(label)
                                                        : cloud.size_class[static_cast<size_t>(orig)];
                layer.class_count[static_cast<size_t>(label)]++;
                layer.size_count[static_cast<size_t>(sc)]++;
                for (int h = 0; h < heads; ++h) {
                    layer.class_mean[static_cast<size_t>(label * heads + h)] +=
                        static_cast<double>(alpha[row * heads + h]);
                    layer.size_mean[static_cast<size_t>(sc * heads + h)] +=
                        static_cast<double>(alpha[row * heads + h]);
                }
            }
        }
    }
    for (auto& layer : report.layers) {
        for (int c = 0; c < report.num_classes; ++c)
            if (layer.class_count[static_cast<size_t>(c)] > 0)
                for (int h = 0; h < layer.heads; ++h)
                    layer.class_mean[static_cast<size_t>(c * layer.heads + h)] /=
                        static_cast<double>(layer.class_count[static_cast<size_t>(c)]);
        for (int s = 0; s < 3; ++s)
            if (layer.size_count[static_cast<size_t>(s)] > 0)
                for (int h = 0; h < layer.heads; ++h)
                    layer.size_mean[static_cast<size_t>(s * layer.heads + h)] /=
                        static_cast<double>(layer.size_count[static_cast<size_t>(s)]);
    }
    return report;
}

// One CSV per layer: columns layer,class,head_1..head_H. Class rows use the
// class name (or its numeric id outside the default palette); size-class
// aggregate rows follow as size_small / size_medium / size_large.
inline std::vector<std::string> write_reattention_csv(const std::string& out_dir,
                                                      const ReAttentionReport& report) {
    std::vector<std::string> written;
    for (size_t l = 0; l < report.layers.size(); ++l) {
        const auto& layer = report.layers[l];
        char name[64];
        std::snprintf(name, sizeof(name), "reattention_layer%02zu.csv", l);
        const std::string path = out_dir + "/" + name;
        std::ofstream os(path);
        if (!os) throw IoError("cannot open for writing: " + path);
        os << "layer,class";
        for (int h = 1; h <= layer.heads; ++h) os << ",head_" << h;
        os << "\n";
        for (int c = 0; c < report.num_classes; ++c) {
            const std::string cls = (report.num_classes == static_cast<int>(class_names().size()))
                                        ? class_names()[static_cast<size_t>(c)]
                                        : std::to_string(c);
            os << l << "," << cls;
            for (int h = 0; h < layer.heads; ++h)
                os << "," << layer.class_mean[static_cast<size_t>(c * layer.heads + h)];
            os << "\n";
        }
        for (int s = 0; s < 3; ++s) {
            os << l << ",size_" << size_class_name(s);
            for (int h = 0; h < layer.heads; ++h)
                os << "," << layer.size_mean[static_cast<size_t>(s * layer.heads + h)];
            os << "\n";
        }
        if (!os) throw IoError("write failed: " + path);
        written.push_back(path);
    }
    return written;
}

// Cosine distance between two head-profile vectors (1 - cosine similarity).
inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace sat
