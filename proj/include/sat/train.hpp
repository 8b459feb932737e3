#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "sat/checkpoint.hpp"
#include "sat/common.hpp"
#include "sat/data.hpp"
#include "sat/evalbench.hpp"
#include "sat/network.hpp"

namespace sat {

struct TrainOptions {
    double lr = 0.006;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double decay_factor = 0.1;
    int epochs = 60;
    std::vector<int> milestones;  // 1-based epochs; empty -> 60% and 80% of total
    int64_t max_steps = -1;       // stop after this many steps when positive
    int64_t max_points = 1024;    // per-step crop
    uint64_t seed = 1;
    int eval_every = 0;  // epochs between validation passes; 0 disables
    std::string log_path;
    std::string checkpoint_path;
    std::string checkpoint_best_path;
    bool verbose = false;
};

struct TrainStats {
    int64_t steps = 0;
    double final_loss = 0.0;
    double final_accuracy = 0.0;
    double best_val_miou = -1.0;
    std::vector<double> loss_curve;  // one entry per step
};

namespace detail {

inline std::vector<int> default_milestones(int epochs) {
    const int first = std::max(1, (epochs * 7) / 10);
    const int second = std::max(first + 1, (epochs * 9) / 10);
    if (second > epochs) return {first};
    return {first, second};
}

}  // namespace detail

// Momentum SGD with multi-step decay over cross-entropy. One step consumes
// one (cropped) scene. Fully deterministic for a fixed seed: scene order,
// crops, and update order are all derived from it.
template <typename T>
TrainStats train_model(Model<T>& model, const std::vector<PointCloud>& train_clouds,
                       const std::vector<PointCloud>& val_clouds, const TrainOptions& opts) {
    if (train_clouds.empty()) throw ConfigError("train_model: no training scenes");
    if (!(opts.lr > 0.0)) throw ConfigError("train_model: learning rate must be positive");
    std::vector<int> milestones = opts.milestones.empty() ? detail::default_milestones(opts.epochs)
                                                          : opts.milestones;
    for (size_t i = 1; i < milestones.size(); ++i)
        if (milestones[i] <= milestones[i - 1]) throw ConfigError("train_model: milestones must ascend");

    NamedParams<T> params = model.named_parameters();
    std::vector<std::vector<T>> velocity(params.size());
    for (size_t i = 0; i < params.size(); ++i)
        velocity[i].assign(static_cast<size_t>(params[i].second.numel()), T(0));

    std::ofstream log;
    if (!opts.log_path.empty()) {
        log.open(opts.log_path);
        if (!log) throw IoError("cannot open training log: " + opts.log_path);
        log << "step,epoch,loss,accuracy,lr\n";
    }

    Rng base(opts.seed);
    TrainStats stats;
    bool done = false;
    for (int epoch = 1; epoch <= opts.epochs && !done; ++epoch) {
        double lr_now = opts.lr;
        for (const int m : milestones)
            if (epoch > m) lr_now *= opts.decay_factor;

        std::vector<size_t> order(train_clouds.size());
        std::iota(order.begin(), order.end(), size_t{0});
        Rng epoch_rng = base.fork(static_cast<uint64_t>(epoch));
        epoch_rng.shuffle(order);

        double epoch_loss = 0.0, epoch_acc = 0.0;
        int64_t epoch_steps = 0;
        for (const size_t scene_idx : order) {
            Rng crop_rng = epoch_rng.fork(scene_idx + 1);
            const PointCloud batch = subsample_cloud(train_clouds[scene_idx], opts.max_points, crop_rng);

            model.zero_grad();
            Tensor<T> logits = forward_segmentation(model, batch.coords, features_from_cloud<T>(batch));
            Tensor<T> loss = cross_entropy_mean(logits, batch.labels);
            const double loss_val = static_cast<double>(loss.item());
            if (!std::isfinite(loss_val))
                throw NumericError("training diverged: non-finite loss at step " +
                                   std::to_string(stats.steps + 1));
            loss.backward();

            // Momentum SGD with weight decay folded into the gradient.
            for (size_t pi = 0; pi < params.size(); ++pi) {
                auto vals = params[pi].second.values();
                auto grads = params[pi].second.grad();
                auto& vel = velocity[pi];
                const T wd = static_cast<T>(opts.weight_decay);
                const T mu = static_cast<T>(opts.momentum);
                const T step = static_cast<T>(lr_now);
                for (size_t j = 0; j < vals.size(); ++j) {
                    const T g = grads[j] + wd * vals[j];
                    vel[j] = mu * vel[j] + g;
                    vals[j] -= step * vel[j];
                }
            }

            // Batch accuracy from the logits already computed.
            int64_t correct = 0;
            const T* lp = logits.values().data();
            const int64_t k = logits.dim(1);
            for (int64_t i = 0; i < logits.dim(0); ++i) {
                int best = 0;
                for (int64_t j = 1; j < k; ++j)
                    if (lp[i * k + j] > lp[i * k + best]) best = static_cast<int>(j);
                if (best == batch.labels[static_cast<size_t>(i)]) ++correct;
            }
            const double acc = static_cast<double>(correct) / static_cast<double>(logits.dim(0));

            ++stats.steps;
            ++epoch_steps;
            epoch_loss += loss_val;
            epoch_acc += acc;
            stats.final_loss = loss_val;
            stats.final_accuracy = acc;
            stats.loss_curve.push_back(loss_val);
            if (log) log << stats.steps << "," << epoch << "," << loss_val << "," << acc << "," << lr_now << "\n";
            if (opts.max_steps > 0 && stats.steps >= opts.max_steps) {
                done = true;
                break;
            }
        }

        if (opts.verbose && epoch_steps > 0)
            std::fprintf(stderr, "epoch %d  loss %.4f  acc %.4f  lr %g\n", epoch,
                         epoch_loss / static_cast<double>(epoch_steps),
                         epoch_acc / static_cast<double>(epoch_steps), lr_now);

        if (opts.eval_every > 0 && !val_clouds.empty() &&
            (epoch % opts.eval_every == 0 || epoch == opts.epochs || done)) {
            const SegMetrics metrics = miou_macc(evaluate_model(model, val_clouds));
            if (metrics.miou > stats.best_val_miou) {
                stats.best_val_miou = metrics.miou;
                if (!opts.checkpoint_best_path.empty())
                    save_checkpoint(opts.checkpoint_best_path, model.named_parameters());
            }
            if (opts.verbose)
                std::fprintf(stderr, "epoch %d  val mIoU %.2f (best %.2f)\n", epoch, metrics.miou,
                             stats.best_val_miou);
        }
    }

    if (!opts.checkpoint_path.empty()) save_checkpoint(opts.checkpoint_path, model.named_parameters());
    return stats;
}

}  // namespace sat
