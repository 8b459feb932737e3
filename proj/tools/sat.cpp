// Command-line surface for the size-aware point transformer: synthetic scene
// generation, training, evaluation, attention-cost benchmarking, and
// re-attention gate inspection.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "sat/checkpoint.hpp"
#include "sat/common.hpp"
#include "sat/data.hpp"
#include "sat/evalbench.hpp"
#include "sat/network.hpp"
#include "sat/train.hpp"

namespace fs = std::filesystem;
using namespace sat;

namespace {

// Flat "key = value" configuration file, one option per line, '#' comments.
// Values become CLI tokens inserted after the subcommand; options given
// explicitly on the command line keep priority.
std::vector<std::string> expand_config_args(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    std::string config_path;
    for (size_t i = 1; i < args.size();) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            args.erase(args.begin() + static_cast<long>(i));
        } else {
            ++i;
        }
    }
    if (config_path.empty()) return args;

    std::ifstream is(config_path);
    if (!is) throw ConfigError("cannot open config file: " + config_path);

    std::set<std::string> explicit_flags;
    size_t subcommand_pos = 0;
    for (size_t i = 1; i < args.size(); ++i) {
        if (args[i].rfind("--", 0) == 0)
            explicit_flags.insert(args[i].substr(0, args[i].find('=')));
        else if (subcommand_pos == 0)
            subcommand_pos = i;
    }
    if (subcommand_pos == 0) throw ConfigError("--config requires a subcommand");

    const auto trim = [](std::string v) {
        const auto a = v.find_first_not_of(" \t\r");
        const auto b = v.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : v.substr(a, b - a + 1);
    };
    std::vector<std::string> extra;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(config_path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(config_path + ":" + std::to_string(lineno) + ": empty key");
        if (explicit_flags.count("--" + key)) continue;  // command line wins
        if (value == "true") {
            extra.push_back("--" + key);
        } else if (value == "false") {
            continue;
        } else {
            extra.push_back("--" + key);
            extra.push_back(value);
        }
    }
    args.insert(args.begin() + static_cast<long>(subcommand_pos) + 1, extra.begin(), extra.end());
    return args;
}

struct ModelFlags {
    std::string preset = "desk";
    std::string variant = "full";
    bool no_shift = false;
    bool position_bias = false;
};

ModelConfig make_model_config(const ModelFlags& flags, int classes) {
    ModelConfig config;
    if (flags.preset == "desk") config = ModelConfig::desk_preset(classes);
    else if (flags.preset == "s3dis" || flags.preset == "s3dis-desk") config = ModelConfig::s3dis_preset(classes);
    else if (flags.preset == "scannet" || flags.preset == "scannet-desk")
        config = ModelConfig::scannet_preset(classes);
    else
        throw ConfigError("unknown model preset '" + flags.preset +
                          "' (expected desk, s3dis-desk, scannet-desk)");
    config.variant = variant_from_name(flags.variant);
    config.use_window_shift = !flags.no_shift;
    config.position_bias = flags.position_bias;
    return config;
}

void add_model_flags(CLI::App* cmd, ModelFlags& flags) {
    cmd->add_option("--model", flags.preset, "model preset: desk, s3dis-desk, scannet-desk");
    cmd->add_option("--variant", flags.variant,
                    "ablation variant: full, no-reattention, sum-shunted, point-only, lite-mga");
    cmd->add_flag("--no-shift", flags.no_shift, "disable the alternating window shift");
    cmd->add_flag("--position-bias", flags.position_bias,
                  "learned relative-position bias on the point branch");
}

std::vector<std::string> list_satpc(const fs::path& dir) {
    std::vector<std::string> files;
    if (!fs::is_directory(dir)) return files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".satpc")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<PointCloud> load_clouds(const std::string& dir) {
    std::vector<std::string> files = list_satpc(dir);
    if (files.empty()) files = list_satpc(fs::path(dir) / "val");
    if (files.empty()) throw ConfigError("no .satpc files found under " + dir);
    std::vector<PointCloud> clouds;
    clouds.reserve(files.size());
    for (const auto& f : files) clouds.push_back(read_cloud(f));
    return clouds;
}

int classes_from_clouds(const std::vector<PointCloud>& clouds) {
    const int k = clouds.front().num_classes;
    for (const auto& c : clouds)
        if (c.num_classes != k) throw ConfigError("scenes disagree on class count");
    return k;
}

int checkpoint_class_count(const std::vector<CheckpointEntry>& entries) {
    for (const auto& e : entries)
        if (e.name == "head.b") return static_cast<int>(e.shape.at(0));
    throw ConfigError("checkpoint has no classifier head");
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenArgs {
    std::string out;
    int scenes = 10;
    double val_fraction = 0.2;
    uint64_t seed = 1;
    double density = SceneSpec{}.density;
    double room_w = 4.0, room_d = 3.0, room_h = 2.5;
};

void cmd_gen(const GenArgs& args) {
    SceneSpec spec;
    spec.density = args.density;
    spec.room_w = args.room_w;
    spec.room_d = args.room_d;
    spec.room_h = args.room_h;
    spec.validate();

    const int n_val = args.scenes >= 2 ? static_cast<int>(std::lround(args.scenes * args.val_fraction)) : 0;
    const int n_train = args.scenes - n_val;
    fs::create_directories(fs::path(args.out) / "train");
    fs::create_directories(fs::path(args.out) / "val");

    Rng seeder(args.seed);
    std::ofstream manifest(fs::path(args.out) / "manifest.csv");
    if (!manifest) throw IoError("cannot write manifest under " + args.out);
    manifest << "file,points,classes\n";
    for (int i = 0; i < args.scenes; ++i) {
        const uint64_t scene_seed = seeder.next_u64();
        const PointCloud cloud = generate_scene(spec, scene_seed);
        char name[64];
        std::snprintf(name, sizeof(name), "scene_%03d.satpc", i);
        const fs::path path = fs::path(args.out) / (i < n_train ? "train" : "val") / name;
        write_cloud(path.string(), cloud);
        manifest << path.string() << "," << cloud.size() << "," << cloud.num_classes << "\n";
        std::printf("%s,%lld,%d\n", path.string().c_str(), static_cast<long long>(cloud.size()),
                    cloud.num_classes);
    }
    std::printf("wrote %d train + %d val scenes under %s\n", n_train, n_val, args.out.c_str());
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string out = "run";
    ModelFlags model;
    int classes = 0;
    int precision = 32;
    int epochs = 60;
    long long steps = -1;
    double lr = 0.006;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::vector<int> milestones;
    long long max_points = 1024;
    uint64_t seed = 1;
    int eval_every = 5;
    bool verbose = false;
};

template <typename T>
void run_train(const TrainArgs& args) {
    std::vector<PointCloud> train_clouds;
    for (const auto& f : list_satpc(fs::path(args.data) / "train")) train_clouds.push_back(read_cloud(f));
    if (train_clouds.empty()) throw ConfigError("no training scenes under " + args.data + "/train");
    std::vector<PointCloud> val_clouds;
    for (const auto& f : list_satpc(fs::path(args.data) / "val")) val_clouds.push_back(read_cloud(f));

    const int classes = args.classes > 0 ? args.classes : classes_from_clouds(train_clouds);
    ModelConfig config = make_model_config(args.model, classes);
    Model<T> model = build_model<T>(config, args.seed);
    std::printf("model %s/%s: %lld parameters, %d classes, %zu train / %zu val scenes\n",
                args.model.preset.c_str(), args.model.variant.c_str(),
                static_cast<long long>(model.parameter_count()), classes, train_clouds.size(),
                val_clouds.size());

    fs::create_directories(args.out);
    TrainOptions opts;
    opts.lr = args.lr;
    opts.momentum = args.momentum;
    opts.weight_decay = args.weight_decay;
    opts.epochs = args.epochs;
    opts.milestones = args.milestones;
    opts.max_steps = args.steps;
    opts.max_points = args.max_points;
    opts.seed = args.seed;
    opts.eval_every = args.eval_every;
    opts.log_path = (fs::path(args.out) / "train_log.csv").string();
    opts.checkpoint_path = (fs::path(args.out) / "checkpoint.bin").string();
    opts.checkpoint_best_path = (fs::path(args.out) / "best.bin").string();
    opts.verbose = args.verbose;

    const TrainStats stats = train_model(model, train_clouds, val_clouds, opts);
    std::printf("trained %lld steps: final loss %.4f, final batch accuracy %.2f%%\n",
                static_cast<long long>(stats.steps), stats.final_loss, 100.0 * stats.final_accuracy);
    if (stats.best_val_miou >= 0.0) std::printf("best val mIoU %.2f\n", stats.best_val_miou);
    std::printf("checkpoint: %s\n", opts.checkpoint_path.c_str());
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    ModelFlags model;
    std::string out;
    uint64_t seed = 1;
    bool exclude_absent = true;
};

template <typename T>
void run_eval(const EvalArgs& args) {
    const std::vector<PointCloud> clouds = load_clouds(args.data);
    const int data_classes = classes_from_clouds(clouds);
    const auto entries = load_checkpoint(args.checkpoint);
    const int ckpt_classes = checkpoint_class_count(entries);
    if (ckpt_classes != data_classes)
        throw ConfigError("class count mismatch: checkpoint has " + std::to_string(ckpt_classes) +
                          ", data has " + std::to_string(data_classes));

    ModelConfig config = make_model_config(args.model, ckpt_classes);
    Model<T> model = build_model<T>(config, args.seed);
    apply_checkpoint(entries, model.named_parameters());

    const ConfusionMatrix cm = evaluate_model(model, clouds);
    const SegMetrics metrics = miou_macc(cm);

    std::set<int> excluded;
    if (args.exclude_absent)
        for (int c = 0; c < data_classes; ++c)
            if (!metrics.class_present[static_cast<size_t>(c)]) excluded.insert(c);
    const double variance = class_iou_variance(metrics.per_class_iou, excluded);

    std::ofstream csv;
    if (!args.out.empty()) {
        csv.open(args.out);
        if (!csv) throw IoError("cannot open for writing: " + args.out);
        csv << "class,iou,present\n";
    }
    for (int c = 0; c < data_classes; ++c) {
        const std::string name = data_classes == static_cast<int>(class_names().size())
                                     ? class_names()[static_cast<size_t>(c)]
                                     : std::to_string(c);
        std::printf("%-10s iou %6.2f%s\n", name.c_str(), metrics.per_class_iou[static_cast<size_t>(c)],
                    metrics.class_present[static_cast<size_t>(c)] ? "" : "  (absent)");
        if (csv)
            csv << name << "," << metrics.per_class_iou[static_cast<size_t>(c)] << ","
                << (metrics.class_present[static_cast<size_t>(c)] ? 1 : 0) << "\n";
    }
    std::printf("mIoU %.2f  mAcc %.2f  class-IoU variance %.2f (population, %zu classes excluded)\n",
                metrics.miou, metrics.macc, variance, excluded.size());
    if (csv) {
        csv << "mIoU," << metrics.miou << ",\n";
        csv << "mAcc," << metrics.macc << ",\n";
        csv << "variance_population," << variance << ",\n";
    }
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
    std::vector<long long> points = {1000, 2000, 4000};
    ModelFlags model;
    std::string out = "bench.csv";
    uint64_t seed = 1;
};

void cmd_bench(const BenchArgs& args) {
    ModelConfig config = make_model_config(args.model, 7);
    // Calibrate density so generated scenes land near the requested sizes.
    SceneSpec probe;
    probe.density = 50.0;
    const double probe_count = static_cast<double>(generate_scene(probe, args.seed).size());
    std::vector<PointCloud> scenes;
    for (const long long target : args.points) {
        SceneSpec spec;
        spec.density = 50.0 * static_cast<double>(target) / probe_count;
        scenes.push_back(generate_scene(spec, args.seed));
    }
    const std::vector<BenchRow> rows = bench_attention<float>(config, scenes, args.seed);
    write_bench_csv(args.out, rows);
    std::printf("n_points,n_voxels,macs_fine,macs_coarse,macs_baseline,ms_forward\n");
    for (const auto& r : rows)
        std::printf("%lld,%lld,%lld,%lld,%lld,%.3f\n", static_cast<long long>(r.n_points),
                    static_cast<long long>(r.n_voxels), r.macs_fine, r.macs_coarse, r.macs_baseline,
                    r.ms_forward);
    std::printf("wrote %s\n", args.out.c_str());
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

struct InspectArgs {
    std::string checkpoint;
    std::string data;
    ModelFlags model;
    std::string out = "reattention";
    uint64_t seed = 1;
};

template <typename T>
void run_inspect(const InspectArgs& args) {
    const std::vector<PointCloud> clouds = load_clouds(args.data);
    const int data_classes = classes_from_clouds(clouds);
    const auto entries = load_checkpoint(args.checkpoint);
    const int ckpt_classes = checkpoint_class_count(entries);
    if (ckpt_classes != data_classes)
        throw ConfigError("class count mismatch: checkpoint has " + std::to_string(ckpt_classes) +
                          ", data has " + std::to_string(data_classes));
    ModelConfig config = make_model_config(args.model, ckpt_classes);
    Model<T> model = build_model<T>(config, args.seed);
    apply_checkpoint(entries, model.named_parameters());

    fs::create_directories(args.out);
    const ReAttentionReport report = collect_reattention(model, clouds);
    const auto files = write_reattention_csv(args.out, report);
    for (const auto& f : files) std::printf("%s\n", f.c_str());

    // Depth trend: distance between the small- and large-object gate profiles.
    std::printf("layer,stage,block,small_vs_large_cosine_distance\n");
    for (size_t l = 0; l < report.layers.size(); ++l) {
        const auto& layer = report.layers[l];
        const std::span<const double> small(layer.size_mean.data() + kSizeSmall * layer.heads,
                                            static_cast<size_t>(layer.heads));
        const std::span<const double> large(layer.size_mean.data() + kSizeLarge * layer.heads,
                                            static_cast<size_t>(layer.heads));
        std::printf("%zu,%d,%d,%.6f\n", l, layer.stage, layer.block, cosine_distance(small, large));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"size-aware point transformer: scenes, training, evaluation, benchmarks"};
    app.require_subcommand(1);
    app.footer("Every subcommand accepts --config FILE with flat 'key = value' lines naming its\n"
               "long options; explicit command-line flags override file values. SAT_SEED in the\n"
               "environment seeds any command not given --seed.");

    GenArgs gen_args;
    TrainArgs train_args;
    EvalArgs eval_args;
    BenchArgs bench_args;
    InspectArgs inspect_args;
    std::function<void()> action;

    CLI::App* gen = app.add_subcommand("gen", "generate synthetic labeled scenes (SATPC1 files)");
    gen->add_option("--out", gen_args.out, "output directory (train/ and val/ created inside)")->required();
    gen->add_option("--scenes", gen_args.scenes, "total number of scenes")->check(CLI::PositiveNumber);
    gen->add_option("--val-fraction", gen_args.val_fraction, "fraction of scenes placed in val/");
    gen->add_option("--seed", gen_args.seed, "RNG seed")->envname("SAT_SEED");
    gen->add_option("--density", gen_args.density, "surface density, points per square meter");
    gen->add_option("--room-w", gen_args.room_w, "room width in meters");
    gen->add_option("--room-d", gen_args.room_d, "room depth in meters");
    gen->add_option("--room-h", gen_args.room_h, "room height in meters");
    gen->callback([&] { action = [&] { cmd_gen(gen_args); }; });

    CLI::App* train = app.add_subcommand("train", "train a segmentation model");
    train->add_option("--data", train_args.data, "dataset directory with train/ (and optionally val/)")
        ->required();
    train->add_option("--out", train_args.out, "output directory for checkpoints and the log");
    add_model_flags(train, train_args.model);
    train->add_option("--classes", train_args.classes, "class count override (default: from data)");
    train->add_option("--precision", train_args.precision, "scalar width: 32 or 64")
        ->check(CLI::IsMember({32, 64}));
    train->add_option("--epochs", train_args.epochs, "training epochs")->check(CLI::PositiveNumber);
    train->add_option("--steps", train_args.steps, "hard cap on optimizer steps (-1 = none)");
    train->add_option("--lr", train_args.lr, "initial learning rate");
    train->add_option("--momentum", train_args.momentum, "SGD momentum");
    train->add_option("--weight-decay", train_args.weight_decay, "L2 weight decay");
    train->add_option("--milestones", train_args.milestones,
                      "epochs at which the learning rate decays by 10x (default 70%,90%)")
        ->delimiter(',');
    train->add_option("--max-points", train_args.max_points, "per-step point budget (random crop)");
    train->add_option("--seed", train_args.seed, "RNG seed")->envname("SAT_SEED");
    train->add_option("--eval-every", train_args.eval_every, "epochs between validation passes");
    train->add_flag("--verbose", train_args.verbose, "per-epoch progress on stderr");
    train->callback([&] {
        action = [&] {
            if (train_args.precision == 64) run_train<double>(train_args);
            else run_train<float>(train_args);
        };
    });

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint: per-class IoU, mIoU, mAcc");
    eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
    eval->add_option("--data", eval_args.data, "directory of .satpc scenes (or one with val/)")->required();
    add_model_flags(eval, eval_args.model);
    eval->add_option("--out", eval_args.out, "also write metrics to this CSV");
    eval->add_option("--seed", eval_args.seed, "RNG seed (model scaffolding only)")->envname("SAT_SEED");
    eval->add_flag("!--include-absent", eval_args.exclude_absent,
                   "include structurally absent classes in the variance");
    eval->callback([&] { action = [&] { run_eval<float>(eval_args); }; });

    CLI::App* bench = app.add_subcommand("bench", "attention cost table over scene sizes");
    bench->add_option("--points", bench_args.points, "target point counts, comma separated")
        ->delimiter(',');
    add_model_flags(bench, bench_args.model);
    bench->add_option("--out", bench_args.out, "output CSV path");
    bench->add_option("--seed", bench_args.seed, "RNG seed")->envname("SAT_SEED");
    bench->callback([&] { action = [&] { cmd_bench(bench_args); }; });

    CLI::App* inspect = app.add_subcommand("inspect", "export per-layer re-attention gate statistics");
    inspect->add_option("--checkpoint", inspect_args.checkpoint, "checkpoint file")->required();
    inspect->add_option("--data", inspect_args.data, "directory of .satpc scenes")->required();
    add_model_flags(inspect, inspect_args.model);
    inspect->add_option("--out", inspect_args.out, "output directory for per-layer CSVs");
    inspect->add_option("--seed", inspect_args.seed, "RNG seed (model scaffolding only)")
        ->envname("SAT_SEED");
    inspect->callback([&] { action = [&] { run_inspect<float>(inspect_args); }; });

    std::vector<std::string> args;
    try {
        args = expand_config_args(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    }
    std::vector<const char*> argv2;
    for (const auto& a : args) argv2.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv2.size()), argv2.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage / configuration errors
    }

    try {
        action();
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 2;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
