// SPDX-License-Identifier: Apache-2.0

// chirploc: generate synthetic chirp spectrograms, train the ViT regressor,
// evaluate it and run predictions.
//
// Configuration precedence (lowest to highest): built-in defaults, the JSON
// file named by $CHIRPLOC_CONFIG, the file given with --config, then flags.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "chirploc/checkpoint.hpp"
#include "chirploc/config_io.hpp"
#include "chirploc/dataset.hpp"
#include "chirploc/errors.hpp"
#include "chirploc/evaluator.hpp"
#include "chirploc/model.hpp"
#include "chirploc/synth.hpp"
#include "chirploc/trainer.hpp"
#include "chirploc/version.hpp"

namespace fs = std::filesystem;
using namespace chirploc;

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
};

RunConfig resolve_config(const CommonOptions& opts) {
    RunConfig cfg;
    if (opts.config_path.empty()) {
        if (const char* env = std::getenv("CHIRPLOC_CONFIG"); env != nullptr && *env != '\0') {
            cfg = load_run_config(env);
        }
    } else {
        cfg = load_run_config(opts.config_path);
    }
    return cfg;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
    std::ofstream out(path, std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
}

template <typename T>
VitRegressor<T> model_from_checkpoint(const Checkpoint& ckpt) {
    VitRegressor<T> model(ckpt.config, 0);
    model.load_state(ckpt.state);
    return model;
}

int run_generate(const CommonOptions& common, std::size_t count) {
    RunConfig cfg = resolve_config(common);
    if (common.seed) {
        cfg.synth.seed = *common.seed;
    }
    cfg.synth.validate();
    const GenerationManifest m = generate_dataset(cfg.synth, count, common.out);
    save_run_config(fs::path(common.out) / "config.json", cfg);
    fmt::print("wrote {} spectrograms and {} (seed {})\n", m.count, m.labels.string(), cfg.synth.seed);
    return 0;
}

struct TrainOptions {
    std::string data;
    std::string mode;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr;
    std::string init;
    bool quiet = false;
};

int run_train(const CommonOptions& common, const TrainOptions& t) {
    RunConfig cfg = resolve_config(common);
    if (common.seed) {
        cfg.train.seed = *common.seed;
    }
    if (!t.mode.empty()) {
        cfg.train.mode = parse_train_mode(t.mode);
    }
    if (t.epochs) {
        cfg.train.epochs_max = *t.epochs;
    }
    if (t.batch_size) {
        cfg.train.batch_size = *t.batch_size;
    }
    if (t.lr) {
        cfg.train.lr = *t.lr;
    }
    cfg.model.validate();
    cfg.train.validate();

    const ChirpDataset ds = load_dataset(t.data);
    const fs::path out = common.out;
    fs::create_directories(out);
    save_run_config(out / "config.json", cfg);

    const TrainData data = prepare_train_data(ds.images, ds.labels(), cfg.train);
    data.stats.save(out / "stats.json");

    VitRegressor<float> model(cfg.model, cfg.train.seed);
    if (!t.init.empty()) {
        const Checkpoint init = load_checkpoint(t.init);
        model.load_state(init.state);
    }
    const TrainResult result = train(model, data, cfg.train, [&](const EpochRecord& e) {
        if (!t.quiet) {
            fmt::print("epoch {:3d}  train {:.5f}  test {:.5f}  r_t0 {:.4f}  r_f0 {:.4f}  r_f1 {:.4f}  lr {:.2e}  {:.1f}s\n",
                       e.epoch, e.train_loss, e.test_loss, e.pearson[0], e.pearson[1], e.pearson[2], e.lr,
                       e.seconds);
            std::fflush(stdout);
        }
    });
    result.report.write_csv(out / "report.csv");

    nlohmann::ordered_json trainable = nlohmann::ordered_json::array();
    nlohmann::ordered_json frozen = nlohmann::ordered_json::array();
    for (const auto& p : model.parameters()) {
        const bool on = cfg.train.mode == TrainMode::Full || p.role != ParamRole::Backbone;
        (on ? trainable : frozen).push_back(p.name);
    }
    nlohmann::ordered_json meta;
    meta["tool_version"] = std::string(kVersion);
    meta["mode"] = std::string(to_string(cfg.train.mode));
    meta["best_epoch"] = result.report.best_epoch;
    meta["completed_epochs"] = result.report.completed_epochs();
    meta["stop_reason"] = result.report.stop_reason;
    meta["test_fraction"] = cfg.train.test_fraction;
    meta["split_seed"] = cfg.train.split_seed;
    meta["train_seed"] = cfg.train.seed;
    meta["trainable_parameters"] = trainable;
    meta["frozen_parameters"] = frozen;
    meta["trainable_count"] = model.parameter_count(cfg.train.mode);
    meta["total_count"] = model.parameter_count();

    Checkpoint ckpt;
    ckpt.config = cfg.model;
    ckpt.precision = Precision::Float32;
    ckpt.stats = data.stats;
    ckpt.mode = cfg.train.mode;
    ckpt.metadata = meta;
    ckpt.state = result.best_state;
    ckpt.metadata["weights"] = "best";
    save_checkpoint(out / "best.ckpt", ckpt);
    ckpt.state = result.final_state;
    ckpt.metadata["weights"] = "final";
    save_checkpoint(out / "final.ckpt", ckpt);

    nlohmann::ordered_json manifest;
    manifest["tool"] = "chirploc";
    manifest["version"] = std::string(kVersion);
    manifest["layout_version"] = kLayoutVersion;
    manifest["data_dir"] = fs::absolute(t.data).string();
    manifest["best_checkpoint"] = "best.ckpt";
    manifest["final_checkpoint"] = "final.ckpt";
    manifest["report"] = "report.csv";
    manifest["stats"] = "stats.json";
    manifest["config"] = "config.json";
    manifest["best_epoch"] = result.report.best_epoch;
    manifest["completed_epochs"] = result.report.completed_epochs();
    manifest["stop_reason"] = result.report.stop_reason;
    write_json(out / "manifest.json", manifest);
    fmt::print("best epoch {} of {} ({}); outputs in {}\n", result.report.best_epoch,
               result.report.completed_epochs(), result.report.stop_reason, out.string());
    return 0;
}

struct EvalOptions {
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    bool report_text = false;
    std::size_t batch_size = 64;
};

int run_eval(const CommonOptions& common, const EvalOptions& e) {
    const Checkpoint ckpt = load_checkpoint(e.checkpoint);
    if (!ckpt.stats) {
        throw IoError("checkpoint carries no normalization stats: " + e.checkpoint);
    }
    const ChirpDataset ds = load_dataset(e.data);
    const LabelMatrix labels = ds.labels();

    std::vector<std::size_t> indices;
    if (e.split == "all") {
        indices.resize(ds.size());
        for (std::size_t i = 0; i < indices.size(); ++i) {
            indices[i] = i;
        }
    } else {
        const double fraction = ckpt.metadata.value("test_fraction", 0.2);
        const auto split_seed = ckpt.metadata.value("split_seed", std::uint64_t{42});
        const DatasetSplit split = split_dataset(ds.size(), fraction, split_seed);
        indices = e.split == "train" ? split.train : split.test;
    }

    const auto model = model_from_checkpoint<float>(ckpt);
    const EvalReport report = evaluate(make_predictor(model), ds.images, labels, indices, *ckpt.stats,
                                       ckpt.config.image_size, e.batch_size);
    const fs::path out = common.out.empty() ? fs::path(e.checkpoint).parent_path() / "eval" : fs::path(common.out);
    write_eval_outputs(report, out);
    const std::string text = format_prediction_report(report.predictions, report.truths);
    {
        std::ofstream rt(out / "report.txt", std::ios::binary);
        rt << text;
    }
    if (e.report_text) {
        std::cout << text;
    }
    fmt::print("{} samples ({} split)  r_t0 {:.6f}  r_f0 {:.6f}  r_f1 {:.6f}  mse {:.6f}  inference {:.3f}s\n",
               report.n_samples, e.split, report.pearson[0], report.pearson[1], report.pearson[2], report.mse,
               report.inference_seconds);
    return 0;
}

struct PredictOptions {
    std::string checkpoint;
    std::string stats;
    std::vector<std::string> images;
    bool text = false;
};

int run_predict(const CommonOptions& common, const PredictOptions& p) {
    const fs::path stats_path =
        p.stats.empty() ? fs::path(p.checkpoint).parent_path() / "stats.json" : fs::path(p.stats);
    if (!fs::exists(stats_path)) {
        throw IoError(fmt::format("normalization stats sidecar not found at {}; pass --stats <stats.json>",
                                  stats_path.string()));
    }
    const NormalizationStats stats = NormalizationStats::load(stats_path);
    const Checkpoint ckpt = load_checkpoint(p.checkpoint);
    const auto model = model_from_checkpoint<float>(ckpt);

    std::vector<GrayImage> images;
    images.reserve(p.images.size());
    for (const auto& path : p.images) {
        images.push_back(read_png(path));
    }
    std::vector<std::size_t> idx(images.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    const ImageBatch batch = make_image_batch(images, idx, ckpt.config.image_size);
    const LabelMatrix pred = denormalize_predictions(make_predictor(model)(batch, idx), stats);

    std::string out = p.text ? std::string() : std::string("image,t0,f0,f1\n");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (p.text) {
            out += fmt::format("{}: {}\n", p.images[i], describe_chirp(pred.rows[i]));
        } else {
            out += fmt::format("{},{},{},{}\n", p.images[i], pred.rows[i][0], pred.rows[i][1], pred.rows[i][2]);
        }
    }
    if (common.out.empty()) {
        std::cout << out;
    } else {
        std::ofstream f(common.out, std::ios::binary);
        f << out;
        if (!f) {
            throw IoError("cannot write " + common.out);
        }
    }
    return 0;
}

void add_common(CLI::App* cmd, CommonOptions& opts, bool out_required) {
    cmd->add_option("--config", opts.config_path, "JSON run configuration (overrides $CHIRPLOC_CONFIG)");
    cmd->add_option("--seed", opts.seed, "Random seed");
    auto* out = cmd->add_option("--out", opts.out, "Output directory or file");
    if (out_required) {
        out->required();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic chirp spectrograms and a LoRA-adapted ViT regressor"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    CommonOptions gen_common;
    std::size_t count = 0;
    auto* gen = app.add_subcommand("generate", "Synthesize spectrogram PNGs and labels.csv");
    add_common(gen, gen_common, true);
    gen->add_option("--count", count, "Number of spectrograms")->required()->check(CLI::PositiveNumber);

    CommonOptions train_common;
    TrainOptions train_opts;
    auto* tr = app.add_subcommand("train", "Train on a generated dataset");
    add_common(tr, train_common, true);
    tr->add_option("--data", train_opts.data, "Dataset directory")->required();
    tr->add_option("--mode", train_opts.mode, "full | lora_finetune")
        ->check(CLI::IsMember({"full", "lora_finetune"}));
    tr->add_option("--epochs", train_opts.epochs, "Maximum epochs")->check(CLI::PositiveNumber);
    tr->add_option("--batch-size", train_opts.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
    tr->add_option("--lr", train_opts.lr, "Initial learning rate")->check(CLI::PositiveNumber);
    tr->add_option("--init", train_opts.init, "Checkpoint whose weights initialize the model");
    tr->add_flag("--quiet", train_opts.quiet, "Suppress per-epoch progress lines");

    CommonOptions eval_common;
    EvalOptions eval_opts;
    auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
    add_common(ev, eval_common, false);
    ev->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint file")->required();
    ev->add_option("--data", eval_opts.data, "Dataset directory")->required();
    ev->add_option("--split", eval_opts.split, "test | train | all")->check(CLI::IsMember({"test", "train", "all"}));
    ev->add_option("--batch-size", eval_opts.batch_size, "Inference batch size")->check(CLI::PositiveNumber);
    ev->add_flag("--report-text", eval_opts.report_text, "Print the per-sample text report");

    CommonOptions pred_common;
    PredictOptions pred_opts;
    auto* pr = app.add_subcommand("predict", "Predict chirp parameters for PNG images");
    add_common(pr, pred_common, false);
    pr->add_option("--checkpoint", pred_opts.checkpoint, "Checkpoint file")->required();
    pr->add_option("--stats", pred_opts.stats, "Normalization stats sidecar (default: next to checkpoint)");
    pr->add_flag("--text", pred_opts.text, "Emit sentences instead of CSV");
    pr->add_option("images", pred_opts.images, "PNG files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            return run_generate(gen_common, count);
        }
        if (tr->parsed()) {
            return run_train(train_common, train_opts);
        }
        if (ev->parsed()) {
            return run_eval(eval_common, eval_opts);
        }
        if (pr->parsed()) {
            return run_predict(pred_common, pred_opts);
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
