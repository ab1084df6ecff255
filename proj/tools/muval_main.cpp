// Command-line front end: dataset synthesis, preprocessing, training,
// evaluation, ablation comparison, gradient checking, parameter counting,
// and classical baselines. Exit codes: 0 success, 1 validation or contract
// failure, 2 I/O or format error.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "muval/ablate.hpp"
#include "muval/attention.hpp"
#include "muval/metrics.hpp"
#include "muval/model.hpp"
#include "muval/preprocess.hpp"
#include "muval/synthetic.hpp"
#include "muval/train.hpp"

namespace fs = std::filesystem;
using namespace muval;

namespace {

struct ShapeArg {
    int d = 16, h = 32, w = 32;
};

ShapeArg parse_shape(const std::string& text) {
    ShapeArg s;
    if (std::sscanf(text.c_str(), "%dx%dx%d", &s.d, &s.h, &s.w) != 3 || s.d < 1 || s.h < 1 || s.w < 1)
        throw ConfigError("shape must look like DxHxW, got `" + text + "`");
    return s;
}

AttentionMode parse_mode(const std::string& text) {
    if (text == "full" || text == "multi-view") return AttentionMode::MultiView;
    if (text == "single-view") return AttentionMode::SingleView;
    if (text == "no-attention" || text == "off") return AttentionMode::Off;
    throw ConfigError("unknown mode `" + text + "`");
}

BackboneConfig parse_backbone(const std::string& preset) {
    if (preset == "desk") return desk_backbone();
    if (preset == "canonical") return canonical_backbone();
    throw ConfigError("unknown config preset `" + preset + "` (expected desk or canonical)");
}

// Manifest paths resolve relative to the manifest's own directory.
std::vector<Sample> load_samples(const std::string& manifest_path) {
    const auto entries = load_manifest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<Sample> samples;
    samples.reserve(entries.size());
    for (const auto& e : entries) {
        fs::path p(e.path);
        if (p.is_relative()) p = base / p;
        samples.push_back({read_volume(p.string()), e.label});
    }
    return samples;
}

ShapeArg common_shape(const std::vector<Sample>& samples) {
    if (samples.empty()) throw ContractError("manifest holds no samples");
    ShapeArg s{samples[0].volume.depth(), samples[0].volume.height(), samples[0].volume.width()};
    for (const auto& smp : samples)
        if (smp.volume.depth() != s.d || smp.volume.height() != s.h || smp.volume.width() != s.w)
            throw DimensionError("volumes in the manifest have differing shapes");
    return s;
}

struct TrainFlags {
    std::string manifest;
    std::string out_checkpoint;
    std::string history_csv;
    std::string mode = "full";
    std::string config = "desk";
    bool force = false;
    bool no_augment = false;
    double lr = 1e-4;
    double gamma = 0.99;
    int batch = 10;
    int epochs = 60;
    int patience = 40;
    double weight_decay = 0.01;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_outputs) {
    if (with_outputs) {
        cmd->add_option("--manifest", f.manifest, "training manifest CSV")->required();
        cmd->add_option("--out", f.out_checkpoint, "output checkpoint path")->required();
        cmd->add_option("--history", f.history_csv, "optional training-history CSV path");
        cmd->add_option("--mode", f.mode, "full|single-view|no-attention")->capture_default_str();
    }
    cmd->add_option("--config", f.config, "desk|canonical backbone preset")->capture_default_str();
    cmd->add_flag("--force", f.force, "allow training the canonical configuration");
    cmd->add_flag("--no-augment", f.no_augment, "disable training-time augmentation");
    cmd->add_option("--lr", f.lr, "initial learning rate")->capture_default_str();
    cmd->add_option("--gamma", f.gamma, "per-epoch exponential lr decay")->capture_default_str();
    cmd->add_option("--batch", f.batch, "batch size")->capture_default_str();
    cmd->add_option("--epochs", f.epochs, "maximum training epochs")->capture_default_str();
    cmd->add_option("--patience", f.patience, "early-stop patience in epochs")->capture_default_str();
    cmd->add_option("--weight-decay", f.weight_decay, "decoupled weight decay")->capture_default_str();
    cmd->add_option("--val-fraction", f.val_fraction, "validation fraction of the training set")
        ->capture_default_str();
    cmd->add_option("--seed", f.seed, "random seed")->capture_default_str();
}

TrainConfig make_train_config(const TrainFlags& f) {
    TrainConfig cfg;
    cfg.lr0 = f.lr;
    cfg.gamma = f.gamma;
    cfg.batch_size = f.batch;
    cfg.max_epochs = f.epochs;
    cfg.patience = f.patience;
    cfg.adamw.weight_decay = f.weight_decay;
    cfg.seed = f.seed;
    cfg.val_fraction = f.val_fraction;
    cfg.augment = !f.no_augment;
    return cfg;
}

ModelConfig make_model_config(const TrainFlags& f, const ShapeArg& shape, AttentionMode mode) {
    ModelConfig cfg;
    cfg.d = shape.d;
    cfg.h = shape.h;
    cfg.w = shape.w;
    cfg.mode = mode;
    cfg.backbone = parse_backbone(f.config);
    if (f.config == "canonical" && !f.force)
        throw ConfigError("training the canonical configuration is refused without --force "
                          "(63M parameters are not desk-trainable)");
    return cfg;
}

MetricsReport eval_model_on(MuvalModel<float>& model, const std::vector<Sample>& samples,
                            int batch) {
    auto scores = score_samples(model, samples, batch);
    std::vector<int> truth;
    truth.reserve(samples.size());
    for (const auto& s : samples) truth.push_back(s.label);
    return evaluate_scores(scores, truth);
}

int cmd_synth(const std::string& out_dir, int per_class, const std::string& shape_text,
              std::uint64_t seed, double sigma_bg) {
    const ShapeArg shape = parse_shape(shape_text);
    BlobSpec spec;
    spec.background_sigma = sigma_bg;
    fs::create_directories(out_dir);
    std::vector<ManifestEntry> manifest;
    for (int label : {0, 1}) {
        for (int i = 0; i < per_class; ++i) {
            auto sample = generate_synthetic(
                spec, shape.d, shape.h, shape.w, label,
                seed_combine(seed, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(i)));
            char name[64];
            std::snprintf(name, sizeof(name), "sample_l%d_%04d.rvol", label, i);
            write_volume(sample.volume, (fs::path(out_dir) / name).string());
            manifest.push_back({name, label});
        }
    }
    save_manifest(manifest, (fs::path(out_dir) / "manifest.csv").string());
    std::cout << "wrote " << manifest.size() << " volumes and manifest.csv to " << out_dir << "\n";
    return 0;
}

int cmd_preprocess(const std::string& manifest_path, const std::string& out_dir,
                   const std::string& target_text, double low, double high) {
    const ShapeArg target = parse_shape(target_text);
    const auto entries = load_manifest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    fs::create_directories(out_dir);
    std::vector<ManifestEntry> out_manifest;
    for (const auto& e : entries) {
        fs::path p(e.path);
        if (p.is_relative()) p = base / p;
        Volume v = read_volume(p.string());
        v = window_normalize(v, low, high);
        v = resize_trilinear(v, target.d, target.h, target.w);
        const std::string name = fs::path(e.path).filename().string();
        write_volume(v, (fs::path(out_dir) / name).string());
        out_manifest.push_back({name, e.label});
    }
    save_manifest(out_manifest, (fs::path(out_dir) / "manifest.csv").string());
    std::cout << "preprocessed " << out_manifest.size() << " volumes into " << out_dir << "\n";
    return 0;
}

int cmd_train(const TrainFlags& f) {
    const auto samples = load_samples(f.manifest);
    const ShapeArg shape = common_shape(samples);
    const ModelConfig model_cfg = make_model_config(f, shape, parse_mode(f.mode));
    const TrainConfig train_cfg = make_train_config(f);
    auto result = train<float>(samples, train_cfg, model_cfg);
    save_checkpoint(result.best_params, result.best_buffers, f.out_checkpoint);
    if (!f.history_csv.empty()) save_history_csv(result.history, f.history_csv);
    std::cout << "trained " << result.history.epochs() << " epochs (stop: "
              << to_string(result.history.stop_reason) << "), best epoch "
              << result.history.best_epoch << ", checkpoint " << f.out_checkpoint << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest_path,
             const std::string& config, const std::string& mode_text, int batch,
             const std::string& metrics_json, const std::string& roc_csv) {
    const auto samples = load_samples(manifest_path);
    const ShapeArg shape = common_shape(samples);
    ModelConfig cfg;
    cfg.d = shape.d;
    cfg.h = shape.h;
    cfg.w = shape.w;
    cfg.mode = parse_mode(mode_text);
    cfg.backbone = parse_backbone(config);
    MuvalModel<float> model(cfg, 0);
    load_checkpoint_into(model, checkpoint);
    auto rep = eval_model_on(model, samples, batch);
    if (!metrics_json.empty()) {
        std::ofstream os(metrics_json);
        if (!os) throw FormatError("cannot open metrics JSON for writing: " + metrics_json);
        os << metrics_report_to_json(rep).dump(2) << "\n";
    }
    if (!roc_csv.empty()) save_roc_csv(rep.roc, roc_csv);
    std::cout << "acc " << format_percent(rep.accuracy) << "  f1 " << format_percent(rep.f1)
              << "  auc " << format_auc(rep.auc) << "  (tp " << rep.tp << " fp " << rep.fp
              << " tn " << rep.tn << " fn " << rep.fn << ")\n";
    return 0;
}

int cmd_ablate(const TrainFlags& f, const std::string& train_manifest,
               const std::string& test_manifest, const std::string& out_csv) {
    const auto train_samples = load_samples(train_manifest);
    const auto test_samples = load_samples(test_manifest);
    const ShapeArg shape = common_shape(train_samples);
    const ModelConfig model_template = make_model_config(f, shape, AttentionMode::MultiView);
    const auto rows = run_ablation(train_samples, test_samples, make_train_config(f), model_template);
    save_ablation_csv(rows, out_csv);
    for (const auto& r : rows)
        std::cout << r.model << ": acc " << format_percent(r.accuracy) << " f1 "
                  << format_percent(r.f1) << " auc " << format_auc(r.auc) << " params " << r.params
                  << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& config, const std::string& mode_text,
                  const std::string& shape_text, std::uint64_t seed, double epsilon,
                  int max_coords, int batch) {
    const ShapeArg shape = parse_shape(shape_text);
    ModelConfig cfg;
    cfg.d = shape.d;
    cfg.h = shape.h;
    cfg.w = shape.w;
    cfg.mode = parse_mode(mode_text);
    cfg.backbone = parse_backbone(config);

    MuvalModel<double> model(cfg, seed_combine(seed, 0x6d));
    Rng rng(seed_combine(seed, 0xda7a));
    Tensor<double> volumes(Shape{batch, cfg.d, cfg.h, cfg.w});
    for (std::int64_t i = 0; i < volumes.numel(); ++i) volumes[i] = rng.uniform();
    std::vector<int> labels;
    for (int i = 0; i < batch; ++i) labels.push_back(i % 2);

    auto eval = [&](const ParamSet<double>& p, bool with_grad) {
        for (std::size_t i = 0; i < p.size(); ++i) model.params().value(i) = p.value(i);
        Tape<double> tape(with_grad);
        auto fwd = model.forward(tape, volumes, &labels, true);
        GradRecord<double> rec;
        if (with_grad) {
            rec = tape.backward(fwd.loss);
        } else {
            rec.loss = tape.value(fwd.loss)[0];
        }
        return rec;
    };
    ParamSet<double> probe = model.params();
    GradCheckOptions opt;
    opt.epsilon = epsilon;
    opt.max_coords_per_tensor = max_coords;
    opt.seed = seed_combine(seed, 0xc0);
    auto res = grad_check(eval, probe, opt);
    std::cout << "max relative error: " << res.max_rel_err << " (worst " << res.worst_param << "["
              << res.worst_index << "]: analytic " << res.worst_analytic << ", numeric "
              << res.worst_numeric << ")\n";
    return res.max_rel_err < 1e-4 ? 0 : 1;
}

int cmd_params(const std::string& config, const std::string& mode_text,
               const std::string& shape_text, int r) {
    ModelConfig cfg;
    if (!shape_text.empty()) {
        const ShapeArg shape = parse_shape(shape_text);
        cfg.d = shape.d;
        cfg.h = shape.h;
        cfg.w = shape.w;
    } else if (config == "canonical") {
        cfg.d = 64;
        cfg.h = 256;
        cfg.w = 256;
    } else {
        cfg.d = 16;
        cfg.h = 32;
        cfg.w = 32;
    }
    cfg.r = r;
    cfg.mode = parse_mode(mode_text);
    cfg.backbone = parse_backbone(config);
    std::cout << count_params(cfg) << "\n";
    return 0;
}

int cmd_baseline(const std::string& model_name, const std::string& train_manifest,
                 const std::string& test_manifest, int k, double lr_rate, int lr_epochs,
                 const std::string& metrics_json) {
    auto featurize = [](const std::vector<Sample>& samples) {
        std::vector<std::vector<double>> feats;
        std::vector<int> labels;
        for (const auto& s : samples) {
            feats.push_back(gray_histogram(s.volume));
            labels.push_back(s.label);
        }
        return std::pair{feats, labels};
    };
    auto [train_x, train_y] = featurize(load_samples(train_manifest));
    auto [test_x, test_y] = featurize(load_samples(test_manifest));
    std::vector<double> scores;
    if (model_name == "lr") {
        scores = baseline_lr(train_x, train_y, test_x, lr_rate, lr_epochs);
    } else if (model_name == "knn") {
        scores = baseline_knn(train_x, train_y, test_x, k);
    } else {
        throw ConfigError("unknown baseline model `" + model_name + "` (expected lr or knn)");
    }
    auto rep = evaluate_scores(scores, test_y);
    if (!metrics_json.empty()) {
        std::ofstream os(metrics_json);
        if (!os) throw FormatError("cannot open metrics JSON for writing: " + metrics_json);
        os << metrics_report_to_json(rep).dump(2) << "\n";
    }
    std::cout << model_name << ": acc " << format_percent(rep.accuracy) << "  f1 "
              << format_percent(rep.f1) << "  auc " << format_auc(rep.auc) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-view slice-attention 3D volume classifier"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic blob-phantom dataset");
    std::string synth_out, synth_shape = "16x32x32";
    int per_class = 30;
    std::uint64_t synth_seed = 0;
    double sigma_bg = 0.05;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--per-class", per_class, "samples per class")->capture_default_str();
    synth->add_option("--shape", synth_shape, "volume shape DxHxW")->capture_default_str();
    synth->add_option("--seed", synth_seed, "random seed")->capture_default_str();
    synth->add_option("--sigma-bg", sigma_bg, "background noise sigma")->capture_default_str();

    auto* prep = app.add_subcommand("preprocess", "window, normalize, and resize a manifest");
    std::string prep_manifest, prep_out, prep_target = "64x256x256";
    double win_low = -100.0, win_high = 200.0;
    prep->add_option("--manifest", prep_manifest, "input manifest CSV")->required();
    prep->add_option("--out", prep_out, "output directory")->required();
    prep->add_option("--target", prep_target, "target shape DxHxW")->capture_default_str();
    prep->add_option("--low", win_low, "window lower bound (CT number)")->capture_default_str();
    prep->add_option("--high", win_high, "window upper bound (CT number)")->capture_default_str();

    auto* tr = app.add_subcommand("train", "train a classifier on a manifest");
    TrainFlags train_flags;
    add_train_flags(tr, train_flags, true);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    std::string eval_ckpt, eval_manifest, eval_config = "desk", eval_mode = "full";
    std::string eval_json = "metrics.json", eval_roc = "roc.csv";
    int eval_batch = 10;
    ev->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    ev->add_option("--manifest", eval_manifest, "evaluation manifest CSV")->required();
    ev->add_option("--config", eval_config, "desk|canonical backbone preset")->capture_default_str();
    ev->add_option("--mode", eval_mode, "full|single-view|no-attention")->capture_default_str();
    ev->add_option("--out-metrics", eval_json, "metrics JSON output path")->capture_default_str();
    ev->add_option("--out-roc", eval_roc, "ROC CSV output path")->capture_default_str();
    ev->add_option("--batch", eval_batch, "evaluation batch size")->capture_default_str();

    auto* ab = app.add_subcommand("ablate", "train and compare the four attention variants");
    TrainFlags ablate_flags;
    std::string ab_train_manifest, ab_test_manifest, ab_out = "ablation.csv";
    ab->add_option("--train-manifest", ab_train_manifest, "training manifest CSV")->required();
    ab->add_option("--test-manifest", ab_test_manifest, "held-out manifest CSV")->required();
    ab->add_option("--out", ab_out, "ablation table CSV path")->capture_default_str();
    add_train_flags(ab, ablate_flags, false);

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model");
    std::string gc_config = "desk", gc_mode = "multi-view", gc_shape = "16x32x32";
    std::uint64_t gc_seed = 1;
    double gc_eps = 1e-5;
    int gc_coords = 16, gc_batch = 2;
    gc->add_option("--config", gc_config, "desk|canonical backbone preset")->capture_default_str();
    gc->add_option("--mode", gc_mode, "multi-view|single-view|off")->capture_default_str();
    gc->add_option("--shape", gc_shape, "probe volume shape DxHxW")->capture_default_str();
    gc->add_option("--seed", gc_seed, "random seed")->capture_default_str();
    gc->add_option("--epsilon", gc_eps, "finite-difference step")->capture_default_str();
    gc->add_option("--max-coords", gc_coords, "sampled coordinates per tensor (at most 64)")
        ->capture_default_str();
    gc->add_option("--batch", gc_batch, "probe batch size")->capture_default_str();

    auto* pc = app.add_subcommand("params", "count learnable parameters");
    std::string pc_config = "canonical", pc_mode = "multi-view", pc_shape;
    int pc_r = 8;
    pc->add_option("--config", pc_config, "desk|canonical backbone preset")->capture_default_str();
    pc->add_option("--mode", pc_mode, "multi-view|single-view|off")->capture_default_str();
    pc->add_option("--shape", pc_shape, "volume shape DxHxW (defaults per preset)");
    pc->add_option("--r", pc_r, "attention reduction ratio")->capture_default_str();

    auto* bl = app.add_subcommand("baseline", "classical baselines on grayscale histograms");
    std::string bl_model = "lr", bl_train, bl_test, bl_json;
    int bl_k = 5, bl_epochs = 500;
    double bl_rate = 0.5;
    bl->add_option("--model", bl_model, "lr|knn")->capture_default_str();
    bl->add_option("--train-manifest", bl_train, "training manifest CSV")->required();
    bl->add_option("--test-manifest", bl_test, "test manifest CSV")->required();
    bl->add_option("--k", bl_k, "neighbor count for knn")->capture_default_str();
    bl->add_option("--lr-rate", bl_rate, "learning rate for lr")->capture_default_str();
    bl->add_option("--lr-epochs", bl_epochs, "gradient-descent epochs for lr")->capture_default_str();
    bl->add_option("--out-metrics", bl_json, "metrics JSON output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_out, per_class, synth_shape, synth_seed, sigma_bg);
        if (prep->parsed()) return cmd_preprocess(prep_manifest, prep_out, prep_target, win_low, win_high);
        if (tr->parsed()) return cmd_train(train_flags);
        if (ev->parsed())
            return cmd_eval(eval_ckpt, eval_manifest, eval_config, eval_mode, eval_batch, eval_json,
                            eval_roc);
        if (ab->parsed()) return cmd_ablate(ablate_flags, ab_train_manifest, ab_test_manifest, ab_out);
        if (gc->parsed())
            return cmd_gradcheck(gc_config, gc_mode, gc_shape, gc_seed, gc_eps, gc_coords, gc_batch);
        if (pc->parsed()) return cmd_params(pc_config, pc_mode, pc_shape, pc_r);
        if (bl->parsed())
            return cmd_baseline(bl_model, bl_train, bl_test, bl_k, bl_rate, bl_epochs, bl_json);
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
