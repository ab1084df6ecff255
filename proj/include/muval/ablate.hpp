#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "muval/backbone.hpp"
#include "muval/metrics.hpp"
#include "muval/model.hpp"
#include "muval/train.hpp"

namespace muval {

struct AblationRow {
    std::string model;
    double accuracy = 0.0;
    double f1 = 0.0;
    double auc = 0.0;
    std::int64_t params = 0;
};

// Trains and evaluates the four attention variants on one dataset:
// no-attention, no-attention with an alternative initialization stream,
// single-view, and full multi-view. Rows report held-out metrics plus the
// learnable-parameter count of each configuration.
inline std::vector<AblationRow> run_ablation(const std::vector<Sample>& train_samples,
                                             const std::vector<Sample>& test_samples,
                                             const TrainConfig& base_cfg,
                                             ModelConfig model_template) {
    struct Variant {
        const char* name;
        AttentionMode mode;
        bool alt_init;
    };
    const Variant variants[] = {
        {"no-attention", AttentionMode::Off, false},
        {"no-attention-alt-init", AttentionMode::Off, true},
        {"single-view", AttentionMode::SingleView, false},
        {"full", AttentionMode::MultiView, false},
    };
    std::vector<AblationRow> rows;
    for (const Variant& v : variants) {
        ModelConfig model_cfg = model_template;
        model_cfg.mode = v.mode;
        TrainConfig cfg = base_cfg;
        if (v.alt_init) cfg.seed = seed_combine(base_cfg.seed, 0xa17);
        auto result = train<float>(train_samples, cfg, model_cfg);
        MuvalModel<float> model(model_cfg, 0);
        for (std::size_t i = 0; i < model.params().size(); ++i)
            model.params().value(i) = result.best_params.value(i);
        for (std::size_t i = 0; i < model.buffers().size(); ++i)
            model.buffers().value(i) = result.best_buffers.value(i);
        auto scores = score_samples(model, test_samples, cfg.batch_size);
        std::vector<int> truth;
        for (const auto& s : test_samples) truth.push_back(s.label);
        auto rep = evaluate_scores(scores, truth);
        rows.push_back({v.name, rep.accuracy, rep.f1, rep.auc, count_params(model_cfg)});
    }
    return rows;
}

// Table-2-shaped CSV: header `model,acc,f1,auc,params`, accuracy and F1 as
// two-decimal percentages, AUC with four decimals.
inline void save_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open ablation CSV for writing: " + path);
    os << "model,acc,f1,auc,params\n";
    for (const auto& r : rows)
        os << r.model << "," << format_percent(r.accuracy) << "," << format_percent(r.f1) << ","
           << format_auc(r.auc) << "," << r.params << "\n";
    if (!os) throw FormatError("ablation CSV write failed: " + path);
}

}  // namespace muval
