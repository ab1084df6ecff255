#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "muval/errors.hpp"
#include "muval/volume.hpp"

namespace muval {

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct MetricsReport {
    double accuracy = 0.0;
    double f1 = 0.0;
    std::vector<RocPoint> roc;
    double auc = 0.0;
    long tp = 0, fp = 0, tn = 0, fn = 0;  // at threshold 0.5 on the R0 probability
};

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.empty() || pred.size() != truth.size())
        throw ContractError("accuracy requires equal non-empty prediction/truth lists");
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

// F1 with R0 (label 1) as the positive class; 0 when the denominator is 0.
inline double f1_score(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.empty() || pred.size() != truth.size())
        throw ContractError("f1 requires equal non-empty prediction/truth lists");
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        tp += pred[i] == 1 && truth[i] == 1;
        fp += pred[i] == 1 && truth[i] == 0;
        fn += pred[i] == 0 && truth[i] == 1;
    }
    const std::int64_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

// Rank-based AUC: (concordant pairs + half the tied pairs) / (P * N).
inline double auc_pair_count(const std::vector<double>& scores, const std::vector<int>& truth) {
    if (scores.size() != truth.size() || scores.empty())
        throw ContractError("auc requires equal non-empty score/truth lists");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::int64_t pos = 0, neg = 0;
    for (int t : truth) (t == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0) throw ContractError("auc requires both classes present");
    // Walk tie groups in ascending score order; positives in a group are
    // concordant with all negatives strictly below and tie with those inside.
    double twice_u = 0.0;  // 2 * (concordant + 0.5 * ties), kept integral
    std::int64_t neg_below = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        std::int64_t gp = 0, gn = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (truth[order[j]] == 1 ? gp : gn)++;
            ++j;
        }
        twice_u += 2.0 * static_cast<double>(gp) * static_cast<double>(neg_below) +
                   static_cast<double>(gp) * static_cast<double>(gn);
        neg_below += gn;
        i = j;
    }
    return twice_u / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

// ROC by threshold sweep over distinct scores (with sentinels) plus the
// trapezoidal AUC. The trapezoidal value and the pair-count value agree to
// 1e-12; both are computed and cross-checked here.
inline std::pair<std::vector<RocPoint>, double> roc_auc(const std::vector<double>& scores,
                                                        const std::vector<int>& truth) {
    if (scores.size() != truth.size() || scores.empty())
        throw ContractError("roc_auc requires equal non-empty score/truth lists");
    std::int64_t pos = 0, neg = 0;
    for (int t : truth) (t == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0) throw ContractError("roc_auc requires both classes present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<RocPoint> roc;
    roc.push_back({0.0, 0.0});
    double area2 = 0.0;  // twice the area in count units
    std::int64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        std::int64_t dtp = 0, dfp = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (truth[order[j]] == 1 ? dtp : dfp)++;
            ++j;
        }
        area2 += static_cast<double>(dfp) * static_cast<double>(2 * tp + dtp);
        tp += dtp;
        fp += dfp;
        roc.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                       static_cast<double>(tp) / static_cast<double>(pos)});
        i = j;
    }
    const double auc = area2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    const double pair = auc_pair_count(scores, truth);
    if (std::abs(auc - pair) > 1e-12)
        throw NumericError("trapezoidal and pair-count AUC disagree");
    return {std::move(roc), auc};
}

// Hard predictions, confusion counts, ROC, and AUC for a scored sample set.
// Threshold 0.5 on the R0 probability; scores >= 0.5 predict R0.
inline MetricsReport evaluate_scores(const std::vector<double>& scores,
                                     const std::vector<int>& truth) {
    MetricsReport rep;
    std::vector<int> pred(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= 0.5 ? 1 : 0;
    rep.accuracy = accuracy(pred, truth);
    rep.f1 = f1_score(pred, truth);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        rep.tp += pred[i] == 1 && truth[i] == 1;
        rep.fp += pred[i] == 1 && truth[i] == 0;
        rep.tn += pred[i] == 0 && truth[i] == 0;
        rep.fn += pred[i] == 0 && truth[i] == 1;
    }
    auto [roc, auc] = roc_auc(scores, truth);
    rep.roc = std::move(roc);
    rep.auc = auc;
    return rep;
}

inline nlohmann::json metrics_report_to_json(const MetricsReport& rep) {
    nlohmann::json j;
    j["accuracy"] = rep.accuracy;
    j["f1"] = rep.f1;
    j["auc"] = rep.auc;
    j["counts"] = {{"tp", rep.tp}, {"fp", rep.fp}, {"tn", rep.tn}, {"fn", rep.fn}};
    nlohmann::json roc = nlohmann::json::array();
    for (const auto& p : rep.roc) roc.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}});
    j["roc"] = roc;
    return j;
}

// CSV export with header `fpr,tpr`, one ROC point per row.
inline void save_roc_csv(const std::vector<RocPoint>& roc, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open ROC CSV for writing: " + path);
    os << "fpr,tpr\n";
    os.precision(17);
    for (const auto& p : roc) os << p.fpr << "," << p.tpr << "\n";
    if (!os) throw FormatError("ROC CSV write failed: " + path);
}

// Percent with two decimals, e.g. 0.869565 -> "86.96".
inline std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
    return buf;
}

// Four-decimal AUC display, e.g. 0.841666 -> "0.8417".
inline std::string format_auc(double auc) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", auc);
    return buf;
}

// 256 equal-width bins over [0,1], right-closed at 1.0, normalized to sum 1.
inline constexpr int kHistogramBins = 256;

inline std::vector<double> gray_histogram(const Volume& v) {
    std::vector<double> bins(kHistogramBins, 0.0);
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        const double x = static_cast<double>(v.flat(i));
        if (!(x >= 0.0 && x <= 1.0))
            throw ContractError("gray_histogram requires voxels in [0,1]");
        const int b = std::min(kHistogramBins - 1, static_cast<int>(x * kHistogramBins));
        bins[static_cast<std::size_t>(b)] += 1.0;
    }
    const double n = static_cast<double>(v.numel());
    for (auto& b : bins) b /= n;
    return bins;
}

// Logistic regression on feature vectors, fit by full-batch gradient descent
// on the cross-entropy. Deterministic (zero initialization).
inline std::vector<double> baseline_lr(const std::vector<std::vector<double>>& train_x,
                                       const std::vector<int>& train_y,
                                       const std::vector<std::vector<double>>& test_x,
                                       double learn_rate = 0.5, int epochs = 500) {
    if (train_x.empty()) throw ContractError("baseline_lr requires a non-empty training set");
    if (train_x.size() != train_y.size()) throw ContractError("feature/label count mismatch");
    const std::size_t dim = train_x[0].size();
    for (const auto& x : train_x)
        if (x.size() != dim) throw DimensionError("inconsistent training feature dimensions");
    for (const auto& x : test_x)
        if (x.size() != dim) throw DimensionError("inconsistent test feature dimensions");
    std::vector<double> wvec(dim, 0.0);
    double bias = 0.0;
    const double n = static_cast<double>(train_x.size());
    std::vector<double> gw(dim);
    auto sig = [](double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); };
    for (int e = 0; e < epochs; ++e) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < train_x.size(); ++i) {
            double z = bias;
            for (std::size_t j = 0; j < dim; ++j) z += wvec[j] * train_x[i][j];
            const double err = sig(z) - static_cast<double>(train_y[i]);
            for (std::size_t j = 0; j < dim; ++j) gw[j] += err * train_x[i][j];
            gb += err;
        }
        for (std::size_t j = 0; j < dim; ++j) wvec[j] -= learn_rate * gw[j] / n;
        bias -= learn_rate * gb / n;
    }
    std::vector<double> scores;
    scores.reserve(test_x.size());
    for (const auto& x : test_x) {
        double z = bias;
        for (std::size_t j = 0; j < dim; ++j) z += wvec[j] * x[j];
        scores.push_back(sig(z));
    }
    return scores;
}

// k-nearest-neighbor score: fraction of the k nearest training points (by
// Euclidean distance, ties broken by training-set order) labeled 1.
inline std::vector<double> baseline_knn(const std::vector<std::vector<double>>& train_x,
                                        const std::vector<int>& train_y,
                                        const std::vector<std::vector<double>>& test_x, int k) {
    if (train_x.empty()) throw ContractError("baseline_knn requires a non-empty training set");
    if (train_x.size() != train_y.size()) throw ContractError("feature/label count mismatch");
    if (k < 1 || static_cast<std::size_t>(k) > train_x.size())
        throw ContractError("k must be in [1, training size]");
    std::vector<double> scores;
    scores.reserve(test_x.size());
    std::vector<std::pair<double, std::size_t>> dist(train_x.size());
    for (const auto& x : test_x) {
        if (x.size() != train_x[0].size()) throw DimensionError("inconsistent feature dimensions");
        for (std::size_t i = 0; i < train_x.size(); ++i) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double d = x[j] - train_x[i][j];
                d2 += d * d;
            }
            dist[i] = {d2, i};
        }
        std::stable_sort(dist.begin(), dist.end());
        int hits = 0;
        for (int i = 0; i < k; ++i) hits += train_y[dist[static_cast<std::size_t>(i)].second];
        scores.push_back(static_cast<double>(hits) / static_cast<double>(k));
    }
    return scores;
}

}  // namespace muval
