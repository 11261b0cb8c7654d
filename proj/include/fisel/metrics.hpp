#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "fisel/dataset.hpp"
#include "fisel/errors.hpp"
#include "fisel/selection.hpp"

namespace fisel {

struct MetricsReport {
    double auc = 0.0;
    double logloss = 0.0;
    std::size_t n_samples = 0;
    double mean_batch_inference_seconds = 0.0;
};

// Fraction of training samples whose binary mask keeps each field pair, plus
// which grain decided the pair.
struct KeepRatioReport {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // lexicographic (i, j)
    std::vector<double> ratio;                               // per pair, in [0,1]
    std::vector<std::string> grain;                          // per pair: field|value|hybrid
    std::vector<std::string> field_names;
};

// Mann-Whitney rank AUC with average ranks on tied scores; equals the
// pairwise statistic P(s+ > s-) + 0.5 * P(s+ = s-).
inline double auc(const std::vector<double>& scores, const std::vector<double>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw ShapeError("auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
    }
    std::size_t n_pos = 0;
    for (double y : labels) n_pos += y > 0.5 ? 1 : 0;
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw DataError("auc undefined: need both classes, got " + std::to_string(n_pos) +
                        " positives out of " + std::to_string(labels.size()));
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        // 1-based ranks i+1 .. j+1 share the average rank
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] > 0.5) pos_rank_sum += avg_rank;
        }
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

// Eq.-style keep ratio over the training split: P[p] = (#samples whose frozen
// mask keeps pair p) / (#training samples). Evaluated in fixed batches so the
// result is independent of sample order.
inline KeepRatioReport keep_ratio(const std::vector<EncodedSample>& train,
                                  const FrozenSelection& frozen,
                                  const std::vector<std::string>& field_names,
                                  std::size_t batch_size = 4096) {
    if (train.empty()) throw DataError("keep_ratio: empty training split");
    const std::size_t n = frozen.n_fields;
    if (field_names.size() != n) {
        throw ShapeError("keep_ratio: " + std::to_string(field_names.size()) +
                         " field names for " + std::to_string(n) + " fields");
    }
    KeepRatioReport report;
    report.field_names = field_names;
    report.pairs = make_pairs(n);
    report.ratio.assign(report.pairs.size(), 0.0);

    for (const EncodedBatch& batch : fixed_batches(train, n, batch_size)) {
        const Matrix mask = hybrid_mask_frozen(batch, frozen);
        for (std::size_t b = 0; b < batch.size; ++b) {
            for (std::size_t p = 0; p < report.pairs.size(); ++p) {
                report.ratio[p] += mask(b, p);
            }
        }
    }
    for (double& r : report.ratio) r /= static_cast<double>(train.size());

    report.grain.reserve(report.pairs.size());
    for (std::size_t p = 0; p < report.pairs.size(); ++p) {
        if (frozen.override_mode != FrozenSelection::Override::none) {
            // constant overrides are not a per-grain decision
            report.grain.push_back("hybrid");
        } else {
            report.grain.push_back(frozen.alpha_star[p] ? "field" : "value");
        }
    }
    return report;
}

namespace detail {

inline std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_ratio(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    return out;
}

}  // namespace detail

// Writes metrics.tsv (deterministic values only), keep_ratio.tsv (n x n grid,
// symmetric, diagonal N/A), and keep_pairs.tsv (upper-triangle list with the
// deciding grain). Wall-clock timing goes to timing.tsv so that re-running an
// identical evaluation re-emits the other files byte for byte.
inline void emit_reports(const MetricsReport& metrics, const KeepRatioReport& keep,
                         const std::string& out_dir) {
    {
        auto out = detail::open_out(out_dir + "/metrics.tsv");
        out << "metric\tvalue\n";
        out << "auc\t" << detail::fmt_g17(metrics.auc) << "\n";
        out << "logloss\t" << detail::fmt_g17(metrics.logloss) << "\n";
        out << "n_samples\t" << metrics.n_samples << "\n";
    }
    {
        auto out = detail::open_out(out_dir + "/timing.tsv");
        out << "metric\tvalue\n";
        out << "mean_batch_inference_seconds\t"
            << detail::fmt_g17(metrics.mean_batch_inference_seconds) << "\n";
    }

    const std::size_t n = keep.field_names.size();
    std::vector<std::vector<std::string>> grid(n, std::vector<std::string>(n, "N/A"));
    for (std::size_t p = 0; p < keep.pairs.size(); ++p) {
        const auto [i, j] = keep.pairs[p];
        grid[i][j] = detail::fmt_ratio(keep.ratio[p]);
        grid[j][i] = grid[i][j];
    }
    {
        auto out = detail::open_out(out_dir + "/keep_ratio.tsv");
        out << "field";
        for (const auto& name : keep.field_names) out << "\t" << name;
        out << "\n";
        for (std::size_t i = 0; i < n; ++i) {
            out << keep.field_names[i];
            for (std::size_t j = 0; j < n; ++j) out << "\t" << grid[i][j];
            out << "\n";
        }
    }
    {
        auto out = detail::open_out(out_dir + "/keep_pairs.tsv");
        out << "field_i\tfield_j\tkeep_ratio\tgrain\n";
        for (std::size_t p = 0; p < keep.pairs.size(); ++p) {
            const auto [i, j] = keep.pairs[p];
            out << keep.field_names[i] << "\t" << keep.field_names[j] << "\t"
                << detail::fmt_ratio(keep.ratio[p]) << "\t" << keep.grain[p] << "\n";
        }
    }
}

// One row per epoch and split, appended over a run.
struct HistoryRow {
    std::size_t epoch = 0;
    std::string split;
    double logloss = 0.0;
    double auc = 0.0;
};

inline void save_history(const std::vector<HistoryRow>& rows, const std::string& path) {
    auto out = detail::open_out(path);
    out << "epoch\tsplit\tlogloss\tauc\n";
    for (const auto& r : rows) {
        out << r.epoch << "\t" << r.split << "\t" << detail::fmt_g17(r.logloss) << "\t"
            << detail::fmt_g17(r.auc) << "\n";
    }
}

}  // namespace fisel
