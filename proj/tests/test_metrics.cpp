#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "fisel/metrics.hpp"
#include "fisel/model.hpp"

using namespace fisel;

namespace {

// O(N^2) pairwise oracle: P(s+ > s-) + 0.5 P(s+ = s-).
double brute_force_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
    double num = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] <= 0.5) continue;
        ++n_pos;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] > 0.5) continue;
            if (scores[i] > scores[j]) num += 1.0;
            else if (scores[i] == scores[j]) num += 0.5;
        }
    }
    for (double y : labels) n_neg += y <= 0.5 ? 1 : 0;
    return num / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(Auc, SpecExamples) {
    EXPECT_DOUBLE_EQ(auc({0.9, 0.1}, {1.0, 0.0}), 1.0);
    EXPECT_DOUBLE_EQ(auc({0.4, 0.4, 0.4, 0.4}, {1.0, 0.0, 1.0, 0.0}), 0.5);
    EXPECT_DOUBLE_EQ(auc({0.8, 0.3, 0.5, 0.1}, {1.0, 1.0, 0.0, 0.0}), 0.75);
}

TEST(Auc, SingleClassIsUndefined) {
    EXPECT_THROW(auc({0.1, 0.9}, {1.0, 1.0}), DataError);
    EXPECT_THROW(auc({0.1, 0.9}, {0.0, 0.0}), DataError);
    EXPECT_THROW(auc({0.1}, {1.0, 0.0}), ShapeError);
}

TEST(Auc, EqualsBruteForceIncludingTies) {
    std::mt19937_64 rng(33);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 2 + rng() % 200;
        std::vector<double> scores, labels;
        bool has_pos = false, has_neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            // quantized scores force plenty of ties
            scores.push_back(static_cast<double>(rng() % 8) / 8.0);
            const double y = static_cast<double>(rng() % 2);
            labels.push_back(y);
            (y > 0.5 ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) {
            labels[0] = has_pos ? 0.0 : 1.0;
        }
        EXPECT_EQ(auc(scores, labels), brute_force_auc(scores, labels)) << "trial " << trial;
    }
}

TEST(Auc, MovesOppositeToLoglossAtExtremes) {
    const std::vector<double> labels{1.0, 0.0, 1.0, 0.0, 1.0, 0.0};
    std::vector<double> perfect{0.9, 0.1, 0.8, 0.2, 0.95, 0.05};
    std::vector<double> inverted(perfect.size());
    for (std::size_t i = 0; i < perfect.size(); ++i) inverted[i] = 1.0 - perfect[i];

    Matrix p_good(6, 1), p_bad(6, 1);
    for (std::size_t i = 0; i < 6; ++i) {
        p_good[i] = perfect[i];
        p_bad[i] = inverted[i];
    }
    EXPECT_DOUBLE_EQ(auc(perfect, labels), 1.0);
    EXPECT_DOUBLE_EQ(auc(inverted, labels), 0.0);
    EXPECT_LT(logloss(p_good, labels), logloss(p_bad, labels));
}

TEST(KeepRatio, CountsSamplesKeepingEachPair) {
    std::mt19937_64 rng(7);
    // two fields sized {2,1}; identity value net with scalar factor rows
    // 1, -1, 1 so (id0, id2) keeps and (id1, id2) drops
    std::vector<std::size_t> no_hidden;
    SelectionParams sel({2, 1}, 1, 1, 2, rng, &no_hidden, false);
    sel.value_net().net().weights()[0].value(0, 0) = 1.0;
    sel.value_net().embedding().value(0, 0) = 1.0;
    sel.value_net().embedding().value(1, 0) = -1.0;
    sel.value_net().embedding().value(2, 0) = 1.0;
    FrozenSelection frozen = freeze_selection(sel, Grain::value);

    std::vector<EncodedSample> train(4);
    train[0].value_ids = {0, 2};
    train[1].value_ids = {0, 2};
    train[2].value_ids = {0, 2};
    train[3].value_ids = {1, 2};

    KeepRatioReport report = keep_ratio(train, frozen, {"a", "b"}, 2);
    ASSERT_EQ(report.ratio.size(), 1u);
    EXPECT_DOUBLE_EQ(report.ratio[0], 0.75);
    EXPECT_EQ(report.grain[0], "value");

    // invariant to sample order
    std::reverse(train.begin(), train.end());
    EXPECT_DOUBLE_EQ(keep_ratio(train, frozen, {"a", "b"}, 3).ratio[0], 0.75);
}

TEST(KeepRatio, FieldGrainYieldsOnlyZeroOrOne) {
    std::mt19937_64 rng(8);
    SelectionParams sel({3, 4, 2}, 4, 5, 2, rng);
    FrozenSelection frozen = freeze_selection(sel, Grain::field);

    std::vector<EncodedSample> train;
    for (int s = 0; s < 50; ++s) {
        EncodedSample e;
        e.value_ids = {static_cast<std::uint32_t>(rng() % 3),
                       static_cast<std::uint32_t>(3 + rng() % 4),
                       static_cast<std::uint32_t>(7 + rng() % 2)};
        train.push_back(e);
    }
    KeepRatioReport report = keep_ratio(train, frozen, {"a", "b", "c"});
    for (std::size_t p = 0; p < report.ratio.size(); ++p) {
        EXPECT_TRUE(report.ratio[p] == 0.0 || report.ratio[p] == 1.0)
            << "pair " << p << " ratio " << report.ratio[p];
        EXPECT_EQ(report.grain[p], "field");
    }
}

TEST(KeepRatio, KeepAllOverrideIsAllOnes) {
    std::vector<EncodedSample> train(5);
    for (auto& s : train) s.value_ids = {0, 1, 2};
    KeepRatioReport report =
        keep_ratio(train, FrozenSelection::keep_all(3), {"a", "b", "c"});
    for (double r : report.ratio) EXPECT_DOUBLE_EQ(r, 1.0);
}

TEST(EmitReports, GridShapeSymmetryAndDeterminism) {
    MetricsReport metrics;
    metrics.auc = 0.875;
    metrics.logloss = 0.3466;
    metrics.n_samples = 128;
    metrics.mean_batch_inference_seconds = 0.0123;

    KeepRatioReport keep;
    keep.field_names = {"f0", "f1", "f2"};
    keep.pairs = make_pairs(3);
    keep.ratio = {1.0, 0.25, 0.5};
    keep.grain = {"field", "value", "value"};

    const auto dir = std::filesystem::temp_directory_path() / "fisel_reports";
    std::filesystem::create_directories(dir);
    emit_reports(metrics, keep, dir.string());

    const std::string grid = slurp(dir / "keep_ratio.tsv");
    std::vector<std::string> lines;
    std::istringstream in(grid);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[0], "field\tf0\tf1\tf2");
    EXPECT_EQ(lines[1], "f0\tN/A\t1.000000\t0.250000");
    EXPECT_EQ(lines[2], "f1\t1.000000\tN/A\t0.500000");
    EXPECT_EQ(lines[3], "f2\t0.250000\t0.500000\tN/A");

    const std::string pairs = slurp(dir / "keep_pairs.tsv");
    EXPECT_EQ(pairs,
              "field_i\tfield_j\tkeep_ratio\tgrain\n"
              "f0\tf1\t1.000000\tfield\n"
              "f0\tf2\t0.250000\tvalue\n"
              "f1\tf2\t0.500000\tvalue\n");

    const std::string metrics_tsv = slurp(dir / "metrics.tsv");
    EXPECT_NE(metrics_tsv.find("auc\t0.875"), std::string::npos);
    EXPECT_NE(metrics_tsv.find("n_samples\t128"), std::string::npos);
    EXPECT_EQ(metrics_tsv.find("inference"), std::string::npos);
    EXPECT_NE(slurp(dir / "timing.tsv").find("mean_batch_inference_seconds"),
              std::string::npos);

    // byte-identical on re-emission
    const std::string before_metrics = metrics_tsv;
    const std::string before_grid = grid;
    emit_reports(metrics, keep, dir.string());
    EXPECT_EQ(slurp(dir / "metrics.tsv"), before_metrics);
    EXPECT_EQ(slurp(dir / "keep_ratio.tsv"), before_grid);

    EXPECT_THROW(emit_reports(metrics, keep, (dir / "no_such_subdir").string()), DataError);
    std::filesystem::remove_all(dir);
}

TEST(History, TabSeparatedRows) {
    std::vector<HistoryRow> rows{{1, "train", 0.693, 0.5}, {1, "validation", 0.69, 0.52}};
    const auto path = std::filesystem::temp_directory_path() / "fisel_history.tsv";
    save_history(rows, path.string());
    const std::string content = slurp(path);
    EXPECT_NE(content.find("epoch\tsplit\tlogloss\tauc\n"), std::string::npos);
    EXPECT_NE(content.find("1\ttrain\t"), std::string::npos);
    EXPECT_NE(content.find("1\tvalidation\t"), std::string::npos);
    std::filesystem::remove(path);
}
