#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "fisel/commands.hpp"

using namespace fisel;

// Release gates for the library. Every test covers one externally promised
// property end to end and prints a single verdict line; the time bound is part
// of each gate.

namespace {

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(Clock::now() - start_).count();
    }

private:
    using Clock = std::chrono::steady_clock;
    Clock::time_point start_ = Clock::now();
};

void verdict(const char* id, const char* label, bool ok, double seconds) {
    std::printf("[ACCEPTANCE] %s %s: %s (%.1f s)\n", id, label, ok ? "PASS" : "FAIL", seconds);
    std::fflush(stdout);
}

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::filesystem::path fresh_dir(const char* name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

EncodedBatch make_batch(const std::vector<std::size_t>& field_sizes, std::size_t count,
                        std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> offsets(field_sizes.size(), 0);
    for (std::size_t f = 1; f < field_sizes.size(); ++f) {
        offsets[f] = offsets[f - 1] + field_sizes[f - 1];
    }
    std::vector<EncodedSample> samples(count);
    for (auto& s : samples) {
        for (std::size_t f = 0; f < field_sizes.size(); ++f) {
            s.value_ids.push_back(
                static_cast<std::uint32_t>(offsets[f] + rng() % field_sizes[f]));
        }
        s.label = static_cast<std::uint8_t>(rng() % 2);
    }
    return fixed_batches(samples, field_sizes.size(), count).front();
}

// Floor of 1e-6: entries below it are compared absolutely, since central
// differences on a ~O(1) quantity cannot resolve gradients much below 1e-11.
double rel_err(double got, double want) {
    const double denom = std::max({std::fabs(got), std::fabs(want), 1e-6});
    return std::fabs(got - want) / denom;
}

// Central finite differences through every parameter of `slot` against an
// arbitrary scalar re-evaluation, compared to the already-accumulated grads.
void expect_slot_matches_fd(GradSlot* slot, const std::function<double()>& value,
                            const char* what) {
    constexpr double kEps = 1e-5;
    for (std::size_t i = 0; i < slot->value.size(); ++i) {
        const double saved = slot->value[i];
        slot->value[i] = saved + kEps;
        const double up = value();
        slot->value[i] = saved - kEps;
        const double down = value();
        slot->value[i] = saved;
        const double fd = (up - down) / (2.0 * kEps);
        EXPECT_LT(rel_err(slot->grad[i], fd), 1e-4)
            << what << " entry " << i << ": grad " << slot->grad[i] << " vs fd " << fd;
    }
}

}  // namespace

TEST(Acceptance, StepGateContract) {
    const Stopwatch watch;

    // Forward: unit step, open only on strictly positive logits.
    EXPECT_EQ(ste(0.0), 0.0);
    EXPECT_EQ(ste(-0.0), 0.0);
    EXPECT_EQ(ste(5e-324), 1.0);  // smallest positive subnormal
    EXPECT_EQ(ste(-5e-324), 0.0);
    EXPECT_EQ(ste(3.7), 1.0);
    EXPECT_EQ(ste(-2.0), 0.0);
    EXPECT_EQ(ste(std::numeric_limits<double>::infinity()), 1.0);
    EXPECT_EQ(ste(-std::numeric_limits<double>::infinity()), 0.0);
    EXPECT_EQ(gate_binary(1e-300), 1.0);

    // Backward: upstream passes through bitwise unchanged, signed zero included.
    for (const double g : {0.0, -0.0, 1.5, -2.25e-17, 1e308, -1e-308, 0.1}) {
        EXPECT_EQ(bits(ste_vjp(g)), bits(g));
    }
    Matrix upstream(2, 3);
    const double vals[] = {4.25, -0.0, 1e-17, -3.5e200, 0.0, -7.125};
    for (std::size_t i = 0; i < upstream.size(); ++i) upstream[i] = vals[i];
    const Matrix back = ste_vjp(upstream);
    for (std::size_t i = 0; i < upstream.size(); ++i) {
        EXPECT_EQ(bits(back[i]), bits(upstream[i]));
    }

    const double elapsed = watch.seconds();
    EXPECT_LT(elapsed, 1.0);
    verdict("A1", "step gate forward and pass-through backward", !HasFailure(), elapsed);
}

TEST(Acceptance, PairGateDenseReconstruction) {
    const Stopwatch watch;
    const std::size_t m = 20;
    std::mt19937_64 rng(42);
    const std::vector<std::size_t> singleton_fields(m, 1);  // every value its own field
    ValueSelectionNet net(singleton_fields, 4, 6, rng);

    const std::vector<double> dense = dense_reconstruct_oracle(net, 2);
    ASSERT_EQ(dense.size(), m * m);
    for (std::uint32_t i = 0; i < m; ++i) {
        for (std::uint32_t j = 0; j < m; ++j) {
            if (i == j) continue;
            EXPECT_NEAR(value_gate_logit(i, j, net), dense[i * m + j], 1e-9);
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            EXPECT_NEAR(dense[i * m + j], dense[j * m + i], 1e-12);
        }
    }

    const double elapsed = watch.seconds();
    EXPECT_LT(elapsed, 5.0);
    verdict("A2", "pair gate matches dense reconstruction", !HasFailure(), elapsed);
}

TEST(Acceptance, ThirdOrderDenseReconstruction) {
    const Stopwatch watch;
    const std::size_t m = 8;
    std::mt19937_64 rng(43);
    ValueSelectionNet net({3, 3, 2}, 5, 4, rng);

    const std::vector<double> dense = dense_reconstruct_oracle(net, 3);
    ASSERT_EQ(dense.size(), m * m * m);

    // Raw contraction agrees on every index triple, repeated indices included.
    for (std::uint32_t i = 0; i < m; ++i) {
        for (std::uint32_t j = 0; j < m; ++j) {
            for (std::uint32_t k = 0; k < m; ++k) {
                EXPECT_NEAR(net.logit({i, j, k}), dense[(i * m + j) * m + k], 1e-9);
            }
        }
    }

    // The guarded entry point agrees too and is permutation-invariant.
    for (std::uint32_t a = 0; a < 3; ++a) {
        for (std::uint32_t b = 3; b < 6; ++b) {
            for (std::uint32_t c = 6; c < 8; ++c) {
                const double reference = general_order_logit({a, b, c}, net);
                EXPECT_NEAR(reference, dense[(a * m + b) * m + c], 1e-9);
                std::array<std::uint32_t, 3> ids{a, b, c};
                std::sort(ids.begin(), ids.end());
                do {
                    EXPECT_NEAR(general_order_logit({ids[0], ids[1], ids[2]}, net),
                                reference, 1e-12);
                } while (std::next_permutation(ids.begin(), ids.end()));
            }
        }
    }

    const double elapsed = watch.seconds();
    EXPECT_LT(elapsed, 10.0);
    verdict("A3", "third-order gate matches dense contraction", !HasFailure(), elapsed);
}

TEST(Acceptance, GradientFidelity) {
    const Stopwatch watch;
    const std::vector<std::size_t> fields{3, 3, 3};
    // Seeds pick a probe point where no hidden unit sits within the finite-
    // difference step of its kink, so the central differences stay valid.
    std::mt19937_64 rng(8);
    Model model(9, 3, 4, {8}, InteractionOp::inner, 2, rng);
    const EncodedBatch batch = make_batch(fields, 16, 77);

    // Every model parameter against central differences, mask held constant.
    Matrix mask(batch.size, model.n_pairs());
    for (std::size_t b = 0; b < batch.size; ++b) {
        for (std::size_t p = 0; p < model.n_pairs(); ++p) {
            mask(b, p) = (b + p) % 2 == 0 ? 1.0 : 0.0;
        }
    }
    const auto loss_now = [&]() {
        return logloss(model.forward(batch, mask), batch.labels);
    };
    Model::Trace trace;
    const Matrix probs = model.forward(batch, mask, nullptr, &trace);
    model.zero_grad();
    model.backward(trace, logloss_dlogit(probs, batch.labels));
    for (GradSlot* slot : model.slots()) {
        expect_slot_matches_fd(slot, loss_now, "model parameter");
    }

    // Blend derivative in closed form: d mask / d alpha = sigmoid' * (bit gap).
    SelectionParams sel(fields, 4, 5, 2, rng);
    const double alpha_values[] = {0.3, -0.7, 0.1};
    for (std::size_t p = 0; p < sel.n_pairs(); ++p) sel.alpha().value[p] = alpha_values[p];
    const SearchMask sm = hybrid_mask_search(batch, sel, Grain::hybrid);
    for (std::size_t p = 0; p < sel.n_pairs(); ++p) {
        for (const std::size_t b : {std::size_t{0}, std::size_t{7}, std::size_t{15}}) {
            Matrix d_mask(batch.size, sel.n_pairs());
            d_mask(b, p) = 1.0;
            sel.zero_grad();
            hybrid_mask_search_backward(sm, d_mask, nullptr, sel);
            const double s = sigmoid(sel.alpha().value[p]);
            const double expected = s * (1.0 - s) * (sm.field_bit[p] - sm.value_bit(b, p));
            EXPECT_DOUBLE_EQ(sel.alpha().grad[p], expected);
        }
    }

    // Gate-logit gradients for the factor embeddings, factor net, and core,
    // probed where the logit is comfortably away from the binarization edge.
    // The binarization backward is the identity, so the logit is the quantity
    // whose parameter gradients are defined. Fresh-init logits cluster near
    // zero, so widen the diagonal cores to push the probe points past the
    // magnitude guard; the gradient relation is unaffected.
    ValueSelectionNet& vnet = sel.value_net();
    FieldSelectionNet& fnet = sel.field_net();
    for (std::size_t r = 0; r < vnet.sigma().value.size(); ++r) {
        vnet.sigma().value[r] *= 10.0;
    }
    for (std::size_t r = 0; r < fnet.sigma().value.size(); ++r) {
        fnet.sigma().value[r] *= 10.0;
    }
    std::vector<std::uint32_t> value_ids{0, 3};
    double strongest = 0.0;
    for (std::uint32_t a = 0; a < 9; ++a) {
        for (std::uint32_t c = a + 1; c < 9; ++c) {
            if (vnet.field_of(a) == vnet.field_of(c)) continue;
            const double l = vnet.logit({a, c});
            if (std::fabs(l) > std::fabs(strongest)) {
                strongest = l;
                value_ids = {a, c};
            }
        }
    }
    ASSERT_GT(std::fabs(strongest), 1e-3);
    for (auto* s : vnet.slots()) s->zero_grad();
    vnet.logit_backward(value_ids, 1.0);
    const auto value_logit_now = [&]() { return vnet.logit(value_ids); };
    for (GradSlot* slot : vnet.slots()) {
        expect_slot_matches_fd(slot, value_logit_now, "value gate parameter");
    }

    std::vector<std::uint32_t> field_ids{0, 1};
    strongest = 0.0;
    for (std::uint32_t i = 0; i < 3; ++i) {
        for (std::uint32_t j = i + 1; j < 3; ++j) {
            const double l = field_gate_logit(i, j, fnet);
            if (std::fabs(l) > std::fabs(strongest)) {
                strongest = l;
                field_ids = {i, j};
            }
        }
    }
    ASSERT_GT(std::fabs(strongest), 1e-3);
    for (auto* s : fnet.slots()) s->zero_grad();
    fnet.logit_backward(field_ids, 1.0);
    const auto field_logit_now = [&]() { return fnet.logit(field_ids); };
    for (GradSlot* slot : fnet.slots()) {
        expect_slot_matches_fd(slot, field_logit_now, "field gate parameter");
    }

    const double elapsed = watch.seconds();
    EXPECT_LT(elapsed, 30.0);
    verdict("A4", "gradients match finite differences and closed forms", !HasFailure(),
            elapsed);
}

TEST(Acceptance, GrainReductions) {
    const Stopwatch watch;
    const std::vector<std::size_t> fields{4, 3, 5};
    std::mt19937_64 rng(11);
    SelectionParams sel(fields, 4, 6, 2, rng);
    const EncodedBatch batch = make_batch(fields, 32, 5);

    // (a) Saturated blend logits reproduce the pure field grain numerically.
    sel.alpha().value.fill(40.0);
    const SearchMask hybrid = hybrid_mask_search(batch, sel, Grain::hybrid);
    const SearchMask field = hybrid_mask_search(batch, sel, Grain::field);
    for (std::size_t b = 0; b < batch.size; ++b) {
        for (std::size_t p = 0; p < sel.n_pairs(); ++p) {
            EXPECT_NEAR(hybrid.mask(b, p), field.mask(b, p), 1e-15);
        }
    }

    // (b) Frozen with every blend bit set to the field side: exact equality.
    sel.alpha().value.fill(1.0);
    const FrozenSelection fr_hybrid = freeze_selection(sel, Grain::hybrid);
    for (const std::uint8_t bit : fr_hybrid.alpha_star) EXPECT_EQ(bit, 1);
    const FrozenSelection fr_field = freeze_selection(sel, Grain::field);
    const Matrix frozen_hybrid = hybrid_mask_frozen(batch, fr_hybrid);
    const Matrix frozen_field = hybrid_mask_frozen(batch, fr_field);
    for (std::size_t i = 0; i < frozen_hybrid.size(); ++i) {
        EXPECT_EQ(frozen_hybrid[i], frozen_field[i]);
        EXPECT_TRUE(frozen_field[i] == 0.0 || frozen_field[i] == 1.0);
    }
    for (std::size_t p = 0; p < sel.n_pairs(); ++p) {
        const auto [i, j] = sel.pairs()[p];
        const double expected = ste(field_gate_logit(i, j, fr_field.field));
        for (std::size_t b = 0; b < batch.size; ++b) {
            EXPECT_EQ(frozen_field(b, p), expected);
        }
    }

    // (c) Field-grain keep ratios are all-or-nothing over any sample set.
    std::vector<EncodedSample> samples(200);
    std::mt19937_64 sample_rng(17);
    for (auto& s : samples) {
        s.value_ids = {static_cast<std::uint32_t>(sample_rng() % 4),
                       static_cast<std::uint32_t>(4 + sample_rng() % 3),
                       static_cast<std::uint32_t>(7 + sample_rng() % 5)};
        s.label = static_cast<std::uint8_t>(sample_rng() % 2);
    }
    const KeepRatioReport report = keep_ratio(samples, fr_field, {"a", "b", "c"});
    for (const double r : report.ratio) {
        EXPECT_TRUE(r == 0.0 || r == 1.0) << "keep ratio " << r;
    }

    const double elapsed = watch.seconds();
    EXPECT_LT(elapsed, 10.0);
    verdict("A5", "grain reductions are exact", !HasFailure(), elapsed);
}

TEST(Acceptance, BaselineEquivalence) {
    const Stopwatch watch;
    const auto dir = fresh_dir("fisel_accept_baseline");
    std::ostringstream sink;

    Config cfg;
    cfg.data.path = (dir / "raw.tsv").string();
    cfg.data.schema = (dir / "schema.tsv").string();
    cfg.output.dir = (dir / "out").string();
    cfg.train.batch_size = 512;
    cfg.train.max_epochs = 3;
    cfg.train.patience = 3;
    cfg.train.seed = 5;

    cmd_synth(cfg, sink);
    cmd_preprocess(cfg, sink);
    cmd_baseline(cfg, sink);
    cmd_retrain(cfg, std::nullopt, MaskSource::keep_all, sink);

    const OutputPaths paths = output_paths(cfg);
    EXPECT_EQ(slurp(paths.baseline_history), slurp(paths.retrain_history));

    const Vocabulary vocab = Vocabulary::load(paths.vocabulary);
    const DatasetSplits splits = detail::load_splits(paths, vocab.n());
    const auto eval_checkpoint = [&](const std::string& ckpt_path) {
        const Checkpoint ck = Checkpoint::load(ckpt_path);
        const detail::Meta meta = detail::get_meta(ck);
        Model model = detail::model_from_meta(meta);
        get_model(ck, model);
        const FrozenSelection frozen =
            detail::frozen_from_checkpoint(ck, meta, vocab.field_sizes());
        return evaluate(splits.test, model, frozen, cfg.train.batch_size);
    };
    const MetricsReport base = eval_checkpoint(paths.baseline_ckpt);
    const MetricsReport keep = eval_checkpoint(paths.retrain_ckpt);
    EXPECT_EQ(bits(base.logloss), bits(keep.logloss));
    EXPECT_EQ(bits(base.auc), bits(keep.auc));

    const double elapsed = watch.seconds();
    EXPECT_LT(elapsed, 120.0);
    verdict("A6", "baseline equals retraining with an all-ones mask", !HasFailure(),
            elapsed);
}

namespace {

// One full generate -> split -> search -> freeze -> retrain pass, plus a
// mask-all-zero reference model trained under the identical budget.
struct RecoveryOutcome {
    double planted_keep = 0.0;
    double other_keep = 0.0;
    double auc_selected = 0.0;
    double auc_no_interactions = 0.0;
    double auc_oracle = 0.0;
    bool recovered = false;
};

const std::vector<std::pair<std::size_t, std::size_t>> kPlantedPairs{{0, 1}, {0, 2}, {1, 2}};

bool is_planted(std::size_t i, std::size_t j) {
    for (const auto& [a, b] : kPlantedPairs) {
        if (i == a && j == b) return true;
    }
    return false;
}

// Reference upper bound: logistic regression on one-hot crossed features of
// exactly the planted pairs, trained by plain SGD on the raw training rows.
double planted_logistic_auc(const Splits<RawRow>& raw, std::size_t values_per_field,
                            std::uint64_t seed) {
    const std::size_t V = values_per_field;
    const std::size_t dim = kPlantedPairs.size() * V * V;
    std::vector<double> w(dim + 1, 0.0);
    std::vector<std::size_t> feat(kPlantedPairs.size());
    const auto featurize = [&](const RawRow& row) {
        for (std::size_t p = 0; p < kPlantedPairs.size(); ++p) {
            const auto [i, j] = kPlantedPairs[p];
            feat[p] = p * V * V + std::stoul(row.values[i]) * V + std::stoul(row.values[j]);
        }
    };
    const auto score = [&](const RawRow& row) {
        featurize(row);
        double z = w[dim];
        for (const std::size_t f : feat) z += w[f];
        return z;
    };

    std::vector<std::size_t> order(raw.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    const double lr = 0.5;
    for (int epoch = 0; epoch < 30; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (const std::size_t idx : order) {
            const RawRow& row = raw.train[idx];
            const double g = sigmoid(score(row)) - static_cast<double>(row.label);
            w[dim] -= lr * g;
            for (const std::size_t f : feat) w[f] -= lr * g;
        }
    }

    std::vector<double> scores, labels;
    scores.reserve(raw.test.size());
    labels.reserve(raw.test.size());
    for (const RawRow& row : raw.test) {
        scores.push_back(score(row));
        labels.push_back(static_cast<double>(row.label));
    }
    return auc(scores, labels);
}

RecoveryOutcome run_recovery(std::uint64_t seed) {
    SyntheticSpec spec;
    spec.n_fields = 6;
    spec.values_per_field = 10;
    spec.n_samples = 20000;
    spec.planted_pairs = kPlantedPairs;
    spec.noise = 0.5;
    spec.seed = seed;
    SyntheticData data = generate_synthetic(spec);

    // Search wants a validation split as large as the training split, so the
    // selection objective is estimated on as much held-out data as the model
    // update sees.
    const Splits<RawRow> raw =
        split_samples(std::move(data.rows), {0.45, 0.45, 0.10}, seed);
    const Vocabulary vocab = Vocabulary::build(raw.train, data.schema, 1);
    const DatasetSplits splits{encode_rows(raw.train, vocab),
                               encode_rows(raw.validation, vocab),
                               encode_rows(raw.test, vocab)};

    const ModelSpec mspec{8, {32, 16}, InteractionOp::inner, 2};
    const SelectionSpec sspec{8, 16};
    TrainConfig cfg;
    cfg.lr_model = 3e-3;
    cfg.lr_selection = 3e-3;
    cfg.wd_selection = 1e-4;
    cfg.batch_size = 1024;
    cfg.max_epochs = 25;
    cfg.patience = 25;
    cfg.seed = seed;
    cfg.grain = Grain::field;

    const SearchResult searched =
        run_search(splits, vocab.field_sizes(), mspec, sspec, cfg);
    const FrozenSelection learned = freeze_selection(searched.selection, Grain::field);
    const KeepRatioReport keep = keep_ratio(splits.train, learned, vocab.field_names());

    RecoveryOutcome out;
    std::size_t planted = 0, other = 0;
    for (std::size_t p = 0; p < keep.pairs.size(); ++p) {
        const auto [i, j] = keep.pairs[p];
        if (is_planted(i, j)) {
            out.planted_keep += keep.ratio[p];
            ++planted;
        } else {
            out.other_keep += keep.ratio[p];
            ++other;
        }
    }
    out.planted_keep /= static_cast<double>(planted);
    out.other_keep /= static_cast<double>(other);

    const RetrainResult selected =
        run_retrain(splits, vocab.field_sizes(), learned, mspec, cfg);
    const RetrainResult no_inter = run_retrain(
        splits, vocab.field_sizes(), FrozenSelection::drop_all(vocab.n()), mspec, cfg);
    out.auc_selected = evaluate(splits.test, selected.model, learned, 512).auc;
    out.auc_no_interactions =
        evaluate(splits.test, no_inter.model, FrozenSelection::drop_all(vocab.n()), 512).auc;
    out.auc_oracle = planted_logistic_auc(raw, spec.values_per_field, seed);
    out.recovered = out.planted_keep >= 0.9 && out.other_keep <= 0.3;
    return out;
}

}  // namespace

TEST(Acceptance, SyntheticInteractionRecovery) {
    const Stopwatch watch;
    std::size_t recovered = 0;
    bool every_margin_met = true;
    bool oracle_confirms = true;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const RecoveryOutcome r = run_recovery(seed);
        recovered += r.recovered ? 1 : 0;
        const double margin = r.auc_selected - r.auc_no_interactions;
        every_margin_met = every_margin_met && margin >= 0.02;
        // The margin target is honest only if a model restricted to exactly
        // the planted features clears it too.
        oracle_confirms =
            oracle_confirms && r.auc_oracle - r.auc_no_interactions >= 0.02;
        std::printf(
            "[ACCEPTANCE]   seed %llu: keep planted %.3f, other %.3f, auc %.4f vs "
            "no-interaction %.4f (margin %.4f), planted-feature logistic %.4f%s\n",
            static_cast<unsigned long long>(seed), r.planted_keep, r.other_keep,
            r.auc_selected, r.auc_no_interactions, margin, r.auc_oracle,
            r.recovered ? "" : " [miss]");
        std::fflush(stdout);
    }
    EXPECT_GE(recovered, 4u);
    EXPECT_TRUE(every_margin_met);
    EXPECT_TRUE(oracle_confirms);

    const double elapsed = watch.seconds();
    EXPECT_LT(elapsed, 600.0);
    verdict("A7", "planted interactions recovered on synthetic data", !HasFailure(),
            elapsed);
}

TEST(Acceptance, RankAucEqualsBruteForce) {
    const Stopwatch watch;
    std::mt19937_64 rng(123);
    for (int instance = 0; instance < 100; ++instance) {
        const std::size_t count = 2 + rng() % 999;
        std::vector<double> scores(count), labels(count);
        for (std::size_t i = 0; i < count; ++i) {
            scores[i] = static_cast<double>(rng() % 13) / 4.0 - 1.5;  // coarse grid: ties
            labels[i] = static_cast<double>(rng() % 2);
        }
        labels[0] = 1.0;  // guarantee both classes
        labels[1] = 0.0;

        long long greater = 0, equal = 0, n_pos = 0, n_neg = 0;
        for (std::size_t i = 0; i < count; ++i) {
            if (labels[i] < 0.5) continue;
            ++n_pos;
            for (std::size_t j = 0; j < count; ++j) {
                if (labels[j] > 0.5) continue;
                if (scores[i] > scores[j]) ++greater;
                if (scores[i] == scores[j]) ++equal;
            }
        }
        n_neg = static_cast<long long>(count) - n_pos;
        const double brute =
            (static_cast<double>(greater) + 0.5 * static_cast<double>(equal)) /
            (static_cast<double>(n_pos) * static_cast<double>(n_neg));
        EXPECT_EQ(auc(scores, labels), brute) << "instance " << instance;
    }

    const double elapsed = watch.seconds();
    EXPECT_LT(elapsed, 10.0);
    verdict("A8", "rank AUC equals pairwise brute force", !HasFailure(), elapsed);
}

TEST(Acceptance, SelectionScalesLinearlyInVocabulary) {
    const Stopwatch watch;
    const std::size_t d_hat = 6, d_prime = 12, n_fields = 10;
    const auto count_at = [&](std::size_t m) {
        const std::vector<std::size_t> fields(n_fields, m / n_fields);
        std::mt19937_64 rng(1);
        const SelectionParams sel(fields, d_hat, d_prime, 2, rng);
        return selection_param_count(sel);
    };
    const std::size_t at_1k = count_at(1000);
    const std::size_t at_10k = count_at(10000);
    const std::size_t at_100k = count_at(100000);
    // Exactly linear: only the value-embedding term depends on the vocabulary.
    EXPECT_EQ(at_10k - at_1k, d_hat * (10000 - 1000));
    EXPECT_EQ(at_100k - at_10k, d_hat * (100000 - 10000));
    EXPECT_EQ(at_1k - d_hat * 1000, at_10k - d_hat * 10000);
    EXPECT_EQ(at_10k - d_hat * 10000, at_100k - d_hat * 100000);

    // The dense tensor only ever exists inside the test oracle; production
    // search steps on a 100k vocabulary never materialize it, and the oracle
    // itself refuses at that size.
    std::mt19937_64 rng(2);
    GateNet tiny(4, 2, 3, rng);
    const std::size_t invocations = dense_oracle_invocations();
    dense_reconstruct_oracle(tiny, 2);
    EXPECT_EQ(dense_oracle_invocations(), invocations + 1);

    const std::vector<std::size_t> fields(n_fields, 10000);
    SelectionParams sel(fields, 4, 8, 2, rng);
    Model model(100000, n_fields, 4, {16}, InteractionOp::inner, 2, rng);
    EXPECT_THROW(dense_reconstruct_oracle(sel.value_net(), 2), ContractError);

    TrainConfig cfg;
    cfg.batch_size = 64;
    AdamGroup opt_model = detail::model_optimizer(model, cfg);
    AdamGroup opt_sel = detail::selection_optimizer(sel, cfg);
    const std::size_t before = dense_oracle_invocations();
    for (std::uint64_t step = 0; step < 3; ++step) {
        const EncodedBatch train = make_batch(fields, 64, 100 + step);
        const EncodedBatch val = make_batch(fields, 64, 200 + step);
        search_step(model, sel, train, val, opt_model, opt_sel, Grain::hybrid);
    }
    EXPECT_EQ(dense_oracle_invocations(), before);

    const double elapsed = watch.seconds();
    EXPECT_LT(elapsed, 60.0);
    verdict("A9", "selection parameters scale linearly in vocabulary size", !HasFailure(),
            elapsed);
}

TEST(Acceptance, DeterminismAndPersistence) {
    const Stopwatch watch;
    SyntheticSpec spec;
    spec.n_samples = 4000;
    spec.planted_pairs = kPlantedPairs;
    spec.seed = 3;
    SyntheticData data = generate_synthetic(spec);
    const Splits<RawRow> raw = split_samples(std::move(data.rows), SplitRatios{}, 3);
    const Vocabulary vocab = Vocabulary::build(raw.train, data.schema, 1);
    const DatasetSplits splits{encode_rows(raw.train, vocab),
                               encode_rows(raw.validation, vocab),
                               encode_rows(raw.test, vocab)};

    const ModelSpec mspec{4, {16}, InteractionOp::inner, 2};
    const SelectionSpec sspec{4, 8};
    TrainConfig cfg;
    cfg.batch_size = 256;
    cfg.max_epochs = 4;
    cfg.patience = 4;
    cfg.seed = 9;

    const auto run_once = [&]() {
        SearchResult searched = run_search(splits, vocab.field_sizes(), mspec, sspec, cfg);
        FrozenSelection frozen = freeze_selection(searched.selection, Grain::hybrid);
        RetrainResult retrained =
            run_retrain(splits, vocab.field_sizes(), frozen, mspec, cfg);
        return std::tuple{std::move(searched), std::move(frozen), std::move(retrained)};
    };
    auto [search_a, frozen_a, retrain_a] = run_once();
    auto [search_b, frozen_b, retrain_b] = run_once();

    EXPECT_EQ(bits(search_a.best_val_logloss), bits(search_b.best_val_logloss));
    EXPECT_EQ(bits(retrain_a.best_val_logloss), bits(retrain_b.best_val_logloss));
    const MetricsReport metrics_a = evaluate(splits.test, retrain_a.model, frozen_a, 256);
    const MetricsReport metrics_b = evaluate(splits.test, retrain_b.model, frozen_b, 256);
    EXPECT_EQ(bits(metrics_a.auc), bits(metrics_b.auc));
    EXPECT_EQ(bits(metrics_a.logloss), bits(metrics_b.logloss));

    // Emitted reports are byte-identical (timing deliberately lives elsewhere).
    const auto dir_a = fresh_dir("fisel_accept_det_a");
    const auto dir_b = fresh_dir("fisel_accept_det_b");
    const KeepRatioReport keep_a = keep_ratio(splits.train, frozen_a, vocab.field_names());
    const KeepRatioReport keep_b = keep_ratio(splits.train, frozen_b, vocab.field_names());
    emit_reports(metrics_a, keep_a, dir_a.string());
    emit_reports(metrics_b, keep_b, dir_b.string());
    EXPECT_EQ(slurp(dir_a / "metrics.tsv"), slurp(dir_b / "metrics.tsv"));
    EXPECT_EQ(slurp(dir_a / "keep_ratio.tsv"), slurp(dir_b / "keep_ratio.tsv"));
    EXPECT_EQ(slurp(dir_a / "keep_pairs.tsv"), slurp(dir_b / "keep_pairs.tsv"));

    // Checkpoint round trip: values bitwise, bytes stable under save-load-save.
    const auto ckpt_first = dir_a / "state.ckpt";
    const auto ckpt_second = dir_b / "state.ckpt";
    Checkpoint ck;
    put_model(ck, retrain_a.model);
    put_selection(ck, search_a.selection);
    put_frozen(ck, frozen_a);
    ck.save(ckpt_first.string());
    Checkpoint loaded = Checkpoint::load(ckpt_first.string());
    loaded.save(ckpt_second.string());
    EXPECT_EQ(slurp(ckpt_first), slurp(ckpt_second));

    std::mt19937_64 arch_rng(0);
    Model reloaded_model(vocab.m(), vocab.n(), mspec.d, mspec.hidden, mspec.op, mspec.order,
                         arch_rng);
    get_model(loaded, reloaded_model);
    const auto expect_same_values = [](std::vector<GradSlot*> got,
                                       std::vector<GradSlot*> want) {
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t s = 0; s < got.size(); ++s) {
            ASSERT_EQ(got[s]->value.size(), want[s]->value.size());
            for (std::size_t i = 0; i < got[s]->value.size(); ++i) {
                EXPECT_EQ(bits(got[s]->value[i]), bits(want[s]->value[i]));
            }
        }
    };
    expect_same_values(reloaded_model.slots(), retrain_a.model.slots());
    SelectionParams reloaded_sel(vocab.field_sizes(), sspec.d_hat, sspec.d_prime,
                                 mspec.order, arch_rng);
    get_selection(loaded, reloaded_sel);
    expect_same_values(reloaded_sel.slots(), search_a.selection.slots());

    // Vocabulary reload reproduces every encoding.
    const auto vocab_path = dir_a / "vocabulary.tsv";
    vocab.save(vocab_path.string());
    const Vocabulary reloaded_vocab = Vocabulary::load(vocab_path.string());
    const auto encoded_before = encode_rows(raw.test, vocab);
    const auto encoded_after = encode_rows(raw.test, reloaded_vocab);
    ASSERT_EQ(encoded_before.size(), encoded_after.size());
    for (std::size_t i = 0; i < encoded_before.size(); ++i) {
        EXPECT_EQ(encoded_before[i].value_ids, encoded_after[i].value_ids);
        EXPECT_EQ(encoded_before[i].label, encoded_after[i].label);
    }

    const double elapsed = watch.seconds();
    EXPECT_LT(elapsed, 300.0);
    verdict("A10", "runs are deterministic and state round-trips", !HasFailure(), elapsed);
}
