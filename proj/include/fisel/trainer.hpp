#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <vector>

#include "fisel/adam.hpp"
#include "fisel/dataset.hpp"
#include "fisel/errors.hpp"
#include "fisel/metrics.hpp"
#include "fisel/model.hpp"
#include "fisel/selection.hpp"

namespace fisel {

// Learning-rate/schedule knobs shared by the search, retrain, and baseline
// loops. The mode itself is chosen by which run_* entry point is called.
struct TrainConfig {
    double lr_model = 1e-3;
    double wd_model = 0.0;
    double lr_selection = 1e-3;
    double wd_selection = 0.0;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 50;
    std::size_t patience = 3;
    std::uint64_t seed = 0;
    bool freeze_sigma = false;
    Grain grain = Grain::hybrid;

    void validate() const {
        if (!(lr_model > 0.0) || !(lr_selection > 0.0)) {
            throw ConfigError("learning rates must be > 0");
        }
        if (wd_model < 0.0 || wd_selection < 0.0) {
            throw ConfigError("weight decay must be >= 0");
        }
        if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
        if (patience == 0) throw ConfigError("patience must be >= 1");
    }
};

struct ModelSpec {
    std::size_t d = 8;
    std::vector<std::size_t> hidden{64, 32};
    InteractionOp op = InteractionOp::inner;
    int order = 2;
};

struct SelectionSpec {
    std::size_t d_hat = 8;
    std::size_t d_prime = 16;
};

// Distinct deterministic RNG streams derived from one user seed. Stream ids:
// 0 model init, 1 selection init, 2 training shuffle, 3 validation shuffle.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return seed + stream * 0x9E3779B97F4A7C15ULL;
}

namespace detail {

inline std::size_t total_values(const std::vector<std::size_t>& field_sizes) {
    std::size_t acc = 0;
    for (std::size_t s : field_sizes) acc += s;
    return acc;
}

// Optimizer over every selection slot; sigma slots are left out when frozen.
inline AdamGroup selection_optimizer(SelectionParams& sel, const TrainConfig& cfg) {
    AdamGroup opt;
    for (GradSlot* slot : sel.slots()) {
        if (cfg.freeze_sigma &&
            (slot == &sel.value_net().sigma() || slot == &sel.field_net().sigma())) {
            continue;
        }
        opt.add(slot, cfg.lr_selection, cfg.wd_selection);
    }
    return opt;
}

inline AdamGroup model_optimizer(Model& model, const TrainConfig& cfg) {
    AdamGroup opt;
    for (GradSlot* slot : model.slots()) opt.add(slot, cfg.lr_model, cfg.wd_model);
    return opt;
}

struct SplitScores {
    double logloss_value = 0.0;
    double auc_value = 0.0;
};

}  // namespace detail

struct StepLosses {
    double validation = 0.0;  // loss the selection update saw, pre-update
    double training = 0.0;    // loss the model update saw, pre-update
};

// One alternating step: update the selection parameters on a validation batch
// first, then the model parameters on a training batch. Each update sees only
// its own optimizer, and all gradients are cleared at the boundaries so
// nothing leaks between the two half-steps.
inline StepLosses search_step(Model& model, SelectionParams& sel,
                              const EncodedBatch& train_batch,
                              const EncodedBatch& val_batch, AdamGroup& opt_model,
                              AdamGroup& opt_sel, Grain grain = Grain::hybrid) {
    StepLosses losses;
    const bool third = model.order() == 3;

    model.zero_grad();
    sel.zero_grad();
    {
        SearchMask sm = hybrid_mask_search(val_batch, sel, grain);
        Model::Trace trace;
        Matrix probs =
            model.forward(val_batch, sm.mask, third ? &sm.mask3 : nullptr, &trace);
        losses.validation = logloss(probs, val_batch.labels);
        Matrix d_mask, d_mask3;
        model.backward(trace, logloss_dlogit(probs, val_batch.labels), &d_mask,
                       third ? &d_mask3 : nullptr);
        hybrid_mask_search_backward(sm, d_mask, third ? &d_mask3 : nullptr, sel);
        opt_sel.step();
    }

    model.zero_grad();
    sel.zero_grad();
    {
        SearchMask sm = hybrid_mask_search(train_batch, sel, grain);
        Model::Trace trace;
        Matrix probs =
            model.forward(train_batch, sm.mask, third ? &sm.mask3 : nullptr, &trace);
        losses.training = logloss(probs, train_batch.labels);
        model.backward(trace, logloss_dlogit(probs, train_batch.labels));
        opt_model.step();
    }
    model.zero_grad();
    sel.zero_grad();
    return losses;
}

namespace detail {

// Full-split scores under the relaxed search-phase mask (no gradients).
inline SplitScores eval_search(const std::vector<EncodedSample>& samples, const Model& model,
                               const SelectionParams& sel, Grain grain,
                               std::size_t batch_size) {
    std::vector<double> scores, labels;
    scores.reserve(samples.size());
    labels.reserve(samples.size());
    Matrix all_probs(samples.size(), 1);
    std::size_t row = 0;
    for (const EncodedBatch& batch : fixed_batches(samples, model.n(), batch_size)) {
        SearchMask sm = hybrid_mask_search(batch, sel, grain);
        Matrix probs =
            model.forward(batch, sm.mask, model.order() == 3 ? &sm.mask3 : nullptr);
        for (std::size_t b = 0; b < batch.size; ++b) {
            all_probs[row++] = probs[b];
            scores.push_back(probs[b]);
            labels.push_back(batch.labels[b]);
        }
    }
    return {logloss(all_probs, labels), auc(scores, labels)};
}

// Full-split scores under a frozen binary mask (no gradients).
inline SplitScores eval_frozen(const std::vector<EncodedSample>& samples, const Model& model,
                               const FrozenSelection& frozen, std::size_t batch_size) {
    std::vector<double> scores, labels;
    Matrix all_probs(samples.size(), 1);
    std::size_t row = 0;
    for (const EncodedBatch& batch : fixed_batches(samples, model.n(), batch_size)) {
        const Matrix mask = hybrid_mask_frozen(batch, frozen);
        Matrix mask3;
        if (model.order() == 3) mask3 = hybrid_mask_frozen3(batch, frozen);
        Matrix probs = model.forward(batch, mask, model.order() == 3 ? &mask3 : nullptr);
        for (std::size_t b = 0; b < batch.size; ++b) {
            all_probs[row++] = probs[b];
            scores.push_back(probs[b]);
            labels.push_back(batch.labels[b]);
        }
    }
    return {logloss(all_probs, labels), auc(scores, labels)};
}

}  // namespace detail

struct SearchResult {
    Model model;                // best-validation snapshot
    SelectionParams selection;  // best-validation snapshot
    std::vector<HistoryRow> history;
    std::size_t best_epoch = 0;
    double best_val_logloss = 0.0;
    std::size_t epochs_run = 0;
};

// Alternating bilevel search over paired training/validation batch streams.
// The validation stream reshuffles and cycles when it is shorter than the
// training stream. Early-stops on full-split validation logloss and returns
// the best-epoch snapshot, not the last one.
inline SearchResult run_search(const DatasetSplits& splits,
                               const std::vector<std::size_t>& field_sizes,
                               const ModelSpec& mspec, const SelectionSpec& sspec,
                               const TrainConfig& cfg) {
    cfg.validate();
    if (splits.validation.empty()) throw DataError("search needs a validation split");
    if (splits.train.empty()) throw DataError("search needs a training split");

    const std::size_t n = field_sizes.size();
    const std::size_t m = detail::total_values(field_sizes);
    std::mt19937_64 model_rng(derive_seed(cfg.seed, 0));
    std::mt19937_64 sel_rng(derive_seed(cfg.seed, 1));
    Model model(m, n, mspec.d, mspec.hidden, mspec.op, mspec.order, model_rng);
    SelectionParams sel(field_sizes, sspec.d_hat, sspec.d_prime, mspec.order, sel_rng);

    AdamGroup opt_model = detail::model_optimizer(model, cfg);
    AdamGroup opt_sel = detail::selection_optimizer(sel, cfg);

    BatchStream train_stream(&splits.train, n, cfg.batch_size, derive_seed(cfg.seed, 2));
    BatchStream val_stream(&splits.validation, n, cfg.batch_size, derive_seed(cfg.seed, 3));
    val_stream.start_epoch();

    SearchResult best;
    best.best_val_logloss = std::numeric_limits<double>::infinity();
    std::vector<HistoryRow> history;
    std::size_t bad_epochs = 0;
    std::size_t epoch = 0;

    for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        train_stream.start_epoch();
        while (auto train_batch = train_stream.next_in_epoch()) {
            const EncodedBatch val_batch = val_stream.next_cycling();
            search_step(model, sel, *train_batch, val_batch, opt_model, opt_sel, cfg.grain);
        }

        const auto train_scores =
            detail::eval_search(splits.train, model, sel, cfg.grain, cfg.batch_size);
        const auto val_scores =
            detail::eval_search(splits.validation, model, sel, cfg.grain, cfg.batch_size);
        history.push_back({epoch, "train", train_scores.logloss_value, train_scores.auc_value});
        history.push_back(
            {epoch, "validation", val_scores.logloss_value, val_scores.auc_value});

        if (val_scores.logloss_value < best.best_val_logloss) {
            best.best_val_logloss = val_scores.logloss_value;
            best.best_epoch = epoch;
            best.model = model;
            best.selection = sel;
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            if (bad_epochs >= cfg.patience) break;
        }
    }

    best.history = std::move(history);
    best.epochs_run = std::min(epoch, cfg.max_epochs);
    return best;
}

struct RetrainResult {
    Model model;  // best-validation snapshot
    std::vector<HistoryRow> history;
    std::size_t best_epoch = 0;
    double best_val_logloss = 0.0;
    std::size_t epochs_run = 0;
};

// Trains a model against a fixed binary mask source. Selection parameters are
// frozen by construction: nothing ever backpropagates into `frozen`. With
// `warm_from` the model starts from those parameters instead of fresh random
// init (same architecture required).
inline RetrainResult run_retrain(const DatasetSplits& splits,
                                 const std::vector<std::size_t>& field_sizes,
                                 const FrozenSelection& frozen, const ModelSpec& mspec,
                                 const TrainConfig& cfg, const Model* warm_from = nullptr) {
    cfg.validate();
    if (splits.validation.empty()) throw DataError("retraining needs a validation split");
    if (splits.train.empty()) throw DataError("retraining needs a training split");

    const std::size_t n = field_sizes.size();
    const std::size_t m = detail::total_values(field_sizes);
    std::mt19937_64 model_rng(derive_seed(cfg.seed, 0));
    Model model(m, n, mspec.d, mspec.hidden, mspec.op, mspec.order, model_rng);
    if (warm_from) {
        if (warm_from->param_count() != model.param_count() || warm_from->n() != n ||
            warm_from->d() != mspec.d) {
            throw IntegrityError("warm-start model does not match the configured architecture");
        }
        model = *warm_from;
    }
    const bool third = model.order() == 3;

    AdamGroup opt_model = detail::model_optimizer(model, cfg);
    BatchStream train_stream(&splits.train, n, cfg.batch_size, derive_seed(cfg.seed, 2));

    RetrainResult best;
    best.best_val_logloss = std::numeric_limits<double>::infinity();
    std::vector<HistoryRow> history;
    std::size_t bad_epochs = 0;
    std::size_t epoch = 0;

    for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        train_stream.start_epoch();
        while (auto batch = train_stream.next_in_epoch()) {
            const Matrix mask = hybrid_mask_frozen(*batch, frozen);
            Matrix mask3;
            if (third) mask3 = hybrid_mask_frozen3(*batch, frozen);
            Model::Trace trace;
            Matrix probs = model.forward(*batch, mask, third ? &mask3 : nullptr, &trace);
            model.zero_grad();
            model.backward(trace, logloss_dlogit(probs, batch->labels));
            opt_model.step();
            model.zero_grad();
        }

        const auto train_scores =
            detail::eval_frozen(splits.train, model, frozen, cfg.batch_size);
        const auto val_scores =
            detail::eval_frozen(splits.validation, model, frozen, cfg.batch_size);
        history.push_back({epoch, "train", train_scores.logloss_value, train_scores.auc_value});
        history.push_back(
            {epoch, "validation", val_scores.logloss_value, val_scores.auc_value});

        if (val_scores.logloss_value < best.best_val_logloss) {
            best.best_val_logloss = val_scores.logloss_value;
            best.best_epoch = epoch;
            best.model = model;
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            if (bad_epochs >= cfg.patience) break;
        }
    }

    best.history = std::move(history);
    best.epochs_run = std::min(epoch, cfg.max_epochs);
    return best;
}

// AUC + logloss over a split with frozen masks, plus mean wall-clock seconds
// per batch of mask computation + forward pass.
inline MetricsReport evaluate(const std::vector<EncodedSample>& samples, const Model& model,
                              const FrozenSelection& frozen, std::size_t batch_size) {
    if (samples.empty()) throw DataError("evaluate: empty split");
    std::vector<double> scores, labels;
    Matrix all_probs(samples.size(), 1);
    std::size_t row = 0;
    double seconds = 0.0;
    std::size_t batches = 0;
    const bool third = model.order() == 3;

    for (const EncodedBatch& batch : fixed_batches(samples, model.n(), batch_size)) {
        const auto t0 = std::chrono::steady_clock::now();
        const Matrix mask = hybrid_mask_frozen(batch, frozen);
        Matrix mask3;
        if (third) mask3 = hybrid_mask_frozen3(batch, frozen);
        Matrix probs = model.forward(batch, mask, third ? &mask3 : nullptr);
        const auto t1 = std::chrono::steady_clock::now();
        seconds += std::chrono::duration<double>(t1 - t0).count();
        ++batches;
        for (std::size_t b = 0; b < batch.size; ++b) {
            all_probs[row++] = probs[b];
            scores.push_back(probs[b]);
            labels.push_back(batch.labels[b]);
        }
    }

    MetricsReport report;
    report.logloss = logloss(all_probs, labels);
    report.auc = auc(scores, labels);
    report.n_samples = samples.size();
    report.mean_batch_inference_seconds = seconds / static_cast<double>(batches);
    return report;
}

}  // namespace fisel
