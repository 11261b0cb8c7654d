#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fisel/checkpoint.hpp"
#include "fisel/config.hpp"
#include "fisel/metrics.hpp"
#include "fisel/trainer.hpp"

namespace fisel {

struct OutputPaths {
    std::string vocabulary;
    std::string train_enc;
    std::string validation_enc;
    std::string test_enc;
    std::string search_ckpt;
    std::string retrain_ckpt;
    std::string baseline_ckpt;
    std::string search_history;
    std::string retrain_history;
    std::string baseline_history;
};

inline OutputPaths output_paths(const Config& cfg) {
    const std::string dir = cfg.output.dir + "/";
    OutputPaths p;
    p.vocabulary = dir + "vocabulary.tsv";
    p.train_enc = dir + "train.enc";
    p.validation_enc = dir + "validation.enc";
    p.test_enc = dir + "test.enc";
    p.search_ckpt = dir + "search.ckpt";
    p.retrain_ckpt = dir + "retrain.ckpt";
    p.baseline_ckpt = dir + "baseline.ckpt";
    p.search_history = dir + "search_history.tsv";
    p.retrain_history = dir + "retrain_history.tsv";
    p.baseline_history = dir + "baseline_history.tsv";
    return p;
}

// Mask source for retraining: the learned frozen selection from the search
// checkpoint, or a constant all-ones / all-zeros override.
enum class MaskSource { learned, keep_all, drop_all };

inline MaskSource parse_mask_source(const std::string& s) {
    if (s == "learned") return MaskSource::learned;
    if (s == "keep_all") return MaskSource::keep_all;
    if (s == "drop_all") return MaskSource::drop_all;
    throw ConfigError("unknown mask source '" + s + "' (expected learned|keep_all|drop_all)");
}

namespace detail {

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

inline void ensure_parent_dir(const std::string& file_path) {
    const auto parent = std::filesystem::path(file_path).parent_path();
    if (!parent.empty()) ensure_dir(parent.string());
}

inline DatasetSplits load_splits(const OutputPaths& paths, std::size_t n_fields) {
    DatasetSplits splits;
    splits.train = load_encoded(paths.train_enc, n_fields);
    splits.validation = load_encoded(paths.validation_enc, n_fields);
    splits.test = load_encoded(paths.test_enc, n_fields);
    return splits;
}

inline void put_meta(Checkpoint& ck, const Config& cfg, const Vocabulary& vocab, Grain grain) {
    ck.put_int("meta/m", static_cast<std::int64_t>(vocab.m()));
    ck.put_int("meta/n", static_cast<std::int64_t>(vocab.n()));
    ck.put_int("meta/d", static_cast<std::int64_t>(cfg.model.d));
    ck.put_int("meta/order", cfg.model.order_t);
    ck.put_int("meta/op", cfg.model.operation == InteractionOp::outer ? 1 : 0);
    ck.put_int("meta/hidden_count", static_cast<std::int64_t>(cfg.model.hidden_sizes.size()));
    for (std::size_t i = 0; i < cfg.model.hidden_sizes.size(); ++i) {
        ck.put_int("meta/hidden/" + std::to_string(i),
                   static_cast<std::int64_t>(cfg.model.hidden_sizes[i]));
    }
    ck.put_int("meta/d_hat", static_cast<std::int64_t>(cfg.selection.d_hat));
    ck.put_int("meta/d_prime", static_cast<std::int64_t>(cfg.selection.d_prime));
    ck.put_bytes("meta/grain", grain_name(grain));
}

struct Meta {
    std::size_t m = 0;
    std::size_t n = 0;
    std::size_t d = 0;
    int order = 2;
    InteractionOp op = InteractionOp::inner;
    std::vector<std::size_t> hidden;
    std::size_t d_hat = 0;
    std::size_t d_prime = 0;
    Grain grain = Grain::hybrid;
};

inline Meta get_meta(const Checkpoint& ck) {
    Meta meta;
    meta.m = static_cast<std::size_t>(ck.integer("meta/m"));
    meta.n = static_cast<std::size_t>(ck.integer("meta/n"));
    meta.d = static_cast<std::size_t>(ck.integer("meta/d"));
    meta.order = static_cast<int>(ck.integer("meta/order"));
    meta.op = ck.integer("meta/op") == 1 ? InteractionOp::outer : InteractionOp::inner;
    const auto hidden_count = static_cast<std::size_t>(ck.integer("meta/hidden_count"));
    for (std::size_t i = 0; i < hidden_count; ++i) {
        meta.hidden.push_back(
            static_cast<std::size_t>(ck.integer("meta/hidden/" + std::to_string(i))));
    }
    meta.d_hat = static_cast<std::size_t>(ck.integer("meta/d_hat"));
    meta.d_prime = static_cast<std::size_t>(ck.integer("meta/d_prime"));
    meta.grain = parse_grain(ck.bytes("meta/grain"));
    return meta;
}

inline void check_meta_against_vocabulary(const Meta& meta, const Vocabulary& vocab,
                                          const std::string& ckpt_path) {
    if (meta.m != vocab.m() || meta.n != vocab.n()) {
        throw IntegrityError("checkpoint " + ckpt_path + " was built for m=" +
                             std::to_string(meta.m) + ", n=" + std::to_string(meta.n) +
                             " but the vocabulary has m=" + std::to_string(vocab.m()) +
                             ", n=" + std::to_string(vocab.n()));
    }
}

// Rebuild a model with the checkpoint's architecture; parameter values are
// overwritten by the load, so the RNG here is inconsequential.
inline Model model_from_meta(const Meta& meta) {
    std::mt19937_64 rng(0);
    return Model(meta.m, meta.n, meta.d, meta.hidden, meta.op, meta.order, rng);
}

inline FrozenSelection frozen_from_checkpoint(const Checkpoint& ck, const Meta& meta,
                                              const std::vector<std::size_t>& field_sizes) {
    FrozenSelection frozen;
    const auto mode =
        static_cast<FrozenSelection::Override>(ck.integer("frozen/override"));
    if (mode == FrozenSelection::Override::none) {
        std::mt19937_64 rng(0);
        frozen.value = ValueSelectionNet(field_sizes, meta.d_hat, meta.d_prime, rng);
        frozen.field = FieldSelectionNet(meta.n, meta.d_hat, meta.d_prime, rng);
    }
    get_frozen(ck, frozen);
    return frozen;
}

}  // namespace detail

// Generate the planted-interaction dataset plus its schema and ground-truth
// descriptor (written next to the data file).
inline void cmd_synth(const Config& cfg, std::ostream& out = std::cout) {
    const SyntheticData data = generate_synthetic(cfg.synth_spec());
    detail::ensure_parent_dir(cfg.data.path);
    detail::ensure_parent_dir(cfg.data.schema);
    save_synthetic_tsv(data, cfg.data.path);
    save_schema(data.schema, cfg.data.schema);
    const std::string descriptor = cfg.data.path + ".descriptor.json";
    save_synthetic_descriptor(data, descriptor);
    out << "wrote " << cfg.data.path << " (" << data.rows.size() << " samples, "
        << data.schema.size() << " fields)\n";
    out << "wrote " << cfg.data.schema << "\n";
    out << "wrote " << descriptor << "\n";
}

// Raw TSV + schema -> vocabulary + encoded splits under output.dir. The
// vocabulary counts frequencies over training rows only, so the split happens
// first (seeded by train.seed).
inline void cmd_preprocess(const Config& cfg, std::ostream& out = std::cout) {
    const Schema schema = load_schema(cfg.data.schema);
    std::vector<RawRow> rows = load_tsv(cfg.data.path, schema);
    const Splits<RawRow> raw_splits =
        split_samples(std::move(rows), cfg.data.split_ratios, cfg.train.seed);
    const Vocabulary vocab =
        Vocabulary::build(raw_splits.train, schema, cfg.data.min_count, cfg.data.log_base);

    detail::ensure_dir(cfg.output.dir);
    const OutputPaths paths = output_paths(cfg);
    vocab.save(paths.vocabulary);
    save_encoded(encode_rows(raw_splits.train, vocab), paths.train_enc);
    save_encoded(encode_rows(raw_splits.validation, vocab), paths.validation_enc);
    save_encoded(encode_rows(raw_splits.test, vocab), paths.test_enc);

    out << "n = " << vocab.n() << "\n";
    out << "m = " << vocab.m() << "\n";
    for (std::size_t f = 0; f < vocab.n(); ++f) {
        out << "m_i[" << vocab.schema()[f].name << "] = " << vocab.field_sizes()[f] << "\n";
    }
    out << "train = " << raw_splits.train.size()
        << ", validation = " << raw_splits.validation.size()
        << ", test = " << raw_splits.test.size() << "\n";
}

// Alternating bilevel search; persists the best-epoch model + selection and
// the per-epoch history.
inline void cmd_search(const Config& cfg, Grain grain, std::ostream& out = std::cout) {
    const OutputPaths paths = output_paths(cfg);
    const Vocabulary vocab = Vocabulary::load(paths.vocabulary);
    const DatasetSplits splits = detail::load_splits(paths, vocab.n());

    const SearchResult result = run_search(splits, vocab.field_sizes(), cfg.model_spec(),
                                           cfg.selection_spec(), cfg.train_config(grain));

    detail::ensure_dir(cfg.output.dir);
    save_history(result.history, paths.search_history);
    Checkpoint ck;
    detail::put_meta(ck, cfg, vocab, grain);
    put_model(ck, result.model);
    put_selection(ck, result.selection);
    ck.save(paths.search_ckpt);

    out << "search: best epoch " << result.best_epoch << " of " << result.epochs_run
        << ", validation logloss " << result.best_val_logloss << "\n";
    out << "wrote " << paths.search_ckpt << "\n";
    out << "wrote " << paths.search_history << "\n";
}

namespace detail {

inline RetrainResult retrain_common(const Config& cfg, const FrozenSelection& frozen,
                                    Grain grain, const Vocabulary& vocab,
                                    const DatasetSplits& splits, const std::string& ckpt_path,
                                    const std::string& history_path, const Model* warm_from,
                                    std::ostream& out, const char* label) {
    RetrainResult result = run_retrain(splits, vocab.field_sizes(), frozen, cfg.model_spec(),
                                       cfg.train_config(grain), warm_from);
    ensure_dir(cfg.output.dir);
    save_history(result.history, history_path);
    Checkpoint ck;
    put_meta(ck, cfg, vocab, grain);
    put_model(ck, result.model);
    put_frozen(ck, frozen);
    ck.save(ckpt_path);
    out << label << ": best epoch " << result.best_epoch << " of " << result.epochs_run
        << ", validation logloss " << result.best_val_logloss << "\n";
    out << "wrote " << ckpt_path << "\n";
    out << "wrote " << history_path << "\n";
    return result;
}

}  // namespace detail

// Plain all-interaction training: mask held at all-ones, model trained from
// scratch.
inline void cmd_baseline(const Config& cfg, std::ostream& out = std::cout) {
    const OutputPaths paths = output_paths(cfg);
    const Vocabulary vocab = Vocabulary::load(paths.vocabulary);
    const DatasetSplits splits = detail::load_splits(paths, vocab.n());
    const FrozenSelection frozen = FrozenSelection::keep_all(vocab.n(), cfg.model.order_t);
    detail::retrain_common(cfg, frozen, Grain::hybrid, vocab, splits, paths.baseline_ckpt,
                           paths.baseline_history, nullptr, out, "baseline");
}

// Freeze the searched selection (or a constant mask override) and train a
// model against it. `grain_flag` overrides the grain recorded by the search.
inline void cmd_retrain(const Config& cfg, std::optional<Grain> grain_flag,
                        MaskSource mask_source, std::ostream& out = std::cout) {
    const OutputPaths paths = output_paths(cfg);
    const Vocabulary vocab = Vocabulary::load(paths.vocabulary);
    const DatasetSplits splits = detail::load_splits(paths, vocab.n());

    const bool needs_checkpoint =
        mask_source == MaskSource::learned || cfg.train.retrain_init == "warm";
    std::optional<Checkpoint> ck;
    std::optional<detail::Meta> meta;
    if (needs_checkpoint) {
        if (!std::filesystem::exists(paths.search_ckpt)) {
            throw DataError("retrain needs a search checkpoint; run `search` first (missing " +
                            paths.search_ckpt + ")");
        }
        ck = Checkpoint::load(paths.search_ckpt);
        meta = detail::get_meta(*ck);
        detail::check_meta_against_vocabulary(*meta, vocab, paths.search_ckpt);
    }

    Grain grain = Grain::hybrid;
    FrozenSelection frozen;
    if (mask_source == MaskSource::learned) {
        grain = grain_flag.value_or(meta->grain);
        std::mt19937_64 rng(0);
        SelectionParams sel(vocab.field_sizes(), meta->d_hat, meta->d_prime, meta->order, rng);
        get_selection(*ck, sel);
        frozen = freeze_selection(sel, grain);
    } else {
        grain = grain_flag.value_or(Grain::hybrid);
        frozen = mask_source == MaskSource::keep_all
                     ? FrozenSelection::keep_all(vocab.n(), cfg.model.order_t)
                     : FrozenSelection::drop_all(vocab.n(), cfg.model.order_t);
    }

    std::optional<Model> warm;
    if (cfg.train.retrain_init == "warm") {
        warm = detail::model_from_meta(*meta);
        get_model(*ck, *warm);
    }

    detail::retrain_common(cfg, frozen, grain, vocab, splits, paths.retrain_ckpt,
                           paths.retrain_history, warm ? &*warm : nullptr, out, "retrain");
}

// Frozen-mode evaluation of a checkpoint on one split, plus the keep-ratio
// report over the training split; emits metrics/timing/keep-ratio files.
inline void cmd_evaluate(const Config& cfg, const std::string& checkpoint_path,
                         const std::string& split, std::ostream& out = std::cout) {
    const OutputPaths paths = output_paths(cfg);
    const std::string ckpt_path =
        checkpoint_path.empty() ? paths.retrain_ckpt : checkpoint_path;
    const Vocabulary vocab = Vocabulary::load(paths.vocabulary);
    const DatasetSplits splits = detail::load_splits(paths, vocab.n());

    const Checkpoint ck = Checkpoint::load(ckpt_path);
    const detail::Meta meta = detail::get_meta(ck);
    detail::check_meta_against_vocabulary(meta, vocab, ckpt_path);
    Model model = detail::model_from_meta(meta);
    get_model(ck, model);
    const FrozenSelection frozen =
        detail::frozen_from_checkpoint(ck, meta, vocab.field_sizes());

    const std::vector<EncodedSample>* samples = nullptr;
    if (split == "test") {
        samples = &splits.test;
    } else if (split == "val" || split == "validation") {
        samples = &splits.validation;
    } else if (split == "train") {
        samples = &splits.train;
    } else {
        throw ConfigError("unknown split '" + split + "' (expected train|val|test)");
    }

    const MetricsReport report = evaluate(*samples, model, frozen, cfg.train.batch_size);
    const KeepRatioReport keep =
        keep_ratio(splits.train, frozen, vocab.field_names(), cfg.train.batch_size);
    emit_reports(report, keep, cfg.output.dir);

    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", report.auc);
    out << "auc = " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", report.logloss);
    out << "logloss = " << buf << "\n";
    out << "n_samples = " << report.n_samples << "\n";
    out << "wrote " << cfg.output.dir << "/metrics.tsv, timing.tsv, keep_ratio.tsv, keep_pairs.tsv\n";
}

}  // namespace fisel
