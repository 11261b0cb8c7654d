#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fisel/dataset.hpp"
#include "fisel/errors.hpp"
#include "fisel/model.hpp"
#include "fisel/selection.hpp"
#include "fisel/synthetic.hpp"
#include "fisel/trainer.hpp"
#include "fisel/vocab.hpp"

namespace fisel {

// Whole-run configuration. Every key has the default shown here; a config
// file or --set override replaces individual keys, and any key outside this
// schema is a hard error rather than a silently ignored typo.
struct Config {
    struct Data {
        std::string path = "data/raw.tsv";
        std::string schema = "data/schema.tsv";
        std::size_t min_count = 1;
        SplitRatios split_ratios;  // 0.8 / 0.1 / 0.1
        double log_base = kNaturalBase;
    } data;

    struct ModelSection {
        std::size_t d = 8;
        std::vector<std::size_t> hidden_sizes{32, 16};
        InteractionOp operation = InteractionOp::inner;
        int order_t = 2;
    } model;

    struct Selection {
        std::size_t d_hat = 8;
        std::size_t d_prime = 16;
        bool freeze_sigma = false;
    } selection;

    struct Train {
        std::string mode = "search";  // informational; the subcommand decides
        double lr_model = 1e-3;
        double lr_selection = 1e-3;
        double wd_model = 0.0;
        double wd_selection = 0.0;
        std::size_t batch_size = 256;
        std::size_t max_epochs = 50;
        std::size_t patience = 3;
        std::uint64_t seed = 0;
        std::string retrain_init = "random";  // or "warm"
    } train;

    struct Output {
        std::string dir = "out";
    } output;

    struct Synth {
        std::size_t n_fields = 6;
        std::size_t values_per_field = 10;
        std::size_t n_samples = 20000;
        std::vector<std::pair<std::size_t, std::size_t>> planted_pairs{{0, 1}, {2, 3}, {4, 5}};
        double noise = 0.5;
        std::uint64_t seed = 0;
    } synth;

    ModelSpec model_spec() const {
        return {model.d, model.hidden_sizes, model.operation, model.order_t};
    }

    SelectionSpec selection_spec() const { return {selection.d_hat, selection.d_prime}; }

    TrainConfig train_config(Grain grain) const {
        TrainConfig cfg;
        cfg.lr_model = train.lr_model;
        cfg.wd_model = train.wd_model;
        cfg.lr_selection = train.lr_selection;
        cfg.wd_selection = train.wd_selection;
        cfg.batch_size = train.batch_size;
        cfg.max_epochs = train.max_epochs;
        cfg.patience = train.patience;
        cfg.seed = train.seed;
        cfg.freeze_sigma = selection.freeze_sigma;
        cfg.grain = grain;
        return cfg;
    }

    SyntheticSpec synth_spec() const {
        SyntheticSpec spec;
        spec.n_fields = synth.n_fields;
        spec.values_per_field = synth.values_per_field;
        spec.n_samples = synth.n_samples;
        spec.planted_pairs = synth.planted_pairs;
        spec.noise = synth.noise;
        spec.seed = synth.seed;
        return spec;
    }
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown_keys(const json& section, const std::string& prefix,
                                std::initializer_list<const char*> allowed) {
    for (const auto& item : section.items()) {
        bool known = false;
        for (const char* key : allowed) {
            if (item.key() == key) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError("config: unknown key '" + prefix + item.key() + "'");
        }
    }
}

template <typename T>
T fetch(const json& section, const std::string& prefix, const char* key, T fallback) {
    if (!section.contains(key)) return fallback;
    try {
        return section.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for '" + prefix + key + "': " + e.what());
    }
}

inline void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
    for (const std::string& kv : overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("--set expects section.key=value, got '" + kv + "'");
        }
        const std::string path = kv.substr(0, eq);
        const std::string raw = kv.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;  // unquoted strings (paths, enum names) pass through
        }
        json* node = &doc;
        std::size_t start = 0;
        while (true) {
            const std::size_t dot = path.find('.', start);
            const std::string part = path.substr(start, dot - start);
            if (part.empty()) {
                throw ConfigError("--set: empty key component in '" + path + "'");
            }
            if (dot == std::string::npos) {
                (*node)[part] = value;
                break;
            }
            node = &(*node)[part];
            start = dot + 1;
        }
    }
}

}  // namespace detail

inline Config parse_config(const nlohmann::json& doc) {
    using detail::fetch;
    using detail::reject_unknown_keys;
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    reject_unknown_keys(doc, "", {"data", "model", "selection", "train", "output", "synth"});

    Config cfg;
    if (doc.contains("data")) {
        const auto& s = doc.at("data");
        reject_unknown_keys(s, "data.",
                            {"path", "schema", "min_count", "split_ratios", "log_base"});
        cfg.data.path = fetch<std::string>(s, "data.", "path", cfg.data.path);
        cfg.data.schema = fetch<std::string>(s, "data.", "schema", cfg.data.schema);
        cfg.data.min_count = fetch<std::size_t>(s, "data.", "min_count", cfg.data.min_count);
        cfg.data.log_base = fetch<double>(s, "data.", "log_base", cfg.data.log_base);
        if (s.contains("split_ratios")) {
            const auto ratios =
                fetch<std::vector<double>>(s, "data.", "split_ratios", {0.8, 0.1, 0.1});
            if (ratios.size() != 3) {
                throw ConfigError("config: data.split_ratios needs [train, validation, test]");
            }
            cfg.data.split_ratios = {ratios[0], ratios[1], ratios[2]};
        }
    }
    if (doc.contains("model")) {
        const auto& s = doc.at("model");
        reject_unknown_keys(s, "model.", {"d", "hidden_sizes", "operation", "order_t"});
        cfg.model.d = fetch<std::size_t>(s, "model.", "d", cfg.model.d);
        cfg.model.hidden_sizes = fetch<std::vector<std::size_t>>(s, "model.", "hidden_sizes",
                                                                 cfg.model.hidden_sizes);
        const std::string op = fetch<std::string>(s, "model.", "operation", "inner");
        if (op == "inner") {
            cfg.model.operation = InteractionOp::inner;
        } else if (op == "outer") {
            cfg.model.operation = InteractionOp::outer;
        } else {
            throw ConfigError("config: model.operation must be 'inner' or 'outer', got '" +
                              op + "'");
        }
        cfg.model.order_t = fetch<int>(s, "model.", "order_t", cfg.model.order_t);
        if (cfg.model.order_t != 2 && cfg.model.order_t != 3) {
            throw ConfigError("config: model.order_t must be 2 or 3");
        }
    }
    if (doc.contains("selection")) {
        const auto& s = doc.at("selection");
        reject_unknown_keys(s, "selection.", {"d_hat", "d_prime", "freeze_sigma"});
        cfg.selection.d_hat = fetch<std::size_t>(s, "selection.", "d_hat", cfg.selection.d_hat);
        cfg.selection.d_prime =
            fetch<std::size_t>(s, "selection.", "d_prime", cfg.selection.d_prime);
        cfg.selection.freeze_sigma =
            fetch<bool>(s, "selection.", "freeze_sigma", cfg.selection.freeze_sigma);
    }
    if (doc.contains("train")) {
        const auto& s = doc.at("train");
        reject_unknown_keys(s, "train.",
                            {"mode", "lr_model", "lr_selection", "wd_model", "wd_selection",
                             "batch_size", "max_epochs", "patience", "seed", "retrain_init"});
        cfg.train.mode = fetch<std::string>(s, "train.", "mode", cfg.train.mode);
        if (cfg.train.mode != "baseline" && cfg.train.mode != "search" &&
            cfg.train.mode != "retrain") {
            throw ConfigError("config: train.mode must be baseline|search|retrain");
        }
        cfg.train.lr_model = fetch<double>(s, "train.", "lr_model", cfg.train.lr_model);
        cfg.train.lr_selection =
            fetch<double>(s, "train.", "lr_selection", cfg.train.lr_selection);
        cfg.train.wd_model = fetch<double>(s, "train.", "wd_model", cfg.train.wd_model);
        cfg.train.wd_selection =
            fetch<double>(s, "train.", "wd_selection", cfg.train.wd_selection);
        cfg.train.batch_size =
            fetch<std::size_t>(s, "train.", "batch_size", cfg.train.batch_size);
        cfg.train.max_epochs =
            fetch<std::size_t>(s, "train.", "max_epochs", cfg.train.max_epochs);
        cfg.train.patience = fetch<std::size_t>(s, "train.", "patience", cfg.train.patience);
        cfg.train.seed = fetch<std::uint64_t>(s, "train.", "seed", cfg.train.seed);
        cfg.train.retrain_init =
            fetch<std::string>(s, "train.", "retrain_init", cfg.train.retrain_init);
        if (cfg.train.retrain_init != "random" && cfg.train.retrain_init != "warm") {
            throw ConfigError("config: train.retrain_init must be 'random' or 'warm'");
        }
    }
    if (doc.contains("output")) {
        const auto& s = doc.at("output");
        reject_unknown_keys(s, "output.", {"dir"});
        cfg.output.dir = fetch<std::string>(s, "output.", "dir", cfg.output.dir);
    }
    if (doc.contains("synth")) {
        const auto& s = doc.at("synth");
        reject_unknown_keys(s, "synth.",
                            {"n_fields", "values_per_field", "n_samples", "planted_pairs",
                             "noise", "seed"});
        cfg.synth.n_fields = fetch<std::size_t>(s, "synth.", "n_fields", cfg.synth.n_fields);
        cfg.synth.values_per_field =
            fetch<std::size_t>(s, "synth.", "values_per_field", cfg.synth.values_per_field);
        cfg.synth.n_samples =
            fetch<std::size_t>(s, "synth.", "n_samples", cfg.synth.n_samples);
        cfg.synth.noise = fetch<double>(s, "synth.", "noise", cfg.synth.noise);
        cfg.synth.seed = fetch<std::uint64_t>(s, "synth.", "seed", cfg.synth.seed);
        if (s.contains("planted_pairs")) {
            cfg.synth.planted_pairs.clear();
            for (const auto& pair :
                 fetch<std::vector<std::vector<std::size_t>>>(s, "synth.", "planted_pairs", {})) {
                if (pair.size() != 2) {
                    throw ConfigError("config: synth.planted_pairs entries must be [i, j]");
                }
                cfg.synth.planted_pairs.emplace_back(pair[0], pair[1]);
            }
        }
    }
    return cfg;
}

// Config file (optional) + repeatable --set overrides + --seed shortcut. The
// seed flag retargets both train.seed and synth.seed, since each command
// consumes only one of them.
inline Config load_config(const std::string& path, const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed = std::nullopt) {
    nlohmann::json doc = nlohmann::json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config file: " + path);
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config file " + path + ": " + e.what());
        }
    }
    detail::apply_overrides(doc, overrides);
    if (seed) {
        doc["train"]["seed"] = *seed;
        doc["synth"]["seed"] = *seed;
    }
    return parse_config(doc);
}

}  // namespace fisel
