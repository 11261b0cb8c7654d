#pragma once

#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fisel/errors.hpp"
#include "fisel/matrix.hpp"
#include "fisel/vocab.hpp"

namespace fisel {

struct SyntheticSpec {
    std::size_t n_fields = 6;
    std::size_t values_per_field = 10;
    std::size_t n_samples = 20000;
    std::vector<std::pair<std::size_t, std::size_t>> planted_pairs;
    double noise = 0.5;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_fields < 2) throw ConfigError("synth: n_fields must be >= 2");
        if (values_per_field < 2) throw ConfigError("synth: values_per_field must be >= 2");
        for (const auto& [i, j] : planted_pairs) {
            if (i >= j || j >= n_fields) {
                throw ConfigError("synth: planted pair (" + std::to_string(i) + "," +
                                  std::to_string(j) + ") must satisfy i < j < n_fields");
            }
        }
    }
};

// Planted-interaction dataset: labels follow Bernoulli(sigmoid(sum of pair
// table entries + noise * eps)), with one N(0,1) table per planted pair drawn
// at the seed. Ground truth travels in the descriptor.
struct SyntheticData {
    SyntheticSpec spec;
    std::vector<RawRow> rows;
    std::vector<Matrix> weight_tables;  // one per planted pair
    Schema schema;
};

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> value_dist(0, spec.values_per_field - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SyntheticData data;
    data.spec = spec;
    for (std::size_t f = 0; f < spec.n_fields; ++f) {
        data.schema.push_back({"f" + std::to_string(f), FieldKind::categorical});
    }
    for (std::size_t p = 0; p < spec.planted_pairs.size(); ++p) {
        Matrix w(spec.values_per_field, spec.values_per_field);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = normal(rng);
        data.weight_tables.push_back(std::move(w));
    }

    data.rows.reserve(spec.n_samples);
    std::vector<std::size_t> values(spec.n_fields);
    for (std::size_t s = 0; s < spec.n_samples; ++s) {
        RawRow row;
        row.values.reserve(spec.n_fields);
        for (std::size_t f = 0; f < spec.n_fields; ++f) {
            values[f] = value_dist(rng);
            row.values.push_back(std::to_string(values[f]));
        }
        double score = 0.0;
        for (std::size_t p = 0; p < spec.planted_pairs.size(); ++p) {
            const auto& [i, j] = spec.planted_pairs[p];
            score += data.weight_tables[p](values[i], values[j]);
        }
        score += spec.noise * normal(rng);
        row.label = unit(rng) < sigmoid(score) ? 1 : 0;
        data.rows.push_back(std::move(row));
    }
    return data;
}

inline void save_synthetic_tsv(const SyntheticData& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write synthetic data: " + path);
    for (const RawRow& row : data.rows) {
        out << row.label;
        for (const std::string& v : row.values) out << "\t" << v;
        out << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

inline void save_synthetic_descriptor(const SyntheticData& data, const std::string& path) {
    nlohmann::json desc;
    desc["n_fields"] = data.spec.n_fields;
    desc["values_per_field"] = data.spec.values_per_field;
    desc["n_samples"] = data.spec.n_samples;
    desc["noise"] = data.spec.noise;
    desc["seed"] = data.spec.seed;
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [i, j] : data.spec.planted_pairs) {
        pairs.push_back(nlohmann::json::array({i, j}));
    }
    desc["planted_pairs"] = pairs;
    nlohmann::json weights = nlohmann::json::array();
    for (const Matrix& w : data.weight_tables) {
        nlohmann::json table = nlohmann::json::array();
        for (std::size_t r = 0; r < w.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t c = 0; c < w.cols(); ++c) row.push_back(w(r, c));
            table.push_back(row);
        }
        weights.push_back(table);
    }
    desc["weights"] = weights;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write descriptor: " + path);
    out << desc.dump(2) << "\n";
}

}  // namespace fisel
