#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fisel/errors.hpp"

namespace fisel {

enum class FieldKind { categorical, numeric };

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::categorical;
};

using Schema = std::vector<FieldSpec>;

// Raw sample: label plus one raw string per schema field. Empty string means
// missing.
struct RawRow {
    int label = 0;
    std::vector<std::string> values;
};

inline constexpr const char* kOovToken = "__oov__";
inline constexpr const char* kMissingToken = "__missing__";
inline constexpr double kNaturalBase = 2.718281828459045235;

// Numeric bucketing: squared log for x > 2, bucket 1 otherwise. The log base
// is configurable; natural log is the default.
inline std::int64_t discretize_numeric(double x, double log_base = kNaturalBase) {
    if (!(x > 2.0)) return 1;
    const double lg = std::log(x) / std::log(log_base);
    return static_cast<std::int64_t>(std::floor(lg * lg));
}

// Raw field value -> vocabulary token. Missing (empty) gets its own token for
// both field kinds; numeric fields are bucketed first.
inline std::string field_token(const std::string& raw, FieldKind kind, double log_base,
                               const std::string& field_name) {
    if (raw.empty()) return kMissingToken;
    if (kind == FieldKind::categorical) return raw;
    std::size_t pos = 0;
    double x = 0.0;
    try {
        x = std::stod(raw, &pos);
    } catch (const std::exception&) {
        throw DataError("field '" + field_name + "': not a number: '" + raw + "'");
    }
    if (pos != raw.size() || !std::isfinite(x)) {
        throw DataError("field '" + field_name + "': not a finite number: '" + raw + "'");
    }
    return std::to_string(discretize_numeric(x, log_base));
}

class Vocabulary {
public:
    Vocabulary() = default;

    // Frequency counting over training rows only; tokens below min_count fold
    // into the per-field OOV slot (local id 0). The missing token is exempt
    // from folding.
    static Vocabulary build(const std::vector<RawRow>& train_rows, const Schema& schema,
                            std::size_t min_count, double log_base = kNaturalBase) {
        if (train_rows.empty()) throw DataError("build_vocabulary: empty input");
        Vocabulary vocab;
        vocab.schema_ = schema;
        vocab.min_count_ = min_count;
        vocab.log_base_ = log_base;
        const std::size_t n = schema.size();

        std::vector<std::unordered_map<std::string, std::size_t>> counts(n);
        std::vector<std::vector<std::string>> order(n);  // first-occurrence order
        for (const RawRow& row : train_rows) {
            if (row.values.size() != n) {
                const std::size_t k = std::min(row.values.size(), n);
                const std::string culprit =
                    row.values.size() > n ? "extra column after '" + schema[n - 1].name + "'"
                                          : "missing field '" + schema[k].name + "'";
                throw DataError("row has " + std::to_string(row.values.size()) +
                                " fields, schema has " + std::to_string(n) + ": " + culprit);
            }
            for (std::size_t f = 0; f < n; ++f) {
                const std::string tok =
                    field_token(row.values[f], schema[f].kind, log_base, schema[f].name);
                auto [it, inserted] = counts[f].try_emplace(tok, 0);
                if (inserted) order[f].push_back(tok);
                it->second += 1;
            }
        }

        vocab.value_maps_.resize(n);
        vocab.tokens_by_id_.resize(n);
        vocab.m_i_.resize(n);
        vocab.offsets_.resize(n);
        std::size_t offset = 0;
        for (std::size_t f = 0; f < n; ++f) {
            vocab.tokens_by_id_[f].push_back(kOovToken);  // local 0 reserved
            for (const std::string& tok : order[f]) {
                const bool keep = counts[f][tok] >= min_count || tok == kMissingToken;
                if (!keep) continue;
                vocab.value_maps_[f][tok] = vocab.tokens_by_id_[f].size();
                vocab.tokens_by_id_[f].push_back(tok);
            }
            vocab.m_i_[f] = vocab.tokens_by_id_[f].size();
            vocab.offsets_[f] = offset;
            offset += vocab.m_i_[f];
        }
        return vocab;
    }

    std::size_t n() const { return schema_.size(); }
    std::size_t m() const {
        return offsets_.empty() ? 0 : offsets_.back() + m_i_.back();
    }
    const Schema& schema() const { return schema_; }
    const std::vector<std::size_t>& field_sizes() const { return m_i_; }
    const std::vector<std::size_t>& offsets() const { return offsets_; }
    std::size_t min_count() const { return min_count_; }
    double log_base() const { return log_base_; }

    std::vector<std::string> field_names() const {
        std::vector<std::string> names;
        names.reserve(schema_.size());
        for (const FieldSpec& f : schema_) names.push_back(f.name);
        return names;
    }

    std::size_t field_of(std::size_t global_id) const {
        for (std::size_t f = offsets_.size(); f-- > 0;) {
            if (global_id >= offsets_[f]) return f;
        }
        throw DataError("field_of: id out of range");
    }

    // Global id for one raw field value; unseen tokens land on the OOV slot.
    std::size_t encode_value(std::size_t field, const std::string& raw) const {
        const std::string tok =
            field_token(raw, schema_[field].kind, log_base_, schema_[field].name);
        const auto& map = value_maps_[field];
        const auto it = map.find(tok);
        const std::size_t local = it == map.end() ? 0 : it->second;
        return offsets_[field] + local;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write vocabulary file: " + path);
        out << "#n\t" << n() << "\n";
        out << "#min_count\t" << min_count_ << "\n";
        char base[64];
        std::snprintf(base, sizeof base, "%.17g", log_base_);
        out << "#log_base\t" << base << "\n";
        for (std::size_t f = 0; f < n(); ++f) {
            out << "#field\t" << schema_[f].name << "\t"
                << (schema_[f].kind == FieldKind::numeric ? "numeric" : "categorical") << "\t"
                << m_i_[f] << "\t" << offsets_[f] << "\n";
        }
        for (std::size_t f = 0; f < n(); ++f) {
            for (std::size_t local = 1; local < tokens_by_id_[f].size(); ++local) {
                out << schema_[f].name << "\t" << tokens_by_id_[f][local] << "\t" << local
                    << "\n";
            }
        }
        if (!out) throw DataError("write failed: " + path);
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot read vocabulary file: " + path);
        Vocabulary vocab;
        std::unordered_map<std::string, std::size_t> field_index;
        std::string line;
        std::size_t declared_n = 0;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::vector<std::string> parts;
            std::size_t start = 0;
            while (true) {
                const std::size_t tab = line.find('\t', start);
                parts.push_back(line.substr(start, tab - start));
                if (tab == std::string::npos) break;
                start = tab + 1;
            }
            if (parts[0] == "#n") {
                declared_n = std::stoull(parts.at(1));
            } else if (parts[0] == "#min_count") {
                vocab.min_count_ = std::stoull(parts.at(1));
            } else if (parts[0] == "#log_base") {
                vocab.log_base_ = std::stod(parts.at(1));
            } else if (parts[0] == "#field") {
                FieldSpec spec;
                spec.name = parts.at(1);
                spec.kind =
                    parts.at(2) == "numeric" ? FieldKind::numeric : FieldKind::categorical;
                field_index[spec.name] = vocab.schema_.size();
                vocab.schema_.push_back(spec);
                vocab.m_i_.push_back(std::stoull(parts.at(3)));
                vocab.offsets_.push_back(std::stoull(parts.at(4)));
                vocab.value_maps_.emplace_back();
                vocab.tokens_by_id_.emplace_back(std::vector<std::string>{kOovToken});
            } else {
                if (parts.size() != 3) {
                    throw DataError("vocabulary line " + std::to_string(lineno) +
                                    ": expected field\\ttoken\\tlocal_id");
                }
                const auto it = field_index.find(parts[0]);
                if (it == field_index.end()) {
                    throw DataError("vocabulary line " + std::to_string(lineno) +
                                    ": unknown field '" + parts[0] + "'");
                }
                const std::size_t f = it->second;
                const std::size_t local = std::stoull(parts[2]);
                if (local != vocab.tokens_by_id_[f].size()) {
                    throw DataError("vocabulary line " + std::to_string(lineno) +
                                    ": non-contiguous local id");
                }
                vocab.value_maps_[f][parts[1]] = local;
                vocab.tokens_by_id_[f].push_back(parts[1]);
            }
        }
        if (declared_n != vocab.schema_.size()) {
            throw IntegrityError("vocabulary file " + path + ": declared n=" +
                                 std::to_string(declared_n) + " but found " +
                                 std::to_string(vocab.schema_.size()) + " fields");
        }
        for (std::size_t f = 0; f < vocab.schema_.size(); ++f) {
            if (vocab.tokens_by_id_[f].size() != vocab.m_i_[f]) {
                throw IntegrityError("vocabulary file " + path + ": field '" +
                                     vocab.schema_[f].name + "' has " +
                                     std::to_string(vocab.tokens_by_id_[f].size()) +
                                     " tokens, header says " + std::to_string(vocab.m_i_[f]));
            }
        }
        return vocab;
    }

private:
    Schema schema_;
    std::vector<std::unordered_map<std::string, std::size_t>> value_maps_;
    std::vector<std::vector<std::string>> tokens_by_id_;  // local id -> token
    std::vector<std::size_t> m_i_;
    std::vector<std::size_t> offsets_;
    std::size_t min_count_ = 1;
    double log_base_ = kNaturalBase;
};

inline Schema load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read schema file: " + path);
    Schema schema;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError("schema line " + std::to_string(lineno) +
                            ": expected name<TAB>kind");
        }
        FieldSpec spec;
        spec.name = line.substr(0, tab);
        const std::string kind = line.substr(tab + 1);
        if (kind == "categorical") {
            spec.kind = FieldKind::categorical;
        } else if (kind == "numeric") {
            spec.kind = FieldKind::numeric;
        } else {
            throw DataError("schema line " + std::to_string(lineno) + ": unknown kind '" +
                            kind + "'");
        }
        schema.push_back(spec);
    }
    if (schema.empty()) throw DataError("schema file is empty: " + path);
    return schema;
}

inline void save_schema(const Schema& schema, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write schema file: " + path);
    for (const FieldSpec& f : schema) {
        out << f.name << "\t" << (f.kind == FieldKind::numeric ? "numeric" : "categorical")
            << "\n";
    }
}

// TSV rows: integer label in {0,1} first, then one column per schema field.
inline std::vector<RawRow> load_tsv(const std::string& path, const Schema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read data file: " + path);
    std::vector<RawRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        RawRow row;
        std::size_t start = 0;
        std::size_t col = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            std::string cell = line.substr(start, tab - start);
            if (col == 0) {
                if (cell == "0") {
                    row.label = 0;
                } else if (cell == "1") {
                    row.label = 1;
                } else {
                    throw DataError("line " + std::to_string(lineno) + ": label '" + cell +
                                    "' is not 0/1");
                }
            } else {
                row.values.push_back(std::move(cell));
            }
            ++col;
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (row.values.size() != schema.size()) {
            throw DataError("line " + std::to_string(lineno) + ": " +
                            std::to_string(row.values.size()) + " fields, schema has " +
                            std::to_string(schema.size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("data file is empty: " + path);
    return rows;
}

}  // namespace fisel
