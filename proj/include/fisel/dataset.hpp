#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fisel/errors.hpp"
#include "fisel/vocab.hpp"

namespace fisel {

struct EncodedSample {
    std::vector<std::uint32_t> value_ids;  // one global id per field, field order fixed
    std::uint8_t label = 0;
};

// Struct-of-arrays mini-batch view used by the numeric path.
struct EncodedBatch {
    std::size_t size = 0;
    std::size_t n_fields = 0;
    std::vector<std::uint32_t> ids;  // size * n_fields, row-major
    std::vector<double> labels;

    std::uint32_t id(std::size_t sample, std::size_t field) const {
        return ids[sample * n_fields + field];
    }
};

inline EncodedSample encode_record(const RawRow& row, const Vocabulary& vocab) {
    if (row.values.size() != vocab.n()) {
        throw DataError("encode_record: row has " + std::to_string(row.values.size()) +
                        " fields, vocabulary has " + std::to_string(vocab.n()));
    }
    EncodedSample sample;
    sample.label = static_cast<std::uint8_t>(row.label);
    sample.value_ids.reserve(vocab.n());
    for (std::size_t f = 0; f < vocab.n(); ++f) {
        sample.value_ids.push_back(
            static_cast<std::uint32_t>(vocab.encode_value(f, row.values[f])));
    }
    return sample;
}

inline std::vector<EncodedSample> encode_rows(const std::vector<RawRow>& rows,
                                              const Vocabulary& vocab) {
    std::vector<EncodedSample> out;
    out.reserve(rows.size());
    for (const RawRow& r : rows) out.push_back(encode_record(r, vocab));
    return out;
}

struct SplitRatios {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;

    void validate() const {
        if (!(train > 0.0 && validation > 0.0 && test > 0.0)) {
            throw ConfigError("split ratios must be positive");
        }
        if (std::abs(train + validation + test - 1.0) > 1e-9) {
            throw ConfigError("split ratios must sum to 1");
        }
    }
};

template <typename Sample>
struct Splits {
    std::vector<Sample> train;
    std::vector<Sample> validation;
    std::vector<Sample> test;
};

using DatasetSplits = Splits<EncodedSample>;

// Seeded shuffle, then cut: floor counts for validation and test, remainder
// to train.
template <typename Sample>
Splits<Sample> split_samples(std::vector<Sample> samples, const SplitRatios& ratios,
                             std::uint64_t seed) {
    ratios.validate();
    if (samples.size() < 3) {
        throw DataError("split: need at least 3 samples, got " +
                        std::to_string(samples.size()));
    }
    std::mt19937_64 rng(seed);
    std::shuffle(samples.begin(), samples.end(), rng);
    const std::size_t total = samples.size();
    const std::size_t n_val = static_cast<std::size_t>(
        std::floor(static_cast<double>(total) * ratios.validation));
    const std::size_t n_test =
        static_cast<std::size_t>(std::floor(static_cast<double>(total) * ratios.test));
    const std::size_t n_train = total - n_val - n_test;
    Splits<Sample> out;
    out.train.assign(samples.begin(), samples.begin() + n_train);
    out.validation.assign(samples.begin() + n_train, samples.begin() + n_train + n_val);
    out.test.assign(samples.begin() + n_train + n_val, samples.end());
    return out;
}

// Deterministic mini-batch iterator. Each epoch reshuffles from the stream's
// own RNG; the final partial batch is retained. next_cycling() restarts
// transparently, so a short validation stream can pair with a longer
// training stream.
class BatchStream {
public:
    BatchStream(const std::vector<EncodedSample>* samples, std::size_t n_fields,
                std::size_t batch_size, std::uint64_t seed)
        : samples_(samples), n_fields_(n_fields), batch_size_(batch_size), rng_(seed) {
        if (batch_size_ == 0) throw ConfigError("batch_size must be >= 1");
        indices_.resize(samples_->size());
        std::iota(indices_.begin(), indices_.end(), 0);
        pos_ = indices_.size();  // force a shuffle on first use
    }

    void start_epoch() {
        std::shuffle(indices_.begin(), indices_.end(), rng_);
        pos_ = 0;
    }

    std::optional<EncodedBatch> next_in_epoch() {
        if (pos_ >= indices_.size()) return std::nullopt;
        return take();
    }

    EncodedBatch next_cycling() {
        if (pos_ >= indices_.size()) start_epoch();
        return take();
    }

    std::size_t batches_per_epoch() const {
        return (indices_.size() + batch_size_ - 1) / batch_size_;
    }

private:
    EncodedBatch take() {
        const std::size_t count = std::min(batch_size_, indices_.size() - pos_);
        EncodedBatch batch;
        batch.size = count;
        batch.n_fields = n_fields_;
        batch.ids.resize(count * n_fields_);
        batch.labels.resize(count);
        for (std::size_t s = 0; s < count; ++s) {
            const EncodedSample& sample = (*samples_)[indices_[pos_ + s]];
            batch.labels[s] = sample.label;
            for (std::size_t f = 0; f < n_fields_; ++f) {
                batch.ids[s * n_fields_ + f] = sample.value_ids[f];
            }
        }
        pos_ += count;
        return batch;
    }

    const std::vector<EncodedSample>* samples_;
    std::size_t n_fields_;
    std::size_t batch_size_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> indices_;
    std::size_t pos_ = 0;
};

// Whole split as one batch list in stored order (no shuffle); used by
// evaluation and keep-ratio scans.
inline std::vector<EncodedBatch> fixed_batches(const std::vector<EncodedSample>& samples,
                                               std::size_t n_fields,
                                               std::size_t batch_size) {
    std::vector<EncodedBatch> out;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, samples.size() - start);
        EncodedBatch batch;
        batch.size = count;
        batch.n_fields = n_fields;
        batch.ids.resize(count * n_fields);
        batch.labels.resize(count);
        for (std::size_t s = 0; s < count; ++s) {
            const EncodedSample& sample = samples[start + s];
            batch.labels[s] = sample.label;
            for (std::size_t f = 0; f < n_fields; ++f) {
                batch.ids[s * n_fields + f] = sample.value_ids[f];
            }
        }
        out.push_back(std::move(batch));
    }
    return out;
}

inline void save_encoded(const std::vector<EncodedSample>& samples, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write encoded split: " + path);
    for (const EncodedSample& s : samples) {
        out << static_cast<int>(s.label);
        for (std::uint32_t id : s.value_ids) out << "\t" << id;
        out << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

inline std::vector<EncodedSample> load_encoded(const std::string& path, std::size_t n_fields) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read encoded split: " + path);
    std::vector<EncodedSample> samples;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        EncodedSample s;
        std::istringstream ss(line);
        int label = -1;
        ss >> label;
        if (label < 0 || label > 1) {
            throw DataError(path + " line " + std::to_string(lineno) + ": bad label");
        }
        s.label = static_cast<std::uint8_t>(label);
        std::uint32_t id = 0;
        while (ss >> id) s.value_ids.push_back(id);
        if (s.value_ids.size() != n_fields) {
            throw DataError(path + " line " + std::to_string(lineno) + ": expected " +
                            std::to_string(n_fields) + " ids, got " +
                            std::to_string(s.value_ids.size()));
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace fisel
