#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fisel/dataset.hpp"
#include "fisel/errors.hpp"
#include "fisel/matrix.hpp"
#include "fisel/mlp.hpp"
#include "fisel/model.hpp"

namespace fisel {

// Which grain the interaction gates operate at. Hybrid blends the field- and
// value-level gates through a learned per-pair mixing weight; the pure grains
// pin the mask to one side exactly (no blending arithmetic at all).
enum class Grain { hybrid, field, value };

inline Grain parse_grain(const std::string& s) {
    if (s == "hybrid") return Grain::hybrid;
    if (s == "field") return Grain::field;
    if (s == "value") return Grain::value;
    throw ConfigError("unknown grain '" + s + "' (expected hybrid|field|value)");
}

inline const char* grain_name(Grain g) {
    switch (g) {
        case Grain::hybrid: return "hybrid";
        case Grain::field: return "field";
        default: return "value";
    }
}

// A gate network scores index tuples with a diagonal bilinear (or t-linear)
// form over learned factor rows:
//   logit(ids) = sum_r sigma[r] * prod_s f(E[ids_s])[r]
// Only the looked-up rows are ever evaluated, so memory and parameter count
// stay linear in the number of rows; the full rows^t gate tensor exists only
// inside dense_reconstruct_oracle.
class GateNet {
public:
    GateNet() = default;

    GateNet(std::size_t rows, std::size_t d_hat, std::size_t d_prime,
            std::mt19937_64& rng, const std::vector<std::size_t>* hidden = nullptr,
            bool bias = true)
        : d_hat_(d_hat), d_prime_(d_prime) {
        if (rows == 0 || d_hat == 0 || d_prime == 0) {
            throw ConfigError("gate net needs rows, d_hat, d_prime all >= 1");
        }
        embedding_.value = Matrix(rows, d_hat);
        embedding_.grad = Matrix(rows, d_hat);
        std::uniform_real_distribution<double> dist(-0.1, 0.1);
        for (std::size_t i = 0; i < embedding_.value.size(); ++i) {
            embedding_.value[i] = dist(rng);
        }
        const std::vector<std::size_t> default_hidden{2 * d_prime};
        net_ = Mlp(d_hat, hidden ? *hidden : default_hidden, d_prime, bias, rng);
        sigma_.value = Matrix(1, d_prime);
        sigma_.value.fill(1.0);
        sigma_.grad = Matrix(1, d_prime);
    }

    std::size_t rows() const { return embedding_.value.rows(); }
    std::size_t d_hat() const { return d_hat_; }
    std::size_t d_prime() const { return d_prime_; }

    // Factor rows f(E[row_ids]) as a (|row_ids| x d') matrix.
    Matrix factors(const std::vector<std::uint32_t>& row_ids, Mlp::Trace* trace = nullptr) const {
        Matrix x(row_ids.size(), d_hat_);
        for (std::size_t i = 0; i < row_ids.size(); ++i) {
            if (row_ids[i] >= rows()) {
                throw IntegrityError("gate row " + std::to_string(row_ids[i]) +
                                     " out of range for " + std::to_string(rows()));
            }
            for (std::size_t c = 0; c < d_hat_; ++c) x(i, c) = embedding_.value(row_ids[i], c);
        }
        return net_.forward(x, trace);
    }

    // Diagonal-core contraction over the tuple's factor rows.
    double logit(const std::vector<std::uint32_t>& ids) const {
        const Matrix u = factors(ids);
        double out = 0.0;
        for (std::size_t r = 0; r < d_prime_; ++r) {
            double prod = sigma_.value[r];
            for (std::size_t s = 0; s < ids.size(); ++s) prod *= u(s, r);
            out += prod;
        }
        return out;
    }

    // Accumulates d(logit)/d{E rows, net params, sigma} scaled by `upstream`.
    void logit_backward(const std::vector<std::uint32_t>& ids, double upstream) {
        Mlp::Trace trace;
        const Matrix u = factors(ids, &trace);
        const std::size_t t = ids.size();
        Matrix du(t, d_prime_);
        for (std::size_t r = 0; r < d_prime_; ++r) {
            double all = 1.0;
            for (std::size_t s = 0; s < t; ++s) all *= u(s, r);
            sigma_.grad[r] += upstream * all;
            for (std::size_t s = 0; s < t; ++s) {
                double others = 1.0;
                for (std::size_t o = 0; o < t; ++o) {
                    if (o != s) others *= u(o, r);
                }
                du(s, r) = upstream * sigma_.value[r] * others;
            }
        }
        const Matrix dx = net_.backward(trace, du);
        for (std::size_t s = 0; s < t; ++s) {
            for (std::size_t c = 0; c < d_hat_; ++c) {
                embedding_.grad(ids[s], c) += dx(s, c);
            }
        }
    }

    GradSlot& embedding() { return embedding_; }
    const GradSlot& embedding() const { return embedding_; }
    GradSlot& sigma() { return sigma_; }
    const GradSlot& sigma() const { return sigma_; }
    Mlp& net() { return net_; }
    const Mlp& net() const { return net_; }

    std::vector<GradSlot*> slots() {
        std::vector<GradSlot*> out{&embedding_};
        for (auto* s : net_.slots()) out.push_back(s);
        out.push_back(&sigma_);
        return out;
    }

    std::size_t param_count() const {
        return embedding_.size() + net_.param_count() + sigma_.size();
    }

private:
    std::size_t d_hat_ = 0;
    std::size_t d_prime_ = 0;
    GradSlot embedding_;  // rows x d_hat
    Mlp net_;             // d_hat -> d_prime
    GradSlot sigma_;      // 1 x d_prime diagonal core
};

// Value-level gate: one factor row per vocabulary value, with the field
// boundaries kept so same-field lookups can be rejected.
class ValueSelectionNet : public GateNet {
public:
    ValueSelectionNet() = default;

    ValueSelectionNet(const std::vector<std::size_t>& field_sizes, std::size_t d_hat,
                      std::size_t d_prime, std::mt19937_64& rng,
                      const std::vector<std::size_t>* hidden = nullptr, bool bias = true)
        : GateNet(total(field_sizes), d_hat, d_prime, rng, hidden, bias) {
        offsets_.reserve(field_sizes.size());
        std::size_t acc = 0;
        for (std::size_t s : field_sizes) {
            offsets_.push_back(acc);
            acc += s;
        }
    }

    std::size_t n_fields() const { return offsets_.size(); }

    std::size_t field_of(std::uint32_t id) const {
        if (id >= rows()) {
            throw IntegrityError("value id " + std::to_string(id) + " out of range");
        }
        const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), id);
        return static_cast<std::size_t>(it - offsets_.begin()) - 1;
    }

    const std::vector<std::size_t>& offsets() const { return offsets_; }

private:
    static std::size_t total(const std::vector<std::size_t>& sizes) {
        std::size_t acc = 0;
        for (std::size_t s : sizes) acc += s;
        return acc;
    }

    std::vector<std::size_t> offsets_;
};

// Field-level gate: one factor row per field.
class FieldSelectionNet : public GateNet {
public:
    FieldSelectionNet() = default;
    FieldSelectionNet(std::size_t n_fields, std::size_t d_hat, std::size_t d_prime,
                      std::mt19937_64& rng,
                      const std::vector<std::size_t>* hidden = nullptr, bool bias = true)
        : GateNet(n_fields, d_hat, d_prime, rng, hidden, bias) {}
};

inline double value_gate_logit(std::uint32_t id_a, std::uint32_t id_b,
                               const ValueSelectionNet& net) {
    if (net.field_of(id_a) == net.field_of(id_b)) {
        throw ContractError("value gate needs ids from two distinct fields, got " +
                            std::to_string(id_a) + " and " + std::to_string(id_b));
    }
    return net.logit({id_a, id_b});
}

inline double field_gate_logit(std::size_t i, std::size_t j, const FieldSelectionNet& net) {
    if (i == j) {
        throw ContractError("field gate is defined on distinct fields, got i == j == " +
                            std::to_string(i));
    }
    return net.logit({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)});
}

inline double general_order_logit(const std::vector<std::uint32_t>& ids,
                                  const ValueSelectionNet& net) {
    if (ids.size() < 2) {
        throw ContractError("general order gate needs at least 2 ids, got " +
                            std::to_string(ids.size()));
    }
    std::vector<std::size_t> fields;
    for (std::uint32_t id : ids) fields.push_back(net.field_of(id));
    std::sort(fields.begin(), fields.end());
    if (std::adjacent_find(fields.begin(), fields.end()) != fields.end()) {
        throw ContractError("general order gate needs ids from pairwise-distinct fields");
    }
    return net.logit(ids);
}

// Unit step with identity backward; the binarization applied to gate logits.
inline double gate_binary(double logit) { return ste(logit); }

// Everything trained during the search phase: both gate nets plus the per-pair
// (and per-triple, at order 3) grain-mixing logits alpha.
class SelectionParams {
public:
    SelectionParams() = default;

    SelectionParams(const std::vector<std::size_t>& field_sizes, std::size_t d_hat,
                    std::size_t d_prime, int order, std::mt19937_64& rng,
                    const std::vector<std::size_t>* gate_hidden = nullptr,
                    bool gate_bias = true)
        : order_(order),
          value_(field_sizes, d_hat, d_prime, rng, gate_hidden, gate_bias),
          field_(field_sizes.size(), d_hat, d_prime, rng, gate_hidden, gate_bias),
          pairs_(make_pairs(field_sizes.size())) {
        if (order != 2 && order != 3) {
            throw ConfigError("selection order must be 2 or 3, got " + std::to_string(order));
        }
        if (field_sizes.size() < 2) {
            throw ConfigError("selection needs at least 2 fields");
        }
        alpha_.value = Matrix(1, pairs_.size());
        alpha_.grad = Matrix(1, pairs_.size());
        if (order == 3) {
            triples_ = make_triples(field_sizes.size());
            alpha3_.value = Matrix(1, triples_.size());
            alpha3_.grad = Matrix(1, triples_.size());
        }
    }

    int order() const { return order_; }
    std::size_t n_fields() const { return value_.n_fields(); }
    std::size_t n_pairs() const { return pairs_.size(); }
    std::size_t n_triples() const { return triples_.size(); }
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const { return pairs_; }
    const std::vector<std::array<std::size_t, 3>>& triples() const { return triples_; }

    ValueSelectionNet& value_net() { return value_; }
    const ValueSelectionNet& value_net() const { return value_; }
    FieldSelectionNet& field_net() { return field_; }
    const FieldSelectionNet& field_net() const { return field_; }
    GradSlot& alpha() { return alpha_; }
    const GradSlot& alpha() const { return alpha_; }
    GradSlot& alpha3() { return alpha3_; }
    const GradSlot& alpha3() const { return alpha3_; }

    std::vector<GradSlot*> slots() {
        std::vector<GradSlot*> out;
        for (auto* s : value_.slots()) out.push_back(s);
        for (auto* s : field_.slots()) out.push_back(s);
        out.push_back(&alpha_);
        if (order_ == 3) out.push_back(&alpha3_);
        return out;
    }

    std::size_t param_count() const {
        std::size_t count = value_.param_count() + field_.param_count() + alpha_.size();
        if (order_ == 3) count += alpha3_.size();
        return count;
    }

    void zero_grad() {
        for (auto* s : slots()) s->zero_grad();
    }

private:
    int order_ = 2;
    ValueSelectionNet value_;
    FieldSelectionNet field_;
    GradSlot alpha_;   // 1 x C(n,2) mixing logits
    GradSlot alpha3_;  // 1 x C(n,3), order 3 only
    std::vector<std::pair<std::size_t, std::size_t>> pairs_;
    std::vector<std::array<std::size_t, 3>> triples_;
};

inline std::size_t selection_param_count(const SelectionParams& sel) {
    return sel.param_count();
}

// Forward state of one search-phase mask evaluation, kept for the backward
// pass. Factor rows are computed once per unique value id in the batch.
struct SearchMask {
    Grain grain = Grain::hybrid;
    std::size_t batch = 0;
    Matrix mask;   // batch x P, entries in [0,1]
    Matrix mask3;  // batch x T (order 3)

    std::vector<std::uint32_t> uniq;  // sorted unique value ids in the batch
    std::vector<std::size_t> local;   // batch*n -> row index into uniq
    Mlp::Trace value_trace;
    Matrix value_factors;  // |uniq| x d'
    Mlp::Trace field_trace;
    Matrix field_factors;  // n x d'
    Matrix value_logit;    // batch x P
    Matrix field_logit;    // 1 x P
    Matrix value_bit;      // batch x P, STE of value_logit
    Matrix field_bit;      // 1 x P
    Matrix value_logit3, field_logit3, value_bit3, field_bit3;
};

namespace detail {

inline void check_batch_fields(const EncodedBatch& batch, const SelectionParams& sel) {
    if (batch.size == 0) throw ShapeError("selection mask on an empty batch");
    if (batch.n_fields != sel.n_fields()) {
        throw ShapeError("batch has " + std::to_string(batch.n_fields) +
                         " fields, selection expects " + std::to_string(sel.n_fields()));
    }
}

}  // namespace detail

// Relaxed per-sample mask: sigmoid(alpha) blends the binarized field-level
// gate with the binarized value-level gate of the sample's concrete ids. The
// pure grains skip the blend entirely, so their reductions are exact.
inline SearchMask hybrid_mask_search(const EncodedBatch& batch, const SelectionParams& sel,
                                     Grain grain = Grain::hybrid) {
    detail::check_batch_fields(batch, sel);
    const std::size_t B = batch.size;
    const std::size_t n = sel.n_fields();
    const std::size_t P = sel.n_pairs();
    const std::size_t dp = sel.value_net().d_prime();

    SearchMask out;
    out.grain = grain;
    out.batch = B;
    out.uniq.assign(batch.ids.begin(), batch.ids.end());
    std::sort(out.uniq.begin(), out.uniq.end());
    out.uniq.erase(std::unique(out.uniq.begin(), out.uniq.end()), out.uniq.end());
    out.local.resize(B * n);
    for (std::size_t i = 0; i < batch.ids.size(); ++i) {
        out.local[i] = static_cast<std::size_t>(
            std::lower_bound(out.uniq.begin(), out.uniq.end(), batch.ids[i]) -
            out.uniq.begin());
    }

    out.value_factors = sel.value_net().factors(out.uniq, &out.value_trace);
    std::vector<std::uint32_t> all_fields(n);
    for (std::size_t f = 0; f < n; ++f) all_fields[f] = static_cast<std::uint32_t>(f);
    out.field_factors = sel.field_net().factors(all_fields, &out.field_trace);

    const Matrix& sv = sel.value_net().sigma().value;
    const Matrix& sf = sel.field_net().sigma().value;

    out.field_logit = Matrix(1, P);
    out.field_bit = Matrix(1, P);
    for (std::size_t p = 0; p < P; ++p) {
        const auto [i, j] = sel.pairs()[p];
        double acc = 0.0;
        for (std::size_t r = 0; r < dp; ++r) {
            acc += sf[r] * out.field_factors(i, r) * out.field_factors(j, r);
        }
        out.field_logit[p] = acc;
        out.field_bit[p] = ste(acc);
    }

    out.value_logit = Matrix(B, P);
    out.value_bit = Matrix(B, P);
    out.mask = Matrix(B, P);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t p = 0; p < P; ++p) {
            const auto [i, j] = sel.pairs()[p];
            const std::size_t a = out.local[b * n + i];
            const std::size_t c = out.local[b * n + j];
            double acc = 0.0;
            for (std::size_t r = 0; r < dp; ++r) {
                acc += sv[r] * out.value_factors(a, r) * out.value_factors(c, r);
            }
            out.value_logit(b, p) = acc;
            out.value_bit(b, p) = ste(acc);
            switch (grain) {
                case Grain::hybrid: {
                    const double s = sigmoid(sel.alpha().value[p]);
                    out.mask(b, p) = s * out.field_bit[p] + (1.0 - s) * out.value_bit(b, p);
                    break;
                }
                case Grain::field:
                    out.mask(b, p) = out.field_bit[p];
                    break;
                case Grain::value:
                    out.mask(b, p) = out.value_bit(b, p);
                    break;
            }
        }
    }

    if (sel.order() == 3) {
        const std::size_t T = sel.n_triples();
        out.field_logit3 = Matrix(1, T);
        out.field_bit3 = Matrix(1, T);
        for (std::size_t t = 0; t < T; ++t) {
            const auto [i, j, k] = sel.triples()[t];
            double acc = 0.0;
            for (std::size_t r = 0; r < dp; ++r) {
                acc += sf[r] * out.field_factors(i, r) * out.field_factors(j, r) *
                       out.field_factors(k, r);
            }
            out.field_logit3[t] = acc;
            out.field_bit3[t] = ste(acc);
        }
        out.value_logit3 = Matrix(B, T);
        out.value_bit3 = Matrix(B, T);
        out.mask3 = Matrix(B, T);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t t = 0; t < T; ++t) {
                const auto [i, j, k] = sel.triples()[t];
                const std::size_t a = out.local[b * n + i];
                const std::size_t c = out.local[b * n + j];
                const std::size_t e = out.local[b * n + k];
                double acc = 0.0;
                for (std::size_t r = 0; r < dp; ++r) {
                    acc += sv[r] * out.value_factors(a, r) * out.value_factors(c, r) *
                           out.value_factors(e, r);
                }
                out.value_logit3(b, t) = acc;
                out.value_bit3(b, t) = ste(acc);
                switch (grain) {
                    case Grain::hybrid: {
                        const double s = sigmoid(sel.alpha3().value[t]);
                        out.mask3(b, t) =
                            s * out.field_bit3[t] + (1.0 - s) * out.value_bit3(b, t);
                        break;
                    }
                    case Grain::field:
                        out.mask3(b, t) = out.field_bit3[t];
                        break;
                    case Grain::value:
                        out.mask3(b, t) = out.value_bit3(b, t);
                        break;
                }
            }
        }
    }
    return out;
}

// Backward of hybrid_mask_search. alpha gets the exact blend derivative
// sigmoid'(alpha) * (field_bit - value_bit); the binarized gates pass the
// upstream straight through to their logits, which then flow into sigma, the
// factor nets, and the looked-up embedding rows.
inline void hybrid_mask_search_backward(const SearchMask& sm, const Matrix& d_mask,
                                        const Matrix* d_mask3, SelectionParams& sel) {
    const std::size_t B = sm.batch;
    const std::size_t n = sel.n_fields();
    const std::size_t P = sel.n_pairs();
    const std::size_t dp = sel.value_net().d_prime();
    if (d_mask.rows() != B || d_mask.cols() != P) {
        throw ShapeError("d_mask " + d_mask.shape_str() + ", expected " +
                         std::to_string(B) + "x" + std::to_string(P));
    }
    if (sel.order() == 3 && (!d_mask3 || d_mask3->rows() != B || d_mask3->cols() != sel.n_triples())) {
        throw ShapeError("third-order mask gradient missing or mis-shaped");
    }

    Matrix d_value_factors(sm.value_factors.rows(), dp);
    Matrix d_field_factors(sm.field_factors.rows(), dp);
    const Matrix& sv = sel.value_net().sigma().value;
    const Matrix& sf = sel.field_net().sigma().value;
    Matrix& d_sv = sel.value_net().sigma().grad;
    Matrix& d_sf = sel.field_net().sigma().grad;

    for (std::size_t p = 0; p < P; ++p) {
        const auto [i, j] = sel.pairs()[p];
        double d_flogit = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double up = d_mask(b, p);
            if (up == 0.0) continue;
            double d_vlogit = 0.0;
            switch (sm.grain) {
                case Grain::hybrid: {
                    const double s = sigmoid(sel.alpha().value[p]);
                    sel.alpha().grad[p] +=
                        up * s * (1.0 - s) * (sm.field_bit[p] - sm.value_bit(b, p));
                    d_flogit += up * s;
                    d_vlogit = up * (1.0 - s);
                    break;
                }
                case Grain::field:
                    d_flogit += up;
                    break;
                case Grain::value:
                    d_vlogit = up;
                    break;
            }
            if (d_vlogit != 0.0) {
                const std::size_t a = sm.local[b * n + i];
                const std::size_t c = sm.local[b * n + j];
                for (std::size_t r = 0; r < dp; ++r) {
                    const double ua = sm.value_factors(a, r);
                    const double uc = sm.value_factors(c, r);
                    d_sv[r] += d_vlogit * ua * uc;
                    d_value_factors(a, r) += d_vlogit * sv[r] * uc;
                    d_value_factors(c, r) += d_vlogit * sv[r] * ua;
                }
            }
        }
        if (d_flogit != 0.0) {
            for (std::size_t r = 0; r < dp; ++r) {
                const double gi = sm.field_factors(i, r);
                const double gj = sm.field_factors(j, r);
                d_sf[r] += d_flogit * gi * gj;
                d_field_factors(i, r) += d_flogit * sf[r] * gj;
                d_field_factors(j, r) += d_flogit * sf[r] * gi;
            }
        }
    }

    if (sel.order() == 3) {
        for (std::size_t t = 0; t < sel.n_triples(); ++t) {
            const auto [i, j, k] = sel.triples()[t];
            double d_flogit = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double up = (*d_mask3)(b, t);
                if (up == 0.0) continue;
                double d_vlogit = 0.0;
                switch (sm.grain) {
                    case Grain::hybrid: {
                        const double s = sigmoid(sel.alpha3().value[t]);
                        sel.alpha3().grad[t] +=
                            up * s * (1.0 - s) * (sm.field_bit3[t] - sm.value_bit3(b, t));
                        d_flogit += up * s;
                        d_vlogit = up * (1.0 - s);
                        break;
                    }
                    case Grain::field:
                        d_flogit += up;
                        break;
                    case Grain::value:
                        d_vlogit = up;
                        break;
                }
                if (d_vlogit != 0.0) {
                    const std::size_t a = sm.local[b * n + i];
                    const std::size_t c = sm.local[b * n + j];
                    const std::size_t e = sm.local[b * n + k];
                    for (std::size_t r = 0; r < dp; ++r) {
                        const double ua = sm.value_factors(a, r);
                        const double uc = sm.value_factors(c, r);
                        const double ue = sm.value_factors(e, r);
                        d_sv[r] += d_vlogit * ua * uc * ue;
                        d_value_factors(a, r) += d_vlogit * sv[r] * uc * ue;
                        d_value_factors(c, r) += d_vlogit * sv[r] * ua * ue;
                        d_value_factors(e, r) += d_vlogit * sv[r] * ua * uc;
                    }
                }
            }
            if (d_flogit != 0.0) {
                for (std::size_t r = 0; r < dp; ++r) {
                    const double gi = sm.field_factors(i, r);
                    const double gj = sm.field_factors(j, r);
                    const double gk = sm.field_factors(k, r);
                    d_sf[r] += d_flogit * gi * gj * gk;
                    d_field_factors(i, r) += d_flogit * sf[r] * gj * gk;
                    d_field_factors(j, r) += d_flogit * sf[r] * gi * gk;
                    d_field_factors(k, r) += d_flogit * sf[r] * gi * gj;
                }
            }
        }
    }

    const Matrix d_value_in = sel.value_net().net().backward(sm.value_trace, d_value_factors);
    for (std::size_t q = 0; q < sm.uniq.size(); ++q) {
        for (std::size_t c = 0; c < sel.value_net().d_hat(); ++c) {
            sel.value_net().embedding().grad(sm.uniq[q], c) += d_value_in(q, c);
        }
    }
    const Matrix d_field_in = sel.field_net().net().backward(sm.field_trace, d_field_factors);
    for (std::size_t f = 0; f < n; ++f) {
        for (std::size_t c = 0; c < sel.field_net().d_hat(); ++c) {
            sel.field_net().embedding().grad(f, c) += d_field_in(f, c);
        }
    }
}

// Mask source used during inference and retraining: no gradients, and the
// keep-all / drop-all overrides bypass the gate nets entirely.
class FrozenSelection {
public:
    enum class Override { none, keep_all, drop_all };

    int order = 2;
    std::size_t n_fields = 0;
    Override override_mode = Override::none;
    std::vector<std::uint8_t> alpha_star;   // per pair: 1 -> field gate decides
    std::vector<std::uint8_t> alpha_star3;  // per triple
    ValueSelectionNet value;
    FieldSelectionNet field;

    static FrozenSelection keep_all(std::size_t n, int order = 2) {
        FrozenSelection fr;
        fr.order = order;
        fr.n_fields = n;
        fr.override_mode = Override::keep_all;
        return fr;
    }

    static FrozenSelection drop_all(std::size_t n, int order = 2) {
        FrozenSelection fr;
        fr.order = order;
        fr.n_fields = n;
        fr.override_mode = Override::drop_all;
        return fr;
    }
};

// alpha_star[p] = 1 iff alpha[p] > 0 (strict); the pure grains freeze to the
// corresponding constant choice. Gate nets are deep-copied.
inline FrozenSelection freeze_selection(const SelectionParams& sel,
                                        Grain grain = Grain::hybrid) {
    FrozenSelection fr;
    fr.order = sel.order();
    fr.n_fields = sel.n_fields();
    fr.value = sel.value_net();
    fr.field = sel.field_net();
    // Frozen copies never receive gradients; start their buffers at exact zero
    // so downstream code can assert that retraining leaves them untouched.
    for (auto* s : fr.value.slots()) s->zero_grad();
    for (auto* s : fr.field.slots()) s->zero_grad();
    fr.alpha_star.resize(sel.n_pairs());
    for (std::size_t p = 0; p < sel.n_pairs(); ++p) {
        switch (grain) {
            case Grain::hybrid: fr.alpha_star[p] = sel.alpha().value[p] > 0.0 ? 1 : 0; break;
            case Grain::field: fr.alpha_star[p] = 1; break;
            case Grain::value: fr.alpha_star[p] = 0; break;
        }
    }
    if (sel.order() == 3) {
        fr.alpha_star3.resize(sel.n_triples());
        for (std::size_t t = 0; t < sel.n_triples(); ++t) {
            switch (grain) {
                case Grain::hybrid:
                    fr.alpha_star3[t] = sel.alpha3().value[t] > 0.0 ? 1 : 0;
                    break;
                case Grain::field: fr.alpha_star3[t] = 1; break;
                case Grain::value: fr.alpha_star3[t] = 0; break;
            }
        }
    }
    return fr;
}

// Exact binary mask: alpha_star selects which gate's bit each pair uses.
inline Matrix hybrid_mask_frozen(const EncodedBatch& batch, const FrozenSelection& fr) {
    if (batch.size == 0) throw ShapeError("selection mask on an empty batch");
    if (batch.n_fields != fr.n_fields) {
        throw ShapeError("batch has " + std::to_string(batch.n_fields) +
                         " fields, frozen selection expects " + std::to_string(fr.n_fields));
    }
    const std::size_t B = batch.size;
    const std::size_t n = fr.n_fields;
    const auto pairs = make_pairs(n);
    Matrix mask(B, pairs.size());
    if (fr.override_mode == FrozenSelection::Override::keep_all) {
        mask.fill(1.0);
        return mask;
    }
    if (fr.override_mode == FrozenSelection::Override::drop_all) {
        return mask;
    }

    std::vector<std::uint32_t> uniq(batch.ids.begin(), batch.ids.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    const Matrix vf = fr.value.factors(uniq);
    std::vector<std::uint32_t> all_fields(n);
    for (std::size_t f = 0; f < n; ++f) all_fields[f] = static_cast<std::uint32_t>(f);
    const Matrix gf = fr.field.factors(all_fields);
    const Matrix& sv = fr.value.sigma().value;
    const Matrix& sf = fr.field.sigma().value;
    const std::size_t dp = fr.value.d_prime();

    std::vector<double> field_bit(pairs.size());
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto [i, j] = pairs[p];
        double acc = 0.0;
        for (std::size_t r = 0; r < dp; ++r) acc += sf[r] * gf(i, r) * gf(j, r);
        field_bit[p] = ste(acc);
    }
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t p = 0; p < pairs.size(); ++p) {
            const auto [i, j] = pairs[p];
            if (fr.alpha_star[p]) {
                mask(b, p) = field_bit[p];
            } else {
                const std::uint32_t ia = batch.id(b, i);
                const std::uint32_t ic = batch.id(b, j);
                const std::size_t a = static_cast<std::size_t>(
                    std::lower_bound(uniq.begin(), uniq.end(), ia) - uniq.begin());
                const std::size_t c = static_cast<std::size_t>(
                    std::lower_bound(uniq.begin(), uniq.end(), ic) - uniq.begin());
                double acc = 0.0;
                for (std::size_t r = 0; r < dp; ++r) acc += sv[r] * vf(a, r) * vf(c, r);
                mask(b, p) = ste(acc);
            }
        }
    }
    return mask;
}

// Third-order companion of hybrid_mask_frozen.
inline Matrix hybrid_mask_frozen3(const EncodedBatch& batch, const FrozenSelection& fr) {
    if (fr.order != 3) throw ContractError("frozen selection holds no third-order gates");
    const std::size_t B = batch.size;
    const std::size_t n = fr.n_fields;
    const auto triples = make_triples(n);
    Matrix mask(B, triples.size());
    if (fr.override_mode == FrozenSelection::Override::keep_all) {
        mask.fill(1.0);
        return mask;
    }
    if (fr.override_mode == FrozenSelection::Override::drop_all) {
        return mask;
    }

    std::vector<std::uint32_t> uniq(batch.ids.begin(), batch.ids.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    const Matrix vf = fr.value.factors(uniq);
    std::vector<std::uint32_t> all_fields(n);
    for (std::size_t f = 0; f < n; ++f) all_fields[f] = static_cast<std::uint32_t>(f);
    const Matrix gf = fr.field.factors(all_fields);
    const Matrix& sv = fr.value.sigma().value;
    const Matrix& sf = fr.field.sigma().value;
    const std::size_t dp = fr.value.d_prime();

    for (std::size_t t = 0; t < triples.size(); ++t) {
        const auto [i, j, k] = triples[t];
        double facc = 0.0;
        for (std::size_t r = 0; r < dp; ++r) facc += sf[r] * gf(i, r) * gf(j, r) * gf(k, r);
        const double fbit = ste(facc);
        for (std::size_t b = 0; b < B; ++b) {
            if (fr.alpha_star3[t]) {
                mask(b, t) = fbit;
            } else {
                const std::size_t a = static_cast<std::size_t>(
                    std::lower_bound(uniq.begin(), uniq.end(), batch.id(b, i)) - uniq.begin());
                const std::size_t c = static_cast<std::size_t>(
                    std::lower_bound(uniq.begin(), uniq.end(), batch.id(b, j)) - uniq.begin());
                const std::size_t e = static_cast<std::size_t>(
                    std::lower_bound(uniq.begin(), uniq.end(), batch.id(b, k)) - uniq.begin());
                double acc = 0.0;
                for (std::size_t r = 0; r < dp; ++r) {
                    acc += sv[r] * vf(a, r) * vf(c, r) * vf(e, r);
                }
                mask(b, t) = ste(acc);
            }
        }
    }
    return mask;
}

// ---- dense reconstruction oracle (tests only) ------------------------------

// Number of times any dense gate tensor has been materialized; production
// paths must leave this untouched.
inline std::size_t& dense_oracle_invocations() {
    static std::size_t count = 0;
    return count;
}

constexpr std::size_t kDenseOracleMaxEntries = std::size_t{1} << 20;

// Materializes the full rows^t gate tensor (t=2 as a matrix, row-major
// otherwise). Guarded so it can never be mistaken for a production path.
inline std::vector<double> dense_reconstruct_oracle(const GateNet& net, int order) {
    if (order < 2) throw ContractError("dense oracle needs order >= 2");
    const std::size_t m = net.rows();
    std::size_t entries = 1;
    for (int s = 0; s < order; ++s) {
        if (entries > kDenseOracleMaxEntries / m) {
            throw ContractError("dense oracle refused: " + std::to_string(m) + "^" +
                                std::to_string(order) + " entries exceed the size guard");
        }
        entries *= m;
    }
    ++dense_oracle_invocations();

    std::vector<std::uint32_t> all(m);
    for (std::size_t i = 0; i < m; ++i) all[i] = static_cast<std::uint32_t>(i);
    const Matrix u = net.factors(all);
    const Matrix& sigma = net.sigma().value;
    const std::size_t dp = net.d_prime();

    std::vector<double> out(entries, 0.0);
    std::vector<std::size_t> idx(order, 0);
    for (std::size_t flat = 0; flat < entries; ++flat) {
        std::size_t rem = flat;
        for (int s = order - 1; s >= 0; --s) {
            idx[s] = rem % m;
            rem /= m;
        }
        double acc = 0.0;
        for (std::size_t r = 0; r < dp; ++r) {
            double prod = sigma[r];
            for (int s = 0; s < order; ++s) prod *= u(idx[s], r);
            acc += prod;
        }
        out[flat] = acc;
    }
    return out;
}

}  // namespace fisel
