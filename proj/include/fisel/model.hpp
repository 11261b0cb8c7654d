#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fisel/dataset.hpp"
#include "fisel/errors.hpp"
#include "fisel/matrix.hpp"
#include "fisel/mlp.hpp"

namespace fisel {

// How a field pair contributes to the predictor input: the inner product of
// the two embeddings (one scalar per pair) or their flattened outer product
// (d*d values per pair, gated by one shared mask entry).
enum class InteractionOp { inner, outer };

inline std::size_t pair_count(std::size_t n) { return n * (n - 1) / 2; }

inline std::size_t triple_count(std::size_t n) {
    return n < 3 ? 0 : n * (n - 1) * (n - 2) / 6;
}

// Rank of (i, j), i < j, in lexicographic order over all pairs from n fields.
inline std::size_t pair_index(std::size_t i, std::size_t j, std::size_t n) {
    return i * (2 * n - i - 1) / 2 + (j - i - 1);
}

inline std::vector<std::pair<std::size_t, std::size_t>> make_pairs(std::size_t n) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(pair_count(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) out.emplace_back(i, j);
    return out;
}

inline std::vector<std::array<std::size_t, 3>> make_triples(std::size_t n) {
    std::vector<std::array<std::size_t, 3>> out;
    out.reserve(triple_count(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            for (std::size_t k = j + 1; k < n; ++k) out.push_back({i, j, k});
    return out;
}

// Mean binary cross entropy; probabilities are clamped to [1e-7, 1 - 1e-7]
// before the log so saturated predictions stay finite.
inline double logloss(const Matrix& probs, const std::vector<double>& labels) {
    if (probs.cols() != 1 || probs.rows() != labels.size() || labels.empty()) {
        throw ShapeError("logloss: probs " + probs.shape_str() + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double p = std::min(std::max(probs[i], 1e-7), 1.0 - 1e-7);
        sum += labels[i] > 0.5 ? -std::log(p) : -std::log(1.0 - p);
    }
    return sum / static_cast<double>(labels.size());
}

// Gradient of the mean logloss with respect to the pre-sigmoid logits.
inline Matrix logloss_dlogit(const Matrix& probs, const std::vector<double>& labels) {
    if (probs.cols() != 1 || probs.rows() != labels.size() || labels.empty()) {
        throw ShapeError("logloss_dlogit: probs " + probs.shape_str() + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    Matrix d(probs.rows(), 1);
    const double inv = 1.0 / static_cast<double>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        d[i] = (probs[i] - labels[i]) * inv;
    }
    return d;
}

// Embedding table + gated feature interactions + MLP head, with a manual
// backward pass. The forward input to the head is
//   [ e_1 .. e_n | mask .* interactions ]
// where the mask is supplied per sample and per pair (and per triple when
// third-order terms are enabled), so backward() can also report the loss
// gradient with respect to each mask entry.
class Model {
public:
    struct Trace {
        std::size_t batch = 0;
        std::vector<std::uint32_t> ids;  // batch x n, row-major
        Matrix emb;                      // batch x (n*d), gathered embeddings
        Matrix inter;                    // batch x P raw pair values (inner op)
        Matrix inter3;                   // batch x T raw triple values
        Matrix mask;                     // batch x P
        Matrix mask3;                    // batch x T
        Mlp::Trace mlp;
    };

    Model() = default;

    Model(std::size_t m, std::size_t n, std::size_t d,
          const std::vector<std::size_t>& hidden, InteractionOp op, int order,
          std::mt19937_64& rng)
        : m_(m), n_(n), d_(d), op_(op), order_(order), pairs_(make_pairs(n)) {
        if (m == 0 || n < 2 || d == 0) {
            throw ConfigError("model needs m >= 1, n >= 2, d >= 1 (got m=" +
                              std::to_string(m) + ", n=" + std::to_string(n) +
                              ", d=" + std::to_string(d) + ")");
        }
        if (order != 2 && order != 3) {
            throw ConfigError("interaction order must be 2 or 3, got " +
                              std::to_string(order));
        }
        if (order == 3 && op == InteractionOp::outer) {
            throw ConfigError("outer-product interactions support order 2 only");
        }
        if (order == 3) triples_ = make_triples(n);
        embedding_.value = Matrix(m, d);
        embedding_.grad = Matrix(m, d);
        std::uniform_real_distribution<double> dist(-0.01, 0.01);
        for (std::size_t i = 0; i < embedding_.value.size(); ++i) {
            embedding_.value[i] = dist(rng);
        }
        mlp_ = Mlp(n * d + interaction_width(), hidden, 1, /*use_bias=*/true, rng);
    }

    std::size_t m() const { return m_; }
    std::size_t n() const { return n_; }
    std::size_t d() const { return d_; }
    InteractionOp op() const { return op_; }
    int order() const { return order_; }
    std::size_t n_pairs() const { return pairs_.size(); }
    std::size_t n_triples() const { return triples_.size(); }
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const { return pairs_; }
    const std::vector<std::array<std::size_t, 3>>& triples() const { return triples_; }

    std::size_t interaction_width() const {
        if (op_ == InteractionOp::outer) return pairs_.size() * d_ * d_;
        return pairs_.size() + triples_.size();
    }

    // Per-sample predicted probabilities, batch x 1.
    Matrix forward(const EncodedBatch& batch, const Matrix& mask,
                   const Matrix* mask3 = nullptr, Trace* trace = nullptr) const {
        check_batch(batch);
        if (mask.rows() != batch.size || mask.cols() != pairs_.size()) {
            throw ShapeError("mask " + mask.shape_str() + ", expected " +
                             std::to_string(batch.size) + "x" +
                             std::to_string(pairs_.size()));
        }
        if (order_ == 3) {
            if (!mask3 || mask3->rows() != batch.size || mask3->cols() != triples_.size()) {
                throw ShapeError("third-order mask missing or mis-shaped for " +
                                 std::to_string(triples_.size()) + " triples");
            }
        } else if (mask3) {
            throw ShapeError("third-order mask supplied to an order-2 model");
        }

        const std::size_t B = batch.size;
        Matrix emb(B, n_ * d_);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t f = 0; f < n_; ++f) {
                const std::uint32_t id = batch.id(b, f);
                for (std::size_t r = 0; r < d_; ++r) {
                    emb(b, f * d_ + r) = embedding_.value(id, r);
                }
            }
        }

        Matrix x(B, n_ * d_ + interaction_width());
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < n_ * d_; ++c) x(b, c) = emb(b, c);
        }
        const std::size_t base = n_ * d_;
        Matrix inter;
        Matrix inter3;
        if (op_ == InteractionOp::inner) {
            inter = Matrix(B, pairs_.size());
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t p = 0; p < pairs_.size(); ++p) {
                    const auto [i, j] = pairs_[p];
                    double dot = 0.0;
                    for (std::size_t r = 0; r < d_; ++r) {
                        dot += emb(b, i * d_ + r) * emb(b, j * d_ + r);
                    }
                    inter(b, p) = dot;
                    x(b, base + p) = mask(b, p) * dot;
                }
            }
            if (order_ == 3) {
                inter3 = Matrix(B, triples_.size());
                const std::size_t base3 = base + pairs_.size();
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t t = 0; t < triples_.size(); ++t) {
                        const auto [i, j, k] = triples_[t];
                        double prod = 0.0;
                        for (std::size_t r = 0; r < d_; ++r) {
                            prod += emb(b, i * d_ + r) * emb(b, j * d_ + r) *
                                    emb(b, k * d_ + r);
                        }
                        inter3(b, t) = prod;
                        x(b, base3 + t) = (*mask3)(b, t) * prod;
                    }
                }
            }
        } else {
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t p = 0; p < pairs_.size(); ++p) {
                    const auto [i, j] = pairs_[p];
                    const std::size_t c0 = base + p * d_ * d_;
                    for (std::size_t u = 0; u < d_; ++u) {
                        for (std::size_t v = 0; v < d_; ++v) {
                            x(b, c0 + u * d_ + v) =
                                mask(b, p) * emb(b, i * d_ + u) * emb(b, j * d_ + v);
                        }
                    }
                }
            }
        }

        Matrix logits = mlp_.forward(x, trace ? &trace->mlp : nullptr);
        Matrix probs(B, 1);
        for (std::size_t b = 0; b < B; ++b) probs[b] = sigmoid(logits[b]);

        if (trace) {
            trace->batch = B;
            trace->ids.assign(batch.ids.begin(), batch.ids.end());
            trace->emb = std::move(emb);
            trace->inter = std::move(inter);
            trace->inter3 = std::move(inter3);
            trace->mask = mask;
            if (order_ == 3) trace->mask3 = *mask3;
        }
        return probs;
    }

    // Accumulates embedding and head gradients from d(loss)/d(logit). When
    // d_mask / d_mask3 are given they receive d(loss)/d(mask entry), which is
    // what the selection networks backpropagate through.
    void backward(const Trace& trace, const Matrix& d_logit,
                  Matrix* d_mask = nullptr, Matrix* d_mask3 = nullptr) {
        const std::size_t B = trace.batch;
        if (d_logit.rows() != B || d_logit.cols() != 1) {
            throw ShapeError("d_logit " + d_logit.shape_str() + ", expected " +
                             std::to_string(B) + "x1");
        }
        Matrix d_x = mlp_.backward(trace.mlp, d_logit);

        Matrix d_emb(B, n_ * d_);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < n_ * d_; ++c) d_emb(b, c) = d_x(b, c);
        }
        const std::size_t base = n_ * d_;
        if (d_mask) *d_mask = Matrix(B, pairs_.size());
        if (d_mask3) *d_mask3 = Matrix(B, triples_.size());

        if (op_ == InteractionOp::inner) {
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t p = 0; p < pairs_.size(); ++p) {
                    const auto [i, j] = pairs_[p];
                    const double up = d_x(b, base + p);
                    if (d_mask) (*d_mask)(b, p) = up * trace.inter(b, p);
                    const double d_raw = up * trace.mask(b, p);
                    for (std::size_t r = 0; r < d_; ++r) {
                        d_emb(b, i * d_ + r) += d_raw * trace.emb(b, j * d_ + r);
                        d_emb(b, j * d_ + r) += d_raw * trace.emb(b, i * d_ + r);
                    }
                }
            }
            if (order_ == 3) {
                const std::size_t base3 = base + pairs_.size();
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t t = 0; t < triples_.size(); ++t) {
                        const auto [i, j, k] = triples_[t];
                        const double up = d_x(b, base3 + t);
                        if (d_mask3) (*d_mask3)(b, t) = up * trace.inter3(b, t);
                        const double d_raw = up * trace.mask3(b, t);
                        for (std::size_t r = 0; r < d_; ++r) {
                            const double ei = trace.emb(b, i * d_ + r);
                            const double ej = trace.emb(b, j * d_ + r);
                            const double ek = trace.emb(b, k * d_ + r);
                            d_emb(b, i * d_ + r) += d_raw * ej * ek;
                            d_emb(b, j * d_ + r) += d_raw * ei * ek;
                            d_emb(b, k * d_ + r) += d_raw * ei * ej;
                        }
                    }
                }
            }
        } else {
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t p = 0; p < pairs_.size(); ++p) {
                    const auto [i, j] = pairs_[p];
                    const std::size_t c0 = base + p * d_ * d_;
                    double dm = 0.0;
                    for (std::size_t u = 0; u < d_; ++u) {
                        for (std::size_t v = 0; v < d_; ++v) {
                            const double up = d_x(b, c0 + u * d_ + v);
                            const double ei = trace.emb(b, i * d_ + u);
                            const double ej = trace.emb(b, j * d_ + v);
                            dm += up * ei * ej;
                            const double d_raw = up * trace.mask(b, p);
                            d_emb(b, i * d_ + u) += d_raw * ej;
                            d_emb(b, j * d_ + v) += d_raw * ei;
                        }
                    }
                    if (d_mask) (*d_mask)(b, p) = dm;
                }
            }
        }

        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t f = 0; f < n_; ++f) {
                const std::uint32_t id = trace.ids[b * n_ + f];
                for (std::size_t r = 0; r < d_; ++r) {
                    embedding_.grad(id, r) += d_emb(b, f * d_ + r);
                }
            }
        }
    }

    GradSlot& embedding() { return embedding_; }
    const GradSlot& embedding() const { return embedding_; }
    Mlp& mlp() { return mlp_; }
    const Mlp& mlp() const { return mlp_; }

    std::vector<GradSlot*> slots() {
        std::vector<GradSlot*> out{&embedding_};
        for (auto* s : mlp_.slots()) out.push_back(s);
        return out;
    }

    std::size_t param_count() const { return embedding_.size() + mlp_.param_count(); }

    void zero_grad() {
        for (auto* s : slots()) s->zero_grad();
    }

private:
    void check_batch(const EncodedBatch& batch) const {
        if (batch.size == 0) throw ShapeError("forward on an empty batch");
        if (batch.n_fields != n_) {
            throw ShapeError("batch has " + std::to_string(batch.n_fields) +
                             " fields, model expects " + std::to_string(n_));
        }
        for (std::uint32_t id : batch.ids) {
            if (id >= m_) {
                throw IntegrityError("embedding id " + std::to_string(id) +
                                     " out of range for table of " + std::to_string(m_));
            }
        }
    }

    std::size_t m_ = 0;
    std::size_t n_ = 0;
    std::size_t d_ = 0;
    InteractionOp op_ = InteractionOp::inner;
    int order_ = 2;
    std::vector<std::pair<std::size_t, std::size_t>> pairs_;
    std::vector<std::array<std::size_t, 3>> triples_;
    GradSlot embedding_;  // m x d
    Mlp mlp_;
};

}  // namespace fisel
