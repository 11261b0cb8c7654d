#pragma once

#include <cstddef>
#include <random>
#include <utility>
#include <vector>

#include "fisel/matrix.hpp"

namespace fisel {

// Plain MLP with ReLU hidden activations and a linear output layer. The
// backward pass is hand-written; forward() records the per-layer
// pre-activations needed to replay it.
class Mlp {
public:
    struct Trace {
        Matrix input;                 // batch x in
        std::vector<Matrix> pre;      // pre-activation per layer, batch x width
    };

    Mlp() = default;

    Mlp(std::size_t input_width, const std::vector<std::size_t>& hidden,
        std::size_t output_width, bool use_bias, std::mt19937_64& rng)
        : input_width_(input_width), output_width_(output_width), use_bias_(use_bias) {
        std::vector<std::size_t> widths;
        widths.push_back(input_width);
        widths.insert(widths.end(), hidden.begin(), hidden.end());
        widths.push_back(output_width);
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            const std::size_t fan_in = widths[l];
            const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> dist(-scale, scale);
            Matrix w(widths[l], widths[l + 1]);
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = dist(rng);
            weights_.emplace_back(std::move(w));
            biases_.emplace_back(Matrix(1, widths[l + 1]));
        }
    }

    std::size_t input_width() const { return input_width_; }
    std::size_t output_width() const { return output_width_; }
    std::size_t layer_count() const { return weights_.size(); }

    Matrix forward(const Matrix& x, Trace* trace = nullptr) const {
        if (x.cols() != input_width_) {
            throw ShapeError("mlp forward: input " + x.shape_str() + ", expected cols " +
                             std::to_string(input_width_));
        }
        if (trace) {
            trace->input = x;
            trace->pre.clear();
        }
        Matrix h = x;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            Matrix z = matmul(h, weights_[l].value);
            if (use_bias_) {
                for (std::size_t r = 0; r < z.rows(); ++r)
                    for (std::size_t c = 0; c < z.cols(); ++c)
                        z(r, c) += biases_[l].value(0, c);
            }
            if (trace) trace->pre.push_back(z);
            h = (l + 1 < weights_.size()) ? relu(z) : std::move(z);
        }
        return h;
    }

    // Accumulates parameter gradients, returns d_input.
    Matrix backward(const Trace& trace, const Matrix& d_out) {
        Matrix d = d_out;
        for (std::size_t li = weights_.size(); li-- > 0;) {
            if (li + 1 < weights_.size()) d = relu_vjp(trace.pre[li], d);
            const Matrix& layer_in =
                li == 0 ? trace.input : relu(trace.pre[li - 1]);
            // dW = in^T * d, db = colsum(d), d_in = d * W^T
            Matrix dw = matmul(transpose(layer_in), d);
            weights_[li].grad += dw;
            if (use_bias_) {
                for (std::size_t r = 0; r < d.rows(); ++r)
                    for (std::size_t c = 0; c < d.cols(); ++c)
                        biases_[li].grad(0, c) += d(r, c);
            }
            d = matmul(d, transpose(weights_[li].value));
        }
        return d;
    }

    std::vector<GradSlot*> slots() {
        std::vector<GradSlot*> out;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            out.push_back(&weights_[l]);
            if (use_bias_) out.push_back(&biases_[l]);
        }
        return out;
    }

    std::vector<const GradSlot*> slots() const {
        std::vector<const GradSlot*> out;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            out.push_back(&weights_[l]);
            if (use_bias_) out.push_back(&biases_[l]);
        }
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            n += weights_[l].size();
            if (use_bias_) n += biases_[l].size();
        }
        return n;
    }

    void zero_grad() {
        for (auto* s : slots()) s->zero_grad();
    }

    bool use_bias() const { return use_bias_; }
    std::vector<GradSlot>& weights() { return weights_; }
    std::vector<GradSlot>& biases() { return biases_; }
    const std::vector<GradSlot>& weights() const { return weights_; }
    const std::vector<GradSlot>& biases() const { return biases_; }

private:
    std::size_t input_width_ = 0;
    std::size_t output_width_ = 0;
    bool use_bias_ = true;
    std::vector<GradSlot> weights_;  // in x out per layer
    std::vector<GradSlot> biases_;   // 1 x out per layer
};

}  // namespace fisel
