#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "glt/matrix.hpp"
#include "glt/rng.hpp"

namespace glt {

// Two-layer perceptron embedding net:
//   h = tanh(x W1 + b1),  z = h W2 + b2,  f = z / ||z||  (per row)
struct EncoderParams {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t embed_dim = 0;
    Matrix w1;  // input_dim x hidden_dim
    Vector b1;  // hidden_dim
    Matrix w2;  // hidden_dim x embed_dim
    Vector b2;  // embed_dim
};

inline EncoderParams zeros_like(const EncoderParams& p) {
    EncoderParams g;
    g.input_dim = p.input_dim;
    g.hidden_dim = p.hidden_dim;
    g.embed_dim = p.embed_dim;
    g.w1 = Matrix(p.w1.rows, p.w1.cols);
    g.b1 = Vector(p.b1.size(), 0.0);
    g.w2 = Matrix(p.w2.rows, p.w2.cols);
    g.b2 = Vector(p.b2.size(), 0.0);
    return g;
}

inline EncoderParams xavier_init(std::size_t input_dim, std::size_t hidden_dim,
                                 std::size_t embed_dim, Rng& rng) {
    EncoderParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    p.embed_dim = embed_dim;
    p.w1 = Matrix(input_dim, hidden_dim);
    p.b1 = Vector(hidden_dim, 0.0);
    p.w2 = Matrix(hidden_dim, embed_dim);
    p.b2 = Vector(embed_dim, 0.0);
    const double limit1 = std::sqrt(6.0 / static_cast<double>(input_dim + hidden_dim));
    for (double& v : p.w1.data) v = (2.0 * rng.uniform() - 1.0) * limit1;
    const double limit2 = std::sqrt(6.0 / static_cast<double>(hidden_dim + embed_dim));
    for (double& v : p.w2.data) v = (2.0 * rng.uniform() - 1.0) * limit2;
    return p;
}

// Cached activations of one forward pass, enough to backprop exactly,
// including through the row-wise L2 normalization.
struct ForwardTape {
    Matrix inputs;       // B x input_dim
    Matrix hidden;       // B x hidden_dim, post-tanh
    Matrix pre_norm;     // B x embed_dim, z before normalization
    Vector norms;        // B, ||z|| per row
    Matrix features;     // B x embed_dim, unit rows
};

inline std::pair<Matrix, ForwardTape> encoder_forward(const EncoderParams& p,
                                                      const Matrix& inputs) {
    if (inputs.cols != p.input_dim)
        throw ShapeMismatchError("encoder_forward: input dim mismatch");
    ForwardTape tape;
    tape.inputs = inputs;
    Matrix z1 = matmul(inputs, p.w1);
    for (std::size_t r = 0; r < z1.rows; ++r)
        for (std::size_t c = 0; c < z1.cols; ++c) z1.at(r, c) = std::tanh(z1.at(r, c) + p.b1[c]);
    tape.hidden = std::move(z1);
    Matrix z2 = matmul(tape.hidden, p.w2);
    for (std::size_t r = 0; r < z2.rows; ++r)
        for (std::size_t c = 0; c < z2.cols; ++c) z2.at(r, c) += p.b2[c];
    tape.pre_norm = z2;
    tape.norms.resize(z2.rows);
    tape.features = Matrix(z2.rows, z2.cols);
    for (std::size_t r = 0; r < z2.rows; ++r) {
        const double n = norm2(z2.row(r));
        if (n < kZeroNormThreshold) throw ZeroRowError(r);
        tape.norms[r] = n;
        for (std::size_t c = 0; c < z2.cols; ++c) tape.features.at(r, c) = z2.at(r, c) / n;
    }
    return {tape.features, tape};
}

// Gradient of row-wise normalization: g_z = (g - f (f . g)) / ||z||
inline Vector l2_normalize_backward_row(std::span<const double> unit_row, double norm,
                                        std::span<const double> upstream) {
    const double proj = dot(unit_row, upstream);
    Vector g(unit_row.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (upstream[i] - unit_row[i] * proj) / norm;
    return g;
}

inline EncoderParams encoder_backward(const EncoderParams& p, const ForwardTape& tape,
                                      const Matrix& grad_features) {
    if (!grad_features.same_shape(tape.features))
        throw ShapeMismatchError("encoder_backward: grad shape mismatch");
    EncoderParams g = zeros_like(p);
    const std::size_t batch = tape.inputs.rows;

    Matrix grad_z2(batch, p.embed_dim);
    for (std::size_t r = 0; r < batch; ++r) {
        Vector gz = l2_normalize_backward_row(tape.features.row(r), tape.norms[r],
                                              grad_features.row(r));
        grad_z2.set_row(r, gz);
    }

    // w2 / b2
    for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t h = 0; h < p.hidden_dim; ++h) {
            const double a = tape.hidden.at(r, h);
            for (std::size_t c = 0; c < p.embed_dim; ++c)
                g.w2.at(h, c) += a * grad_z2.at(r, c);
        }
    for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t c = 0; c < p.embed_dim; ++c) g.b2[c] += grad_z2.at(r, c);

    // through tanh
    Matrix grad_z1(batch, p.hidden_dim);
    for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t h = 0; h < p.hidden_dim; ++h) {
            double s = 0.0;
            for (std::size_t c = 0; c < p.embed_dim; ++c)
                s += grad_z2.at(r, c) * p.w2.at(h, c);
            const double a = tape.hidden.at(r, h);
            grad_z1.at(r, h) = s * (1.0 - a * a);
        }

    // w1 / b1
    for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t i = 0; i < p.input_dim; ++i) {
            const double x = tape.inputs.at(r, i);
            if (x == 0.0) continue;
            for (std::size_t h = 0; h < p.hidden_dim; ++h)
                g.w1.at(i, h) += x * grad_z1.at(r, h);
        }
    for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t h = 0; h < p.hidden_dim; ++h) g.b1[h] += grad_z1.at(r, h);

    return g;
}

inline EncoderParams sgd_step(const EncoderParams& params, const EncoderParams& grads,
                              double lr) {
    if (params.w1.rows != grads.w1.rows || params.w2.cols != grads.w2.cols)
        throw ShapeMismatchError("sgd_step: shape mismatch");
    EncoderParams out = params;
    for (std::size_t i = 0; i < out.w1.data.size(); ++i) out.w1.data[i] -= lr * grads.w1.data[i];
    for (std::size_t i = 0; i < out.b1.size(); ++i) out.b1[i] -= lr * grads.b1[i];
    for (std::size_t i = 0; i < out.w2.data.size(); ++i) out.w2.data[i] -= lr * grads.w2.data[i];
    for (std::size_t i = 0; i < out.b2.size(); ++i) out.b2[i] -= lr * grads.b2[i];
    return out;
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    EncoderParams m;
    EncoderParams v;
    std::int64_t t = 0;
};

namespace detail {
inline void adam_update(double* param, const double* grad, double* m, double* v,
                        std::size_t n, double lr, const AdamConfig& cfg, double bc1, double bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}
}  // namespace detail

inline EncoderParams adam_step(const EncoderParams& params, const EncoderParams& grads,
                               AdamState& state, double lr, const AdamConfig& cfg = {}) {
    if (state.t == 0) {
        state.m = zeros_like(params);
        state.v = zeros_like(params);
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    EncoderParams out = params;
    detail::adam_update(out.w1.data.data(), grads.w1.data.data(), state.m.w1.data.data(),
                        state.v.w1.data.data(), out.w1.data.size(), lr, cfg, bc1, bc2);
    detail::adam_update(out.b1.data(), grads.b1.data(), state.m.b1.data(), state.v.b1.data(),
                        out.b1.size(), lr, cfg, bc1, bc2);
    detail::adam_update(out.w2.data.data(), grads.w2.data.data(), state.m.w2.data.data(),
                        state.v.w2.data.data(), out.w2.data.size(), lr, cfg, bc1, bc2);
    detail::adam_update(out.b2.data(), grads.b2.data(), state.m.b2.data(), state.v.b2.data(),
                        out.b2.size(), lr, cfg, bc1, bc2);
    return out;
}

// Flat-vector view of all parameters in declaration order (w1, b1, w2, b2).
// Used by checkpointing and by the finite-difference tests.
inline Vector flatten(const EncoderParams& p) {
    Vector out;
    out.reserve(p.w1.data.size() + p.b1.size() + p.w2.data.size() + p.b2.size());
    out.insert(out.end(), p.w1.data.begin(), p.w1.data.end());
    out.insert(out.end(), p.b1.begin(), p.b1.end());
    out.insert(out.end(), p.w2.data.begin(), p.w2.data.end());
    out.insert(out.end(), p.b2.begin(), p.b2.end());
    return out;
}

inline EncoderParams unflatten(const EncoderParams& shape, const Vector& flat) {
    EncoderParams p = zeros_like(shape);
    std::size_t k = 0;
    for (double& v : p.w1.data) v = flat[k++];
    for (double& v : p.b1) v = flat[k++];
    for (double& v : p.w2.data) v = flat[k++];
    for (double& v : p.b2) v = flat[k++];
    return p;
}

}  // namespace glt
