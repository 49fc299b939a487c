#pragma once

#include <cmath>
#include <vector>

namespace scdpo::detail {

// Row-level numeric kernels shared by the incremental decoder and the tape
// forward pass. Both paths must accumulate in identical order so that their
// per-position outputs agree bit for bit; any change here changes both sides
// at once.

inline constexpr double kLayerNormEps = 1e-5;

// out[j] = sum_k x[k] * w[k * cols + j]; contributions enter each out[j] in
// ascending k order.
inline void matvec(const double* x, const float* w, int rows, int cols, double* out) {
    for (int j = 0; j < cols; ++j) out[j] = 0.0;
    for (int k = 0; k < rows; ++k) {
        const double xk = x[k];
        const float* wrow = w + static_cast<std::size_t>(k) * static_cast<std::size_t>(cols);
        for (int j = 0; j < cols; ++j) out[j] += xk * static_cast<double>(wrow[j]);
    }
}

inline void layer_norm_row(const double* x, const float* gamma, const float* beta, int d, double* out,
                           double* save_mean = nullptr, double* save_rstd = nullptr) {
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += x[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
        double c = x[i] - mean;
        var += c * c;
    }
    var /= d;
    double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int i = 0; i < d; ++i) {
        out[i] = (x[i] - mean) * rstd * static_cast<double>(gamma[i]) + static_cast<double>(beta[i]);
    }
    if (save_mean) *save_mean = mean;
    if (save_rstd) *save_rstd = rstd;
}

inline double gelu(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    double u = c * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_derivative(double x) {
    constexpr double c = 0.7978845608028654;
    double u = c * (x + 0.044715 * x * x * x);
    double t = std::tanh(u);
    double sech2 = 1.0 - t * t;
    return 0.5 * (1.0 + t) + 0.5 * x * sech2 * c * (1.0 + 3.0 * 0.044715 * x * x);
}

// Causal attention for one query row against `count` cached key/value rows.
// keys/values are row-major [count, d]. Writes the attended row into out[d];
// when probs != nullptr, stores the softmax weights per head, laid out as
// heads * count (padded rows are the caller's concern).
inline void attention_row(const double* q, const double* keys, const double* values, int count, int d,
                          int heads, double* out, double* probs = nullptr) {
    const int head_dim = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<double> scores(static_cast<std::size_t>(count));
    for (int h = 0; h < heads; ++h) {
        const int off = h * head_dim;
        for (int j = 0; j < count; ++j) {
            const double* krow = keys + static_cast<std::size_t>(j) * static_cast<std::size_t>(d);
            double s = 0.0;
            for (int k = 0; k < head_dim; ++k) s += q[off + k] * krow[off + k];
            scores[static_cast<std::size_t>(j)] = s * scale;
        }
        double mx = scores[0];
        for (int j = 1; j < count; ++j) mx = scores[static_cast<std::size_t>(j)] > mx ? scores[static_cast<std::size_t>(j)] : mx;
        double denom = 0.0;
        for (int j = 0; j < count; ++j) {
            double e = std::exp(scores[static_cast<std::size_t>(j)] - mx);
            scores[static_cast<std::size_t>(j)] = e;
            denom += e;
        }
        for (int j = 0; j < count; ++j) scores[static_cast<std::size_t>(j)] /= denom;
        if (probs) {
            for (int j = 0; j < count; ++j) probs[static_cast<std::size_t>(h) * static_cast<std::size_t>(count) + static_cast<std::size_t>(j)] = scores[static_cast<std::size_t>(j)];
        }
        for (int k = 0; k < head_dim; ++k) out[off + k] = 0.0;
        for (int j = 0; j < count; ++j) {
            const double p = scores[static_cast<std::size_t>(j)];
            const double* vrow = values + static_cast<std::size_t>(j) * static_cast<std::size_t>(d);
            for (int k = 0; k < head_dim; ++k) out[off + k] += p * vrow[off + k];
        }
    }
}

}  // namespace scdpo::detail
