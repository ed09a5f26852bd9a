#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "bprl/error.hpp"
#include "bprl/param_vector.hpp"
#include "bprl/rng.hpp"

namespace bprl {

// ---------------------------------------------------------------- matrices

// Row-major float matrix used for batches, activations and logits.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0f) {}

    float* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
    const float* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }
    float& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
    float at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
};

// -------------------------------------------------------------- arch/model

// Dense feed-forward topology: first width is the input dimension, last is
// the class count. Hidden layers are ReLU, the output layer emits raw logits.
struct ArchSpec {
    std::vector<int> widths;

    int input_width() const { return widths.front(); }
    int output_width() const { return widths.back(); }
    int layer_count() const { return static_cast<int>(widths.size()) - 1; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            n += static_cast<std::size_t>(widths[l]) * widths[l + 1] + widths[l + 1];
        }
        return n;
    }

    void validate() const {
        if (widths.size() < 2) throw InvalidInput("ArchSpec: need at least 2 layer widths");
        for (int w : widths) {
            if (w < 1) throw InvalidInput("ArchSpec: all widths must be >= 1");
        }
    }

    bool operator==(const ArchSpec& o) const { return widths == o.widths; }
};

struct Model {
    ArchSpec arch;
    ParamVector params;

    void validate() const {
        arch.validate();
        if (params.size() != arch.param_count()) {
            throw InvalidInput("Model: param vector length " + std::to_string(params.size()) +
                               " does not match arch (" + std::to_string(arch.param_count()) + ")");
        }
    }
};

struct SgdConfig {
    float lr = 0.05f;
    float momentum = 0.9f;
    int batch_size = 64;
    int epochs = 20;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(lr > 0.0f)) throw InvalidInput("SgdConfig: learning_rate must be > 0");
        if (momentum < 0.0f || momentum >= 1.0f) throw InvalidInput("SgdConfig: momentum must be in [0,1)");
        if (batch_size < 1) throw InvalidInput("SgdConfig: batch_size must be >= 1");
        if (epochs < 1) throw InvalidInput("SgdConfig: epochs must be >= 1");
    }
};

// Addresses one layer inside a flat parameter vector. Weight element (i,o)
// lives at w[i*out + o]; forward is y_o = sum_i x_i * w[i,o] + b_o.
struct LayerView {
    const float* w;
    const float* b;
    int in;
    int out;
};

inline LayerView layer_view(const ArchSpec& arch, const float* params, int layer) {
    std::size_t off = 0;
    for (int l = 0; l < layer; ++l) {
        off += static_cast<std::size_t>(arch.widths[l]) * arch.widths[l + 1] + arch.widths[l + 1];
    }
    const int in = arch.widths[layer];
    const int out = arch.widths[layer + 1];
    return LayerView{params + off, params + off + static_cast<std::size_t>(in) * out, in, out};
}

// Glorot-uniform weights, zero biases, drawn in canonical layout order from
// the seeded generator. Biases consume no draws.
inline ParamVector init_params(const ArchSpec& arch, std::uint64_t seed) {
    arch.validate();
    ParamVector p(arch.param_count());
    Rng rng = Rng::seeded(seed);
    std::size_t off = 0;
    for (int l = 0; l + 1 < static_cast<int>(arch.widths.size()); ++l) {
        const int in = arch.widths[l];
        const int out = arch.widths[l + 1];
        const float limit = std::sqrt(6.0f / static_cast<float>(in + out));
        for (std::size_t i = 0; i < static_cast<std::size_t>(in) * out; ++i) {
            p[off + i] = rng.uniform(-limit, limit);
        }
        off += static_cast<std::size_t>(in) * out + out; // biases stay zero
    }
    return p;
}

inline Model make_model(ArchSpec arch, std::uint64_t seed) {
    Model m;
    m.arch = std::move(arch);
    m.params = init_params(m.arch, seed);
    m.validate();
    return m;
}

// ----------------------------------------------------------------- forward

struct ForwardCache {
    // acts[0] is the input batch, acts[l] the post-activation of layer l,
    // acts.back() the logits.
    std::vector<Matrix> acts;
};

inline const Matrix& forward_cached(const Model& m, const Matrix& batch, ForwardCache& cache) {
    m.validate();
    if (batch.cols != m.arch.input_width()) {
        throw InvalidInput("forward: batch width " + std::to_string(batch.cols) +
                           " != arch input width " + std::to_string(m.arch.input_width()));
    }
    const int layers = m.arch.layer_count();
    cache.acts.assign(static_cast<std::size_t>(layers) + 1, Matrix{});
    cache.acts[0] = batch;
    for (int l = 0; l < layers; ++l) {
        const LayerView lv = layer_view(m.arch, m.params.data(), l);
        const Matrix& x = cache.acts[l];
        Matrix& y = cache.acts[l + 1];
        y = Matrix(batch.rows, lv.out);
        for (int r = 0; r < batch.rows; ++r) {
            float* yr = y.row(r);
            for (int o = 0; o < lv.out; ++o) yr[o] = lv.b[o];
            const float* xr = x.row(r);
            for (int i = 0; i < lv.in; ++i) {
                const float xi = xr[i];
                if (xi == 0.0f) continue;
                const float* wrow = lv.w + static_cast<std::size_t>(i) * lv.out;
                for (int o = 0; o < lv.out; ++o) yr[o] += xi * wrow[o];
            }
            if (l + 1 < layers) {
                for (int o = 0; o < lv.out; ++o) yr[o] = yr[o] > 0.0f ? yr[o] : 0.0f;
            }
        }
    }
    return cache.acts.back();
}

inline Matrix forward(const Model& m, const Matrix& batch) {
    ForwardCache cache;
    return forward_cached(m, batch, cache);
}

// ------------------------------------------------------------------- loss

// Mean cross-entropy of logits against integer labels, accumulated in
// double. If dlogits is given it receives (softmax - onehot)/n, the exact
// gradient of the mean loss w.r.t. the logits.
inline double ce_loss(const Matrix& logits, const std::vector<int>& labels,
                      Matrix* dlogits = nullptr) {
    if (logits.rows == 0) throw InvalidInput("ce_loss: empty batch");
    if (static_cast<int>(labels.size()) != logits.rows) {
        throw InvalidInput("ce_loss: label count does not match batch rows");
    }
    const int k = logits.cols;
    for (int y : labels) {
        if (y < 0 || y >= k) throw InvalidInput("ce_loss: label " + std::to_string(y) + " out of range");
    }
    if (dlogits) *dlogits = Matrix(logits.rows, k);
    const float inv_n = 1.0f / static_cast<float>(logits.rows);
    double total = 0.0;
    std::vector<float> p(static_cast<std::size_t>(k));
    for (int r = 0; r < logits.rows; ++r) {
        const float* z = logits.row(r);
        float zmax = z[0];
        for (int j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
        float sum = 0.0f;
        for (int j = 0; j < k; ++j) {
            p[j] = std::exp(z[j] - zmax);
            sum += p[j];
        }
        total += std::log(static_cast<double>(sum)) - static_cast<double>(z[labels[r]] - zmax);
        if (dlogits) {
            float* d = dlogits->row(r);
            for (int j = 0; j < k; ++j) {
                d[j] = (p[j] / sum - (j == labels[r] ? 1.0f : 0.0f)) * inv_n;
            }
        }
    }
    return total / logits.rows;
}

// Softmax probabilities per row (used by the reactivation attack's KL term).
inline Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows, logits.cols);
    for (int r = 0; r < logits.rows; ++r) {
        const float* z = logits.row(r);
        float* p = out.row(r);
        float zmax = z[0];
        for (int j = 1; j < logits.cols; ++j) zmax = std::max(zmax, z[j]);
        float sum = 0.0f;
        for (int j = 0; j < logits.cols; ++j) {
            p[j] = std::exp(z[j] - zmax);
            sum += p[j];
        }
        for (int j = 0; j < logits.cols; ++j) p[j] /= sum;
    }
    return out;
}

// ---------------------------------------------------------------- backward

// Backpropagates an arbitrary dL/dlogits through the cached forward pass.
// Either output may be null: param_grad receives the full parameter-space
// gradient, input_grad receives dL/dinput (needed when a frozen model sits
// downstream of something being optimized, e.g. a perturbation generator).
inline void backward(const Model& m, const ForwardCache& cache, const Matrix& dlogits,
                     Gradient* param_grad, Matrix* input_grad = nullptr) {
    const int layers = m.arch.layer_count();
    if (param_grad) *param_grad = Gradient(m.params.size());
    Matrix dz = dlogits;
    for (int l = layers - 1; l >= 0; --l) {
        const LayerView lv = layer_view(m.arch, m.params.data(), l);
        const Matrix& x = cache.acts[l];
        const int n = dz.rows;
        if (param_grad) {
            const std::size_t off = static_cast<std::size_t>(lv.w - m.params.data());
            float* dw = param_grad->data() + off;
            float* db = dw + static_cast<std::size_t>(lv.in) * lv.out;
            for (int r = 0; r < n; ++r) {
                const float* xr = x.row(r);
                const float* dzr = dz.row(r);
                for (int i = 0; i < lv.in; ++i) {
                    const float xi = xr[i];
                    if (xi == 0.0f) continue;
                    float* dwrow = dw + static_cast<std::size_t>(i) * lv.out;
                    for (int o = 0; o < lv.out; ++o) dwrow[o] += xi * dzr[o];
                }
                for (int o = 0; o < lv.out; ++o) db[o] += dzr[o];
            }
        }
        const bool need_dx = (l > 0) || (input_grad != nullptr);
        if (!need_dx) break;
        Matrix dx(n, lv.in);
        for (int r = 0; r < n; ++r) {
            const float* dzr = dz.row(r);
            float* dxr = dx.row(r);
            for (int i = 0; i < lv.in; ++i) {
                const float* wrow = lv.w + static_cast<std::size_t>(i) * lv.out;
                float s = 0.0f;
                for (int o = 0; o < lv.out; ++o) s += wrow[o] * dzr[o];
                dxr[i] = s;
            }
        }
        if (l > 0) {
            // ReLU mask: post-activation > 0 iff pre-activation > 0
            const Matrix& a = cache.acts[l];
            for (int r = 0; r < n; ++r) {
                const float* ar = a.row(r);
                float* dxr = dx.row(r);
                for (int i = 0; i < lv.in; ++i) {
                    if (ar[i] <= 0.0f) dxr[i] = 0.0f;
                }
            }
        }
        if (l == 0) {
            if (input_grad) *input_grad = std::move(dx);
        } else {
            dz = std::move(dx);
        }
    }
}

// Mean cross-entropy plus its exact analytic gradient.
inline double loss_and_grad(const Model& m, const Matrix& batch, const std::vector<int>& labels,
                            Gradient& grad, Matrix* input_grad = nullptr) {
    ForwardCache cache;
    const Matrix& logits = forward_cached(m, batch, cache);
    Matrix dlogits;
    const double loss = ce_loss(logits, labels, &dlogits);
    backward(m, cache, dlogits, &grad, input_grad);
    return loss;
}

// -------------------------------------------------------------------- sgd

// v' = momentum*v + g; w' = w - lr*v'. Mutates in place.
inline void sgd_step(ParamVector& params, const Gradient& grad, ParamVector& velocity,
                     const SgdConfig& cfg) {
    require_same_length(params, grad, "sgd_step");
    require_same_length(params, velocity, "sgd_step");
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] + grad[i];
        params[i] -= cfg.lr * velocity[i];
    }
}

// ------------------------------------------------------------- grad check

// Max over parameters of |analytic - central difference| / max(1, |cd|).
inline double grad_check(const Model& m, const Matrix& batch, const std::vector<int>& labels,
                         float fd_step) {
    if (!(fd_step > 0.0f)) throw InvalidInput("grad_check: fd_step must be > 0");
    Gradient analytic;
    loss_and_grad(m, batch, labels, analytic);
    Model probe = m;
    double worst = 0.0;
    for (std::size_t i = 0; i < probe.params.size(); ++i) {
        const float saved = probe.params[i];
        const float hi = saved + fd_step;
        const float lo = saved - fd_step;
        probe.params[i] = hi;
        const double lp = ce_loss(forward(probe, batch), labels);
        probe.params[i] = lo;
        const double lm = ce_loss(forward(probe, batch), labels);
        probe.params[i] = saved;
        const double denom = static_cast<double>(hi) - static_cast<double>(lo);
        const double cd = (lp - lm) / denom;
        const double err = std::fabs(static_cast<double>(analytic[i]) - cd) / std::max(1.0, std::fabs(cd));
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace bprl
