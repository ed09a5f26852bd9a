#pragma once
#include <cmath>
#include <cstddef>
#include <vector>

#include "bprl/error.hpp"

namespace bprl {

// Flat float32 view of all model parameters in canonical order: per layer,
// weight matrix row-major (input index major), then bias. Every piece of
// parameter-space algebra (interpolation, path offsets, checkpoints) agrees
// on this single layout.
struct ParamVector {
    std::vector<float> values;

    ParamVector() = default;
    explicit ParamVector(std::size_t n, float fill = 0.0f) : values(n, fill) {}
    explicit ParamVector(std::vector<float> v) : values(std::move(v)) {}

    std::size_t size() const { return values.size(); }
    float* data() { return values.data(); }
    const float* data() const { return values.data(); }
    float& operator[](std::size_t i) { return values[i]; }
    float operator[](std::size_t i) const { return values[i]; }

    bool operator==(const ParamVector& o) const { return values == o.values; }
};

// Gradients share the parameter layout exactly.
using Gradient = ParamVector;

inline void require_same_length(const ParamVector& a, const ParamVector& b,
                                const char* what) {
    if (a.size() != b.size()) {
        throw InvalidInput(std::string(what) + ": length mismatch (" +
                           std::to_string(a.size()) + " vs " +
                           std::to_string(b.size()) + ")");
    }
}

// Global L2 norm over the whole flat vector, accumulated in double.
inline double l2_norm(const ParamVector& v) {
    double s = 0.0;
    for (float x : v.values) s += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(s);
}

inline ParamVector param_sub(const ParamVector& a, const ParamVector& b) {
    require_same_length(a, b, "param_sub");
    ParamVector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline double linf_distance(const ParamVector& a, const ParamVector& b) {
    require_same_length(a, b, "linf_distance");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
        if (d > m) m = d;
    }
    return m;
}

// (1-t)*w0 + t*w1 elementwise. Endpoints return the input vector bit-exactly.
inline ParamVector param_interpolate(const ParamVector& w0, const ParamVector& w1,
                                     double t) {
    require_same_length(w0, w1, "param_interpolate");
    if (t < 0.0 || t > 1.0) {
        throw InvalidInput("param_interpolate: t must be in [0,1], got " +
                           std::to_string(t));
    }
    if (t == 0.0) return w0;
    if (t == 1.0) return w1;
    ParamVector out(w0.size());
    const double a = 1.0 - t;
    for (std::size_t i = 0; i < w0.size(); ++i) {
        out[i] = static_cast<float>(a * static_cast<double>(w0[i]) +
                                    t * static_cast<double>(w1[i]));
    }
    return out;
}

// w + rho * d / ||d||_2, using one global norm over the flat vector.
// Degenerate directions (||d|| < 1e-12) and rho == 0 return w unchanged.
inline ParamVector param_axpy_unit(const ParamVector& w, const ParamVector& d,
                                   double rho) {
    require_same_length(w, d, "param_axpy_unit");
    const double norm = l2_norm(d);
    if (rho == 0.0 || norm < 1e-12) return w;
    const float scale = static_cast<float>(rho / norm);
    ParamVector out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] + scale * d[i];
    return out;
}

} // namespace bprl
