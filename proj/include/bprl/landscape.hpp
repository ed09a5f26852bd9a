#pragma once
#include <algorithm>
#include <string>
#include <vector>

#include "bprl/nn.hpp"
#include "bprl/trainer.hpp"

namespace bprl {

enum class LmcKind { backdoor, clean };

// Error profile along the straight parameter-space segment between two
// checkpoints. Backdoor kind is 1 - attack success rate on a triggered set;
// clean kind is 1 - accuracy on a clean set.
struct LmcCurve {
    struct Point {
        double t;
        double error;
    };
    std::vector<Point> points;
    LmcKind kind = LmcKind::backdoor;
    std::string endpoint_a;
    std::string endpoint_b;
};

// Evaluates the segment at t_j = j/(grid-1). Interior weights are computed
// as integer mixes ((g-1-j)*w0 + j*w1)/(g-1) so the scan is symmetric under
// endpoint swap and consistent across nested grids; the endpoints reuse the
// exact input vectors.
inline LmcCurve lmc_scan(const ParamVector& w0, const ParamVector& w1, const ArchSpec& arch,
                         const LabeledDataset& dataset, int grid, LmcKind kind,
                         const std::string& endpoint_a = "w0",
                         const std::string& endpoint_b = "w1") {
    require_same_length(w0, w1, "lmc_scan");
    if (grid < 2) throw InvalidInput("lmc_scan: grid must be >= 2");
    dataset.validate();
    LmcCurve curve;
    curve.kind = kind;
    curve.endpoint_a = endpoint_a;
    curve.endpoint_b = endpoint_b;
    const int steps = grid - 1;
    for (int j = 0; j <= steps; ++j) {
        ParamVector at;
        if (j == 0) {
            at = w0;
        } else if (j == steps) {
            at = w1;
        } else {
            at = ParamVector(w0.size());
            const double a = static_cast<double>(steps - j);
            const double b = static_cast<double>(j);
            const double denom = static_cast<double>(steps);
            for (std::size_t i = 0; i < w0.size(); ++i) {
                at[i] = static_cast<float>((a * static_cast<double>(w0[i]) +
                                            b * static_cast<double>(w1[i])) / denom);
            }
        }
        const Model m{arch, std::move(at)};
        const double acc = accuracy(m, dataset);
        curve.points.push_back({static_cast<double>(j) / steps, 1.0 - acc});
    }
    return curve;
}

// The purified-to-purified comparison is the same scan; it exists as a named
// recipe so the experiment reads as one call.
inline LmcCurve lmc_between_purified(const ParamVector& w_a, const ParamVector& w_b,
                                     const ArchSpec& arch, const LabeledDataset& dataset,
                                     int grid, LmcKind kind,
                                     const std::string& endpoint_a = "purified_a",
                                     const std::string& endpoint_b = "purified_b") {
    return lmc_scan(w_a, w_b, arch, dataset, grid, kind, endpoint_a, endpoint_b);
}

// Summary of one curve: peak error (first occurrence), trapezoidal area,
// and the earliest grid t where the error falls under 0.8 (1.0 if never).
struct BarrierStat {
    double max_error = 0.0;
    double t_at_max = 0.0;
    double auc = 0.0;
    double t_drop = 1.0;
};

inline BarrierStat barrier_stats(const LmcCurve& curve) {
    if (curve.points.size() < 2) throw InvalidInput("barrier_stats: need at least 2 points");
    BarrierStat s;
    s.max_error = curve.points.front().error;
    s.t_at_max = curve.points.front().t;
    bool dropped = false;
    for (const auto& p : curve.points) {
        if (p.error > s.max_error) {
            s.max_error = p.error;
            s.t_at_max = p.t;
        }
        if (!dropped && p.error < 0.8) {
            s.t_drop = p.t;
            dropped = true;
        }
    }
    if (!dropped) s.t_drop = 1.0;
    s.auc = 0.0;
    for (std::size_t i = 0; i + 1 < curve.points.size(); ++i) {
        const auto& a = curve.points[i];
        const auto& b = curve.points[i + 1];
        s.auc += 0.5 * (a.error + b.error) * (b.t - a.t);
    }
    return s;
}

} // namespace bprl
