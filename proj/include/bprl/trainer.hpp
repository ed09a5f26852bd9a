#pragma once
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "bprl/dataset.hpp"
#include "bprl/nn.hpp"

namespace bprl {

// ------------------------------------------------------------ batch plumbing

inline Matrix gather_batch(const LabeledDataset& data, const std::vector<int>& idx,
                           std::vector<int>* labels = nullptr) {
    Matrix m(static_cast<int>(idx.size()), data.dim());
    if (labels) labels->resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const ImageExample& ex = data.examples[idx[r]];
        std::copy(ex.pixels.begin(), ex.pixels.end(), m.row(static_cast<int>(r)));
        if (labels) (*labels)[r] = ex.label;
    }
    return m;
}

// Seeded epoch-reshuffled minibatch order. Every tuning loop in the project
// shares this schedule so runs with equal (n, batch, seed) see identical
// batches regardless of which tuner consumes them.
class MinibatchSchedule {
public:
    MinibatchSchedule(int n, int batch, std::uint64_t seed)
        : n_(n), batch_(std::min(batch, n)), rng_(Rng::seeded(seed)), order_(n) {
        if (n < 1) throw InvalidInput("MinibatchSchedule: empty dataset");
        if (batch < 1) throw InvalidInput("MinibatchSchedule: batch must be >= 1");
        std::iota(order_.begin(), order_.end(), 0);
    }

    int batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }

    // Batch for global iteration `it` (must be called with it = 0,1,2,...).
    void next(std::vector<int>& out) {
        if (cursor_ == 0) rng_.shuffle(order_);
        const int lo = cursor_ * batch_;
        const int hi = std::min(lo + batch_, n_);
        out.assign(order_.begin() + lo, order_.begin() + hi);
        cursor_ = (cursor_ + 1) % batches_per_epoch();
    }

private:
    int n_;
    int batch_;
    int cursor_ = 0;
    Rng rng_;
    std::vector<int> order_;
};

// --------------------------------------------------------------- sgd engine

using GradFn = std::function<Gradient(const ParamVector&)>;
using IterObserver = std::function<void(int iter, const Model&)>;

// Momentum-SGD update shared verbatim by every tuner.
inline void apply_sgd_update(ParamVector& w, ParamVector& velocity, const Gradient& g,
                             float lr, float momentum) {
    require_same_length(w, g, "apply_sgd_update");
    for (std::size_t i = 0; i < w.size(); ++i) {
        velocity[i] = momentum * velocity[i] + g[i];
        w[i] -= lr * velocity[i];
    }
}

// Point where a path-aware iterate takes its gradient: w + rho*unit(anchor-w).
// Collapses to w itself when rho is zero or the iterate sits on the anchor.
inline ParamVector path_offset_point(const ParamVector& w, const ParamVector& anchor,
                                     double rho) {
    return param_axpy_unit(w, param_sub(anchor, w), rho);
}

// One path-aware minimization iteration: gradient taken at the offset point,
// update applied to the iterate.
inline void pam_iteration(ParamVector& w, ParamVector& velocity, const ParamVector& anchor,
                          double rho, float lr, float momentum, const GradFn& grad_at) {
    const ParamVector eval_point = path_offset_point(w, anchor, rho);
    apply_sgd_update(w, velocity, grad_at(eval_point), lr, momentum);
}

// One sharpness-aware iteration: ascend to w + rho*unit(g), take the
// gradient there, update w with it.
inline void sam_iteration(ParamVector& w, ParamVector& velocity, double rho_sam,
                          float lr, float momentum, const GradFn& grad_at) {
    const Gradient g = grad_at(w);
    const ParamVector ascent = param_axpy_unit(w, g, rho_sam);
    apply_sgd_update(w, velocity, grad_at(ascent), lr, momentum);
}

enum class StepRule { plain, path_aware, sharpness_aware };

struct EngineOptions {
    StepRule rule = StepRule::plain;
    const ParamVector* anchor = nullptr; // path_aware: the backdoored weights
    double rho = 0.0;                    // path_aware offset / sharpness radius
    float lr = 0.01f;
    float momentum = 0.9f;
    int batch_size = 64;
    int iterations = 0;
    std::uint64_t seed = 1;
    std::vector<double>* epoch_loss = nullptr;
    IterObserver observer = {};
};

// Core minibatch loop. Throws Diverged naming the epoch if the loss goes
// non-finite.
inline Model run_sgd(Model model, const LabeledDataset& data, const EngineOptions& opt) {
    model.validate();
    data.validate();
    if (data.dim() != model.arch.input_width()) {
        throw InvalidInput("run_sgd: dataset dims do not match arch input width");
    }
    if (opt.iterations < 1) throw InvalidInput("run_sgd: iterations must be >= 1");
    MinibatchSchedule schedule(data.size(), opt.batch_size, opt.seed);
    const int bpe = schedule.batches_per_epoch();
    ParamVector velocity(model.params.size());
    std::vector<int> idx;
    std::vector<int> labels;
    double epoch_sum = 0.0;
    int epoch_count = 0;
    for (int it = 0; it < opt.iterations; ++it) {
        schedule.next(idx);
        const Matrix batch = gather_batch(data, idx, &labels);
        double batch_loss = 0.0;
        const GradFn grad_at = [&](const ParamVector& at) {
            Model probe{model.arch, at};
            Gradient g;
            batch_loss = loss_and_grad(probe, batch, labels, g);
            return g;
        };
        switch (opt.rule) {
            case StepRule::plain:
                apply_sgd_update(model.params, velocity, grad_at(model.params), opt.lr,
                                 opt.momentum);
                break;
            case StepRule::path_aware:
                pam_iteration(model.params, velocity, *opt.anchor, opt.rho, opt.lr,
                              opt.momentum, grad_at);
                break;
            case StepRule::sharpness_aware:
                sam_iteration(model.params, velocity, opt.rho, opt.lr, opt.momentum, grad_at);
                break;
        }
        if (!std::isfinite(batch_loss)) {
            throw Diverged("training diverged: non-finite loss at epoch " +
                           std::to_string(it / bpe + 1) + " (iteration " +
                           std::to_string(it + 1) + ")");
        }
        epoch_sum += batch_loss * static_cast<double>(idx.size());
        epoch_count += static_cast<int>(idx.size());
        if (opt.epoch_loss && (it + 1) % bpe == 0) {
            opt.epoch_loss->push_back(epoch_sum / epoch_count);
            epoch_sum = 0.0;
            epoch_count = 0;
        }
        if (opt.observer) opt.observer(it, model);
    }
    return model;
}

// ----------------------------------------------------------------- training

// Fresh seeded init, then epochs of shuffled minibatch SGD over the dataset,
// poisoned labels included as-is.
inline Model train(const ArchSpec& arch, const LabeledDataset& data, const SgdConfig& cfg,
                   std::vector<double>* epoch_loss = nullptr) {
    cfg.validate();
    constexpr std::uint64_t kInitStream = 0x11;
    constexpr std::uint64_t kShuffleStream = 0x22;
    Model model = make_model(arch, stream_seed(cfg.seed, kInitStream));
    EngineOptions opt;
    opt.rule = StepRule::plain;
    opt.lr = cfg.lr;
    opt.momentum = cfg.momentum;
    opt.batch_size = cfg.batch_size;
    MinibatchSchedule probe(data.size(), cfg.batch_size, 0);
    opt.iterations = cfg.epochs * probe.batches_per_epoch();
    opt.seed = stream_seed(cfg.seed, kShuffleStream);
    opt.epoch_loss = epoch_loss;
    return run_sgd(std::move(model), data, opt);
}

// --------------------------------------------------------------- evaluation

// Ties broken toward the lowest class index so degenerate logits still give
// a well-defined prediction.
inline int argmax_lowest(const float* v, int n) {
    int best = 0;
    for (int j = 1; j < n; ++j) {
        if (v[j] > v[best]) best = j;
    }
    return best;
}

inline int eval_thread_count() {
    const char* env = std::getenv("BPRL_THREADS");
    if (!env) return 1;
    const int req = std::atoi(env);
    if (req <= 1) return 1;
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    return std::min(req, std::max(1, hw));
}

// Predictions for every example. Parallelism (capped by BPRL_THREADS) is
// safe: each slot is written by exactly one thread and the result does not
// depend on scheduling.
inline std::vector<int> predict_all(const Model& model, const LabeledDataset& data) {
    model.validate();
    data.validate();
    if (data.dim() != model.arch.input_width()) {
        throw InvalidInput("predict_all: dataset dims do not match arch input width");
    }
    const int n = data.size();
    std::vector<int> pred(n);
    const auto worker = [&](int lo, int hi) {
        constexpr int kChunk = 256;
        std::vector<int> idx;
        for (int start = lo; start < hi; start += kChunk) {
            const int stop = std::min(start + kChunk, hi);
            idx.resize(stop - start);
            std::iota(idx.begin(), idx.end(), start);
            const Matrix logits = forward(model, gather_batch(data, idx));
            for (int r = 0; r < logits.rows; ++r) {
                pred[start + r] = argmax_lowest(logits.row(r), logits.cols);
            }
        }
    };
    const int threads = std::min(eval_thread_count(), n);
    if (threads <= 1) {
        worker(0, n);
    } else {
        std::vector<std::thread> pool;
        const int per = (n + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const int lo = t * per;
            const int hi = std::min(lo + per, n);
            if (lo < hi) pool.emplace_back(worker, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    return pred;
}

// Clean accuracy and attack success rate as exact count ratios.
struct EvalReport {
    int n_clean = 0;
    int n_triggered = 0;
    int clean_correct = 0;
    int triggered_hit = 0;

    double c_acc() const { return n_clean ? static_cast<double>(clean_correct) / n_clean : 0.0; }
    double asr() const { return n_triggered ? static_cast<double>(triggered_hit) / n_triggered : 0.0; }
};

inline EvalReport evaluate(const Model& model, const LabeledDataset& clean_test,
                           const LabeledDataset& backdoor_test) {
    EvalReport rep;
    const std::vector<int> clean_pred = predict_all(model, clean_test);
    rep.n_clean = clean_test.size();
    for (int i = 0; i < clean_test.size(); ++i) {
        rep.clean_correct += (clean_pred[i] == clean_test.examples[i].label) ? 1 : 0;
    }
    const std::vector<int> trig_pred = predict_all(model, backdoor_test);
    rep.n_triggered = backdoor_test.size();
    for (int i = 0; i < backdoor_test.size(); ++i) {
        rep.triggered_hit += (trig_pred[i] == backdoor_test.examples[i].label) ? 1 : 0;
    }
    return rep;
}

// Accuracy against stored labels only (used for clean-error curves).
inline double accuracy(const Model& model, const LabeledDataset& data) {
    const std::vector<int> pred = predict_all(model, data);
    int correct = 0;
    for (int i = 0; i < data.size(); ++i) {
        correct += (pred[i] == data.examples[i].label) ? 1 : 0;
    }
    return static_cast<double>(correct) / data.size();
}

} // namespace bprl
