#pragma once
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "bprl/dataset.hpp"
#include "bprl/nn.hpp"
#include "bprl/trainer.hpp"

namespace bprl {

// ----------------------------------------------------------------- configs

struct PamConfig {
    double rho = 0.3;      // path-aware step size
    float lr = 0.01f;
    int iterations = 320;
    int batch_size = 64;
    float momentum = 0.9f;
    std::uint64_t seed = 1;

    void validate() const {
        if (rho < 0.0) throw InvalidInput("PamConfig: rho must be >= 0");
        if (!(lr > 0.0f)) throw InvalidInput("PamConfig: lr must be > 0");
        if (iterations < 1) throw InvalidInput("PamConfig: iterations must be >= 1");
        if (batch_size < 1) throw InvalidInput("PamConfig: batch_size must be >= 1");
    }
};

struct SamConfig {
    double rho_sam = 0.5;  // ascent-neighborhood radius
    float lr = 0.01f;
    int epochs = 20;
    int batch_size = 64;
    float momentum = 0.9f;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(rho_sam > 0.0)) throw InvalidInput("SamConfig: rho_sam must be > 0");
        if (!(lr > 0.0f)) throw InvalidInput("SamConfig: lr must be > 0");
        if (epochs < 1) throw InvalidInput("SamConfig: epochs must be >= 1");
        if (batch_size < 1) throw InvalidInput("SamConfig: batch_size must be >= 1");
    }
};

struct InversionConfig {
    int target_label = 0;
    double lambda_mask = 0.01; // L1 sparsity weight on the mask
    int steps = 400;
    float lr = 0.5f;
    int batch_size = 64;
    std::uint64_t seed = 1;

    void validate() const {
        if (lambda_mask < 0.0) throw InvalidInput("InversionConfig: lambda_mask must be >= 0");
        if (steps < 1) throw InvalidInput("InversionConfig: steps must be >= 1");
        if (!(lr > 0.0f)) throw InvalidInput("InversionConfig: lr must be > 0");
    }
};

// Mask/pattern pair recovered by inversion; both squashed into [0,1].
struct ReversedTrigger {
    std::vector<float> mask;
    std::vector<float> pattern;
};

// ------------------------------------------------------------------ tuners

inline void require_clean_only(const LabeledDataset& d, const char* who) {
    for (const auto& ex : d.examples) {
        if (ex.provenance != Provenance::clean) {
            throw InvalidInput(std::string(who) + ": tuning set must contain clean examples only");
        }
    }
}

// Plain SGD fine-tuning from the given weights on clean data.
inline Model finetune_plain(const Model& model, const LabeledDataset& d_t, const SgdConfig& cfg) {
    cfg.validate();
    require_clean_only(d_t, "finetune_plain");
    EngineOptions opt;
    opt.rule = StepRule::plain;
    opt.lr = cfg.lr;
    opt.momentum = cfg.momentum;
    opt.batch_size = cfg.batch_size;
    opt.iterations = cfg.epochs * MinibatchSchedule(d_t.size(), cfg.batch_size, 0).batches_per_epoch();
    opt.seed = cfg.seed;
    return run_sgd(model, d_t, opt);
}

// Exact purification: a seeded fraction of the tuning set carries the true
// trigger (train phase) with its correct label kept, then plain fine-tuning
// on the mix.
inline Model finetune_ep(const Model& model, const LabeledDataset& d_t, const TriggerSpec& trig,
                         double frac, const SgdConfig& cfg) {
    cfg.validate();
    d_t.validate();
    if (!(frac > 0.0) || !(frac < 1.0)) throw InvalidInput("finetune_ep: frac must be in (0,1)");
    const int n_trig = fraction_count(frac, d_t.size());
    std::vector<int> order(d_t.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::seeded(stream_seed(cfg.seed, 0xE9));
    rng.shuffle(order);
    LabeledDataset mixed = d_t;
    for (int j = 0; j < n_trig; ++j) {
        const int idx = order[j];
        ImageExample t = apply_trigger(d_t.examples[idx], trig, TriggerPhase::train,
                                       d_t.h, d_t.w, d_t.c);
        t.label = d_t.examples[idx].label; // correct label is the whole point
        t.original_label = d_t.examples[idx].original_label;
        mixed.examples[idx] = std::move(t);
    }
    EngineOptions opt;
    opt.rule = StepRule::plain;
    opt.lr = cfg.lr;
    opt.momentum = cfg.momentum;
    opt.batch_size = cfg.batch_size;
    opt.iterations = cfg.epochs * MinibatchSchedule(mixed.size(), cfg.batch_size, 0).batches_per_epoch();
    opt.seed = cfg.seed;
    return run_sgd(model, mixed, opt);
}

// Sharpness-aware fine-tuning: per batch the gradient is taken at
// w + rho_sam * g/||g||, then applied at w.
inline Model finetune_sam(const Model& model, const LabeledDataset& d_t, const SamConfig& cfg) {
    cfg.validate();
    require_clean_only(d_t, "finetune_sam");
    EngineOptions opt;
    opt.rule = StepRule::sharpness_aware;
    opt.rho = cfg.rho_sam;
    opt.lr = cfg.lr;
    opt.momentum = cfg.momentum;
    opt.batch_size = cfg.batch_size;
    opt.iterations = cfg.epochs * MinibatchSchedule(d_t.size(), cfg.batch_size, 0).batches_per_epoch();
    opt.seed = cfg.seed;
    return run_sgd(model, d_t, opt);
}

// Path-aware minimization starting from the backdoored weights w0. Each
// iteration evaluates the gradient at the iterate shifted rho toward w0
// along the normalized parameter difference; the first iteration has a zero
// difference and reduces to a plain step.
inline Model pam(const ParamVector& w0, const ArchSpec& arch, const LabeledDataset& d_mix,
                 const PamConfig& cfg, const IterObserver& observer = {}) {
    cfg.validate();
    d_mix.validate();
    if (d_mix.count_with(Provenance::reversed) == 0) {
        std::fprintf(stderr, "warning: pam tuning set has no reversed examples\n");
    }
    Model start{arch, w0};
    start.validate();
    EngineOptions opt;
    opt.rule = StepRule::path_aware;
    opt.anchor = &w0;
    opt.rho = cfg.rho;
    opt.lr = cfg.lr;
    opt.momentum = cfg.momentum;
    opt.batch_size = cfg.batch_size;
    opt.iterations = cfg.iterations;
    opt.seed = cfg.seed;
    opt.observer = observer;
    return run_sgd(std::move(start), d_mix, opt);
}

// -------------------------------------------------------- trigger inversion

// x' = (1-m) .* x + m .* p applied to a full batch, in place.
inline void blend_reversed(Matrix& batch, const std::vector<float>& mask,
                           const std::vector<float>& pattern) {
    for (int r = 0; r < batch.rows; ++r) {
        float* x = batch.row(r);
        for (int j = 0; j < batch.cols; ++j) {
            x[j] = (1.0f - mask[j]) * x[j] + mask[j] * pattern[j];
        }
    }
}

inline ImageExample apply_reversed_trigger(const ImageExample& x, const ReversedTrigger& trig) {
    if (trig.mask.size() != x.pixels.size()) {
        throw InvalidInput("apply_reversed_trigger: dims do not match");
    }
    ImageExample out = x;
    for (std::size_t j = 0; j < out.pixels.size(); ++j) {
        out.pixels[j] = (1.0f - trig.mask[j]) * x.pixels[j] + trig.mask[j] * trig.pattern[j];
    }
    out.provenance = Provenance::reversed;
    return out;
}

// Universal mask/pattern inversion: minimizes CE of the backdoored model
// toward the target label on blended inputs plus an L1 penalty on the mask.
// Both tensors live behind sigmoids, so the optimization is unconstrained.
inline ReversedTrigger invert_trigger(const Model& backdoored, const LabeledDataset& d_t,
                                      const InversionConfig& cfg) {
    cfg.validate();
    require_clean_only(d_t, "invert_trigger");
    backdoored.validate();
    const int d = d_t.dim();
    if (d != backdoored.arch.input_width()) {
        throw InvalidInput("invert_trigger: dataset dims do not match model");
    }
    if (cfg.target_label < 0 || cfg.target_label >= backdoored.arch.output_width()) {
        throw InvalidInput("invert_trigger: target label out of range");
    }
    Rng init = Rng::seeded(stream_seed(cfg.seed, 0x1A));
    std::vector<float> m_hat(d), p_hat(d);
    for (int j = 0; j < d; ++j) m_hat[j] = -2.0f + 0.01f * init.normal(0.0f, 1.0f);
    for (int j = 0; j < d; ++j) p_hat[j] = 0.01f * init.normal(0.0f, 1.0f);

    const auto sigmoid = [](float v) { return 1.0f / (1.0f + std::exp(-v)); };

    MinibatchSchedule schedule(d_t.size(), cfg.batch_size, stream_seed(cfg.seed, 0x1B));
    std::vector<int> idx;
    std::vector<float> mask(d), pattern(d), dm(d), dp(d);
    for (int step = 0; step < cfg.steps; ++step) {
        schedule.next(idx);
        const int n = static_cast<int>(idx.size());
        for (int j = 0; j < d; ++j) {
            mask[j] = sigmoid(m_hat[j]);
            pattern[j] = sigmoid(p_hat[j]);
        }
        Matrix batch = gather_batch(d_t, idx);
        const Matrix original = batch;
        blend_reversed(batch, mask, pattern);
        ForwardCache cache;
        const Matrix& logits = forward_cached(backdoored, batch, cache);
        const std::vector<int> target(n, cfg.target_label);
        Matrix dlogits;
        const double loss = ce_loss(logits, target, &dlogits);
        if (!std::isfinite(loss)) {
            throw Diverged("invert_trigger: non-finite loss at step " + std::to_string(step + 1));
        }
        Matrix input_grad;
        backward(backdoored, cache, dlogits, nullptr, &input_grad);
        std::fill(dm.begin(), dm.end(), 0.0f);
        std::fill(dp.begin(), dp.end(), 0.0f);
        for (int r = 0; r < n; ++r) {
            const float* g = input_grad.row(r);
            const float* x = original.row(r);
            for (int j = 0; j < d; ++j) {
                dm[j] += g[j] * (pattern[j] - x[j]);
                dp[j] += g[j] * mask[j];
            }
        }
        for (int j = 0; j < d; ++j) {
            // the L1 penalty applies once per step, not per sample
            dm[j] += static_cast<float>(cfg.lambda_mask);
            const float sm = mask[j] * (1.0f - mask[j]);
            const float sp = pattern[j] * (1.0f - pattern[j]);
            m_hat[j] -= cfg.lr * dm[j] * sm;
            p_hat[j] -= cfg.lr * dp[j] * sp;
        }
    }
    ReversedTrigger out;
    out.mask.resize(d);
    out.pattern.resize(d);
    for (int j = 0; j < d; ++j) {
        out.mask[j] = sigmoid(m_hat[j]);
        out.pattern[j] = sigmoid(p_hat[j]);
    }
    return out;
}

// Fraction of non-target examples the reversed trigger flips to the target
// label; the inversion quality gauge.
inline double reversed_trigger_asr(const Model& model, const LabeledDataset& data,
                                   const ReversedTrigger& trig, int target_label) {
    LabeledDataset blended;
    blended.class_count = data.class_count;
    blended.h = data.h;
    blended.w = data.w;
    blended.c = data.c;
    for (const auto& ex : data.examples) {
        if (ex.original_label == target_label) continue;
        blended.examples.push_back(apply_reversed_trigger(ex, trig));
    }
    if (blended.examples.empty()) return 0.0;
    const std::vector<int> pred = predict_all(model, blended);
    int hit = 0;
    for (int p : pred) hit += (p == target_label) ? 1 : 0;
    return static_cast<double>(hit) / blended.size();
}

// Applies the reversed trigger to a seeded fraction of the tuning set
// (labels unchanged, provenance reversed) and returns it merged with the
// untouched remainder.
inline LabeledDataset make_reversed_dataset(const LabeledDataset& d_t, const ReversedTrigger& trig,
                                            double frac, std::uint64_t seed) {
    d_t.validate();
    if (!(frac > 0.0) || frac > 1.0) throw InvalidInput("make_reversed_dataset: frac must be in (0,1]");
    const int n_rev = fraction_count(frac, d_t.size());
    std::vector<int> order(d_t.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::seeded(stream_seed(seed, 0xD2));
    rng.shuffle(order);
    LabeledDataset out = d_t;
    for (int j = 0; j < n_rev; ++j) {
        const int idx = order[j];
        ImageExample rev = apply_reversed_trigger(d_t.examples[idx], trig);
        rev.label = d_t.examples[idx].label;
        rev.original_label = d_t.examples[idx].original_label;
        out.examples[idx] = std::move(rev);
    }
    return out;
}

} // namespace bprl
