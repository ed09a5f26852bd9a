#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <string>
#include <vector>

#include "bprl/error.hpp"
#include "bprl/rng.hpp"

namespace bprl {

enum class Provenance { clean, poisoned, reversed };

// One H*W*C image with pixels in [0,1], flattened row-major (row, col,
// channel). original_label keeps the pre-poison class so provenance never
// gets lost when an attacker rewrites the label.
struct ImageExample {
    std::vector<float> pixels;
    int label = 0;
    int original_label = 0;
    Provenance provenance = Provenance::clean;
};

struct LabeledDataset {
    std::vector<ImageExample> examples;
    int class_count = 0;
    int h = 0, w = 0, c = 0;

    int dim() const { return h * w * c; }
    int size() const { return static_cast<int>(examples.size()); }

    void validate() const {
        if (examples.empty()) throw InvalidInput("LabeledDataset: empty");
        if (class_count < 1) throw InvalidInput("LabeledDataset: class_count must be >= 1");
        for (const auto& ex : examples) {
            if (static_cast<int>(ex.pixels.size()) != dim()) {
                throw InvalidInput("LabeledDataset: example dims do not match dataset dims");
            }
            if (ex.label < 0 || ex.label >= class_count || ex.original_label < 0 ||
                ex.original_label >= class_count) {
                throw InvalidInput("LabeledDataset: label out of range");
            }
        }
    }

    int count_with(Provenance p) const {
        int n = 0;
        for (const auto& ex : examples) n += (ex.provenance == p) ? 1 : 0;
        return n;
    }
};

inline float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

// floor(frac * n) with a nudge so decimal rates like 0.29 * 100 land on the
// intended integer instead of one below it.
inline int fraction_count(double frac, int n) {
    return static_cast<int>(std::floor(frac * static_cast<double>(n) + 1e-9));
}

// ---------------------------------------------------------------- triggers

// A fixed input transformation: either a saturated 3x3 checkerboard patch
// anchored at the bottom-right corner, or a blend with a fixed pseudo-noise
// pattern whose strength differs between the training and inference phases.
struct TriggerSpec {
    enum class Kind { patch, blended };
    Kind kind = Kind::patch;
    // patch anchor: (row, col) offsets measured inward from the bottom-right
    int anchor_row = 0;
    int anchor_col = 0;
    // blended
    std::vector<float> blend_pattern; // H*W*C, values in [0,1]
    float blend_ratio_train = 0.1f;
    float blend_ratio_eval = 0.2f;
};

enum class TriggerPhase { train, eval };

constexpr int kPatchSide = 3;
// Pattern seed is a fixed constant: the trigger is one attack artifact, not
// an experiment-dependent quantity.
constexpr std::uint64_t kBlendPatternSeed = 0xB1E4DEDULL;

inline std::vector<float> make_blend_pattern(int h, int w, int c) {
    Rng rng = Rng::seeded(kBlendPatternSeed);
    std::vector<float> pat(static_cast<std::size_t>(h) * w * c);
    for (auto& v : pat) v = clamp01(rng.normal(0.5f, 0.25f));
    return pat;
}

inline TriggerSpec make_patch_trigger(int anchor_row = 0, int anchor_col = 0) {
    TriggerSpec t;
    t.kind = TriggerSpec::Kind::patch;
    t.anchor_row = anchor_row;
    t.anchor_col = anchor_col;
    return t;
}

inline TriggerSpec make_blended_trigger(int h, int w, int c, float ratio_train = 0.1f,
                                        float ratio_eval = 0.2f) {
    TriggerSpec t;
    t.kind = TriggerSpec::Kind::blended;
    t.blend_pattern = make_blend_pattern(h, w, c);
    t.blend_ratio_train = ratio_train;
    t.blend_ratio_eval = ratio_eval;
    return t;
}

// Stamps the trigger onto a copy of the example. Patch kind overwrites the
// 3x3 corner block with the checkerboard (1 at the block corners); blended
// kind mixes x' = (1-r)*x + r*pattern at the phase's ratio. Marks the result
// poisoned; the label is never touched here.
inline ImageExample apply_trigger(const ImageExample& x, const TriggerSpec& trig,
                                  TriggerPhase phase, int h, int w, int c) {
    ImageExample out = x;
    if (trig.kind == TriggerSpec::Kind::patch) {
        const int row0 = h - kPatchSide - trig.anchor_row;
        const int col0 = w - kPatchSide - trig.anchor_col;
        if (row0 < 0 || col0 < 0 || row0 + kPatchSide > h || col0 + kPatchSide > w) {
            throw InvalidInput("apply_trigger: patch does not fit inside image bounds");
        }
        for (int r = 0; r < kPatchSide; ++r) {
            for (int cc = 0; cc < kPatchSide; ++cc) {
                const float v = ((r + cc) % 2 == 0) ? 1.0f : 0.0f;
                for (int ch = 0; ch < c; ++ch) {
                    out.pixels[(static_cast<std::size_t>(row0 + r) * w + (col0 + cc)) * c + ch] = v;
                }
            }
        }
    } else {
        if (trig.blend_pattern.size() != x.pixels.size()) {
            throw InvalidInput("apply_trigger: blend pattern dims do not match image");
        }
        const float r = (phase == TriggerPhase::train) ? trig.blend_ratio_train
                                                       : trig.blend_ratio_eval;
        for (std::size_t i = 0; i < out.pixels.size(); ++i) {
            out.pixels[i] = clamp01((1.0f - r) * x.pixels[i] + r * trig.blend_pattern[i]);
        }
    }
    out.provenance = Provenance::poisoned;
    return out;
}

// --------------------------------------------------------------- synthesis

// Per-class template images drawn once; the dataset is template + gaussian
// pixel noise. Templates are redrawn until pairwise L2 distances clear a
// floor so classes stay separable.
//
// Templates are mid-grey plus a contrast-limited random field rather than
// full-range uniform pixels: classes must overlap enough that a classifier
// keeps a nonzero loss, otherwise fine-tuning exerts no pressure on the
// weights and the tuning defenses degenerate to no-ops. The saturated 0/1
// trigger patch stays far more salient than any class feature.
// TEMPORARY calibration override via BPRL_CONTRAST; frozen before release.
inline float kTemplateContrastF() {
    const char* e = std::getenv("BPRL_CONTRAST");
    return e ? static_cast<float>(std::atof(e)) : 0.3f;
}
#define kTemplateContrast kTemplateContrastF()

struct ClassTemplates {
    int h = 0, w = 0, c = 0;
    float noise_sigma = 0.15f;
    std::vector<std::vector<float>> templates;

    int class_count() const { return static_cast<int>(templates.size()); }
};

inline ClassTemplates make_class_templates(int h, int w, int c, int classes,
                                           float noise_sigma, std::uint64_t seed) {
    if (classes < 2) throw InvalidInput("make_class_templates: need >= 2 classes");
    ClassTemplates t;
    t.h = h;
    t.w = w;
    t.c = c;
    t.noise_sigma = noise_sigma;
    Rng rng = Rng::seeded(seed);
    const std::size_t d = static_cast<std::size_t>(h) * w * c;
    const double min_dist = 0.5 * std::sqrt(static_cast<double>(d)) * 0.1;
    for (int k = 0; k < classes; ++k) {
        for (int attempt = 0; attempt < 1000; ++attempt) {
            std::vector<float> cand(d);
            for (auto& v : cand) v = 0.5f + kTemplateContrast * (rng.next_float() - 0.5f);
            bool ok = true;
            for (const auto& prev : t.templates) {
                double s = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const double diff = static_cast<double>(cand[i]) - prev[i];
                    s += diff * diff;
                }
                if (std::sqrt(s) <= min_dist) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                t.templates.push_back(std::move(cand));
                break;
            }
        }
        if (static_cast<int>(t.templates.size()) != k + 1) {
            throw InvalidInput("make_class_templates: could not separate templates");
        }
    }
    return t;
}

// Balanced draw: n_per_class noisy copies of each template, class-major
// order, pixels clamped to [0,1].
inline LabeledDataset make_dataset(const ClassTemplates& templates, int n_per_class,
                                   std::uint64_t seed) {
    if (n_per_class < 1) throw InvalidInput("make_dataset: n_per_class must be >= 1");
    LabeledDataset d;
    d.h = templates.h;
    d.w = templates.w;
    d.c = templates.c;
    d.class_count = templates.class_count();
    Rng rng = Rng::seeded(seed);
    for (int k = 0; k < templates.class_count(); ++k) {
        const auto& tpl = templates.templates[k];
        for (int i = 0; i < n_per_class; ++i) {
            ImageExample ex;
            ex.pixels.resize(tpl.size());
            for (std::size_t j = 0; j < tpl.size(); ++j) {
                ex.pixels[j] = clamp01(tpl[j] + rng.normal(0.0f, templates.noise_sigma));
            }
            ex.label = k;
            ex.original_label = k;
            ex.provenance = Provenance::clean;
            d.examples.push_back(std::move(ex));
        }
    }
    return d;
}

// --------------------------------------------------------------- poisoning

struct PoisonPlan {
    double rate = 0.05;        // fraction of the training set to poison
    int target_label = 0;      // y_t
    TriggerSpec trigger;
    std::uint64_t seed = 1;
};

// Dirty-label poisoning: floor(rate*N) examples drawn without replacement
// from the non-target classes get the train-phase trigger and the target
// label; everything else is untouched; the output order is reshuffled.
inline LabeledDataset poison_dataset(const LabeledDataset& train, const PoisonPlan& plan) {
    train.validate();
    if (plan.target_label < 0 || plan.target_label >= train.class_count) {
        throw InvalidInput("poison_dataset: target label out of range");
    }
    const int n_poison = fraction_count(plan.rate, train.size());
    if (n_poison < 1) throw InvalidInput("poison_dataset: rate * dataset size < 1");
    std::vector<int> eligible;
    for (int i = 0; i < train.size(); ++i) {
        if (train.examples[i].label != plan.target_label) eligible.push_back(i);
    }
    if (static_cast<int>(eligible.size()) < n_poison) {
        throw InvalidInput("poison_dataset: not enough non-target examples (" +
                           std::to_string(eligible.size()) + " < " + std::to_string(n_poison) + ")");
    }
    Rng rng = Rng::seeded(plan.seed);
    rng.shuffle(eligible);
    LabeledDataset out = train;
    for (int j = 0; j < n_poison; ++j) {
        const int idx = eligible[j];
        ImageExample poisoned = apply_trigger(train.examples[idx], plan.trigger,
                                              TriggerPhase::train, train.h, train.w, train.c);
        poisoned.label = plan.target_label;
        poisoned.original_label = train.examples[idx].label;
        out.examples[idx] = std::move(poisoned);
    }
    std::vector<int> order(out.examples.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<ImageExample> shuffled;
    shuffled.reserve(out.examples.size());
    for (int idx : order) shuffled.push_back(std::move(out.examples[idx]));
    out.examples = std::move(shuffled);
    return out;
}

// Triggered copy of the test set for measuring attack success: target-class
// originals are dropped, everything else gets the eval-phase trigger and the
// target label.
inline LabeledDataset make_backdoor_testset(const LabeledDataset& test, const TriggerSpec& trig,
                                            int target_label) {
    test.validate();
    LabeledDataset out;
    out.class_count = test.class_count;
    out.h = test.h;
    out.w = test.w;
    out.c = test.c;
    for (const auto& ex : test.examples) {
        if (ex.original_label == target_label) continue;
        ImageExample t = apply_trigger(ex, trig, TriggerPhase::eval, test.h, test.w, test.c);
        t.original_label = ex.original_label;
        t.label = target_label;
        out.examples.push_back(std::move(t));
    }
    if (out.examples.empty()) {
        throw InvalidInput("make_backdoor_testset: every example has the target label");
    }
    return out;
}

} // namespace bprl
