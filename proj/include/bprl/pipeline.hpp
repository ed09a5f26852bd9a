#pragma once
#include <cstdio>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "bprl/config.hpp"
#include "bprl/dataset.hpp"
#include "bprl/landscape.hpp"
#include "bprl/purifier.hpp"
#include "bprl/redteam.hpp"
#include "bprl/trainer.hpp"

namespace bprl {

// Composition of the whole experiment from one config: datasets, backdoor
// injection, tuning defenses, attacks. The CLI and the acceptance suite both
// drive this layer so their numbers agree.

// Fixed classifier topology at desk scale: one ReLU hidden layer.
// TEMPORARY calibration override via BPRL_HIDDEN; frozen before release.
inline int kClassifierHiddenDefault() {
    const char* e = std::getenv("BPRL_HIDDEN");
    return e ? std::atoi(e) : 64;
}
#define kClassifierHidden kClassifierHiddenDefault()

// Independent sub-streams of the master seed, one per pipeline stage.
namespace streams {
constexpr std::uint64_t templates = 1;
constexpr std::uint64_t train_set = 2;
constexpr std::uint64_t test_set = 3;
constexpr std::uint64_t tune_set = 4;
constexpr std::uint64_t poison = 5;
constexpr std::uint64_t model_train = 6;
constexpr std::uint64_t purify = 7;
constexpr std::uint64_t inversion = 8;
constexpr std::uint64_t reversed = 9;
constexpr std::uint64_t ra = 10;
constexpr std::uint64_t qra_set = 11;
constexpr std::uint64_t qra_train = 12;
} // namespace streams

inline TriggerSpec trigger_from_config(const ExperimentConfig& cfg) {
    if (cfg.trigger.kind == "patch") {
        return make_patch_trigger(cfg.trigger.anchor_row, cfg.trigger.anchor_col);
    }
    return make_blended_trigger(cfg.dataset.h, cfg.dataset.w, cfg.dataset.c,
                                static_cast<float>(cfg.trigger.blend_ratio_train),
                                static_cast<float>(cfg.trigger.blend_ratio_eval));
}

inline ArchSpec classifier_arch(const ExperimentConfig& cfg) {
    const char* h2 = std::getenv("BPRL_HIDDEN2"); // TEMPORARY calibration dial
    if (h2 && std::atoi(h2) > 0) {
        return ArchSpec{{cfg.dataset.h * cfg.dataset.w * cfg.dataset.c, kClassifierHidden,
                         std::atoi(h2), cfg.dataset.classes}};
    }
    return ArchSpec{{cfg.dataset.h * cfg.dataset.w * cfg.dataset.c, kClassifierHidden,
                     cfg.dataset.classes}};
}

// Everything derived from the config up to the two reference models.
struct ExperimentBundle {
    ExperimentConfig cfg;
    TriggerSpec trigger;
    ClassTemplates templates;
    LabeledDataset train_clean;   // pristine training pool
    LabeledDataset train_poisoned;
    LabeledDataset test_clean;
    LabeledDataset test_backdoor; // eval-phase triggered, target-labeled
    LabeledDataset tune_clean;    // defender's clean tuning data
    Model clean_model;
    Model backdoored_model;
    EvalReport clean_eval;
    EvalReport backdoored_eval;
    int n_poisoned_train = 0;
};

inline SgdConfig train_sgd_config(const ExperimentConfig& cfg) {
    SgdConfig s;
    s.lr = static_cast<float>(cfg.train.lr);
    s.momentum = static_cast<float>(cfg.train.momentum);
    s.batch_size = cfg.train.batch;
    s.epochs = cfg.train.epochs;
    s.seed = stream_seed(cfg.seed, streams::model_train);
    return s;
}

inline ExperimentBundle build_bundle(const ExperimentConfig& cfg) {
    ExperimentBundle b;
    b.cfg = cfg;
    b.trigger = trigger_from_config(cfg);
    b.templates = make_class_templates(cfg.dataset.h, cfg.dataset.w, cfg.dataset.c,
                                       cfg.dataset.classes,
                                       static_cast<float>(cfg.dataset.noise_sigma),
                                       stream_seed(cfg.seed, streams::templates));
    b.train_clean = make_dataset(b.templates, cfg.dataset.n_train_per_class,
                                 stream_seed(cfg.seed, streams::train_set));
    b.test_clean = make_dataset(b.templates, cfg.dataset.n_test_per_class,
                                stream_seed(cfg.seed, streams::test_set));
    const int tune_per_class =
        (cfg.purify.tune_n + cfg.dataset.classes - 1) / cfg.dataset.classes;
    b.tune_clean = make_dataset(b.templates, tune_per_class,
                                stream_seed(cfg.seed, streams::tune_set));
    while (b.tune_clean.size() > cfg.purify.tune_n) b.tune_clean.examples.pop_back();

    PoisonPlan plan;
    plan.rate = cfg.poison.rate;
    plan.target_label = cfg.poison.target;
    plan.trigger = b.trigger;
    plan.seed = stream_seed(cfg.seed, streams::poison);
    b.train_poisoned = poison_dataset(b.train_clean, plan);
    b.n_poisoned_train = b.train_poisoned.count_with(Provenance::poisoned);
    b.test_backdoor = make_backdoor_testset(b.test_clean, b.trigger, cfg.poison.target);

    const ArchSpec arch = classifier_arch(cfg);
    const SgdConfig sgd = train_sgd_config(cfg);
    b.clean_model = train(arch, b.train_clean, sgd);
    b.backdoored_model = train(arch, b.train_poisoned, sgd);
    b.clean_eval = evaluate(b.clean_model, b.test_clean, b.test_backdoor);
    b.backdoored_eval = evaluate(b.backdoored_model, b.test_clean, b.test_backdoor);
    return b;
}

// ------------------------------------------------------------- purification

// Runs the lambda grid and keeps the sparsest mask that reaches 0.8 attack
// success on the backdoored model (falling back to the strongest one).
inline ReversedTrigger invert_for_bundle(const ExperimentBundle& b) {
    const auto& inv = b.cfg.purify.inversion;
    ReversedTrigger best;
    double best_l1 = 0.0;
    double best_asr = -1.0;
    bool have_good = false;
    for (double lambda : inv.lambda_grid) {
        InversionConfig icfg;
        icfg.target_label = b.cfg.poison.target;
        icfg.lambda_mask = lambda;
        icfg.steps = inv.steps;
        icfg.lr = static_cast<float>(inv.lr);
        icfg.seed = stream_seed(b.cfg.seed, streams::inversion);
        const ReversedTrigger cand = invert_trigger(b.backdoored_model, b.tune_clean, icfg);
        const double asr = reversed_trigger_asr(b.backdoored_model, b.tune_clean, cand,
                                                b.cfg.poison.target);
        double l1 = 0.0;
        for (float m : cand.mask) l1 += m;
        if (asr >= 0.8) {
            if (!have_good || l1 < best_l1) {
                best = cand;
                best_l1 = l1;
                have_good = true;
            }
        } else if (!have_good && asr > best_asr) {
            best = cand;
            best_asr = asr;
        }
    }
    return best;
}

inline LabeledDataset pam_tuning_set(const ExperimentBundle& b, const ReversedTrigger* trig) {
    if (b.cfg.purify.pam.reversed_frac <= 0.0 || trig == nullptr) return b.tune_clean;
    return make_reversed_dataset(b.tune_clean, *trig, b.cfg.purify.pam.reversed_frac,
                                 stream_seed(b.cfg.seed, streams::reversed));
}

inline PamConfig pam_config(const ExperimentConfig& cfg, double rho) {
    PamConfig p;
    p.rho = rho;
    p.lr = static_cast<float>(cfg.purify.pam.lr);
    p.iterations = cfg.purify.pam.iterations;
    p.batch_size = cfg.train.batch;
    p.momentum = static_cast<float>(cfg.purify.pam.momentum);
    p.seed = stream_seed(cfg.seed, streams::purify);
    return p;
}

// Largest grid rho whose purified accuracy stays within 3 points of the
// clean model; falls back to the smallest grid value when none qualifies.
inline double pick_pam_rho(const ExperimentBundle& b, const LabeledDataset& d_mix,
                           std::vector<std::pair<double, EvalReport>>* sweep = nullptr) {
    const double floor_acc = b.clean_eval.c_acc() - 0.03;
    std::vector<double> grid = b.cfg.purify.pam.rho_grid;
    std::sort(grid.begin(), grid.end());
    double chosen = grid.front();
    for (double rho : grid) {
        const Model purified = pam(b.backdoored_model.params, b.backdoored_model.arch, d_mix,
                                   pam_config(b.cfg, rho));
        const EvalReport rep = evaluate(purified, b.test_clean, b.test_backdoor);
        if (sweep) sweep->push_back({rho, rep});
        if (rep.c_acc() >= floor_acc) chosen = rho;
    }
    return chosen;
}

struct PurifyResult {
    Model model;
    std::string method;
    double pam_rho = 0.0; // resolved value when method == "pam"
};

inline PurifyResult purify_model(const ExperimentBundle& b, const std::string& method) {
    const ExperimentConfig& cfg = b.cfg;
    const std::uint64_t seed = stream_seed(cfg.seed, streams::purify);
    PurifyResult out;
    out.method = method;
    if (method == "plain") {
        SgdConfig s;
        s.lr = static_cast<float>(cfg.purify.plain.lr);
        const char* pm = std::getenv("BPRL_PLAIN_MOM"); // TEMPORARY calibration dial
        s.momentum = pm ? static_cast<float>(std::atof(pm)) : 0.9f;
        const char* pb = std::getenv("BPRL_PLAIN_BATCH"); // TEMPORARY calibration dial
        s.batch_size = pb ? std::atoi(pb) : cfg.train.batch;
        s.epochs = cfg.purify.plain.epochs;
        s.seed = seed;
        out.model = finetune_plain(b.backdoored_model, b.tune_clean, s);
    } else if (method == "ep") {
        SgdConfig s;
        s.lr = static_cast<float>(cfg.purify.ep.lr);
        s.momentum = 0.9f;
        s.batch_size = cfg.train.batch;
        s.epochs = cfg.purify.ep.epochs;
        s.seed = seed;
        out.model = finetune_ep(b.backdoored_model, b.tune_clean, b.trigger, cfg.purify.ep.frac, s);
    } else if (method == "sam") {
        SamConfig s;
        s.rho_sam = cfg.purify.sam.rho;
        s.lr = static_cast<float>(cfg.purify.sam.lr);
        s.epochs = cfg.purify.sam.epochs;
        s.batch_size = cfg.train.batch;
        s.seed = seed;
        out.model = finetune_sam(b.backdoored_model, b.tune_clean, s);
    } else if (method == "pam") {
        ReversedTrigger trig;
        const ReversedTrigger* trig_ptr = nullptr;
        if (cfg.purify.pam.reversed_frac > 0.0) {
            trig = invert_for_bundle(b);
            trig_ptr = &trig;
        }
        const LabeledDataset d_mix = pam_tuning_set(b, trig_ptr);
        out.pam_rho = cfg.purify.pam.rho_auto ? pick_pam_rho(b, d_mix) : cfg.purify.pam.rho;
        out.model = pam(b.backdoored_model.params, b.backdoored_model.arch, d_mix,
                        pam_config(cfg, out.pam_rho));
    } else {
        throw InvalidInput("purify: unknown method '" + method + "' (expected plain|ep|sam|pam)");
    }
    return out;
}

// ----------------------------------------------------------------- attacks

inline RaConfig ra_config(const ExperimentConfig& cfg) {
    RaConfig r;
    r.n_poison = cfg.ra.n_poison;
    r.total = cfg.ra.total;
    r.epochs = cfg.ra.epochs;
    r.lr = static_cast<float>(cfg.ra.lr);
    r.momentum = static_cast<float>(cfg.ra.momentum);
    r.batch_size = cfg.train.batch;
    r.seed = stream_seed(cfg.seed, streams::ra);
    return r;
}

struct RaOutcome {
    Model retuned;
    EvalReport report; // on the retuned model
};

inline RaOutcome run_retuning(const ExperimentBundle& b, const Model& target) {
    const RaConfig cfg = ra_config(b.cfg);
    const LabeledDataset ra_set = build_ra_dataset(b.train_clean, b.trigger, b.cfg.poison.target,
                                                   cfg, b.n_poisoned_train);
    RaOutcome out;
    out.retuned = retuning_attack(target, ra_set, cfg);
    out.report = evaluate(out.retuned, b.test_clean, b.test_backdoor);
    return out;
}

// Mixed query set for generator training: benign examples with true labels
// plus train-phase triggered examples that keep their original labels.
inline LabeledDataset build_qra_set(const ExperimentBundle& b) {
    const auto& q = b.cfg.qra;
    std::vector<int> order(b.train_clean.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::seeded(stream_seed(b.cfg.seed, streams::qra_set));
    rng.shuffle(order);
    if (q.n_benign + q.n_poisoned > b.train_clean.size()) {
        throw InvalidInput("qra: training pool too small for n_benign + n_poisoned");
    }
    LabeledDataset out;
    out.class_count = b.train_clean.class_count;
    out.h = b.train_clean.h;
    out.w = b.train_clean.w;
    out.c = b.train_clean.c;
    int cursor = 0;
    for (int i = 0; i < q.n_benign; ++i, ++cursor) {
        out.examples.push_back(b.train_clean.examples[order[cursor]]);
    }
    for (int i = 0; i < q.n_poisoned; ++i, ++cursor) {
        const ImageExample& ex = b.train_clean.examples[order[cursor]];
        ImageExample t = apply_trigger(ex, b.trigger, TriggerPhase::train, b.train_clean.h,
                                       b.train_clean.w, b.train_clean.c);
        t.label = ex.label; // original label; the surrogate anchors benign behavior
        t.original_label = ex.label;
        out.examples.push_back(std::move(t));
    }
    rng.shuffle(out.examples);
    return out;
}

struct QraOutcome {
    QraGenerator generator;
    Model retuned;       // the retuned model the perturbations mimic
    QraReport on_target; // against the purified model it was trained for
};

inline QraOutcome run_qra(const ExperimentBundle& b, const Model& purified, const Model& surrogate) {
    const auto& q = b.cfg.qra;
    QraOutcome out;
    out.retuned = run_retuning(b, purified).retuned;
    QraGenerator gen = make_qra_generator(b.train_clean.dim(), q.hidden,
                                          static_cast<float>(q.epsilon),
                                          static_cast<float>(q.alpha),
                                          stream_seed(b.cfg.seed, streams::qra_train));
    const LabeledDataset d_c = build_qra_set(b);
    out.generator = qra_train(std::move(gen), purified, out.retuned, surrogate, d_c, q.epochs,
                              static_cast<float>(q.lr), stream_seed(b.cfg.seed, streams::qra_train));
    out.on_target = qra_evaluate(out.generator, purified, b.test_clean, b.test_backdoor,
                                 b.cfg.poison.target);
    return out;
}

} // namespace bprl
