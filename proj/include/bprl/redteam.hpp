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

// ----------------------------------------------------------- retuning attack

struct RaConfig {
    int n_poison = 5;
    int total = 1000;
    int epochs = 5;
    float lr = 0.01f;
    float momentum = 0.9f;
    int batch_size = 64;
    std::uint64_t seed = 1;

    void validate() const {
        if (n_poison < 1) throw InvalidInput("RaConfig: n_poison must be >= 1");
        if (n_poison >= total) throw InvalidInput("RaConfig: n_poison must be < total");
        if (epochs < 1) throw InvalidInput("RaConfig: epochs must be >= 1");
        if (!(lr > 0.0f)) throw InvalidInput("RaConfig: lr must be > 0");
    }
};

// Retuning set: n_poison triggered target-labeled samples from non-target
// classes plus benign filler with true labels, all drawn seeded from the
// clean pool and shuffled together.
inline LabeledDataset build_ra_dataset(const LabeledDataset& train_pool, const TriggerSpec& trig,
                                       int target_label, const RaConfig& cfg,
                                       int poisoned_in_training = 0) {
    cfg.validate();
    train_pool.validate();
    if (poisoned_in_training > 0 && cfg.n_poison * 100 >= poisoned_in_training) {
        std::fprintf(stderr,
                     "warning: retuning set uses %d poisoned samples, not under 1%% of the %d "
                     "poisoned during training\n",
                     cfg.n_poison, poisoned_in_training);
    }
    std::vector<int> non_target;
    std::vector<int> order(train_pool.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::seeded(stream_seed(cfg.seed, 0xAA));
    rng.shuffle(order);
    LabeledDataset out;
    out.class_count = train_pool.class_count;
    out.h = train_pool.h;
    out.w = train_pool.w;
    out.c = train_pool.c;
    std::size_t cursor = 0;
    for (; cursor < order.size() && static_cast<int>(out.examples.size()) < cfg.n_poison; ++cursor) {
        const ImageExample& ex = train_pool.examples[order[cursor]];
        if (ex.label == target_label) continue;
        ImageExample p = apply_trigger(ex, trig, TriggerPhase::train, train_pool.h,
                                       train_pool.w, train_pool.c);
        p.label = target_label;
        p.original_label = ex.label;
        out.examples.push_back(std::move(p));
    }
    if (static_cast<int>(out.examples.size()) < cfg.n_poison) {
        throw InvalidInput("build_ra_dataset: pool has too few non-target examples");
    }
    const int n_benign = cfg.total - cfg.n_poison;
    int taken = 0;
    for (std::size_t i = cursor; i < order.size() && taken < n_benign; ++i, ++taken) {
        out.examples.push_back(train_pool.examples[order[i]]);
    }
    if (taken < n_benign) throw InvalidInput("build_ra_dataset: pool too small for requested total");
    rng.shuffle(out.examples);
    return out;
}

// Brief fine-tuning of a purified model on the retuning set; the caller
// measures the resulting attack success rate.
inline Model retuning_attack(const Model& purified, const LabeledDataset& ra_set,
                             const RaConfig& cfg) {
    cfg.validate();
    EngineOptions opt;
    opt.rule = StepRule::plain;
    opt.lr = cfg.lr;
    opt.momentum = cfg.momentum;
    opt.batch_size = cfg.batch_size;
    opt.iterations = cfg.epochs * MinibatchSchedule(ra_set.size(), cfg.batch_size, 0).batches_per_epoch();
    opt.seed = stream_seed(cfg.seed, 0xAB);
    return run_sgd(purified, ra_set, opt);
}

// ------------------------------------------------------- reactivation attack

// Perturbation generator: an MLP over flattened pixels whose tanh-squashed
// output, scaled by epsilon, is added to the input. Keeps every perturbed
// pixel within epsilon in L-infinity after clamping to [0,1].
struct QraGenerator {
    Model mlp;             // widths [d, hidden, hidden, d], ReLU hidden, linear out
    float epsilon = 16.0f / 255.0f;
    float alpha = 0.2f;
};

inline QraGenerator make_qra_generator(int input_dim, int hidden, float epsilon, float alpha,
                                       std::uint64_t seed) {
    if (input_dim < 1 || hidden < 1) throw InvalidInput("make_qra_generator: bad widths");
    if (!(epsilon > 0.0f)) throw InvalidInput("make_qra_generator: epsilon must be > 0");
    QraGenerator gen;
    gen.mlp = make_model(ArchSpec{{input_dim, hidden, hidden, input_dim}}, seed);
    gen.epsilon = epsilon;
    gen.alpha = alpha;
    return gen;
}

// tanh-squashed generator output for a batch of flattened images.
inline Matrix qra_perturbation(const QraGenerator& gen, const Matrix& batch,
                               ForwardCache* cache = nullptr) {
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    Matrix out = forward_cached(gen.mlp, batch, c);
    for (float& v : out.data) v = std::tanh(v);
    return out;
}

inline ImageExample qra_apply(const QraGenerator& gen, const ImageExample& x) {
    if (static_cast<int>(x.pixels.size()) != gen.mlp.arch.input_width()) {
        throw InvalidInput("qra_apply: image dims do not match generator");
    }
    Matrix batch(1, static_cast<int>(x.pixels.size()));
    std::copy(x.pixels.begin(), x.pixels.end(), batch.row(0));
    const Matrix pert = qra_perturbation(gen, batch);
    ImageExample out = x;
    for (std::size_t j = 0; j < out.pixels.size(); ++j) {
        out.pixels[j] = clamp01(x.pixels[j] + gen.epsilon * pert.row(0)[j]);
    }
    return out;
}

inline double kl_divergence_rows(const Matrix& target_probs, const Matrix& probs) {
    double total = 0.0;
    for (int r = 0; r < probs.rows; ++r) {
        const float* q = target_probs.row(r);
        const float* p = probs.row(r);
        for (int j = 0; j < probs.cols; ++j) {
            if (q[j] > 0.0f) {
                total += static_cast<double>(q[j]) *
                         (std::log(static_cast<double>(q[j])) - std::log(std::max(p[j], 1e-30f)));
            }
        }
    }
    return total / probs.rows;
}

// Generator objective over a whole dataset: KL from the retuned model's
// distribution on clean inputs to the purified model's distribution on
// perturbed inputs, plus the surrogate's cross-entropy on perturbed inputs.
struct QraObjective {
    double kl = 0.0;
    double ce = 0.0;
};

inline QraObjective qra_objective(const QraGenerator& gen, const Model& w_p, const Model& w_ra,
                                  const Model& w_e, const LabeledDataset& d_c) {
    std::vector<int> all(d_c.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<int> labels;
    const Matrix inputs = gather_batch(d_c, all, &labels);
    const Matrix target_probs = softmax_rows(forward(w_ra, inputs));
    const Matrix pert = qra_perturbation(gen, inputs);
    Matrix perturbed(inputs.rows, inputs.cols);
    for (int r = 0; r < inputs.rows; ++r) {
        for (int j = 0; j < inputs.cols; ++j) {
            perturbed.at(r, j) = clamp01(inputs.at(r, j) + gen.epsilon * pert.at(r, j));
        }
    }
    QraObjective obj;
    obj.kl = kl_divergence_rows(target_probs, softmax_rows(forward(w_p, perturbed)));
    obj.ce = ce_loss(forward(w_e, perturbed), labels);
    return obj;
}

// Trains the perturbation generator against a frozen triple: the purified
// target W_p, its retuned version W_ra (whose behavior the perturbation
// mimics), and the exactly-purified surrogate W_e that anchors benign
// behavior. Only the generator parameters move.
inline QraGenerator qra_train(QraGenerator gen, const Model& w_p, const Model& w_ra,
                              const Model& w_e, const LabeledDataset& d_c, int epochs, float lr,
                              std::uint64_t seed, std::vector<double>* epoch_loss = nullptr) {
    d_c.validate();
    if (!(w_p.arch == w_ra.arch) || !(w_p.arch == w_e.arch)) {
        throw InvalidInput("qra_train: purified/retuned/surrogate archs differ");
    }
    if (d_c.dim() != w_p.arch.input_width() || d_c.dim() != gen.mlp.arch.input_width()) {
        throw InvalidInput("qra_train: dataset dims do not match models");
    }
    if (epochs < 1) throw InvalidInput("qra_train: epochs must be >= 1");
    if (!(lr > 0.0f)) throw InvalidInput("qra_train: lr must be > 0");
    const bool has_poisoned = d_c.count_with(Provenance::poisoned) > 0;
    const bool has_clean = d_c.count_with(Provenance::clean) > 0;
    if (!has_poisoned || !has_clean) {
        std::fprintf(stderr, "warning: qra training set should mix benign and backdoored samples\n");
    }
    const int d = d_c.dim();
    const int n = d_c.size();

    // Retuned-model target distributions depend only on the unperturbed
    // inputs; compute them once.
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    const Matrix all_inputs = gather_batch(d_c, all);
    const Matrix target_probs_all = softmax_rows(forward(w_ra, all_inputs));

    MinibatchSchedule schedule(n, 64, stream_seed(seed, 0xC1));
    const int bpe = schedule.batches_per_epoch();
    ParamVector velocity(gen.mlp.params.size());
    std::vector<int> idx;
    std::vector<int> labels;
    double epoch_sum = 0.0;
    int epoch_n = 0;
    const int iterations = epochs * bpe;
    for (int it = 0; it < iterations; ++it) {
        schedule.next(idx);
        const int bn = static_cast<int>(idx.size());
        const Matrix batch = gather_batch(d_c, idx, &labels);

        ForwardCache gen_cache;
        Matrix pert = qra_perturbation(gen, batch, &gen_cache);

        // x' = clamp(x + eps * tanh(u)); remember which pixels clamped
        Matrix perturbed(bn, d);
        std::vector<char> interior(static_cast<std::size_t>(bn) * d);
        for (int r = 0; r < bn; ++r) {
            const float* x = batch.row(r);
            const float* pv = pert.row(r);
            float* xp = perturbed.row(r);
            for (int j = 0; j < d; ++j) {
                const float raw = x[j] + gen.epsilon * pv[j];
                xp[j] = clamp01(raw);
                interior[static_cast<std::size_t>(r) * d + j] = (raw > 0.0f && raw < 1.0f) ? 1 : 0;
            }
        }

        Matrix target_q(bn, d_c.class_count);
        for (int r = 0; r < bn; ++r) {
            std::copy(target_probs_all.row(idx[r]), target_probs_all.row(idx[r]) + d_c.class_count,
                      target_q.row(r));
        }

        ForwardCache p_cache;
        const Matrix& logits_p = forward_cached(w_p, perturbed, p_cache);
        const Matrix probs_p = softmax_rows(logits_p);
        Matrix dlogits_p(bn, d_c.class_count);
        const float inv_bn = 1.0f / static_cast<float>(bn);
        for (int r = 0; r < bn; ++r) {
            const float* p = probs_p.row(r);
            const float* q = target_q.row(r);
            float* dl = dlogits_p.row(r);
            for (int j = 0; j < d_c.class_count; ++j) dl[j] = (p[j] - q[j]) * inv_bn;
        }
        Matrix grad_x_p;
        backward(w_p, p_cache, dlogits_p, nullptr, &grad_x_p);

        ForwardCache e_cache;
        const Matrix& logits_e = forward_cached(w_e, perturbed, e_cache);
        Matrix dlogits_e;
        const double ce_e = ce_loss(logits_e, labels, &dlogits_e);
        for (float& v : dlogits_e.data) v *= gen.alpha;
        Matrix grad_x_e;
        backward(w_e, e_cache, dlogits_e, nullptr, &grad_x_e);

        // chain to the generator's pre-tanh output
        Matrix d_out(bn, d);
        for (int r = 0; r < bn; ++r) {
            const float* gp = grad_x_p.row(r);
            const float* ge = grad_x_e.row(r);
            const float* pv = pert.row(r);
            float* du = d_out.row(r);
            for (int j = 0; j < d; ++j) {
                const float gx = gp[j] + ge[j];
                const float mask = interior[static_cast<std::size_t>(r) * d + j] ? 1.0f : 0.0f;
                du[j] = gx * mask * gen.epsilon * (1.0f - pv[j] * pv[j]);
            }
        }
        Gradient gen_grad;
        backward(gen.mlp, gen_cache, d_out, &gen_grad, nullptr);
        apply_sgd_update(gen.mlp.params, velocity, gen_grad, lr, 0.0f);

        const double kl = kl_divergence_rows(target_q, probs_p);
        const double batch_loss = kl + gen.alpha * ce_e;
        if (!std::isfinite(batch_loss)) {
            throw Diverged("qra_train: non-finite loss at epoch " + std::to_string(it / bpe + 1));
        }
        epoch_sum += batch_loss * bn;
        epoch_n += bn;
        if (epoch_loss && (it + 1) % bpe == 0) {
            epoch_loss->push_back(epoch_sum / epoch_n);
            epoch_sum = 0.0;
            epoch_n = 0;
        }
    }
    return gen;
}

// Target-label rates on perturbed clean and perturbed triggered inputs.
struct QraReport {
    int n_clean = 0;
    int n_triggered = 0;
    int clean_hit = 0;
    int triggered_hit = 0;

    double c_asr() const { return n_clean ? static_cast<double>(clean_hit) / n_clean : 0.0; }
    double p_asr() const { return n_triggered ? static_cast<double>(triggered_hit) / n_triggered : 0.0; }
};

inline QraReport qra_evaluate(const QraGenerator& gen, const Model& model,
                              const LabeledDataset& clean_test,
                              const LabeledDataset& backdoor_test, int target_label) {
    if (!(model.arch.input_width() == gen.mlp.arch.input_width())) {
        throw InvalidInput("qra_evaluate: generator and model input widths differ");
    }
    QraReport rep;
    LabeledDataset perturbed_clean;
    perturbed_clean.class_count = clean_test.class_count;
    perturbed_clean.h = clean_test.h;
    perturbed_clean.w = clean_test.w;
    perturbed_clean.c = clean_test.c;
    for (const auto& ex : clean_test.examples) {
        if (ex.original_label == target_label) continue;
        perturbed_clean.examples.push_back(qra_apply(gen, ex));
    }
    if (!perturbed_clean.examples.empty()) {
        const std::vector<int> pred = predict_all(model, perturbed_clean);
        rep.n_clean = perturbed_clean.size();
        for (int p : pred) rep.clean_hit += (p == target_label) ? 1 : 0;
    }
    LabeledDataset perturbed_trig = backdoor_test;
    for (auto& ex : perturbed_trig.examples) ex = qra_apply(gen, ex);
    const std::vector<int> pred = predict_all(model, perturbed_trig);
    rep.n_triggered = perturbed_trig.size();
    for (int p : pred) rep.triggered_hit += (p == target_label) ? 1 : 0;
    return rep;
}

// Same evaluation against a purified model the generator never saw.
inline QraReport qra_transfer(const QraGenerator& gen, const Model& other_purified,
                              const LabeledDataset& clean_test,
                              const LabeledDataset& backdoor_test, int target_label) {
    if (!(other_purified.arch.input_width() == gen.mlp.arch.input_width())) {
        throw InvalidInput("qra_transfer: arch mismatch");
    }
    return qra_evaluate(gen, other_purified, clean_test, backdoor_test, target_label);
}

} // namespace bprl
