#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bprl/dataset.hpp"
#include "bprl/trainer.hpp"

using namespace bprl;

namespace {

ClassTemplates desk_templates(std::uint64_t seed = 100, float sigma = 0.15f) {
    return make_class_templates(16, 16, 1, 4, sigma, seed);
}

// nearest-template classifier, the independent oracle for dataset quality
int nearest_template(const ClassTemplates& t, const std::vector<float>& pixels) {
    int best = -1;
    double best_d = 0.0;
    for (int k = 0; k < t.class_count(); ++k) {
        double d = 0.0;
        for (std::size_t i = 0; i < pixels.size(); ++i) {
            const double diff = static_cast<double>(pixels[i]) - t.templates[k][i];
            d += diff * diff;
        }
        if (best < 0 || d < best_d) {
            best = k;
            best_d = d;
        }
    }
    return best;
}

ImageExample flat_image(int h, int w, float value) {
    ImageExample ex;
    ex.pixels.assign(static_cast<std::size_t>(h) * w, value);
    return ex;
}

} // namespace

TEST_CASE("zero noise reproduces the templates exactly") {
    const ClassTemplates t = make_class_templates(8, 8, 1, 3, 0.0f, 5);
    const LabeledDataset d = make_dataset(t, 2, 9);
    for (const auto& ex : d.examples) {
        REQUIRE(ex.pixels == t.templates[ex.label]);
    }
}

TEST_CASE("dataset generation is seed-deterministic") {
    const ClassTemplates t = desk_templates();
    const LabeledDataset a = make_dataset(t, 10, 42);
    const LabeledDataset b = make_dataset(t, 10, 42);
    REQUIRE(a.size() == b.size());
    for (int i = 0; i < a.size(); ++i) {
        REQUIRE(a.examples[i].pixels == b.examples[i].pixels);
        REQUIRE(a.examples[i].label == b.examples[i].label);
    }
    const LabeledDataset c = make_dataset(t, 10, 43);
    REQUIRE(a.examples[0].pixels != c.examples[0].pixels);
}

TEST_CASE("default desk draw is nearest-template separable") {
    const ClassTemplates t = desk_templates();
    const LabeledDataset fresh = make_dataset(t, 500, 77);
    int correct = 0;
    for (const auto& ex : fresh.examples) {
        correct += (nearest_template(t, ex.pixels) == ex.label) ? 1 : 0;
    }
    REQUIRE(static_cast<double>(correct) / fresh.size() >= 0.99);
}

TEST_CASE("all pixels stay in unit range") {
    const ClassTemplates t = desk_templates(3, 0.6f); // heavy noise forces clamping
    const LabeledDataset d = make_dataset(t, 20, 8);
    for (const auto& ex : d.examples) {
        for (float p : ex.pixels) {
            REQUIRE(p >= 0.0f);
            REQUIRE(p <= 1.0f);
        }
    }
}

TEST_CASE("patch trigger overwrites exactly the corner block") {
    const TriggerSpec trig = make_patch_trigger();
    const ImageExample zero = flat_image(16, 16, 0.0f);
    const ImageExample out = apply_trigger(zero, trig, TriggerPhase::train, 16, 16, 1);
    REQUIRE(out.provenance == Provenance::poisoned);
    int ones = 0;
    for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) {
            const float v = out.pixels[static_cast<std::size_t>(r) * 16 + c];
            if (r >= 13 && c >= 13) {
                const float expect = ((r - 13 + c - 13) % 2 == 0) ? 1.0f : 0.0f;
                REQUIRE(v == expect);
            } else {
                REQUIRE(v == 0.0f); // untouched outside the 3x3 block
            }
            ones += (v != 0.0f) ? 1 : 0;
        }
    }
    REQUIRE(ones == 5); // checkerboard: corners and center of the block
}

TEST_CASE("patch trigger is idempotent") {
    const TriggerSpec trig = make_patch_trigger();
    ImageExample img = flat_image(16, 16, 0.5f);
    const ImageExample once = apply_trigger(img, trig, TriggerPhase::eval, 16, 16, 1);
    const ImageExample twice = apply_trigger(once, trig, TriggerPhase::eval, 16, 16, 1);
    REQUIRE(once.pixels == twice.pixels);
}

TEST_CASE("patch trigger rejects images it cannot fit") {
    const TriggerSpec trig = make_patch_trigger(30, 0);
    REQUIRE_THROWS_AS(apply_trigger(flat_image(16, 16, 0.0f), trig, TriggerPhase::train, 16, 16, 1),
                      InvalidInput);
}

TEST_CASE("blended trigger arithmetic") {
    TriggerSpec trig;
    trig.kind = TriggerSpec::Kind::blended;
    trig.blend_pattern.assign(16, 1.0f);
    trig.blend_ratio_train = 0.1f;
    trig.blend_ratio_eval = 0.2f;
    ImageExample img;
    img.pixels.assign(16, 0.5f);
    const ImageExample out = apply_trigger(img, trig, TriggerPhase::train, 4, 4, 1);
    for (float p : out.pixels) REQUIRE(p == Catch::Approx(0.55).margin(1e-6));
    const ImageExample eval_out = apply_trigger(img, trig, TriggerPhase::eval, 4, 4, 1);
    for (float p : eval_out.pixels) REQUIRE(p == Catch::Approx(0.6).margin(1e-6));
}

TEST_CASE("blended trigger with zero ratio is the identity on pixels") {
    TriggerSpec trig;
    trig.kind = TriggerSpec::Kind::blended;
    trig.blend_pattern.assign(16, 0.9f);
    trig.blend_ratio_train = 0.0f;
    ImageExample img;
    img.pixels.assign(16, 0.37f);
    const ImageExample out = apply_trigger(img, trig, TriggerPhase::train, 4, 4, 1);
    REQUIRE(out.pixels == img.pixels);
}

TEST_CASE("poisoning flips the planned count and only non-target examples") {
    const ClassTemplates t = desk_templates();
    const LabeledDataset train_set = make_dataset(t, 500, 11);
    PoisonPlan plan;
    plan.rate = 0.05;
    plan.target_label = 0;
    plan.trigger = make_patch_trigger();
    plan.seed = 13;
    const LabeledDataset poisoned = poison_dataset(train_set, plan);
    REQUIRE(poisoned.size() == train_set.size());
    int flagged = 0;
    for (const auto& ex : poisoned.examples) {
        if (ex.provenance == Provenance::poisoned) {
            ++flagged;
            REQUIRE(ex.label == 0);
            REQUIRE(ex.original_label != 0);
        }
    }
    REQUIRE(flagged == 100);
}

TEST_CASE("minimal poison changes exactly one example") {
    const ClassTemplates t = make_class_templates(8, 8, 1, 2, 0.1f, 2);
    const LabeledDataset train_set = make_dataset(t, 10, 3);
    PoisonPlan plan;
    plan.rate = 0.05; // floor(0.05*20) = 1
    plan.target_label = 0;
    plan.trigger = make_patch_trigger();
    plan.seed = 4;
    const LabeledDataset poisoned = poison_dataset(train_set, plan);
    REQUIRE(poisoned.count_with(Provenance::poisoned) == 1);
}

TEST_CASE("poison selection is seed-deterministic") {
    const ClassTemplates t = desk_templates();
    const LabeledDataset train_set = make_dataset(t, 100, 21);
    PoisonPlan plan;
    plan.rate = 0.1;
    plan.target_label = 2;
    plan.trigger = make_patch_trigger();
    plan.seed = 99;
    const LabeledDataset a = poison_dataset(train_set, plan);
    const LabeledDataset b = poison_dataset(train_set, plan);
    for (int i = 0; i < a.size(); ++i) {
        REQUIRE(a.examples[i].pixels == b.examples[i].pixels);
        REQUIRE(a.examples[i].provenance == b.examples[i].provenance);
    }
}

TEST_CASE("poisoning rejects infeasible plans") {
    const ClassTemplates t = make_class_templates(8, 8, 1, 2, 0.1f, 2);
    const LabeledDataset train_set = make_dataset(t, 10, 3);
    PoisonPlan plan;
    plan.trigger = make_patch_trigger();
    plan.rate = 0.01; // floor(0.2) = 0
    REQUIRE_THROWS_AS(poison_dataset(train_set, plan), InvalidInput);
    plan.rate = 0.8; // needs 16 of the 10 non-target examples
    REQUIRE_THROWS_AS(poison_dataset(train_set, plan), InvalidInput);
}

TEST_CASE("backdoor test set drops the target class and relabels the rest") {
    const ClassTemplates t = desk_templates();
    const LabeledDataset test = make_dataset(t, 100, 31);
    const LabeledDataset bd = make_backdoor_testset(test, make_patch_trigger(), 0);
    REQUIRE(bd.size() == 300);
    for (const auto& ex : bd.examples) {
        REQUIRE(ex.label == 0);
        REQUIRE(ex.original_label != 0);
        REQUIRE(ex.provenance == Provenance::poisoned);
    }
}

TEST_CASE("backdoor test set rejects single-class input") {
    const ClassTemplates t = make_class_templates(8, 8, 1, 2, 0.1f, 2);
    LabeledDataset test = make_dataset(t, 5, 3);
    for (auto& ex : test.examples) {
        ex.label = 1;
        ex.original_label = 1;
    }
    REQUIRE_THROWS_AS(make_backdoor_testset(test, make_patch_trigger(), 1), InvalidInput);
}

TEST_CASE("clean model scores near chance on the triggered set") {
    const ClassTemplates t = desk_templates();
    const LabeledDataset train_set = make_dataset(t, 120, 51);
    const LabeledDataset test = make_dataset(t, 40, 52);
    SgdConfig cfg;
    cfg.epochs = 6;
    cfg.lr = 0.05f;
    cfg.seed = 7;
    const Model model = train(ArchSpec{{256, 64, 4}}, train_set, cfg);
    const LabeledDataset bd = make_backdoor_testset(test, make_patch_trigger(), 0);
    const EvalReport rep = evaluate(model, test, bd);
    REQUIRE(rep.c_acc() >= 0.9);
    REQUIRE(rep.asr() <= 2.0 * (1.0 / 4.0));
}
