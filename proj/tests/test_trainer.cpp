#include <catch2/catch_amalgamated.hpp>

#include "bprl/dataset.hpp"
#include "bprl/pipeline.hpp"
#include "bprl/trainer.hpp"

using namespace bprl;

namespace {

struct DeskData {
    ClassTemplates templates;
    LabeledDataset train_set;
    LabeledDataset test_set;
};

DeskData make_desk(std::uint64_t seed = 500, int n_train_per_class = 500) {
    DeskData d{make_class_templates(16, 16, 1, 4, 0.15f, seed), {}, {}};
    d.train_set = make_dataset(d.templates, n_train_per_class, seed + 1);
    d.test_set = make_dataset(d.templates, 100, seed + 2);
    return d;
}

const ArchSpec kDeskArch{{256, 64, 4}};

} // namespace

TEST_CASE("one epoch performs ceil(N/batch) updates") {
    const DeskData d = make_desk(600, 10); // 40 examples
    EngineOptions opt;
    opt.lr = 0.01f;
    opt.batch_size = 16;
    opt.iterations = (40 + 15) / 16; // one epoch
    opt.seed = 3;
    int updates = 0;
    opt.observer = [&](int, const Model&) { ++updates; };
    run_sgd(make_model(kDeskArch, 1), d.train_set, opt);
    REQUIRE(updates == 3);
}

TEST_CASE("training rejects invalid schedules") {
    SgdConfig cfg;
    cfg.epochs = 0;
    const DeskData d = make_desk(601, 5);
    REQUIRE_THROWS_AS(train(kDeskArch, d.train_set, cfg), InvalidInput);
    cfg.epochs = 1;
    cfg.lr = 0.0f;
    REQUIRE_THROWS_AS(train(kDeskArch, d.train_set, cfg), InvalidInput);
}

TEST_CASE("default desk schedule reaches held-out accuracy") {
    const DeskData d = make_desk();
    SgdConfig cfg; // defaults: 20 epochs, lr 0.05, momentum 0.9, batch 64
    cfg.seed = 11;
    std::vector<double> loss;
    const Model m = train(kDeskArch, d.train_set, cfg, &loss);
    REQUIRE(loss.size() == 20);
    REQUIRE(loss.back() < loss.front());
    REQUIRE(accuracy(m, d.test_set) >= 0.95);
}

TEST_CASE("training is seed-deterministic") {
    const DeskData d = make_desk(602, 50);
    SgdConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 21;
    const Model a = train(kDeskArch, d.train_set, cfg);
    const Model b = train(kDeskArch, d.train_set, cfg);
    REQUIRE(a.params == b.params);
    cfg.seed = 22;
    REQUIRE(!(train(kDeskArch, d.train_set, cfg).params == a.params));
}

TEST_CASE("divergence is reported with its epoch") {
    const DeskData d = make_desk(603, 50);
    SgdConfig cfg;
    cfg.epochs = 5;
    cfg.lr = 1e30f;
    cfg.seed = 2;
    REQUIRE_THROWS_AS(train(kDeskArch, d.train_set, cfg), Diverged);
    try {
        train(kDeskArch, d.train_set, cfg);
    } catch (const Diverged& e) {
        REQUIRE(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("constant predictor scores the class prior on clean data and full asr") {
    const DeskData d = make_desk(604, 25);
    const LabeledDataset bd = make_backdoor_testset(d.test_set, make_patch_trigger(), 0);
    ArchSpec arch{{256, 4}};
    ParamVector p(arch.param_count());
    const LayerView lv = layer_view(arch, p.data(), 0);
    p[static_cast<std::size_t>(lv.b - p.data())] = 10.0f; // always predicts class 0
    const Model constant{arch, p};
    const EvalReport rep = evaluate(constant, d.test_set, bd);
    REQUIRE(rep.asr() == 1.0);
    REQUIRE(rep.c_acc() == Catch::Approx(0.25).margin(1e-9));
}

TEST_CASE("argmax ties break toward the lowest class index") {
    float v[4] = {1.0f, 3.0f, 3.0f, 0.0f};
    REQUIRE(argmax_lowest(v, 4) == 1);
    float flat[3] = {0.0f, 0.0f, 0.0f};
    REQUIRE(argmax_lowest(flat, 3) == 0);
}

TEST_CASE("evaluation is a pure function") {
    const DeskData d = make_desk(605, 40);
    SgdConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 5;
    const Model m = train(kDeskArch, d.train_set, cfg);
    const LabeledDataset bd = make_backdoor_testset(d.test_set, make_patch_trigger(), 1);
    const EvalReport a = evaluate(m, d.test_set, bd);
    const EvalReport b = evaluate(m, d.test_set, bd);
    REQUIRE(a.clean_correct == b.clean_correct);
    REQUIRE(a.triggered_hit == b.triggered_hit);
}

TEST_CASE("backdoor injection succeeds at the default poisoning rate") {
    const DeskData d = make_desk();
    PoisonPlan plan;
    plan.rate = 0.05;
    plan.target_label = 0;
    plan.trigger = make_patch_trigger();
    plan.seed = 31;
    const LabeledDataset poisoned = poison_dataset(d.train_set, plan);
    SgdConfig cfg;
    cfg.seed = 11;
    const Model clean_model = train(kDeskArch, d.train_set, cfg);
    const Model backdoored = train(kDeskArch, poisoned, cfg);
    const LabeledDataset bd = make_backdoor_testset(d.test_set, plan.trigger, 0);
    const EvalReport clean_rep = evaluate(clean_model, d.test_set, bd);
    const EvalReport bd_rep = evaluate(backdoored, d.test_set, bd);
    REQUIRE(bd_rep.asr() >= 0.95);
    REQUIRE(std::abs(bd_rep.c_acc() - clean_rep.c_acc()) <= 0.02);
    REQUIRE(clean_rep.asr() <= 0.5);
}

TEST_CASE("repeated training on the same inputs agrees bit for bit") {
    const DeskData d = make_desk(606, 60);
    SgdConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 77;
    const Model a = train(kDeskArch, d.train_set, cfg);
    const Model b = train(kDeskArch, d.train_set, cfg);
    REQUIRE(a.params == b.params);
}
