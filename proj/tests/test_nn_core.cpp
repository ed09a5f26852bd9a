#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "bprl/nn.hpp"

using namespace bprl;

namespace {

// Straightline re-implementation of the forward pass, kept deliberately
// independent of the library's loop structure: double accumulation, one
// sample at a time.
std::vector<double> naive_forward(const ArchSpec& arch, const ParamVector& params,
                                  const std::vector<float>& x) {
    std::vector<double> act(x.begin(), x.end());
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < arch.widths.size(); ++l) {
        const int in = arch.widths[l];
        const int out = arch.widths[l + 1];
        std::vector<double> next(out, 0.0);
        for (int o = 0; o < out; ++o) {
            double s = params[off + static_cast<std::size_t>(in) * out + o]; // bias
            for (int i = 0; i < in; ++i) {
                s += static_cast<double>(params[off + static_cast<std::size_t>(i) * out + o]) * act[i];
            }
            next[o] = s;
        }
        if (l + 2 < arch.widths.size()) {
            for (double& v : next) v = v > 0.0 ? v : 0.0;
        }
        act = std::move(next);
        off += static_cast<std::size_t>(in) * out + out;
    }
    return act;
}

Matrix single_row(const std::vector<float>& x) {
    Matrix m(1, static_cast<int>(x.size()));
    std::copy(x.begin(), x.end(), m.row(0));
    return m;
}

} // namespace

TEST_CASE("zero model maps any input to zero logits") {
    const ArchSpec arch{{3, 5, 2}};
    Model m{arch, ParamVector(arch.param_count())};
    const Matrix logits = forward(m, single_row({0.2f, -1.0f, 4.0f}));
    for (int j = 0; j < logits.cols; ++j) REQUIRE(logits.at(0, j) == 0.0f);
}

TEST_CASE("single identity layer passes the input through") {
    const ArchSpec arch{{2, 2}};
    ParamVector p(arch.param_count());
    p[0] = 1.0f; // w[0,0]
    p[3] = 1.0f; // w[1,1]
    Model m{arch, p};
    const Matrix logits = forward(m, single_row({0.3f, 0.7f}));
    REQUIRE(logits.at(0, 0) == 0.3f);
    REQUIRE(logits.at(0, 1) == 0.7f);
}

TEST_CASE("seeded 2-16-3 network matches a straightline forward pass") {
    const Model m = make_model(ArchSpec{{2, 16, 3}}, 123);
    const std::vector<float> x{0.25f, -0.75f};
    const Matrix logits = forward(m, single_row(x));
    const std::vector<double> expect = naive_forward(m.arch, m.params, x);
    for (int j = 0; j < 3; ++j) {
        REQUIRE(logits.at(0, j) == Catch::Approx(expect[j]).margin(1e-5));
    }
}

TEST_CASE("forward rejects mismatched batch width") {
    const Model m = make_model(ArchSpec{{4, 3}}, 1);
    REQUIRE_THROWS_AS(forward(m, Matrix(2, 5)), InvalidInput);
}

TEST_CASE("uniform logits cost ln K") {
    const ArchSpec arch{{2, 4}};
    Model m{arch, ParamVector(arch.param_count())};
    const double loss = ce_loss(forward(m, single_row({0.1f, 0.9f})), {2});
    REQUIRE(loss == Catch::Approx(std::log(4.0)).epsilon(1e-6));
    REQUIRE(loss == Catch::Approx(1.3863).margin(1e-4));
}

TEST_CASE("zero model output-bias gradient is softmax minus onehot averaged") {
    const ArchSpec arch{{2, 8, 3}};
    Model m{arch, ParamVector(arch.param_count())};
    Matrix batch(4, 2);
    for (int r = 0; r < 4; ++r) {
        batch.at(r, 0) = 0.1f * (r + 1);
        batch.at(r, 1) = -0.2f * r;
    }
    const std::vector<int> labels{0, 1, 2, 1};
    Gradient g;
    loss_and_grad(m, batch, labels, g);
    const LayerView out = layer_view(arch, m.params.data(), 1);
    const std::size_t bias_off = static_cast<std::size_t>(out.b - m.params.data());
    // softmax is uniform 1/3 everywhere; labels hit class 0 once, 1 twice, 2 once
    const double third = 1.0 / 3.0;
    const std::vector<double> expect{third - 0.25, third - 0.5, third - 0.25};
    for (int j = 0; j < 3; ++j) {
        REQUIRE(g[bias_off + j] == Catch::Approx(expect[j]).margin(1e-6));
    }
}

TEST_CASE("analytic gradient matches central differences on a seeded 2-8-3 model") {
    const Model m = make_model(ArchSpec{{2, 8, 3}}, 77);
    Rng rng = Rng::seeded(5);
    Matrix batch(5, 2);
    std::vector<int> labels(5);
    for (int r = 0; r < 5; ++r) {
        batch.at(r, 0) = rng.uniform(0.0f, 1.0f);
        batch.at(r, 1) = rng.uniform(0.0f, 1.0f);
        labels[r] = static_cast<int>(rng.below(3));
    }
    REQUIRE(grad_check(m, batch, labels, 1e-3f) <= 1e-4);
}

TEST_CASE("loss rejects out-of-range labels") {
    const Model m = make_model(ArchSpec{{2, 3}}, 1);
    Gradient g;
    REQUIRE_THROWS_AS(loss_and_grad(m, single_row({0.5f, 0.5f}), {3}, g), InvalidInput);
    REQUIRE_THROWS_AS(loss_and_grad(m, single_row({0.5f, 0.5f}), {-1}, g), InvalidInput);
}

TEST_CASE("sgd step arithmetic") {
    SgdConfig cfg;
    cfg.lr = 0.1f;
    cfg.momentum = 0.0f;
    ParamVector p(std::vector<float>{1.0f, 1.0f});
    ParamVector v(2);
    sgd_step(p, Gradient(std::vector<float>{10.0f, -10.0f}), v, cfg);
    REQUIRE(p[0] == 0.0f);
    REQUIRE(p[1] == 2.0f);
}

TEST_CASE("sgd with zero gradient is a fixed point") {
    SgdConfig cfg;
    cfg.lr = 0.5f;
    cfg.momentum = 0.0f;
    ParamVector p(std::vector<float>{3.0f, -4.0f});
    const ParamVector before = p;
    ParamVector v(2);
    sgd_step(p, Gradient(2), v, cfg);
    REQUIRE(p == before);
}

TEST_CASE("two momentum steps with constant gradient") {
    SgdConfig cfg;
    cfg.lr = 1.0f;
    cfg.momentum = 0.9f;
    ParamVector p(std::vector<float>{0.0f});
    ParamVector v(1);
    const Gradient g(std::vector<float>{1.0f});
    sgd_step(p, g, v, cfg);
    sgd_step(p, g, v, cfg);
    REQUIRE(p[0] == Catch::Approx(-2.9).margin(1e-6));
}

TEST_CASE("sgd step rejects mismatched lengths") {
    SgdConfig cfg;
    ParamVector p(2), v(2);
    REQUIRE_THROWS_AS(sgd_step(p, Gradient(3), v, cfg), InvalidInput);
}

TEST_CASE("interpolation endpoints are bit-exact") {
    const ParamVector w0(std::vector<float>{1.0f, 3.0f, -2.5f});
    const ParamVector w1(std::vector<float>{3.0f, 5.0f, 0.125f});
    REQUIRE(param_interpolate(w0, w1, 0.0) == w0);
    REQUIRE(param_interpolate(w0, w1, 1.0) == w1);
    const ParamVector mid = param_interpolate(w0, w1, 0.5);
    REQUIRE(mid[0] == 2.0f);
    REQUIRE(mid[1] == 4.0f);
}

TEST_CASE("interpolating a vector with itself is the identity for all t") {
    Rng rng = Rng::seeded(21);
    ParamVector w(64);
    for (auto& v : w.values) v = rng.uniform(-2.0f, 2.0f);
    for (double t : {0.0, 0.1, 0.37, 0.5, 0.99, 1.0}) {
        const ParamVector r = param_interpolate(w, w, t);
        for (std::size_t i = 0; i < w.size(); ++i) {
            REQUIRE(r[i] == Catch::Approx(w[i]).margin(1e-6));
        }
    }
}

TEST_CASE("interpolation rejects t outside the segment") {
    const ParamVector w(2);
    REQUIRE_THROWS_AS(param_interpolate(w, w, -0.1), InvalidInput);
    REQUIRE_THROWS_AS(param_interpolate(w, w, 1.1), InvalidInput);
}

TEST_CASE("unit axpy basics") {
    const ParamVector w(std::vector<float>{0.0f, 0.0f});
    const ParamVector d(std::vector<float>{3.0f, 4.0f});
    const ParamVector r = param_axpy_unit(w, d, 1.0);
    REQUIRE(r[0] == Catch::Approx(0.6).margin(1e-6));
    REQUIRE(r[1] == Catch::Approx(0.8).margin(1e-6));
    REQUIRE(param_axpy_unit(w, d, 0.0) == w);
    REQUIRE(param_axpy_unit(w, ParamVector(2), 5.0) == w);
}

TEST_CASE("unit axpy moves exactly rho in L2") {
    Rng rng = Rng::seeded(33);
    for (int trial = 0; trial < 20; ++trial) {
        ParamVector w(40), d(40);
        for (auto& v : w.values) v = rng.uniform(-1.0f, 1.0f);
        for (auto& v : d.values) v = rng.uniform(-1.0f, 1.0f);
        const double rho = 0.01 + rng.next_double() * 3.0;
        const ParamVector r = param_axpy_unit(w, d, rho);
        const double moved = l2_norm(param_sub(r, w));
        REQUIRE(moved == Catch::Approx(rho).epsilon(1e-5));
    }
}

TEST_CASE("grad check on a linear model is tight") {
    const Model m = make_model(ArchSpec{{3, 4}}, 9);
    Rng rng = Rng::seeded(10);
    Matrix batch(6, 3);
    std::vector<int> labels(6);
    for (int r = 0; r < 6; ++r) {
        for (int jc = 0; jc < 3; ++jc) batch.at(r, jc) = rng.uniform(0.0f, 1.0f);
        labels[r] = static_cast<int>(rng.below(4));
    }
    REQUIRE(grad_check(m, batch, labels, 1e-3f) <= 1e-4);
}

TEST_CASE("grad check stays bounded when softmax saturates") {
    // one sample driven far into its own class: every gradient is ~0 and the
    // finite-difference noise floor dominates the comparison
    const ArchSpec arch{{2, 3}};
    ParamVector p(arch.param_count());
    const LayerView lv = layer_view(arch, p.data(), 0);
    p[static_cast<std::size_t>(lv.b - p.data()) + 1] = 30.0f; // huge bias on class 1
    const Model m{arch, p};
    Matrix batch(1, 2);
    batch.at(0, 0) = 0.3f;
    batch.at(0, 1) = 0.4f;
    REQUIRE(grad_check(m, batch, {1}, 1e-3f) <= 1e-4);
}

TEST_CASE("grad check is deterministic") {
    const Model m = make_model(ArchSpec{{2, 6, 3}}, 99);
    Matrix batch(3, 2);
    batch.at(0, 0) = 0.1f;
    batch.at(1, 1) = 0.9f;
    batch.at(2, 0) = 0.4f;
    const std::vector<int> labels{0, 2, 1};
    REQUIRE(grad_check(m, batch, labels, 1e-3f) == grad_check(m, batch, labels, 1e-3f));
}

TEST_CASE("forward and gradients are bit-deterministic") {
    const Model m = make_model(ArchSpec{{4, 10, 3}}, 55);
    Rng rng = Rng::seeded(56);
    Matrix batch(8, 4);
    std::vector<int> labels(8);
    for (int r = 0; r < 8; ++r) {
        for (int jc = 0; jc < 4; ++jc) batch.at(r, jc) = rng.next_float();
        labels[r] = static_cast<int>(rng.below(3));
    }
    const Matrix a = forward(m, batch);
    const Matrix b = forward(m, batch);
    REQUIRE(a.data == b.data);
    Gradient g1, g2;
    const double l1 = loss_and_grad(m, batch, labels, g1);
    const double l2 = loss_and_grad(m, batch, labels, g2);
    REQUIRE(l1 == l2);
    REQUIRE(g1 == g2);
}

TEST_CASE("gradient correctness holds over random small models") {
    Rng rng = Rng::seeded(2024);
    for (int trial = 0; trial < 5; ++trial) {
        const int in = 2 + static_cast<int>(rng.below(4));
        const int hidden = 4 + static_cast<int>(rng.below(12));
        const int classes = 2 + static_cast<int>(rng.below(3));
        const Model m = make_model(ArchSpec{{in, hidden, classes}}, rng.next());
        REQUIRE(m.params.size() <= 2000);
        Matrix batch(4, in);
        std::vector<int> labels(4);
        for (int r = 0; r < 4; ++r) {
            for (int jc = 0; jc < in; ++jc) batch.at(r, jc) = rng.next_float();
            labels[r] = static_cast<int>(rng.below(classes));
        }
        REQUIRE(grad_check(m, batch, labels, 1e-3f) <= 1e-4);
    }
}

TEST_CASE("glorot init respects per-layer bounds and zero biases") {
    const ArchSpec arch{{6, 10, 4}};
    const ParamVector p = init_params(arch, 3);
    const LayerView l0 = layer_view(arch, p.data(), 0);
    const float lim0 = std::sqrt(6.0f / (6 + 10));
    for (int i = 0; i < l0.in * l0.out; ++i) {
        REQUIRE(std::fabs(l0.w[i]) <= lim0);
    }
    for (int o = 0; o < l0.out; ++o) REQUIRE(l0.b[o] == 0.0f);
    REQUIRE(init_params(arch, 3) == p);
    REQUIRE(!(init_params(arch, 4) == p));
}
