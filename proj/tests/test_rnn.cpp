#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hc/rnn.hpp"

using Catch::Matchers::WithinAbs;
using hc::Activation;
using hc::Matrix;
using hc::RnnDims;
using hc::RnnParams;
using hc::Vec;

namespace {

// 2-in / 2-hidden / 2-out tanh net with fixed weights, used by the forward
// reference test. The expected numbers were computed with an independent
// implementation.
RnnParams tiny_net() {
    RnnParams p;
    p.w_in = Matrix(2, 2);
    p.w_in.data = {0.5, -0.25, 0.1, 0.3};
    p.w_rec = Matrix(2, 2);
    p.w_rec.data = {0.2, 0.0, -0.1, 0.4};
    p.b_h = {0.01, -0.02};
    p.w_out = Matrix(2, 2);
    p.w_out.data = {1.0, -1.0, 0.5, 0.25};
    p.b_o = {0.0, 0.1};
    p.act = Activation::tanh;
    return p;
}

RnnParams random_net(const RnnDims& d, Activation act, std::uint64_t seed) {
    hc::Rng rng(seed);
    return hc::init_params(d, act, rng);
}

double total_ce_loss(const RnnParams& p, const std::vector<Vec>& xs,
                     const std::vector<int>& targets) {
    hc::UnrollTape tape = hc::unroll(p, xs);
    double loss = 0.0;
    for (std::size_t t = 0; t < tape.length(); ++t)
        if (targets[t] != hc::kNoTarget)
            loss += hc::cross_entropy(tape.steps[t].logits, static_cast<std::size_t>(targets[t]));
    return loss;
}

}  // namespace

TEST_CASE("forward pass matches reference values", "[rnn]") {
    RnnParams p = tiny_net();
    std::vector<Vec> xs = {{1, 0}, {0, 1}, {1, 1}};
    hc::UnrollTape tape = hc::unroll(p, xs);
    REQUIRE(tape.length() == 3);

    CHECK_THAT(tape.steps[0].h[0], WithinAbs(0x1.e139507151857p-2, 1e-15));
    CHECK_THAT(tape.steps[0].h[1], WithinAbs(0x1.46fb947945cbfp-4, 1e-15));
    CHECK_THAT(tape.steps[0].logits[0], WithinAbs(0x1.8f7a6b5300127p-2, 1e-15));
    CHECK_THAT(tape.steps[0].logits[1], WithinAbs(0x1.6b72c7e6a385ep-2, 1e-15));

    CHECK_THAT(tape.steps[1].h[0], WithinAbs(-0x1.28ec62d4c2cb7p-3, 1e-15));
    CHECK_THAT(tape.steps[1].h[1], WithinAbs(0x1.091f20fdf9d18p-2, 1e-15));
    CHECK_THAT(tape.steps[1].logits[0], WithinAbs(-0x1.9d9552685b374p-2, 1e-15));
    CHECK_THAT(tape.steps[1].logits[1], WithinAbs(0x1.79cc57c2d09fbp-4, 1e-15));

    CHECK_THAT(tape.steps[2].h[0], WithinAbs(0x1.d0db1f017eadcp-3, 1e-15));
    CHECK_THAT(tape.steps[2].h[1], WithinAbs(0x1.d7a533c6d4177p-2, 1e-15));
    CHECK_THAT(tape.steps[2].logits[0], WithinAbs(-0x1.de6f488c29812p-3, 1e-15));
    CHECK_THAT(tape.steps[2].logits[1], WithinAbs(0x1.50867b187b17cp-2, 1e-15));
}

TEST_CASE("replaying a tape reproduces its logits exactly", "[rnn]") {
    RnnParams p = random_net({3, 5, 4}, Activation::tanh, 11);
    hc::Rng rng(99);
    std::vector<Vec> xs;
    for (int t = 0; t < 7; ++t) {
        Vec x(3);
        for (double& v : x) v = rng.uniform(-1, 1);
        xs.push_back(x);
    }
    hc::UnrollTape tape = hc::unroll(p, xs);
    std::vector<Vec> again = hc::replay_logits(p, tape);
    REQUIRE(again.size() == tape.length());
    for (std::size_t t = 0; t < again.size(); ++t) CHECK(again[t] == tape.steps[t].logits);
}

TEST_CASE("cross_entropy matches reference values", "[rnn]") {
    CHECK_THAT(hc::cross_entropy({0, 0}, 0), WithinAbs(0x1.62e42fefa39efp-1, 1e-15));  // ln 2
    CHECK_THAT(hc::cross_entropy({1, 2, 3}, 0), WithinAbs(0x1.342c6ea778b93p+1, 1e-14));
    CHECK_THROWS_AS(hc::cross_entropy({0, 0}, 5), std::invalid_argument);
}

TEST_CASE("bptt gradient matches central differences", "[rnn][gradcheck]") {
    const RnnDims dims{3, 4, 3};
    const std::vector<int> targets = {2, hc::kNoTarget, 0, 1, 2};

    for (Activation act : {Activation::tanh, Activation::sigmoid}) {
        RnnParams p = random_net(dims, act, act == Activation::tanh ? 31 : 32);
        hc::Rng rng(77);
        std::vector<Vec> xs;
        for (int t = 0; t < 5; ++t) {
            Vec x(3);
            for (double& v : x) v = rng.uniform(-1, 1);
            xs.push_back(x);
        }

        hc::UnrollTape tape = hc::unroll(p, xs);
        double loss = 0.0;
        hc::RnnGrads g = hc::bptt(p, tape, targets, &loss);
        CHECK(loss > 0.0);

        auto f = [&](const Vec& theta) {
            return total_ce_loss(hc::unflatten(theta, dims, act), xs, targets);
        };
        Vec numeric = hc::finite_diff_grad(f, hc::flatten(p), 1e-5);
        Vec analytic = hc::flatten(g);
        REQUIRE(numeric.size() == analytic.size());

        double worst = 0.0;
        for (std::size_t i = 0; i < numeric.size(); ++i)
            worst = std::max(worst, hc::rel_err(analytic[i], numeric[i]));
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("bptt with no targets gives zero loss and zero gradient", "[rnn]") {
    RnnParams p = random_net({2, 3, 2}, Activation::tanh, 5);
    std::vector<Vec> xs = {{1, 0}, {0, 1}};
    hc::UnrollTape tape = hc::unroll(p, xs);
    double loss = -1.0;
    hc::RnnGrads g = hc::bptt(p, tape, {hc::kNoTarget, hc::kNoTarget}, &loss);
    CHECK(loss == 0.0);
    CHECK(hc::grad_norm(g) == 0.0);
}

TEST_CASE("backprop trace records the expected final-step norms", "[rnn]") {
    RnnParams p = random_net({2, 3, 2}, Activation::tanh, 8);
    std::vector<Vec> xs = {{0.5, -0.5}, {1, 0}, {0, 1}};
    hc::UnrollTape tape = hc::unroll(p, xs);

    std::vector<Vec> dlogits(3, Vec(2, 0.0));
    dlogits[2] = {0.3, -0.7};
    hc::BackpropTrace trace;
    hc::backprop_through_time(p, tape, dlogits, &trace);
    REQUIRE(trace.dh_norm.size() == 3);
    REQUIRE(trace.dx_norm.size() == 3);

    // At the last step there is no future term, so dh = W_out^T dz.
    Vec dh;
    hc::matvec_t(p.w_out, dlogits[2], dh);
    CHECK_THAT(trace.dh_norm[2], WithinAbs(hc::norm2(dh), 1e-12));

    // Earlier steps with zero dlogits get their signal purely through the
    // recurrent Jacobian J_t = diag(act'(h_t)) W_rec.
    Vec da(3), dh_prev;
    for (std::size_t i = 0; i < 3; ++i)
        da[i] = dh[i] * (1.0 - tape.steps[2].h[i] * tape.steps[2].h[i]);
    hc::matvec_t(p.w_rec, da, dh_prev);
    CHECK_THAT(trace.dh_norm[1], WithinAbs(hc::norm2(dh_prev), 1e-12));
    CHECK(trace.dh_norm[0] > 0.0);
    CHECK(trace.dx_norm[0] > 0.0);
}

TEST_CASE("sgd_step applies the clip factor to the update", "[rnn]") {
    RnnParams p = random_net({1, 1, 1}, Activation::tanh, 3);
    hc::RnnGrads g = hc::RnnGrads::zeros_like(p);
    g.w_in.data[0] = 3.0;  // gradient norm is exactly 3

    double factor = 0.0;
    RnnParams q = hc::sgd_step(p, g, 0.1, 1.5, &factor);
    CHECK(factor == 0.5);
    CHECK_THAT(q.w_in.data[0], WithinAbs(p.w_in.data[0] - 0.1 * 0.5 * 3.0, 1e-15));

    RnnParams r = hc::sgd_step(p, g, 0.1, std::nullopt, &factor);
    CHECK(factor == 1.0);
    CHECK_THAT(r.w_in.data[0], WithinAbs(p.w_in.data[0] - 0.3, 1e-15));

    g.w_in.data[0] = std::nan("");
    CHECK_THROWS_AS(hc::sgd_step(p, g, 0.1, std::nullopt), hc::DivergenceError);
}

TEST_CASE("flatten and unflatten round-trip parameters", "[rnn]") {
    RnnParams p = random_net({3, 4, 2}, Activation::sigmoid, 21);
    RnnParams q = hc::unflatten(hc::flatten(p), p.dims(), p.act);
    CHECK(p == q);
    CHECK(p.param_count() == 3 * 4 + 4 * 4 + 4 + 2 * 4 + 2);
}

TEST_CASE("init_params scales each matrix by its fan-in and zeroes biases", "[rnn]") {
    hc::Rng rng(6);
    RnnParams p = hc::init_params({4, 9, 5}, Activation::tanh, rng);
    for (double x : p.w_in.data) CHECK(std::abs(x) <= 1.0 / 2.0);
    for (double x : p.w_rec.data) CHECK(std::abs(x) <= 1.0 / 3.0);
    for (double x : p.w_out.data) CHECK(std::abs(x) <= 1.0 / 3.0);
    for (double x : p.b_h) CHECK(x == 0.0);
    for (double x : p.b_o) CHECK(x == 0.0);

    hc::Rng rng2(6);
    RnnParams q = hc::init_params({4, 9, 5}, Activation::tanh, rng2);
    CHECK(p == q);

    hc::Rng rng3(6);
    hc::InitScales s;
    s.rec = 0.1;
    s.absolute = true;
    RnnParams r = hc::init_params({4, 9, 5}, Activation::tanh, rng3, s);
    for (double x : r.w_rec.data) CHECK(std::abs(x) <= 0.1);
}

TEST_CASE("all-zero parameters give act(0) hidden and zero logits", "[rnn]") {
    RnnParams p;
    p.w_in = Matrix(2, 3);
    p.w_rec = Matrix(2, 2);
    p.b_h.assign(2, 0.0);
    p.w_out = Matrix(4, 2);
    p.b_o.assign(4, 0.0);

    p.act = Activation::tanh;
    hc::StepResult r = hc::forward_step(p, hc::initial_state(p), {1, -2, 3});
    CHECK(r.state.h == Vec{0.0, 0.0});
    CHECK(r.logits == Vec(4, 0.0));

    p.act = Activation::sigmoid;
    r = hc::forward_step(p, hc::initial_state(p), {1, -2, 3});
    CHECK(r.state.h == Vec{0.5, 0.5});
}

TEST_CASE("forward_step is deterministic", "[rnn]") {
    RnnParams p = random_net({2, 3, 2}, Activation::tanh, 44);
    hc::RnnState s = hc::initial_state(p);
    hc::StepResult a = hc::forward_step(p, s, {0.3, -0.9});
    hc::StepResult b = hc::forward_step(p, s, {0.3, -0.9});
    CHECK(a.state.h == b.state.h);
    CHECK(a.logits == b.logits);
}

TEST_CASE("splitting a sequence and chaining states equals one unroll", "[rnn]") {
    RnnParams p = random_net({2, 4, 3}, Activation::tanh, 12);
    hc::Rng rng(55);
    std::vector<Vec> xs;
    for (int t = 0; t < 9; ++t) xs.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});

    hc::UnrollTape whole = hc::unroll(p, xs);
    for (std::size_t cut = 1; cut < xs.size(); ++cut) {
        std::vector<Vec> head(xs.begin(), xs.begin() + cut);
        std::vector<Vec> tail(xs.begin() + cut, xs.end());
        hc::UnrollTape t1 = hc::unroll(p, head);
        hc::UnrollTape t2 = hc::unroll(p, tail, t1.steps.back().h);
        for (std::size_t t = 0; t < cut; ++t) CHECK(t1.steps[t].logits == whole.steps[t].logits);
        for (std::size_t t = cut; t < xs.size(); ++t)
            CHECK(t2.steps[t - cut].logits == whole.steps[t].logits);
    }
}

TEST_CASE("a 1200-step unroll stays finite", "[rnn]") {
    RnnParams p = random_net({4, 8, 4}, Activation::tanh, 91);
    hc::Rng rng(92);
    std::vector<Vec> xs(1200, Vec(4, 0.0));
    for (Vec& x : xs) x[rng.uniform_int(4)] = 1.0;
    hc::UnrollTape tape = hc::unroll(p, xs);
    REQUIRE(tape.length() == 1200);
    for (const auto& st : tape.steps) {
        REQUIRE(hc::all_finite(st.h));
        REQUIRE(hc::all_finite(st.logits));
    }
}

TEST_CASE("output-layer gradient equals accumulated (softmax - onehot) outer h", "[rnn]") {
    RnnParams p = random_net({2, 3, 4}, Activation::tanh, 14);
    std::vector<Vec> xs = {{1, 0}, {0, 1}, {0.5, 0.5}};
    std::vector<int> targets = {3, 0, 2};
    hc::UnrollTape tape = hc::unroll(p, xs);
    hc::RnnGrads g = hc::bptt(p, tape, targets);

    Matrix expect(4, 3);
    Vec expect_b(4, 0.0);
    for (std::size_t t = 0; t < 3; ++t) {
        Vec dz = hc::softmax(tape.steps[t].logits);
        dz[static_cast<std::size_t>(targets[t])] -= 1.0;
        for (std::size_t i = 0; i < 4; ++i) {
            expect_b[i] += dz[i];
            for (std::size_t j = 0; j < 3; ++j) expect(i, j) += dz[i] * tape.steps[t].h[j];
        }
    }
    for (std::size_t k = 0; k < expect.size(); ++k)
        CHECK_THAT(g.w_out.data[k], WithinAbs(expect.data[k], 1e-12));
    for (std::size_t i = 0; i < 4; ++i) CHECK_THAT(g.b_o[i], WithinAbs(expect_b[i], 1e-12));
}

TEST_CASE("one sgd step on a small example decreases the loss", "[rnn]") {
    RnnParams p = tiny_net();
    std::vector<Vec> xs = {{1, 0}, {0, 1}, {1, 1}};
    std::vector<int> targets = {1, 0, 1};

    hc::UnrollTape tape = hc::unroll(p, xs);
    double before = 0.0;
    hc::RnnGrads g = hc::bptt(p, tape, targets, &before);
    RnnParams q = hc::sgd_step(p, g, 0.05, std::nullopt);
    CHECK(total_ce_loss(q, xs, targets) < before);
}

TEST_CASE("post-clip gradient norm never exceeds the threshold", "[rnn]") {
    RnnParams p = random_net({3, 5, 3}, Activation::tanh, 60);
    hc::Rng rng(61);
    std::vector<Vec> xs;
    std::vector<int> targets;
    for (int t = 0; t < 6; ++t) {
        Vec x(3, 0.0);
        x[rng.uniform_int(3)] = 1.0;
        xs.push_back(x);
        targets.push_back(static_cast<int>(rng.uniform_int(3)));
    }
    hc::RnnGrads g = hc::bptt(p, hc::unroll(p, xs), targets);
    const double clip = 0.5 * hc::grad_norm(g);
    double factor = 0.0;
    hc::sgd_step(p, g, 0.1, clip, &factor);
    CHECK(factor * hc::grad_norm(g) <= clip + 1e-12);

    // zero gradient leaves the parameters untouched
    hc::RnnGrads z = hc::RnnGrads::zeros_like(p);
    CHECK(hc::sgd_step(p, z, 0.1, clip) == p);
}

TEST_CASE("gradcheck holds at tighter tolerance on a 60-parameter net", "[rnn][gradcheck]") {
    // input 2, hidden 4, output 3: 8 + 16 + 4 + 12 + 3 = 43 parameters
    const RnnDims dims{2, 4, 3};
    RnnParams p = random_net(dims, Activation::tanh, 71);
    hc::Rng rng(72);
    std::vector<Vec> xs;
    std::vector<int> targets;
    for (int t = 0; t < 12; ++t) {
        Vec x(2, 0.0);
        x[rng.uniform_int(2)] = 1.0;
        xs.push_back(x);
        targets.push_back(static_cast<int>(rng.uniform_int(3)));
    }
    hc::RnnGrads g = hc::bptt(p, hc::unroll(p, xs), targets);

    auto f = [&](const Vec& theta) {
        return total_ce_loss(hc::unflatten(theta, dims, Activation::tanh), xs, targets);
    };
    Vec numeric = hc::finite_diff_grad(f, hc::flatten(p), 1e-6);
    Vec analytic = hc::flatten(g);
    double worst = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i)
        worst = std::max(worst, hc::rel_err(analytic[i], numeric[i]));
    CHECK(worst < 1e-5);
}

TEST_CASE("forward_step validates input dimensions", "[rnn]") {
    RnnParams p = tiny_net();
    hc::RnnState s = hc::initial_state(p);
    CHECK_THROWS_AS(hc::forward_step(p, s, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(hc::unroll(p, {}), std::invalid_argument);
    std::vector<int> short_targets = {0};
    hc::UnrollTape tape = hc::unroll(p, {{1, 0}, {0, 1}});
    CHECK_THROWS_AS(hc::bptt(p, tape, short_targets), std::invalid_argument);
}
