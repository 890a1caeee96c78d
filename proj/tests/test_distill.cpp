#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "hc/distill.hpp"

using namespace hc;

namespace {

Level make_level(int alphabet, std::size_t hidden, std::uint64_t seed, int index = 0,
                 SurpriseRule rule = {}) {
    Rng rng(seed);
    Level lvl;
    lvl.codec = Codec{alphabet, 128};
    lvl.rule = rule;
    lvl.predictor = init_params({lvl.codec.input_dim(), hidden, static_cast<std::size_t>(alphabet)},
                                Activation::tanh, rng);
    lvl.level_index = index;
    return lvl;
}

std::vector<ReducedSequence> random_corpus(int n, int length, int alphabet, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ReducedSequence> out;
    for (int i = 0; i < n; ++i) {
        SymbolSequence s;
        s.alphabet_size = alphabet;
        for (int t = 0; t < length; ++t)
            s.symbols.push_back(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(alphabet))));
        out.push_back(lift(s));
    }
    return out;
}

Hierarchy two_level_hierarchy(int alphabet, std::size_t lower_hidden, std::size_t upper_hidden,
                              std::uint64_t seed) {
    Hierarchy h;
    h.levels.push_back(make_level(alphabet, lower_hidden, seed, 0));
    h.levels.push_back(make_level(alphabet, upper_hidden, seed + 1, 1));
    return h;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("hc_distill_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("make_targets yields one pair per forwarded event") {
    Hierarchy h = two_level_hierarchy(4, 6, 5, 31);
    std::vector<ReducedSequence> corpus = random_corpus(6, 15, 4, 77);

    DistillTargets t = make_targets(h, 0, corpus);
    REQUIRE(t.per_sequence.size() == corpus.size());
    CHECK(t.teacher_hidden == 5);
    CHECK(t.teacher_level == 1);

    for (std::size_t s = 0; s < corpus.size(); ++s) {
        const ReducedSequence up = reduce(h.levels[0], corpus[s]);
        REQUIRE(t.per_sequence[s].steps.size() == up.events.size());
        REQUIRE(t.per_sequence[s].hidden.size() == up.events.size());
        // steps point at exactly the forwarded positions, in input-index terms
        const std::vector<long> pos_in = corpus[s].positions();
        const std::vector<long> pos_up = up.positions();
        for (std::size_t k = 0; k < pos_up.size(); ++k)
            CHECK(pos_in[t.per_sequence[s].steps[k]] == pos_up[k]);
        for (const Vec& v : t.per_sequence[s].hidden) CHECK(v.size() == 5);
    }
}

TEST_CASE("make_targets single-event sequence gives a single pair") {
    Hierarchy h = two_level_hierarchy(4, 4, 3, 8);
    SymbolSequence s{{2}, 4};
    DistillTargets t = make_targets(h, 0, {lift(s)});
    REQUIRE(t.per_sequence.size() == 1);
    CHECK(t.per_sequence[0].steps == std::vector<std::size_t>{0});
    CHECK(t.per_sequence[0].hidden.size() == 1);
}

TEST_CASE("target hidden vectors match a step-by-step teacher replay") {
    Hierarchy h = two_level_hierarchy(5, 6, 4, 12);
    std::vector<ReducedSequence> corpus = random_corpus(3, 12, 5, 9);
    DistillTargets t = make_targets(h, 0, corpus);

    const Level& teacher = h.levels[1];
    for (std::size_t s = 0; s < corpus.size(); ++s) {
        const ReducedSequence up = reduce(h.levels[0], corpus[s]);
        RnnState state = initial_state(teacher.predictor);
        for (std::size_t j = 0; j < up.events.size(); ++j) {
            StepResult r = forward_step(teacher.predictor, state, teacher.codec.encode(up.events[j]));
            state = r.state;
            CHECK(state.h == t.per_sequence[s].hidden[j]);
        }
    }
}

TEST_CASE("make_targets validates its inputs") {
    Hierarchy h = two_level_hierarchy(4, 4, 3, 5);
    std::vector<ReducedSequence> corpus = random_corpus(2, 8, 4, 3);
    CHECK_THROWS_AS(make_targets(h, 1, corpus), ConfigError);   // nothing above the top
    CHECK_THROWS_AS(make_targets(h, -1, corpus), ConfigError);
    std::vector<ReducedSequence> wrong = random_corpus(2, 8, 7, 3);
    CHECK_THROWS_AS(make_targets(h, 0, wrong), ConfigError);    // alphabet mismatch
}

TEST_CASE("augment extends only the output layer") {
    Rng rng(4);
    RnnParams base = init_params({5, 4, 4}, Activation::tanh, rng);
    AugmentedRnn aug = augment(base, 3, rng);
    CHECK(aug.split == 4);
    CHECK(aug.imitation_dim() == 3);
    CHECK(aug.net.w_in == base.w_in);
    CHECK(aug.net.w_rec == base.w_rec);
    CHECK(aug.net.b_h == base.b_h);
    REQUIRE(aug.net.w_out.rows == 7);
    for (std::size_t i = 0; i < base.w_out.size(); ++i)
        CHECK(aug.net.w_out.data[i] == base.w_out.data[i]);
    REQUIRE(aug.net.b_o.size() == 7);
    for (std::size_t i = 0; i < 4; ++i) CHECK(aug.net.b_o[i] == base.b_o[i]);
    for (std::size_t i = 4; i < 7; ++i) CHECK(aug.net.b_o[i] == 0.0);
}

// Certify the combined gradient on a 44-parameter instance against central
// finite differences over every coordinate.
TEST_CASE("combined loss gradient matches finite differences") {
    const int alphabet = 3;
    Rng rng(2029);
    RnnParams base = init_params({4, 3, 3}, Activation::tanh, rng);
    AugmentedRnn aug = augment(base, 2, rng);
    REQUIRE(aug.net.param_count() <= 80);
    const Codec codec{alphabet, 16};
    const double lambda = 0.7;

    SymbolSequence raw{{0, 2, 1, 2}, alphabet};
    const ReducedSequence seq = lift(raw);
    SequenceTargets st;
    st.steps = {0, 2};
    st.hidden = {{0.3, -0.4}, {-0.1, 0.8}};

    const std::vector<Vec> xs = encode_all(codec, seq);
    const std::vector<int> pred = prediction_targets(seq);
    const RnnDims dims = aug.net.dims();

    auto loss_of = [&](const Vec& theta) {
        RnnParams q = unflatten(theta, dims, Activation::tanh);
        UnrollTape tape = unroll(q, xs);
        double total = 0.0;
        for (std::size_t t = 0; t < tape.length(); ++t) {
            if (pred[t] == kNoTarget) continue;
            Vec slice(tape.steps[t].logits.begin(), tape.steps[t].logits.begin() + 3);
            total += cross_entropy(slice, static_cast<std::size_t>(pred[t]));
        }
        for (std::size_t k = 0; k < st.steps.size(); ++k) {
            double mse = 0.0;
            for (std::size_t i = 0; i < 2; ++i) {
                const double d = tape.steps[st.steps[k]].logits[3 + i] - st.hidden[k][i];
                mse += d * d;
            }
            total += lambda * mse / 2.0;
        }
        return total;
    };
    const Vec fd = finite_diff_grad(loss_of, flatten(aug.net), 1e-5);

    UnrollTape tape = unroll(aug.net, xs);
    RnnGrads g = detail::combined_grads(aug, tape, pred, st, lambda, nullptr, nullptr);
    const Vec an = flatten(g);

    REQUIRE(an.size() == fd.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < an.size(); ++i) worst = std::max(worst, rel_err(an[i], fd[i]));
    CHECK(worst < 1e-4);
    CHECK(worst < 1e-6);  // should be far inside the contract
}

TEST_CASE("combined gradient is prediction gradient plus lambda times imitation gradient") {
    Rng rng(6);
    RnnParams base = init_params({5, 4, 4}, Activation::tanh, rng);
    AugmentedRnn aug = augment(base, 3, rng);
    const Codec codec{4, 32};
    const ReducedSequence seq = random_corpus(1, 8, 4, 55)[0];
    SequenceTargets st;
    st.steps = {1, 4, 6};
    for (std::size_t k = 0; k < 3; ++k) {
        Vec v(3);
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        st.hidden.push_back(v);
    }
    const std::vector<int> pred = prediction_targets(seq);
    const std::vector<int> none(seq.events.size(), kNoTarget);
    UnrollTape tape = unroll(aug.net, encode_all(codec, seq));

    const double lambda = 1.7;
    RnnGrads combined = detail::combined_grads(aug, tape, pred, st, lambda, nullptr, nullptr);
    RnnGrads pred_only = detail::combined_grads(aug, tape, pred, {}, 0.0, nullptr, nullptr);
    RnnGrads imit_only = detail::combined_grads(aug, tape, none, st, 1.0, nullptr, nullptr);

    RnnGrads sum = pred_only;
    sum.add_scaled(imit_only, lambda);
    const Vec a = flatten(combined), b = flatten(sum);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(rel_err(a[i], b[i]) < 1e-9);
}

TEST_CASE("imitation gradient acts only where targets exist") {
    Rng rng(14);
    RnnParams base = init_params({5, 4, 4}, Activation::tanh, rng);
    AugmentedRnn aug = augment(base, 2, rng);
    const Codec codec{4, 32};
    const ReducedSequence seq = random_corpus(1, 6, 4, 20)[0];
    const std::vector<int> pred = prediction_targets(seq);
    UnrollTape tape = unroll(aug.net, encode_all(codec, seq));

    // no targets: lambda is inert, gradients identical bit for bit
    RnnGrads a = detail::combined_grads(aug, tape, pred, {}, 5.0, nullptr, nullptr);
    RnnGrads b = detail::combined_grads(aug, tape, pred, {}, 0.0, nullptr, nullptr);
    CHECK(flatten(a) == flatten(b));

    // a target outside the sequence is refused
    SequenceTargets bad;
    bad.steps = {99};
    bad.hidden = {{0.0, 0.0}};
    CHECK_THROWS_AS(detail::combined_grads(aug, tape, pred, bad, 1.0, nullptr, nullptr),
                    ConfigError);
}

TEST_CASE("lambda zero reproduces pretrain_level weight trajectories exactly") {
    const int alphabet = 4;
    std::vector<ReducedSequence> corpus = random_corpus(10, 12, alphabet, 123);

    Level lvl = make_level(alphabet, 5, 99);
    AugmentedRnn student;
    {
        Rng aug_rng(7);
        student = augment(lvl.predictor, 3, aug_rng);
    }
    // fabricated targets: with lambda 0 they must not matter
    DistillTargets targets;
    targets.teacher_hidden = 3;
    targets.teacher_level = 1;
    for (const ReducedSequence& r : corpus) {
        SequenceTargets st;
        st.steps = {0};
        st.hidden = {{9.0, -9.0, 9.0}};
        (void)r;
        targets.per_sequence.push_back(st);
    }

    PretrainConfig pcfg;
    pcfg.epochs = 5;
    pcfg.early_stop_window = 0;
    Rng r1(42);
    TrainCurve curve = pretrain_level(lvl, corpus, pcfg, r1);

    DistillConfig dcfg;
    dcfg.epochs = 5;
    dcfg.lambda = 0.0;
    dcfg.codec = Codec{alphabet, 128};
    Rng r2(42);
    DistillResult res = distill(student, corpus, targets, dcfg, r2);

    CHECK(res.student.net.w_in == lvl.predictor.w_in);
    CHECK(res.student.net.w_rec == lvl.predictor.w_rec);
    CHECK(res.student.net.b_h == lvl.predictor.b_h);
    for (std::size_t i = 0; i < lvl.predictor.w_out.size(); ++i)
        CHECK(res.student.net.w_out.data[i] == lvl.predictor.w_out.data[i]);
    for (std::size_t i = 0; i < lvl.predictor.b_o.size(); ++i)
        CHECK(res.student.net.b_o[i] == lvl.predictor.b_o[i]);
    // imitation rows never received a gradient
    AugmentedRnn fresh;
    {
        Rng aug_rng(7);
        fresh = augment(make_level(alphabet, 5, 99).predictor, 3, aug_rng);
    }
    for (std::size_t i = lvl.predictor.w_out.size(); i < res.student.net.w_out.size(); ++i)
        CHECK(res.student.net.w_out.data[i] == fresh.net.w_out.data[i]);
    REQUIRE(res.curves.prediction_loss.size() == curve.loss.size());
    for (std::size_t e = 0; e < curve.loss.size(); ++e) {
        CHECK(res.curves.prediction_loss[e] == curve.loss[e]);
        CHECK(res.curves.imitation_loss[e] > 1.0);  // reported but untrained
    }
}

TEST_CASE("distillation drives imitation error down") {
    const int alphabet = 4;
    Hierarchy h = two_level_hierarchy(alphabet, 6, 4, 61);
    std::vector<ReducedSequence> corpus = random_corpus(8, 10, alphabet, 88);
    DistillTargets targets = make_targets(h, 0, corpus);

    Rng rng(5);
    AugmentedRnn start = augment(h.levels[0].predictor, 4, rng);

    DistillConfig cfg;
    cfg.epochs = 120;
    cfg.lambda = 1.0;
    cfg.codec = h.levels[0].codec;
    const double before = imitation_mse(start, corpus, targets, cfg.codec);

    Rng train_rng(17);
    DistillResult res = distill(start, corpus, targets, cfg, train_rng);
    const double after = imitation_mse(res.student, corpus, targets, cfg.codec);

    CHECK(after < 0.5 * before);
    CHECK(after < 0.1);
    CHECK(res.curves.imitation_loss.back() < res.curves.imitation_loss.front());
    REQUIRE(res.curves.prediction_loss.size() == 120);
}

TEST_CASE("distill is deterministic") {
    const int alphabet = 4;
    Hierarchy h = two_level_hierarchy(alphabet, 5, 3, 2);
    std::vector<ReducedSequence> corpus = random_corpus(5, 8, alphabet, 6);
    DistillTargets targets = make_targets(h, 0, corpus);
    Rng a_rng(9);
    AugmentedRnn start = augment(h.levels[0].predictor, 3, a_rng);

    DistillConfig cfg;
    cfg.epochs = 10;
    cfg.codec = h.levels[0].codec;
    Rng r1(3), r2(3);
    DistillResult a = distill(start, corpus, targets, cfg, r1);
    DistillResult b = distill(start, corpus, targets, cfg, r2);
    CHECK(a.student.net == b.student.net);
    CHECK(a.curves.prediction_loss == b.curves.prediction_loss);
    CHECK(a.curves.imitation_loss == b.curves.imitation_loss);
}

TEST_CASE("distilled_code reads the imitation output at the last forwarded event") {
    const int alphabet = 4;
    Level lower = make_level(alphabet, 6, 44);
    const ReducedSequence input = random_corpus(1, 14, alphabet, 3)[0];
    Rng rng(8);
    AugmentedRnn aug = augment(lower.predictor, 5, rng);

    const Vec code = distilled_code(aug, lower, input);
    REQUIRE(code.size() == 5);

    const ReducedSequence up = reduce(lower, input);
    const std::vector<long> pos_in = input.positions();
    const long want = up.positions().back();
    std::size_t step = 0;
    while (pos_in[step] != want) ++step;
    UnrollTape tape = unroll(aug.net, encode_all(lower.codec, input));
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(code[i] == tape.steps[step].logits[aug.split + i]);

    CHECK_THROWS_AS(distilled_code(aug, lower, ReducedSequence{}), ConfigError);
}

TEST_CASE("augmented checkpoint round trips and extends the parameter format") {
    TempDir dir;
    Rng rng(3);
    RnnParams base = init_params({5, 4, 4}, Activation::sigmoid, rng);
    AugmentedRnn aug = augment(base, 3, rng);
    const std::filesystem::path path = dir.path / "student.json";
    save_augmented(path.string(), aug, 0.5, 2);

    AugmentedCheckpoint loaded = load_augmented(path.string());
    CHECK(loaded.student.net == aug.net);
    CHECK(loaded.student.split == 4);
    CHECK(loaded.lambda == 0.5);
    CHECK(loaded.teacher_level == 2);

    // the same file parses as a plain parameter checkpoint
    RnnParams as_params = load_params(path);
    CHECK(as_params == aug.net);

    CHECK_THROWS_AS(load_augmented((dir.path / "absent.json").string()), MissingArtifactError);

    json j = load_json(path);
    j["split_index"] = 99;
    save_json(path, j);
    CHECK_THROWS_AS(load_augmented(path.string()), ConfigError);
}
