#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "hc/chunker.hpp"
#include "hc/errors.hpp"
#include "hc/numerics.hpp"
#include "hc/rnn.hpp"
#include "hc/rng.hpp"
#include "hc/serialize.hpp"

namespace hc {

// Imitation targets for one sequence: at step `steps[k]` of the student's
// clock, the teacher's hidden state `hidden[k]`. Steps are indices into the
// student's input stream, not raw-sequence positions.
struct SequenceTargets {
    std::vector<std::size_t> steps;
    std::vector<Vec> hidden;

    bool operator==(const SequenceTargets& o) const = default;
};

struct DistillTargets {
    std::vector<SequenceTargets> per_sequence;
    std::size_t teacher_hidden = 0;
    int teacher_level = -1;
};

// Record what the level above sees and thinks: run the (frozen) teacher over
// the reduction of each student input and map each of its steps back to the
// student step that produced the forwarded event.
inline DistillTargets make_targets(const Hierarchy& h, int lower_index,
                                   const std::vector<ReducedSequence>& corpus) {
    if (lower_index < 0 || lower_index + 1 >= h.depth())
        throw ConfigError("make_targets: no level above index " + std::to_string(lower_index));
    const Level& lower = h.levels[static_cast<std::size_t>(lower_index)];
    const Level& teacher = h.levels[static_cast<std::size_t>(lower_index + 1)];

    DistillTargets out;
    out.teacher_hidden = teacher.predictor.w_rec.rows;
    out.teacher_level = lower_index + 1;
    out.per_sequence.reserve(corpus.size());

    for (const ReducedSequence& input : corpus) {
        if (input.alphabet_size != lower.codec.alphabet_size)
            throw ConfigError("make_targets: corpus alphabet does not match hierarchy");
        SequenceTargets st;
        if (input.events.empty()) {
            out.per_sequence.push_back(std::move(st));
            continue;
        }
        const ReducedSequence up = reduce(lower, input);
        UnrollTape teacher_tape =
            unroll(teacher.predictor, encode_all(teacher.codec, up));

        const std::vector<long> pos_in = input.positions();
        const std::vector<long> pos_up = up.positions();
        std::size_t i = 0;
        for (std::size_t j = 0; j < pos_up.size(); ++j) {
            while (i < pos_in.size() && pos_in[i] < pos_up[j]) ++i;
            if (i == pos_in.size() || pos_in[i] != pos_up[j])
                throw ConfigError("make_targets: forwarded event position not found in input");
            st.steps.push_back(i);
            st.hidden.push_back(teacher_tape.steps[j].h);
        }
        out.per_sequence.push_back(std::move(st));
    }
    return out;
}

// The student: the lower net with extra linear output rows that are trained
// to reproduce the teacher's hidden vector. Rows [0, split) stay the
// next-symbol prediction head; rows [split, end) are the imitation head.
struct AugmentedRnn {
    RnnParams net;
    std::size_t split = 0;

    std::size_t imitation_dim() const { return net.w_out.rows - split; }
};

inline AugmentedRnn augment(const RnnParams& base, std::size_t teacher_hidden, Rng& rng,
                            double scale = 1.0) {
    if (teacher_hidden == 0) throw ConfigError("augment: teacher hidden size is zero");
    AugmentedRnn aug;
    aug.split = base.w_out.rows;
    aug.net = base;
    const std::size_t hidden = base.w_out.cols;
    const double r = scale / std::sqrt(static_cast<double>(hidden));
    Matrix extra = random_uniform(teacher_hidden, hidden, r, rng);
    aug.net.w_out.rows += teacher_hidden;
    aug.net.w_out.data.insert(aug.net.w_out.data.end(), extra.data.begin(), extra.data.end());
    aug.net.b_o.insert(aug.net.b_o.end(), teacher_hidden, 0.0);
    return aug;
}

struct DistillConfig {
    long epochs = 150;
    double lr = 0.05;
    std::optional<double> clip = 1.0;
    double lambda = 1.0;
    Codec codec;
};

struct DistillCurves {
    Vec prediction_loss;  // per-epoch mean cross-entropy per predicted symbol
    Vec imitation_loss;   // per-epoch mean per-unit MSE per target step
};

struct DistillResult {
    AugmentedRnn student;
    DistillCurves curves;
};

namespace detail {

// Per-sequence combined gradient. Prediction rows carry softmax cross-entropy
// over the prediction slice at every step with a target; imitation rows carry
// lambda * d/dy of the per-unit squared error, only at target steps.
inline RnnGrads combined_grads(const AugmentedRnn& aug, const UnrollTape& tape,
                               const std::vector<int>& pred_targets,
                               const SequenceTargets& targets, double lambda,
                               double* pred_loss, double* imit_loss) {
    const std::size_t n = tape.length();
    const std::size_t out_dim = aug.net.w_out.rows;
    const std::size_t imit_dim = aug.imitation_dim();
    std::vector<Vec> dlogits(n, Vec(out_dim, 0.0));

    double ce = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        if (pred_targets[t] == kNoTarget) continue;
        const Vec pred(tape.steps[t].logits.begin(),
                       tape.steps[t].logits.begin() + static_cast<long>(aug.split));
        ce += cross_entropy(pred, static_cast<std::size_t>(pred_targets[t]));
        Vec dz = softmax(pred);
        dz[static_cast<std::size_t>(pred_targets[t])] -= 1.0;
        std::copy(dz.begin(), dz.end(), dlogits[t].begin());
    }

    double mse = 0.0;
    for (std::size_t k = 0; k < targets.steps.size(); ++k) {
        const std::size_t t = targets.steps[k];
        const Vec& want = targets.hidden[k];
        if (t >= n || want.size() != imit_dim)
            throw ConfigError("distill: target does not fit the student");
        double step_mse = 0.0;
        for (std::size_t i = 0; i < imit_dim; ++i) {
            const double diff = tape.steps[t].logits[aug.split + i] - want[i];
            step_mse += diff * diff;
            dlogits[t][aug.split + i] =
                lambda * 2.0 * diff / static_cast<double>(imit_dim);
        }
        mse += step_mse / static_cast<double>(imit_dim);
    }

    if (pred_loss) *pred_loss = ce;
    if (imit_loss) *imit_loss = mse;
    return backprop_through_time(aug.net, tape, dlogits);
}

}  // namespace detail

// Combined training of the augmented student on the lower level's own input
// corpus. With lambda = 0 the imitation rows receive a zero gradient and the
// prediction head follows exactly the trajectory pretrain_level would take.
inline DistillResult distill(const AugmentedRnn& start, const std::vector<ReducedSequence>& corpus,
                             const DistillTargets& targets, const DistillConfig& cfg, Rng& rng) {
    if (corpus.empty()) throw ConfigError("distill: empty corpus");
    if (targets.per_sequence.size() != corpus.size())
        throw ConfigError("distill: targets cover " +
                          std::to_string(targets.per_sequence.size()) + " sequences, corpus has " +
                          std::to_string(corpus.size()));
    if (start.imitation_dim() != targets.teacher_hidden)
        throw ConfigError("distill: imitation head size does not match teacher hidden size");
    if (cfg.lambda < 0.0) throw ConfigError("distill: lambda must be non-negative");

    DistillResult out;
    out.student = start;
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double ce_sum = 0.0, mse_sum = 0.0;
        long ce_count = 0, mse_count = 0;
        for (std::size_t idx : order) {
            const ReducedSequence& seq = corpus[idx];
            if (seq.events.empty()) continue;
            UnrollTape tape;
            try {
                tape = unroll(out.student.net, encode_all(cfg.codec, seq));
            } catch (const DivergenceError& e) {
                throw DivergenceError(std::string("distill: ") + e.what(), epoch);
            }
            double ce = 0.0, mse = 0.0;
            RnnGrads g = detail::combined_grads(out.student, tape, prediction_targets(seq),
                                                targets.per_sequence[idx], cfg.lambda, &ce, &mse);
            if (!std::isfinite(ce) || !std::isfinite(mse))
                throw DivergenceError("distill: non-finite loss", epoch);
            if (!g.finite()) throw DivergenceError("distill: non-finite gradient", epoch);
            sgd_step_inplace(out.student.net, g, cfg.lr, cfg.clip);
            ce_sum += ce;
            mse_sum += mse;
            ce_count += static_cast<long>(seq.events.size()) - 1;
            mse_count += static_cast<long>(targets.per_sequence[idx].steps.size());
        }
        out.curves.prediction_loss.push_back(ce_count == 0 ? 0.0 : ce_sum / ce_count);
        out.curves.imitation_loss.push_back(mse_count == 0 ? 0.0 : mse_sum / mse_count);
    }
    return out;
}

// Mean per-unit squared error of the imitation head at target steps; the
// evaluation counterpart of the training loss above.
inline double imitation_mse(const AugmentedRnn& aug, const std::vector<ReducedSequence>& corpus,
                            const DistillTargets& targets, const Codec& codec) {
    if (targets.per_sequence.size() != corpus.size())
        throw ConfigError("imitation_mse: targets do not cover the corpus");
    const std::size_t imit_dim = aug.imitation_dim();
    double sum = 0.0;
    long count = 0;
    for (std::size_t s = 0; s < corpus.size(); ++s) {
        const SequenceTargets& st = targets.per_sequence[s];
        if (st.steps.empty()) continue;
        UnrollTape tape = unroll(aug.net, encode_all(codec, corpus[s]));
        for (std::size_t k = 0; k < st.steps.size(); ++k) {
            double step_mse = 0.0;
            for (std::size_t i = 0; i < imit_dim; ++i) {
                const double diff =
                    tape.steps[st.steps[k]].logits[aug.split + i] - st.hidden[k][i];
                step_mse += diff * diff;
            }
            sum += step_mse / static_cast<double>(imit_dim);
            ++count;
        }
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

// Stand-in for the teacher's final hidden state: the imitation output at the
// student step of the last event the (frozen, original) lower level would
// forward upward. A classifier head trained on teacher codes can be reused on
// this vector unchanged.
inline Vec distilled_code(const AugmentedRnn& aug, const Level& lower,
                          const ReducedSequence& input) {
    if (input.events.empty()) throw ConfigError("distilled_code: empty input");
    const ReducedSequence up = reduce(lower, input);
    const std::vector<long> pos_in = input.positions();
    const long last = up.positions().back();
    const auto it = std::lower_bound(pos_in.begin(), pos_in.end(), last);
    if (it == pos_in.end() || *it != last)
        throw ConfigError("distilled_code: event position not found in input");
    const std::size_t step = static_cast<std::size_t>(it - pos_in.begin());

    UnrollTape tape = unroll(aug.net, encode_all(lower.codec, input));
    const Vec& z = tape.steps[step].logits;
    return Vec(z.begin() + static_cast<long>(aug.split), z.end());
}

// Checkpoint: the rnn-core parameter format plus the fields that make the
// file self-describing as a distilled student.
inline void save_augmented(const std::string& path, const AugmentedRnn& aug, double lambda,
                           int teacher_level) {
    json j = params_to_json(aug.net);
    j["split_index"] = aug.split;
    j["lambda"] = lambda;
    j["teacher_level"] = teacher_level;
    save_json(path, j);
}

struct AugmentedCheckpoint {
    AugmentedRnn student;
    double lambda = 0.0;
    int teacher_level = -1;
};

inline AugmentedCheckpoint load_augmented(const std::string& path) {
    const json j = load_json(path);
    AugmentedCheckpoint out;
    try {
        out.student.net = params_from_json(j);
        out.student.split = j.at("split_index").get<std::size_t>();
        out.lambda = j.at("lambda").get<double>();
        out.teacher_level = j.at("teacher_level").get<int>();
    } catch (const json::exception& e) {
        throw ConfigError("invalid student checkpoint " + path + ": " + e.what());
    }
    if (out.student.split >= out.student.net.w_out.rows)
        throw ConfigError("invalid student checkpoint " + path + ": split index out of range");
    return out;
}

}  // namespace hc
