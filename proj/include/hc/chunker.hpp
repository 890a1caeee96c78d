#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "hc/errors.hpp"
#include "hc/numerics.hpp"
#include "hc/rnn.hpp"
#include "hc/rng.hpp"

namespace hc {

struct SymbolSequence {
    std::vector<int> symbols;
    int alphabet_size = 0;

    bool operator==(const SymbolSequence& o) const = default;
};

inline void validate(const SymbolSequence& s) {
    if (s.alphabet_size <= 0) throw ConfigError("sequence: alphabet_size must be positive");
    for (int v : s.symbols)
        if (v < 0 || v >= s.alphabet_size)
            throw ConfigError("sequence: symbol " + std::to_string(v) +
                              " outside alphabet of size " + std::to_string(s.alphabet_size));
}

// One forwarded item. gap is the distance to the previous event; the first
// event of a sequence instead carries its absolute position (0 whenever the
// sequence was reduced from its start, since position 0 is always an event).
struct Event {
    int symbol = 0;
    long gap = 0;

    bool operator==(const Event& o) const = default;
};

struct ReducedSequence {
    std::vector<Event> events;
    long source_length = 0;
    int alphabet_size = 0;

    // absolute positions = prefix sums of gaps
    std::vector<long> positions() const {
        std::vector<long> pos(events.size());
        long acc = 0;
        for (std::size_t i = 0; i < events.size(); ++i) {
            acc += events[i].gap;
            pos[i] = acc;
        }
        return pos;
    }

    bool operator==(const ReducedSequence& o) const = default;
};

// A raw sequence viewed as a dense event stream: every position is an event
// one step after the previous. This makes all levels consume the same shape
// of input.
inline ReducedSequence lift(const SymbolSequence& s) {
    ReducedSequence r;
    r.source_length = static_cast<long>(s.symbols.size());
    r.alphabet_size = s.alphabet_size;
    r.events.reserve(s.symbols.size());
    for (std::size_t t = 0; t < s.symbols.size(); ++t)
        r.events.push_back({s.symbols[t], t == 0 ? 0 : 1});
    return r;
}

// (symbol, gap) -> one-hot(symbol) followed by one capped gap feature.
struct Codec {
    int alphabet_size = 0;
    long gap_cap = 128;

    std::size_t input_dim() const { return static_cast<std::size_t>(alphabet_size) + 1; }

    Vec encode(const Event& e) const {
        if (e.symbol < 0 || e.symbol >= alphabet_size)
            throw ConfigError("encode_event: symbol out of range");
        Vec x(input_dim(), 0.0);
        x[static_cast<std::size_t>(e.symbol)] = 1.0;
        x[input_dim() - 1] =
            static_cast<double>(std::min(e.gap, gap_cap)) / static_cast<double>(gap_cap);
        return x;
    }

    int decode(const Vec& x) const {
        if (x.size() != input_dim()) throw ConfigError("decode_event: wrong input length");
        return static_cast<int>(
            std::max_element(x.begin(), x.end() - 1) - x.begin());
    }
};

inline std::size_t argmax(const Vec& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

enum class SurpriseKind { argmax_mismatch, prob_threshold };

inline const char* surprise_kind_name(SurpriseKind k) {
    return k == SurpriseKind::argmax_mismatch ? "argmax_mismatch" : "prob_threshold";
}

inline SurpriseKind surprise_kind_from_name(const std::string& s) {
    if (s == "argmax_mismatch") return SurpriseKind::argmax_mismatch;
    if (s == "prob_threshold") return SurpriseKind::prob_threshold;
    throw ConfigError("unknown surprise rule: " + s);
}

// Decides, per step, whether the realized symbol counts as unexpected. The
// prob_threshold variant also fires whenever the argmax disagrees with the
// realized symbol even if its probability clears tau; without that guard,
// replaying argmax predictions at non-event steps could not reproduce the
// original sequence.
struct SurpriseRule {
    SurpriseKind kind = SurpriseKind::argmax_mismatch;
    double tau = 0.5;

    bool fires(const Vec& probs, int actual) const {
        const std::size_t am = argmax(probs);
        if (am != static_cast<std::size_t>(actual)) return true;
        if (kind == SurpriseKind::prob_threshold)
            return probs[static_cast<std::size_t>(actual)] < tau;
        return false;
    }
};

struct Level {
    RnnParams predictor;
    SurpriseRule rule;
    Codec codec;
    int level_index = 0;
};

inline void validate(const Level& lvl) {
    if (lvl.codec.input_dim() != lvl.predictor.w_in.cols)
        throw ConfigError("level " + std::to_string(lvl.level_index) +
                          ": codec input dim does not match predictor input dim");
    if (static_cast<int>(lvl.predictor.w_out.rows) != lvl.codec.alphabet_size)
        throw ConfigError("level " + std::to_string(lvl.level_index) +
                          ": predictor output dim does not match alphabet size");
    if (lvl.codec.gap_cap <= 0)
        throw ConfigError("level " + std::to_string(lvl.level_index) + ": gap cap must be positive");
}

// Run the frozen predictor over an event stream and keep only the items its
// surprise rule fails on. The first item always passes through. Output gaps
// are measured on the same clock as the input positions, so positions stay
// anchored to the raw sequence no matter how many levels deep.
inline ReducedSequence reduce(const Level& lvl, const ReducedSequence& input) {
    validate(lvl);
    if (input.alphabet_size != lvl.codec.alphabet_size)
        throw ConfigError("reduce: sequence alphabet does not match level alphabet");
    ReducedSequence out;
    out.source_length = input.source_length;
    out.alphabet_size = input.alphabet_size;
    if (input.events.empty()) return out;

    const std::vector<long> pos = input.positions();
    out.events.push_back(input.events[0]);
    long last_out_pos = pos[0];

    RnnState state = initial_state(lvl.predictor);
    StepResult r = forward_step(lvl.predictor, state, lvl.codec.encode(input.events[0]));
    for (std::size_t i = 1; i < input.events.size(); ++i) {
        const Vec probs = softmax(r.logits);
        if (lvl.rule.fires(probs, input.events[i].symbol)) {
            out.events.push_back({input.events[i].symbol, pos[i] - last_out_pos});
            last_out_pos = pos[i];
        }
        r = forward_step(lvl.predictor, r.state, lvl.codec.encode(input.events[i]));
    }
    return out;
}

inline ReducedSequence reduce(const Level& lvl, const SymbolSequence& seq) {
    return reduce(lvl, lift(seq));
}

// Replay the frozen predictor over a dense clock: emit the stored symbol at
// event positions and the predictor's argmax everywhere else, feeding the
// emitted symbol back in. Exactness follows because reduce fired on precisely
// the steps where the argmax (or its confidence) failed. If the events could
// not have come from this predictor, the replay notices and refuses.
inline SymbolSequence reconstruct(const Level& lvl, const ReducedSequence& reduced) {
    validate(lvl);
    if (reduced.events.empty())
        throw ConfigError("reconstruct: empty event list (position 0 must be an event)");
    const std::vector<long> pos = reduced.positions();
    if (pos[0] != 0) throw ConfigError("reconstruct: position 0 must be an event");
    if (reduced.source_length < 1)
        throw ConfigError("reconstruct: source length must be positive");
    for (std::size_t i = 1; i < pos.size(); ++i)
        if (pos[i] <= pos[i - 1] || pos[i] >= reduced.source_length)
            throw ConfigError("reconstruct: event positions not strictly increasing in range");

    SymbolSequence out;
    out.alphabet_size = reduced.alphabet_size;
    out.symbols.reserve(static_cast<std::size_t>(reduced.source_length));

    std::size_t next_event = 0;
    RnnState state = initial_state(lvl.predictor);
    Vec logits;
    for (long t = 0; t < reduced.source_length; ++t) {
        const bool is_event = next_event < pos.size() && pos[next_event] == t;
        int sym;
        if (t == 0) {
            sym = reduced.events[0].symbol;
            next_event = 1;
        } else {
            const Vec probs = softmax(logits);
            sym = is_event ? reduced.events[next_event].symbol
                           : static_cast<int>(argmax(probs));
            if (is_event) ++next_event;
            // The rule must agree with the event marking it was given; a
            // disagreement means the events came from different weights.
            if (lvl.rule.fires(probs, sym) != is_event)
                throw ConfigError("reconstruct: stale predictor");
        }
        out.symbols.push_back(sym);
        StepResult r =
            forward_step(lvl.predictor, state, lvl.codec.encode({sym, t == 0 ? 0 : 1}));
        state = std::move(r.state);
        logits = std::move(r.logits);
    }
    return out;
}

// next-event-symbol targets: step i predicts the symbol of event i+1
inline std::vector<int> prediction_targets(const ReducedSequence& r) {
    std::vector<int> t(r.events.size(), kNoTarget);
    for (std::size_t i = 0; i + 1 < r.events.size(); ++i) t[i] = r.events[i + 1].symbol;
    return t;
}

inline std::vector<Vec> encode_all(const Codec& codec, const ReducedSequence& r) {
    std::vector<Vec> xs;
    xs.reserve(r.events.size());
    for (const Event& e : r.events) xs.push_back(codec.encode(e));
    return xs;
}

struct PretrainConfig {
    long epochs = 300;
    double lr = 0.05;
    std::optional<double> clip = 1.0;
    // stop when the event rate moved less than this over the last window epochs
    long early_stop_window = 20;
    double early_stop_delta = 0.01;
    std::size_t eval_sample = 64;
};

struct TrainCurve {
    Vec loss;        // per-epoch mean cross-entropy per predicted symbol
    Vec event_rate;  // per-epoch event rate on the evaluation sample
    bool stopped_early = false;
};

inline double event_rate_on_sample(const Level& lvl,
                                   const std::vector<ReducedSequence>& corpus,
                                   std::size_t sample) {
    long events = 0, items = 0;
    const std::size_t n = std::min(sample, corpus.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (corpus[i].events.empty()) continue;
        events += static_cast<long>(reduce(lvl, corpus[i]).events.size());
        items += static_cast<long>(corpus[i].events.size());
    }
    return items == 0 ? 0.0 : static_cast<double>(events) / static_cast<double>(items);
}

// Next-symbol training of one level's predictor on its input corpus. The
// sequence order reshuffles every epoch from the caller's rng, so equal seeds
// give bit-identical weights.
inline TrainCurve pretrain_level(Level& lvl, const std::vector<ReducedSequence>& corpus,
                                 const PretrainConfig& cfg, Rng& rng) {
    validate(lvl);
    if (corpus.empty()) throw ConfigError("pretrain_level: empty corpus");
    for (const ReducedSequence& r : corpus)
        if (r.alphabet_size != lvl.codec.alphabet_size)
            throw ConfigError("pretrain_level: corpus alphabet does not match level");

    TrainCurve curve;
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        long target_count = 0;
        for (std::size_t idx : order) {
            const ReducedSequence& seq = corpus[idx];
            if (seq.events.size() < 2) continue;
            UnrollTape tape;
            try {
                tape = unroll(lvl.predictor, encode_all(lvl.codec, seq));
            } catch (const DivergenceError& e) {
                throw DivergenceError(std::string("pretrain_level: ") + e.what(), epoch);
            }
            double loss = 0.0;
            RnnGrads g = bptt(lvl.predictor, tape, prediction_targets(seq), &loss);
            if (!std::isfinite(loss))
                throw DivergenceError("pretrain_level: non-finite loss", epoch);
            if (!g.finite())
                throw DivergenceError("pretrain_level: non-finite gradient", epoch);
            sgd_step_inplace(lvl.predictor, g, cfg.lr, cfg.clip);
            loss_sum += loss;
            target_count += static_cast<long>(seq.events.size()) - 1;
        }
        curve.loss.push_back(target_count == 0 ? 0.0 : loss_sum / target_count);
        curve.event_rate.push_back(event_rate_on_sample(lvl, corpus, cfg.eval_sample));

        const long e = epoch + 1;
        if (cfg.early_stop_window > 0 && e > cfg.early_stop_window) {
            const double now = curve.event_rate[e - 1];
            const double then = curve.event_rate[e - 1 - cfg.early_stop_window];
            if (std::abs(now - then) < cfg.early_stop_delta) {
                curve.stopped_early = true;
                break;
            }
        }
    }
    return curve;
}

struct Hierarchy {
    std::vector<Level> levels;
    // set when stacking halted because some level's output was all single events
    bool fully_compressed = false;
    int compressed_at = -1;

    int depth() const { return static_cast<int>(levels.size()); }
};

// Reduce one sequence through levels [0, n_levels); n_levels = depth gives the
// stream the level above the stack would see.
inline ReducedSequence reduce_through(const Hierarchy& h, const SymbolSequence& seq,
                                      int n_levels) {
    ReducedSequence r = lift(seq);
    for (int k = 0; k < n_levels; ++k) r = reduce(h.levels[static_cast<std::size_t>(k)], r);
    return r;
}

struct LevelStats {
    double mean_length = 0.0;  // mean input length at this level
    double ratio = 1.0;        // vs the level below (level 0 = 1 by definition)
    double event_rate = 0.0;   // events out / items in
};

struct HierarchyConfig {
    int depth = 3;
    std::vector<std::size_t> hidden = {32, 24, 16};
    SurpriseRule rule;
    long gap_cap = 128;
    Activation activation = Activation::tanh;
    PretrainConfig pretrain;
};

struct BuildResult {
    Hierarchy hierarchy;
    // level_corpora[k] is level k's input corpus; one extra entry at the end
    // holds the output of the top level
    std::vector<std::vector<ReducedSequence>> level_corpora;
    std::vector<TrainCurve> curves;
    std::vector<LevelStats> stats;
};

inline std::vector<LevelStats> stats_from_corpora(
    const std::vector<std::vector<ReducedSequence>>& level_corpora) {
    std::vector<LevelStats> stats;
    for (std::size_t k = 0; k + 1 < level_corpora.size(); ++k) {
        LevelStats s;
        double in_items = 0.0, out_items = 0.0;
        for (const ReducedSequence& r : level_corpora[k])
            in_items += static_cast<double>(r.events.size());
        for (const ReducedSequence& r : level_corpora[k + 1])
            out_items += static_cast<double>(r.events.size());
        const double n = static_cast<double>(level_corpora[k].size());
        s.mean_length = in_items / n;
        s.event_rate = in_items == 0.0 ? 0.0 : out_items / in_items;
        if (k == 0) {
            s.ratio = 1.0;
        } else {
            double below = 0.0;
            for (const ReducedSequence& r : level_corpora[k - 1])
                below += static_cast<double>(r.events.size());
            s.ratio = below == 0.0 ? 1.0 : in_items / below;
        }
        stats.push_back(s);
    }
    return stats;
}

// Greedy bottom-up construction: train level k on its input corpus, freeze it,
// reduce the corpus through it, move up. Stops early once every sequence is a
// single event, since another level would have nothing left to predict.
inline BuildResult build_hierarchy(const std::vector<SymbolSequence>& corpus,
                                   const HierarchyConfig& cfg, std::uint64_t root_seed) {
    if (cfg.depth < 1) throw ConfigError("build_hierarchy: depth must be at least 1");
    if (cfg.hidden.size() < static_cast<std::size_t>(cfg.depth))
        throw ConfigError("build_hierarchy: need one hidden size per level");
    if (corpus.empty()) throw ConfigError("build_hierarchy: empty corpus");
    const int alphabet = corpus[0].alphabet_size;
    for (const SymbolSequence& s : corpus) {
        validate(s);
        if (s.alphabet_size != alphabet)
            throw ConfigError("build_hierarchy: mixed alphabet sizes in corpus");
    }

    BuildResult out;
    out.level_corpora.emplace_back();
    out.level_corpora[0].reserve(corpus.size());
    for (const SymbolSequence& s : corpus) out.level_corpora[0].push_back(lift(s));

    for (int k = 0; k < cfg.depth; ++k) {
        Level lvl;
        lvl.level_index = k;
        lvl.codec = Codec{alphabet, cfg.gap_cap};
        lvl.rule = cfg.rule;
        Rng init_rng(derive_seed(root_seed, "level-init", static_cast<std::uint64_t>(k)));
        lvl.predictor = init_params(
            {lvl.codec.input_dim(), cfg.hidden[static_cast<std::size_t>(k)],
             static_cast<std::size_t>(alphabet)},
            cfg.activation, init_rng);

        Rng train_rng(derive_seed(root_seed, "pretrain-level", static_cast<std::uint64_t>(k)));
        out.curves.push_back(
            pretrain_level(lvl, out.level_corpora.back(), cfg.pretrain, train_rng));

        std::vector<ReducedSequence> next;
        next.reserve(out.level_corpora.back().size());
        for (const ReducedSequence& r : out.level_corpora.back()) next.push_back(reduce(lvl, r));
        out.hierarchy.levels.push_back(std::move(lvl));
        out.level_corpora.push_back(std::move(next));

        bool all_single = true;
        for (const ReducedSequence& r : out.level_corpora.back())
            if (r.events.size() > 1) {
                all_single = false;
                break;
            }
        if (all_single && k + 1 < cfg.depth) {
            out.hierarchy.fully_compressed = true;
            out.hierarchy.compressed_at = k;
            break;
        }
    }
    out.stats = stats_from_corpora(out.level_corpora);
    return out;
}

inline std::vector<LevelStats> compression_stats(const Hierarchy& h,
                                                 const std::vector<SymbolSequence>& corpus) {
    std::vector<std::vector<ReducedSequence>> level_corpora;
    level_corpora.emplace_back();
    for (const SymbolSequence& s : corpus) level_corpora[0].push_back(lift(s));
    for (const Level& lvl : h.levels) {
        std::vector<ReducedSequence> next;
        next.reserve(level_corpora.back().size());
        for (const ReducedSequence& r : level_corpora.back()) next.push_back(reduce(lvl, r));
        level_corpora.push_back(std::move(next));
    }
    return stats_from_corpora(level_corpora);
}

}  // namespace hc
