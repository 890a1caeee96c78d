#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hc/chunker.hpp"
#include "hc/errors.hpp"
#include "hc/rng.hpp"
#include "hc/serialize.hpp"

namespace hc {

struct LabeledCorpus {
    std::vector<SymbolSequence> sequences;
    std::vector<int> labels;
    int n_classes = 0;

    std::size_t size() const { return sequences.size(); }

    bool operator==(const LabeledCorpus& o) const = default;
};

inline void validate(const LabeledCorpus& c) {
    if (c.sequences.size() != c.labels.size())
        throw ConfigError("corpus: sequence and label counts differ");
    if (c.n_classes < 1) throw ConfigError("corpus: n_classes must be positive");
    for (int l : c.labels)
        if (l < 0 || l >= c.n_classes) throw ConfigError("corpus: label out of range");
    for (const SymbolSequence& s : c.sequences) validate(s);
}

enum class TaskKind { cyclic, grammar_filler, long_lag };

inline const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::cyclic: return "cyclic";
        case TaskKind::grammar_filler: return "grammar_filler";
        default: return "long_lag";
    }
}

inline TaskKind task_kind_from_name(const std::string& s) {
    if (s == "cyclic") return TaskKind::cyclic;
    if (s == "grammar_filler") return TaskKind::grammar_filler;
    if (s == "long_lag") return TaskKind::long_lag;
    throw ConfigError("unknown task kind: " + s);
}

struct TaskSpec {
    TaskKind kind = TaskKind::long_lag;
    long length = 1200;
    int alphabet_size = 9;
    int n_classes = 2;
    double noise_rate = 0.02;
    std::uint64_t seed = 0;
    long n_sequences = 640;
    int cyclic_period = 4;  // used by the cyclic kind only
};

inline void validate(const TaskSpec& spec) {
    if (spec.length < 2) throw ConfigError("task: length must be at least 2");
    if (spec.noise_rate < 0.0 || spec.noise_rate > 0.2)
        throw ConfigError("task: noise_rate must lie in [0, 0.2]");
    if (spec.n_sequences < 1) throw ConfigError("task: need at least one sequence");
    if (spec.alphabet_size < 2) throw ConfigError("task: alphabet_size must be at least 2");
    if (spec.kind == TaskKind::long_lag) {
        if (spec.n_classes < 2) throw ConfigError("task: long_lag needs at least 2 classes");
        // filler symbols + one marker per class + the noise symbol
        if (spec.alphabet_size < spec.n_classes + 2)
            throw ConfigError("task: alphabet too small for " + std::to_string(spec.n_classes) +
                              " class markers plus filler and noise symbols");
    }
    if (spec.kind == TaskKind::cyclic && spec.cyclic_period > spec.alphabet_size)
        throw ConfigError("task: cyclic period exceeds alphabet (symbols must be distinct)");
}

// Repetitions of one fixed random cycle of distinct symbols; fully
// predictable after the first period.
inline std::vector<SymbolSequence> gen_cyclic(int period, long length, int alphabet_size,
                                              long n_sequences, std::uint64_t seed) {
    if (period < 1 || period > alphabet_size)
        throw ConfigError("gen_cyclic: period must lie in [1, alphabet_size]");
    Rng rng(derive_seed(seed, "cycle"));
    std::vector<int> cycle(static_cast<std::size_t>(alphabet_size));
    std::iota(cycle.begin(), cycle.end(), 0);
    rng.shuffle(cycle);
    cycle.resize(static_cast<std::size_t>(period));

    std::vector<SymbolSequence> corpus;
    corpus.reserve(static_cast<std::size_t>(n_sequences));
    for (long i = 0; i < n_sequences; ++i) {
        SymbolSequence s;
        s.alphabet_size = alphabet_size;
        s.symbols.reserve(static_cast<std::size_t>(length));
        for (long t = 0; t < length; ++t)
            s.symbols.push_back(cycle[static_cast<std::size_t>(t % period)]);
        corpus.push_back(std::move(s));
    }
    return corpus;
}

// The filler everything else builds on: four random motifs of length 8 played
// in a seeded fixed order, so the whole stream repeats every 32 steps and a
// small predictor can learn it outright. The filler never depends on a label.
struct FillerGrammar {
    static constexpr int kMotifs = 4;
    static constexpr int kMotifLen = 8;
    std::vector<std::vector<int>> motifs;  // kMotifs x kMotifLen over the filler alphabet
    std::vector<int> schedule;             // permutation of motif indices

    static FillerGrammar make(int filler_alphabet, std::uint64_t seed) {
        if (filler_alphabet < 2)
            throw ConfigError("filler grammar: need at least 2 filler symbols");
        FillerGrammar g;
        Rng rng(derive_seed(seed, "filler-grammar"));
        g.motifs.assign(kMotifs, std::vector<int>(kMotifLen, 0));
        for (auto& motif : g.motifs)
            for (int& sym : motif) sym = static_cast<int>(rng.uniform_int(
                static_cast<std::uint64_t>(filler_alphabet)));
        g.schedule.assign(kMotifs, 0);
        std::iota(g.schedule.begin(), g.schedule.end(), 0);
        rng.shuffle(g.schedule);
        return g;
    }

    int at(long t) const {
        const long block = (t / kMotifLen) % kMotifs;
        return motifs[static_cast<std::size_t>(schedule[static_cast<std::size_t>(block)])]
                     [static_cast<std::size_t>(t % kMotifLen)];
    }
};

// Alphabet layout for the long-lag task: filler symbols first, then one
// marker symbol per class, then a dedicated noise symbol at the end. The
// noise symbol never occurs in filler, so every corruption is unpredictable.
struct LongLagLayout {
    int filler_alphabet;
    int first_marker;
    int noise_symbol;

    static LongLagLayout of(const TaskSpec& spec) {
        const int filler = spec.alphabet_size - spec.n_classes - 1;
        return {filler, filler, spec.alphabet_size - 1};
    }

    int marker_for(int label) const { return first_marker + label; }
};

constexpr long kMarkerWindow = 10;  // marker position drawn from [0, 10]

// Each sequence is the shared deterministic filler with the class marker
// written into one early position and rare noise-symbol corruptions later
// on. The label can only be recovered from the marker: filler and noise are
// generated without ever reading it.
inline LabeledCorpus gen_long_lag(const TaskSpec& spec) {
    validate(spec);
    if (spec.kind != TaskKind::long_lag) throw ConfigError("gen_long_lag: wrong task kind");
    const LongLagLayout lay = LongLagLayout::of(spec);
    const FillerGrammar grammar = FillerGrammar::make(lay.filler_alphabet, spec.seed);
    const long marker_window = std::min(kMarkerWindow, spec.length - 1);

    LabeledCorpus corpus;
    corpus.n_classes = spec.n_classes;
    corpus.sequences.reserve(static_cast<std::size_t>(spec.n_sequences));
    corpus.labels.reserve(static_cast<std::size_t>(spec.n_sequences));
    for (long i = 0; i < spec.n_sequences; ++i) {
        const int label = static_cast<int>(i % spec.n_classes);
        Rng rng(derive_seed(spec.seed, "sequence", static_cast<std::uint64_t>(i)));
        SymbolSequence s;
        s.alphabet_size = spec.alphabet_size;
        s.symbols.reserve(static_cast<std::size_t>(spec.length));
        for (long t = 0; t < spec.length; ++t) s.symbols.push_back(grammar.at(t));

        const long marker_pos = static_cast<long>(
            rng.uniform_int(static_cast<std::uint64_t>(marker_window + 1)));
        s.symbols[static_cast<std::size_t>(marker_pos)] = lay.marker_for(label);

        // corruptions stay clear of the marker window
        for (long t = marker_window + 1; t < spec.length; ++t)
            if (rng.uniform() < spec.noise_rate)
                s.symbols[static_cast<std::size_t>(t)] = lay.noise_symbol;

        corpus.sequences.push_back(std::move(s));
        corpus.labels.push_back(label);
    }
    return corpus;
}

// Pure filler sequences, no markers or noise; the compression smoke test.
inline LabeledCorpus gen_grammar_filler(const TaskSpec& spec) {
    validate(spec);
    if (spec.kind != TaskKind::grammar_filler)
        throw ConfigError("gen_grammar_filler: wrong task kind");
    const FillerGrammar grammar = FillerGrammar::make(spec.alphabet_size, spec.seed);
    LabeledCorpus corpus;
    corpus.n_classes = 1;
    for (long i = 0; i < spec.n_sequences; ++i) {
        SymbolSequence s;
        s.alphabet_size = spec.alphabet_size;
        for (long t = 0; t < spec.length; ++t) s.symbols.push_back(grammar.at(t));
        corpus.sequences.push_back(std::move(s));
        corpus.labels.push_back(0);
    }
    return corpus;
}

inline LabeledCorpus gen_corpus(const TaskSpec& spec) {
    switch (spec.kind) {
        case TaskKind::long_lag: return gen_long_lag(spec);
        case TaskKind::grammar_filler: return gen_grammar_filler(spec);
        case TaskKind::cyclic: {
            validate(spec);
            LabeledCorpus corpus;
            corpus.n_classes = 1;
            corpus.sequences = gen_cyclic(spec.cyclic_period, spec.length, spec.alphabet_size,
                                          spec.n_sequences, spec.seed);
            corpus.labels.assign(corpus.sequences.size(), 0);
            return corpus;
        }
    }
    throw ConfigError("gen_corpus: unknown task kind");
}

// One header line with the alphabet and class counts, then one record per
// sequence: label, comma, comma-separated symbols. Further '#' lines are
// free-form comments (provenance stamps and the like) and ignored on load.
inline void save_corpus(const std::filesystem::path& path, const LabeledCorpus& corpus,
                        const std::string& meta_comment = "") {
    validate(corpus);
    if (corpus.sequences.empty()) throw ConfigError("save_corpus: empty corpus");
    std::string out;
    out += "# alphabet_size=" + std::to_string(corpus.sequences[0].alphabet_size) +
           " n_classes=" + std::to_string(corpus.n_classes) + "\n";
    if (!meta_comment.empty()) out += "# " + meta_comment + "\n";
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
        out += std::to_string(corpus.labels[i]);
        for (int sym : corpus.sequences[i].symbols) {
            out += ',';
            out += std::to_string(sym);
        }
        out += '\n';
    }
    write_text(path, out);
}

inline LabeledCorpus load_corpus(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    if (text.empty()) throw ConfigError("load_corpus: empty corpus in " + path.string());

    std::istringstream in(text);
    std::string line;
    long line_no = 0;

    auto malformed = [&](const std::string& why) {
        return ConfigError("load_corpus: " + path.string() + ":" + std::to_string(line_no) +
                           ": " + why);
    };

    if (!std::getline(in, line)) throw ConfigError("load_corpus: empty corpus in " + path.string());
    ++line_no;
    int alphabet_size = 0;
    LabeledCorpus corpus;
    if (std::sscanf(line.c_str(), "# alphabet_size=%d n_classes=%d", &alphabet_size,
                    &corpus.n_classes) != 2)
        throw malformed("expected header '# alphabet_size=<n> n_classes=<n>'");

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        SymbolSequence s;
        s.alphabet_size = alphabet_size;
        int label = 0;
        const char* p = line.c_str();
        char* end = nullptr;
        label = static_cast<int>(std::strtol(p, &end, 10));
        if (end == p) throw malformed("expected a label");
        p = end;
        while (*p == ',') {
            ++p;
            const long v = std::strtol(p, &end, 10);
            if (end == p) throw malformed("expected a symbol index");
            s.symbols.push_back(static_cast<int>(v));
            p = end;
        }
        if (*p != '\0') throw malformed("trailing characters");
        if (s.symbols.empty()) throw malformed("sequence has no symbols");
        corpus.sequences.push_back(std::move(s));
        corpus.labels.push_back(label);
    }
    if (corpus.sequences.empty()) throw ConfigError("load_corpus: empty corpus in " + path.string());
    validate(corpus);
    return corpus;
}

}  // namespace hc
