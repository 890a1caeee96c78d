#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hc/config.hpp"
#include "hc/diagnostics.hpp"
#include "hc/distill.hpp"
#include "hc/supervised.hpp"

namespace hc {

// Concurrent commands on one output directory would race on artifacts; take
// an exclusive lock for the lifetime of the command. Held once per process:
// repro reuses the caller's lock rather than re-acquiring.
class OutputLock {
  public:
    explicit OutputLock(const std::filesystem::path& dir) {
        std::filesystem::create_directories(dir);
        path_ = (dir / ".lock").string();
        fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0) throw ConfigError("cannot open lock file " + path_);
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            fd_ = -1;
            throw ConfigError("another command holds the output directory: " + path_);
        }
    }
    ~OutputLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

  private:
    int fd_ = -1;
    std::string path_;
};

struct OutPaths {
    std::filesystem::path root;

    explicit OutPaths(const std::string& out) : root(out) {}

    std::filesystem::path corpus() const { return root / "corpus.txt"; }
    std::filesystem::path hierarchy_dir() const { return root / "hierarchy"; }
    std::filesystem::path compression_csv() const { return root / "compression.csv"; }
    std::filesystem::path pretrain_curves_csv() const { return root / "pretrain_curves.csv"; }
    std::filesystem::path classification_csv() const { return root / "classification.csv"; }
    std::filesystem::path classify_json() const { return root / "classify.json"; }
    std::filesystem::path head_json() const { return root / "classifier" / "head.json"; }
    std::filesystem::path top_json() const { return root / "classifier" / "top.json"; }
    std::filesystem::path student_json() const { return root / "student.json"; }
    std::filesystem::path distill_curves_csv() const { return root / "distill_curves.csv"; }
    std::filesystem::path distill_json() const { return root / "distill.json"; }
    std::filesystem::path gradient_csv(const std::string& name, std::size_t k) const {
        return root / ("gradient_" + name + "_s" + std::to_string(k) + ".csv");
    }
    std::filesystem::path gradient_sidecar(const std::string& name, std::size_t k) const {
        return root / ("gradient_" + name + "_s" + std::to_string(k) + ".json");
    }
    std::filesystem::path diagnose_json() const { return root / "diagnose.json"; }
    std::filesystem::path path_lengths_csv() const { return root / "path_lengths.csv"; }
    std::filesystem::path repro_json() const { return root / "repro.json"; }
};

inline std::string meta_comment(const ExperimentConfig& c) {
    return "config_hash=" + config_hash(c) + " seed=" + std::to_string(c.seed) +
           " tool=" + kToolVersion;
}

inline json meta_json(const ExperimentConfig& c) {
    json m;
    m["config_hash"] = config_hash(c);
    m["seed"] = c.seed;
    m["tool"] = kToolVersion;
    return m;
}

inline std::string csv_meta_line(const ExperimentConfig& c) {
    return "# " + meta_comment(c) + "\n";
}

// ---------------------------------------------------------------------------
// gen

inline void cmd_gen(const ExperimentConfig& cfg, std::ostream& log) {
    OutPaths paths(cfg.out);
    TaskSpec task = cfg.task;
    task.seed = derive_seed(cfg.seed, "corpus");
    const LabeledCorpus corpus = gen_corpus(task);
    save_corpus(paths.corpus(), corpus, meta_comment(cfg));
    log << "gen: " << corpus.size() << " sequences of length " << cfg.task.length << " -> "
        << paths.corpus().string() << "\n";
}

// ---------------------------------------------------------------------------
// pretrain

inline void cmd_pretrain(const ExperimentConfig& cfg, std::ostream& log) {
    OutPaths paths(cfg.out);
    const LabeledCorpus corpus = load_corpus(paths.corpus());
    const BuildResult built =
        build_hierarchy(corpus.sequences, cfg.hierarchy, derive_seed(cfg.seed, "hierarchy"));

    save_hierarchy(paths.hierarchy_dir(), built.hierarchy, built.stats, meta_json(cfg));

    std::string comp = csv_meta_line(cfg) + "level,mean_length,ratio,event_rate\n";
    for (std::size_t k = 0; k < built.stats.size(); ++k)
        comp += std::to_string(k) + "," + format_double(built.stats[k].mean_length) + "," +
                format_double(built.stats[k].ratio) + "," +
                format_double(built.stats[k].event_rate) + "\n";
    write_text(paths.compression_csv(), comp);

    std::string curves = csv_meta_line(cfg) + "level,epoch,loss,event_rate\n";
    for (std::size_t k = 0; k < built.curves.size(); ++k)
        for (std::size_t e = 0; e < built.curves[k].loss.size(); ++e)
            curves += std::to_string(k) + "," + std::to_string(e) + "," +
                      format_double(built.curves[k].loss[e]) + "," +
                      format_double(built.curves[k].event_rate[e]) + "\n";
    write_text(paths.pretrain_curves_csv(), curves);

    for (std::size_t k = 0; k < built.stats.size(); ++k)
        log << "pretrain: level " << k << " mean input length "
            << built.stats[k].mean_length << ", event rate " << built.stats[k].event_rate
            << (built.curves.size() > k && built.curves[k].stopped_early ? " (early stop)" : "")
            << "\n";
    if (built.hierarchy.fully_compressed)
        log << "pretrain: fully compressed at level " << built.hierarchy.compressed_at << "\n";
}

// ---------------------------------------------------------------------------
// classify

namespace detail {

inline std::size_t plain_rnn_params(std::size_t input_dim, std::size_t hidden,
                                    std::size_t output) {
    return hidden * input_dim + hidden * hidden + hidden + output * hidden + output;
}

inline void append_metric_rows(std::string& csv, const std::string& run_id,
                               const std::string& condition, std::uint64_t seed,
                               const std::vector<EpochMetrics>& curve) {
    for (std::size_t e = 0; e < curve.size(); ++e) {
        csv += run_id + "," + condition + "," + std::to_string(seed) + "," + std::to_string(e) +
               ",train," + format_double(curve[e].train_loss) + "," +
               format_double(curve[e].train_accuracy) + "\n";
        csv += run_id + "," + condition + "," + std::to_string(seed) + "," + std::to_string(e) +
               ",test," + format_double(curve[e].test_loss) + "," +
               format_double(curve[e].test_accuracy) + "\n";
    }
}

}  // namespace detail

inline json head_to_json(const ClassifierHead& head) {
    json j;
    j["version"] = kCheckpointVersion;
    j["n_classes"] = head.w_c.rows;
    j["code_dim"] = head.w_c.cols;
    j["w_c"] = head.w_c.data;
    j["b_c"] = head.b_c;
    return j;
}

inline ClassifierHead head_from_json(const json& j) {
    try {
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw ConfigError("head checkpoint: unsupported version");
        ClassifierHead h;
        h.w_c = Matrix(j.at("n_classes").get<std::size_t>(), j.at("code_dim").get<std::size_t>());
        h.w_c.data = j.at("w_c").get<Vec>();
        h.b_c = j.at("b_c").get<Vec>();
        if (h.w_c.data.size() != h.w_c.rows * h.w_c.cols || h.b_c.size() != h.w_c.rows)
            throw ConfigError("head checkpoint: array lengths do not match dims");
        return h;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("head checkpoint: ") + e.what());
    }
}

inline void cmd_classify(const ExperimentConfig& cfg, std::ostream& log) {
    OutPaths paths(cfg.out);
    const LabeledCorpus corpus = load_corpus(paths.corpus());
    const LoadedHierarchy loaded = load_hierarchy(paths.hierarchy_dir());
    const Hierarchy& h = loaded.hierarchy;

    const std::size_t top_hidden = h.levels.back().predictor.w_rec.rows;
    const std::size_t head_params =
        static_cast<std::size_t>(corpus.n_classes) * top_hidden +
        static_cast<std::size_t>(corpus.n_classes);
    const std::size_t input_dim = h.levels[0].codec.input_dim();
    check_parameter_parity(
        detail::plain_rnn_params(input_dim, cfg.classify.baseline.hidden,
                                 static_cast<std::size_t>(corpus.n_classes)),
        encoder_param_count(h), head_params);

    std::string csv = csv_meta_line(cfg) + "run_id,condition,seed,epoch,split,loss,accuracy\n";
    std::vector<ClassifyResult> hier_runs;
    std::vector<BaselineResult> base_runs;
    Vec hier_acc, base_acc;

    for (std::size_t i = 0; i < cfg.classify.n_seeds; ++i) {
        const std::string run_id = "run-" + std::to_string(i);

        const std::uint64_t hseed = derive_seed(cfg.seed, "classify", i);
        Rng hrng(hseed);
        hier_runs.push_back(train_classifier(h, corpus, cfg.classify.train, hrng));
        detail::append_metric_rows(csv, run_id, "hierarchy", hseed, hier_runs.back().curve);
        hier_acc.push_back(hier_runs.back().final_test_accuracy);

        const std::uint64_t bseed = derive_seed(cfg.seed, "baseline", i);
        Rng brng(bseed);
        base_runs.push_back(baseline_rnn_classifier(corpus, cfg.classify.baseline, brng));
        detail::append_metric_rows(csv, run_id, "baseline", bseed, base_runs.back().curve);
        base_acc.push_back(base_runs.back().final_test_accuracy);

        log << "classify: run " << i << " hierarchy " << hier_runs.back().final_test_accuracy
            << " baseline " << base_runs.back().final_test_accuracy
            << (base_runs.back().diverged ? " (baseline diverged)" : "") << "\n";
    }
    write_text(paths.classification_csv(), csv);

    const double hier_median = median_of(hier_acc);
    const double base_median = median_of(base_acc);

    // representative run: final accuracy closest to the median, lowest index wins
    std::size_t chosen = 0;
    double best_gap = 1e300;
    for (std::size_t i = 0; i < hier_acc.size(); ++i) {
        const double gap = std::abs(hier_acc[i] - hier_median);
        if (gap < best_gap) {
            best_gap = gap;
            chosen = i;
        }
    }

    json hj = head_to_json(hier_runs[chosen].head);
    hj["meta"] = meta_json(cfg);
    save_json(paths.head_json(), hj);
    json tj = params_to_json(hier_runs[chosen].top);
    tj["meta"] = meta_json(cfg);
    save_json(paths.top_json(), tj);

    json summary;
    summary["meta"] = meta_json(cfg);
    json hier;
    hier["final_test_accuracies"] = hier_acc;
    hier["median"] = hier_median;
    hier["chosen_run"] = chosen;
    json split_hashes = json::array();
    for (const ClassifyResult& r : hier_runs) split_hashes.push_back(r.split_hash);
    hier["split_hashes"] = split_hashes;
    summary["hierarchy"] = hier;
    json base;
    base["final_test_accuracies"] = base_acc;
    base["median"] = base_median;
    json diverged = json::array();
    for (const BaselineResult& r : base_runs) diverged.push_back(r.diverged);
    base["diverged"] = diverged;
    summary["baseline"] = base;
    save_json(paths.classify_json(), summary);

    log << "classify: median hierarchy " << hier_median << ", median baseline " << base_median
        << "\n";
}

// ---------------------------------------------------------------------------
// distill

inline void cmd_distill(const ExperimentConfig& cfg, std::ostream& log) {
    OutPaths paths(cfg.out);
    const LabeledCorpus corpus = load_corpus(paths.corpus());
    const LoadedHierarchy loaded = load_hierarchy(paths.hierarchy_dir());
    const Hierarchy& h = loaded.hierarchy;
    const int depth = h.depth();
    if (depth < 2) throw ConfigError("distill: hierarchy has no level pair to collapse");

    const int lower = cfg.distill.lower_level == -1 ? depth - 2 : cfg.distill.lower_level;
    if (lower < 0 || lower + 1 >= depth)
        throw ConfigError("distill: no level above index " + std::to_string(lower));
    const bool teacher_is_top = lower + 1 == depth - 1;

    const json classify_summary = load_json(paths.classify_json());

    // the teacher state the classifier head actually consumes is the
    // finetuned top, so imitate that version when collapsing the top pair
    Hierarchy teacher_h = h;
    if (teacher_is_top)
        teacher_h.levels.back().predictor = load_params(paths.top_json());

    std::vector<ReducedSequence> lower_corpus;
    lower_corpus.reserve(corpus.size());
    for (const SymbolSequence& s : corpus.sequences)
        lower_corpus.push_back(reduce_through(h, s, lower));

    const DistillTargets targets = make_targets(teacher_h, lower, lower_corpus);

    Rng aug_rng(derive_seed(cfg.seed, "augment"));
    const AugmentedRnn start =
        augment(h.levels[static_cast<std::size_t>(lower)].predictor, targets.teacher_hidden,
                aug_rng);

    DistillConfig dc;
    dc.epochs = cfg.distill.epochs;
    dc.lr = cfg.distill.lr;
    dc.clip = cfg.distill.clip;
    dc.lambda = cfg.distill.lambda;
    dc.codec = h.levels[static_cast<std::size_t>(lower)].codec;
    Rng train_rng(derive_seed(cfg.seed, "distill"));
    const DistillResult res = distill(start, lower_corpus, targets, dc, train_rng);

    const double mse = imitation_mse(res.student, lower_corpus, targets, dc.codec);

    json out;
    out["meta"] = meta_json(cfg);
    out["lower_level"] = lower;
    out["teacher_level"] = lower + 1;
    out["lambda"] = cfg.distill.lambda;
    out["imitation_mse"] = mse;

    if (teacher_is_top) {
        // reuse the trained head on the imitation outputs, same test split as
        // the representative classification run
        const ClassifierHead head = head_from_json(load_json(paths.head_json()));
        const std::size_t chosen =
            classify_summary.at("hierarchy").at("chosen_run").get<std::size_t>();
        const std::uint64_t stored_hash =
            classify_summary.at("hierarchy").at("split_hashes").at(chosen).get<std::uint64_t>();
        Rng split_rng(derive_seed(cfg.seed, "classify", chosen));
        const SplitIndices split =
            split_corpus(corpus.size(), cfg.classify.train.test_fraction, split_rng);
        if (split.hash != stored_hash)
            throw ConfigError("distill: could not reproduce the classification split");

        double correct = 0.0;
        for (std::size_t idx : split.test) {
            const Vec code = distilled_code(res.student, h.levels[static_cast<std::size_t>(lower)],
                                            lower_corpus[idx]);
            if (argmax(head.logits(code)) ==
                static_cast<std::size_t>(corpus.labels[idx]))
                correct += 1.0;
        }
        const double acc = correct / static_cast<double>(split.test.size());
        const double reference = classify_summary.at("hierarchy").at("median").get<double>();
        out["distilled_accuracy"] = acc;
        out["reference_accuracy"] = reference;
        out["accuracy_drop"] = reference - acc;
        log << "distill: imitation mse " << mse << ", distilled accuracy " << acc
            << " (reference " << reference << ")\n";
    } else {
        out["distilled_accuracy"] = nullptr;
        log << "distill: imitation mse " << mse << " (teacher below top: no head reuse)\n";
    }

    save_augmented(paths.student_json().string(), res.student, cfg.distill.lambda, lower + 1);
    {
        json sj = load_json(paths.student_json());
        sj["meta"] = meta_json(cfg);
        save_json(paths.student_json(), sj);
    }

    std::string curves = csv_meta_line(cfg) + "epoch,prediction_loss,imitation_loss\n";
    for (std::size_t e = 0; e < res.curves.prediction_loss.size(); ++e)
        curves += std::to_string(e) + "," + format_double(res.curves.prediction_loss[e]) + "," +
                  format_double(res.curves.imitation_loss[e]) + "\n";
    write_text(paths.distill_curves_csv(), curves);
    save_json(paths.distill_json(), out);
}

// ---------------------------------------------------------------------------
// diagnose

inline void cmd_diagnose(const ExperimentConfig& cfg, std::ostream& log) {
    OutPaths paths(cfg.out);
    const std::size_t input_dim = static_cast<std::size_t>(cfg.task.alphabet_size) + 1;
    const std::size_t output_dim = static_cast<std::size_t>(cfg.task.alphabet_size);

    json summary;
    summary["meta"] = meta_json(cfg);
    json conditions = json::array();

    for (const DiagnoseScale& scale : cfg.diagnose.scales) {
        Vec ratios;
        std::vector<bool> exploded;
        std::vector<long> first_lags;
        for (std::size_t k = 0; k < cfg.diagnose.n_seeds; ++k) {
            Rng init_rng(derive_seed(cfg.seed, "diagnose-init-" + scale.name, k));
            const RnnParams net =
                init_params({input_dim, cfg.diagnose.hidden, output_dim},
                            cfg.diagnose.activation, init_rng,
                            InitScales{scale.in, scale.rec, scale.out, true});
            Rng probe_rng(derive_seed(cfg.seed, "diagnose-probe-" + scale.name, k));
            const GradientReport report =
                gradient_norm_by_lag(net, cfg.diagnose.seq_len, cfg.diagnose.probe_lags,
                                     probe_rng, cfg.diagnose.n_samples,
                                     cfg.diagnose.explosion_cap);

            write_text(paths.gradient_csv(scale.name, k),
                       csv_meta_line(cfg) + gradient_report_csv(report));
            json sidecar = gradient_report_json(report);
            sidecar["meta"] = meta_json(cfg);
            sidecar["config"] = {{"scale", scale.name},       {"in", scale.in},
                                 {"rec", scale.rec},          {"out", scale.out},
                                 {"hidden", cfg.diagnose.hidden},
                                 {"activation", activation_name(cfg.diagnose.activation)}};
            save_json(paths.gradient_sidecar(scale.name, k), sidecar);

            ratios.push_back(report.rows.back().mean_hidden / report.rows.front().mean_hidden);
            exploded.push_back(report.explosion_flag);
            first_lags.push_back(report.first_explosion_lag);
        }

        double mean_ratio = 0.0;
        for (double r : ratios) mean_ratio += r / static_cast<double>(ratios.size());
        bool all_exploded = true, any_exploded = false;
        for (bool e : exploded) {
            all_exploded = all_exploded && e;
            any_exploded = any_exploded || e;
        }
        json cj;
        cj["name"] = scale.name;
        cj["ratio_lags"] = {cfg.diagnose.probe_lags.front(), cfg.diagnose.probe_lags.back()};
        cj["ratios"] = ratios;
        cj["mean_ratio"] = mean_ratio;
        cj["explosion_all"] = all_exploded;
        cj["explosion_any"] = any_exploded;
        cj["first_explosion_lags"] = first_lags;
        conditions.push_back(cj);

        log << "diagnose: " << scale.name << " mean ratio " << mean_ratio
            << (any_exploded ? " (explosions flagged)" : "") << "\n";
    }
    summary["conditions"] = conditions;
    save_json(paths.diagnose_json(), summary);

    // before/after path comparison when a built stack is available
    if (std::filesystem::exists(paths.hierarchy_dir() / "manifest.json") &&
        std::filesystem::exists(paths.corpus())) {
        const LabeledCorpus corpus = load_corpus(paths.corpus());
        const LoadedHierarchy loaded = load_hierarchy(paths.hierarchy_dir());
        const std::vector<double> path =
            effective_path_length(loaded.hierarchy, corpus.sequences);
        std::string csv = csv_meta_line(cfg) + "level,mean_length\n";
        for (std::size_t k = 0; k < path.size(); ++k)
            csv += std::to_string(k) + "," + format_double(path[k]) + "\n";
        write_text(paths.path_lengths_csv(), csv);
        log << "diagnose: path length " << path.front() << " raw -> " << path[path.size() - 2]
            << " at the top\n";
    }
}

// ---------------------------------------------------------------------------
// repro

struct CriterionRow {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
};

struct ReproResult {
    std::vector<CriterionRow> rows;
    bool all_pass = true;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string fmt_seconds(double s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1fs", s);
    return buf;
}

inline std::string fmt_sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2e", v);
    return buf;
}

// Criterion 1 body: random small nets against the finite-difference oracle.
inline CriterionRow check_gradients(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(cfg.seed, "gradcheck"));
    double worst = 0.0;
    for (int n = 0; n < 20; ++n) {
        const RnnDims dims{2 + rng.uniform_int(3), 2 + rng.uniform_int(4),
                           2 + rng.uniform_int(3)};
        const Activation act = n % 2 == 0 ? Activation::tanh : Activation::sigmoid;
        RnnParams p = init_params(dims, act, rng);
        if (p.param_count() > 100) throw ConfigError("gradcheck: instance too large");
        const long len = 5 + static_cast<long>(rng.uniform_int(16));

        std::vector<Vec> xs;
        for (long t = 0; t < len; ++t) {
            Vec x(dims.input);
            for (auto& v : x) v = rng.uniform(-1.0, 1.0);
            xs.push_back(x);
        }
        std::vector<int> targets;
        for (long t = 0; t < len; ++t)
            targets.push_back(rng.uniform() < 0.2
                                  ? kNoTarget
                                  : static_cast<int>(rng.uniform_int(dims.output)));

        auto loss_of = [&](const Vec& theta) {
            RnnParams q = unflatten(theta, dims, act);
            UnrollTape tape = unroll(q, xs);
            double loss = 0.0;
            for (std::size_t t = 0; t < tape.length(); ++t)
                if (targets[t] != kNoTarget)
                    loss += cross_entropy(tape.steps[t].logits,
                                          static_cast<std::size_t>(targets[t]));
            return loss;
        };
        const Vec fd = finite_diff_grad(loss_of, flatten(p), 1e-6);
        UnrollTape tape = unroll(p, xs);
        const Vec an = flatten(bptt(p, tape, targets));
        for (std::size_t i = 0; i < an.size(); ++i)
            worst = std::max(worst, rel_err(an[i], fd[i]));
    }
    const double dur = seconds_since(t0);
    CriterionRow row{1, "analytic gradients vs finite differences", false, ""};
    row.pass = worst < 1e-4 && dur < 30.0;
    row.detail = "worst rel err " + fmt_sci(worst) + " (< 1e-04), " + fmt_seconds(dur);
    return row;
}

// Criterion 2 body: exact round trip through reduce/reconstruct.
inline CriterionRow check_losslessness(const ExperimentConfig& cfg, const Hierarchy& h,
                                       const LabeledCorpus& corpus) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = std::min<std::size_t>(100, corpus.size());
    const int alphabet = corpus.sequences[0].alphabet_size;

    Rng rng(derive_seed(cfg.seed, "lossless-untrained"));
    Level untrained;
    untrained.codec = h.levels[0].codec;
    untrained.predictor = init_params(
        {untrained.codec.input_dim(), cfg.hierarchy.hidden[0], static_cast<std::size_t>(alphabet)},
        cfg.hierarchy.activation, rng);

    const SurpriseRule rules[2] = {{SurpriseKind::argmax_mismatch, 0.0},
                                   {SurpriseKind::prob_threshold, cfg.hierarchy.rule.tau}};
    long checked = 0, exact = 0;
    for (const RnnParams& predictor : {untrained.predictor, h.levels[0].predictor}) {
        for (const SurpriseRule& rule : rules) {
            Level lvl;
            lvl.codec = untrained.codec;
            lvl.predictor = predictor;
            lvl.rule = rule;
            for (std::size_t i = 0; i < n; ++i) {
                const ReducedSequence r = reduce(lvl, corpus.sequences[i]);
                ++checked;
                if (reconstruct(lvl, r) == corpus.sequences[i]) ++exact;
            }
        }
    }
    const double dur = seconds_since(t0);
    CriterionRow row{2, "lossless reconstruction through the event stream", false, ""};
    row.pass = checked == exact && dur < 60.0;
    row.detail = std::to_string(exact) + "/" + std::to_string(checked) + " exact, " +
                 fmt_seconds(dur);
    return row;
}

}  // namespace detail

inline ReproResult cmd_repro(const ExperimentConfig& cfg, std::ostream& log,
                             std::ostream& table) {
    OutPaths paths(cfg.out);
    ReproResult result;

    const auto add = [&](CriterionRow row) {
        result.rows.push_back(row);
        result.all_pass = result.all_pass && row.pass;
    };

    // full pipeline, timed per stage
    const auto t_gen = std::chrono::steady_clock::now();
    cmd_gen(cfg, log);
    const auto t_pre = std::chrono::steady_clock::now();
    cmd_pretrain(cfg, log);
    const double pretrain_s = detail::seconds_since(t_pre);
    const auto t_cls = std::chrono::steady_clock::now();
    cmd_classify(cfg, log);
    const double classify_s = detail::seconds_since(t_cls);
    const auto t_dst = std::chrono::steady_clock::now();
    cmd_distill(cfg, log);
    const double distill_s = detail::seconds_since(t_dst);
    const auto t_dia = std::chrono::steady_clock::now();
    cmd_diagnose(cfg, log);
    const double diagnose_s = detail::seconds_since(t_dia);
    log << "repro: pipeline done in " << detail::fmt_seconds(detail::seconds_since(t_gen))
        << "\n";

    const LabeledCorpus corpus = load_corpus(paths.corpus());
    const LoadedHierarchy loaded = load_hierarchy(paths.hierarchy_dir());

    add(detail::check_gradients(cfg));
    add(detail::check_losslessness(cfg, loaded.hierarchy, corpus));

    {
        CriterionRow row{3, "compression of the long-lag corpus", false, ""};
        const double limit = 0.2 * static_cast<double>(cfg.task.length);
        if (loaded.stats.size() >= 2) {
            const double got = loaded.stats[1].mean_length;
            row.pass = got <= limit && pretrain_s < 600.0;
            row.detail = "mean reduced length " + format_double(got) + " (<= " +
                         format_double(limit) + "), " + detail::fmt_seconds(pretrain_s);
        } else {
            row.detail = "hierarchy too shallow to measure";
        }
        add(row);
    }

    {
        CriterionRow row{4, "classification vs parameter-matched baseline", false, ""};
        const json cj = load_json(paths.classify_json());
        const double hier = cj.at("hierarchy").at("median").get<double>();
        const double base = cj.at("baseline").at("median").get<double>();
        row.pass = hier >= 0.90 && base <= 0.60 && classify_s < 1800.0;
        row.detail = "hierarchy median " + format_double(hier) + " (>= 0.9), baseline median " +
                     format_double(base) + " (<= 0.6), " + detail::fmt_seconds(classify_s);
        add(row);
    }

    {
        CriterionRow row{5, "vanishing and exploding gradient regimes", false, ""};
        const json dj = load_json(paths.diagnose_json());
        std::optional<double> small_ratio;
        bool explode_all = false;
        long worst_first = -1;
        for (const json& cond : dj.at("conditions")) {
            if (cond.at("name") == "small") small_ratio = cond.at("mean_ratio").get<double>();
            if (cond.at("name") == "rec8x") {
                explode_all = cond.at("explosion_all").get<bool>();
                for (const json& fl : cond.at("first_explosion_lags"))
                    worst_first = std::max(worst_first, fl.get<long>());
            }
        }
        row.pass = small_ratio && *small_ratio < 1e-6 && explode_all && worst_first >= 0 &&
                   worst_first < 100 && diagnose_s < 120.0;
        row.detail = std::string("mean ratio ") +
                     (small_ratio ? detail::fmt_sci(*small_ratio) : "n/a") +
                     " (< 1e-06), explosion by lag " + std::to_string(worst_first) +
                     " (< 100), " + detail::fmt_seconds(diagnose_s);
        add(row);
    }

    {
        CriterionRow row{6, "distilled student imitates and classifies", false, ""};
        const json dj = load_json(paths.distill_json());
        const double mse = dj.at("imitation_mse").get<double>();
        if (dj.at("distilled_accuracy").is_null()) {
            row.detail = "no head reuse for this level pair";
        } else {
            const double drop = dj.at("accuracy_drop").get<double>();
            row.pass = mse < 0.1 && drop <= 0.05 && distill_s < 900.0;
            row.detail = "imitation mse " + detail::fmt_sci(mse) + " (< 0.1), accuracy drop " +
                         format_double(drop) + " (<= 0.05), " + detail::fmt_seconds(distill_s);
        }
        add(row);
    }

    {
        // determinism probe inside one invocation: regenerate the corpus and
        // re-run one gradient report; bytes must match what is on disk
        CriterionRow row{7, "byte-identical outputs under one seed", false, ""};
        const auto t0 = std::chrono::steady_clock::now();
        // only "out" may differ between the runs: it is excluded from the
        // config hash, so every byte of the artifacts must match
        ExperimentConfig probe = cfg;
        probe.out = (paths.root / "repro_check").string();
        OutPaths ppaths(probe.out);
        std::ostringstream sink;
        cmd_gen(probe, sink);
        bool same = read_text(ppaths.corpus()) == read_text(paths.corpus());
        if (!cfg.diagnose.scales.empty() && cfg.diagnose.n_seeds > 0) {
            cmd_diagnose(probe, sink);
            const std::string name = cfg.diagnose.scales[0].name;
            same = same && read_text(ppaths.gradient_csv(name, 0)) ==
                               read_text(paths.gradient_csv(name, 0));
        }
        std::filesystem::remove_all(ppaths.root);
        row.pass = same;
        row.detail = std::string(same ? "regenerated artifacts identical" : "byte mismatch") +
                     ", " + detail::fmt_seconds(detail::seconds_since(t0));
        add(row);
    }

    json rj;
    rj["meta"] = meta_json(cfg);
    json rows = json::array();
    for (const CriterionRow& row : result.rows)
        rows.push_back({{"id", row.id}, {"name", row.name}, {"pass", row.pass},
                        {"detail", row.detail}});
    rj["criteria"] = rows;
    rj["all_pass"] = result.all_pass;
    save_json(paths.repro_json(), rj);

    for (const CriterionRow& row : result.rows)
        table << "criterion " << row.id << "  " << (row.pass ? "PASS" : "FAIL") << "  "
              << row.name << ": " << row.detail << "\n";
    table << (result.all_pass ? "all criteria passed" : "some criteria FAILED") << "\n";
    return result;
}

}  // namespace hc
