#pragma once

#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "hc/chunker.hpp"
#include "hc/distill.hpp"
#include "hc/errors.hpp"
#include "hc/rng.hpp"
#include "hc/serialize.hpp"
#include "hc/supervised.hpp"
#include "hc/taskgen.hpp"
#include "hc/version.hpp"

namespace hc {

// One probed weight regime for the gradient diagnostics; the ranges are
// absolute uniform bounds, not fan-in scaled.
struct DiagnoseScale {
    std::string name;
    double in = 0.1;
    double rec = 0.1;
    double out = 0.1;
};

struct DiagnoseConfig {
    long seq_len = 200;
    std::size_t hidden = 64;
    std::size_t n_samples = 10;
    std::size_t n_seeds = 10;
    std::vector<long> probe_lags = {1, 5, 10, 25, 50, 100};
    std::vector<DiagnoseScale> scales = {{"small", 0.1, 0.1, 0.1}, {"rec8x", 0.1, 0.8, 0.1}};
    double explosion_cap = 1e8;
    Activation activation = Activation::tanh;
};

struct ClassifySection {
    ClassifyConfig train;
    BaselineConfig baseline;
    std::size_t n_seeds = 5;
};

struct DistillSection {
    long epochs = 150;
    double lr = 0.05;
    std::optional<double> clip = 1.0;
    double lambda = 1.0;
    int lower_level = -1;  // -1: one below the top
};

// The whole experiment in one document. The corpus seed is not a field: all
// randomness derives from the root seed by component name, so one number
// reproduces the full pipeline.
struct ExperimentConfig {
    TaskSpec task;
    HierarchyConfig hierarchy;
    ClassifySection classify;
    DistillSection distill;
    DiagnoseConfig diagnose;
    std::uint64_t seed = 1;
    std::string out = "runs/out";
};

namespace detail {

inline void require_keys(const json& j, const std::string& where,
                         std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

inline void read_clip(const json& j, const char* key, std::optional<double>& into) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null())
        into.reset();
    else
        into = j.at(key).get<double>();
}

}  // namespace detail

inline TaskSpec task_from_json(const json& j) {
    detail::require_keys(j, "task", {"kind", "length", "alphabet_size", "n_classes",
                                     "noise_rate", "n_sequences", "cyclic_period"});
    TaskSpec t;
    if (j.contains("kind")) t.kind = task_kind_from_name(j.at("kind").get<std::string>());
    detail::read_field(j, "length", t.length);
    detail::read_field(j, "alphabet_size", t.alphabet_size);
    detail::read_field(j, "n_classes", t.n_classes);
    detail::read_field(j, "noise_rate", t.noise_rate);
    detail::read_field(j, "n_sequences", t.n_sequences);
    detail::read_field(j, "cyclic_period", t.cyclic_period);
    return t;
}

inline json task_to_json(const TaskSpec& t) {
    json j;
    j["kind"] = task_kind_name(t.kind);
    j["length"] = t.length;
    j["alphabet_size"] = t.alphabet_size;
    j["n_classes"] = t.n_classes;
    j["noise_rate"] = t.noise_rate;
    j["n_sequences"] = t.n_sequences;
    j["cyclic_period"] = t.cyclic_period;
    return j;
}

inline ExperimentConfig config_from_json(const json& j) {
    detail::require_keys(j, "config", {"task", "hierarchy", "classify", "distill", "diagnose",
                                       "seed", "out"});
    ExperimentConfig c;
    try {
        if (j.contains("task")) c.task = task_from_json(j.at("task"));

        if (j.contains("hierarchy")) {
            const json& h = j.at("hierarchy");
            detail::require_keys(h, "hierarchy",
                                 {"depth", "hidden", "surprise_rule", "tau", "gap_cap",
                                  "activation", "pretrain"});
            detail::read_field(h, "depth", c.hierarchy.depth);
            detail::read_field(h, "hidden", c.hierarchy.hidden);
            if (h.contains("surprise_rule"))
                c.hierarchy.rule.kind =
                    surprise_kind_from_name(h.at("surprise_rule").get<std::string>());
            detail::read_field(h, "tau", c.hierarchy.rule.tau);
            detail::read_field(h, "gap_cap", c.hierarchy.gap_cap);
            if (h.contains("activation"))
                c.hierarchy.activation =
                    activation_from_name(h.at("activation").get<std::string>());
            if (h.contains("pretrain")) {
                const json& p = h.at("pretrain");
                detail::require_keys(p, "hierarchy.pretrain",
                                     {"epochs", "lr", "clip", "early_stop_window",
                                      "early_stop_delta", "eval_sample"});
                detail::read_field(p, "epochs", c.hierarchy.pretrain.epochs);
                detail::read_field(p, "lr", c.hierarchy.pretrain.lr);
                detail::read_clip(p, "clip", c.hierarchy.pretrain.clip);
                detail::read_field(p, "early_stop_window", c.hierarchy.pretrain.early_stop_window);
                detail::read_field(p, "early_stop_delta", c.hierarchy.pretrain.early_stop_delta);
                detail::read_field(p, "eval_sample", c.hierarchy.pretrain.eval_sample);
            }
        }

        if (j.contains("classify")) {
            const json& cl = j.at("classify");
            detail::require_keys(cl, "classify",
                                 {"epochs", "lr", "finetune_lr", "clip", "finetune_top",
                                  "test_fraction", "n_seeds", "baseline"});
            detail::read_field(cl, "epochs", c.classify.train.epochs);
            detail::read_field(cl, "lr", c.classify.train.lr);
            detail::read_field(cl, "finetune_lr", c.classify.train.finetune_lr);
            detail::read_clip(cl, "clip", c.classify.train.clip);
            detail::read_field(cl, "finetune_top", c.classify.train.finetune_top);
            detail::read_field(cl, "test_fraction", c.classify.train.test_fraction);
            detail::read_field(cl, "n_seeds", c.classify.n_seeds);
            if (cl.contains("baseline")) {
                const json& b = cl.at("baseline");
                detail::require_keys(b, "classify.baseline", {"hidden", "epochs", "lr", "clip"});
                detail::read_field(b, "hidden", c.classify.baseline.hidden);
                detail::read_field(b, "epochs", c.classify.baseline.epochs);
                detail::read_field(b, "lr", c.classify.baseline.lr);
                detail::read_clip(b, "clip", c.classify.baseline.clip);
            }
            c.classify.baseline.test_fraction = c.classify.train.test_fraction;
        }

        if (j.contains("distill")) {
            const json& d = j.at("distill");
            detail::require_keys(d, "distill", {"epochs", "lr", "clip", "lambda", "lower_level"});
            detail::read_field(d, "epochs", c.distill.epochs);
            detail::read_field(d, "lr", c.distill.lr);
            detail::read_clip(d, "clip", c.distill.clip);
            detail::read_field(d, "lambda", c.distill.lambda);
            detail::read_field(d, "lower_level", c.distill.lower_level);
        }

        if (j.contains("diagnose")) {
            const json& dg = j.at("diagnose");
            detail::require_keys(dg, "diagnose",
                                 {"seq_len", "hidden", "n_samples", "n_seeds", "probe_lags",
                                  "scales", "explosion_cap", "activation"});
            detail::read_field(dg, "seq_len", c.diagnose.seq_len);
            detail::read_field(dg, "hidden", c.diagnose.hidden);
            detail::read_field(dg, "n_samples", c.diagnose.n_samples);
            detail::read_field(dg, "n_seeds", c.diagnose.n_seeds);
            detail::read_field(dg, "probe_lags", c.diagnose.probe_lags);
            detail::read_field(dg, "explosion_cap", c.diagnose.explosion_cap);
            if (dg.contains("activation"))
                c.diagnose.activation =
                    activation_from_name(dg.at("activation").get<std::string>());
            if (dg.contains("scales")) {
                c.diagnose.scales.clear();
                for (const json& s : dg.at("scales")) {
                    detail::require_keys(s, "diagnose.scales[]", {"name", "in", "rec", "out"});
                    DiagnoseScale ds;
                    ds.name = s.at("name").get<std::string>();
                    detail::read_field(s, "in", ds.in);
                    detail::read_field(s, "rec", ds.rec);
                    detail::read_field(s, "out", ds.out);
                    c.diagnose.scales.push_back(ds);
                }
            }
        }

        detail::read_field(j, "seed", c.seed);
        detail::read_field(j, "out", c.out);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

inline json config_to_json(const ExperimentConfig& c) {
    json j;
    j["task"] = task_to_json(c.task);

    json h;
    h["depth"] = c.hierarchy.depth;
    h["hidden"] = c.hierarchy.hidden;
    h["surprise_rule"] = surprise_kind_name(c.hierarchy.rule.kind);
    h["tau"] = c.hierarchy.rule.tau;
    h["gap_cap"] = c.hierarchy.gap_cap;
    h["activation"] = activation_name(c.hierarchy.activation);
    json p;
    p["epochs"] = c.hierarchy.pretrain.epochs;
    p["lr"] = c.hierarchy.pretrain.lr;
    p["clip"] = c.hierarchy.pretrain.clip ? json(*c.hierarchy.pretrain.clip) : json(nullptr);
    p["early_stop_window"] = c.hierarchy.pretrain.early_stop_window;
    p["early_stop_delta"] = c.hierarchy.pretrain.early_stop_delta;
    p["eval_sample"] = c.hierarchy.pretrain.eval_sample;
    h["pretrain"] = p;
    j["hierarchy"] = h;

    json cl;
    cl["epochs"] = c.classify.train.epochs;
    cl["lr"] = c.classify.train.lr;
    cl["finetune_lr"] = c.classify.train.finetune_lr;
    cl["clip"] = c.classify.train.clip ? json(*c.classify.train.clip) : json(nullptr);
    cl["finetune_top"] = c.classify.train.finetune_top;
    cl["test_fraction"] = c.classify.train.test_fraction;
    cl["n_seeds"] = c.classify.n_seeds;
    json b;
    b["hidden"] = c.classify.baseline.hidden;
    b["epochs"] = c.classify.baseline.epochs;
    b["lr"] = c.classify.baseline.lr;
    b["clip"] = c.classify.baseline.clip ? json(*c.classify.baseline.clip) : json(nullptr);
    cl["baseline"] = b;
    j["classify"] = cl;

    json d;
    d["epochs"] = c.distill.epochs;
    d["lr"] = c.distill.lr;
    d["clip"] = c.distill.clip ? json(*c.distill.clip) : json(nullptr);
    d["lambda"] = c.distill.lambda;
    d["lower_level"] = c.distill.lower_level;
    j["distill"] = d;

    json dg;
    dg["seq_len"] = c.diagnose.seq_len;
    dg["hidden"] = c.diagnose.hidden;
    dg["n_samples"] = c.diagnose.n_samples;
    dg["n_seeds"] = c.diagnose.n_seeds;
    dg["probe_lags"] = c.diagnose.probe_lags;
    json scales = json::array();
    for (const DiagnoseScale& s : c.diagnose.scales)
        scales.push_back({{"name", s.name}, {"in", s.in}, {"rec", s.rec}, {"out", s.out}});
    dg["scales"] = scales;
    dg["explosion_cap"] = c.diagnose.explosion_cap;
    dg["activation"] = activation_name(c.diagnose.activation);
    j["diagnose"] = dg;

    j["seed"] = c.seed;
    j["out"] = c.out;
    return j;
}

// Identity of the experiment itself: everything except the root seed and the
// output location. Outputs carry the hash and the seed side by side.
inline std::string config_hash(const ExperimentConfig& c) {
    json j = config_to_json(c);
    j.erase("seed");
    j.erase("out");
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(j.dump())));
    return std::string(buf);
}

inline void validate_config(const ExperimentConfig& c) {
    TaskSpec probe = c.task;
    probe.seed = 0;
    validate(probe);
    if (c.hierarchy.depth < 1) throw ConfigError("config: hierarchy depth must be at least 1");
    if (c.hierarchy.hidden.size() < static_cast<std::size_t>(c.hierarchy.depth))
        throw ConfigError("config: hierarchy needs one hidden size per level");
    if (c.hierarchy.rule.kind == SurpriseKind::prob_threshold &&
        (c.hierarchy.rule.tau <= 0.0 || c.hierarchy.rule.tau > 1.0))
        throw ConfigError("config: tau must lie in (0, 1]");
    if (c.hierarchy.gap_cap < 1) throw ConfigError("config: gap_cap must be positive");
    if (c.classify.n_seeds < 1) throw ConfigError("config: classify.n_seeds must be positive");
    if (c.classify.train.test_fraction <= 0.0 || c.classify.train.test_fraction >= 1.0)
        throw ConfigError("config: test_fraction must lie in (0, 1)");
    if (c.distill.lambda < 0.0) throw ConfigError("config: lambda must be non-negative");
    if (c.distill.lower_level != -1 &&
        (c.distill.lower_level < 0 || c.distill.lower_level + 1 >= c.hierarchy.depth))
        throw ConfigError("config: distill.lower_level has no level above it");
    if (c.diagnose.scales.empty()) throw ConfigError("config: diagnose needs at least one scale");
    for (const DiagnoseScale& s : c.diagnose.scales)
        if (s.name.empty()) throw ConfigError("config: diagnose scale without a name");
    if (c.out.empty()) throw ConfigError("config: output directory is empty");
}

inline ExperimentConfig load_config(const std::string& path,
                                    std::optional<std::uint64_t> seed_flag,
                                    std::optional<std::string> out_flag) {
    json doc;
    try {
        doc = load_json(path);
    } catch (const MissingArtifactError& e) {
        // an unreadable config is the user's input, not a pipeline artifact
        throw ConfigError(std::string("config: ") + e.what());
    }
    ExperimentConfig c = config_from_json(doc);
    if (seed_flag) c.seed = *seed_flag;  // flag > config > default
    if (out_flag) c.out = *out_flag;
    validate_config(c);
    return c;
}

}  // namespace hc
