#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hc/chunker.hpp"
#include "hc/errors.hpp"
#include "hc/rnn.hpp"

namespace hc {

using json = nlohmann::ordered_json;

constexpr int kCheckpointVersion = 1;

// Shortest decimal string that parses back to the same double; keeps CSV
// output byte-stable across runs.
inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("missing file: " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open for writing: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ConfigError("write failed: " + path.string());
}

inline json load_json(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("invalid JSON in " + path.string());
    return j;
}

inline void save_json(const std::filesystem::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

inline json params_to_json(const RnnParams& p) {
    json j;
    j["version"] = kCheckpointVersion;
    const RnnDims d = p.dims();
    j["dims"] = {{"input", d.input}, {"hidden", d.hidden}, {"output", d.output}};
    j["activation"] = activation_name(p.act);
    j["w_in"] = p.w_in.data;
    j["w_rec"] = p.w_rec.data;
    j["b_h"] = p.b_h;
    j["w_out"] = p.w_out.data;
    j["b_o"] = p.b_o;
    return j;
}

inline RnnParams params_from_json(const json& j) {
    try {
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw ConfigError("unsupported checkpoint version");
        RnnDims d{j.at("dims").at("input").get<std::size_t>(),
                  j.at("dims").at("hidden").get<std::size_t>(),
                  j.at("dims").at("output").get<std::size_t>()};
        RnnParams p;
        p.act = activation_from_name(j.at("activation").get<std::string>());
        p.w_in = Matrix(d.hidden, d.input);
        p.w_in.data = j.at("w_in").get<Vec>();
        p.w_rec = Matrix(d.hidden, d.hidden);
        p.w_rec.data = j.at("w_rec").get<Vec>();
        p.b_h = j.at("b_h").get<Vec>();
        p.w_out = Matrix(d.output, d.hidden);
        p.w_out.data = j.at("w_out").get<Vec>();
        p.b_o = j.at("b_o").get<Vec>();
        if (p.w_in.data.size() != d.hidden * d.input ||
            p.w_rec.data.size() != d.hidden * d.hidden || p.b_h.size() != d.hidden ||
            p.w_out.data.size() != d.output * d.hidden || p.b_o.size() != d.output)
            throw ConfigError("checkpoint: array lengths do not match dims");
        if (!p.finite()) throw ConfigError("checkpoint: non-finite weights");
        return p;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("checkpoint: ") + e.what());
    }
}

inline void save_params(const std::filesystem::path& path, const RnnParams& p) {
    save_json(path, params_to_json(p));
}

inline RnnParams load_params(const std::filesystem::path& path) {
    return params_from_json(load_json(path));
}

inline json level_stats_to_json(const std::vector<LevelStats>& stats) {
    json arr = json::array();
    for (const LevelStats& s : stats)
        arr.push_back({{"mean_length", s.mean_length},
                       {"ratio", s.ratio},
                       {"event_rate", s.event_rate}});
    return arr;
}

inline std::vector<LevelStats> level_stats_from_json(const json& arr) {
    std::vector<LevelStats> stats;
    for (const json& s : arr)
        stats.push_back({s.at("mean_length").get<double>(), s.at("ratio").get<double>(),
                         s.at("event_rate").get<double>()});
    return stats;
}

// Hierarchy checkpoint: one parameter file per level next to a manifest that
// carries everything needed to rebuild the Level wrappers.
inline void save_hierarchy(const std::filesystem::path& dir, const Hierarchy& h,
                           const std::vector<LevelStats>& stats, const json& extra = {}) {
    if (h.levels.empty()) throw ConfigError("save_hierarchy: empty hierarchy");
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["version"] = kCheckpointVersion;
    manifest["depth"] = h.depth();
    manifest["surprise_rule"] = surprise_kind_name(h.levels[0].rule.kind);
    manifest["tau"] = h.levels[0].rule.tau;
    manifest["gap_cap"] = h.levels[0].codec.gap_cap;
    manifest["alphabet_size"] = h.levels[0].codec.alphabet_size;
    manifest["fully_compressed"] = h.fully_compressed;
    manifest["compressed_at"] = h.compressed_at;
    manifest["levels"] = json::array();
    for (const Level& lvl : h.levels) {
        const std::string file = "level_" + std::to_string(lvl.level_index) + ".json";
        json pj = params_to_json(lvl.predictor);
        if (!extra.is_null()) pj["meta"] = extra;  // same provenance triple as the manifest
        save_json(dir / file, pj);
        manifest["levels"].push_back(
            {{"index", lvl.level_index}, {"file", file}, {"hidden", lvl.predictor.w_rec.rows}});
    }
    manifest["stats"] = level_stats_to_json(stats);
    if (!extra.is_null()) manifest["meta"] = extra;
    save_json(dir / "manifest.json", manifest);
}

struct LoadedHierarchy {
    Hierarchy hierarchy;
    std::vector<LevelStats> stats;
    json meta;
};

inline LoadedHierarchy load_hierarchy(const std::filesystem::path& dir) {
    const json manifest = load_json(dir / "manifest.json");
    try {
        LoadedHierarchy out;
        SurpriseRule rule{surprise_kind_from_name(manifest.at("surprise_rule").get<std::string>()),
                          manifest.at("tau").get<double>()};
        Codec codec{manifest.at("alphabet_size").get<int>(), manifest.at("gap_cap").get<long>()};
        out.hierarchy.fully_compressed = manifest.at("fully_compressed").get<bool>();
        out.hierarchy.compressed_at = manifest.at("compressed_at").get<int>();
        for (const json& lj : manifest.at("levels")) {
            Level lvl;
            lvl.level_index = lj.at("index").get<int>();
            lvl.rule = rule;
            lvl.codec = codec;
            lvl.predictor = load_params(dir / lj.at("file").get<std::string>());
            validate(lvl);
            out.hierarchy.levels.push_back(std::move(lvl));
        }
        if (out.hierarchy.depth() != manifest.at("depth").get<int>())
            throw ConfigError("hierarchy manifest: depth does not match level count");
        out.stats = level_stats_from_json(manifest.at("stats"));
        if (manifest.contains("meta")) out.meta = manifest.at("meta");
        return out;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("hierarchy manifest: ") + e.what());
    }
}

}  // namespace hc
