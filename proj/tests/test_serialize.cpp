#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <string>

#include "hc/serialize.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("hc_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

hc::RnnParams random_params(std::uint64_t seed) {
    hc::Rng rng(seed);
    return hc::init_params({5, 7, 4}, hc::Activation::sigmoid, rng);
}

}  // namespace

TEST_CASE("format_double round-trips doubles through shortest strings", "[serialize]") {
    CHECK(hc::format_double(0.5) == "0.5");
    CHECK(hc::format_double(0.0) == "0");
    CHECK(hc::format_double(-3.0) == "-3");
    hc::Rng rng(7);
    for (int i = 0; i < 500; ++i) {
        const double v = rng.uniform(-1e6, 1e6) * std::pow(10.0, (int)rng.uniform_int(20) - 10);
        const std::string s = hc::format_double(v);
        CHECK(std::stod(s) == v);
    }
}

TEST_CASE("json serialization preserves doubles exactly", "[serialize]") {
    hc::json j;
    j["values"] = hc::Vec{0.1, 1.0 / 3.0, 1e-300, 2.2250738585072014e-308, 1.7976931348623157e308};
    const hc::json back = hc::json::parse(j.dump());
    CHECK(back.at("values").get<hc::Vec>() == j.at("values").get<hc::Vec>());
}

TEST_CASE("parameter checkpoints round-trip bit-exactly", "[serialize]") {
    TempDir tmp;
    const hc::RnnParams p = random_params(11);
    hc::save_params(tmp.path / "p.json", p);
    const hc::RnnParams q = hc::load_params(tmp.path / "p.json");
    CHECK(p == q);

    // saving the loaded copy reproduces the file byte for byte
    hc::save_params(tmp.path / "q.json", q);
    CHECK(hc::read_text(tmp.path / "p.json") == hc::read_text(tmp.path / "q.json"));
}

TEST_CASE("loading a missing checkpoint names the file", "[serialize]") {
    CHECK_THROWS_AS(hc::load_params("/nonexistent/params.json"), hc::MissingArtifactError);
    CHECK_THROWS_WITH(hc::load_params("/nonexistent/params.json"),
                      Catch::Matchers::ContainsSubstring("/nonexistent/params.json"));
}

TEST_CASE("corrupt checkpoints are rejected", "[serialize]") {
    TempDir tmp;
    hc::write_text(tmp.path / "bad.json", "{not json");
    CHECK_THROWS_AS(hc::load_json(tmp.path / "bad.json"), hc::ConfigError);

    hc::json j = hc::params_to_json(random_params(12));
    j["w_in"] = hc::Vec{1.0};  // wrong length
    hc::save_json(tmp.path / "short.json", j);
    CHECK_THROWS_AS(hc::load_params(tmp.path / "short.json"), hc::ConfigError);

    hc::json v = hc::params_to_json(random_params(13));
    v["version"] = 999;
    hc::save_json(tmp.path / "ver.json", v);
    CHECK_THROWS_AS(hc::load_params(tmp.path / "ver.json"), hc::ConfigError);

    hc::json m = hc::params_to_json(random_params(14));
    m.erase("b_h");
    hc::save_json(tmp.path / "missing.json", m);
    CHECK_THROWS_AS(hc::load_params(tmp.path / "missing.json"), hc::ConfigError);
}

TEST_CASE("hierarchy checkpoints round-trip", "[serialize]") {
    TempDir tmp;
    hc::Hierarchy h;
    for (int k = 0; k < 2; ++k) {
        hc::Level lvl;
        lvl.level_index = k;
        lvl.codec = hc::Codec{4, 64};
        lvl.rule = {hc::SurpriseKind::prob_threshold, 0.4};
        hc::Rng rng(20 + static_cast<std::uint64_t>(k));
        lvl.predictor = hc::init_params({5, 6, 4}, hc::Activation::tanh, rng);
        h.levels.push_back(std::move(lvl));
    }
    std::vector<hc::LevelStats> stats = {{30.0, 1.0, 0.25}, {7.5, 0.25, 0.4}};
    hc::json meta;
    meta["config_hash"] = "deadbeef";
    hc::save_hierarchy(tmp.path / "ckpt", h, stats, meta);

    hc::LoadedHierarchy loaded = hc::load_hierarchy(tmp.path / "ckpt");
    REQUIRE(loaded.hierarchy.depth() == 2);
    for (int k = 0; k < 2; ++k) {
        CHECK(loaded.hierarchy.levels[k].predictor == h.levels[k].predictor);
        CHECK(loaded.hierarchy.levels[k].rule.kind == hc::SurpriseKind::prob_threshold);
        CHECK(loaded.hierarchy.levels[k].rule.tau == 0.4);
        CHECK(loaded.hierarchy.levels[k].codec.gap_cap == 64);
        CHECK(loaded.hierarchy.levels[k].level_index == k);
    }
    REQUIRE(loaded.stats.size() == 2);
    CHECK(loaded.stats[1].ratio == 0.25);
    CHECK(loaded.meta.at("config_hash") == "deadbeef");

    CHECK_THROWS_AS(hc::load_hierarchy(tmp.path / "nowhere"), hc::MissingArtifactError);
}
