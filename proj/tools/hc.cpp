#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hc/commands.hpp"

namespace {

void emit_error(const char* type, const std::string& message, long epoch = -1) {
    hc::json j;
    j["error"]["type"] = type;
    j["error"]["message"] = message;
    if (epoch >= 0) j["error"]["epoch"] = epoch;
    std::cout << j.dump(2) << std::endl;
}

int run(const std::string& command, const std::string& config_path,
        std::optional<std::uint64_t> seed, std::optional<std::string> out) {
    const hc::ExperimentConfig cfg = hc::load_config(config_path, seed, out);
    hc::OutputLock lock(cfg.out);

    if (command == "gen") {
        hc::cmd_gen(cfg, std::cerr);
    } else if (command == "pretrain") {
        hc::cmd_pretrain(cfg, std::cerr);
    } else if (command == "distill") {
        hc::cmd_distill(cfg, std::cerr);
    } else if (command == "classify") {
        hc::cmd_classify(cfg, std::cerr);
    } else if (command == "diagnose") {
        hc::cmd_diagnose(cfg, std::cerr);
    } else if (command == "repro") {
        const hc::ReproResult res = hc::cmd_repro(cfg, std::cerr, std::cout);
        if (!res.all_pass) {
            emit_error("acceptance", "one or more criteria failed; see repro.json");
            return 1;
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical sequence compression experiments"};
    app.set_version_flag("--version", std::string(hc::kToolVersion));
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;

    const std::pair<const char*, const char*> commands[] = {
        {"gen", "generate the task corpus"},
        {"pretrain", "build and checkpoint the predictor stack"},
        {"distill", "collapse a level pair into one student net"},
        {"classify", "train the classifier and the parameter-matched baseline"},
        {"diagnose", "probe gradient norms across time lags"},
        {"repro", "run the full pipeline and evaluate the acceptance table"},
    };
    for (const auto& [name, desc] : commands) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--seed", seed, "override the root seed");
        sub->add_option("--out", out, "override the output directory");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        return run(command, config_path, seed, out);
    } catch (const hc::ConfigError& e) {
        emit_error("config", e.what());
        return 2;
    } catch (const hc::DivergenceError& e) {
        emit_error("divergence", e.what(), e.epoch);
        return 3;
    } catch (const hc::MissingArtifactError& e) {
        emit_error("missing_artifact", e.what());
        return 4;
    } catch (const std::exception& e) {
        emit_error("internal", e.what());
        return 1;
    }
}
