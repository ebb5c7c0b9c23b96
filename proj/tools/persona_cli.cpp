#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "persona/config.hpp"
#include "persona/errors.hpp"
#include "persona/pipeline.hpp"

using namespace persona;

namespace {

// Exit codes: 0 success, 1 runtime failure, 2 bad configuration or arguments, 3 missing prerequisite.
constexpr int exit_runtime = 1;
constexpr int exit_usage = 2;
constexpr int exit_dependency = 3;

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Persona retrieval and response generation pipeline"};
    app.require_subcommand(1);

    std::string config_path = "persona.conf";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    pipeline::StageOptions opts;
    std::string strategy;

    app.add_option("--config", config_path, "Pipeline config file (key = value lines)")->capture_default_str();
    app.add_option("--seed", seed, "Override the config seed");
    app.add_option("--out", out, "Override paths.out, the artifact root");
    app.add_flag("--force", opts.force, "Evaluate artifacts produced under a different config");

    app.add_subcommand("build-dataset", "Split the corpus and build the persona-removed test set and collection");
    app.add_subcommand("train-scorer", "Train the query-persona relevance classifier");
    app.add_subcommand("train-generator", "Train the generator with the persona scorer");
    auto* retrieve = app.add_subcommand("retrieve", "Rank collection personas for every test query");
    retrieve->add_option("--strategy", strategy, "Ranking strategy")
        ->check(CLI::IsMember({"bm25", "classify_sp", "nli_hr", "nli_wc"}));
    auto* generate = app.add_subcommand("generate", "Generate test responses from the latest checkpoint");
    generate->add_flag("--with-prm", opts.with_prm, "Extend each profile with the retrieved persona");
    app.add_subcommand("evaluate", "Score the latest predictions");
    app.add_subcommand("pipeline", "Run every stage in order");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : exit_usage;
    }

    const auto stage_name = app.get_subcommands().front()->get_name();
    try {
        auto cfg = config::load_config(config_path);
        if (seed) {
            cfg.seed = *seed;
        }
        if (out) {
            cfg.out = *out;
        }
        if (!strategy.empty()) {
            opts.strategy = prm::parse_strategy(strategy);
        }
        pipeline::Pipeline p(cfg);
        auto dir = p.run(pipeline::parse_stage(stage_name), opts);
        std::cout << dir.string() << '\n';
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const DependencyError& e) {
        std::cerr << "missing prerequisite: " << e.what() << '\n';
        return exit_dependency;
    } catch (const std::exception& e) {
        std::cerr << stage_name << " failed: " << e.what() << '\n';
        return exit_runtime;
    }
}
