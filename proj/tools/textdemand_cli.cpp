#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "textdemand/errors.hpp"
#include "textdemand/io.hpp"
#include "textdemand/pipeline.hpp"

namespace fs = std::filesystem;
using namespace textdemand;

namespace {

enum Exit { kOk = 0, kValidation = 1, kStageFailure = 2, kStale = 3 };

struct Options {
    std::string config_path;
    std::string mention_mode;
};

std::string output_override() {
    const char* env = std::getenv("TEXTDEMAND_OUTPUT");
    return env ? env : "";
}

int print_diagnostics(const std::vector<Diagnostic>& diags) {
    for (const auto& d : diags) std::cerr << d.code << ": " << d.message << "\n";
    return diags.empty() ? kOk : kValidation;
}

int run(const std::string& subcommand, const Options& opt) {
    std::string text;
    try {
        text = read_file(opt.config_path);
    } catch (const Error& e) {
        std::cerr << "E_MISSING_PATH: " << e.what() << "\n";
        return kValidation;
    }
    const auto base_dir = fs::absolute(opt.config_path).parent_path().string();
    // Stages check the config without opening other stages' artifacts.
    const auto diags = validate_config(text, base_dir, output_override(), subcommand == "validate");
    if (subcommand == "validate") {
        const int code = print_diagnostics(diags);
        if (code == kOk) std::cout << opt.config_path << ": ok\n";
        return code;
    }
    if (!diags.empty()) return print_diagnostics(diags);

    auto config = *parse_config(text, base_dir, output_override()).config;
    if (!opt.mention_mode.empty()) {
        try {
            config.mention_mode = mention_mode_from_string(opt.mention_mode);
        } catch (const InvalidInput& e) {
            std::cerr << "E_BAD_VALUE: --mention-mode: " << e.what() << "\n";
            return kValidation;
        }
    }
    const auto stage = *stage_from_string(subcommand);
    try {
        OutputLock lock(config.resolve(config.output_dir));
        const auto outcome = run_stage(config, stage);
        for (auto s : outcome.auto_ran) std::cout << to_string(s) << ": ran on demand\n";
        std::cout << outcome.message << "\n";
        if (stage == Stage::report && outcome.ran) {
            std::cout << read_file((fs::path(config.stage_dir(Stage::report)) / "report.txt").string());
        }
        return kOk;
    } catch (const StaleDependency& e) {
        std::cerr << "stale dependency: " << e.what() << "\n";
        return kStale;
    } catch (const std::exception& e) {
        std::cerr << subcommand << " failed: " << e.what() << "\n";
        return kStageFailure;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Text sentiment and demand pipeline"};
    app.require_subcommand(1);
    Options opt;
    std::string chosen;

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"validate", "check the config and report diagnostics"},
        {"synth", "generate a synthetic market from the synth section"},
        {"prep", "tokenize reviews, posts and listing text; build vocabularies"},
        {"fit-sentiment", "fit the review sentiment model"},
        {"score", "score reviews and forum posts"},
        {"mentions", "attribute forum posts to vendors"},
        {"panel", "assemble the item-week panel"},
        {"pcs", "principal components of listing text"},
        {"regress", "fit the configured regressions"},
        {"report", "render the regression table"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", opt.config_path, "pipeline config (JSON)")->required();
        if (name != "validate") {
            sub->add_option("--mention-mode", opt.mention_mode, "override mentions.mode")
                ->check(CLI::IsMember({"exclusive", "duplicate"}));
        }
        sub->callback([&chosen, n = name] { chosen = n; });
    }
    app.footer("Environment: TEXTDEMAND_OUTPUT overrides output_dir.\n"
               "Exit codes: 0 ok, 1 invalid config, 2 stage failure, 3 stale dependency.");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }
    return run(chosen, opt);
}
