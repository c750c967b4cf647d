#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "echoflow/commands.hpp"
#include "echoflow/version.hpp"

namespace {

struct CommandArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::string seed;
    std::string strategy;
};

echoflow::RunConfig build_config(const CommandArgs& args) {
    echoflow::RunConfig cfg;
    if (!args.config_path.empty()) cfg = echoflow::RunConfig::from_file(args.config_path);
    // flags win over the file
    for (const auto& kv : args.overrides) cfg.set_assignment(kv);
    if (!args.out_dir.empty()) cfg.set("out_dir", args.out_dir);
    if (!args.seed.empty()) cfg.set("seed", args.seed);
    if (!args.strategy.empty()) cfg.set("strategy", args.strategy);
    if (!cfg.has("seed"))
        throw echoflow::ConfigError("seed is required (set seed = ... or pass --seed)");
    return cfg;
}

void add_common(CLI::App* cmd, CommandArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key = value config file");
    cmd->add_option("--set", args.overrides, "override a config key (key=value), repeatable");
    cmd->add_option("--out-dir", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "run seed (required here or in the config)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"echoflow: flow representations, binning optimization, early classification"};
    app.set_version_flag("--version", ECHOFLOW_VERSION);
    app.require_subcommand(1);

    std::map<std::string, std::function<int(const echoflow::RunConfig&)>> handlers = {
        {"synth", echoflow::cmd_synth},     {"ingest", echoflow::cmd_ingest},
        {"optimize", echoflow::cmd_optimize}, {"train", echoflow::cmd_train},
        {"ec", echoflow::cmd_ec},           {"explain", echoflow::cmd_explain},
        {"bench", echoflow::cmd_bench}};
    std::map<std::string, std::string> descriptions = {
        {"synth", "generate a synthetic labeled packet CSV"},
        {"ingest", "parse, assemble, filter and balance a packet CSV into a dataset"},
        {"optimize", "select bin boundaries via nested cross-validation"},
        {"train", "train and evaluate a softmax classifier"},
        {"ec", "train and simulate the early-classification cascade"},
        {"explain", "export per-class histograms next to chosen boundaries"},
        {"bench", "report throughput and memory estimates"}};

    std::map<std::string, CommandArgs> args;
    for (auto& [name, fn] : handlers) {
        auto* sub = app.add_subcommand(name, descriptions[name]);
        auto& a = args[name];
        add_common(sub, a);
        if (name == "optimize")
            sub->add_option("--strategy", a.strategy, "uniform | fs | stat | ho | greedy");
    }

    CLI11_PARSE(app, argc, argv);

    auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    try {
        auto cfg = build_config(args[name]);
        return handlers[name](cfg);
    } catch (const echoflow::ConfigError& e) {
        std::cerr << "echoflow " << name << ": " << e.what() << "\n\n"
                  << app.help() << std::endl;
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "echoflow " << name << ": invalid argument: " << e.what() << "\n\n"
                  << sub->help() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "echoflow " << name << ": " << e.what() << std::endl;
        return 1;
    }
}
