// tvgcn: synthesis, clustering, two-stage training, evaluation and gradient
// checks for the tactile view-graph network.

#include "tvgcn/config.hpp"
#include "tvgcn/gradcheck.hpp"
#include "tvgcn/train.hpp"

#ifdef TVGCN_WITH_CONVERTER
#include "convert.hpp"
#endif

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <memory>

namespace {

using namespace tvgcn;

struct CommandOptions {
    std::string config_path;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, CommandOptions& opts) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("--config", opts.config_path, "JSON file with RunConfig fields");
    for (const auto& key : config_keys()) opts.options[key] = cmd->add_option("--" + key, opts.values[key]);
    return cmd;
}

RunConfig resolve(const CommandOptions& opts) {
    RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_config(opts.config_path);
    for (const auto& key : config_keys())
        if (opts.options.at(key)->count() > 0) apply_override(cfg, key, opts.values.at(key));
    cfg.validate();
    return cfg;
}

void print_train_result(const std::string& stage, const TrainResult& r) {
    std::cout << stage << ": checkpoint " << r.checkpoint.string() << ", final train accuracy "
              << r.final_train_accuracy;
    if (r.final_test_accuracy >= 0) std::cout << ", test accuracy " << r.final_test_accuracy;
    std::cout << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tactile view-graph network command-line harness"};
    app.require_subcommand(1);

    std::map<std::string, std::unique_ptr<CommandOptions>> commands;
    const auto make = [&](const std::string& name, const std::string& help) {
        commands[name] = std::make_unique<CommandOptions>();
        return add_command(app, name, help, *commands[name]);
    };
    make("synth", "write synthetic train/test splits to --out");
    make("cluster", "cluster each class of the training split into one group per view");
    make("train-backbone", "stage 1: single-frame backbone pretraining");
    make("train", "stage 2: joint training on clustered view sets");
    make("eval", "classify test view sets and write a confusion matrix");
    make("gradcheck", "finite-difference gradient check on the tiny preset");
#ifdef TVGCN_WITH_CONVERTER
    std::string raw_dir;
    auto* convert = make("convert", "convert a raw STAG export (see tools/stag_to_raw.py) to dataset splits");
    convert->add_option("--raw", raw_dir, "directory written by stag_to_raw.py")->required();
#endif

    CLI11_PARSE(app, argc, argv);

    std::string stage = "startup";
    try {
        for (auto& [name, opts] : commands) {
            if (app.got_subcommand(name) == false) continue;
            stage = name;
            const RunConfig cfg = resolve(*opts);
            if (name == "synth") {
                run_synth(cfg, &std::cout);
            } else if (name == "cluster") {
                run_cluster(cfg, &std::cout);
            } else if (name == "train-backbone") {
                print_train_result(name, run_train_backbone(cfg, &std::cout));
            } else if (name == "train") {
                print_train_result(name, run_train(cfg, &std::cout));
            } else if (name == "eval") {
                const auto r = run_eval(cfg, &std::cout);
                std::cout << "eval: accuracy " << r.accuracy << " over " << r.trial_accuracy.size()
                          << " trial(s); confusion matrix " << cfg.confusion_path().string() << '\n';
            } else if (name == "gradcheck") {
                GradcheckOptions g;
                g.seed = cfg.seed;
                const auto report = run_gradcheck(g);
                print_report(std::cout, report);
                if (!report.pass()) {
                    std::cerr << "error: gradcheck: failing";
                    for (const auto& f : report.failures()) std::cerr << ' ' << f << ';';
                    std::cerr << '\n';
                    return 1;
                }
            }
#ifdef TVGCN_WITH_CONVERTER
            else if (name == "convert") {
                convert_raw_stag(raw_dir, cfg.out, &std::cout);
            }
#endif
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << stage << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}
