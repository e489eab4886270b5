#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "advsr/binary_io.hpp"
#include "advsr/experiment.hpp"

namespace fs = std::filesystem;
using namespace advsr;

int main(int argc, char** argv)
{
    advsr::retain_freed_memory();
    CLI::App app{"Adversarial super-resolution experiments"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", exp::kToolVersion);

    std::string config;
    std::string out;
    std::string phase;
    std::string checkpoint;
    std::string name;
    std::string r_list;
    std::vector<std::string> runs;
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress output");

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "Experiment config (JSON)")->required();
        sub->add_option("--out", out, "Run directory, overriding eval.run_dir");
    };

    auto* gen = app.add_subcommand("gen-data", "Generate the train/val/test splits");
    add_common(gen);

    auto* train = app.add_subcommand("train", "Train one phase");
    add_common(train);
    train->add_option("--phase", phase, "classifier, sr-clean or sr-advsr (default: sr.mode)")
        ->check(CLI::IsMember({"classifier", "sr-clean", "sr-advsr"}));

    auto* ev = app.add_subcommand("eval", "Evaluate SR checkpoints on the test split");
    add_common(ev);
    ev->add_option("--checkpoint", checkpoint, "SR weight file, or \"bicubic\" (default: every trained SR phase)");
    ev->add_option("--name", name, "Name of the evaluation directory");

    auto* sweep = app.add_subcommand("sweep-r", "Train and evaluate one AdvSR model per r");
    add_common(sweep);
    auto* r_opt = sweep->add_option("--r-list", r_list, "Comma-separated r values (default: sr.sweep_r)");

    auto* report = app.add_subcommand("report", "Combine evaluation reports of run directories");
    report->add_option("runs", runs, "Run directories")->required();
    report->add_option("--out", out, "Write DIR/report.md instead of printing");

    CLI11_PARSE(app, argc, argv);

    try {
        if (report->parsed()) {
            std::vector<fs::path> dirs(runs.begin(), runs.end());
            const std::string md = exp::cmd_report(dirs);
            if (out.empty()) {
                std::cout << md;
            } else {
                fs::create_directories(out);
                io::write_text_atomic(fs::path(out) / "report.md", md);
            }
            return 0;
        }

        exp::Logger log;
        if (!quiet) log = [](const std::string& msg) { std::cerr << msg << std::endl; };
        std::optional<fs::path> out_dir;
        if (!out.empty()) out_dir = fs::path(out);
        const auto ctx = exp::make_context(config, out_dir, log);

        if (gen->parsed()) {
            exp::cmd_gen_data(ctx);
        } else if (train->parsed()) {
            const auto mode = phase.empty() ? ctx.config.sr_mode : train::parse_mode(phase);
            exp::cmd_train(ctx, mode);
        } else if (ev->parsed()) {
            std::optional<fs::path> ckpt;
            if (!checkpoint.empty()) ckpt = fs::path(checkpoint);
            std::optional<std::string> n;
            if (!name.empty()) n = name;
            const auto reports = exp::cmd_eval(ctx, ckpt, n);
            std::cout << eval::markdown_table(reports);
        } else if (sweep->parsed()) {
            const auto rs = r_opt->count() == 0 ? ctx.config.sweep_r : exp::parse_r_list(r_list);
            const auto result = exp::cmd_sweep_r(ctx, rs);
            std::cout << exp::sweep_csv(result);
        }
    } catch (const std::exception& e) {
        std::cerr << "advsr: error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
