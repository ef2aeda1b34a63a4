// Command-line entry point: extract, build-bank, recognize, evaluate.

#include <CLI11.hpp>

#include <iostream>

#include "tsr/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Fine-grained traffic sign recognition via multistep LMM prompting"};
    app.require_subcommand(1);

    std::string config_path;
    bool dry_run = false;
    int jobs = 0;
    app.add_option("-c,--config", config_path, "Run config JSON file")->required();
    app.add_flag("--dry-run", dry_run, "Print planned LMM call count, make none");
    app.add_option("-j,--jobs", jobs, "Worker threads (overrides config)");

    auto* extract = app.add_subcommand("extract", "Extract sign crops from road images + masks");
    bool keep_going = false;
    extract->add_flag("--keep-going", keep_going, "Continue past per-image failures");

    auto* build_bank = app.add_subcommand("build-bank", "Generate the knowledge memory bank");
    bool force = false;
    build_bank->add_flag("--force", force, "Regenerate existing bank entries");

    auto* recognize = app.add_subcommand("recognize", "Recognize a single manifest entry");
    std::string image_id;
    recognize->add_option("--image-id", image_id, "Manifest image_id to recognize")->required();

    auto* evaluate = app.add_subcommand("evaluate", "Run trials or an ablation grid");
    std::string grid;
    int trials = 0;
    evaluate->add_option("--grid", grid,
                         "Ablation grid: strategies|hypothesis|order (aliases table3|table4|table5)");
    evaluate->add_option("--trials", trials, "Trial count (overrides config)");

    CLI11_PARSE(app, argc, argv);

    try {
        tsr::RunConfig cfg = tsr::load_run_config(config_path);
        tsr::cli::CommandOptions opts;
        opts.dry_run = dry_run;
        opts.keep_going = keep_going;
        opts.force = force;
        opts.jobs = jobs;
        opts.trials = trials;
        opts.grid = grid;
        opts.image_id = image_id;

        if (extract->parsed()) return tsr::cli::cmd_extract(cfg, opts);
        if (build_bank->parsed()) return tsr::cli::cmd_build_bank(cfg, opts);
        if (recognize->parsed()) return tsr::cli::cmd_recognize(cfg, opts);
        if (evaluate->parsed()) return tsr::cli::cmd_evaluate(cfg, opts);
        return tsr::cli::kExitConfigError;
    } catch (const tsr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return tsr::cli::is_config_error(e.code()) ? tsr::cli::kExitConfigError
                                                   : tsr::cli::kExitWorkFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return tsr::cli::kExitWorkFailure;
    }
}
