#include <CLI11.hpp>
#include <iostream>

#include "neutrace/pipeline.hpp"

using namespace neutrace;

namespace {

int exit_code_for(const Error& e) {
    if (e.tag.rfind("config", 0) == 0) return 2;
    if (e.tag == "non-finite-grad" || e.tag == "non-finite-loss" || e.tag == "gradcheck-failed") return 4;
    return 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neutrace: split-error correction toolkit for over-segmented volumes"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::vector<std::string> overrides;
    long long seed = -1;
    bool deterministic = false;
    app.add_option("--config", config_path, "configuration file");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "master seed (overrides run.seed)");
    app.add_flag("--deterministic", deterministic, "single-threaded deterministic mode");
    app.add_option("--set", overrides, "override a config key, e.g. --set synth.neuron_count=8");

    auto* synth = app.add_subcommand("synth", "generate synthetic volumes with ground truth");
    auto* build_pairs = app.add_subcommand("build-pairs", "register skeletons and sample candidate pairs");
    auto* train_embed = app.add_subcommand("train-embed", "train the volumetric embedding network");
    auto* train_classifier = app.add_subcommand("train-classifier", "train a connectivity classifier");
    auto* eval_cmd = app.add_subcommand("eval", "score test pairs and write metric reports");
    auto* trace = app.add_subcommand("trace", "agglomerate predicted merges and report run-length change");
    auto* gradcheck = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
    int gc_instances = 50;
    long long gc_seed = 12345;
    gradcheck->add_option("--instances", gc_instances, "random instances per case");
    gradcheck->add_option("--gradcheck-seed", gc_seed, "seed for the gradient suite");
    auto* print_config = app.add_subcommand("print-config", "write the default config to stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // bad invocation is a config error
    }

    try {
        if (print_config->parsed()) {
            config::write_default_config(std::cout);
            return 0;
        }
        config::RunConfig cfg = config::resolve(config_path, overrides);
        if (seed >= 0) cfg.set("run.seed", std::to_string(seed));
        pipeline::apply_run_settings(cfg, deterministic);

        if (gradcheck->parsed()) {
            pipeline::run_gradcheck(gc_instances, uint64_t(gc_seed), std::cout);
            std::cout << "gradcheck: all cases passed\n";
            return 0;
        }
        if (synth->parsed()) pipeline::run_synth(cfg, out_dir);
        if (build_pairs->parsed()) pipeline::run_build_pairs(cfg, out_dir);
        if (train_embed->parsed()) pipeline::run_train_embed(cfg, out_dir);
        if (train_classifier->parsed()) pipeline::run_train_classifier(cfg, out_dir);
        if (eval_cmd->parsed()) pipeline::run_eval(cfg, out_dir);
        if (trace->parsed()) pipeline::run_trace(cfg, out_dir);
    } catch (const Error& e) {
        std::cerr << "error [" << e.tag << "]: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
