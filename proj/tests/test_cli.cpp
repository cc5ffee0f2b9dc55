#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "neutrace/pipeline.hpp"
#include "neutrace/registration.hpp"

using namespace neutrace;
namespace fs = std::filesystem;

#ifndef NEUTRACE_CLI_PATH
#define NEUTRACE_CLI_PATH "neutrace"
#endif

namespace {

int run_cli(const std::string& args) {
    std::string cmd = std::string(NEUTRACE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

config::RunConfig tiny_config(const std::string& seed) {
    config::RunConfig cfg = config::defaults();
    cfg.set("run.seed", seed);
    cfg.set("synth.train_volumes", "1");
    cfg.set("synth.test_volumes", "1");
    cfg.set("synth.neuron_count", "8");
    cfg.set("synth.bundle_fraction", "0.7");
    cfg.set("synth.cable_max_um", "3.5");
    cfg.set("synth.missing_sections", "0");
    cfg.set("synth.misalignments", "0");
    cfg.set("register.shift_sigma_nm", "0");
    cfg.set("register.min_block_positives", "0");
    return cfg;
}

}  // namespace

TEST_CASE("config: defaults, unknown keys, overrides, hash") {
    config::RunConfig cfg = config::defaults();
    CHECK(cfg.get_double("embed.lambda1") == 0.1);
    CHECK(cfg.get_double("embed.lambda2") == 1.0);
    CHECK(cfg.get_double("embed.delta_d") == 1.5);
    CHECK(cfg.get_double("embed.gamma") == 0.001);
    CHECK(cfg.get_int("embed.n_negatives") == 20);
    CHECK(cfg.get_int("embed.k") == 16);
    CHECK(cfg.get_int("classifier.points") == 2048);
    CHECK(cfg.get_double("classifier.pos_fraction") == 0.3);
    CHECK(cfg.get_double("trace.merge_threshold") == 0.98);

    CHECK_THROWS_WITH_AS(cfg.set("synth.bogus_key", "1"), doctest::Contains("unknown"), Error);
    CHECK_THROWS_AS(cfg.get_str("nope.nope"), Error);

    uint64_t h0 = cfg.hash();
    cfg.set("synth.neuron_count", "9");
    CHECK(cfg.hash() != h0);
    cfg.set("synth.neuron_count", "6");
    CHECK(cfg.hash() == config::defaults().hash());
}

TEST_CASE("config file parsing with sections") {
    std::string path = (fs::temp_directory_path() / "nt_cfg_test.cfg").string();
    {
        std::ofstream out(path);
        out << "# comment\n[synth]\nneuron_count = 11\n\n[embed]\nlambda1 = 0.25\n";
    }
    config::RunConfig cfg = config::load_file(path);
    CHECK(cfg.get_int("synth.neuron_count") == 11);
    CHECK(cfg.get_double("embed.lambda1") == 0.25);
    {
        std::ofstream out(path);
        out << "[synth]\nnot_a_key = 3\n";
    }
    CHECK_THROWS_WITH_AS(config::load_file(path), doctest::Contains("unknown"), Error);
    fs::remove(path);
}

TEST_CASE("cli exit codes: help 0, bad flag 2, unknown key 2, missing inputs 3") {
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("print-config") == 0);
    CHECK(run_cli("--bogus-flag synth") == 2);
    CHECK(run_cli("--set nope=1 synth --out /tmp/nt_cli_x") == 2);
    fs::remove_all("/tmp/nt_cli_empty");
    CHECK(run_cli("--out /tmp/nt_cli_empty build-pairs") == 3);
}

TEST_CASE("cli gradcheck subcommand passes") {
    CHECK(run_cli("gradcheck --instances 2") == 0);
}

TEST_CASE("pipeline: synth then build-pairs recovers the oracle under zero noise") {
    config::RunConfig cfg = tiny_config("31");
    std::string out = (fs::temp_directory_path() / "nt_cli_pipe").string();
    fs::remove_all(out);
    pipeline::run_synth(cfg, out);
    pipeline::run_build_pairs(cfg, out);

    auto oracle = reg::load_pairs(out + "/volumes/train_000/oracle_pairs.txt");
    auto got = reg::load_pairs(out + "/pairs/train_000.pairs");
    std::set<std::pair<uint32_t, uint32_t>> want_set, got_set;
    for (const auto& p : oracle) want_set.insert({std::min(p.seg_a, p.seg_b), std::max(p.seg_a, p.seg_b)});
    for (const auto& p : got)
        if (p.label == 1) got_set.insert({std::min(p.seg_a, p.seg_b), std::max(p.seg_a, p.seg_b)});
    CHECK(!want_set.empty());
    CHECK(want_set == got_set);
    fs::remove_all(out);
}

TEST_CASE("pipeline: eval with a constant-0.5 classifier has zero recall") {
    config::RunConfig cfg = tiny_config("32");
    cfg.set("eval.classifier", "constant:0.5");
    std::string out = (fs::temp_directory_path() / "nt_cli_eval").string();
    fs::remove_all(out);
    pipeline::run_synth(cfg, out);
    pipeline::run_build_pairs(cfg, out);
    pipeline::run_eval(cfg, out);
    std::string summary = slurp(out + "/eval/summary.txt");
    CHECK(summary.find("recall=0.0000") != std::string::npos);
    std::string preds = slurp(out + "/eval/predictions.csv");
    CHECK(preds.find("seg_a,seg_b,probability,label") != std::string::npos);
    fs::remove_all(out);
}

TEST_CASE("outputs embed the config hash") {
    config::RunConfig cfg = tiny_config("33");
    std::string out = (fs::temp_directory_path() / "nt_cli_hash").string();
    fs::remove_all(out);
    pipeline::run_synth(cfg, out);
    pipeline::run_build_pairs(cfg, out);
    char expect[32];
    std::snprintf(expect, sizeof(expect), "%016llx", (unsigned long long)cfg.hash());
    CHECK(slurp(out + "/pairs/train_000.pairs").find(expect) != std::string::npos);
    CHECK(slurp(out + "/volumes/train_000/volume.meta").find(expect) != std::string::npos);
    fs::remove_all(out);
}
