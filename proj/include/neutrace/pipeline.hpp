#pragma once

#include <string>

#include "neutrace/config.hpp"

namespace neutrace::pipeline {

inline const char* kVersion = "0.1.0";

/// Stage entry points shared by the command-line tool and the test suites.
/// Every stage reads its inputs from, and writes its outputs under, out_dir:
///
///   volumes/<split>_<idx>/{image,segments,neurons}.nvol, skeletons/*.swc,
///                         oracle_pairs.txt, volume.meta
///   pairs/<split>_<idx>.pairs
///   embed/{embednet.ntc, train_log.csv}
///   classifier/{model.ntc, train_log.csv, samples_<split>_<idx>.cache}
///   eval/{predictions.csv, pr_curve.csv, pr_curve.svg, summary.txt}
///   trace/{result.txt, clusters.csv, per_skeleton.csv}

void run_synth(const config::RunConfig& cfg, const std::string& out_dir);
void run_build_pairs(const config::RunConfig& cfg, const std::string& out_dir);
void run_train_embed(const config::RunConfig& cfg, const std::string& out_dir);
void run_train_classifier(const config::RunConfig& cfg, const std::string& out_dir);
void run_eval(const config::RunConfig& cfg, const std::string& out_dir);
void run_trace(const config::RunConfig& cfg, const std::string& out_dir);
/// Throws Error("gradcheck-failed") when any case exceeds its tolerance.
void run_gradcheck(int instances, uint64_t seed, std::ostream& out);

/// Applies run.threads / run.deterministic to the process-wide thread pool.
void apply_run_settings(const config::RunConfig& cfg, bool force_deterministic);

}  // namespace neutrace::pipeline
