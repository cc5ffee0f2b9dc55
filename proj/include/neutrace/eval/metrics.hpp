#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "neutrace/geom.hpp"
#include "neutrace/registration.hpp"

namespace neutrace::eval {

struct PrPoint {
    double threshold = 0, precision = 0, recall = 0;
};

struct EvalReport {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    double precision = 0, recall = 0, f1 = 0;  // at threshold 0.5, strict >
    std::vector<PrPoint> curve;                // ascending threshold, first point below all scores
};

/// Confusion counts at probability > 0.5 plus a precision/recall curve over
/// all unique score thresholds. With no predicted positives precision is 1 by
/// convention; recall over zero actual positives is 0.
EvalReport score_predictions(const std::vector<double>& probabilities, const std::vector<int>& labels);

void write_pr_curve_csv(std::ostream& out, const EvalReport& report, uint64_t config_hash);
void write_pr_curve_svg(std::ostream& out, const EvalReport& report);
void write_summary(std::ostream& out, const EvalReport& report, uint64_t config_hash);

/// segment id -> cluster representative (the minimum segment id in the cluster)
using ClusterMap = std::map<uint32_t, uint32_t>;

struct ScoredPair {
    uint32_t seg_a = 0, seg_b = 0;
    double probability = 0;
};

/// Union-find over pairs with probability strictly above the threshold.
ClusterMap agglomerate(const std::vector<uint32_t>& segments, const std::vector<ScoredPair>& pairs,
                       double threshold);

/// Node-weighted expected run length in nanometers.
///
/// Each node maps to the cluster of its segment (0 = background). A cluster
/// containing nodes from two or more skeletons is merged-wrong. A node's run
/// is the total edge length of the maximal connected subtree around it whose
/// nodes share its cluster, or 0 for background or merged-wrong nodes. Nodes
/// are weighted by half the length of their incident edges, so the weights
/// sum to the total cable length.
double expected_run_length(const std::vector<geom::Skeleton>& skeletons,
                           const std::vector<std::vector<uint32_t>>& node_segments, const ClusterMap& clusters,
                           std::vector<double>* per_skeleton_erl = nullptr);

struct TracingResult {
    ClusterMap clusters;
    double erl_before_nm = 0, erl_after_nm = 0;
    double relative_gain = 0;  // (after - before) / before
    std::vector<double> per_skeleton_erl;
    std::vector<ScoredPair> scored;
};

/// Scores every candidate pair, agglomerates above the merge threshold, and
/// reports the run-length change against the no-merge baseline.
TracingResult tracing_experiment(const std::vector<geom::Skeleton>& skeletons,
                                 const std::vector<std::vector<uint32_t>>& node_segments,
                                 const std::vector<uint32_t>& segment_universe,
                                 const std::vector<reg::CandidatePair>& candidates,
                                 const std::function<double(const reg::CandidatePair&)>& scorer,
                                 double merge_threshold);

}  // namespace neutrace::eval
