#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "neutrace/geom.hpp"
#include "neutrace/volume.hpp"

namespace neutrace::reg {

/// Node -> segment id, aligned with skeleton.nodes. 0 = unassigned.
struct Assignment {
    std::vector<uint32_t> node_seg;
};

struct RegisterConfig {
    int search_radius_vox = 20;
    double shift_sigma_nm = 200;
    Vec3 cube_nm{2560, 2560, 2560};
    int negatives_per_positive = 20;
    Vec3 block_size_nm{26000, 26000, 1000};
    int min_block_positives = 350;
    double densify_step_nm = 0;  // > 0: add interpolated samples along edges for chamfer
};

/// Each skeleton node maps to the segment of its containing voxel; background
/// voxels fall back to the nearest labeled voxel within the search radius
/// (distance in voxel units, ties to the lower segment id).
Assignment assign_nodes(const geom::Skeleton& skel, const LabeledVolume& v, int search_radius_vox = 20);

/// Per-slice, per-connected-component voxel centroids for every segment, from
/// one volume scan. These approximate segment skeletons for the chamfer filter.
struct SliceCentroids {
    std::map<uint32_t, std::vector<Vec3>> by_segment;
    const std::vector<Vec3>* find(uint32_t seg) const {
        auto it = by_segment.find(seg);
        return it == by_segment.end() ? nullptr : &it->second;
    }
};
SliceCentroids build_slice_centroids(const LabeledVolume& v);

/// Drops segments (and their nodes) whose approximate skeleton strays from the
/// neuron skeleton by more than twice the local mean radius.
Assignment filter_assignments(const geom::Skeleton& skel, const Assignment& a, const SliceCentroids& centroids,
                              double densify_step_nm = 0);

struct BridgingEdge {
    int64_t node_i = 0, node_j = 0;
    uint32_t seg_a = 0, seg_b = 0;
    Vec3 midpoint;    // exact midpoint of the two node positions
    Vec3 truncation;  // midpoint plus random shift, clamped in bounds
};

/// One edge per skeleton edge whose endpoints map to different segments.
/// Edges with an unassigned endpoint are skipped.
std::vector<BridgingEdge> extract_bridging_edges(const geom::Skeleton& skel, const Assignment& a,
                                                 const LabeledVolume& v, double shift_sigma_nm, uint64_t seed);

struct CandidatePair {
    uint32_t seg_a = 0, seg_b = 0;
    Vec3 truncation;
    int label = 0;  // 1 = connect, 0 = split
    std::array<int, 3> block{0, 0, 0};
};

/// Per bridging edge: one positive pair plus up to negatives_per_positive
/// negatives drawn uniformly without replacement from segments intersecting
/// the cube centered at the truncation point, excluding the positive partner
/// and any segment of the query's ground-truth neuron.
std::vector<CandidatePair> sample_pairs(const std::vector<BridgingEdge>& edges, const LabeledVolume& v,
                                        const SegmentTable& table, const Vec3& cube_nm,
                                        int negatives_per_positive, uint64_t seed);

using BlockId = std::array<int, 3>;

/// Buckets pairs by floor-division of the truncation point by block_size and
/// stamps the block id into each pair. Blocks with fewer than min_positives
/// positive pairs are excluded.
std::map<BlockId, std::vector<CandidatePair>> partition_blocks(const std::vector<CandidatePair>& pairs,
                                                               const Vec3& block_size_nm, int min_positives);

// ---- pair list file ---------------------------------------------------------
// Text, one record per line: seg_a seg_b cx cy cz label block_x block_y block_z

void save_pairs(const std::string& path, const std::vector<CandidatePair>& pairs, uint64_t config_hash);
std::vector<CandidatePair> load_pairs(const std::string& path);

/// Registration front-to-back for a set of skeletons on one volume.
std::vector<CandidatePair> build_candidate_pairs(const std::vector<geom::Skeleton>& skeletons,
                                                 const LabeledVolume& v, const RegisterConfig& cfg,
                                                 uint64_t seed);

}  // namespace neutrace::reg
