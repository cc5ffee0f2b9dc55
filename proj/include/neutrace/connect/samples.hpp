#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neutrace/embed/field.hpp"
#include "neutrace/registration.hpp"

namespace neutrace::connect {

/// Raw section-contour points for one pair: nm positions, 0/1 segment ids,
/// and the source voxel of each point (for embedding attachment).
struct RawPoints {
    std::vector<Vec3> positions;
    std::vector<uint8_t> ids;
    std::vector<std::array<int, 3>> voxels;
};

/// Per z-slice 4-connected boundary voxels of the pair's two segments within
/// a cube centered at the truncation point. Neighbors are evaluated in the
/// full volume; voxels on the volume wall count as boundary.
RawPoints extract_contour_points(const LabeledVolume& v, const reg::CandidatePair& pair, const Vec3& cube_nm);

/// Classifier-ready point cloud: unit-cube coordinates (uniform scale, the
/// longest extent maps to 1), a 0/1 id channel, and optional k embedding
/// channels averaged over the 7x7x3 voxel neighborhood of each point.
struct PointSample {
    int m = 0;
    int k = 0;                 // embedding channels, 0 = morphology only
    std::vector<float> feats;  // m rows of (x, y, z, id, e...)
    int label = 0;
    uint32_t seg_a = 0, seg_b = 0;
    float norm_scale_nm = 1;
};

PointSample build_point_sample(const RawPoints& raw, int m, const embed::EmbeddingField* field, uint64_t seed);

/// Three-channel voxel mask crop (S_a, S_b, union) nearest-resized to fixed
/// dims, with optional embedding channels resized the same way.
struct MaskSample {
    std::array<int, 3> dims{0, 0, 0};  // W, H, D
    int channels = 0;                  // 3 + k
    std::vector<float> data;           // [D][H][W][C]
    int label = 0;
    uint32_t seg_a = 0, seg_b = 0;
};

MaskSample build_mask_sample(const LabeledVolume& v, const reg::CandidatePair& pair, double side_nm,
                             const std::array<int, 3>& dims, const embed::EmbeddingField* field);

// ---- sample cache files -------------------------------------------------
// Binary cache so classifier training does not re-run volume cropping.

void save_point_samples(const std::string& path, const std::vector<PointSample>& samples, uint64_t config_hash);
std::vector<PointSample> load_point_samples(const std::string& path);
void save_mask_samples(const std::string& path, const std::vector<MaskSample>& samples, uint64_t config_hash);
std::vector<MaskSample> load_mask_samples(const std::string& path);

}  // namespace neutrace::connect
