#pragma once

#include <array>
#include <map>

#include "neutrace/embed/embednet.hpp"
#include "neutrace/volume.hpp"

namespace neutrace::embed {

/// Per-voxel k-dimensional features over a box placed at origin_vox within a
/// volume. Values are [z][y][x][k].
struct EmbeddingField {
    std::array<int, 3> dims{0, 0, 0};  // W, H, D
    int k = 0;
    std::array<int, 3> origin_vox{0, 0, 0};
    std::vector<float> values;

    int64_t pos_index(int x, int y, int z) const {
        return int64_t(x) + int64_t(dims[0]) * (int64_t(y) + int64_t(dims[1]) * z);
    }
    bool contains(int vx, int vy, int vz) const {
        int x = vx - origin_vox[0], y = vy - origin_vox[1], z = vz - origin_vox[2];
        return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
    }
};

/// Network input normalization: 8-bit intensity to [-1, 1].
inline float normalize_intensity(uint8_t v) { return (float(v) / 255.0f - 0.5f) / 0.5f; }

/// Image crop as a [D][H][W][1] tensor. The window must be in bounds.
nn::Tensor image_crop_tensor(const LabeledVolume& v, const std::array<int, 3>& start,
                             const std::array<int, 3>& size);

/// Runs the network over one window and returns its field.
EmbeddingField field_for_window(EmbedNet& model, const LabeledVolume& v, const std::array<int, 3>& start,
                                const std::array<int, 3>& size);

/// Tiled full-volume inference with overlap margins; interior tile seams use
/// only the tile cores so the result is independent of the tiling.
EmbeddingField compute_field(EmbedNet& model, const LabeledVolume& v, const std::array<int, 3>& tile_size,
                             const std::array<int, 3>& margin);

/// Raw intensity in [0,1] as a 1-channel pseudo-embedding over the volume.
EmbeddingField intensity_field(const LabeledVolume& v);

/// Mean embedding over the voxel neighborhood of size (2*rx+1, 2*ry+1, 2*rz+1)
/// around a voxel, clipped at the field borders.
std::vector<float> neighborhood_mean(const EmbeddingField& f, int vx, int vy, int vz, int rx, int ry, int rz);

/// Window placement for a point of interest: the training-crop geometry
/// centered on the point, clamped inside the volume.
std::array<int, 3> window_start(const LabeledVolume& v, const Vec3& center, const std::array<int, 3>& window);

/// Per-window field cache keyed by window placement. Candidate pairs derived
/// from one bridging edge share a truncation point, so fields are reused
/// across a positive and its negatives.
struct WindowFieldCache {
    EmbedNet* model = nullptr;
    const LabeledVolume* volume = nullptr;
    std::array<int, 3> window{0, 0, 0};
    std::map<std::array<int, 3>, EmbeddingField> cache;

    WindowFieldCache(EmbedNet& m, const LabeledVolume& v, const std::array<int, 3>& w)
        : model(&m), volume(&v), window(w) {}

    const EmbeddingField& field_at(const Vec3& center);
};

}  // namespace neutrace::embed
