#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "neutrace/common.hpp"

namespace neutrace {

/// Dense 3D grids at anisotropic voxel resolution, x-fastest order.
/// image holds 8-bit intensities (value/255 maps to [0,1]); segment_ids and
/// neuron_ids hold non-negative labels with 0 = background.
struct LabeledVolume {
    std::array<int, 3> dims{0, 0, 0};  // W, H, D
    Vec3 voxel_size{16, 16, 40};       // nm per voxel
    Vec3 origin{0, 0, 0};              // nm
    std::vector<uint8_t> image;
    std::vector<uint32_t> segment_ids;
    std::vector<uint32_t> neuron_ids;

    size_t voxel_count() const { return size_t(dims[0]) * dims[1] * dims[2]; }
    size_t idx(int x, int y, int z) const {
        return size_t(x) + size_t(dims[0]) * (size_t(y) + size_t(dims[1]) * size_t(z));
    }
    bool in_bounds(int x, int y, int z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
    }
    /// Voxel containing a nm position (floor). May be out of bounds.
    std::array<int, 3> voxel_of(const Vec3& p) const {
        return {int(std::floor((p.x - origin.x) / voxel_size.x)),
                int(std::floor((p.y - origin.y) / voxel_size.y)),
                int(std::floor((p.z - origin.z) / voxel_size.z))};
    }
    Vec3 voxel_center(int x, int y, int z) const {
        return {origin.x + (x + 0.5) * voxel_size.x, origin.y + (y + 0.5) * voxel_size.y,
                origin.z + (z + 0.5) * voxel_size.z};
    }
    Vec3 extent_nm() const {
        return {dims[0] * voxel_size.x, dims[1] * voxel_size.y, dims[2] * voxel_size.z};
    }

    void allocate() {
        image.assign(voxel_count(), 0);
        segment_ids.assign(voxel_count(), 0);
        neuron_ids.assign(voxel_count(), 0);
    }
};

/// Per-segment summary from one volume scan: ground-truth neuron, voxel count,
/// bounding box. Iteration order is ascending segment id.
struct SegmentTable {
    struct Entry {
        uint32_t segment = 0;
        uint32_t neuron = 0;
        int64_t voxels = 0;
        std::array<int, 3> bbox_min{0, 0, 0}, bbox_max{0, 0, 0};
    };
    std::map<uint32_t, Entry> entries;

    const Entry* find(uint32_t seg) const {
        auto it = entries.find(seg);
        return it == entries.end() ? nullptr : &it->second;
    }
    uint32_t neuron_of(uint32_t seg) const {
        const Entry* e = find(seg);
        return e ? e->neuron : 0;
    }
};

/// Scans segment_ids/neuron_ids. Fails if any segment spans two neurons.
SegmentTable build_segment_table(const LabeledVolume& v);

// ---- volume files -----------------------------------------------------------
//
// One file per grid, fixed 64-byte little-endian header followed by raw data
// in x-fastest order (image: u8, labels: u32le). See docs/formats.md.

enum class GridKind : uint32_t { Image8 = 0, Segments32 = 1, Neurons32 = 2 };

void save_volume_grid(const std::string& path, const LabeledVolume& v, GridKind kind, uint64_t config_hash);
/// Reads one grid file into the matching field of `v`, setting dims/voxel
/// size/origin (and checking consistency when already set).
void load_volume_grid(const std::string& path, LabeledVolume& v, GridKind expected);

void save_volume(const std::string& dir, const LabeledVolume& v, uint64_t config_hash);
LabeledVolume load_volume(const std::string& dir);

}  // namespace neutrace
