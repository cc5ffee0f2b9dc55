#include "neutrace/volume.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>

namespace neutrace {

SegmentTable build_segment_table(const LabeledVolume& v) {
    SegmentTable table;
    for (int z = 0; z < v.dims[2]; ++z)
        for (int y = 0; y < v.dims[1]; ++y)
            for (int x = 0; x < v.dims[0]; ++x) {
                size_t i = v.idx(x, y, z);
                uint32_t seg = v.segment_ids[i];
                if (seg == 0) continue;
                uint32_t neu = v.neuron_ids[i];
                auto [it, inserted] = table.entries.try_emplace(seg);
                SegmentTable::Entry& e = it->second;
                if (inserted) {
                    e.segment = seg;
                    e.neuron = neu;
                    e.bbox_min = {x, y, z};
                    e.bbox_max = {x, y, z};
                } else {
                    if (e.neuron != neu)
                        fail("overseg-invariant", "segment " + std::to_string(seg) + " spans neurons " +
                                                      std::to_string(e.neuron) + " and " + std::to_string(neu));
                    e.bbox_min = {std::min(e.bbox_min[0], x), std::min(e.bbox_min[1], y), std::min(e.bbox_min[2], z)};
                    e.bbox_max = {std::max(e.bbox_max[0], x), std::max(e.bbox_max[1], y), std::max(e.bbox_max[2], z)};
                }
                e.voxels++;
            }
    return table;
}

namespace {

#pragma pack(push, 1)
struct VolumeHeader {
    char magic[8];       // "NTVOL1\0\0"
    uint32_t version;    // 1
    uint32_t kind;       // GridKind
    uint32_t dims[3];
    float voxel_size[3];
    float origin[3];
    uint64_t config_hash;
    uint8_t reserved[4];
};
#pragma pack(pop)
static_assert(sizeof(VolumeHeader) == 64, "volume header must be 64 bytes");

constexpr char kMagic[8] = {'N', 'T', 'V', 'O', 'L', '1', 0, 0};

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) fail("io-error", "cannot open " + path);
    return f;
}

}  // namespace

void save_volume_grid(const std::string& path, const LabeledVolume& v, GridKind kind, uint64_t config_hash) {
    VolumeHeader h{};
    std::memcpy(h.magic, kMagic, 8);
    h.version = 1;
    h.kind = uint32_t(kind);
    for (int i = 0; i < 3; ++i) {
        h.dims[i] = uint32_t(v.dims[i]);
        h.voxel_size[i] = float(v.voxel_size[i]);
        h.origin[i] = float(v.origin[i]);
    }
    h.config_hash = config_hash;
    FilePtr f = open_file(path, "wb");
    if (std::fwrite(&h, sizeof(h), 1, f.get()) != 1) fail("io-error", "write failed: " + path);
    size_t n = v.voxel_count();
    size_t written = 0;
    switch (kind) {
        case GridKind::Image8:
            written = std::fwrite(v.image.data(), 1, n, f.get());
            break;
        case GridKind::Segments32:
            written = std::fwrite(v.segment_ids.data(), 4, n, f.get()) * 4 / 4;
            break;
        case GridKind::Neurons32:
            written = std::fwrite(v.neuron_ids.data(), 4, n, f.get()) * 4 / 4;
            break;
    }
    if (written != n) fail("io-error", "short write: " + path);
}

void load_volume_grid(const std::string& path, LabeledVolume& v, GridKind expected) {
    FilePtr f = open_file(path, "rb");
    VolumeHeader h{};
    if (std::fread(&h, sizeof(h), 1, f.get()) != 1) fail("io-error", "short read: " + path);
    if (std::memcmp(h.magic, kMagic, 8) != 0) fail("bad-format", "not a volume grid file: " + path);
    if (h.version != 1) fail("bad-format", "unsupported volume version in " + path);
    if (h.kind != uint32_t(expected)) fail("bad-format", "unexpected grid kind in " + path);
    std::array<int, 3> dims{int(h.dims[0]), int(h.dims[1]), int(h.dims[2])};
    Vec3 vsz{h.voxel_size[0], h.voxel_size[1], h.voxel_size[2]};
    Vec3 org{h.origin[0], h.origin[1], h.origin[2]};
    if (v.dims == std::array<int, 3>{0, 0, 0}) {
        v.dims = dims;
        v.voxel_size = vsz;
        v.origin = org;
    } else if (v.dims != dims) {
        fail("bad-format", "grid dims mismatch across files in " + path);
    }
    size_t n = v.voxel_count();
    size_t got = 0;
    switch (expected) {
        case GridKind::Image8:
            v.image.resize(n);
            got = std::fread(v.image.data(), 1, n, f.get());
            break;
        case GridKind::Segments32:
            v.segment_ids.resize(n);
            got = std::fread(v.segment_ids.data(), 4, n, f.get());
            break;
        case GridKind::Neurons32:
            v.neuron_ids.resize(n);
            got = std::fread(v.neuron_ids.data(), 4, n, f.get());
            break;
    }
    if (got != n) fail("io-error", "short read of grid data: " + path);
}

void save_volume(const std::string& dir, const LabeledVolume& v, uint64_t config_hash) {
    std::filesystem::create_directories(dir);
    save_volume_grid(dir + "/image.nvol", v, GridKind::Image8, config_hash);
    save_volume_grid(dir + "/segments.nvol", v, GridKind::Segments32, config_hash);
    save_volume_grid(dir + "/neurons.nvol", v, GridKind::Neurons32, config_hash);
}

LabeledVolume load_volume(const std::string& dir) {
    LabeledVolume v;
    load_volume_grid(dir + "/image.nvol", v, GridKind::Image8);
    load_volume_grid(dir + "/segments.nvol", v, GridKind::Segments32);
    load_volume_grid(dir + "/neurons.nvol", v, GridKind::Neurons32);
    return v;
}

}  // namespace neutrace
