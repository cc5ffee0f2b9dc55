#include "neutrace/connect/samples.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <memory>

namespace neutrace::connect {

namespace {

struct Window {
    std::array<int, 3> lo{0, 0, 0}, hi{0, 0, 0};  // inclusive
};

Window cube_window(const LabeledVolume& v, const Vec3& center, const Vec3& side_nm) {
    auto c = v.voxel_of(center);
    Window w;
    for (int a = 0; a < 3; ++a) {
        int r = std::max(0, int(std::lround(side_nm[a] * 0.5 / v.voxel_size[a])));
        w.lo[a] = std::max(0, c[a] - r);
        w.hi[a] = std::min(v.dims[a] - 1, c[a] + r);
        if (w.lo[a] > w.hi[a]) fail("empty-pair-crop", "crop cube outside the volume");
    }
    return w;
}

bool is_inplane_boundary(const LabeledVolume& v, int x, int y, int z, uint32_t seg) {
    const int off[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (const auto& o : off) {
        int nx = x + o[0], ny = y + o[1];
        if (!v.in_bounds(nx, ny, z)) return true;  // volume wall
        if (v.segment_ids[v.idx(nx, ny, z)] != seg) return true;
    }
    return false;
}

}  // namespace

RawPoints extract_contour_points(const LabeledVolume& v, const reg::CandidatePair& pair, const Vec3& cube_nm) {
    Window w = cube_window(v, pair.truncation, cube_nm);
    RawPoints out;
    bool seen_a = false, seen_b = false;
    for (int z = w.lo[2]; z <= w.hi[2]; ++z)
        for (int y = w.lo[1]; y <= w.hi[1]; ++y)
            for (int x = w.lo[0]; x <= w.hi[0]; ++x) {
                uint32_t seg = v.segment_ids[v.idx(x, y, z)];
                if (seg != pair.seg_a && seg != pair.seg_b) continue;
                bool is_a = seg == pair.seg_a;
                (is_a ? seen_a : seen_b) = true;
                if (!is_inplane_boundary(v, x, y, z, seg)) continue;
                out.positions.push_back(v.voxel_center(x, y, z));
                out.ids.push_back(is_a ? 0 : 1);
                out.voxels.push_back({x, y, z});
            }
    if (!seen_a || !seen_b)
        fail("empty-pair-crop", "segment " + std::to_string(seen_a ? pair.seg_b : pair.seg_a) +
                                    " absent from the crop cube");
    if (out.positions.empty()) fail("empty-pair-crop", "no contour points in the crop cube");
    return out;
}

PointSample build_point_sample(const RawPoints& raw, int m, const embed::EmbeddingField* field, uint64_t seed) {
    if (raw.positions.empty()) fail("empty-pair-crop", "cannot build a point sample from zero points");
    std::vector<int> picks = geom::farthest_point_sample(raw.positions, m, seed);

    Vec3 lo = raw.positions[0], hi = raw.positions[0];
    for (const Vec3& p : raw.positions) {
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    }
    double longest = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
    double scale = longest > 0 ? 1.0 / longest : 0.0;

    PointSample s;
    s.m = m;
    s.k = field ? field->k : 0;
    s.norm_scale_nm = float(longest > 0 ? longest : 1.0);
    s.feats.resize(size_t(m) * (4 + s.k));
    for (int i = 0; i < m; ++i) {
        int idx = picks[i];
        float* row = s.feats.data() + size_t(i) * (4 + s.k);
        const Vec3& p = raw.positions[idx];
        row[0] = float((p.x - lo.x) * scale);
        row[1] = float((p.y - lo.y) * scale);
        row[2] = float((p.z - lo.z) * scale);
        row[3] = float(raw.ids[idx]);
        if (field) {
            auto [vx, vy, vz] = raw.voxels[idx];
            // points outside the field window carry zero image features
            bool overlaps = vx + 3 >= field->origin_vox[0] && vx - 3 < field->origin_vox[0] + field->dims[0] &&
                            vy + 3 >= field->origin_vox[1] && vy - 3 < field->origin_vox[1] + field->dims[1] &&
                            vz + 1 >= field->origin_vox[2] && vz - 1 < field->origin_vox[2] + field->dims[2];
            if (overlaps) {
                std::vector<float> e = embed::neighborhood_mean(*field, vx, vy, vz, 3, 3, 1);
                std::copy(e.begin(), e.end(), row + 4);
            }
        }
    }
    return s;
}

MaskSample build_mask_sample(const LabeledVolume& v, const reg::CandidatePair& pair, double side_nm,
                             const std::array<int, 3>& dims, const embed::EmbeddingField* field) {
    Window w = cube_window(v, pair.truncation, {side_nm, side_nm, side_nm});
    std::array<int, 3> src_size{w.hi[0] - w.lo[0] + 1, w.hi[1] - w.lo[1] + 1, w.hi[2] - w.lo[2] + 1};
    bool seen_a = false, seen_b = false;
    for (int z = w.lo[2]; z <= w.hi[2] && !(seen_a && seen_b); ++z)
        for (int y = w.lo[1]; y <= w.hi[1] && !(seen_a && seen_b); ++y)
            for (int x = w.lo[0]; x <= w.hi[0]; ++x) {
                uint32_t seg = v.segment_ids[v.idx(x, y, z)];
                if (seg == pair.seg_a) seen_a = true;
                if (seg == pair.seg_b) seen_b = true;
            }
    if (!seen_a || !seen_b)
        fail("empty-pair-crop", "segment " + std::to_string(seen_a ? pair.seg_b : pair.seg_a) +
                                    " absent from the crop cube");

    MaskSample s;
    s.dims = dims;
    int k = field ? field->k : 0;
    s.channels = 3 + k;
    s.seg_a = pair.seg_a;
    s.seg_b = pair.seg_b;
    s.data.assign(size_t(dims[0]) * dims[1] * dims[2] * s.channels, 0.f);
    size_t i = 0;
    for (int z = 0; z < dims[2]; ++z) {
        int sz = w.lo[2] + int(int64_t(z) * src_size[2] / dims[2]);
        for (int y = 0; y < dims[1]; ++y) {
            int sy = w.lo[1] + int(int64_t(y) * src_size[1] / dims[1]);
            for (int x = 0; x < dims[0]; ++x, i += s.channels) {
                int sx = w.lo[0] + int(int64_t(x) * src_size[0] / dims[0]);
                uint32_t seg = v.segment_ids[v.idx(sx, sy, sz)];
                float a = seg == pair.seg_a ? 1.f : 0.f;
                float b = seg == pair.seg_b ? 1.f : 0.f;
                s.data[i] = a;
                s.data[i + 1] = b;
                s.data[i + 2] = (a > 0 || b > 0) ? 1.f : 0.f;
                if (field && field->contains(sx, sy, sz)) {
                    const float* e =
                        field->values.data() +
                        field->pos_index(sx - field->origin_vox[0], sy - field->origin_vox[1],
                                         sz - field->origin_vox[2]) *
                            k;
                    for (int c = 0; c < k; ++c) s.data[i + 3 + c] = e[c];
                }
            }
        }
    }
    return s;
}

namespace {

constexpr char kMagic[8] = {'N', 'T', 'S', 'A', 'M', 'P', '1', 0};

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_fail(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) fail("io-error", "cannot open " + path);
    return f;
}
void put(std::FILE* f, const void* p, size_t n, const std::string& path) {
    if (std::fwrite(p, 1, n, f) != n) fail("io-error", "write failed: " + path);
}
void get(std::FILE* f, void* p, size_t n, const std::string& path) {
    if (std::fread(p, 1, n, f) != n) fail("io-error", "short read: " + path);
}

}  // namespace

void save_point_samples(const std::string& path, const std::vector<PointSample>& samples, uint64_t config_hash) {
    FilePtr f = open_or_fail(path, "wb");
    put(f.get(), kMagic, 8, path);
    uint32_t kind = 0, count = uint32_t(samples.size());
    uint32_t m = samples.empty() ? 0 : uint32_t(samples[0].m);
    uint32_t k = samples.empty() ? 0 : uint32_t(samples[0].k);
    put(f.get(), &kind, 4, path);
    put(f.get(), &config_hash, 8, path);
    put(f.get(), &count, 4, path);
    put(f.get(), &m, 4, path);
    put(f.get(), &k, 4, path);
    for (const auto& s : samples) {
        if (uint32_t(s.m) != m || uint32_t(s.k) != k) fail("bad-format", "heterogeneous point samples in cache");
        int32_t label = s.label;
        put(f.get(), &s.seg_a, 4, path);
        put(f.get(), &s.seg_b, 4, path);
        put(f.get(), &label, 4, path);
        put(f.get(), &s.norm_scale_nm, 4, path);
        put(f.get(), s.feats.data(), s.feats.size() * 4, path);
    }
}

std::vector<PointSample> load_point_samples(const std::string& path) {
    FilePtr f = open_or_fail(path, "rb");
    char magic[8];
    get(f.get(), magic, 8, path);
    if (std::memcmp(magic, kMagic, 8) != 0) fail("bad-format", "not a sample cache: " + path);
    uint32_t kind, count, m, k;
    uint64_t hash;
    get(f.get(), &kind, 4, path);
    get(f.get(), &hash, 8, path);
    get(f.get(), &count, 4, path);
    get(f.get(), &m, 4, path);
    get(f.get(), &k, 4, path);
    if (kind != 0) fail("bad-format", "cache holds mask samples, expected point samples: " + path);
    std::vector<PointSample> out(count);
    for (auto& s : out) {
        s.m = int(m);
        s.k = int(k);
        int32_t label;
        get(f.get(), &s.seg_a, 4, path);
        get(f.get(), &s.seg_b, 4, path);
        get(f.get(), &label, 4, path);
        get(f.get(), &s.norm_scale_nm, 4, path);
        s.label = label;
        s.feats.resize(size_t(m) * (4 + k));
        get(f.get(), s.feats.data(), s.feats.size() * 4, path);
    }
    return out;
}

void save_mask_samples(const std::string& path, const std::vector<MaskSample>& samples, uint64_t config_hash) {
    FilePtr f = open_or_fail(path, "wb");
    put(f.get(), kMagic, 8, path);
    uint32_t kind = 1, count = uint32_t(samples.size());
    uint32_t dims[3] = {0, 0, 0};
    uint32_t channels = 0;
    if (!samples.empty()) {
        for (int a = 0; a < 3; ++a) dims[a] = uint32_t(samples[0].dims[a]);
        channels = uint32_t(samples[0].channels);
    }
    put(f.get(), &kind, 4, path);
    put(f.get(), &config_hash, 8, path);
    put(f.get(), &count, 4, path);
    put(f.get(), dims, 12, path);
    put(f.get(), &channels, 4, path);
    for (const auto& s : samples) {
        int32_t label = s.label;
        put(f.get(), &s.seg_a, 4, path);
        put(f.get(), &s.seg_b, 4, path);
        put(f.get(), &label, 4, path);
        put(f.get(), s.data.data(), s.data.size() * 4, path);
    }
}

std::vector<MaskSample> load_mask_samples(const std::string& path) {
    FilePtr f = open_or_fail(path, "rb");
    char magic[8];
    get(f.get(), magic, 8, path);
    if (std::memcmp(magic, kMagic, 8) != 0) fail("bad-format", "not a sample cache: " + path);
    uint32_t kind, count, dims[3], channels;
    uint64_t hash;
    get(f.get(), &kind, 4, path);
    get(f.get(), &hash, 8, path);
    get(f.get(), &count, 4, path);
    get(f.get(), dims, 12, path);
    get(f.get(), &channels, 4, path);
    if (kind != 1) fail("bad-format", "cache holds point samples, expected mask samples: " + path);
    std::vector<MaskSample> out(count);
    for (auto& s : out) {
        s.dims = {int(dims[0]), int(dims[1]), int(dims[2])};
        s.channels = int(channels);
        int32_t label;
        get(f.get(), &s.seg_a, 4, path);
        get(f.get(), &s.seg_b, 4, path);
        get(f.get(), &label, 4, path);
        s.label = label;
        s.data.resize(size_t(dims[0]) * dims[1] * dims[2] * channels);
        get(f.get(), s.data.data(), s.data.size() * 4, path);
    }
    return out;
}

}  // namespace neutrace::connect
