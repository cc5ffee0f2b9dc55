#include "neutrace/embed/field.hpp"

#include <algorithm>

namespace neutrace::embed {

nn::Tensor image_crop_tensor(const LabeledVolume& v, const std::array<int, 3>& start,
                             const std::array<int, 3>& size) {
    nn::Tensor x({size[2], size[1], size[0], 1});
    size_t i = 0;
    for (int z = 0; z < size[2]; ++z)
        for (int y = 0; y < size[1]; ++y)
            for (int x_ = 0; x_ < size[0]; ++x_)
                x.data[i++] = normalize_intensity(v.image[v.idx(start[0] + x_, start[1] + y, start[2] + z)]);
    return x;
}

EmbeddingField field_for_window(EmbedNet& model, const LabeledVolume& v, const std::array<int, 3>& start,
                                const std::array<int, 3>& size) {
    nn::Tensor x = image_crop_tensor(v, start, size);
    nn::Tensor out = model.forward(x);
    EmbeddingField f;
    f.dims = size;
    f.k = model.cfg.k;
    f.origin_vox = start;
    f.values = std::move(out.data);
    return f;
}

EmbeddingField compute_field(EmbedNet& model, const LabeledVolume& v, const std::array<int, 3>& tile_size,
                             const std::array<int, 3>& margin) {
    EmbeddingField f;
    f.dims = v.dims;
    f.k = model.cfg.k;
    f.origin_vox = {0, 0, 0};
    f.values.assign(v.voxel_count() * size_t(f.k), 0.f);

    std::array<int, 3> tile;
    std::array<int, 3> core;
    for (int a = 0; a < 3; ++a) {
        tile[a] = std::min(tile_size[a], v.dims[a]);
        core[a] = std::max(1, tile[a] - 2 * margin[a]);
    }
    for (int cz = 0; cz < v.dims[2]; cz += core[2])
        for (int cy = 0; cy < v.dims[1]; cy += core[1])
            for (int cx = 0; cx < v.dims[0]; cx += core[0]) {
                std::array<int, 3> cstart{cx, cy, cz};
                std::array<int, 3> cend;
                std::array<int, 3> wstart;
                for (int a = 0; a < 3; ++a) {
                    cend[a] = std::min(v.dims[a], cstart[a] + core[a]);
                    wstart[a] = std::clamp(cstart[a] - margin[a], 0, v.dims[a] - tile[a]);
                }
                EmbeddingField w = field_for_window(model, v, wstart, tile);
                for (int z = cstart[2]; z < cend[2]; ++z)
                    for (int y = cstart[1]; y < cend[1]; ++y)
                        for (int x = cstart[0]; x < cend[0]; ++x) {
                            const float* src =
                                w.values.data() +
                                w.pos_index(x - wstart[0], y - wstart[1], z - wstart[2]) * f.k;
                            float* dst = f.values.data() + f.pos_index(x, y, z) * f.k;
                            std::copy(src, src + f.k, dst);
                        }
            }
    return f;
}

EmbeddingField intensity_field(const LabeledVolume& v) {
    EmbeddingField f;
    f.dims = v.dims;
    f.k = 1;
    f.origin_vox = {0, 0, 0};
    f.values.resize(v.voxel_count());
    for (size_t i = 0; i < v.image.size(); ++i) f.values[i] = float(v.image[i]) / 255.0f;
    return f;
}

std::vector<float> neighborhood_mean(const EmbeddingField& f, int vx, int vy, int vz, int rx, int ry, int rz) {
    int x = vx - f.origin_vox[0], y = vy - f.origin_vox[1], z = vz - f.origin_vox[2];
    int x0 = std::max(0, x - rx), x1 = std::min(f.dims[0] - 1, x + rx);
    int y0 = std::max(0, y - ry), y1 = std::min(f.dims[1] - 1, y + ry);
    int z0 = std::max(0, z - rz), z1 = std::min(f.dims[2] - 1, z + rz);
    std::vector<float> mean(f.k, 0.f);
    if (x1 < x0 || y1 < y0 || z1 < z0) fail("bad-argument", "neighborhood outside the embedding field");
    int64_t count = 0;
    for (int zz = z0; zz <= z1; ++zz)
        for (int yy = y0; yy <= y1; ++yy)
            for (int xx = x0; xx <= x1; ++xx) {
                const float* p = f.values.data() + f.pos_index(xx, yy, zz) * f.k;
                for (int c = 0; c < f.k; ++c) mean[c] += p[c];
                count++;
            }
    for (int c = 0; c < f.k; ++c) mean[c] /= float(count);
    return mean;
}

std::array<int, 3> window_start(const LabeledVolume& v, const Vec3& center, const std::array<int, 3>& window) {
    for (int a = 0; a < 3; ++a)
        if (v.dims[a] < window[a]) fail("data-error", "volume smaller than the inference window");
    auto c = v.voxel_of(center);
    std::array<int, 3> start;
    for (int a = 0; a < 3; ++a) start[a] = std::clamp(c[a] - window[a] / 2, 0, v.dims[a] - window[a]);
    return start;
}

const EmbeddingField& WindowFieldCache::field_at(const Vec3& center) {
    std::array<int, 3> start = window_start(*volume, center, window);
    auto it = cache.find(start);
    if (it == cache.end()) it = cache.emplace(start, field_for_window(*model, *volume, start, window)).first;
    return it->second;
}

}  // namespace neutrace::embed
