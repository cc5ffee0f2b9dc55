#include "neutrace/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace neutrace::synth {

namespace {

Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0, 1);
    Vec3 v{n(rng), n(rng), n(rng)};
    double len = v.norm();
    return len > 1e-12 ? v / len : Vec3{1, 0, 0};
}

uint8_t quantize(double v) {
    double c = std::min(1.0, std::max(0.0, v));
    return uint8_t(std::lround(c * 255.0));
}

struct PlacedNode {
    Vec3 pos;
    double radius;
};

}  // namespace

std::vector<geom::Skeleton> generate_neurons(const SynthConfig& cfg, const std::array<int, 3>& dims,
                                             const Vec3& voxel_size) {
    Vec3 extent{dims[0] * voxel_size.x, dims[1] * voxel_size.y, dims[2] * voxel_size.z};
    double margin = cfg.radius_max_nm + cfg.wall_margin_nm;
    for (int a = 0; a < 3; ++a)
        if (extent[a] <= 2 * margin)
            fail("infeasible-synth-config", "volume extent too small for tube radius plus margin");

    std::vector<geom::Skeleton> neurons;
    std::vector<PlacedNode> occupied;  // nodes of previously accepted neurons
    double self_gap = 5.0 * cfg.radius_max_nm;

    for (int n = 0; n < cfg.neuron_count; ++n) {
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            std::mt19937_64 rng(derive_seed(cfg.seed, "neuron") + uint64_t(n) * 1000003u + attempt);
            std::uniform_real_distribution<double> u01d(0, 1);

            double target_len = (cfg.cable_min_um + (cfg.cable_max_um - cfg.cable_min_um) * u01d(rng)) * 1000.0;
            double base_r = cfg.radius_min_nm + (cfg.radius_max_nm - cfg.radius_min_nm) * u01d(rng);
            double phase = u01d(rng) * 6.28318530717958647692;

            bool bundled = n < int(std::floor(cfg.bundle_fraction * cfg.neuron_count));
            Vec3 pos{margin + (extent.x - 2 * margin) * u01d(rng), margin + (extent.y - 2 * margin) * u01d(rng),
                     margin + (extent.z - 2 * margin) * u01d(rng)};
            Vec3 dir = random_unit(rng);
            double stiffness = cfg.stiffness;
            if (bundled) {
                double flip = u01d(rng) < 0.5 ? -1.0 : 1.0;
                dir = (Vec3{0, 0, flip} + random_unit(rng) * cfg.bundle_jitter).normalized();
                stiffness = 0.97;
                pos.z = margin + (extent.z - 2 * margin) * u01d(rng);
            }

            geom::Skeleton skel;
            std::vector<double> arcs;
            auto radius_at = [&](double arc) {
                double r = base_r * (1.0 + 0.12 * std::sin(arc / 2200.0 + phase));
                return std::min(cfg.radius_max_nm, std::max(cfg.radius_min_nm, r));
            };
            auto clearance_ok = [&](const Vec3& p, double r, double arc) {
                for (const PlacedNode& o : occupied)
                    if (distance(p, o.pos) < r + o.radius + cfg.clearance_nm) return false;
                for (size_t i = 0; i < skel.nodes.size(); ++i) {
                    if (arc - arcs[i] <= self_gap) break;  // arcs descend from the tail
                    if (distance(p, skel.nodes[i].pos) < 2 * r + cfg.clearance_nm) return false;
                }
                return true;
            };

            if (!clearance_ok(pos, radius_at(0), 0)) continue;
            skel.nodes.push_back({1, pos, radius_at(0), -1});
            arcs.push_back(0);
            double arc = 0;
            bool stuck = false;
            while (arc < target_len && !stuck) {
                bool stepped = false;
                for (int tries = 0; tries < 32 && !stepped; ++tries) {
                    // progressively forget momentum when boxed in
                    double stiff = tries < 8 ? stiffness : (tries < 20 ? stiffness * 0.5 : 0.0);
                    Vec3 cand_dir = (dir * stiff + random_unit(rng) * (1 - stiff)).normalized();
                    Vec3 cand = pos + cand_dir * cfg.node_spacing_nm;
                    for (int a = 0; a < 3; ++a) {  // reflect off walls
                        if (cand[a] < margin || cand[a] > extent[a] - margin) {
                            cand_dir[a] = -cand_dir[a];
                            cand = pos + cand_dir * cfg.node_spacing_nm;
                        }
                    }
                    bool inside = true;
                    for (int a = 0; a < 3; ++a)
                        if (cand[a] < margin || cand[a] > extent[a] - margin) inside = false;
                    double next_arc = arc + cfg.node_spacing_nm;
                    if (inside && clearance_ok(cand, radius_at(next_arc), next_arc)) {
                        dir = cand_dir;
                        pos = cand;
                        arc = next_arc;
                        skel.nodes.push_back({int64_t(skel.nodes.size()) + 1, pos, radius_at(arc),
                                              int64_t(skel.nodes.size())});
                        arcs.push_back(arc);
                        stepped = true;
                    }
                }
                if (!stepped) stuck = true;
            }
            if (arc >= 0.5 * target_len && arc >= cfg.cable_min_um * 1000.0 * 0.5) {
                skel.validate();
                neurons.push_back(std::move(skel));
                for (const auto& node : neurons.back().nodes) occupied.push_back({node.pos, node.radius});
                placed = true;
            }
        }
        if (!placed)
            fail("infeasible-synth-config",
                 "could not place neuron " + std::to_string(n + 1) + " with required clearance");
    }
    return neurons;
}

LabeledVolume voxelize(const std::vector<geom::Skeleton>& neurons, const std::array<int, 3>& dims,
                       const Vec3& voxel_size, const SynthConfig& cfg, VoxelizeAux* aux) {
    LabeledVolume v;
    v.dims = dims;
    v.voxel_size = voxel_size;
    v.allocate();
    std::vector<float> best_d(v.voxel_count(), std::numeric_limits<float>::infinity());
    std::vector<float> arc_grid(v.voxel_count(), 0.f);

    for (size_t ni = 0; ni < neurons.size(); ++ni) {
        uint32_t neuron_id = uint32_t(ni) + 1;
        const auto& nodes = neurons[ni].nodes;
        double arc0 = 0;
        for (size_t e = 0; e + 1 < nodes.size(); ++e) {
            Vec3 p0 = nodes[e].pos, p1 = nodes[e + 1].pos;
            double r0 = nodes[e].radius, r1 = nodes[e + 1].radius;
            Vec3 d = p1 - p0;
            double len2 = d.norm2();
            double len = std::sqrt(len2);
            double rmax = std::max(r0, r1);
            int lo[3], hi[3];
            for (int a = 0; a < 3; ++a) {
                double mn = std::min(p0[a], p1[a]) - rmax;
                double mx = std::max(p0[a], p1[a]) + rmax;
                lo[a] = std::max(0, int(std::floor((mn - v.origin[a]) / voxel_size[a])));
                hi[a] = std::min(dims[a] - 1, int(std::floor((mx - v.origin[a]) / voxel_size[a])));
            }
            for (int z = lo[2]; z <= hi[2]; ++z)
                for (int y = lo[1]; y <= hi[1]; ++y)
                    for (int x = lo[0]; x <= hi[0]; ++x) {
                        Vec3 c = v.voxel_center(x, y, z);
                        double t = len2 > 0 ? std::clamp((c - p0).dot(d) / len2, 0.0, 1.0) : 0.0;
                        Vec3 q = p0 + d * t;
                        double dist = distance(c, q);
                        double rt = r0 + (r1 - r0) * t;
                        if (dist > rt) continue;
                        size_t i = v.idx(x, y, z);
                        float df = float(dist);
                        bool take = df < best_d[i] - 1e-6f ||
                                    (std::fabs(df - best_d[i]) <= 1e-6f && neuron_id < v.neuron_ids[i]);
                        if (v.neuron_ids[i] == 0) take = df <= best_d[i];
                        if (take) {
                            best_d[i] = df;
                            v.neuron_ids[i] = neuron_id;
                            arc_grid[i] = float(arc0 + t * len);
                        }
                    }
            arc0 += len;
        }
    }

    // render: per-neuron interior gray, dark membrane at ownership boundaries,
    // light noisy background
    std::mt19937_64 rng(derive_seed(cfg.seed, "render"));
    std::normal_distribution<double> noise(0, cfg.noise_sigma);
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x) {
                size_t i = v.idx(x, y, z);
                uint32_t id = v.neuron_ids[i];
                double g;
                if (id == 0) {
                    g = cfg.bg_gray + noise(rng);
                } else {
                    bool boundary = false;
                    const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
                    for (const auto& o : off) {
                        int nx = x + o[0], ny = y + o[1], nz = z + o[2];
                        if (!v.in_bounds(nx, ny, nz)) continue;
                        if (v.neuron_ids[v.idx(nx, ny, nz)] != id) {
                            boundary = true;
                            break;
                        }
                    }
                    if (boundary) {
                        g = cfg.membrane_gray + 0.5 * noise(rng);
                    } else {
                        double density =
                            cfg.speckle_density_min + (cfg.speckle_density_max - cfg.speckle_density_min) *
                                                          u01(hash_combine(cfg.seed * 3 + 1, id));
                        bool dot = u01(hash_combine(hash_combine(cfg.seed, uint64_t(i)), id)) < density;
                        g = cfg.interior_base + cfg.interior_span * u01(hash_combine(cfg.seed, id)) +
                            density * cfg.speckle_amp + (dot ? -cfg.speckle_amp : 0.0) + noise(rng);
                    }
                }
                v.image[i] = quantize(g);
            }

    if (aux) aux->arc = std::move(arc_grid);
    return v;
}

namespace {

// Interpolated point at arc length s along the node polyline.
Vec3 point_at_arc(const geom::Skeleton& skel, double s) {
    double acc = 0;
    for (size_t e = 0; e + 1 < skel.nodes.size(); ++e) {
        double len = distance(skel.nodes[e].pos, skel.nodes[e + 1].pos);
        if (acc + len >= s || e + 2 == skel.nodes.size()) {
            double t = len > 0 ? std::clamp((s - acc) / len, 0.0, 1.0) : 0.0;
            return skel.nodes[e].pos + (skel.nodes[e + 1].pos - skel.nodes[e].pos) * t;
        }
        acc += len;
    }
    return skel.nodes.front().pos;
}

}  // namespace

std::vector<TruePair> oversegment(LabeledVolume& v, const VoxelizeAux& aux,
                                  const std::vector<geom::Skeleton>& neurons, const SynthConfig& cfg,
                                  const std::vector<std::vector<double>>* forced_cuts) {
    if (aux.arc.size() != v.voxel_count()) fail("bad-argument", "oversegment: aux grid size mismatch");
    std::mt19937_64 rng(derive_seed(cfg.seed, "cuts"));
    std::uniform_real_distribution<double> u(0, 1);

    std::vector<std::vector<double>> cuts(neurons.size());
    for (size_t ni = 0; ni < neurons.size(); ++ni) {
        double length = neurons[ni].total_length();
        if (forced_cuts) {
            if (ni < forced_cuts->size()) cuts[ni] = (*forced_cuts)[ni];
        } else {
            double usable = length - 2 * cfg.cut_end_margin_nm;
            // damaged sections sever every tube crossing them
            if (cfg.cut_at_artifacts && usable > 0) {
                for (const Artifact& a : cfg.artifacts) {
                    double plane_z = (a.z + 0.5) * v.voxel_size.z + v.origin.z;
                    double acc = 0;
                    for (size_t e = 0; e + 1 < neurons[ni].nodes.size(); ++e) {
                        const Vec3& p0 = neurons[ni].nodes[e].pos;
                        const Vec3& p1 = neurons[ni].nodes[e + 1].pos;
                        double len = distance(p0, p1);
                        if ((p0.z - plane_z) * (p1.z - plane_z) < 0 && len > 0) {
                            double t = (plane_z - p0.z) / (p1.z - p0.z);
                            double arc = acc + t * len;
                            bool ok = arc >= cfg.cut_end_margin_nm && arc <= length - cfg.cut_end_margin_nm;
                            for (double c : cuts[ni])
                                if (std::abs(c - arc) < cfg.min_cut_gap_nm) ok = false;
                            if (ok) cuts[ni].push_back(arc);
                        }
                        acc += len;
                    }
                }
                std::sort(cuts[ni].begin(), cuts[ni].end());
            }
            if (usable > 0 && cfg.cut_rate_per_um > 0) {
                std::poisson_distribution<int> pois(cfg.cut_rate_per_um * length / 1000.0);
                int k = pois(rng);
                std::vector<double> pos(k);
                for (int j = 0; j < k; ++j) pos[j] = cfg.cut_end_margin_nm + usable * u(rng);
                std::sort(pos.begin(), pos.end());
                for (double p : pos) {
                    bool ok = true;
                    for (double c : cuts[ni])
                        if (std::abs(c - p) < cfg.min_cut_gap_nm) ok = false;
                    if (ok) cuts[ni].push_back(p);
                }
            }
        }
        std::sort(cuts[ni].begin(), cuts[ni].end());
    }

    // Assign segment ids, dropping any cut that yields an empty side until the
    // partition is stable.
    std::vector<uint32_t> base(neurons.size() + 1, 0);
    for (bool stable = false; !stable;) {
        uint32_t next = 1;
        for (size_t ni = 0; ni < neurons.size(); ++ni) {
            base[ni] = next;
            next += uint32_t(cuts[ni].size()) + 1;
        }
        base[neurons.size()] = next;
        std::vector<int64_t> counts(next, 0);
        size_t total = v.voxel_count();
        for (size_t i = 0; i < total; ++i) {
            uint32_t neuron = v.neuron_ids[i];
            if (neuron == 0) {
                v.segment_ids[i] = 0;
                continue;
            }
            const auto& c = cuts[neuron - 1];
            size_t interval = std::upper_bound(c.begin(), c.end(), double(aux.arc[i])) - c.begin();
            uint32_t seg = base[neuron - 1] + uint32_t(interval);
            v.segment_ids[i] = seg;
            counts[seg]++;
        }
        stable = true;
        for (size_t ni = 0; ni < neurons.size() && stable; ++ni) {
            for (size_t j = 0; j <= cuts[ni].size(); ++j) {
                if (counts[base[ni] + j] == 0) {
                    size_t drop = j == 0 ? 0 : j - 1;  // merge empty interval into a neighbor
                    cuts[ni].erase(cuts[ni].begin() + drop);
                    stable = false;
                    break;
                }
            }
        }
    }

    std::vector<TruePair> pairs;
    for (size_t ni = 0; ni < neurons.size(); ++ni)
        for (size_t j = 0; j < cuts[ni].size(); ++j)
            pairs.push_back({base[ni] + uint32_t(j), base[ni] + uint32_t(j) + 1,
                             point_at_arc(neurons[ni], cuts[ni][j]), uint32_t(ni) + 1});
    return pairs;
}

Vec3 misaligned_position(const Vec3& p, const std::vector<Artifact>& artifacts, const Vec3& voxel_size) {
    Vec3 out = p;
    for (const Artifact& a : artifacts) {
        if (a.kind != Artifact::Misalignment) continue;
        int z = int(std::floor(out.z / voxel_size.z));
        if (z < a.z) continue;
        out.x += std::lround(a.shift_nm.x / voxel_size.x) * voxel_size.x;
        out.y += std::lround(a.shift_nm.y / voxel_size.y) * voxel_size.y;
    }
    return out;
}

void shift_skeletons_for_artifacts(std::vector<geom::Skeleton>& neurons, const std::vector<Artifact>& artifacts,
                                   const Vec3& voxel_size) {
    for (auto& skel : neurons)
        for (auto& node : skel.nodes) node.pos = misaligned_position(node.pos, artifacts, voxel_size);
}

LabeledVolume degrade(const LabeledVolume& src, const std::vector<Artifact>& artifacts, uint64_t seed) {
    LabeledVolume v = src;
    std::mt19937_64 rng(derive_seed(seed, "degrade"));
    std::normal_distribution<double> noise(0, 0.05);
    const double bg = 0.84;

    for (const Artifact& a : artifacts) {
        if (a.z < 0 || a.z >= v.dims[2]) fail("bad-argument", "artifact z index out of range");
        if (a.kind == Artifact::MissingSection) {
            for (int y = 0; y < v.dims[1]; ++y)
                for (int x = 0; x < v.dims[0]; ++x)
                    v.image[v.idx(x, y, a.z)] = quantize(bg + noise(rng));
        } else {
            int sx = int(std::lround(a.shift_nm.x / v.voxel_size.x));
            int sy = int(std::lround(a.shift_nm.y / v.voxel_size.y));
            if (std::abs(sx) >= v.dims[0] || std::abs(sy) >= v.dims[1])
                fail("bad-argument", "misalignment shift exceeds volume extent");
            for (int z = a.z; z < v.dims[2]; ++z) {
                std::vector<uint8_t> img_row(v.image.begin() + v.idx(0, 0, z),
                                             v.image.begin() + v.idx(0, 0, z) + size_t(v.dims[0]) * v.dims[1]);
                std::vector<uint32_t> seg_row(v.segment_ids.begin() + v.idx(0, 0, z),
                                              v.segment_ids.begin() + v.idx(0, 0, z) +
                                                  size_t(v.dims[0]) * v.dims[1]);
                std::vector<uint32_t> neu_row(v.neuron_ids.begin() + v.idx(0, 0, z),
                                              v.neuron_ids.begin() + v.idx(0, 0, z) +
                                                  size_t(v.dims[0]) * v.dims[1]);
                for (int y = 0; y < v.dims[1]; ++y)
                    for (int x = 0; x < v.dims[0]; ++x) {
                        int ox = x - sx, oy = y - sy;
                        size_t dst = v.idx(x, y, z);
                        if (ox >= 0 && oy >= 0 && ox < v.dims[0] && oy < v.dims[1]) {
                            size_t s = size_t(ox) + size_t(v.dims[0]) * oy;
                            v.image[dst] = img_row[s];
                            v.segment_ids[dst] = seg_row[s];
                            v.neuron_ids[dst] = neu_row[s];
                        } else {
                            v.image[dst] = quantize(bg + noise(rng));
                            v.segment_ids[dst] = 0;
                            v.neuron_ids[dst] = 0;
                        }
                    }
            }
        }
    }
    return v;
}

}  // namespace neutrace::synth
