#include "neutrace/registration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace neutrace::reg {

Assignment assign_nodes(const geom::Skeleton& skel, const LabeledVolume& v, int search_radius_vox) {
    Assignment a;
    a.node_seg.assign(skel.nodes.size(), 0);
    for (size_t ni = 0; ni < skel.nodes.size(); ++ni) {
        auto [x, y, z] = v.voxel_of(skel.nodes[ni].pos);
        if (!v.in_bounds(x, y, z)) continue;  // outside volume: unassigned
        uint32_t direct = v.segment_ids[v.idx(x, y, z)];
        if (direct != 0) {
            a.node_seg[ni] = direct;
            continue;
        }
        // nearest labeled voxel within the search radius, expanding shells;
        // distance measured in voxel units, ties to the lower segment id
        double best_d2 = std::numeric_limits<double>::infinity();
        uint32_t best_seg = 0;
        for (int r = 1; r <= search_radius_vox; ++r) {
            if (double(r) * r > best_d2) break;
            for (int dz = -r; dz <= r; ++dz)
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
                        int nx = x + dx, ny = y + dy, nz = z + dz;
                        if (!v.in_bounds(nx, ny, nz)) continue;
                        uint32_t seg = v.segment_ids[v.idx(nx, ny, nz)];
                        if (seg == 0) continue;
                        double d2 = double(dx) * dx + double(dy) * dy + double(dz) * dz;
                        if (d2 < best_d2 - 1e-12 || (std::fabs(d2 - best_d2) <= 1e-12 && seg < best_seg)) {
                            best_d2 = d2;
                            best_seg = seg;
                        }
                    }
        }
        if (best_d2 <= double(search_radius_vox) * search_radius_vox) a.node_seg[ni] = best_seg;
    }
    return a;
}

SliceCentroids build_slice_centroids(const LabeledVolume& v) {
    SliceCentroids out;
    const int W = v.dims[0], H = v.dims[1], D = v.dims[2];
    std::vector<int> comp(size_t(W) * H);
    std::vector<int> parent;
    std::function<int(int)> find = [&](int i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    };
    struct Acc {
        uint32_t seg;
        double sx = 0, sy = 0, sz = 0;
        int64_t n = 0;
    };
    for (int z = 0; z < D; ++z) {
        std::fill(comp.begin(), comp.end(), -1);
        parent.clear();
        // two-pass 4-connected labeling within the slice, per segment id
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                uint32_t seg = v.segment_ids[v.idx(x, y, z)];
                if (seg == 0) continue;
                size_t p = size_t(y) * W + x;
                int left = (x > 0 && v.segment_ids[v.idx(x - 1, y, z)] == seg) ? comp[p - 1] : -1;
                int up = (y > 0 && v.segment_ids[v.idx(x, y - 1, z)] == seg) ? comp[p - W] : -1;
                if (left < 0 && up < 0) {
                    comp[p] = int(parent.size());
                    parent.push_back(comp[p]);
                } else if (left >= 0 && up < 0) {
                    comp[p] = find(left);
                } else if (left < 0) {
                    comp[p] = find(up);
                } else {
                    int a = find(left), b = find(up);
                    comp[p] = a;
                    if (a != b) parent[std::max(a, b)] = std::min(a, b);
                }
            }
        std::map<std::pair<uint32_t, int>, Acc> accs;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                uint32_t seg = v.segment_ids[v.idx(x, y, z)];
                if (seg == 0) continue;
                int root = find(comp[size_t(y) * W + x]);
                Acc& acc = accs[{seg, root}];
                acc.seg = seg;
                Vec3 c = v.voxel_center(x, y, z);
                acc.sx += c.x;
                acc.sy += c.y;
                acc.sz += c.z;
                acc.n++;
            }
        for (auto& [key, acc] : accs)
            out.by_segment[key.first].push_back({acc.sx / acc.n, acc.sy / acc.n, acc.sz / acc.n});
    }
    return out;
}

namespace {

geom::PointSet densified_positions(const geom::Skeleton& skel, double step_nm) {
    geom::PointSet pts = skel.positions();
    if (step_nm <= 0) return pts;
    for (auto [c, p] : skel.edge_indices()) {
        Vec3 a = skel.nodes[p].pos, b = skel.nodes[c].pos;
        double len = distance(a, b);
        for (double s = step_nm; s < len; s += step_nm) pts.push_back(a + (b - a) * (s / len));
    }
    return pts;
}

}  // namespace

Assignment filter_assignments(const geom::Skeleton& skel, const Assignment& a, const SliceCentroids& centroids,
                              double densify_step_nm) {
    Assignment out = a;
    geom::PointSet t_neu = densified_positions(skel, densify_step_nm);
    std::map<uint32_t, std::vector<size_t>> omega;  // segment -> node indices
    for (size_t i = 0; i < a.node_seg.size(); ++i)
        if (a.node_seg[i] != 0) omega[a.node_seg[i]].push_back(i);
    for (const auto& [seg, node_idxs] : omega) {
        double r_bar = 0;
        geom::PointSet t_s;
        for (size_t i : node_idxs) {
            r_bar += skel.nodes[i].radius;
            t_s.push_back(skel.nodes[i].pos);
        }
        r_bar /= double(node_idxs.size());
        if (const std::vector<Vec3>* cs = centroids.find(seg))
            t_s.insert(t_s.end(), cs->begin(), cs->end());
        if (geom::directed_chamfer(t_s, t_neu) > 2.0 * r_bar)
            for (size_t i : node_idxs) out.node_seg[i] = 0;
    }
    return out;
}

std::vector<BridgingEdge> extract_bridging_edges(const geom::Skeleton& skel, const Assignment& a,
                                                 const LabeledVolume& v, double shift_sigma_nm, uint64_t seed) {
    std::vector<BridgingEdge> out;
    Vec3 ext = v.extent_nm();
    for (auto [child, parent] : skel.edge_indices()) {
        uint32_t sa = a.node_seg[parent], sb = a.node_seg[child];
        if (sa == 0 || sb == 0 || sa == sb) continue;
        BridgingEdge e;
        e.node_i = skel.nodes[parent].id;
        e.node_j = skel.nodes[child].id;
        e.seg_a = sa;
        e.seg_b = sb;
        e.midpoint = (skel.nodes[parent].pos + skel.nodes[child].pos) * 0.5;
        Vec3 shift{0, 0, 0};
        if (shift_sigma_nm > 0) {
            std::mt19937_64 rng(hash_combine(seed, hash_combine(uint64_t(e.node_i), uint64_t(e.node_j))));
            std::normal_distribution<double> n(0, shift_sigma_nm);
            shift = {n(rng), n(rng), n(rng)};
        }
        for (int axis = 0; axis < 3; ++axis)
            e.truncation[axis] =
                std::clamp(e.midpoint[axis] + shift[axis], v.origin[axis], v.origin[axis] + ext[axis] - 1e-6);
        out.push_back(e);
    }
    return out;
}

std::vector<CandidatePair> sample_pairs(const std::vector<BridgingEdge>& edges, const LabeledVolume& v,
                                        const SegmentTable& table, const Vec3& cube_nm,
                                        int negatives_per_positive, uint64_t seed) {
    std::vector<CandidatePair> out;
    for (const BridgingEdge& e : edges) {
        out.push_back({e.seg_a, e.seg_b, e.truncation, 1, {0, 0, 0}});
        if (negatives_per_positive <= 0) continue;

        auto [cx, cy, cz] = v.voxel_of(e.truncation);
        int rx = std::max(0, int(std::lround(cube_nm.x * 0.5 / v.voxel_size.x)));
        int ry = std::max(0, int(std::lround(cube_nm.y * 0.5 / v.voxel_size.y)));
        int rz = std::max(0, int(std::lround(cube_nm.z * 0.5 / v.voxel_size.z)));
        std::set<uint32_t> in_cube;
        for (int z = std::max(0, cz - rz); z <= std::min(v.dims[2] - 1, cz + rz); ++z)
            for (int y = std::max(0, cy - ry); y <= std::min(v.dims[1] - 1, cy + ry); ++y)
                for (int x = std::max(0, cx - rx); x <= std::min(v.dims[0] - 1, cx + rx); ++x) {
                    uint32_t seg = v.segment_ids[v.idx(x, y, z)];
                    if (seg != 0) in_cube.insert(seg);
                }
        uint32_t query_neuron = table.neuron_of(e.seg_a);
        std::vector<uint32_t> eligible;
        for (uint32_t seg : in_cube) {
            if (seg == e.seg_a || seg == e.seg_b) continue;
            if (query_neuron != 0 && table.neuron_of(seg) == query_neuron) continue;
            eligible.push_back(seg);
        }
        std::mt19937_64 rng(hash_combine(seed, hash_combine(uint64_t(e.node_i), ~uint64_t(e.node_j))));
        std::shuffle(eligible.begin(), eligible.end(), rng);
        int take = std::min<int>(negatives_per_positive, int(eligible.size()));
        for (int i = 0; i < take; ++i) out.push_back({e.seg_a, eligible[i], e.truncation, 0, {0, 0, 0}});
    }
    return out;
}

std::map<BlockId, std::vector<CandidatePair>> partition_blocks(const std::vector<CandidatePair>& pairs,
                                                               const Vec3& block_size_nm, int min_positives) {
    std::map<BlockId, std::vector<CandidatePair>> buckets;
    for (const CandidatePair& p : pairs) {
        BlockId id{int(std::floor(p.truncation.x / block_size_nm.x)),
                   int(std::floor(p.truncation.y / block_size_nm.y)),
                   int(std::floor(p.truncation.z / block_size_nm.z))};
        CandidatePair stamped = p;
        stamped.block = id;
        buckets[id].push_back(stamped);
    }
    for (auto it = buckets.begin(); it != buckets.end();) {
        int positives = 0;
        for (const CandidatePair& p : it->second) positives += p.label;
        if (positives < min_positives)
            it = buckets.erase(it);
        else
            ++it;
    }
    return buckets;
}

void save_pairs(const std::string& path, const std::vector<CandidatePair>& pairs, uint64_t config_hash) {
    std::ofstream out(path);
    if (!out) fail("io-error", "cannot open " + path);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "# neutrace pairs v1 config=%016llx\n", (unsigned long long)config_hash);
    out << buf << "# seg_a seg_b cx cy cz label block_x block_y block_z\n";
    for (const CandidatePair& p : pairs) {
        std::snprintf(buf, sizeof(buf), "%u %u %.3f %.3f %.3f %d %d %d %d\n", p.seg_a, p.seg_b, p.truncation.x,
                      p.truncation.y, p.truncation.z, p.label, p.block[0], p.block[1], p.block[2]);
        out << buf;
    }
    if (!out) fail("io-error", "write failed: " + path);
}

std::vector<CandidatePair> load_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("io-error", "cannot open " + path);
    std::vector<CandidatePair> pairs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        CandidatePair p;
        if (!(ls >> p.seg_a >> p.seg_b >> p.truncation.x >> p.truncation.y >> p.truncation.z >> p.label >>
              p.block[0] >> p.block[1] >> p.block[2]))
            fail("bad-format", "malformed pair record at " + path + ":" + std::to_string(line_no));
        pairs.push_back(p);
    }
    return pairs;
}

std::vector<CandidatePair> build_candidate_pairs(const std::vector<geom::Skeleton>& skeletons,
                                                 const LabeledVolume& v, const RegisterConfig& cfg,
                                                 uint64_t seed) {
    SegmentTable table = build_segment_table(v);
    SliceCentroids centroids = build_slice_centroids(v);
    std::vector<CandidatePair> all;
    for (size_t si = 0; si < skeletons.size(); ++si) {
        Assignment a = assign_nodes(skeletons[si], v, cfg.search_radius_vox);
        a = filter_assignments(skeletons[si], a, centroids, cfg.densify_step_nm);
        auto edges = extract_bridging_edges(skeletons[si], a, v, cfg.shift_sigma_nm,
                                            hash_combine(seed, uint64_t(si)));
        auto pairs = sample_pairs(edges, v, table, cfg.cube_nm, cfg.negatives_per_positive,
                                  hash_combine(seed, ~uint64_t(si)));
        all.insert(all.end(), pairs.begin(), pairs.end());
    }
    auto blocks = partition_blocks(all, cfg.block_size_nm, cfg.min_block_positives);
    std::vector<CandidatePair> kept;
    for (auto& [id, pairs] : blocks) kept.insert(kept.end(), pairs.begin(), pairs.end());
    return kept;
}

}  // namespace neutrace::reg
