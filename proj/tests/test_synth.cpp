#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "neutrace/synth.hpp"

using namespace neutrace;
using namespace neutrace::synth;

namespace {

SynthConfig small_config(uint64_t seed) {
    SynthConfig cfg;
    cfg.neuron_count = 5;
    cfg.cable_min_um = 2;
    cfg.cable_max_um = 4;
    cfg.seed = seed;
    return cfg;
}

const std::array<int, 3> kDims{128, 128, 48};
const Vec3 kVox{16, 16, 40};

}  // namespace

TEST_CASE("generate_neurons count and determinism") {
    SynthConfig cfg = small_config(3);
    cfg.neuron_count = 0;
    CHECK(generate_neurons(cfg, kDims, kVox).empty());

    cfg.neuron_count = 1;
    auto a = generate_neurons(cfg, kDims, kVox);
    auto b = generate_neurons(cfg, kDims, kVox);
    REQUIRE(a.size() == 1);
    REQUIRE(b.size() == 1);
    REQUIRE(a[0].nodes.size() == b[0].nodes.size());
    for (size_t i = 0; i < a[0].nodes.size(); ++i) {
        CHECK(a[0].nodes[i].pos.x == b[0].nodes[i].pos.x);
        CHECK(a[0].nodes[i].radius == b[0].nodes[i].radius);
    }
}

TEST_CASE("generate_neurons keeps nodes in bounds") {
    SynthConfig cfg = small_config(17);
    auto neurons = generate_neurons(cfg, kDims, kVox);
    REQUIRE(neurons.size() == 5);
    Vec3 ext{kDims[0] * kVox.x, kDims[1] * kVox.y, kDims[2] * kVox.z};
    for (const auto& skel : neurons)
        for (const auto& n : skel.nodes)
            for (int a = 0; a < 3; ++a) {
                CHECK(n.pos[a] >= n.radius);
                CHECK(n.pos[a] <= ext[a] - n.radius);
            }
}

TEST_CASE("generate_neurons rejects infeasible volumes") {
    SynthConfig cfg = small_config(1);
    CHECK_THROWS_WITH_AS(generate_neurons(cfg, {8, 8, 4}, kVox), doctest::Contains("extent"), Error);
}

TEST_CASE("voxelize with no neurons leaves labels empty") {
    SynthConfig cfg = small_config(1);
    LabeledVolume v = voxelize({}, kDims, kVox, cfg);
    for (uint32_t id : v.neuron_ids) CHECK(id == 0);
}

TEST_CASE("voxelize straight tube yields a near-disk cross-section") {
    // centerline along z through a voxel-center column, radius 4 voxels (64nm)
    geom::Skeleton tube;
    double cx = (48 + 0.5) * 16, cy = (48 + 0.5) * 16;
    for (int i = 0; i < 30; ++i)
        tube.nodes.push_back({i + 1, {cx, cy, 100.0 + i * 120.0}, 64.0, i == 0 ? -1 : i});
    tube.validate();
    SynthConfig cfg = small_config(1);
    LabeledVolume v = voxelize({tube}, kDims, kVox, cfg);
    int z_mid = 20;  // within the tube's z extent
    int64_t area = 0;
    for (int y = 0; y < v.dims[1]; ++y)
        for (int x = 0; x < v.dims[0]; ++x) area += v.neuron_ids[v.idx(x, y, z_mid)] == 1;
    double expected = 3.14159265358979 * 4.0 * 4.0;
    CHECK(area > expected * 0.8);
    CHECK(area < expected * 1.2);
}

TEST_CASE("voxelize: distant parallel tubes own their voxels unambiguously") {
    geom::Skeleton a, b;
    for (int i = 0; i < 20; ++i) {
        a.nodes.push_back({i + 1, {400, 400, 150.0 + i * 120}, 80, i == 0 ? -1 : i});
        b.nodes.push_back({i + 1, {1100, 1100, 150.0 + i * 120}, 80, i == 0 ? -1 : i});
    }
    a.validate();
    b.validate();
    SynthConfig cfg = small_config(1);
    LabeledVolume v = voxelize({a, b}, kDims, kVox, cfg);
    int64_t na = 0, nb = 0;
    for (int z = 0; z < v.dims[2]; ++z)
        for (int y = 0; y < v.dims[1]; ++y)
            for (int x = 0; x < v.dims[0]; ++x) {
                uint32_t id = v.neuron_ids[v.idx(x, y, z)];
                if (id == 0) continue;
                Vec3 c = v.voxel_center(x, y, z);
                double da = std::hypot(c.x - 400, c.y - 400);
                double db = std::hypot(c.x - 1100, c.y - 1100);
                CHECK((id == 1 ? da < db : db < da));
                (id == 1 ? na : nb)++;
            }
    CHECK(na > 0);
    CHECK(nb > 0);
}

TEST_CASE("oversegment: zero cut rate keeps one segment per neuron") {
    SynthConfig cfg = small_config(9);
    cfg.cut_rate_per_um = 0;
    auto neurons = generate_neurons(cfg, kDims, kVox);
    VoxelizeAux aux;
    LabeledVolume v = voxelize(neurons, kDims, kVox, cfg, &aux);
    auto pairs = oversegment(v, aux, neurons, cfg);
    CHECK(pairs.empty());
    std::set<uint32_t> segs;
    for (uint32_t s : v.segment_ids)
        if (s) segs.insert(s);
    CHECK(segs.size() == neurons.size());
}

TEST_CASE("oversegment: one forced cut gives two segments and one pair") {
    SynthConfig cfg = small_config(4);
    cfg.neuron_count = 1;
    auto neurons = generate_neurons(cfg, kDims, kVox);
    VoxelizeAux aux;
    LabeledVolume v = voxelize(neurons, kDims, kVox, cfg, &aux);
    std::vector<std::vector<double>> cuts{{neurons[0].total_length() / 2}};
    auto pairs = oversegment(v, aux, neurons, cfg, &cuts);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].seg_a == 1);
    CHECK(pairs[0].seg_b == 2);
    std::set<uint32_t> segs;
    for (uint32_t s : v.segment_ids)
        if (s) segs.insert(s);
    CHECK(segs == std::set<uint32_t>{1, 2});
}

TEST_CASE("oversegment: segments = pairs + neurons, map is a function") {
    for (uint64_t seed : {21u, 22u, 23u, 24u}) {
        SynthConfig cfg = small_config(seed);
        cfg.cut_rate_per_um = 1.2;
        auto neurons = generate_neurons(cfg, kDims, kVox);
        VoxelizeAux aux;
        LabeledVolume v = voxelize(neurons, kDims, kVox, cfg, &aux);
        auto pairs = oversegment(v, aux, neurons, cfg);
        std::set<uint32_t> segs;
        for (uint32_t s : v.segment_ids)
            if (s) segs.insert(s);
        CHECK(segs.size() == pairs.size() + neurons.size());
        CHECK_NOTHROW(build_segment_table(v));  // fails if a segment spans two neurons
        for (const auto& p : pairs) CHECK(p.seg_b == p.seg_a + 1);
    }
}

TEST_CASE("degrade: empty artifact list is identity") {
    SynthConfig cfg = small_config(2);
    auto neurons = generate_neurons(cfg, kDims, kVox);
    LabeledVolume v = voxelize(neurons, kDims, kVox, cfg);
    LabeledVolume w = degrade(v, {}, 1);
    CHECK(w.image == v.image);
    CHECK(w.segment_ids == v.segment_ids);
}

TEST_CASE("degrade: missing section touches only its image slice") {
    SynthConfig cfg = small_config(2);
    auto neurons = generate_neurons(cfg, kDims, kVox);
    VoxelizeAux aux;
    LabeledVolume v = voxelize(neurons, kDims, kVox, cfg, &aux);
    oversegment(v, aux, neurons, cfg);
    Artifact a;
    a.kind = Artifact::MissingSection;
    a.z = 5;
    LabeledVolume w = degrade(v, {a}, 1);
    CHECK(w.segment_ids == v.segment_ids);
    CHECK(w.neuron_ids == v.neuron_ids);
    bool slice_changed = false;
    for (int z = 0; z < v.dims[2]; ++z) {
        bool same = true;
        for (int y = 0; y < v.dims[1] && same; ++y)
            for (int x = 0; x < v.dims[0] && same; ++x)
                same = w.image[v.idx(x, y, z)] == v.image[v.idx(x, y, z)];
        if (z == 5)
            slice_changed = !same;
        else
            CHECK(same);
    }
    CHECK(slice_changed);
}

TEST_CASE("degrade: misalignment translates image and labels together") {
    SynthConfig cfg = small_config(6);
    auto neurons = generate_neurons(cfg, kDims, kVox);
    VoxelizeAux aux;
    LabeledVolume v = voxelize(neurons, kDims, kVox, cfg, &aux);
    oversegment(v, aux, neurons, cfg);
    Artifact a;
    a.kind = Artifact::Misalignment;
    a.z = 8;
    a.shift_nm = {400, 0, 0};
    LabeledVolume w = degrade(v, {a}, 1);
    int sx = 25;  // round(400 / 16)
    for (int z = 0; z < v.dims[2]; ++z)
        for (int y = 0; y < v.dims[1]; ++y)
            for (int x = 0; x < v.dims[0]; ++x) {
                size_t dst = v.idx(x, y, z);
                if (z < 8) {
                    CHECK(w.image[dst] == v.image[dst]);
                    CHECK(w.segment_ids[dst] == v.segment_ids[dst]);
                } else if (x - sx >= 0) {
                    CHECK(w.image[dst] == v.image[v.idx(x - sx, y, z)]);
                    CHECK(w.segment_ids[dst] == v.segment_ids[v.idx(x - sx, y, z)]);
                    CHECK(w.neuron_ids[dst] == v.neuron_ids[v.idx(x - sx, y, z)]);
                } else {
                    CHECK(w.segment_ids[dst] == 0);
                }
            }
    CHECK_THROWS_AS(degrade(v, {{Artifact::Misalignment, 8, {99999, 0, 0}}}, 1), Error);
    CHECK_THROWS_AS(degrade(v, {{Artifact::MissingSection, 999, {}}}, 1), Error);
}

TEST_CASE("volume grid files round-trip") {
    SynthConfig cfg = small_config(13);
    auto neurons = generate_neurons(cfg, kDims, kVox);
    VoxelizeAux aux;
    LabeledVolume v = voxelize(neurons, kDims, kVox, cfg, &aux);
    oversegment(v, aux, neurons, cfg);
    std::string dir = (std::filesystem::temp_directory_path() / "nt_volio_test").string();
    save_volume(dir, v, 0xabcdef);
    LabeledVolume back = load_volume(dir);
    CHECK(back.dims == v.dims);
    CHECK(back.voxel_size.x == doctest::Approx(v.voxel_size.x));
    CHECK(back.image == v.image);
    CHECK(back.segment_ids == v.segment_ids);
    CHECK(back.neuron_ids == v.neuron_ids);
    std::filesystem::remove_all(dir);
}

TEST_CASE("pipeline is bit-deterministic in the seed") {
    SynthConfig cfg = small_config(31);
    auto run = [&] {
        auto neurons = generate_neurons(cfg, kDims, kVox);
        VoxelizeAux aux;
        LabeledVolume v = voxelize(neurons, kDims, kVox, cfg, &aux);
        oversegment(v, aux, neurons, cfg);
        return v;
    };
    LabeledVolume a = run(), b = run();
    CHECK(a.image == b.image);
    CHECK(a.segment_ids == b.segment_ids);
}
