#include <doctest.h>

#include <random>
#include <sstream>

#include "neutrace/embed/train.hpp"
#include "neutrace/synth.hpp"

using namespace neutrace;
using namespace neutrace::embed;

TEST_CASE("segment_mean: constant field, two voxels, random oracle") {
    nn::Tensor64 field({1, 2, 4, 3});
    field.fill(2.5);
    Mask m{0, 3, 5};
    auto mu = segment_mean(field, m);
    for (double v : mu) CHECK(v == 2.5);

    nn::Tensor64 f2({1, 1, 2, 2});
    f2.data = {0, 0, 2, 0};
    auto mu2 = segment_mean(f2, Mask{0, 1});
    CHECK(mu2[0] == 1.0);
    CHECK(mu2[1] == 0.0);

    std::mt19937_64 rng(5);
    nn::Tensor64 f3({2, 3, 3, 4});
    nn::fill_uniform(f3, rng, -2.0, 2.0);
    Mask m3{1, 4, 7, 11, 17};
    auto mu3 = segment_mean(f3, m3);
    for (int c = 0; c < 4; ++c) {
        double s = 0;
        for (int64_t p : m3) s += f3.data[p * 4 + c];
        CHECK(mu3[c] == doctest::Approx(s / 5).epsilon(1e-12));
    }
    CHECK_THROWS_AS(segment_mean(f3, Mask{}), Error);
}

TEST_CASE("merge_split_loss identities") {
    std::vector<double> a{0.4, -1.2, 3.0};
    auto r = merge_split_loss<double>(a, a, {}, 1.5);
    CHECK(r.merge == 0);
    CHECK(r.split == 0);

    // saturated hinge: all negatives at least 2*delta_d away from both ends
    std::vector<double> far{100, 100, 100};
    auto r2 = merge_split_loss<double>(a, a, {far}, 1.5);
    CHECK(r2.split == 0);

    // coincident means, delta_d = 1.5, n = 1: split = 3^2 + 3^2 = 18
    auto r3 = merge_split_loss<double>(a, a, {a}, 1.5);
    CHECK(r3.merge == 0);
    CHECK(r3.split == doctest::Approx(18.0));
}

TEST_CASE("merge_split_loss is invariant to negative permutation and averages hinges") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-2, 2);
    std::vector<double> q(5), p(5);
    for (auto& v : q) v = u(rng);
    for (auto& v : p) v = u(rng);
    std::vector<std::vector<double>> negs(6, std::vector<double>(5));
    for (auto& n : negs)
        for (auto& v : n) v = u(rng);
    auto base = merge_split_loss<double>(q, p, negs, 1.5);
    std::vector<std::vector<double>> shuffled = {negs[3], negs[0], negs[5], negs[1], negs[4], negs[2]};
    auto perm = merge_split_loss<double>(q, p, shuffled, 1.5);
    CHECK(base.split == doctest::Approx(perm.split).epsilon(1e-12));
    CHECK(base.merge >= 0);
    CHECK(base.split >= 0);
}

TEST_CASE("seg_cluster_loss: single constant segment reduces to the norm regularizer") {
    nn::Tensor64 field({1, 2, 3, 2});
    for (int64_t p = 0; p < 6; ++p) {
        field.data[p * 2] = 3.0;
        field.data[p * 2 + 1] = 4.0;
    }
    Mask all{0, 1, 2, 3, 4, 5};
    auto t = seg_cluster_loss(field, {all}, 0.5, 1.5, 0.001);
    CHECK(t.internal == 0);
    CHECK(t.external == 0);
    CHECK(t.reg == doctest::Approx(5.0));  // |(3,4)|
    CHECK(t.total == doctest::Approx(0.001 * 5.0));
}

TEST_CASE("seg_cluster_loss saturates with well-separated tight clusters") {
    nn::Tensor64 field({1, 1, 4, 2});
    field.data = {0, 0, 0.1, 0, 10, 10, 10.1, 10};  // two clusters 14+ apart
    auto t = seg_cluster_loss(field, {Mask{0, 1}, Mask{2, 3}}, 0.5, 1.5, 0.001);
    CHECK(t.internal == 0);  // voxels within delta_v of their means
    CHECK(t.external == 0);  // means beyond 2*delta_d
    CHECK(t.reg > 0);
    CHECK_THROWS_AS(seg_cluster_loss(field, {}, 0.5, 1.5, 0.001), Error);
}

TEST_CASE("lambda3 schedule endpoints and midpoint") {
    CHECK(lambda3_at(0, 1000) == doctest::Approx(1.0));
    CHECK(lambda3_at(1000, 1000) == doctest::Approx(0.2));
    CHECK(lambda3_at(500, 1000) == doctest::Approx(0.6));
    CHECK(lambda3_at(2000, 1000) == doctest::Approx(0.2));  // constant after the end
}

TEST_CASE("total_loss combines components, zero in = zero out") {
    LossTerms<double> t;
    LossWeights<double> w;
    CHECK(total_loss(t, w) == 0);
    t.merge = 2;
    t.split = 3;
    t.seg = 5;
    w.lambda1 = 0.1;
    w.lambda2 = 1;
    w.lambda3 = 0.5;
    CHECK(total_loss(t, w) == doctest::Approx(0.2 + 3 + 2.5));
}

TEST_CASE("pessimistic rank") {
    CHECK(pessimistic_rank(1.0, {2, 3, 4}) == 1);             // positive nearest
    CHECK(pessimistic_rank(5.0, std::vector<double>(20, 1)) == 21);  // positive farthest, n=20
    CHECK(pessimistic_rank(2.0, {2.0, 3.0}) == 2);            // tie counts against the positive
}

TEST_CASE("embed net: output shape matches input spatial dims x k, inference deterministic") {
    EmbedNetConfig cfg;
    cfg.k = 6;
    cfg.c0 = 4;
    cfg.c1 = 6;
    cfg.c2 = 8;
    EmbedNet model(cfg, 7);
    nn::Tensor x({5, 13, 11, 1});
    std::mt19937_64 rng(3);
    nn::fill_uniform(x, rng, -1.f, 1.f);
    nn::Tensor f1 = model.forward(x);
    CHECK(f1.shape == std::vector<int>{5, 13, 11, 6});
    nn::Tensor f2 = model.forward(x);
    CHECK(f1.data == f2.data);
    nn::Tensor bad({5, 13, 11, 2});
    CHECK_THROWS_AS(model.forward(bad), Error);
}

namespace {

struct EmbedFixture {
    std::vector<geom::Skeleton> neurons;
    LabeledVolume volume;
    SegmentTable table;
    std::vector<reg::CandidatePair> positives;
};

EmbedFixture make_embed_fixture(uint64_t seed) {
    synth::SynthConfig cfg;
    cfg.neuron_count = 4;
    cfg.cable_min_um = 2;
    cfg.cable_max_um = 4;
    cfg.cut_rate_per_um = 1.0;
    cfg.seed = seed;
    EmbedFixture f;
    f.neurons = synth::generate_neurons(cfg, {128, 128, 40}, {16, 16, 40});
    synth::VoxelizeAux aux;
    f.volume = synth::voxelize(f.neurons, {128, 128, 40}, {16, 16, 40}, cfg, &aux);
    auto truth = synth::oversegment(f.volume, aux, f.neurons, cfg);
    f.table = build_segment_table(f.volume);
    for (const auto& t : truth) f.positives.push_back({t.seg_a, t.seg_b, t.cut_center, 1, {0, 0, 0}});
    return f;
}

EmbedTrainConfig tiny_train_config() {
    EmbedTrainConfig cfg;
    cfg.crop = {17, 17, 5};
    cfg.net.k = 8;
    cfg.net.c0 = 6;
    cfg.net.c1 = 8;
    cfg.net.c2 = 10;
    cfg.n_negatives = 4;
    cfg.batch_size = 1;
    cfg.lr.base_lr = 0.004;
    cfg.lr.warmup_steps = 20;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST_CASE("train_embed: zero steps leaves the checkpoint at initialization") {
    EmbedFixture f = make_embed_fixture(71);
    EmbedTrainConfig cfg = tiny_train_config();
    cfg.steps = 0;
    cfg.lr.total_steps = 1;
    EmbedNet model(cfg.net, 5);
    EmbedNet reference(cfg.net, 5);
    std::vector<TrainVolume> vols{{&f.volume, &f.table, f.positives}};
    train_embed(model, vols, cfg);
    auto pa = model.parameters(), pb = reference.parameters();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor->data == pb[i].tensor->data);
}

TEST_CASE("train_embed overfits one fixed sample: merge loss drops 10x") {
    EmbedFixture f = make_embed_fixture(72);
    EmbedTrainConfig cfg = tiny_train_config();
    cfg.steps = 400;
    cfg.lr.total_steps = 400;
    cfg.lr.warmup_steps = 10;
    cfg.lambda3_start = 0;  // the clustering loss opposes the merge pull by design
    cfg.lambda3_end = 0;
    cfg.augment_rotate = cfg.augment_flip = cfg.augment_rescale = cfg.augment_intensity = false;
    EmbedNet model(cfg.net, 5);
    std::vector<TrainVolume> vols{{&f.volume, &f.table, {f.positives[0]}}};  // one sample
    auto result = train_embed(model, vols, cfg);
    REQUIRE(!result.log.empty());
    double first = result.log.front().merge;
    double last = result.log.back().merge;
    INFO("merge first=", first, " last=", last);
    CHECK(last < first / 10);
}

TEST_CASE("train_embed is bit-deterministic in the seed") {
    EmbedFixture f = make_embed_fixture(73);
    EmbedTrainConfig cfg = tiny_train_config();
    cfg.steps = 4;
    cfg.lr.total_steps = 4;
    auto run = [&] {
        EmbedNet model(cfg.net, 5);
        std::vector<TrainVolume> vols{{&f.volume, &f.table, f.positives}};
        train_embed(model, vols, cfg);
        std::vector<float> flat;
        for (auto& p : model.parameters()) flat.insert(flat.end(), p.tensor->data.begin(), p.tensor->data.end());
        return flat;
    };
    CHECK(run() == run());
}

TEST_CASE("train_embed writes the documented log format") {
    EmbedFixture f = make_embed_fixture(74);
    EmbedTrainConfig cfg = tiny_train_config();
    cfg.steps = 2;
    cfg.lr.total_steps = 2;
    EmbedNet model(cfg.net, 5);
    std::vector<TrainVolume> vols{{&f.volume, &f.table, f.positives}};
    std::ostringstream log;
    write_train_log_header(log, 0xfeed);
    train_embed(model, vols, cfg, &log);
    std::string text = log.str();
    CHECK(text.find("step,L_merge,L_split,L_seg,lambda3,total") != std::string::npos);
    CHECK(text.find("0,") != std::string::npos);
}

TEST_CASE("compute_field covers the volume deterministically") {
    EmbedFixture f = make_embed_fixture(75);
    EmbedNetConfig ncfg;
    ncfg.k = 4;
    ncfg.c0 = 4;
    ncfg.c1 = 6;
    ncfg.c2 = 8;
    EmbedNet model(ncfg, 9);
    EmbeddingField a = compute_field(model, f.volume, {32, 32, 16}, {4, 4, 1});
    CHECK(a.dims == f.volume.dims);
    CHECK(a.k == 4);
    EmbeddingField b = compute_field(model, f.volume, {32, 32, 16}, {4, 4, 1});
    CHECK(a.values == b.values);
    for (float v : a.values) CHECK(std::isfinite(v));
}

TEST_CASE("neighborhood_mean matches the brute-force window average, including borders") {
    EmbeddingField f;
    f.dims = {6, 5, 4};
    f.k = 3;
    f.origin_vox = {10, 20, 2};
    f.values.resize(size_t(6) * 5 * 4 * 3);
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<float> u(-1, 1);
    for (auto& v : f.values) v = u(rng);

    auto oracle = [&](int vx, int vy, int vz) {
        std::vector<double> acc(3, 0);
        int64_t n = 0;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -3; dy <= 3; ++dy)
                for (int dx = -3; dx <= 3; ++dx) {
                    int x = vx - 10 + dx, y = vy - 20 + dy, z = vz - 2 + dz;
                    if (x < 0 || y < 0 || z < 0 || x >= 6 || y >= 5 || z >= 4) continue;
                    for (int c = 0; c < 3; ++c) acc[c] += f.values[f.pos_index(x, y, z) * 3 + c];
                    n++;
                }
        for (auto& v : acc) v /= double(n);
        return acc;
    };
    for (auto [vx, vy, vz] : {std::array<int, 3>{10, 20, 2}, {15, 24, 5}, {12, 22, 3}, {10, 24, 5}}) {
        auto got = neighborhood_mean(f, vx, vy, vz, 3, 3, 1);
        auto want = oracle(vx, vy, vz);
        for (int c = 0; c < 3; ++c) CHECK(got[c] == doctest::Approx(want[c]).epsilon(1e-5));
    }
}
