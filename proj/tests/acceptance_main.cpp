// Acceptance suite: runs every acceptance criterion end to end and prints one
// pass/fail line per criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cstdarg>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <queue>
#include <random>
#include <set>
#include <sstream>

#include "neutrace/connect/train.hpp"
#include "neutrace/embed/train.hpp"
#include "neutrace/eval/metrics.hpp"
#include "neutrace/nn/gradcheck.hpp"
#include "neutrace/pipeline.hpp"
#include "neutrace/registration.hpp"
#include "neutrace/synth.hpp"

using namespace neutrace;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const char* name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s — %s\n", pass ? "PASS" : "FAIL", criterion, name, detail.c_str());
    std::fflush(stdout);
    if (!pass) g_failures++;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

// ---------------------------------------------------------------------------
// Shared synthetic benchmark: densely packed, mostly parallel tubes with
// per-neuron speckle texture; test volumes carry missing sections and a
// misalignment. This is the desk-scale stand-in for densely packed neuropil.

struct Bench {
    std::vector<geom::Skeleton> neurons;
    LabeledVolume volume;
    SegmentTable table;
    std::vector<reg::CandidatePair> pairs_n20;  // 20 negatives per positive
    std::vector<reg::CandidatePair> pairs_1to1;  // 1 negative per positive
    std::vector<reg::CandidatePair> positives;
};

synth::SynthConfig bench_synth_config(uint64_t seed) {
    synth::SynthConfig cfg;
    cfg.neuron_count = 56;
    cfg.bundle_fraction = 0.8;
    cfg.radius_min_nm = 44;
    cfg.radius_max_nm = 70;
    cfg.clearance_nm = 40;
    cfg.node_spacing_nm = 100;
    cfg.cable_min_um = 2.0;
    cfg.cable_max_um = 3.5;
    cfg.cut_rate_per_um = 0.6;
    cfg.interior_span = 0.05;
    cfg.speckle_density_min = 0.03;
    cfg.speckle_density_max = 0.40;
    cfg.speckle_amp = 0.25;
    cfg.seed = seed;
    return cfg;
}

const std::array<int, 3> kBenchDims{160, 160, 56};
const Vec3 kBenchVox{16, 16, 40};
// classifier sampling cube == embedding window extent (49x49x9 voxels)
const Vec3 kBenchCube{768, 768, 320};

Bench make_bench(uint64_t seed, bool artifacts) {
    synth::SynthConfig cfg = bench_synth_config(seed);
    if (artifacts)
        cfg.artifacts = {
            {synth::Artifact::MissingSection, 10, {}},   {synth::Artifact::MissingSection, 26, {}},
            {synth::Artifact::MissingSection, 42, {}},
            {synth::Artifact::Misalignment, 14, {400, 0, 0}},
            {synth::Artifact::Misalignment, 21, {0, -350, 0}},
            {synth::Artifact::Misalignment, 33, {550, 0, 0}},
            {synth::Artifact::Misalignment, 47, {0, -450, 0}},
        };
    Bench b;
    b.neurons = synth::generate_neurons(cfg, kBenchDims, kBenchVox);
    synth::VoxelizeAux aux;
    b.volume = synth::voxelize(b.neurons, kBenchDims, kBenchVox, cfg, &aux);
    synth::oversegment(b.volume, aux, b.neurons, cfg);
    if (artifacts) {
        b.volume = synth::degrade(b.volume, cfg.artifacts, seed);
        synth::shift_skeletons_for_artifacts(b.neurons, cfg.artifacts, kBenchVox);
    }
    b.table = build_segment_table(b.volume);
    reg::RegisterConfig rc;
    rc.shift_sigma_nm = 100;
    rc.cube_nm = kBenchCube;  // negatives live inside the classifier crop
    rc.negatives_per_positive = 20;
    rc.block_size_nm = {784, 784, 1120};
    rc.min_block_positives = 1;
    b.pairs_n20 = reg::build_candidate_pairs(b.neurons, b.volume, rc, derive_seed(seed, "n20"));
    rc.negatives_per_positive = 1;
    b.pairs_1to1 = reg::build_candidate_pairs(b.neurons, b.volume, rc, derive_seed(seed, "eval"));
    for (const auto& p : b.pairs_n20)
        if (p.label == 1) b.positives.push_back(p);
    return b;
}

embed::EmbedTrainConfig bench_embed_config() {
    embed::EmbedTrainConfig cfg;
    cfg.crop = {49, 49, 9};
    cfg.net.k = 16;
    cfg.net.c0 = 8;
    cfg.net.c1 = 12;
    cfg.net.c2 = 16;
    cfg.n_negatives = 20;
    cfg.batch_size = 2;
    cfg.steps = 2000;
    cfg.lr.base_lr = 0.003;
    cfg.lr.warmup_steps = 60;
    cfg.lr.total_steps = 2000;
    cfg.seed = 7;
    return cfg;
}

// ---------------------------------------------------------------------------

void criterion_1_oracle_recovery() {
    auto t0 = std::chrono::steady_clock::now();
    int seeds_checked = 0, seeds_exact = 0;
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        synth::SynthConfig cfg;
        cfg.neuron_count = 5;
        cfg.cable_min_um = 2;
        cfg.cable_max_um = 4;
        cfg.cut_rate_per_um = 1.0;
        cfg.seed = seed;
        std::array<int, 3> dims{128, 128, 48};
        auto neurons = synth::generate_neurons(cfg, dims, kBenchVox);
        synth::VoxelizeAux aux;
        LabeledVolume v = synth::voxelize(neurons, dims, kBenchVox, cfg, &aux);
        auto truth = synth::oversegment(v, aux, neurons, cfg);
        reg::RegisterConfig rc;
        rc.shift_sigma_nm = 0;
        rc.cube_nm = {1600, 1600, 1600};
        rc.negatives_per_positive = 0;
        rc.block_size_nm = {1e9, 1e9, 1e9};
        rc.min_block_positives = 0;
        auto pairs = reg::build_candidate_pairs(neurons, v, rc, seed);
        std::set<std::pair<uint32_t, uint32_t>> got, want;
        for (const auto& p : pairs)
            if (p.label == 1) got.insert({std::min(p.seg_a, p.seg_b), std::max(p.seg_a, p.seg_b)});
        for (const auto& t : truth) want.insert({std::min(t.seg_a, t.seg_b), std::max(t.seg_a, t.seg_b)});
        seeds_checked++;
        if (got == want && !want.empty()) seeds_exact++;
    }

    // runtime bound on a 256^3-voxel volume
    synth::SynthConfig big = bench_synth_config(99);
    big.neuron_count = 40;
    big.cable_min_um = 4;
    big.cable_max_um = 8;
    big.bundle_fraction = 0.5;
    std::array<int, 3> dims256{256, 256, 256};
    auto neurons = synth::generate_neurons(big, dims256, kBenchVox);
    synth::VoxelizeAux aux;
    LabeledVolume v = synth::voxelize(neurons, dims256, kBenchVox, big, &aux);
    auto truth = synth::oversegment(v, aux, neurons, big);
    reg::RegisterConfig rc;
    rc.shift_sigma_nm = 0;
    rc.cube_nm = {2560, 2560, 2560};
    rc.negatives_per_positive = 0;
    rc.block_size_nm = {1e9, 1e9, 1e9};
    rc.min_block_positives = 0;
    auto t1 = std::chrono::steady_clock::now();
    auto pairs = reg::build_candidate_pairs(neurons, v, rc, 99);
    double reg_secs = seconds_since(t1);
    std::set<std::pair<uint32_t, uint32_t>> got, want;
    for (const auto& p : pairs)
        if (p.label == 1) got.insert({std::min(p.seg_a, p.seg_b), std::max(p.seg_a, p.seg_b)});
    for (const auto& t : truth) want.insert({std::min(t.seg_a, t.seg_b), std::max(t.seg_a, t.seg_b)});
    bool big_exact = got == want && !want.empty();

    bool pass = seeds_exact == seeds_checked && big_exact && reg_secs < 60.0;
    report(1, "oracle pair recovery", pass,
           fmt("%d/%d seeds exact, 256^3 volume: %zu pairs exact=%d in %.1fs (<60s), total %.0fs", seeds_exact,
               seeds_checked, want.size(), int(big_exact), reg_secs, seconds_since(t0)));
}

void criterion_2_gradients() {
    auto t0 = std::chrono::steady_clock::now();
    auto reports = nn::run_gradchecks(50, 424242);
    double worst = 0;
    std::string worst_name = "-";
    for (const auto& r : reports)
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = r.name;
        }
    report(2, "finite-difference gradient suite", nn::all_passed(reports),
           fmt("%zu cases x 50 instances, worst %.2e (%s) < 1e-4, %.0fs", reports.size(), worst,
               worst_name.c_str(), seconds_since(t0)));
}

void criterion_3_loss_identities() {
    std::vector<double> mu{0.3, -1.1, 2.0};
    auto zero = embed::merge_split_loss<double>(mu, mu, {}, 1.5);
    bool merge_zero = zero.merge == 0.0;

    std::vector<double> far{50, 50, 50};
    bool hinge_sat = embed::merge_split_loss<double>(mu, mu, {far}, 1.5).split == 0.0;

    double coincident = embed::merge_split_loss<double>(mu, mu, {mu}, 1.5).split;
    bool eighteen = std::abs(coincident - 18.0) < 1e-12;

    bool schedule = embed::lambda3_at(0, 5000) == 1.0 && embed::lambda3_at(5000, 5000) == 0.2;

    report(3, "loss identities", merge_zero && hinge_sat && eighteen && schedule,
           fmt("merge(mu,mu)=%g, saturated split=0:%d, coincident case=%.6f (=18), schedule 1.0->0.2:%d",
               zero.merge, int(hinge_sat), coincident, int(schedule)));
}

void criterion_6_erl_oracle() {
    auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(4242);

    // independent per-node BFS oracle over axis-aligned integer trees
    auto oracle = [](const std::vector<geom::Skeleton>& skels,
                     const std::vector<std::vector<uint32_t>>& maps, const eval::ClusterMap& clusters) {
        auto cluster_of = [&](uint32_t seg) -> uint32_t {
            if (seg == 0) return 0;
            auto it = clusters.find(seg);
            return it == clusters.end() ? seg : it->second;
        };
        std::map<uint32_t, std::set<size_t>> owners;
        for (size_t s = 0; s < skels.size(); ++s)
            for (uint32_t seg : maps[s])
                if (cluster_of(seg)) owners[cluster_of(seg)].insert(s);
        double num = 0, den = 0;
        for (size_t s = 0; s < skels.size(); ++s) {
            auto edges = skels[s].edge_indices();
            std::vector<std::vector<std::pair<int, double>>> adj(skels[s].nodes.size());
            std::vector<double> w(skels[s].nodes.size(), 0);
            for (auto [c, p] : edges) {
                double len = distance(skels[s].nodes[c].pos, skels[s].nodes[p].pos);
                adj[c].push_back({p, len});
                adj[p].push_back({c, len});
                w[c] += len / 2;
                w[p] += len / 2;
            }
            for (size_t i = 0; i < skels[s].nodes.size(); ++i) {
                uint32_t c = cluster_of(maps[s][i]);
                double run = 0;
                if (c != 0 && owners[c].size() < 2) {
                    std::set<int> seen{int(i)};
                    std::queue<int> q;
                    q.push(int(i));
                    while (!q.empty()) {
                        int cur = q.front();
                        q.pop();
                        for (auto [nb, len] : adj[cur]) {
                            if (cluster_of(maps[s][nb]) != c || seen.count(nb)) continue;
                            seen.insert(nb);
                            run += len;
                            q.push(nb);
                        }
                    }
                }
                num += w[i] * run;
                den += w[i];
            }
        }
        return den > 0 ? num / den : 0.0;
    };

    int exact = 0;
    const int fixtures = 120;
    for (int trial = 0; trial < fixtures; ++trial) {
        int n_skel = 1 + int(rng() % 3);
        std::vector<geom::Skeleton> skels;
        std::vector<std::vector<uint32_t>> maps;
        for (int s = 0; s < n_skel; ++s) {
            geom::Skeleton sk;
            sk.nodes.push_back({1, {0, 0, 0}, 10, -1});
            int nodes = 2 + int(rng() % 12);
            for (int i = 1; i < nodes; ++i) {
                int parent = int(rng() % uint64_t(i));
                Vec3 pos = sk.nodes[parent].pos;
                pos[int(rng() % 3)] += (rng() % 2 ? 1.0 : -1.0) * double(1 + rng() % 5) * 100.0;
                sk.nodes.push_back({i + 1, pos, 10, sk.nodes[parent].id});
            }
            sk.validate();
            skels.push_back(sk);
            std::vector<uint32_t> m(skels.back().nodes.size());
            for (auto& seg : m) seg = uint32_t(rng() % 8);
            maps.push_back(m);
        }
        eval::ClusterMap clusters;
        for (uint32_t seg = 1; seg <= 7; ++seg) clusters[seg] = seg;
        for (int merge = int(rng() % 4); merge > 0; --merge) {
            uint32_t a = 1 + rng() % 7, b = 1 + rng() % 7;
            uint32_t ra = clusters[a], rb = clusters[b];
            for (auto& [seg, rep] : clusters)
                if (rep == ra || rep == rb) rep = std::min(ra, rb);
        }
        if (eval::expected_run_length(skels, maps, clusters) == oracle(skels, maps, clusters)) exact++;
    }

    // split at the midpoint: exactly half the perfect run length
    geom::Skeleton line;
    int id = 1;
    for (int i = 0; i <= 5; ++i) line.nodes.push_back({id++, {i * 1000.0, 0, 0}, 10, i == 0 ? -1 : id - 2});
    for (int i = 5; i <= 10; ++i) line.nodes.push_back({id++, {i * 1000.0, 0, 0}, 10, id - 2});
    line.validate();
    std::vector<uint32_t> split_map(12, 1);
    for (int i = 6; i < 12; ++i) split_map[i] = 2;
    eval::ClusterMap identity{{1, 1}, {2, 2}};
    double perfect = eval::expected_run_length({line}, {std::vector<uint32_t>(12, 1)}, identity);
    double half = eval::expected_run_length({line}, {split_map}, identity);
    bool midpoint_ok = perfect == 10000.0 && half == 5000.0;

    // cross-skeleton merge zeroes the affected nodes
    geom::Skeleton other = line;
    eval::ClusterMap merged{{1, 1}, {2, 1}};
    double merged_erl =
        eval::expected_run_length({line, other}, {std::vector<uint32_t>(12, 1), std::vector<uint32_t>(12, 2)},
                                  merged);
    bool merge_ok = merged_erl == 0.0;

    report(6, "run-length oracle", exact == fixtures && midpoint_ok && merge_ok,
           fmt("%d/%d random fixtures exact, midpoint %.0f/%.0f, cross-merge erl=%.0f, %.1fs", exact, fixtures,
               half, perfect, merged_erl, seconds_since(t0)));
}

void criterion_9_geometry_oracles() {
    std::mt19937_64 rng(31337);
    std::uniform_real_distribution<double> u(-100, 100);
    auto rand_points = [&](int n) {
        geom::PointSet pts(n);
        for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
        return pts;
    };

    bool chamfer_ok = true;
    for (int t = 0; t < 6 && chamfer_ok; ++t) {
        geom::PointSet a = rand_points(1 + int(rng() % 1000)), b = rand_points(1 + int(rng() % 1000));
        double acc = 0;
        for (const Vec3& s : a) {
            double best = std::numeric_limits<double>::infinity();
            for (const Vec3& q : b) best = std::min(best, distance(s, q));
            acc += best;
        }
        chamfer_ok = geom::directed_chamfer(a, b) == acc / double(a.size());
    }

    bool fps_ok = true;
    for (int t = 0; t < 10 && fps_ok; ++t) {
        int n = 2 + int(rng() % 199);
        geom::PointSet pts = rand_points(n);
        for (int m : {1, n / 3 + 1, n}) {
            auto got = geom::farthest_point_sample(pts, m, 0);
            // brute-force max-min selection
            std::vector<int> want{0};
            std::vector<char> chosen(n, 0);
            chosen[0] = 1;
            while (int(want.size()) < m) {
                int best = -1;
                double best_d = -1;
                for (int i = 0; i < n; ++i) {
                    if (chosen[i]) continue;
                    double mind = std::numeric_limits<double>::infinity();
                    for (int p : want) mind = std::min(mind, (pts[i] - pts[p]).norm2());
                    if (mind > best_d) {
                        best_d = mind;
                        best = i;
                    }
                }
                want.push_back(best);
                chosen[best] = 1;
            }
            if (got != want) fps_ok = false;
        }
    }

    // 7x7x3 attachment vs the brute-force windowed mean, including borders
    embed::EmbeddingField f;
    f.dims = {9, 8, 5};
    f.k = 4;
    f.values.resize(size_t(9) * 8 * 5 * 4);
    std::uniform_real_distribution<float> uf(-1, 1);
    for (auto& v : f.values) v = uf(rng);
    bool attach_ok = true;
    for (int vz = 0; vz < 5 && attach_ok; ++vz)
        for (int vy = 0; vy < 8 && attach_ok; ++vy)
            for (int vx = 0; vx < 9 && attach_ok; ++vx) {
                std::vector<double> acc(4, 0);
                int64_t cnt = 0;
                for (int dz = -1; dz <= 1; ++dz)
                    for (int dy = -3; dy <= 3; ++dy)
                        for (int dx = -3; dx <= 3; ++dx) {
                            int x = vx + dx, y = vy + dy, z = vz + dz;
                            if (x < 0 || y < 0 || z < 0 || x >= 9 || y >= 8 || z >= 5) continue;
                            for (int c = 0; c < 4; ++c) acc[c] += f.values[f.pos_index(x, y, z) * 4 + c];
                            cnt++;
                        }
                auto got = embed::neighborhood_mean(f, vx, vy, vz, 3, 3, 1);
                for (int c = 0; c < 4; ++c)
                    if (std::abs(got[c] - acc[c] / cnt) > 1e-5) attach_ok = false;
            }

    report(9, "geometry oracles", chamfer_ok && fps_ok && attach_ok,
           fmt("chamfer exact:%d, fps exact:%d, 7x7x3 attachment exact:%d", int(chamfer_ok), int(fps_ok),
               int(attach_ok)));
}

void criterion_10_batch_rebalancing() {
    std::vector<int> labels(600);
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = i % 9 == 0;
    connect::BatchSampler sampler(labels, 0.3, 777);
    int64_t pos = 0, total = 0;
    for (int b = 0; b < 1000; ++b)
        for (int64_t idx : sampler.next(16)) {
            pos += labels[idx];
            total++;
        }
    double fraction = double(pos) / double(total);
    report(10, "3:7 batch rebalancing", fraction >= 0.28 && fraction <= 0.32,
           fmt("positive fraction %.4f over 1000 batches (target 0.30 +- 0.02)", fraction));
}

void criterion_8_determinism() {
    auto t0 = std::chrono::steady_clock::now();
    config::RunConfig cfg = config::defaults();
    cfg.set("run.seed", "77");
    cfg.set("run.deterministic", "true");
    cfg.set("synth.train_volumes", "1");
    cfg.set("synth.test_volumes", "1");
    cfg.set("synth.neuron_count", "12");
    cfg.set("synth.bundle_fraction", "0.8");
    cfg.set("synth.radius_min_nm", "44");
    cfg.set("synth.radius_max_nm", "70");
    cfg.set("synth.cable_max_um", "3.5");
    cfg.set("embed.crop_x", "33");
    cfg.set("embed.crop_y", "33");
    cfg.set("embed.crop_z", "5");
    cfg.set("embed.c0", "6");
    cfg.set("embed.c1", "8");
    cfg.set("embed.c2", "10");
    cfg.set("embed.steps", "30");
    cfg.set("embed.warmup_steps", "5");
    cfg.set("classifier.fusion", "embed");
    cfg.set("classifier.cube_nm", "512");
    cfg.set("classifier.cube_z_nm", "160");
    cfg.set("register.cube_nm", "512");
    cfg.set("register.cube_z_nm", "160");
    cfg.set("classifier.points", "96");
    cfg.set("classifier.sa1_centroids", "24");
    cfg.set("classifier.sa1_neighbors", "8");
    cfg.set("classifier.sa1_width", "16");
    cfg.set("classifier.sa2_centroids", "8");
    cfg.set("classifier.sa2_neighbors", "4");
    cfg.set("classifier.sa2_width", "24");
    cfg.set("classifier.global_width", "48");
    cfg.set("classifier.head_width", "24");
    cfg.set("classifier.steps", "40");
    cfg.set("classifier.warmup_steps", "5");
    cfg.set("classifier.batch_size", "6");

    auto run_all = [&](const std::string& dir) {
        fs::remove_all(dir);
        pipeline::apply_run_settings(cfg, true);
        pipeline::run_synth(cfg, dir);
        pipeline::run_build_pairs(cfg, dir);
        pipeline::run_train_embed(cfg, dir);
        pipeline::run_train_classifier(cfg, dir);
        pipeline::run_eval(cfg, dir);
        pipeline::run_trace(cfg, dir);
    };
    std::string d1 = (fs::temp_directory_path() / "nt_det_a").string();
    std::string d2 = (fs::temp_directory_path() / "nt_det_b").string();
    run_all(d1);
    run_all(d2);

    auto file_bytes = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    std::vector<std::string> rel{
        "pairs/train_000.pairs",      "pairs/test_000.pairs",     "embed/embednet.ntc",
        "embed/train_log.csv",        "classifier/model.ntc",     "classifier/train_log.csv",
        "eval/predictions.csv",       "eval/pr_curve.csv",        "eval/summary.txt",
        "trace/result.txt",           "trace/clusters_test_000.csv",
    };
    int identical = 0;
    std::string first_diff = "none";
    for (const auto& r : rel) {
        if (!fs::exists(d1 + "/" + r) || !fs::exists(d2 + "/" + r)) {
            if (first_diff == "none") first_diff = r + " (missing)";
            continue;
        }
        if (file_bytes(d1 + "/" + r) == file_bytes(d2 + "/" + r))
            identical++;
        else if (first_diff == "none")
            first_diff = r;
    }
    fs::remove_all(d1);
    fs::remove_all(d2);
    report(8, "pipeline determinism", identical == int(rel.size()),
           fmt("%d/%zu artifacts byte-identical across reruns (first diff: %s), %.0fs", identical, rel.size(),
               first_diff.c_str(), seconds_since(t0)));
}

// Criteria 4, 5, 7 share trained models over the dense benchmark.

struct LearnedState {
    std::optional<embed::EmbedNet> adaptive;
    embed::EmbedTrainConfig embed_cfg;
    std::vector<Bench> train_bench;  // with artifacts
};

void criterion_4_embedding_learnability(LearnedState& state) {
    auto t0 = std::chrono::steady_clock::now();
    state.train_bench.push_back(make_bench(201, true));
    state.train_bench.push_back(make_bench(202, true));
    Bench held = make_bench(203, true);

    embed::EmbedTrainConfig cfg = bench_embed_config();
    state.embed_cfg = cfg;
    std::vector<embed::TrainVolume> tvs;
    for (auto& b : state.train_bench) tvs.push_back({&b.volume, &b.table, b.positives});

    auto items = embed::build_rank_items(held.volume, held.table, held.positives, 20, cfg.crop, 5);
    if (items.size() > 48) items.resize(48);

    embed::EmbedNet adaptive(cfg.net, derive_seed(cfg.seed, "init"));
    double untrained = embed::rank_discriminability(adaptive, held.volume, items, cfg.crop);
    embed::train_embed(adaptive, tvs, cfg);
    double trained = embed::rank_discriminability(adaptive, held.volume, items, cfg.crop);

    embed::EmbedTrainConfig fixed_cfg = cfg;
    fixed_cfg.lambda3_start = 1.0;
    fixed_cfg.lambda3_end = 1.0;
    embed::EmbedNet fixed(fixed_cfg.net, derive_seed(cfg.seed, "init"));
    embed::train_embed(fixed, tvs, fixed_cfg);
    double fixed_rank = embed::rank_discriminability(fixed, held.volume, items, cfg.crop);

    state.adaptive.emplace(std::move(adaptive));
    bool pass = trained * 2.0 <= untrained && trained <= fixed_rank;
    report(4, "embedding learnability", pass,
           fmt("rank untrained %.3f -> adaptive %.3f (%.2fx, need >=2x), fixed-lambda3 %.3f (adaptive <= fixed: %d), "
               "%zu items, %.0fs",
               untrained, trained, trained > 0 ? untrained / trained : 0.0, fixed_rank, int(trained <= fixed_rank),
               items.size(), seconds_since(t0)));
}

struct FusionOutcome {
    double f1_none = 0, f1_intensity = 0, f1_embed = 0;
    Bench test;  // kept for the tracing criterion
    std::optional<connect::PointNet> embed_classifier;
};

connect::PointNetConfig bench_pointnet_config(int k) {
    connect::PointNetConfig pc;
    pc.k = k;
    pc.sa1_centroids = 64;
    pc.sa1_neighbors = 12;
    pc.sa1_width = 24;
    pc.sa2_centroids = 16;
    pc.sa2_neighbors = 8;
    pc.sa2_width = 48;
    pc.global_width = 96;
    pc.head_width = 48;
    return pc;
}

using FieldProvider = std::function<const embed::EmbeddingField*(const reg::CandidatePair&)>;

std::vector<connect::PointSample> bench_point_samples(const Bench& b,
                                                      const std::vector<reg::CandidatePair>& pairs,
                                                      const FieldProvider& field_for, uint64_t seed) {
    std::vector<connect::PointSample> out;
    for (size_t i = 0; i < pairs.size(); ++i) {
        try {
            connect::RawPoints raw = connect::extract_contour_points(b.volume, pairs[i], kBenchCube);
            connect::PointSample s =
                connect::build_point_sample(raw, 256, field_for ? field_for(pairs[i]) : nullptr,
                                            hash_combine(seed, i));
            s.label = pairs[i].label;
            s.seg_a = pairs[i].seg_a;
            s.seg_b = pairs[i].seg_b;
            out.push_back(std::move(s));
        } catch (const Error& e) {
            if (e.tag != "empty-pair-crop") throw;
        }
    }
    return out;
}

void criterion_5_fusion_benefit(LearnedState& state, FusionOutcome& outcome) {
    auto t0 = std::chrono::steady_clock::now();
    const int n_seeds = 3;
    double sum_none = 0, sum_int = 0, sum_emb = 0;
    for (int s = 0; s < n_seeds; ++s) {
        // seed 0 reuses the embedding's training volumes; later seeds are fresh
        Bench train_a = s == 0 ? std::move(state.train_bench[0]) : make_bench(301 + 10 * s, true);
        Bench train_b = s == 0 ? std::move(state.train_bench[1]) : make_bench(305 + 10 * s, true);
        Bench test = make_bench(302 + 10 * s, true);

        embed::WindowFieldCache wtrain_a(*state.adaptive, train_a.volume, state.embed_cfg.crop);
        embed::WindowFieldCache wtrain_b(*state.adaptive, train_b.volume, state.embed_cfg.crop);
        embed::WindowFieldCache wtest(*state.adaptive, test.volume, state.embed_cfg.crop);
        embed::EmbeddingField itrain_a = embed::intensity_field(train_a.volume);
        embed::EmbeddingField itrain_b = embed::intensity_field(train_b.volume);
        embed::EmbeddingField itest = embed::intensity_field(test.volume);

        auto run_variant = [&](FieldProvider ftr_a, FieldProvider ftr_b, FieldProvider fte, int k,
                               uint64_t seed, std::optional<connect::PointNet>* keep) {
            auto train_samples = bench_point_samples(train_a, train_a.pairs_n20, ftr_a, derive_seed(seed, "ts"));
            auto more = bench_point_samples(train_b, train_b.pairs_n20, ftr_b, derive_seed(seed, "ts2"));
            train_samples.insert(train_samples.end(), std::make_move_iterator(more.begin()),
                                 std::make_move_iterator(more.end()));
            auto eval_samples = bench_point_samples(test, test.pairs_1to1, fte, derive_seed(seed, "es"));
            connect::PointNet model(bench_pointnet_config(k), derive_seed(seed, "init"));
            connect::ClassifierTrainConfig tc;
            tc.steps = 600;
            tc.batch_size = 12;
            tc.lr.base_lr = 0.002;
            tc.lr.warmup_steps = 30;
            tc.lr.total_steps = tc.steps;
            tc.seed = derive_seed(seed, "cls");
            connect::train_classifier(model, train_samples, tc);
            std::vector<double> probs;
            std::vector<int> labels;
            for (const auto& e : eval_samples) {
                probs.push_back(connect::predict_connectivity(model, e));
                labels.push_back(e.label);
            }
            eval::EvalReport r = eval::score_predictions(probs, labels);
            if (keep) keep->emplace(std::move(model));
            return r.f1;
        };

        FieldProvider none;
        double f_none = run_variant(none, none, none, 0, 900 + s, nullptr);
        double f_int = run_variant([&](const reg::CandidatePair&) { return &itrain_a; },
                                   [&](const reg::CandidatePair&) { return &itrain_b; },
                                   [&](const reg::CandidatePair&) { return &itest; }, 1, 900 + s, nullptr);
        double f_emb = run_variant([&](const reg::CandidatePair& p) { return &wtrain_a.field_at(p.truncation); },
                                   [&](const reg::CandidatePair& p) { return &wtrain_b.field_at(p.truncation); },
                                   [&](const reg::CandidatePair& p) { return &wtest.field_at(p.truncation); },
                                   16, 900 + s, s == 0 ? &outcome.embed_classifier : nullptr);
        std::printf("    seed %d: F1 none=%.3f intensity=%.3f embed=%.3f\n", s, f_none, f_int, f_emb);
        std::fflush(stdout);
        sum_none += f_none;
        sum_int += f_int;
        sum_emb += f_emb;
        if (s == 0) outcome.test = std::move(test);
    }
    outcome.f1_none = sum_none / n_seeds;
    outcome.f1_intensity = sum_int / n_seeds;
    outcome.f1_embed = sum_emb / n_seeds;
    bool pass = outcome.f1_embed > outcome.f1_none && outcome.f1_embed > outcome.f1_intensity;
    report(5, "fusion benefit", pass,
           fmt("mean F1 over %d seeds: none=%.3f intensity=%.3f embed=%.3f (embed strictly best: %d), %.0fs",
               n_seeds, outcome.f1_none, outcome.f1_intensity, outcome.f1_embed, int(pass),
               seconds_since(t0)));
}

void criterion_7_tracing(LearnedState& state, FusionOutcome& outcome) {
    auto t0 = std::chrono::steady_clock::now();
    Bench& test = outcome.test;
    std::vector<uint32_t> universe;
    for (const auto& [seg, e] : test.table.entries) universe.push_back(seg);
    std::vector<std::vector<uint32_t>> node_maps;
    for (const auto& skel : test.neurons)
        node_maps.push_back(reg::assign_nodes(skel, test.volume, 20).node_seg);

    embed::WindowFieldCache wtest(*state.adaptive, test.volume, state.embed_cfg.crop);
    auto scorer = [&](const reg::CandidatePair& p) -> double {
        try {
            connect::RawPoints raw = connect::extract_contour_points(test.volume, p, kBenchCube);
            connect::PointSample s = connect::build_point_sample(
                raw, 256, &wtest.field_at(p.truncation), hash_combine(4242, uint64_t(p.seg_a) << 32 | p.seg_b));
            return connect::predict_connectivity(*outcome.embed_classifier, s);
        } catch (const Error& e) {
            if (e.tag == "empty-pair-crop") return 0.0;
            throw;
        }
    };
    eval::TracingResult r =
        eval::tracing_experiment(test.neurons, node_maps, universe, test.pairs_1to1, scorer, 0.98);
    bool pass = r.relative_gain > 0.0;
    report(7, "tracing analogue", pass,
           fmt("erl %.0f -> %.0f nm, relative gain %+.2f%% at threshold 0.98 (need > 0), %.0fs",
               r.erl_before_nm, r.erl_after_nm, 100 * r.relative_gain, seconds_since(t0)));
}

}  // namespace

int main(int argc, char** argv) {
    setvbuf(stdout, nullptr, _IONBF, 0);
    std::set<int> only;  // optional criterion numbers to run, e.g. "acceptance 4 5 7"
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };
    auto t0 = std::chrono::steady_clock::now();
    std::printf("acceptance suite (threads=%d)\n", thread_count());

    if (wanted(1)) criterion_1_oracle_recovery();
    if (wanted(2)) criterion_2_gradients();
    if (wanted(3)) criterion_3_loss_identities();
    if (wanted(6)) criterion_6_erl_oracle();
    if (wanted(9)) criterion_9_geometry_oracles();
    if (wanted(10)) criterion_10_batch_rebalancing();

    if (wanted(4) || wanted(5) || wanted(7)) {
        LearnedState state;
        criterion_4_embedding_learnability(state);
        if (wanted(5) || wanted(7)) {
            FusionOutcome outcome;
            criterion_5_fusion_benefit(state, outcome);
            if (wanted(7)) criterion_7_tracing(state, outcome);
        }
    }

    if (wanted(8)) criterion_8_determinism();

    std::printf("%s: %d criterion failure(s), total %.0fs\n", g_failures == 0 ? "SUCCESS" : "FAILURE",
                g_failures, seconds_since(t0));
    return g_failures == 0 ? 0 : 1;
}
