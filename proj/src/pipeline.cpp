#include "neutrace/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>

#include "neutrace/connect/train.hpp"
#include "neutrace/embed/train.hpp"
#include "neutrace/eval/metrics.hpp"
#include "neutrace/nn/checkpoint.hpp"
#include "neutrace/nn/gradcheck.hpp"
#include "neutrace/registration.hpp"
#include "neutrace/synth.hpp"

namespace neutrace::pipeline {

namespace fs = std::filesystem;

namespace {

// ---- path layout -----------------------------------------------------------

std::string volume_dir(const std::string& out, const std::string& split, int idx) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%03d", split.c_str(), idx);
    return out + "/volumes/" + buf;
}
std::string pairs_path(const std::string& out, const std::string& split, int idx) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%03d.pairs", split.c_str(), idx);
    return out + "/pairs/" + buf;
}

int volume_count(const config::RunConfig& cfg, const std::string& split) {
    return int(cfg.get_int(split == "train" ? "synth.train_volumes" : "synth.test_volumes"));
}

synth::SynthConfig synth_config(const config::RunConfig& cfg, uint64_t volume_seed) {
    synth::SynthConfig s;
    s.neuron_count = int(cfg.get_int("synth.neuron_count"));
    s.stiffness = cfg.get_double("synth.stiffness");
    s.bundle_fraction = cfg.get_double("synth.bundle_fraction");
    s.bundle_jitter = cfg.get_double("synth.bundle_jitter");
    s.radius_min_nm = cfg.get_double("synth.radius_min_nm");
    s.radius_max_nm = cfg.get_double("synth.radius_max_nm");
    s.node_spacing_nm = cfg.get_double("synth.node_spacing_nm");
    s.cable_min_um = cfg.get_double("synth.cable_min_um");
    s.cable_max_um = cfg.get_double("synth.cable_max_um");
    s.cut_rate_per_um = cfg.get_double("synth.cut_rate_per_um");
    s.min_cut_gap_nm = cfg.get_double("synth.min_cut_gap_nm");
    s.cut_end_margin_nm = cfg.get_double("synth.cut_end_margin_nm");
    s.clearance_nm = cfg.get_double("synth.clearance_nm");
    s.wall_margin_nm = cfg.get_double("synth.wall_margin_nm");
    s.noise_sigma = cfg.get_double("synth.noise_sigma");
    s.bg_gray = cfg.get_double("synth.bg_gray");
    s.membrane_gray = cfg.get_double("synth.membrane_gray");
    s.interior_base = cfg.get_double("synth.interior_base");
    s.interior_span = cfg.get_double("synth.interior_span");
    s.speckle_amp = cfg.get_double("synth.speckle_amp");
    s.speckle_density_min = cfg.get_double("synth.speckle_density_min");
    s.speckle_density_max = cfg.get_double("synth.speckle_density_max");
    s.cut_at_artifacts = cfg.get_bool("synth.cut_at_artifacts");
    s.seed = volume_seed;
    return s;
}

std::array<int, 3> volume_dims(const config::RunConfig& cfg) {
    return {int(cfg.get_int("synth.dim_x")), int(cfg.get_int("synth.dim_y")), int(cfg.get_int("synth.dim_z"))};
}
Vec3 voxel_size(const config::RunConfig& cfg) {
    return {cfg.get_double("synth.voxel_x_nm"), cfg.get_double("synth.voxel_y_nm"),
            cfg.get_double("synth.voxel_z_nm")};
}

std::vector<synth::Artifact> draw_artifacts(const config::RunConfig& cfg, const std::array<int, 3>& dims,
                                            const Vec3& vox, uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "artifacts"));
    std::vector<synth::Artifact> out;
    int missing = int(cfg.get_int("synth.missing_sections"));
    int misalign = int(cfg.get_int("synth.misalignments"));
    if (dims[2] < 8) return out;
    std::uniform_int_distribution<int> zpick(2, dims[2] - 3);
    std::uniform_real_distribution<double> u(cfg.get_double("synth.misalign_min_nm"),
                                             cfg.get_double("synth.misalign_max_nm"));
    for (int i = 0; i < missing; ++i) out.push_back({synth::Artifact::MissingSection, zpick(rng), {}});
    for (int i = 0; i < misalign; ++i) {
        double shift = u(rng);
        bool along_x = rng() % 2;
        double sign = rng() % 2 ? 1.0 : -1.0;
        synth::Artifact a;
        a.kind = synth::Artifact::Misalignment;
        a.z = zpick(rng);
        a.shift_nm = along_x ? Vec3{sign * shift, 0, 0} : Vec3{0, sign * shift, 0};
        // keep the shift inside the volume
        if (std::abs(a.shift_nm.x) >= dims[0] * vox.x) a.shift_nm.x = 0;
        if (std::abs(a.shift_nm.y) >= dims[1] * vox.y) a.shift_nm.y = 0;
        out.push_back(a);
    }
    return out;
}

std::vector<geom::Skeleton> load_skeletons(const std::string& vdir) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(vdir + "/skeletons"))
        if (e.path().extension() == ".swc") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) fail("data-error", "no skeletons under " + vdir);
    std::vector<geom::Skeleton> out;
    for (const auto& f : files) {
        std::ifstream in(f);
        out.push_back(geom::parse_swc(in, 1.0));
    }
    return out;
}

reg::RegisterConfig register_config(const config::RunConfig& cfg) {
    reg::RegisterConfig rc;
    rc.search_radius_vox = int(cfg.get_int("register.search_radius_vox"));
    rc.shift_sigma_nm = cfg.get_double("register.shift_sigma_nm");
    double cube = cfg.get_double("register.cube_nm");
    double cube_z = cfg.get_double("register.cube_z_nm");
    rc.cube_nm = {cube, cube, cube_z > 0 ? cube_z : cube};
    rc.negatives_per_positive = int(cfg.get_int("register.negatives_per_positive"));
    rc.block_size_nm = {cfg.get_double("register.block_x_nm"), cfg.get_double("register.block_y_nm"),
                        cfg.get_double("register.block_z_nm")};
    rc.min_block_positives = int(cfg.get_int("register.min_block_positives"));
    rc.densify_step_nm = cfg.get_double("register.densify_step_nm");
    return rc;
}

embed::EmbedTrainConfig embed_config(const config::RunConfig& cfg) {
    embed::EmbedTrainConfig e;
    e.crop = {int(cfg.get_int("embed.crop_x")), int(cfg.get_int("embed.crop_y")),
              int(cfg.get_int("embed.crop_z"))};
    e.net.k = int(cfg.get_int("embed.k"));
    e.net.c0 = int(cfg.get_int("embed.c0"));
    e.net.c1 = int(cfg.get_int("embed.c1"));
    e.net.c2 = int(cfg.get_int("embed.c2"));
    e.net.se_reduction = int(cfg.get_int("embed.se_reduction"));
    e.lambda1 = cfg.get_double("embed.lambda1");
    e.lambda2 = cfg.get_double("embed.lambda2");
    e.lambda3_start = cfg.get_double("embed.lambda3_start");
    e.lambda3_end = cfg.get_double("embed.lambda3_end");
    e.delta_d = cfg.get_double("embed.delta_d");
    e.delta_v = cfg.get_double("embed.delta_v");
    e.gamma = cfg.get_double("embed.gamma");
    e.n_negatives = int(cfg.get_int("embed.n_negatives"));
    e.batch_size = int(cfg.get_int("embed.batch_size"));
    e.steps = int(cfg.get_int("embed.steps"));
    e.lr.base_lr = cfg.get_double("embed.lr");
    e.lr.warmup_steps = int(cfg.get_int("embed.warmup_steps"));
    e.lr.total_steps = e.steps;
    e.lr.decay_factor = cfg.get_double("embed.decay_factor");
    e.lr.decay_at.clear();
    std::stringstream ss(cfg.get_str("embed.decay_points"));
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) e.lr.decay_at.push_back(std::stod(tok));
    e.weight_decay = float(cfg.get_double("embed.weight_decay"));
    e.augment_rotate = cfg.get_bool("embed.augment_rotate");
    e.augment_flip = cfg.get_bool("embed.augment_flip");
    e.augment_rescale = cfg.get_bool("embed.augment_rescale");
    e.augment_intensity = cfg.get_bool("embed.augment_intensity");
    e.finetune = cfg.get_bool("embed.finetune");
    e.finetune_fraction = cfg.get_double("embed.finetune_fraction");
    e.finetune_steps = int(cfg.get_int("embed.finetune_steps"));
    e.max_pseudo_masks = int(cfg.get_int("embed.max_pseudo_masks"));
    e.log_every = int(cfg.get_int("embed.log_every"));
    e.seed = cfg.stage_seed("train-embed");
    return e;
}

connect::PointNetConfig pointnet_config(const config::RunConfig& cfg, int k) {
    connect::PointNetConfig p;
    p.k = k;
    p.sa1_centroids = int(cfg.get_int("classifier.sa1_centroids"));
    p.sa1_neighbors = int(cfg.get_int("classifier.sa1_neighbors"));
    p.sa1_width = int(cfg.get_int("classifier.sa1_width"));
    p.sa2_centroids = int(cfg.get_int("classifier.sa2_centroids"));
    p.sa2_neighbors = int(cfg.get_int("classifier.sa2_neighbors"));
    p.sa2_width = int(cfg.get_int("classifier.sa2_width"));
    p.global_width = int(cfg.get_int("classifier.global_width"));
    p.head_width = int(cfg.get_int("classifier.head_width"));
    return p;
}

connect::MaskNetConfig masknet_config(const config::RunConfig& cfg, int k) {
    connect::MaskNetConfig m;
    m.in_dims = {int(cfg.get_int("classifier.mask_x")), int(cfg.get_int("classifier.mask_y")),
                 int(cfg.get_int("classifier.mask_z"))};
    m.in_channels = 3 + k;
    m.f1 = int(cfg.get_int("classifier.mask_f1"));
    m.f2 = int(cfg.get_int("classifier.mask_f2"));
    m.f3 = int(cfg.get_int("classifier.mask_f3"));
    m.head = int(cfg.get_int("classifier.mask_head"));
    return m;
}

connect::ClassifierTrainConfig classifier_train_config(const config::RunConfig& cfg) {
    connect::ClassifierTrainConfig t;
    t.steps = int(cfg.get_int("classifier.steps"));
    t.batch_size = int(cfg.get_int("classifier.batch_size"));
    t.pos_fraction = cfg.get_double("classifier.pos_fraction");
    t.lr.base_lr = cfg.get_double("classifier.lr");
    t.lr.warmup_steps = int(cfg.get_int("classifier.warmup_steps"));
    t.lr.total_steps = t.steps;
    t.lr.decay_factor = cfg.get_double("classifier.decay_factor");
    t.lr.decay_at.clear();
    std::stringstream ss(cfg.get_str("classifier.decay_points"));
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) t.lr.decay_at.push_back(std::stod(tok));
    t.weight_decay = float(cfg.get_double("classifier.weight_decay"));
    t.augment = cfg.get_bool("classifier.augment");
    t.log_every = int(cfg.get_int("classifier.log_every"));
    t.seed = cfg.stage_seed("train-classifier");
    return t;
}

// fusion fields per volume, shared by classifier training, eval, and trace
enum class Fusion { None, Intensity, Embed };

std::array<int, 3> embed_crop(const config::RunConfig& cfg) {
    return {int(cfg.get_int("embed.crop_x")), int(cfg.get_int("embed.crop_y")),
            int(cfg.get_int("embed.crop_z"))};
}

Fusion fusion_of(const config::RunConfig& cfg) {
    const std::string& f = cfg.get_str("classifier.fusion");
    if (f == "none") return Fusion::None;
    if (f == "intensity") return Fusion::Intensity;
    if (f == "embed") return Fusion::Embed;
    fail("config-error", "classifier.fusion must be none | intensity | embed, got " + f);
}

embed::EmbedNet load_embed_model(const config::RunConfig& cfg, const std::string& out) {
    embed::EmbedTrainConfig e = embed_config(cfg);
    embed::EmbedNet model(e.net, derive_seed(e.seed, "init"));
    nn::Checkpoint ck = nn::load_checkpoint(out + "/embed/embednet.ntc");
    auto params = model.parameters();
    nn::restore_params(ck, params);
    return model;
}

/// Learned-embedding fusion runs the network on one window per truncation
/// point (the training-crop geometry, cached across the pairs that share it);
/// intensity fusion reads the whole volume directly.
struct FusionFields {
    std::optional<embed::EmbeddingField> intensity;
    std::optional<embed::WindowFieldCache> windows;

    const embed::EmbeddingField* for_pair(const reg::CandidatePair& p) {
        if (windows) return &windows->field_at(p.truncation);
        if (intensity) return &*intensity;
        return nullptr;
    }
};

FusionFields make_fusion_fields(const config::RunConfig& cfg, Fusion fusion, const LabeledVolume& v,
                                embed::EmbedNet* model) {
    FusionFields f;
    if (fusion == Fusion::Intensity) f.intensity = embed::intensity_field(v);
    if (fusion == Fusion::Embed) f.windows.emplace(*model, v, embed_crop(cfg));
    return f;
}

struct LoadedVolume {
    LabeledVolume volume;
    SegmentTable table;
    std::vector<geom::Skeleton> skeletons;
    std::vector<reg::CandidatePair> pairs;
};

LoadedVolume load_stage_volume(const std::string& out, const std::string& split, int idx, bool with_pairs) {
    LoadedVolume lv;
    std::string vdir = volume_dir(out, split, idx);
    if (!fs::exists(vdir)) fail("data-error", "missing volume directory " + vdir + " (run synth first)");
    lv.volume = load_volume(vdir);
    lv.table = build_segment_table(lv.volume);
    lv.skeletons = load_skeletons(vdir);
    if (with_pairs) {
        std::string p = pairs_path(out, split, idx);
        if (!fs::exists(p)) fail("data-error", "missing pair file " + p + " (run build-pairs first)");
        lv.pairs = reg::load_pairs(p);
    }
    return lv;
}

// Evaluation pair protocol: every positive, plus one sampled negative per
// positive from the negatives that share its truncation point.
std::vector<reg::CandidatePair> eval_pairs(const std::vector<reg::CandidatePair>& pairs, int per_positive,
                                           uint64_t seed) {
    std::vector<reg::CandidatePair> out;
    std::vector<size_t> current_negs;
    auto flush = [&](const reg::CandidatePair* positive, std::vector<size_t>& negs, size_t group_index) {
        if (!positive) return;
        out.push_back(*positive);
        std::mt19937_64 rng(hash_combine(seed, group_index));
        std::shuffle(negs.begin(), negs.end(), rng);
        for (int i = 0; i < per_positive && i < int(negs.size()); ++i) out.push_back(pairs[negs[i]]);
        negs.clear();
    };
    const reg::CandidatePair* current_pos = nullptr;
    size_t group = 0;
    for (size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].label == 1) {
            flush(current_pos, current_negs, group++);
            current_pos = &pairs[i];
        } else if (current_pos && pairs[i].seg_a == current_pos->seg_a &&
                   pairs[i].truncation.x == current_pos->truncation.x &&
                   pairs[i].truncation.y == current_pos->truncation.y &&
                   pairs[i].truncation.z == current_pos->truncation.z) {
            current_negs.push_back(i);
        }
    }
    flush(current_pos, current_negs, group++);
    return out;
}

struct ClassifierBundle {
    Fusion fusion = Fusion::None;
    int k = 0;
    std::optional<connect::PointNet> point;
    std::optional<connect::MaskNet> mask;
    std::optional<embed::EmbedNet> embed_model;
    double constant = -1;  // >= 0: fixed-probability classifier

    bool is_point() const { return point.has_value(); }
};

ClassifierBundle load_classifier(const config::RunConfig& cfg, const std::string& out) {
    ClassifierBundle b;
    const std::string& spec = cfg.get_str("eval.classifier");
    if (spec.rfind("constant:", 0) == 0) {
        b.constant = std::stod(spec.substr(9));
        if (b.constant < 0 || b.constant > 1) fail("config-error", "constant classifier needs p in [0,1]");
        return b;
    }
    b.fusion = fusion_of(cfg);
    b.k = b.fusion == Fusion::None ? 0 : (b.fusion == Fusion::Intensity ? 1 : int(cfg.get_int("embed.k")));
    if (b.fusion == Fusion::Embed) b.embed_model = load_embed_model(cfg, out);
    nn::Checkpoint ck = nn::load_checkpoint(out + "/classifier/model.ntc");
    uint64_t seed = cfg.stage_seed("train-classifier");
    if (cfg.get_str("classifier.arch") == "point") {
        b.point.emplace(pointnet_config(cfg, b.k), derive_seed(seed, "init"));
        auto params = b.point->parameters();
        nn::restore_params(ck, params);
    } else {
        b.mask.emplace(masknet_config(cfg, b.k), derive_seed(seed, "init"));
        auto params = b.mask->parameters();
        nn::restore_params(ck, params);
    }
    return b;
}

/// Scores one candidate pair; returns nullopt when the pair's segments are
/// absent from the crop (callers decide the fallback).
std::optional<double> score_pair(const config::RunConfig& cfg, ClassifierBundle& b, const LoadedVolume& lv,
                                 const embed::EmbeddingField* field, const reg::CandidatePair& pair,
                                 uint64_t seed) {
    if (b.constant >= 0) return b.constant;
    try {
        if (b.is_point()) {
            double cube = cfg.get_double("classifier.cube_nm");
            double cube_z = cfg.get_double("classifier.cube_z_nm");
            connect::RawPoints raw =
                connect::extract_contour_points(lv.volume, pair, {cube, cube, cube_z > 0 ? cube_z : cube});
            connect::PointSample s =
                connect::build_point_sample(raw, int(cfg.get_int("classifier.points")), field, seed);
            return connect::predict_connectivity(*b.point, s);
        }
        connect::MaskSample s =
            connect::build_mask_sample(lv.volume, pair, cfg.get_double("classifier.mask_side_nm"),
                                       {int(cfg.get_int("classifier.mask_x")),
                                        int(cfg.get_int("classifier.mask_y")),
                                        int(cfg.get_int("classifier.mask_z"))},
                                       field);
        return connect::predict_connectivity(*b.mask, s);
    } catch (const Error& e) {
        if (e.tag == "empty-pair-crop") return std::nullopt;
        throw;
    }
}

void write_meta(const std::string& vdir, const std::string& split, int idx, uint64_t seed, size_t neurons,
                size_t segments, size_t positives, uint64_t config_hash) {
    std::ofstream meta(vdir + "/volume.meta");
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "split=%s\nindex=%d\nseed=%llu\nneurons=%zu\nsegments=%zu\npositive_pairs=%zu\n"
                  "config=%016llx\nversion=%s\n",
                  split.c_str(), idx, (unsigned long long)seed, neurons, segments, positives,
                  (unsigned long long)config_hash, kVersion);
    meta << buf;
}

}  // namespace

void apply_run_settings(const config::RunConfig& cfg, bool force_deterministic) {
    if (force_deterministic || cfg.get_bool("run.deterministic")) {
        set_thread_count(1);
        return;
    }
    int threads = int(cfg.get_int("run.threads"));
    if (threads > 0) set_thread_count(threads);
}

void run_synth(const config::RunConfig& cfg, const std::string& out) {
    uint64_t stage_seed = cfg.stage_seed("synth");
    uint64_t config_hash = cfg.hash();
    std::array<int, 3> dims = volume_dims(cfg);
    Vec3 vox = voxel_size(cfg);
    for (const std::string split : {"train", "test"}) {
        bool degrade_split = split == "test" || cfg.get_bool("synth.artifacts_in_train");
        for (int i = 0; i < volume_count(cfg, split); ++i) {
            uint64_t vseed = hash_combine(stage_seed, fnv1a64(split) + uint64_t(i));
            synth::SynthConfig scfg = synth_config(cfg, vseed);
            if (degrade_split) scfg.artifacts = draw_artifacts(cfg, dims, vox, vseed);
            auto neurons = synth::generate_neurons(scfg, dims, vox);
            synth::VoxelizeAux aux;
            LabeledVolume v = synth::voxelize(neurons, dims, vox, scfg, &aux);
            auto truth = synth::oversegment(v, aux, neurons, scfg);
            if (degrade_split) {
                v = synth::degrade(v, scfg.artifacts, vseed);
                // ground truth follows the shifted stack
                synth::shift_skeletons_for_artifacts(neurons, scfg.artifacts, vox);
                for (auto& t : truth) t.cut_center = synth::misaligned_position(t.cut_center, scfg.artifacts, vox);
            }
            std::string vdir = volume_dir(out, split, i);
            save_volume(vdir, v, config_hash);
            fs::create_directories(vdir + "/skeletons");
            for (size_t n = 0; n < neurons.size(); ++n) {
                char name[64];
                std::snprintf(name, sizeof(name), "%s/skeletons/neuron_%03zu.swc", vdir.c_str(), n + 1);
                std::ofstream swc(name);
                char hdr[96];
                std::snprintf(hdr, sizeof(hdr), "# neutrace skeleton, unit nm, config=%016llx\n",
                              (unsigned long long)config_hash);
                swc << hdr;
                geom::serialize_swc(neurons[n], swc, 1.0);
            }
            std::vector<reg::CandidatePair> oracle;
            for (const auto& t : truth) oracle.push_back({t.seg_a, t.seg_b, t.cut_center, 1, {0, 0, 0}});
            reg::save_pairs(vdir + "/oracle_pairs.txt", oracle, config_hash);
            SegmentTable table = build_segment_table(v);
            write_meta(vdir, split, i, vseed, neurons.size(), table.entries.size(), truth.size(), config_hash);
        }
    }
}

void run_build_pairs(const config::RunConfig& cfg, const std::string& out) {
    reg::RegisterConfig rc = register_config(cfg);
    uint64_t stage_seed = cfg.stage_seed("build-pairs");
    fs::create_directories(out + "/pairs");
    for (const std::string split : {"train", "test"}) {
        for (int i = 0; i < volume_count(cfg, split); ++i) {
            LoadedVolume lv = load_stage_volume(out, split, i, false);
            auto pairs =
                reg::build_candidate_pairs(lv.skeletons, lv.volume, rc, hash_combine(stage_seed, uint64_t(i)));
            reg::save_pairs(pairs_path(out, split, i), pairs, cfg.hash());
        }
    }
}

void run_train_embed(const config::RunConfig& cfg, const std::string& out) {
    embed::EmbedTrainConfig ecfg = embed_config(cfg);
    std::vector<LoadedVolume> volumes;
    for (int i = 0; i < volume_count(cfg, "train"); ++i) volumes.push_back(load_stage_volume(out, "train", i, true));
    std::vector<embed::TrainVolume> tvs;
    for (auto& lv : volumes) {
        embed::TrainVolume tv;
        tv.volume = &lv.volume;
        tv.table = &lv.table;
        for (const auto& p : lv.pairs)
            if (p.label == 1) tv.positives.push_back(p);
        tvs.push_back(tv);
    }
    embed::EmbedNet model(ecfg.net, derive_seed(ecfg.seed, "init"));
    fs::create_directories(out + "/embed");
    std::ofstream log(out + "/embed/train_log.csv");
    embed::write_train_log_header(log, cfg.hash());
    embed::train_embed(model, tvs, ecfg, &log);
    auto params = model.parameters();
    nn::save_checkpoint(out + "/embed/embednet.ntc", "embednet", cfg.hash(), params);
}

void run_train_classifier(const config::RunConfig& cfg, const std::string& out) {
    Fusion fusion = fusion_of(cfg);
    int k = fusion == Fusion::None ? 0 : (fusion == Fusion::Intensity ? 1 : int(cfg.get_int("embed.k")));
    std::optional<embed::EmbedNet> embed_model;
    if (fusion == Fusion::Embed) embed_model = load_embed_model(cfg, out);

    bool point_arch = cfg.get_str("classifier.arch") == "point";
    if (!point_arch && cfg.get_str("classifier.arch") != "mask")
        fail("config-error", "classifier.arch must be point or mask");

    uint64_t stage_seed = cfg.stage_seed("train-classifier");
    fs::create_directories(out + "/classifier");
    std::vector<connect::PointSample> point_samples;
    std::vector<connect::MaskSample> mask_samples;
    for (int i = 0; i < volume_count(cfg, "train"); ++i) {
        LoadedVolume lv = load_stage_volume(out, "train", i, true);
        FusionFields fields = make_fusion_fields(cfg, fusion, lv.volume, embed_model ? &*embed_model : nullptr);
        double cube = cfg.get_double("classifier.cube_nm");
        double cube_z = cfg.get_double("classifier.cube_z_nm");
        Vec3 cube_vec{cube, cube, cube_z > 0 ? cube_z : cube};
        int m = int(cfg.get_int("classifier.points"));
        for (size_t j = 0; j < lv.pairs.size(); ++j) {
            uint64_t pair_seed = hash_combine(stage_seed, uint64_t(i) * 1000003u + uint64_t(j));
            try {
                const embed::EmbeddingField* fptr = fields.for_pair(lv.pairs[j]);
                if (point_arch) {
                    connect::RawPoints raw =
                        connect::extract_contour_points(lv.volume, lv.pairs[j], cube_vec);
                    connect::PointSample s = connect::build_point_sample(raw, m, fptr, pair_seed);
                    s.label = lv.pairs[j].label;
                    s.seg_a = lv.pairs[j].seg_a;
                    s.seg_b = lv.pairs[j].seg_b;
                    point_samples.push_back(std::move(s));
                } else {
                    connect::MaskSample s = connect::build_mask_sample(
                        lv.volume, lv.pairs[j], cfg.get_double("classifier.mask_side_nm"),
                        {int(cfg.get_int("classifier.mask_x")), int(cfg.get_int("classifier.mask_y")),
                         int(cfg.get_int("classifier.mask_z"))},
                        fptr);
                    s.label = lv.pairs[j].label;
                    mask_samples.push_back(std::move(s));
                }
            } catch (const Error& e) {
                if (e.tag != "empty-pair-crop") throw;
            }
        }
    }

    connect::ClassifierTrainConfig tcfg = classifier_train_config(cfg);
    std::ofstream log(out + "/classifier/train_log.csv");
    connect::write_classifier_log_header(log, cfg.hash());
    if (point_arch) {
        connect::save_point_samples(out + "/classifier/samples_train.cache", point_samples, cfg.hash());
        connect::PointNet model(pointnet_config(cfg, k), derive_seed(stage_seed, "init"));
        connect::train_classifier(model, point_samples, tcfg, &log);
        auto params = model.parameters();
        nn::save_checkpoint(out + "/classifier/model.ntc", "pointnet", cfg.hash(), params);
    } else {
        connect::save_mask_samples(out + "/classifier/samples_train.cache", mask_samples, cfg.hash());
        connect::MaskNet model(masknet_config(cfg, k), derive_seed(stage_seed, "init"));
        connect::train_classifier(model, mask_samples, tcfg, &log);
        auto params = model.parameters();
        nn::save_checkpoint(out + "/classifier/model.ntc", "masknet", cfg.hash(), params);
    }
}

void run_eval(const config::RunConfig& cfg, const std::string& out) {
    ClassifierBundle bundle = load_classifier(cfg, out);
    uint64_t stage_seed = cfg.stage_seed("eval");
    fs::create_directories(out + "/eval");
    std::vector<double> probs;
    std::vector<int> labels;
    std::ofstream pred(out + "/eval/predictions.csv");
    char buf[160];
    std::snprintf(buf, sizeof(buf), "# config=%016llx\n", (unsigned long long)cfg.hash());
    pred << buf << "seg_a,seg_b,probability,label\n";
    for (int i = 0; i < volume_count(cfg, "test"); ++i) {
        LoadedVolume lv = load_stage_volume(out, "test", i, true);
        FusionFields fields;
        if (bundle.constant < 0)
            fields = make_fusion_fields(cfg, bundle.fusion, lv.volume,
                                        bundle.embed_model ? &*bundle.embed_model : nullptr);
        auto pairs = eval_pairs(lv.pairs, int(cfg.get_int("eval.negatives_per_positive")),
                                hash_combine(stage_seed, uint64_t(i)));
        for (size_t j = 0; j < pairs.size(); ++j) {
            std::optional<double> p = score_pair(cfg, bundle, lv, fields.for_pair(pairs[j]), pairs[j],
                                                 hash_combine(stage_seed, j));
            if (!p) continue;  // pair invisible to the classifier crop
            probs.push_back(*p);
            labels.push_back(pairs[j].label);
            std::snprintf(buf, sizeof(buf), "%u,%u,%.6f,%d\n", pairs[j].seg_a, pairs[j].seg_b, *p,
                          pairs[j].label);
            pred << buf;
        }
    }
    eval::EvalReport report = eval::score_predictions(probs, labels);
    std::ofstream curve(out + "/eval/pr_curve.csv");
    eval::write_pr_curve_csv(curve, report, cfg.hash());
    std::ofstream svg(out + "/eval/pr_curve.svg");
    eval::write_pr_curve_svg(svg, report);
    std::ofstream summary(out + "/eval/summary.txt");
    eval::write_summary(summary, report, cfg.hash());
}

namespace {

/// Optional endpoint-detection candidate mode: approximate each segment's
/// skeleton by per-slice centroids, take its two extreme points, and pair the
/// segment with every other segment near each endpoint.
std::vector<reg::CandidatePair> endpoint_candidates(const config::RunConfig& cfg, const LoadedVolume& lv) {
    reg::SliceCentroids centroids = reg::build_slice_centroids(lv.volume);
    double cube = cfg.get_double("register.cube_nm");
    std::vector<reg::CandidatePair> out;
    for (const auto& [seg, entry] : lv.table.entries) {
        const std::vector<Vec3>* cs = centroids.find(seg);
        if (!cs || cs->size() < 2) continue;
        // extremes along the dominant axis of the centroid cloud
        Vec3 lo = (*cs)[0], hi = (*cs)[0];
        for (const Vec3& c : *cs)
            for (int a = 0; a < 3; ++a) {
                if (c[a] < lo[a]) lo[a] = c[a];
                if (c[a] > hi[a]) hi[a] = c[a];
            }
        int axis = 0;
        for (int a = 1; a < 3; ++a)
            if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
        const Vec3* end_a = &(*cs)[0];
        const Vec3* end_b = &(*cs)[0];
        for (const Vec3& c : *cs) {
            if (c[axis] < (*end_a)[axis]) end_a = &c;
            if (c[axis] > (*end_b)[axis]) end_b = &c;
        }
        for (const Vec3* endpoint : {end_a, end_b}) {
            auto [cx, cy, cz] = lv.volume.voxel_of(*endpoint);
            int rx = int(std::lround(cube * 0.5 / lv.volume.voxel_size.x));
            int ry = int(std::lround(cube * 0.5 / lv.volume.voxel_size.y));
            int rz = int(std::lround(cube * 0.5 / lv.volume.voxel_size.z));
            std::set<uint32_t> nearby;
            for (int z = std::max(0, cz - rz); z <= std::min(lv.volume.dims[2] - 1, cz + rz); ++z)
                for (int y = std::max(0, cy - ry); y <= std::min(lv.volume.dims[1] - 1, cy + ry); ++y)
                    for (int x = std::max(0, cx - rx); x <= std::min(lv.volume.dims[0] - 1, cx + rx); ++x) {
                        uint32_t other = lv.volume.segment_ids[lv.volume.idx(x, y, z)];
                        if (other != 0 && other != seg) nearby.insert(other);
                    }
            for (uint32_t other : nearby)
                if (seg < other) out.push_back({seg, other, *endpoint, 0, {0, 0, 0}});
        }
    }
    return out;
}

}  // namespace

void run_trace(const config::RunConfig& cfg, const std::string& out) {
    ClassifierBundle bundle = load_classifier(cfg, out);
    uint64_t stage_seed = cfg.stage_seed("trace");
    fs::create_directories(out + "/trace");
    double threshold = cfg.get_double("trace.merge_threshold");
    bool endpoints = cfg.get_str("trace.candidate_mode") == "endpoints";

    std::ofstream result(out + "/trace/result.txt");
    char buf[256];
    std::snprintf(buf, sizeof(buf), "config=%016llx\nversion=%s\nmerge_threshold=%.4f\n",
                  (unsigned long long)cfg.hash(), kVersion, threshold);
    result << buf;

    for (int i = 0; i < volume_count(cfg, "test"); ++i) {
        LoadedVolume lv = load_stage_volume(out, "test", i, true);
        FusionFields fields;
        if (bundle.constant < 0)
            fields = make_fusion_fields(cfg, bundle.fusion, lv.volume,
                                        bundle.embed_model ? &*bundle.embed_model : nullptr);
        std::vector<reg::CandidatePair> candidates =
            endpoints ? endpoint_candidates(cfg, lv)
                      : eval_pairs(lv.pairs, int(cfg.get_int("eval.negatives_per_positive")),
                                   hash_combine(stage_seed, uint64_t(i)));
        std::vector<uint32_t> universe;
        for (const auto& [seg, e] : lv.table.entries) universe.push_back(seg);
        std::vector<std::vector<uint32_t>> node_maps;
        for (const auto& skel : lv.skeletons)
            node_maps.push_back(
                reg::assign_nodes(skel, lv.volume, int(cfg.get_int("register.search_radius_vox"))).node_seg);

        size_t scored_index = 0;
        auto scorer = [&](const reg::CandidatePair& p) {
            std::optional<double> s =
                score_pair(cfg, bundle, lv, fields.for_pair(p), p, hash_combine(stage_seed, scored_index++));
            return s.value_or(0.0);
        };
        eval::TracingResult tr =
            eval::tracing_experiment(lv.skeletons, node_maps, universe, candidates, scorer, threshold);

        std::snprintf(buf, sizeof(buf),
                      "volume=test_%03d candidates=%zu erl_before_nm=%.3f erl_after_nm=%.3f relative_gain=%.6f\n",
                      i, candidates.size(), tr.erl_before_nm, tr.erl_after_nm, tr.relative_gain);
        result << buf;

        char name[128];
        std::snprintf(name, sizeof(name), "%s/trace/clusters_test_%03d.csv", out.c_str(), i);
        std::ofstream clusters(name);
        std::snprintf(buf, sizeof(buf), "# config=%016llx\n", (unsigned long long)cfg.hash());
        clusters << buf << "segment,cluster\n";
        for (const auto& [seg, rep] : tr.clusters) clusters << seg << "," << rep << "\n";

        std::snprintf(name, sizeof(name), "%s/trace/per_skeleton_test_%03d.csv", out.c_str(), i);
        std::ofstream per(name);
        per << buf << "skeleton,erl_nm\n";
        for (size_t s = 0; s < tr.per_skeleton_erl.size(); ++s) {
            std::snprintf(buf, sizeof(buf), "%zu,%.3f\n", s, tr.per_skeleton_erl[s]);
            per << buf;
        }
    }
}

void run_gradcheck(int instances, uint64_t seed, std::ostream& out) {
    auto reports = nn::run_gradchecks(instances, seed);
    char buf[160];
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof(buf), "%-18s instances=%d max_rel_err=%.3g tol=%.1g %s\n", r.name.c_str(),
                      r.instances, r.max_rel_err, r.tolerance, r.pass ? "pass" : "FAIL");
        out << buf;
    }
    if (!nn::all_passed(reports)) fail("gradcheck-failed", "finite-difference gradient checks failed");
}

}  // namespace neutrace::pipeline
