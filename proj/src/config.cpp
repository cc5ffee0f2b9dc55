#include "neutrace/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>

namespace neutrace::config {

const std::vector<SchemaEntry>& schema() {
    static const std::vector<SchemaEntry> entries = {
        {"run.seed", "1", "master seed; per-stage seeds derive from it"},
        {"run.threads", "0", "worker threads, 0 = hardware"},
        {"run.deterministic", "false", "force single-threaded execution"},

        {"synth.train_volumes", "2", "training volumes to generate"},
        {"synth.test_volumes", "1", "held-out volumes to generate"},
        {"synth.dim_x", "128", "volume width in voxels"},
        {"synth.dim_y", "128", "volume height in voxels"},
        {"synth.dim_z", "48", "volume depth in voxels"},
        {"synth.voxel_x_nm", "16", "voxel size along x"},
        {"synth.voxel_y_nm", "16", "voxel size along y"},
        {"synth.voxel_z_nm", "40", "voxel size along z (section thickness)"},
        {"synth.neuron_count", "6", "tubes per volume"},
        {"synth.stiffness", "0.88", "centerline direction momentum"},
        {"synth.bundle_fraction", "0.0", "fraction of tubes laid out as a parallel bundle"},
        {"synth.bundle_jitter", "0.25", "direction jitter within the bundle"},
        {"synth.radius_min_nm", "55", ""},
        {"synth.radius_max_nm", "115", ""},
        {"synth.node_spacing_nm", "120", "skeleton node spacing"},
        {"synth.cable_min_um", "2", ""},
        {"synth.cable_max_um", "4.5", ""},
        {"synth.cut_rate_per_um", "0.8", "expected cuts per micron of cable"},
        {"synth.min_cut_gap_nm", "600", ""},
        {"synth.cut_end_margin_nm", "500", ""},
        {"synth.clearance_nm", "90", "gap between tubes beyond touching radii"},
        {"synth.wall_margin_nm", "160", ""},
        {"synth.noise_sigma", "0.045", "image noise"},
        {"synth.bg_gray", "0.84", ""},
        {"synth.membrane_gray", "0.10", ""},
        {"synth.interior_base", "0.42", ""},
        {"synth.interior_span", "0.14", "per-tube flat gray span"},
        {"synth.speckle_amp", "0.22", "organelle-like dot darkness"},
        {"synth.speckle_density_min", "0.04", ""},
        {"synth.speckle_density_max", "0.30", "per-tube dot density identifies the tube"},
        {"synth.missing_sections", "2", "missing-section artifacts per volume"},
        {"synth.misalignments", "1", "misalignment artifacts per volume"},
        {"synth.misalign_min_nm", "300", ""},
        {"synth.misalign_max_nm", "800", ""},
        {"synth.artifacts_in_train", "true", "degrade training volumes too"},
        {"synth.cut_at_artifacts", "true", "damaged sections sever crossing tubes"},

        {"register.search_radius_vox", "20", "background fallback search radius"},
        {"register.shift_sigma_nm", "200", "random shift applied to truncation points"},
        {"register.cube_nm", "2560", "negative-sampling cube side (xy)"},
        {"register.cube_z_nm", "0", "cube depth, 0 = same as xy"},
        {"register.negatives_per_positive", "20", ""},
        {"register.block_x_nm", "1280", "desk-scale block partition"},
        {"register.block_y_nm", "1280", ""},
        {"register.block_z_nm", "960", ""},
        {"register.min_block_positives", "1", "blocks below this positive count are dropped"},
        {"register.densify_step_nm", "0", "chamfer edge densification, 0 = node-only"},

        {"embed.crop_x", "65", "training crop in voxels"},
        {"embed.crop_y", "65", ""},
        {"embed.crop_z", "9", ""},
        {"embed.k", "16", "embedding dimension"},
        {"embed.c0", "12", "channels at full resolution"},
        {"embed.c1", "18", ""},
        {"embed.c2", "24", ""},
        {"embed.se_reduction", "4", "squeeze-excitation bottleneck"},
        {"embed.lambda1", "0.1", "merge loss weight"},
        {"embed.lambda2", "1.0", "split loss weight"},
        {"embed.lambda3_start", "1.0", "clustering weight at step 0"},
        {"embed.lambda3_end", "0.2", "clustering weight at the end"},
        {"embed.delta_d", "1.5", "split margin is 2*delta_d"},
        {"embed.delta_v", "0.5", "internal clustering margin"},
        {"embed.gamma", "0.001", "mean-norm regularizer weight"},
        {"embed.n_negatives", "20", "negatives sampled per crop"},
        {"embed.batch_size", "2", ""},
        {"embed.steps", "20000", ""},
        {"embed.lr", "0.002", ""},
        {"embed.warmup_steps", "200", ""},
        {"embed.decay_points", "0.6,0.85", "fractions of total steps"},
        {"embed.decay_factor", "0.3", ""},
        {"embed.weight_decay", "0.0001", ""},
        {"embed.augment_rotate", "true", ""},
        {"embed.augment_flip", "true", ""},
        {"embed.augment_rescale", "true", ""},
        {"embed.augment_intensity", "true", ""},
        {"embed.finetune", "false", "second pass over the highest-loss blocks"},
        {"embed.finetune_fraction", "0.2", ""},
        {"embed.finetune_steps", "0", "0 = steps / 5"},
        {"embed.max_pseudo_masks", "24", ""},
        {"embed.log_every", "10", ""},
        {"embed.tile_x", "0", "full-volume inference tile, 0 = training crop"},
        {"embed.tile_y", "0", ""},
        {"embed.tile_z", "0", ""},
        {"embed.margin_x", "0", "tile overlap margin"},
        {"embed.margin_y", "0", ""},
        {"embed.margin_z", "0", ""},

        {"classifier.arch", "point", "point | mask"},
        {"classifier.fusion", "none", "none | intensity | embed"},
        {"classifier.points", "2048", "points per sample after FPS"},
        {"classifier.cube_nm", "2560", "contour sampling cube (xy)"},
        {"classifier.cube_z_nm", "0", "cube depth, 0 = same as xy"},
        {"classifier.mask_side_nm", "1200", "mask crop side"},
        {"classifier.mask_x", "52", "mask resize dims"},
        {"classifier.mask_y", "52", ""},
        {"classifier.mask_z", "18", ""},
        {"classifier.sa1_centroids", "256", ""},
        {"classifier.sa1_neighbors", "16", ""},
        {"classifier.sa1_width", "32", ""},
        {"classifier.sa2_centroids", "64", ""},
        {"classifier.sa2_neighbors", "8", ""},
        {"classifier.sa2_width", "64", ""},
        {"classifier.global_width", "128", ""},
        {"classifier.head_width", "64", ""},
        {"classifier.mask_f1", "16", "mask model filter counts"},
        {"classifier.mask_f2", "32", ""},
        {"classifier.mask_f3", "64", ""},
        {"classifier.mask_head", "128", ""},
        {"classifier.steps", "2000", ""},
        {"classifier.batch_size", "16", ""},
        {"classifier.pos_fraction", "0.3", "positive share per batch (3:7)"},
        {"classifier.lr", "0.001", ""},
        {"classifier.warmup_steps", "100", ""},
        {"classifier.decay_points", "0.7", ""},
        {"classifier.decay_factor", "0.3", ""},
        {"classifier.weight_decay", "0.0001", ""},
        {"classifier.augment", "true", "per-draw rotations/flips of the sample geometry"},
        {"classifier.log_every", "25", ""},

        {"eval.negatives_per_positive", "1", "evaluation pairs are sampled 1:1"},
        {"eval.classifier", "", "empty = trained checkpoint, or constant:<p>"},

        {"trace.merge_threshold", "0.98", "agglomeration threshold"},
        {"trace.candidate_mode", "registration", "registration | endpoints"},
    };
    return entries;
}

namespace {

const std::map<std::string, std::string>& schema_map() {
    static std::map<std::string, std::string> m = [] {
        std::map<std::string, std::string> out;
        for (const auto& e : schema()) out[e.key] = e.default_value;
        return out;
    }();
    return m;
}

}  // namespace

const std::string& RunConfig::get_str(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) fail("config-error", "unknown config key: " + key);
    return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
    const std::string& s = get_str(key);
    int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        fail("config-error", "config key " + key + " is not an integer: " + s);
    return v;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& s = get_str(key);
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail("config-error", "config key " + key + " is not a number: " + s);
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& s = get_str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    fail("config-error", "config key " + key + " is not a boolean: " + s);
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!schema_map().count(key)) fail("config-error", "unknown config key: " + key);
    values[key] = value;
}

std::string RunConfig::canonical_text() const {
    std::string out;
    for (const auto& [k, v] : values) {  // std::map: sorted keys
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

uint64_t RunConfig::hash() const { return fnv1a64(canonical_text()); }

RunConfig defaults() {
    RunConfig cfg;
    for (const auto& e : schema()) cfg.values[e.key] = e.default_value;
    return cfg;
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("config-error", "cannot open config file " + path);
    RunConfig cfg = defaults();
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            fail("config-error", path + ":" + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
        if (!schema_map().count(key))
            fail("config-error", path + ":" + std::to_string(line_no) + ": unknown config key: " + key);
        cfg.values[key] = value;
    }
    return cfg;
}

RunConfig resolve(const std::string& file_path, const std::vector<std::string>& overrides) {
    RunConfig cfg = file_path.empty() ? defaults() : load_file(file_path);
    for (const std::string& o : overrides) {
        size_t eq = o.find('=');
        if (eq == std::string::npos) fail("config-error", "--set expects key=value, got: " + o);
        cfg.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
    return cfg;
}

void write_default_config(std::ostream& out) {
    std::string section;
    for (const auto& e : schema()) {
        std::string key = e.key;
        std::string sec = key.substr(0, key.find('.'));
        std::string name = key.substr(key.find('.') + 1);
        if (sec != section) {
            out << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
            section = sec;
        }
        out << name << " = " << e.default_value;
        if (e.doc[0]) out << "  # " << e.doc;
        out << "\n";
    }
}

}  // namespace neutrace::config
