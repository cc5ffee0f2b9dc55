#pragma once

#include <cstdint>
#include <vector>

#include "neutrace/geom.hpp"
#include "neutrace/volume.hpp"

namespace neutrace::synth {

struct Artifact {
    enum Kind { MissingSection, Misalignment };
    Kind kind = MissingSection;
    int z = 0;
    Vec3 shift_nm{0, 0, 0};  // misalignment only; x/y components
};

struct SynthConfig {
    int neuron_count = 20;
    double stiffness = 0.88;  // direction momentum in [0,1)
    double radius_min_nm = 55;
    double radius_max_nm = 115;
    double node_spacing_nm = 120;
    double cable_min_um = 5;
    double cable_max_um = 12;
    // fraction of neurons laid out as a mostly-parallel bundle along z, the
    // packing that dominates real neuropil; the rest are free random walks
    double bundle_fraction = 0.0;
    double bundle_jitter = 0.25;
    double cut_rate_per_um = 0.6;  // expected cuts per micron of cable
    double min_cut_gap_nm = 600;
    double cut_end_margin_nm = 500;
    double clearance_nm = 90;  // extra gap between tubes beyond touching radii
    double wall_margin_nm = 160;

    // image rendering: dark membranes, per-neuron interior gray and speckle
    // texture, light background. Speckle is mean-compensated: dot density
    // identifies the neuron while the mean interior intensity barely moves,
    // so identity is carried by texture rather than a flat gray level.
    double bg_gray = 0.84;
    double membrane_gray = 0.10;
    double interior_base = 0.42;
    double interior_span = 0.14;
    double speckle_amp = 0.22;
    double speckle_density_min = 0.04;
    double speckle_density_max = 0.30;
    double noise_sigma = 0.045;

    std::vector<Artifact> artifacts;
    // artifact planes sever the segmentation: tubes crossing a damaged
    // section are cut there (how split errors cluster in real stacks)
    bool cut_at_artifacts = true;
    uint64_t seed = 1;
};

/// Smooth random-walk tube centerlines with per-node radii, all inside the
/// volume, pairwise non-overlapping. Deterministic in config.seed.
std::vector<geom::Skeleton> generate_neurons(const SynthConfig& cfg, const std::array<int, 3>& dims,
                                             const Vec3& voxel_size);

/// Arc length (nm along the owning centerline) of the nearest centerline point,
/// per voxel. Used to partition tubes with cuts transverse to the tangent.
struct VoxelizeAux {
    std::vector<float> arc;
};

/// Rasterizes tubes into neuron_ids (nearest centerline within its radius,
/// ties to the lower neuron id) and renders an EM-like image.
LabeledVolume voxelize(const std::vector<geom::Skeleton>& neurons, const std::array<int, 3>& dims,
                       const Vec3& voxel_size, const SynthConfig& cfg, VoxelizeAux* aux = nullptr);

/// Ground-truth connection: segments seg_a/seg_b are adjacent across a cut of
/// the same neuron, with the true truncation point at the cut center.
struct TruePair {
    uint32_t seg_a = 0, seg_b = 0;
    Vec3 cut_center;
    uint32_t neuron = 0;
};

/// Partitions each neuron's voxels into segments by cutting at Poisson-sampled
/// planes transverse to the centerline; fills segment_ids and returns the
/// exhaustive positive-pair list. Explicit per-neuron cut arcs can be supplied
/// for tests via `forced_cuts` (indexed by neuron id - 1).
std::vector<TruePair> oversegment(LabeledVolume& v, const VoxelizeAux& aux,
                                  const std::vector<geom::Skeleton>& neurons, const SynthConfig& cfg,
                                  const std::vector<std::vector<double>>* forced_cuts = nullptr);

/// Applies imaging artifacts: missing sections decorrelate one image slice from
/// the labels; misalignment translates image and labels together for z >= index.
LabeledVolume degrade(const LabeledVolume& v, const std::vector<Artifact>& artifacts, uint64_t seed);

/// Maps a ground-truth point through the misalignment artifacts so skeletons
/// and truncation points stay registered to the shifted labels (proofread
/// skeletons trace the stack as imaged, jumps included). Shifts are quantized
/// to whole voxels exactly as degrade applies them.
Vec3 misaligned_position(const Vec3& p, const std::vector<Artifact>& artifacts, const Vec3& voxel_size);

void shift_skeletons_for_artifacts(std::vector<geom::Skeleton>& neurons, const std::vector<Artifact>& artifacts,
                                   const Vec3& voxel_size);

}  // namespace neutrace::synth
