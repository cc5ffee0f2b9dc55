#pragma once

#include <iosfwd>
#include <optional>

#include "neutrace/embed/field.hpp"
#include "neutrace/embed/losses.hpp"
#include "neutrace/nn/optim.hpp"
#include "neutrace/registration.hpp"

namespace neutrace::embed {

struct EmbedTrainConfig {
    std::array<int, 3> crop{65, 65, 9};  // W, H, D voxels
    EmbedNetConfig net;
    double lambda1 = 0.1, lambda2 = 1.0;
    double lambda3_start = 1.0, lambda3_end = 0.2;
    double delta_d = 1.5, delta_v = 0.5, gamma = 0.001;
    int n_negatives = 20;
    int batch_size = 2;
    int steps = 20000;
    nn::LrSchedule lr{0.002, 200, 20000, {0.6, 0.85}, 0.3};
    float weight_decay = 1e-4f;
    bool augment_rotate = true, augment_flip = true, augment_rescale = true, augment_intensity = true;
    bool finetune = false;           // second pass over the highest-loss blocks
    double finetune_fraction = 0.2;  // fraction of blocks retrained
    int finetune_steps = 0;          // 0: steps / 5
    int max_pseudo_masks = 24;
    int log_every = 1;
    uint64_t seed = 1;

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0 || lambda3_start < 0 || lambda3_end < 0)
            fail("config-error", "loss weights must be non-negative");
        if (delta_d <= 0) fail("config-error", "delta_d must be positive");
        if (lambda3_end > lambda3_start) fail("config-error", "lambda3 schedule must not increase");
    }
};

/// One training volume plus its positive candidate pairs.
struct TrainVolume {
    const LabeledVolume* volume = nullptr;
    const SegmentTable* table = nullptr;
    std::vector<reg::CandidatePair> positives;
};

struct TrainLogRow {
    int64_t step = 0;
    double merge = 0, split = 0, seg = 0, lambda3 = 0, total = 0;
};

struct EmbedTrainResult {
    std::vector<TrainLogRow> log;
    int64_t skipped_samples = 0;
    int64_t finetune_start_step = -1;
};

/// Trains the embedding network: each step samples positives, crops around
/// their truncation points, draws negatives from segments visible in the crop
/// (excluding the pair's neuron), and applies the connectivity loss with the
/// scheduled clustering weight. Deterministic in config.seed for a fixed
/// thread-independent sample order.
EmbedTrainResult train_embed(EmbedNet& model, const std::vector<TrainVolume>& volumes,
                             const EmbedTrainConfig& cfg, std::ostream* log_csv = nullptr);

void write_train_log_header(std::ostream& out, uint64_t config_hash);

/// Eval item for the mean-rank probe: one positive pair and its negatives.
struct RankItem {
    reg::CandidatePair positive;
    std::vector<uint32_t> negatives;
};

/// Builds rank items by sampling up to n negatives per positive from the
/// segments visible in the inference window around the truncation point,
/// excluding the pair's ground-truth neuron. The window matches the training
/// crop geometry so evaluation sees the distribution the network was fit on.
std::vector<RankItem> build_rank_items(const LabeledVolume& v, const SegmentTable& table,
                                       const std::vector<reg::CandidatePair>& positives, int n,
                                       const std::array<int, 3>& window, uint64_t seed);

/// 1-based rank of the positive distance among {positive} + negatives; ties
/// rank pessimistically (a negative at the same distance outranks the positive).
inline int pessimistic_rank(double d_pos, const std::vector<double>& d_negs) {
    int rank = 1;
    for (double d : d_negs)
        if (d <= d_pos) rank++;
    return rank;
}

/// Mean 1-based rank of the positive distance among all candidates. For each
/// item the network runs on one window centered at the truncation point and
/// segment means are taken within it. Ties rank pessimistically. Lower is
/// better; 1.0 means the positive is always nearest.
double rank_discriminability(EmbedNet& model, const LabeledVolume& v, const std::vector<RankItem>& items,
                             const std::array<int, 3>& window);

}  // namespace neutrace::embed
