#pragma once

#include <iosfwd>

#include "neutrace/connect/models.hpp"
#include "neutrace/nn/optim.hpp"

namespace neutrace::connect {

struct ClassifierTrainConfig {
    int steps = 2000;
    int batch_size = 16;
    double pos_fraction = 0.3;  // positive share of each batch (3:7)
    nn::LrSchedule lr{0.001, 100, 2000, {0.7}, 0.3};
    float weight_decay = 1e-4f;
    bool augment = true;  // per-draw 90-degree rotations and flips of the geometry
    int log_every = 25;
    uint64_t seed = 1;
};

/// Rebalancing batch sampler: each slot is positive with probability
/// pos_fraction, drawn uniformly from the matching index pool.
struct BatchSampler {
    std::vector<int64_t> positives, negatives;
    double pos_fraction = 0.3;
    std::mt19937_64 rng;

    BatchSampler(const std::vector<int>& labels, double fraction, uint64_t seed)
        : pos_fraction(fraction), rng(seed) {
        for (size_t i = 0; i < labels.size(); ++i)
            (labels[i] ? positives : negatives).push_back(int64_t(i));
        if (positives.empty() || negatives.empty())
            fail("data-error", "classifier training requires both positive and negative samples");
    }

    std::vector<int64_t> next(int batch_size) {
        std::uniform_real_distribution<double> u(0, 1);
        std::vector<int64_t> out(batch_size);
        for (int i = 0; i < batch_size; ++i) {
            const auto& pool = u(rng) < pos_fraction ? positives : negatives;
            out[i] = pool[rng() % pool.size()];
        }
        return out;
    }
};

struct ClassifierLogRow {
    int64_t step = 0;
    double loss = 0, accuracy = 0;
};

struct ClassifierTrainResult {
    std::vector<ClassifierLogRow> log;
    double final_train_accuracy = 0;
};

ClassifierTrainResult train_classifier(PointNet& model, const std::vector<PointSample>& samples,
                                       const ClassifierTrainConfig& cfg, std::ostream* log_csv = nullptr);
ClassifierTrainResult train_classifier(MaskNet& model, const std::vector<MaskSample>& samples,
                                       const ClassifierTrainConfig& cfg, std::ostream* log_csv = nullptr);

void write_classifier_log_header(std::ostream& out, uint64_t config_hash);

}  // namespace neutrace::connect
