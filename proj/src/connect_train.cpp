#include "neutrace/connect/train.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace neutrace::connect {

namespace {

// Per-draw augmentation. Geometry: in-plane quarter turns plus axis flips
// over the unit cube. Embedding channels: a random per-dimension translation
// plus small jitter — the contrastive objective only constrains distances,
// so absolute feature values are not meaningful and the classifier must read
// the relational structure instead.
void augment_points(nn::Tensor& t, uint64_t draw_seed) {
    std::mt19937_64 rng(draw_seed);
    int rot = int(rng() % 4);
    bool fx = rng() % 2, fy = rng() % 2, fz = rng() % 2;
    const int n = t.shape[0], c = t.shape[1];
    const int k = c - 4;
    std::vector<float> shift;
    std::normal_distribution<float> jitter(0.f, 0.02f);
    if (k > 0) {
        shift.resize(k);
        std::uniform_real_distribution<float> u(-0.5f, 0.5f);
        for (int j = 0; j < k; ++j) shift[j] = u(rng);
    }
    for (int i = 0; i < n; ++i) {
        float* row = t.data.data() + int64_t(i) * c;
        float x = row[0], y = row[1], z = row[2];
        for (int r = 0; r < rot; ++r) {
            float nx = y, ny = 1.0f - x;
            x = nx;
            y = ny;
        }
        if (fx) x = 1.0f - x;
        if (fy) y = 1.0f - y;
        if (fz) z = 1.0f - z;
        row[0] = x;
        row[1] = y;
        row[2] = z;
        for (int j = 0; j < k; ++j) row[4 + j] += shift[j] + jitter(rng);
    }
}

// Mask grids are [D][H][W][C] with square in-plane dims.
void augment_mask(nn::Tensor& t, uint64_t draw_seed) {
    std::mt19937_64 rng(draw_seed);
    int rot = int(rng() % 4);
    bool fx = rng() % 2, fy = rng() % 2, fz = rng() % 2;
    if (rot == 0 && !fx && !fy && !fz) return;
    const int D = t.shape[0], H = t.shape[1], W = t.shape[2], C = t.shape[3];
    if (rot % 2 != 0 && H != W) rot = 0;
    nn::Tensor out(t.shape);
    for (int z = 0; z < D; ++z)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                int sx = x, sy = y, sz = z;
                for (int r = 0; r < rot; ++r) {
                    int nx = sy, ny = W - 1 - sx;
                    sx = nx;
                    sy = ny;
                }
                if (fx) sx = W - 1 - sx;
                if (fy) sy = H - 1 - sy;
                if (fz) sz = D - 1 - sz;
                const float* src = t.data.data() + ((int64_t(sz) * H + sy) * W + sx) * C;
                float* dst = out.data.data() + ((int64_t(z) * H + y) * W + x) * C;
                std::copy(src, src + C, dst);
            }
    t.data.swap(out.data);
}

void augment_sample(nn::Tensor& t, const PointSample&, uint64_t draw_seed) { augment_points(t, draw_seed); }
void augment_sample(nn::Tensor& t, const MaskSample&, uint64_t draw_seed) { augment_mask(t, draw_seed); }

template <class Model, class Sample>
ClassifierTrainResult train_impl(Model& model, const std::vector<Sample>& samples,
                                 const ClassifierTrainConfig& cfg, std::ostream* log_csv,
                                 nn::Tensor (*to_tensor)(const Sample&)) {
    std::vector<int> labels(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) labels[i] = samples[i].label;
    BatchSampler sampler(labels, cfg.pos_fraction, derive_seed(cfg.seed, "batch"));

    auto params = model.parameters();
    nn::AdamW<float> opt;
    opt.weight_decay = cfg.weight_decay;

    ClassifierTrainResult result;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<int64_t> batch = sampler.next(cfg.batch_size);
        nn::zero_grads(params);
        double loss_sum = 0;
        int correct = 0;
        int slot = 0;
        for (int64_t idx : batch) {
            nn::Tensor x = to_tensor(samples[idx]);
            if (cfg.augment)
                augment_sample(x, samples[idx], hash_combine(derive_seed(cfg.seed, "aug"),
                                                             uint64_t(step) * 64 + uint64_t(slot++)));
            float logit = model.forward(x);
            float target = float(samples[idx].label);
            float dlogit = 0;
            float loss = nn::bce_with_logit(logit, target, dlogit);
            if (!std::isfinite(loss)) fail("non-finite-loss", "non-finite loss at step " + std::to_string(step));
            model.backward(dlogit / float(cfg.batch_size));
            loss_sum += loss;
            bool predicted = logit > 0;  // prob > 0.5
            correct += int(predicted == (samples[idx].label == 1));
        }
        opt.step(params, float(cfg.lr.at(step)));
        double mean_loss = loss_sum / cfg.batch_size;
        double acc = double(correct) / cfg.batch_size;
        result.final_train_accuracy = acc;
        if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            result.log.push_back({step, mean_loss, acc});
            if (log_csv) {
                char buf[96];
                std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.4f\n", (long long)step, mean_loss, acc);
                (*log_csv) << buf;
            }
        }
    }
    return result;
}

}  // namespace

void write_classifier_log_header(std::ostream& out, uint64_t config_hash) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "# config=%016llx\n", (unsigned long long)config_hash);
    out << buf << "step,loss,accuracy\n";
}

ClassifierTrainResult train_classifier(PointNet& model, const std::vector<PointSample>& samples,
                                       const ClassifierTrainConfig& cfg, std::ostream* log_csv) {
    return train_impl(model, samples, cfg, log_csv, &point_sample_tensor);
}

ClassifierTrainResult train_classifier(MaskNet& model, const std::vector<MaskSample>& samples,
                                       const ClassifierTrainConfig& cfg, std::ostream* log_csv) {
    return train_impl(model, samples, cfg, log_csv, &mask_sample_tensor);
}

}  // namespace neutrace::connect
