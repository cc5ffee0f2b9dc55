#include "neutrace/embed/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <random>

namespace neutrace::embed {

namespace {

struct RawCrop {
    std::array<int, 3> size{0, 0, 0};  // W, H, D
    std::vector<float> image01;        // [z][y][x], range [0,1]
    std::vector<uint32_t> seg;

    size_t idx(int x, int y, int z) const {
        return size_t(x) + size_t(size[0]) * (size_t(y) + size_t(size[1]) * z);
    }
};

struct AugmentPlan {
    double rescale = 1.0;
    bool flip_x = false, flip_y = false, flip_z = false;
    int rot90 = 0;  // in-plane quarter turns, requires square crop
    double gamma = 1.0;
};

AugmentPlan draw_augment(const EmbedTrainConfig& cfg, std::mt19937_64& rng) {
    AugmentPlan plan;
    std::uniform_real_distribution<double> u01d(0, 1);
    if (cfg.augment_rescale) plan.rescale = 0.9 + 0.2 * u01d(rng);
    if (cfg.augment_flip) {
        plan.flip_x = u01d(rng) < 0.5;
        plan.flip_y = u01d(rng) < 0.5;
        plan.flip_z = u01d(rng) < 0.5;
    }
    if (cfg.augment_rotate) plan.rot90 = int(rng() % 4);
    if (cfg.augment_intensity) plan.gamma = 0.8 + 0.45 * u01d(rng);
    return plan;
}

RawCrop extract_crop(const LabeledVolume& v, const Vec3& center_nm, const std::array<int, 3>& crop,
                     const AugmentPlan& plan) {
    for (int a = 0; a < 3; ++a)
        if (v.dims[a] < crop[a]) fail("data-error", "volume smaller than the training crop");
    auto c = v.voxel_of(center_nm);
    std::array<int, 3> src_size, src_start;
    for (int a = 0; a < 3; ++a) {
        src_size[a] = std::clamp(int(std::lround(crop[a] * plan.rescale)), 4, v.dims[a]);
        src_start[a] = std::clamp(c[a] - src_size[a] / 2, 0, v.dims[a] - src_size[a]);
    }
    RawCrop out;
    out.size = crop;
    out.image01.resize(size_t(crop[0]) * crop[1] * crop[2]);
    out.seg.resize(out.image01.size());
    for (int z = 0; z < crop[2]; ++z) {
        int sz = src_start[2] + int(int64_t(z) * src_size[2] / crop[2]);
        for (int y = 0; y < crop[1]; ++y) {
            int sy = src_start[1] + int(int64_t(y) * src_size[1] / crop[1]);
            for (int x = 0; x < crop[0]; ++x) {
                int sx = src_start[0] + int(int64_t(x) * src_size[0] / crop[0]);
                size_t s = v.idx(sx, sy, sz);
                out.image01[out.idx(x, y, z)] = float(v.image[s]) / 255.0f;
                out.seg[out.idx(x, y, z)] = v.segment_ids[s];
            }
        }
    }
    // integral transforms on the resized crop
    auto remap = [&](auto&& get, auto&& put) {
        for (int z = 0; z < crop[2]; ++z)
            for (int y = 0; y < crop[1]; ++y)
                for (int x = 0; x < crop[0]; ++x) {
                    int tx = plan.flip_x ? crop[0] - 1 - x : x;
                    int ty = plan.flip_y ? crop[1] - 1 - y : y;
                    int tz = plan.flip_z ? crop[2] - 1 - z : z;
                    for (int r = 0; r < plan.rot90; ++r) {
                        int nx = ty;
                        int nty = crop[0] - 1 - tx;
                        tx = nx;
                        ty = nty;
                    }
                    put(x, y, z, get(tx, ty, tz));
                }
    };
    if (plan.flip_x || plan.flip_y || plan.flip_z || plan.rot90) {
        if (plan.rot90 && crop[0] != crop[1]) fail("config-error", "in-plane rotation requires a square crop");
        std::vector<float> img2(out.image01.size());
        std::vector<uint32_t> seg2(out.seg.size());
        remap([&](int x, int y, int z) { return out.image01[out.idx(x, y, z)]; },
              [&](int x, int y, int z, float val) { img2[out.idx(x, y, z)] = val; });
        remap([&](int x, int y, int z) { return out.seg[out.idx(x, y, z)]; },
              [&](int x, int y, int z, uint32_t val) { seg2[out.idx(x, y, z)] = val; });
        out.image01.swap(img2);
        out.seg.swap(seg2);
    }
    if (plan.gamma != 1.0)
        for (auto& v8 : out.image01) v8 = std::pow(v8, float(plan.gamma));
    return out;
}

struct TrainSample {
    nn::Tensor image;  // [D][H][W][1], normalized
    Mask query, pos;
    std::vector<Mask> negs;
    std::vector<Mask> pseudo;
};

nn::Tensor crop_to_tensor(const RawCrop& c) {
    nn::Tensor x({c.size[2], c.size[1], c.size[0], 1});
    for (size_t i = 0; i < c.image01.size(); ++i) x.data[i] = (c.image01[i] - 0.5f) / 0.5f;
    return x;
}

std::map<uint32_t, Mask> crop_masks(const RawCrop& c) {
    std::map<uint32_t, Mask> masks;
    for (size_t i = 0; i < c.seg.size(); ++i)
        if (c.seg[i] != 0) masks[c.seg[i]].push_back(int64_t(i));
    return masks;
}

/// Negatives for a crop: segments visible in it, excluding the pair and any
/// segment of the pair's ground-truth neuron.
std::vector<uint32_t> eligible_negatives(const std::map<uint32_t, Mask>& masks, uint32_t seg_a, uint32_t seg_b,
                                         const SegmentTable* table) {
    std::vector<uint32_t> out;
    uint32_t neuron = table ? table->neuron_of(seg_a) : 0;
    for (const auto& [seg, mask] : masks) {
        if (seg == seg_a || seg == seg_b) continue;
        if (neuron != 0 && table->neuron_of(seg) == neuron) continue;
        out.push_back(seg);
    }
    return out;
}

std::optional<TrainSample> build_sample(const TrainVolume& tv, const EmbedTrainConfig& cfg, uint64_t item_seed) {
    std::mt19937_64 rng(item_seed);
    for (int attempt = 0; attempt < 50; ++attempt) {
        const reg::CandidatePair& p = tv.positives[rng() % tv.positives.size()];
        AugmentPlan plan = draw_augment(cfg, rng);
        RawCrop crop = extract_crop(*tv.volume, p.truncation, cfg.crop, plan);
        std::map<uint32_t, Mask> masks = crop_masks(crop);
        auto qa = masks.find(p.seg_a), qb = masks.find(p.seg_b);
        if (qa == masks.end() || qb == masks.end()) continue;
        TrainSample s;
        s.image = crop_to_tensor(crop);
        s.query = qa->second;
        s.pos = qb->second;
        std::vector<uint32_t> elig = eligible_negatives(masks, p.seg_a, p.seg_b, tv.table);
        std::shuffle(elig.begin(), elig.end(), rng);
        int take = std::min<int>(cfg.n_negatives, int(elig.size()));
        for (int i = 0; i < take; ++i) s.negs.push_back(masks[elig[i]]);
        // pseudo-segmentation: every segment visible in the crop, largest first
        std::vector<std::pair<uint32_t, const Mask*>> all;
        for (const auto& [seg, mask] : masks) all.push_back({seg, &mask});
        std::stable_sort(all.begin(), all.end(),
                         [](const auto& a, const auto& b) { return a.second->size() > b.second->size(); });
        int keep = std::min<int>(cfg.max_pseudo_masks, int(all.size()));
        for (int i = 0; i < keep; ++i) s.pseudo.push_back(*all[i].second);
        return s;
    }
    return std::nullopt;
}

int64_t pick_volume(const std::vector<TrainVolume>& volumes, uint64_t r) {
    int64_t total = 0;
    for (const auto& tv : volumes) total += int64_t(tv.positives.size());
    int64_t target = int64_t(r % uint64_t(total));
    for (size_t i = 0; i < volumes.size(); ++i) {
        target -= int64_t(volumes[i].positives.size());
        if (target < 0) return int64_t(i);
    }
    return int64_t(volumes.size()) - 1;
}

}  // namespace

void write_train_log_header(std::ostream& out, uint64_t config_hash) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "# config=%016llx\n", (unsigned long long)config_hash);
    out << buf << "step,L_merge,L_split,L_seg,lambda3,total\n";
}

EmbedTrainResult train_embed(EmbedNet& model, const std::vector<TrainVolume>& volumes,
                             const EmbedTrainConfig& cfg, std::ostream* log_csv) {
    cfg.validate();
    int64_t total_pairs = 0;
    for (const auto& tv : volumes) total_pairs += int64_t(tv.positives.size());
    if (total_pairs == 0) fail("data-error", "no positive pairs to train on");

    EmbedTrainResult result;
    auto params = model.parameters();
    nn::AdamW<float> opt;
    opt.weight_decay = cfg.weight_decay;

    LossWeights<float> weights;
    weights.lambda1 = float(cfg.lambda1);
    weights.lambda2 = float(cfg.lambda2);
    weights.delta_d = float(cfg.delta_d);
    weights.delta_v = float(cfg.delta_v);
    weights.gamma = float(cfg.gamma);

    // main pass, then an optional pass over the highest-loss blocks
    std::vector<TrainVolume> active = volumes;
    int64_t finetune_extra = cfg.finetune ? (cfg.finetune_steps > 0 ? cfg.finetune_steps : cfg.steps / 5) : 0;
    int64_t total_steps = cfg.steps + finetune_extra;

    for (int64_t step = 0; step < total_steps; ++step) {
        if (cfg.finetune && step == cfg.steps) {
            // rank blocks by mean loss under the current model
            std::map<std::pair<int64_t, reg::BlockId>, std::vector<const reg::CandidatePair*>> blocks;
            for (size_t vi = 0; vi < volumes.size(); ++vi)
                for (const auto& p : volumes[vi].positives) blocks[{int64_t(vi), p.block}].push_back(&p);
            std::vector<std::pair<double, std::pair<int64_t, reg::BlockId>>> scored;
            LossWeights<float> w_eval = weights;
            w_eval.lambda3 = float(cfg.lambda3_end);
            for (const auto& [key, plist] : blocks) {
                double mean_loss = 0;
                int counted = 0;
                for (size_t i = 0; i < plist.size() && counted < 8; ++i) {
                    TrainVolume one{volumes[key.first].volume, volumes[key.first].table, {*plist[i]}};
                    EmbedTrainConfig probe = cfg;
                    probe.augment_rotate = probe.augment_flip = probe.augment_rescale = probe.augment_intensity =
                        false;
                    auto s = build_sample(one, probe, derive_seed(cfg.seed, "blockeval") + step + i);
                    if (!s) continue;
                    nn::Tensor field = model.forward(s->image);
                    field.ensure_grad();
                    LossTerms<float> t =
                        connectivity_loss(field, s->query, s->pos, s->negs, s->pseudo, w_eval, false);
                    mean_loss += double(t.total);
                    counted++;
                }
                if (counted) scored.push_back({mean_loss / counted, key});
            }
            std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
                return a.first > b.first || (a.first == b.first && a.second < b.second);
            });
            size_t keep = std::max<size_t>(1, size_t(std::ceil(scored.size() * cfg.finetune_fraction)));
            std::vector<TrainVolume> subset(volumes.size());
            for (size_t vi = 0; vi < volumes.size(); ++vi) {
                subset[vi].volume = volumes[vi].volume;
                subset[vi].table = volumes[vi].table;
            }
            for (size_t i = 0; i < keep && i < scored.size(); ++i) {
                auto [vi, block] = scored[i].second;
                for (const auto* p : blocks[{vi, block}]) subset[vi].positives.push_back(*p);
            }
            int64_t kept_pairs = 0;
            for (auto& tv : subset) kept_pairs += int64_t(tv.positives.size());
            if (kept_pairs > 0) {
                active = std::move(subset);
                result.finetune_start_step = step;
            }
        }

        // parallel sample preparation, one consumer
        std::vector<std::optional<TrainSample>> batch(cfg.batch_size);
        parallel_for(cfg.batch_size, [&](int64_t b0, int64_t b1) {
            for (int64_t b = b0; b < b1; ++b) {
                uint64_t item_seed = derive_seed(cfg.seed, "sample") + uint64_t(step) * 7919u + uint64_t(b);
                int64_t vi = pick_volume(active, hash_u64(item_seed));
                if (active[vi].positives.empty()) continue;
                batch[b] = build_sample(active[vi], cfg, item_seed);
            }
        });

        weights.lambda3 = float(lambda3_at(step, total_steps, cfg.lambda3_start, cfg.lambda3_end));
        nn::zero_grads(params);
        TrainLogRow row;
        row.step = step;
        row.lambda3 = weights.lambda3;
        int seen = 0;
        for (auto& maybe : batch) {
            if (!maybe) {
                result.skipped_samples++;
                continue;
            }
            TrainSample& s = *maybe;
            nn::Tensor field = model.forward(s.image);
            field.ensure_grad();
            field.zero_grad();
            LossTerms<float> t = connectivity_loss(field, s.query, s.pos, s.negs, s.pseudo, weights, true,
                                                   1.0f / float(cfg.batch_size));
            if (!std::isfinite(t.total))
                fail("non-finite-loss", "non-finite loss at step " + std::to_string(step));
            row.merge += t.merge;
            row.split += t.split;
            row.seg += t.seg;
            row.total += t.total;
            nn::Tensor g(field.shape);
            g.data = field.grad;
            model.backward(g);
            seen++;
        }
        if (seen > 0) {
            row.merge /= seen;
            row.split /= seen;
            row.seg /= seen;
            row.total /= seen;
            opt.step(params, float(cfg.lr.at(step)));
        }
        if (step % cfg.log_every == 0 || step + 1 == total_steps) {
            result.log.push_back(row);
            if (log_csv) {
                char buf[192];
                std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.6f,%.6f,%.6f,%.6f\n", (long long)row.step,
                              row.merge, row.split, row.seg, row.lambda3, row.total);
                (*log_csv) << buf;
            }
        }
    }
    return result;
}

namespace {

struct WindowMasks {
    std::array<int, 3> start{0, 0, 0};
    std::map<uint32_t, Mask> masks;  // flat window indices
};

WindowMasks window_masks(const LabeledVolume& v, const Vec3& center, const std::array<int, 3>& window) {
    for (int a = 0; a < 3; ++a)
        if (v.dims[a] < window[a]) fail("data-error", "volume smaller than the evaluation window");
    auto c = v.voxel_of(center);
    WindowMasks out;
    for (int a = 0; a < 3; ++a) out.start[a] = std::clamp(c[a] - window[a] / 2, 0, v.dims[a] - window[a]);
    for (int z = 0; z < window[2]; ++z)
        for (int y = 0; y < window[1]; ++y)
            for (int x = 0; x < window[0]; ++x) {
                uint32_t seg = v.segment_ids[v.idx(out.start[0] + x, out.start[1] + y, out.start[2] + z)];
                if (seg == 0) continue;
                out.masks[seg].push_back(int64_t(x) + int64_t(window[0]) * (int64_t(y) + int64_t(window[1]) * z));
            }
    return out;
}

}  // namespace

std::vector<RankItem> build_rank_items(const LabeledVolume& v, const SegmentTable& table,
                                       const std::vector<reg::CandidatePair>& positives, int n,
                                       const std::array<int, 3>& window, uint64_t seed) {
    std::vector<RankItem> items;
    for (size_t pi = 0; pi < positives.size(); ++pi) {
        const auto& p = positives[pi];
        if (p.label != 1) continue;
        WindowMasks w = window_masks(v, p.truncation, window);
        if (!w.masks.count(p.seg_a) || !w.masks.count(p.seg_b)) continue;
        std::vector<uint32_t> elig = eligible_negatives(w.masks, p.seg_a, p.seg_b, &table);
        if (elig.empty()) continue;
        std::mt19937_64 rng(hash_combine(seed, pi));
        std::shuffle(elig.begin(), elig.end(), rng);
        RankItem item;
        item.positive = p;
        int take = std::min<int>(n, int(elig.size()));
        item.negatives.assign(elig.begin(), elig.begin() + take);
        items.push_back(item);
    }
    return items;
}

double rank_discriminability(EmbedNet& model, const LabeledVolume& v, const std::vector<RankItem>& items,
                             const std::array<int, 3>& window) {
    if (items.empty()) fail("data-error", "rank evaluation requires at least one item");
    double sum_rank = 0;
    int64_t counted = 0;
    for (const RankItem& item : items) {
        WindowMasks w = window_masks(v, item.positive.truncation, window);
        auto qa = w.masks.find(item.positive.seg_a), qb = w.masks.find(item.positive.seg_b);
        if (qa == w.masks.end() || qb == w.masks.end()) continue;
        nn::Tensor x = image_crop_tensor(v, w.start, window);
        nn::Tensor field = model.forward(x);
        std::vector<float> mu_q = segment_mean(field, qa->second);
        std::vector<float> mu_p = segment_mean(field, qb->second);
        double d_pos = vec_distance(mu_q, mu_p);
        std::vector<double> d_negs;
        for (uint32_t seg : item.negatives) {
            auto it = w.masks.find(seg);
            if (it == w.masks.end()) continue;
            std::vector<float> mu_n = segment_mean(field, it->second);
            d_negs.push_back(vec_distance(mu_q, mu_n));
        }
        sum_rank += pessimistic_rank(d_pos, d_negs);
        counted++;
    }
    if (counted == 0) fail("data-error", "no usable rank items");
    return sum_rank / double(counted);
}

}  // namespace neutrace::embed
