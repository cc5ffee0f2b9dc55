#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "neutrace/nn/tensor.hpp"

namespace neutrace::embed {

/// Flat spatial indices into an embedding field (position index, not scaled
/// by the channel count).
using Mask = std::vector<int64_t>;

template <class T>
std::vector<T> segment_mean(const nn::TensorT<T>& field, const Mask& mask) {
    const int k = field.shape.back();
    if (mask.empty()) fail("empty-mask", "segment mean of an empty mask");
    std::vector<T> mu(k, T(0));
    for (int64_t p : mask)
        for (int c = 0; c < k; ++c) mu[c] += field.data[p * k + c];
    for (int c = 0; c < k; ++c) mu[c] /= T(mask.size());
    return mu;
}

template <class T>
T vec_distance(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.size() != b.size()) fail("shape-mismatch", "embedding dimension mismatch");
    T s = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        T d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

template <class T>
struct MergeSplit {
    T merge = 0, split = 0;
};

/// Merge term pulls paired means together; split term is a squared hinge that
/// pushes each negative mean at least 2*delta_d away from both ends of the
/// pair. With no negatives the split term is zero.
template <class T>
MergeSplit<T> merge_split_loss(const std::vector<T>& mu_query, const std::vector<T>& mu_pos,
                               const std::vector<std::vector<T>>& mu_negs, T delta_d) {
    MergeSplit<T> out;
    T d2 = 0;
    for (size_t i = 0; i < mu_query.size(); ++i) {
        T d = mu_query[i] - mu_pos[i];
        d2 += d * d;
    }
    out.merge = d2;
    if (mu_negs.empty()) return out;
    T margin = 2 * delta_d;
    for (const auto& mu_n : mu_negs) {
        T hq = std::max(margin - vec_distance(mu_query, mu_n), T(0));
        T hp = std::max(margin - vec_distance(mu_pos, mu_n), T(0));
        out.split += hq * hq + hp * hp;
    }
    out.split /= T(mu_negs.size());
    return out;
}

template <class T>
struct SegClusterTerms {
    T internal = 0, external = 0, reg = 0, total = 0;
};

/// Clustering loss over pseudo-segmentation masks: voxels near their segment
/// mean (within delta_v), means mutually separated (by 2*delta_d), plus a mean
/// norm regularizer weighted by gamma.
template <class T>
SegClusterTerms<T> seg_cluster_loss(const nn::TensorT<T>& field, const std::vector<Mask>& masks, T delta_v,
                                    T delta_d, T gamma) {
    if (masks.empty()) fail("empty-mask", "seg_cluster_loss requires at least one mask");
    const int k = field.shape.back();
    const int C = int(masks.size());
    std::vector<std::vector<T>> mus(C);
    for (int c = 0; c < C; ++c) mus[c] = segment_mean(field, masks[c]);

    SegClusterTerms<T> out;
    for (int c = 0; c < C; ++c) {
        T acc = 0;
        for (int64_t p : masks[c]) {
            T d2 = 0;
            for (int i = 0; i < k; ++i) {
                T d = mus[c][i] - field.data[p * k + i];
                d2 += d * d;
            }
            T h = std::max(std::sqrt(d2) - delta_v, T(0));
            acc += h * h;
        }
        out.internal += acc / T(masks[c].size());
    }
    out.internal /= T(C);

    if (C >= 2) {
        T margin = 2 * delta_d;
        int64_t pairs = 0;
        for (int a = 0; a < C; ++a)
            for (int b = a + 1; b < C; ++b) {
                T h = std::max(margin - vec_distance(mus[a], mus[b]), T(0));
                out.external += h * h;
                pairs++;
            }
        out.external /= T(pairs);
    }

    for (int c = 0; c < C; ++c) {
        T n2 = 0;
        for (int i = 0; i < k; ++i) n2 += mus[c][i] * mus[c][i];
        out.reg += std::sqrt(n2);
    }
    out.reg /= T(C);

    out.total = out.internal + out.external + gamma * out.reg;
    return out;
}

/// Linear schedule from start to end over total steps, constant after. The
/// endpoints are returned exactly.
inline double lambda3_at(int64_t step, int64_t total_steps, double start = 1.0, double end = 0.2) {
    if (total_steps <= 0 || step >= total_steps) return end;
    if (step <= 0) return start;
    double f = double(step) / double(total_steps);
    return start + (end - start) * f;
}

template <class T>
struct LossWeights {
    T lambda1 = T(0.1);
    T lambda2 = T(1);
    T lambda3 = T(1);
    T delta_d = T(1.5);
    T delta_v = T(0.5);
    T gamma = T(0.001);
};

template <class T>
struct LossTerms {
    T merge = 0, split = 0, seg_int = 0, seg_ext = 0, seg_reg = 0, seg = 0, total = 0;
};

template <class T>
T total_loss(const LossTerms<T>& t, const LossWeights<T>& w) {
    return w.lambda1 * t.merge + w.lambda2 * t.split + w.lambda3 * t.seg;
}

/// Full connectivity-aware objective over one cropped field, with the exact
/// gradient accumulated into field.grad (scaled by grad_scale) when with_grad.
///
/// Mean-based terms distribute the mean gradient uniformly over the mask; the internal
/// clustering term also carries the direct per-voxel path. Hinges at exactly
/// zero distance contribute no gradient.
template <class T>
LossTerms<T> connectivity_loss(nn::TensorT<T>& field, const Mask& query, const Mask& pos,
                               const std::vector<Mask>& negs, const std::vector<Mask>& pseudo_segs,
                               const LossWeights<T>& w, bool with_grad, T grad_scale = T(1)) {
    const int k = field.shape.back();
    LossTerms<T> out;
    if (with_grad) field.ensure_grad();

    auto add_mu_grad = [&](const Mask& mask, const std::vector<T>& gmu) {
        T inv = grad_scale / T(mask.size());
        for (int64_t p : mask)
            for (int c = 0; c < k; ++c) field.grad[p * k + c] += gmu[c] * inv;
    };

    std::vector<T> mu_q = segment_mean(field, query);
    std::vector<T> mu_p = segment_mean(field, pos);
    std::vector<std::vector<T>> mu_n(negs.size());
    for (size_t i = 0; i < negs.size(); ++i) mu_n[i] = segment_mean(field, negs[i]);

    std::vector<T> g_q(k, T(0)), g_p(k, T(0));
    std::vector<std::vector<T>> g_n(negs.size(), std::vector<T>(k, T(0)));

    // merge
    for (int c = 0; c < k; ++c) {
        T d = mu_q[c] - mu_p[c];
        out.merge += d * d;
        if (with_grad) {
            g_q[c] += w.lambda1 * 2 * d;
            g_p[c] -= w.lambda1 * 2 * d;
        }
    }

    // split
    if (!negs.empty()) {
        T margin = 2 * w.delta_d;
        T inv_n = T(1) / T(negs.size());
        for (size_t i = 0; i < negs.size(); ++i) {
            for (int side = 0; side < 2; ++side) {
                const std::vector<T>& mu_a = side == 0 ? mu_q : mu_p;
                std::vector<T>& g_a = side == 0 ? g_q : g_p;
                T d = vec_distance(mu_a, mu_n[i]);
                T h = margin - d;
                if (h <= 0) continue;
                out.split += h * h * inv_n;
                if (with_grad && d > 0) {
                    T coef = w.lambda2 * inv_n * 2 * h / d;  // d(h^2)/d(mu) = -2h * u
                    for (int c = 0; c < k; ++c) {
                        T u = mu_a[c] - mu_n[i][c];
                        g_a[c] -= coef * u;
                        g_n[i][c] += coef * u;
                    }
                }
            }
        }
    }

    // segmentation clustering over pseudo-segments
    if (!pseudo_segs.empty()) {
        const int C = int(pseudo_segs.size());
        std::vector<std::vector<T>> mus(C), g_mus(C, std::vector<T>(k, T(0)));
        for (int c = 0; c < C; ++c) mus[c] = segment_mean(field, pseudo_segs[c]);

        T inv_c = T(1) / T(C);
        for (int c = 0; c < C; ++c) {
            T inv_m = T(1) / T(pseudo_segs[c].size());
            T acc = 0;
            for (int64_t pvox : pseudo_segs[c]) {
                T d2 = 0;
                for (int i = 0; i < k; ++i) {
                    T d = mus[c][i] - field.data[pvox * k + i];
                    d2 += d * d;
                }
                T d = std::sqrt(d2);
                T h = d - w.delta_v;
                if (h <= 0) continue;
                acc += h * h;
                if (with_grad && d > 0) {
                    T coef = w.lambda3 * inv_c * inv_m * 2 * h / d;
                    for (int i = 0; i < k; ++i) {
                        T u = mus[c][i] - field.data[pvox * k + i];
                        field.grad[pvox * k + i] -= grad_scale * coef * u;  // direct path
                        g_mus[c][i] += coef * u;
                    }
                }
            }
            out.seg_int += acc * inv_m;
        }
        out.seg_int *= inv_c;

        if (C >= 2) {
            T margin = 2 * w.delta_d;
            int64_t npairs = int64_t(C) * (C - 1) / 2;
            T inv_p = T(1) / T(npairs);
            for (int a = 0; a < C; ++a)
                for (int b = a + 1; b < C; ++b) {
                    T d = vec_distance(mus[a], mus[b]);
                    T h = margin - d;
                    if (h <= 0) continue;
                    out.seg_ext += h * h * inv_p;
                    if (with_grad && d > 0) {
                        T coef = w.lambda3 * inv_p * 2 * h / d;
                        for (int i = 0; i < k; ++i) {
                            T u = mus[a][i] - mus[b][i];
                            g_mus[a][i] -= coef * u;
                            g_mus[b][i] += coef * u;
                        }
                    }
                }
        }

        for (int c = 0; c < C; ++c) {
            T n2 = 0;
            for (int i = 0; i < k; ++i) n2 += mus[c][i] * mus[c][i];
            T norm = std::sqrt(n2);
            out.seg_reg += norm;
            if (with_grad && norm > 0) {
                T coef = w.lambda3 * w.gamma * inv_c / norm;
                for (int i = 0; i < k; ++i) g_mus[c][i] += coef * mus[c][i];
            }
        }
        out.seg_reg *= inv_c;

        if (with_grad)
            for (int c = 0; c < C; ++c) add_mu_grad(pseudo_segs[c], g_mus[c]);
    }
    out.seg = out.seg_int + out.seg_ext + w.gamma * out.seg_reg;

    if (with_grad) {
        add_mu_grad(query, g_q);
        add_mu_grad(pos, g_p);
        for (size_t i = 0; i < negs.size(); ++i) add_mu_grad(negs[i], g_n[i]);
    }

    LossWeights<T> wt = w;
    out.total = total_loss(out, wt);
    return out;
}

}  // namespace neutrace::embed
