#pragma once

#include <algorithm>
#include <numeric>

#include "neutrace/connect/samples.hpp"
#include "neutrace/embed/losses.hpp"
#include "neutrace/nn/layers.hpp"

namespace neutrace::connect {

struct PointNetConfig {
    int k = 0;  // embedding channels appended to (x, y, z, id)
    int sa1_centroids = 128, sa1_neighbors = 16, sa1_width = 32;
    int sa2_centroids = 32, sa2_neighbors = 8, sa2_width = 64;
    int global_width = 128, head_width = 64;
};

/// Two-level hierarchical grouping network over surface points with symmetric
/// max pooling. Input rows are canonicalized by lexicographic sort, and all
/// selection tie-breaks are index-based on the sorted order, so the output is
/// exactly invariant under any permutation of the input points.
///
/// Each level: farthest-point centroids, k-nearest grouping with coordinates
/// made relative to the centroid, two shared affine+norm+relu stages, then a
/// max pool over each group.
template <class T>
struct PointNetT {
    PointNetConfig cfg;
    nn::Linear<T> mlp1a, mlp1b, mlp2a, mlp2b, mlp3, head1, head2;
    nn::ChannelNorm<T> norm1a, norm1b, norm2a, norm2b, norm3;
    nn::ReLU<T> relu1a, relu1b, relu2a, relu2b, relu3, relu_h;
    nn::MaxOverPoints<T> global_pool;

    PointNetT() = default;
    PointNetT(const PointNetConfig& c, uint64_t seed) : cfg(c) {
        std::mt19937_64 rng(seed);
        int row1 = 4 + cfg.k;       // input row: xyz, id, embedding
        int row2 = 3 + cfg.sa1_width;  // level-1 output row: centroid xyz, features
        mlp1a = nn::Linear<T>(3 + row1, cfg.sa1_width, rng);
        mlp1b = nn::Linear<T>(cfg.sa1_width, cfg.sa1_width, rng);
        norm1a = nn::ChannelNorm<T>(cfg.sa1_width);
        norm1b = nn::ChannelNorm<T>(cfg.sa1_width);
        mlp2a = nn::Linear<T>(3 + row2, cfg.sa2_width, rng);
        mlp2b = nn::Linear<T>(cfg.sa2_width, cfg.sa2_width, rng);
        norm2a = nn::ChannelNorm<T>(cfg.sa2_width);
        norm2b = nn::ChannelNorm<T>(cfg.sa2_width);
        mlp3 = nn::Linear<T>(3 + cfg.sa2_width, cfg.global_width, rng);
        norm3 = nn::ChannelNorm<T>(cfg.global_width);
        head1 = nn::Linear<T>(cfg.global_width, cfg.head_width, rng);
        head2 = nn::Linear<T>(cfg.head_width, 1, rng);
    }

    std::vector<nn::ParamRef<T>> parameters() {
        std::vector<nn::ParamRef<T>> out;
        auto add = [&](std::vector<nn::ParamRef<T>> v) {
            for (auto& r : v) out.push_back(r);
        };
        add(mlp1a.parameters("mlp1a"));
        add(norm1a.parameters("norm1a"));
        add(mlp1b.parameters("mlp1b"));
        add(norm1b.parameters("norm1b"));
        add(mlp2a.parameters("mlp2a"));
        add(norm2a.parameters("norm2a"));
        add(mlp2b.parameters("mlp2b"));
        add(norm2b.parameters("norm2b"));
        add(mlp3.parameters("mlp3"));
        add(norm3.parameters("norm3"));
        add(head1.parameters("head1"));
        add(head2.parameters("head2"));
        return out;
    }

    /// pts: [N][4+k]. Returns the logit.
    T forward(const nn::TensorT<T>& pts_in) {
        if (pts_in.shape.size() != 2 || pts_in.shape[1] != 4 + cfg.k)
            fail("shape-mismatch", "point sample feature width does not match the model");
        const int n = pts_in.shape[0], fc = pts_in.shape[1];
        std::vector<int> order = sorted_order(pts_in);
        nn::TensorT<T> pts({n, fc});
        for (int i = 0; i < n; ++i)
            std::copy(pts_in.data.begin() + int64_t(order[i]) * fc,
                      pts_in.data.begin() + int64_t(order[i]) * fc + fc, pts.data.begin() + int64_t(i) * fc);
        n_points_ = n;

        nn::TensorT<T> l1 = run_level(pts, cfg.sa1_centroids, cfg.sa1_neighbors, cfg.sa1_width, mlp1a, norm1a,
                                      relu1a, mlp1b, norm1b, relu1b, groups1_, pool1_arg_);
        nn::TensorT<T> l2 = run_level(l1, cfg.sa2_centroids, cfg.sa2_neighbors, cfg.sa2_width, mlp2a, norm2a,
                                      relu2a, mlp2b, norm2b, relu2b, groups2_, pool2_arg_);

        nn::TensorT<T> h3 = relu3.forward(norm3.forward(mlp3.forward(l2)));
        nn::TensorT<T> pooled = global_pool.forward(h3);
        nn::TensorT<T> pooled2({1, cfg.global_width});
        pooled2.data = pooled.data;
        nn::TensorT<T> h4 = relu_h.forward(head1.forward(pooled2));
        return head2.forward(h4).data[0];
    }

    /// Accumulates parameter gradients; input-point gradients are not needed.
    void backward(T dlogit) {
        nn::TensorT<T> g({1, 1});
        g.data[0] = dlogit;
        nn::TensorT<T> gh4 = head1.backward(relu_h.backward(head2.backward(g)));
        nn::TensorT<T> gpooled({cfg.global_width});
        gpooled.data.assign(gh4.data.begin(), gh4.data.end());
        nn::TensorT<T> g_l2 = mlp3.backward(norm3.backward(relu3.backward(global_pool.backward(gpooled))));
        nn::TensorT<T> g_l1 = level_backward(g_l2, cfg.sa1_centroids, 3 + cfg.sa1_width, cfg.sa2_neighbors,
                                             mlp2a, norm2a, relu2a, mlp2b, norm2b, relu2b, groups2_, pool2_arg_);
        level_backward(g_l1, n_points_, 4 + cfg.k, cfg.sa1_neighbors, mlp1a, norm1a, relu1a, mlp1b, norm1b,
                       relu1b, groups1_, pool1_arg_);
    }

  private:
    std::vector<std::vector<int>> groups1_, groups2_;
    std::vector<int64_t> pool1_arg_, pool2_arg_;
    int n_points_ = 0;

    static std::vector<int> sorted_order(const nn::TensorT<T>& pts) {
        int n = pts.shape[0], c = pts.shape[1];
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const T* ra = pts.data.data() + int64_t(a) * c;
            const T* rb = pts.data.data() + int64_t(b) * c;
            return std::lexicographical_compare(ra, ra + c, rb, rb + c);
        });
        return order;
    }

    // Greedy max-min selection over rows (first 3 columns), starting at row 0,
    // ties to the lowest index.
    static std::vector<int> fps_rows(const nn::TensorT<T>& pts, int m) {
        int n = pts.shape[0], c = pts.shape[1];
        std::vector<int> picks{0};
        std::vector<char> chosen(size_t(n), 0);
        chosen[0] = 1;
        std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
        int last = 0;
        while (int(picks.size()) < m) {
            if (int(picks.size()) >= n) {
                picks.push_back(picks.back());
                continue;
            }
            int best = -1;
            double best_d = -1;
            for (int i = 0; i < n; ++i) {
                double d = 0;
                for (int a = 0; a < 3; ++a) {
                    double diff = double(pts.data[int64_t(i) * c + a]) - double(pts.data[int64_t(last) * c + a]);
                    d += diff * diff;
                }
                if (d < min_d[i]) min_d[i] = d;
                if (!chosen[i] && min_d[i] > best_d) {
                    best_d = min_d[i];
                    best = i;
                }
            }
            picks.push_back(best);
            chosen[best] = 1;
            last = best;
        }
        return picks;
    }

    static std::vector<int> knn_rows(const nn::TensorT<T>& pts, const T* center, int kn) {
        int n = pts.shape[0], c = pts.shape[1];
        std::vector<std::pair<double, int>> d(n);
        for (int i = 0; i < n; ++i) {
            double s = 0;
            for (int a = 0; a < 3; ++a) {
                double diff = double(pts.data[int64_t(i) * c + a]) - double(center[a]);
                s += diff * diff;
            }
            d[i] = {s, i};
        }
        int take = std::min(kn, n);
        std::partial_sort(d.begin(), d.begin() + take, d.end());
        std::vector<int> idx(kn);
        for (int j = 0; j < kn; ++j) idx[j] = d[std::min(j, take - 1)].second;
        return idx;
    }

    /// One set-abstraction level over rows [N][fc]; the output rows are
    /// [centroid xyz, pooled features]: [G][3 + width].
    nn::TensorT<T> run_level(const nn::TensorT<T>& pts, int centroids, int neighbors, int width,
                             nn::Linear<T>& la, nn::ChannelNorm<T>& na, nn::ReLU<T>& ra, nn::Linear<T>& lb,
                             nn::ChannelNorm<T>& nb, nn::ReLU<T>& rb, std::vector<std::vector<int>>& groups,
                             std::vector<int64_t>& pool_arg) {
        const int fc = pts.shape[1];
        std::vector<int> cent = fps_rows(pts, centroids);
        groups.assign(centroids, {});
        nn::TensorT<T> grouped({centroids * neighbors, 3 + fc});
        nn::TensorT<T> out({centroids, 3 + width});
        for (int g = 0; g < centroids; ++g) {
            const T* center = pts.data.data() + int64_t(cent[g]) * fc;
            for (int a = 0; a < 3; ++a) out.data[int64_t(g) * (3 + width) + a] = center[a];
            groups[g] = knn_rows(pts, center, neighbors);
            for (int j = 0; j < neighbors; ++j) {
                const T* row = pts.data.data() + int64_t(groups[g][j]) * fc;
                T* dst = grouped.data.data() + (int64_t(g) * neighbors + j) * (3 + fc);
                for (int a = 0; a < 3; ++a) dst[a] = row[a] - center[a];
                for (int c = 0; c < fc; ++c) dst[3 + c] = row[c];
            }
        }
        nn::TensorT<T> h = rb.forward(nb.forward(lb.forward(ra.forward(na.forward(la.forward(grouped))))));
        pool_arg.assign(size_t(centroids) * width, 0);
        for (int g = 0; g < centroids; ++g)
            for (int c = 0; c < width; ++c) {
                int64_t base = int64_t(g) * neighbors;
                T best = h.data[base * width + c];
                int64_t bi = base;
                for (int j = 1; j < neighbors; ++j) {
                    if (h.data[(base + j) * width + c] > best) {
                        best = h.data[(base + j) * width + c];
                        bi = base + j;
                    }
                }
                out.data[int64_t(g) * (3 + width) + 3 + c] = best;
                pool_arg[int64_t(g) * width + c] = bi;
            }
        return out;
    }

    /// g_out: [G][3 + width] gradient of this level's output rows. Returns the
    /// gradient of the level's input rows [n_in][in_fc]; the centroid
    /// coordinate columns stop here (no trainable parameters upstream of them).
    nn::TensorT<T> level_backward(const nn::TensorT<T>& g_out, int n_in, int in_fc, int neighbors,
                                  nn::Linear<T>& la, nn::ChannelNorm<T>& na, nn::ReLU<T>& ra, nn::Linear<T>& lb,
                                  nn::ChannelNorm<T>& nb, nn::ReLU<T>& rb,
                                  const std::vector<std::vector<int>>& groups,
                                  const std::vector<int64_t>& pool_arg) {
        const int centroids = g_out.shape[0];
        const int width = g_out.shape[1] - 3;
        nn::TensorT<T> gh({centroids * neighbors, width});
        for (int g = 0; g < centroids; ++g)
            for (int c = 0; c < width; ++c)
                gh.data[pool_arg[int64_t(g) * width + c] * width + c] +=
                    g_out.data[int64_t(g) * (3 + width) + 3 + c];
        nn::TensorT<T> g_grouped =
            la.backward(na.backward(ra.backward(lb.backward(nb.backward(rb.backward(gh))))));
        nn::TensorT<T> g_in({n_in, in_fc});
        for (int g = 0; g < centroids; ++g)
            for (int j = 0; j < neighbors; ++j) {
                const T* grow = g_grouped.data.data() + (int64_t(g) * neighbors + j) * (3 + in_fc);
                T* dst = g_in.data.data() + int64_t(groups[g][j]) * in_fc;
                for (int c = 0; c < in_fc; ++c) dst[c] += grow[3 + c];
            }
        return g_in;
    }
};

using PointNet = PointNetT<float>;

struct MaskNetConfig {
    std::array<int, 3> in_dims{52, 52, 18};
    int in_channels = 3;  // 3 masks + embedding k
    int f1 = 16, f2 = 32, f3 = 64;
    int head = 128;
};

/// Three 3D convolutional stages with pooling, then a dense head.
template <class T>
struct MaskNetT {
    MaskNetConfig cfg;
    nn::Conv3d<T> conv1, conv2, conv3;
    nn::ChannelNorm<T> norm1, norm2, norm3;
    nn::ReLU<T> relu1, relu2, relu3, relu_h;
    nn::MaxPool3d<T> pool1{2, 2, 2}, pool2{2, 2, 2}, pool3{2, 2, 2};
    nn::Linear<T> head1, head2;
    std::vector<int> flat_shape;

    MaskNetT() = default;
    MaskNetT(const MaskNetConfig& c, uint64_t seed) : cfg(c) {
        std::mt19937_64 rng(seed);
        conv1 = nn::Conv3d<T>(cfg.in_channels, cfg.f1, 3, 3, 3, rng);
        conv2 = nn::Conv3d<T>(cfg.f1, cfg.f2, 3, 3, 3, rng);
        conv3 = nn::Conv3d<T>(cfg.f2, cfg.f3, 3, 3, 3, rng);
        norm1 = nn::ChannelNorm<T>(cfg.f1);
        norm2 = nn::ChannelNorm<T>(cfg.f2);
        norm3 = nn::ChannelNorm<T>(cfg.f3);
        int w = cfg.in_dims[0] / 8, h = cfg.in_dims[1] / 8, d = cfg.in_dims[2] / 8;
        if (w < 1 || h < 1 || d < 1) fail("config-error", "mask dims too small for three pooling stages");
        head1 = nn::Linear<T>(w * h * d * cfg.f3, cfg.head, rng);
        head2 = nn::Linear<T>(cfg.head, 1, rng);
    }

    std::vector<nn::ParamRef<T>> parameters() {
        std::vector<nn::ParamRef<T>> out;
        auto add = [&](std::vector<nn::ParamRef<T>> v) {
            for (auto& r : v) out.push_back(r);
        };
        add(conv1.parameters("conv1"));
        add(norm1.parameters("norm1"));
        add(conv2.parameters("conv2"));
        add(norm2.parameters("norm2"));
        add(conv3.parameters("conv3"));
        add(norm3.parameters("norm3"));
        add(head1.parameters("head1"));
        add(head2.parameters("head2"));
        return out;
    }

    T forward(const nn::TensorT<T>& x) {
        if (x.shape != std::vector<int>{cfg.in_dims[2], cfg.in_dims[1], cfg.in_dims[0], cfg.in_channels})
            fail("shape-mismatch", "mask sample dims do not match the model");
        nn::TensorT<T> h = pool1.forward(relu1.forward(norm1.forward(conv1.forward(x))));
        h = pool2.forward(relu2.forward(norm2.forward(conv2.forward(h))));
        h = pool3.forward(relu3.forward(norm3.forward(conv3.forward(h))));
        flat_shape = h.shape;
        nn::TensorT<T> flat({1, int(h.numel())});
        flat.data = h.data;
        nn::TensorT<T> h4 = relu_h.forward(head1.forward(flat));
        return head2.forward(h4).data[0];
    }

    void backward(T dlogit) {
        nn::TensorT<T> g({1, 1});
        g.data[0] = dlogit;
        nn::TensorT<T> gflat = head1.backward(relu_h.backward(head2.backward(g)));
        nn::TensorT<T> gh(flat_shape);
        gh.data = gflat.data;
        gh = conv3.backward(norm3.backward(relu3.backward(pool3.backward(gh))));
        gh = conv2.backward(norm2.backward(relu2.backward(pool2.backward(gh))));
        conv1.backward(norm1.backward(relu1.backward(pool1.backward(gh))));
    }
};

using MaskNet = MaskNetT<float>;

// ---- prediction ----------------------------------------------------------

inline nn::Tensor point_sample_tensor(const PointSample& s) {
    nn::Tensor t({s.m, 4 + s.k});
    t.data = s.feats;
    return t;
}

inline nn::Tensor mask_sample_tensor(const MaskSample& s) {
    nn::Tensor t({s.dims[2], s.dims[1], s.dims[0], s.channels});
    t.data = s.data;
    return t;
}

/// Probability that the pair connects; classification uses prob > 0.5.
inline double predict_connectivity(PointNet& model, const PointSample& s) {
    nn::Tensor t = point_sample_tensor(s);
    float logit = model.forward(t);
    return 1.0 / (1.0 + std::exp(-double(logit)));
}

inline double predict_connectivity(MaskNet& model, const MaskSample& s) {
    nn::Tensor t = mask_sample_tensor(s);
    float logit = model.forward(t);
    return 1.0 / (1.0 + std::exp(-double(logit)));
}

inline bool classify(double probability) { return probability > 0.5; }

/// Single-modality embedding decision: connected iff the distance between the
/// two segments' mean embeddings is strictly below delta_d.
inline int embedding_distance_classifier(const embed::EmbeddingField& field, const embed::Mask& mask_a,
                                         const embed::Mask& mask_b, double delta_d) {
    if (mask_a.empty() || mask_b.empty()) fail("empty-mask", "embedding distance classifier needs both masks");
    nn::Tensor t({int(field.values.size() / field.k), field.k});
    t.data = field.values;
    std::vector<float> mu_a = embed::segment_mean(t, mask_a);
    std::vector<float> mu_b = embed::segment_mean(t, mask_b);
    return embed::vec_distance(mu_a, mu_b) < delta_d ? 1 : 0;
}

}  // namespace neutrace::connect
