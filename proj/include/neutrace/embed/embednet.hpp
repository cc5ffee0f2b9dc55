#pragma once

#include "neutrace/nn/layers.hpp"

namespace neutrace::embed {

/// Residual block: two convolutions, an optional 1x1x1 projection skip, and a
/// squeeze-excitation gate. `mixed` uses a 3x3x3 first convolution; otherwise
/// both are in-plane 3x3x1. The block is normalization-free so that features
/// do not depend on crop statistics: tiled inference over a whole volume then
/// matches the training-crop distribution.
template <class T>
struct SeResBlock {
    nn::Conv3d<T> conv1, conv2, proj;
    nn::ReLU<T> relu1, relu2;
    nn::SqueezeExcite<T> se;
    bool project = false;

    SeResBlock() = default;
    SeResBlock(int in_c, int out_c, bool mixed, int se_reduction, std::mt19937_64& rng)
        : conv1(in_c, out_c, 3, 3, mixed ? 3 : 1, rng),
          conv2(out_c, out_c, 3, 3, 1, rng),
          se(out_c, se_reduction, rng),
          project(in_c != out_c) {
        if (project) proj = nn::Conv3d<T>(in_c, out_c, 1, 1, 1, rng);
    }

    std::vector<nn::ParamRef<T>> parameters(const std::string& p) {
        std::vector<nn::ParamRef<T>> out;
        for (auto& r : conv1.parameters(p + ".conv1")) out.push_back(r);
        for (auto& r : conv2.parameters(p + ".conv2")) out.push_back(r);
        if (project)
            for (auto& r : proj.parameters(p + ".proj")) out.push_back(r);
        for (auto& r : se.parameters(p + ".se")) out.push_back(r);
        return out;
    }

    nn::TensorT<T> forward(const nn::TensorT<T>& x) {
        nn::TensorT<T> skip = project ? proj.forward(x) : x;
        nn::TensorT<T> h = relu1.forward(conv1.forward(x));
        h = conv2.forward(h);
        for (size_t i = 0; i < h.data.size(); ++i) h.data[i] += skip.data[i];
        return se.forward(relu2.forward(h));
    }

    nn::TensorT<T> backward(const nn::TensorT<T>& gy) {
        nn::TensorT<T> g = relu2.backward(se.backward(gy));
        nn::TensorT<T> g_main = conv1.backward(relu1.backward(conv2.backward(g)));
        nn::TensorT<T> g_skip = project ? proj.backward(g) : g;
        for (size_t i = 0; i < g_main.data.size(); ++i) g_main.data[i] += g_skip.data[i];
        return g_main;
    }
};

struct EmbedNetConfig {
    int k = 16;
    int c0 = 12, c1 = 18, c2 = 24;
    int se_reduction = 4;
};

/// Three-scale residual symmetric U-Net over anisotropic crops: in-plane
/// convolutions at full resolution, 3D convolutions at the coarser scales,
/// squeeze-excitation per scale, nearest-neighbor decoder with additive skips.
/// Produces one k-vector per input voxel.
template <class T>
struct EmbedNetT {
    EmbedNetConfig cfg;
    nn::Conv3d<T> conv_in, fuse1, fuse0, head;
    SeResBlock<T> enc0, enc1, enc2, dec1, dec0;
    nn::MaxPool3d<T> pool1{2, 2, 1}, pool2{2, 2, 1};
    nn::Upsample3d<T> up1, up0;
    std::vector<int> a_dims, b_dims;

    EmbedNetT() = default;
    EmbedNetT(const EmbedNetConfig& c, uint64_t seed) : cfg(c) {
        std::mt19937_64 rng(seed);
        conv_in = nn::Conv3d<T>(1, cfg.c0, 5, 5, 1, rng);
        enc0 = SeResBlock<T>(cfg.c0, cfg.c0, false, cfg.se_reduction, rng);
        enc1 = SeResBlock<T>(cfg.c0, cfg.c1, true, cfg.se_reduction, rng);
        enc2 = SeResBlock<T>(cfg.c1, cfg.c2, true, cfg.se_reduction, rng);
        fuse1 = nn::Conv3d<T>(cfg.c2, cfg.c1, 1, 1, 1, rng);
        dec1 = SeResBlock<T>(cfg.c1, cfg.c1, true, cfg.se_reduction, rng);
        fuse0 = nn::Conv3d<T>(cfg.c1, cfg.c0, 1, 1, 1, rng);
        dec0 = SeResBlock<T>(cfg.c0, cfg.c0, false, cfg.se_reduction, rng);
        head = nn::Conv3d<T>(cfg.c0, cfg.k, 1, 1, 1, rng);
    }

    std::vector<nn::ParamRef<T>> parameters() {
        std::vector<nn::ParamRef<T>> out;
        auto add = [&](std::vector<nn::ParamRef<T>> v) {
            for (auto& r : v) out.push_back(r);
        };
        add(conv_in.parameters("conv_in"));
        add(enc0.parameters("enc0"));
        add(enc1.parameters("enc1"));
        add(enc2.parameters("enc2"));
        add(fuse1.parameters("fuse1"));
        add(dec1.parameters("dec1"));
        add(fuse0.parameters("fuse0"));
        add(dec0.parameters("dec0"));
        add(head.parameters("head"));
        return out;
    }

    /// x: [D][H][W][1] normalized intensities -> field [D][H][W][k].
    nn::TensorT<T> forward(const nn::TensorT<T>& x) {
        if (x.shape.size() != 4 || x.shape[3] != 1) fail("shape-mismatch", "embed net expects [D][H][W][1]");
        if (x.shape[1] < 8 || x.shape[2] < 8) fail("shape-mismatch", "embed net crop must be at least 8x8 in-plane");
        nn::TensorT<T> a = enc0.forward(conv_in.forward(x));
        a_dims = a.shape;
        nn::TensorT<T> b = enc1.forward(pool1.forward(a));
        b_dims = b.shape;
        nn::TensorT<T> c = enc2.forward(pool2.forward(b));
        nn::TensorT<T> u1 = fuse1.forward(up1.forward(c, b_dims[0], b_dims[1], b_dims[2]));
        for (size_t i = 0; i < u1.data.size(); ++i) u1.data[i] += b.data[i];
        nn::TensorT<T> d1 = dec1.forward(u1);
        nn::TensorT<T> u0 = fuse0.forward(up0.forward(d1, a_dims[0], a_dims[1], a_dims[2]));
        for (size_t i = 0; i < u0.data.size(); ++i) u0.data[i] += a.data[i];
        nn::TensorT<T> d0 = dec0.forward(u0);
        return head.forward(d0);
    }

    void backward(const nn::TensorT<T>& g_field) {
        nn::TensorT<T> g_d0 = head.backward(g_field);
        nn::TensorT<T> g_u0 = dec0.backward(g_d0);  // also the skip grad into a
        nn::TensorT<T> g_d1 = up0.backward(fuse0.backward(g_u0));
        nn::TensorT<T> g_u1 = dec1.backward(g_d1);  // also the skip grad into b
        nn::TensorT<T> g_c = up1.backward(fuse1.backward(g_u1));
        nn::TensorT<T> g_b = pool2.backward(enc2.backward(g_c));
        for (size_t i = 0; i < g_b.data.size(); ++i) g_b.data[i] += g_u1.data[i];
        nn::TensorT<T> g_a = pool1.backward(enc1.backward(g_b));
        for (size_t i = 0; i < g_a.data.size(); ++i) g_a.data[i] += g_u0.data[i];
        conv_in.backward(enc0.backward(g_a));
    }
};

using EmbedNet = EmbedNetT<float>;

}  // namespace neutrace::embed
