#pragma once

#include <algorithm>
#include <cmath>

#include "neutrace/nn/tensor.hpp"

namespace neutrace::nn {

// All layers run forward(x) -> y and backward(gy) -> gx, accumulating
// parameter gradients. Every output element is produced by exactly one
// worker in a fixed accumulation order, so values do not depend on the
// thread count.

/// 3D convolution, stride 1, odd kernel, zero 'same' padding. A kernel depth
/// of 1 gives the in-plane 2D variant used for anisotropic stacks.
template <class T>
struct Conv3d {
    int in_c = 0, out_c = 0, kx = 1, ky = 1, kz = 1;
    TensorT<T> w, b;  // w: [OC][KZ][KY][KX][IC]
    TensorT<T> in_cache;
    std::vector<int> in_shape;

    Conv3d() = default;
    Conv3d(int in_channels, int out_channels, int kx_, int ky_, int kz_, std::mt19937_64& rng)
        : in_c(in_channels), out_c(out_channels), kx(kx_), ky(ky_), kz(kz_) {
        if (kx % 2 == 0 || ky % 2 == 0 || kz % 2 == 0) fail("bad-argument", "conv kernel dims must be odd");
        w = TensorT<T>({out_c, kz, ky, kx, in_c});
        b = TensorT<T>({out_c});
        fill_kaiming(w, rng, int64_t(kx) * ky * kz * in_c);
    }

    std::vector<ParamRef<T>> parameters(const std::string& prefix) {
        return {{prefix + ".w", &w}, {prefix + ".b", &b}};
    }

    TensorT<T> forward(const TensorT<T>& x) {
        if (x.shape.size() != 4 || x.shape[3] != in_c) fail("shape-mismatch", "conv3d input shape");
        in_cache = x;
        in_shape = x.shape;
        const int D = x.shape[0], H = x.shape[1], W = x.shape[2];
        const int oz = (kz - 1) / 2, oy = (ky - 1) / 2, ox = (kx - 1) / 2;
        TensorT<T> y({D, H, W, out_c});
        const T* xd = x.data.data();
        const T* wd = w.data.data();
        const T* bd = b.data.data();
        T* yd = y.data.data();
        const int64_t kstride = int64_t(kx) * ky * kz * in_c;
        parallel_for(D, [&](int64_t z0, int64_t z1) {
            std::vector<T> acc(out_c);
            for (int64_t z = z0; z < z1; ++z)
                for (int y_ = 0; y_ < H; ++y_)
                    for (int x_ = 0; x_ < W; ++x_) {
                        for (int c = 0; c < out_c; ++c) acc[c] = bd[c];
                        for (int dz = 0; dz < kz; ++dz) {
                            int zz = int(z) + dz - oz;
                            if (zz < 0 || zz >= D) continue;
                            for (int dy = 0; dy < ky; ++dy) {
                                int yy = y_ + dy - oy;
                                if (yy < 0 || yy >= H) continue;
                                for (int dx = 0; dx < kx; ++dx) {
                                    int xx = x_ + dx - ox;
                                    if (xx < 0 || xx >= W) continue;
                                    const T* px = xd + ((int64_t(zz) * H + yy) * W + xx) * in_c;
                                    const int64_t koff = ((int64_t(dz) * ky + dy) * kx + dx) * in_c;
                                    for (int c = 0; c < out_c; ++c) {
                                        const T* pw = wd + c * kstride + koff;
                                        T s = 0;
                                        for (int i = 0; i < in_c; ++i) s += px[i] * pw[i];
                                        acc[c] += s;
                                    }
                                }
                            }
                        }
                        T* py = yd + ((z * H + y_) * W + x_) * out_c;
                        for (int c = 0; c < out_c; ++c) py[c] = acc[c];
                    }
        });
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        const int D = in_shape[0], H = in_shape[1], W = in_shape[2];
        const int oz = (kz - 1) / 2, oy = (ky - 1) / 2, ox = (kx - 1) / 2;
        w.ensure_grad();
        b.ensure_grad();
        TensorT<T> gx(in_shape);
        const T* gyd = gy.data.data();
        const T* xd = in_cache.data.data();
        const T* wd = w.data.data();
        T* gxd = gx.data.data();
        const int64_t kstride = int64_t(kx) * ky * kz * in_c;

        parallel_for(D, [&](int64_t z0, int64_t z1) {
            for (int64_t z = z0; z < z1; ++z)
                for (int y_ = 0; y_ < H; ++y_)
                    for (int x_ = 0; x_ < W; ++x_) {
                        T* pgx = gxd + ((z * H + y_) * W + x_) * in_c;
                        for (int dz = 0; dz < kz; ++dz) {
                            int zz = int(z) - dz + oz;  // output position feeding this tap
                            if (zz < 0 || zz >= D) continue;
                            for (int dy = 0; dy < ky; ++dy) {
                                int yy = y_ - dy + oy;
                                if (yy < 0 || yy >= H) continue;
                                for (int dx = 0; dx < kx; ++dx) {
                                    int xx = x_ - dx + ox;
                                    if (xx < 0 || xx >= W) continue;
                                    const T* pgy = gyd + ((int64_t(zz) * H + yy) * W + xx) * out_c;
                                    const int64_t koff = ((int64_t(dz) * ky + dy) * kx + dx) * in_c;
                                    for (int c = 0; c < out_c; ++c) {
                                        T g = pgy[c];
                                        const T* pw = wd + c * kstride + koff;
                                        for (int i = 0; i < in_c; ++i) pgx[i] += g * pw[i];
                                    }
                                }
                            }
                        }
                    }
        });

        T* gwd = w.grad.data();
        T* gbd = b.grad.data();
        parallel_for(out_c, [&](int64_t c0, int64_t c1) {
            for (int64_t c = c0; c < c1; ++c) {
                T bsum = 0;
                for (int z = 0; z < D; ++z)
                    for (int y_ = 0; y_ < H; ++y_)
                        for (int x_ = 0; x_ < W; ++x_) {
                            T g = gyd[((int64_t(z) * H + y_) * W + x_) * out_c + c];
                            if (g == T(0)) continue;
                            bsum += g;
                            for (int dz = 0; dz < kz; ++dz) {
                                int zz = z + dz - oz;
                                if (zz < 0 || zz >= D) continue;
                                for (int dy = 0; dy < ky; ++dy) {
                                    int yy = y_ + dy - oy;
                                    if (yy < 0 || yy >= H) continue;
                                    for (int dx = 0; dx < kx; ++dx) {
                                        int xx = x_ + dx - ox;
                                        if (xx < 0 || xx >= W) continue;
                                        const T* px = xd + ((int64_t(zz) * H + yy) * W + xx) * in_c;
                                        T* pgw = gwd + c * kstride + ((int64_t(dz) * ky + dy) * kx + dx) * in_c;
                                        for (int i = 0; i < in_c; ++i) pgw[i] += g * px[i];
                                    }
                                }
                            }
                        }
                // bias correction accumulated once per channel
                gbd[c] += bsum;
            }
        });
        return gx;
    }
};

/// Per-channel normalization over all leading axes of a single sample, with a
/// learned gain and bias. Desk-scale batches are below any sensible batch
/// statistics threshold, so statistics are always per-sample.
template <class T>
struct ChannelNorm {
    int channels = 0;
    T eps = T(1e-5);
    TensorT<T> gain, bias;
    TensorT<T> xhat_cache;
    std::vector<T> inv_std;
    std::vector<int> in_shape;

    ChannelNorm() = default;
    explicit ChannelNorm(int c) : channels(c) {
        gain = TensorT<T>({c});
        bias = TensorT<T>({c});
        gain.fill(T(1));
    }

    std::vector<ParamRef<T>> parameters(const std::string& prefix) {
        return {{prefix + ".gain", &gain}, {prefix + ".bias", &bias}};
    }

    TensorT<T> forward(const TensorT<T>& x) {
        if (x.shape.back() != channels) fail("shape-mismatch", "channel norm input");
        in_shape = x.shape;
        const int64_t n = x.numel() / channels;
        TensorT<T> y(x.shape);
        xhat_cache = TensorT<T>(x.shape);
        inv_std.assign(channels, T(0));
        for (int c = 0; c < channels; ++c) {
            T mean = 0;
            for (int64_t p = 0; p < n; ++p) mean += x.data[p * channels + c];
            mean /= T(n);
            T var = 0;
            for (int64_t p = 0; p < n; ++p) {
                T d = x.data[p * channels + c] - mean;
                var += d * d;
            }
            var /= T(n);
            T inv = T(1) / std::sqrt(var + eps);
            inv_std[c] = inv;
            for (int64_t p = 0; p < n; ++p) {
                T xh = (x.data[p * channels + c] - mean) * inv;
                xhat_cache.data[p * channels + c] = xh;
                y.data[p * channels + c] = gain.data[c] * xh + bias.data[c];
            }
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        gain.ensure_grad();
        bias.ensure_grad();
        const int64_t n = gy.numel() / channels;
        TensorT<T> gx(in_shape);
        for (int c = 0; c < channels; ++c) {
            T sum_g = 0, sum_gx = 0;
            for (int64_t p = 0; p < n; ++p) {
                T g = gy.data[p * channels + c];
                T xh = xhat_cache.data[p * channels + c];
                sum_g += g;
                sum_gx += g * xh;
            }
            gain.grad[c] += sum_gx;
            bias.grad[c] += sum_g;
            T gscale = gain.data[c] * inv_std[c];
            T mean_g = sum_g / T(n), mean_gx = sum_gx / T(n);
            for (int64_t p = 0; p < n; ++p) {
                T g = gy.data[p * channels + c];
                T xh = xhat_cache.data[p * channels + c];
                gx.data[p * channels + c] = gscale * (g - mean_g - xh * mean_gx);
            }
        }
        return gx;
    }
};

template <class T>
struct ReLU {
    std::vector<char> mask;

    TensorT<T> forward(const TensorT<T>& x) {
        TensorT<T> y(x.shape);
        mask.assign(x.data.size(), 0);
        for (size_t i = 0; i < x.data.size(); ++i) {
            if (x.data[i] > T(0)) {
                y.data[i] = x.data[i];
                mask[i] = 1;
            }
        }
        return y;
    }
    TensorT<T> backward(const TensorT<T>& gy) {
        TensorT<T> gx(gy.shape);
        for (size_t i = 0; i < gy.data.size(); ++i) gx.data[i] = mask[i] ? gy.data[i] : T(0);
        return gx;
    }
};

template <class T>
struct Sigmoid {
    TensorT<T> out_cache;

    TensorT<T> forward(const TensorT<T>& x) {
        TensorT<T> y(x.shape);
        for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
        out_cache = y;
        return y;
    }
    TensorT<T> backward(const TensorT<T>& gy) {
        TensorT<T> gx(gy.shape);
        for (size_t i = 0; i < gy.data.size(); ++i) {
            T s = out_cache.data[i];
            gx.data[i] = gy.data[i] * s * (T(1) - s);
        }
        return gx;
    }
};

/// Shared affine map over the last axis: [N][Cin] -> [N][Cout].
template <class T>
struct Linear {
    int in_c = 0, out_c = 0;
    TensorT<T> w, b;  // w: [Cin][Cout]
    TensorT<T> in_cache;

    Linear() = default;
    Linear(int in_channels, int out_channels, std::mt19937_64& rng) : in_c(in_channels), out_c(out_channels) {
        w = TensorT<T>({in_c, out_c});
        b = TensorT<T>({out_c});
        fill_kaiming(w, rng, in_c);
    }

    std::vector<ParamRef<T>> parameters(const std::string& prefix) {
        return {{prefix + ".w", &w}, {prefix + ".b", &b}};
    }

    TensorT<T> forward(const TensorT<T>& x) {
        if (x.shape.back() != in_c) fail("shape-mismatch", "linear input");
        in_cache = x;
        const int64_t n = x.numel() / in_c;
        std::vector<int> oshape = x.shape;
        oshape.back() = out_c;
        TensorT<T> y(oshape);
        parallel_for(n, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                T* py = y.data.data() + p * out_c;
                for (int c = 0; c < out_c; ++c) py[c] = b.data[c];
                const T* px = x.data.data() + p * in_c;
                for (int i = 0; i < in_c; ++i) {
                    T a = px[i];
                    if (a == T(0)) continue;
                    const T* pw = w.data.data() + int64_t(i) * out_c;
                    for (int c = 0; c < out_c; ++c) py[c] += a * pw[c];
                }
            }
        });
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        w.ensure_grad();
        b.ensure_grad();
        const int64_t n = gy.numel() / out_c;
        TensorT<T> gx(in_cache.shape);
        parallel_for(n, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                const T* pgy = gy.data.data() + p * out_c;
                T* pgx = gx.data.data() + p * in_c;
                for (int i = 0; i < in_c; ++i) {
                    const T* pw = w.data.data() + int64_t(i) * out_c;
                    T s = 0;
                    for (int c = 0; c < out_c; ++c) s += pgy[c] * pw[c];
                    pgx[i] = s;
                }
            }
        });
        for (int64_t p = 0; p < n; ++p) {  // fixed order for parameter grads
            const T* pgy = gy.data.data() + p * out_c;
            const T* px = in_cache.data.data() + p * in_c;
            for (int i = 0; i < in_c; ++i) {
                T a = px[i];
                if (a == T(0)) continue;
                T* pgw = w.grad.data() + int64_t(i) * out_c;
                for (int c = 0; c < out_c; ++c) pgw[c] += a * pgy[c];
            }
            for (int c = 0; c < out_c; ++c) b.grad[c] += pgy[c];
        }
        return gx;
    }
};

/// Max pooling over non-overlapping windows; trailing remainder voxels are
/// dropped. Argmax indices are cached for the backward scatter.
template <class T>
struct MaxPool3d {
    int fx = 2, fy = 2, fz = 1;
    std::vector<int64_t> argmax;
    std::vector<int> in_shape;

    MaxPool3d() = default;
    MaxPool3d(int fx_, int fy_, int fz_) : fx(fx_), fy(fy_), fz(fz_) {}

    TensorT<T> forward(const TensorT<T>& x) {
        const int D = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3];
        in_shape = x.shape;
        const int OD = D / fz, OH = H / fy, OW = W / fx;
        if (OD < 1 || OH < 1 || OW < 1) fail("shape-mismatch", "max pool output would be empty");
        TensorT<T> y({OD, OH, OW, C});
        argmax.assign(y.numel(), 0);
        for (int z = 0; z < OD; ++z)
            for (int yy = 0; yy < OH; ++yy)
                for (int xx = 0; xx < OW; ++xx)
                    for (int c = 0; c < C; ++c) {
                        T best = -std::numeric_limits<T>::infinity();
                        int64_t best_idx = 0;
                        for (int dz = 0; dz < fz; ++dz)
                            for (int dy = 0; dy < fy; ++dy)
                                for (int dx = 0; dx < fx; ++dx) {
                                    int64_t idx =
                                        ((int64_t(z * fz + dz) * H + (yy * fy + dy)) * W + (xx * fx + dx)) * C + c;
                                    if (x.data[idx] > best) {
                                        best = x.data[idx];
                                        best_idx = idx;
                                    }
                                }
                        int64_t o = ((int64_t(z) * OH + yy) * OW + xx) * C + c;
                        y.data[o] = best;
                        argmax[o] = best_idx;
                    }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        TensorT<T> gx(in_shape);
        for (int64_t o = 0; o < int64_t(argmax.size()); ++o) gx.data[argmax[o]] += gy.data[o];
        return gx;
    }
};

/// Nearest-neighbor resize to explicit target dims (used by the decoder to
/// match odd encoder dims exactly).
template <class T>
struct Upsample3d {
    std::vector<int> in_shape;
    int td = 0, th = 0, tw = 0;

    TensorT<T> forward(const TensorT<T>& x, int target_d, int target_h, int target_w) {
        in_shape = x.shape;
        td = target_d;
        th = target_h;
        tw = target_w;
        const int D = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3];
        TensorT<T> y({td, th, tw, C});
        for (int z = 0; z < td; ++z) {
            int sz = int(int64_t(z) * D / td);
            for (int yy = 0; yy < th; ++yy) {
                int sy = int(int64_t(yy) * H / th);
                for (int xx = 0; xx < tw; ++xx) {
                    int sx = int(int64_t(xx) * W / tw);
                    const T* px = x.data.data() + ((int64_t(sz) * H + sy) * W + sx) * C;
                    T* py = y.data.data() + ((int64_t(z) * th + yy) * tw + xx) * C;
                    for (int c = 0; c < C; ++c) py[c] = px[c];
                }
            }
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        const int D = in_shape[0], H = in_shape[1], W = in_shape[2], C = in_shape[3];
        TensorT<T> gx(in_shape);
        for (int z = 0; z < td; ++z) {
            int sz = int(int64_t(z) * D / td);
            for (int yy = 0; yy < th; ++yy) {
                int sy = int(int64_t(yy) * H / th);
                for (int xx = 0; xx < tw; ++xx) {
                    int sx = int(int64_t(xx) * W / tw);
                    const T* pgy = gy.data.data() + ((int64_t(z) * th + yy) * tw + xx) * C;
                    T* pgx = gx.data.data() + ((int64_t(sz) * H + sy) * W + sx) * C;
                    for (int c = 0; c < C; ++c) pgx[c] += pgy[c];
                }
            }
        }
        return gx;
    }
};

/// Channel gating from globally pooled statistics (squeeze-and-excitation).
template <class T>
struct SqueezeExcite {
    int channels = 0, hidden = 0;
    TensorT<T> w1, b1, w2, b2;
    TensorT<T> in_cache;
    std::vector<T> pooled, pre1, act1, gate;

    SqueezeExcite() = default;
    SqueezeExcite(int c, int reduction, std::mt19937_64& rng) : channels(c), hidden(std::max(1, c / reduction)) {
        w1 = TensorT<T>({channels, hidden});
        b1 = TensorT<T>({hidden});
        w2 = TensorT<T>({hidden, channels});
        b2 = TensorT<T>({channels});
        fill_kaiming(w1, rng, channels);
        fill_kaiming(w2, rng, hidden);
    }

    std::vector<ParamRef<T>> parameters(const std::string& prefix) {
        return {{prefix + ".w1", &w1}, {prefix + ".b1", &b1}, {prefix + ".w2", &w2}, {prefix + ".b2", &b2}};
    }

    TensorT<T> forward(const TensorT<T>& x) {
        if (x.shape.back() != channels) fail("shape-mismatch", "squeeze-excite input");
        in_cache = x;
        const int64_t n = x.numel() / channels;
        pooled.assign(channels, T(0));
        for (int64_t p = 0; p < n; ++p)
            for (int c = 0; c < channels; ++c) pooled[c] += x.data[p * channels + c];
        for (int c = 0; c < channels; ++c) pooled[c] /= T(n);

        pre1.assign(hidden, T(0));
        for (int h = 0; h < hidden; ++h) {
            T s = b1.data[h];
            for (int c = 0; c < channels; ++c) s += pooled[c] * w1.data[int64_t(c) * hidden + h];
            pre1[h] = s;
        }
        act1 = pre1;
        for (auto& v : act1) v = std::max(v, T(0));
        gate.assign(channels, T(0));
        for (int c = 0; c < channels; ++c) {
            T s = b2.data[c];
            for (int h = 0; h < hidden; ++h) s += act1[h] * w2.data[int64_t(h) * channels + c];
            gate[c] = T(1) / (T(1) + std::exp(-s));
        }
        TensorT<T> y(x.shape);
        for (int64_t p = 0; p < n; ++p)
            for (int c = 0; c < channels; ++c) y.data[p * channels + c] = x.data[p * channels + c] * gate[c];
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        w1.ensure_grad();
        b1.ensure_grad();
        w2.ensure_grad();
        b2.ensure_grad();
        const int64_t n = gy.numel() / channels;
        TensorT<T> gx(in_cache.shape);
        std::vector<T> ggate(channels, T(0));
        for (int64_t p = 0; p < n; ++p)
            for (int c = 0; c < channels; ++c) {
                gx.data[p * channels + c] = gy.data[p * channels + c] * gate[c];
                ggate[c] += gy.data[p * channels + c] * in_cache.data[p * channels + c];
            }
        std::vector<T> gz2(channels);
        for (int c = 0; c < channels; ++c) gz2[c] = ggate[c] * gate[c] * (T(1) - gate[c]);
        std::vector<T> gh(hidden, T(0));
        for (int h = 0; h < hidden; ++h) {
            for (int c = 0; c < channels; ++c) {
                w2.grad[int64_t(h) * channels + c] += act1[h] * gz2[c];
                gh[h] += w2.data[int64_t(h) * channels + c] * gz2[c];
            }
            if (pre1[h] <= T(0)) gh[h] = T(0);
        }
        for (int c = 0; c < channels; ++c) b2.grad[c] += gz2[c];
        std::vector<T> gpooled(channels, T(0));
        for (int c = 0; c < channels; ++c)
            for (int h = 0; h < hidden; ++h) {
                w1.grad[int64_t(c) * hidden + h] += pooled[c] * gh[h];
                gpooled[c] += w1.data[int64_t(c) * hidden + h] * gh[h];
            }
        for (int h = 0; h < hidden; ++h) b1.grad[h] += gh[h];
        for (int64_t p = 0; p < n; ++p)
            for (int c = 0; c < channels; ++c) gx.data[p * channels + c] += gpooled[c] / T(n);
        return gx;
    }
};

/// Max over the leading (point) axis: [N][C] -> [C], argmax cached.
template <class T>
struct MaxOverPoints {
    std::vector<int64_t> argmax;
    std::vector<int> in_shape;

    TensorT<T> forward(const TensorT<T>& x) {
        const int64_t n = x.shape[0];
        const int c = x.shape[1];
        in_shape = x.shape;
        TensorT<T> y({c});
        argmax.assign(c, 0);
        for (int j = 0; j < c; ++j) {
            T best = x.data[j];
            int64_t bi = 0;
            for (int64_t p = 1; p < n; ++p)
                if (x.data[p * c + j] > best) {
                    best = x.data[p * c + j];
                    bi = p;
                }
            y.data[j] = best;
            argmax[j] = bi;
        }
        return y;
    }
    TensorT<T> backward(const TensorT<T>& gy) {
        TensorT<T> gx(in_shape);
        const int c = in_shape[1];
        for (int j = 0; j < c; ++j) gx.data[argmax[j] * c + j] += gy.data[j];
        return gx;
    }
};

/// Numerically stable binary cross-entropy on a logit. Returns the loss and
/// writes d(loss)/d(logit).
template <class T>
inline T bce_with_logit(T logit, T target, T& dlogit) {
    T p = T(1) / (T(1) + std::exp(-logit));
    dlogit = p - target;
    // log(1 + exp(-|x|)) formulation
    T abs_l = std::abs(logit);
    T loss = std::max(logit, T(0)) - logit * target + std::log1p(std::exp(-abs_l));
    return loss;
}

}  // namespace neutrace::nn
