#include "neutrace/nn/gradcheck.hpp"

#include <functional>
#include <random>

#include "neutrace/embed/losses.hpp"
#include "neutrace/nn/layers.hpp"

namespace neutrace::nn {

namespace {

constexpr double kEps = 1e-3;

double weighted_sum(const Tensor64& y, const Tensor64& r) {
    double s = 0;
    for (size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * r.data[i];
    return s;
}

struct Target {
    Tensor64* tensor;
    const std::vector<double>* analytic;
};

double max_rel_err_fd(const std::function<double()>& eval, const std::vector<Target>& targets) {
    double worst = 0;
    for (const Target& t : targets) {
        for (size_t i = 0; i < t.tensor->data.size(); ++i) {
            double saved = t.tensor->data[i];
            t.tensor->data[i] = saved + kEps;
            double up = eval();
            t.tensor->data[i] = saved - kEps;
            double down = eval();
            t.tensor->data[i] = saved;
            double fd = (up - down) / (2 * kEps);
            double an = (*t.analytic)[i];
            double err = std::abs(fd - an);
            // diffs at the FD noise floor count as exact
            double rel = err <= 1e-8 ? 0.0 : err / std::max(std::abs(fd), std::abs(an));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

Tensor64 random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo, double hi) {
    Tensor64 t(std::move(shape));
    fill_uniform(t, rng, lo, hi);
    return t;
}

// Generic layer check: loss = sum(R . forward(x)).
template <class Layer>
double check_layer(Layer& layer, Tensor64& x, std::mt19937_64& rng,
                   std::vector<ParamRef<double>> params = {}) {
    Tensor64 y = layer.forward(x);
    Tensor64 r = random_tensor(y.shape, rng, -1, 1);
    for (auto& p : params) {
        p.tensor->ensure_grad();
        p.tensor->zero_grad();
    }
    Tensor64 gx = layer.backward(r);
    auto eval = [&] { return weighted_sum(layer.forward(x), r); };
    std::vector<Target> targets{{&x, &gx.data}};
    for (auto& p : params) targets.push_back({p.tensor, &p.tensor->grad});
    return max_rel_err_fd(eval, targets);
}

double case_conv(std::mt19937_64& rng, int kz) {
    Conv3d<double> conv(2, 3, 3, 3, kz, rng);
    Tensor64 x = random_tensor({3, 4, 4, 2}, rng, -1, 1);
    return check_layer(conv, x, rng, conv.parameters("conv"));
}

double case_conv1x1(std::mt19937_64& rng) {
    Conv3d<double> conv(3, 2, 1, 1, 1, rng);
    Tensor64 x = random_tensor({2, 3, 3, 3}, rng, -1, 1);
    return check_layer(conv, x, rng, conv.parameters("conv"));
}

double case_relu(std::mt19937_64& rng) {
    ReLU<double> relu;
    Tensor64 x = random_tensor({2, 3, 4, 3}, rng, -1, 1);
    for (auto& v : x.data)  // keep inputs away from the kink at zero
        if (std::abs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
    return check_layer(relu, x, rng);
}

double case_norm(std::mt19937_64& rng) {
    ChannelNorm<double> norm(4);
    fill_uniform(norm.gain, rng, 0.5, 1.5);
    fill_uniform(norm.bias, rng, -0.3, 0.3);
    Tensor64 x = random_tensor({2, 3, 3, 4}, rng, -1, 1);
    return check_layer(norm, x, rng, norm.parameters("norm"));
}

double case_se(std::mt19937_64& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        SqueezeExcite<double> se(4, 2, rng);
        Tensor64 x = random_tensor({2, 3, 3, 4}, rng, -1, 1);
        se.forward(x);
        bool near_kink = false;
        for (double v : se.pre1)
            if (std::abs(v) < 0.02) near_kink = true;
        if (near_kink) continue;
        return check_layer(se, x, rng, se.parameters("se"));
    }
    fail("gradcheck", "could not build a kink-free squeeze-excite instance");
}

double case_linear(std::mt19937_64& rng) {
    Linear<double> lin(5, 4, rng);
    Tensor64 x = random_tensor({7, 5}, rng, -1, 1);
    return check_layer(lin, x, rng, lin.parameters("linear"));
}

double case_sigmoid(std::mt19937_64& rng) {
    Sigmoid<double> sig;
    Tensor64 x = random_tensor({3, 4}, rng, -2, 2);
    return check_layer(sig, x, rng);
}

double case_maxpool(std::mt19937_64& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        MaxPool3d<double> pool(2, 2, 2);
        Tensor64 x = random_tensor({4, 4, 4, 2}, rng, -1, 1);
        pool.forward(x);
        // reject windows whose top two values are within FD reach of a tie
        bool tie = false;
        for (int z = 0; z < 2 && !tie; ++z)
            for (int yy = 0; yy < 2 && !tie; ++yy)
                for (int xx = 0; xx < 2 && !tie; ++xx)
                    for (int c = 0; c < 2 && !tie; ++c) {
                        std::vector<double> vals;
                        for (int dz = 0; dz < 2; ++dz)
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dx = 0; dx < 2; ++dx)
                                    vals.push_back(
                                        x.data[((int64_t(z * 2 + dz) * 4 + yy * 2 + dy) * 4 + xx * 2 + dx) * 2 + c]);
                        std::sort(vals.begin(), vals.end());
                        if (vals[7] - vals[6] < 0.02) tie = true;
                    }
        if (tie) continue;
        return check_layer(pool, x, rng);
    }
    fail("gradcheck", "could not build a tie-free max pool instance");
}

double case_max_points(std::mt19937_64& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        MaxOverPoints<double> pool;
        Tensor64 x = random_tensor({9, 4}, rng, -1, 1);
        bool tie = false;
        for (int c = 0; c < 4 && !tie; ++c) {
            std::vector<double> vals;
            for (int p = 0; p < 9; ++p) vals.push_back(x.data[p * 4 + c]);
            std::sort(vals.begin(), vals.end());
            if (vals[8] - vals[7] < 0.02) tie = true;
        }
        if (tie) continue;
        return check_layer(pool, x, rng);
    }
    fail("gradcheck", "could not build a tie-free max-over-points instance");
}

double case_upsample(std::mt19937_64& rng) {
    struct UpWrap {
        Upsample3d<double> up;
        Tensor64 forward(const Tensor64& x) { return up.forward(x, 3, 5, 5); }
        Tensor64 backward(const Tensor64& gy) { return up.backward(gy); }
    } wrap;
    Tensor64 x = random_tensor({2, 3, 3, 2}, rng, -1, 1);
    return check_layer(wrap, x, rng);
}

// Loss fixture: a small field partitioned into five masks. Rejected while any
// distance sits within FD reach of a hinge margin or a norm kink.
struct LossFixture {
    Tensor64 field;
    embed::Mask query, pos;
    std::vector<embed::Mask> negs, pseudo;
};

LossFixture build_loss_fixture(std::mt19937_64& rng, const embed::LossWeights<double>& w) {
    const int k = 4, positions = 50;
    for (int attempt = 0; attempt < 200; ++attempt) {
        std::uniform_real_distribution<double> su(0.3, 1.6);
        double scale = su(rng);
        LossFixture f;
        f.field = random_tensor({2, 5, 5, k}, rng, -scale, scale);
        std::vector<int64_t> perm(positions);
        for (int i = 0; i < positions; ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<embed::Mask> groups(5);
        for (int i = 0; i < positions; ++i) groups[i % 5].push_back(perm[i]);
        f.query = groups[0];
        f.pos = groups[1];
        f.negs = {groups[2], groups[3]};
        f.pseudo = groups;

        std::vector<std::vector<double>> mus;
        for (const auto& g : groups) mus.push_back(embed::segment_mean(f.field, g));
        // kink guard keeps hinges away from their margins; the small-distance
        // guard keeps 1/d curvature low enough for the finite-difference step
        const double margin = 2 * w.delta_d, kink = 0.02, small = 0.15;
        bool ok = true;
        for (size_t a = 0; a < mus.size() && ok; ++a) {
            double n2 = 0;
            for (double v : mus[a]) n2 += v * v;
            if (std::sqrt(n2) < small) ok = false;
            for (size_t b = a + 1; b < mus.size() && ok; ++b) {
                double d = embed::vec_distance(mus[a], mus[b]);
                if (d < small || std::abs(d - margin) < kink) ok = false;
            }
        }
        for (int g = 0; g < 5 && ok; ++g)
            for (int64_t p : groups[g]) {
                std::vector<double> e(f.field.data.begin() + p * k, f.field.data.begin() + (p + 1) * k);
                double d = embed::vec_distance(mus[g], e);
                if (std::abs(d - w.delta_v) < kink || (d > w.delta_v && d - w.delta_v < small)) {
                    ok = false;
                    break;
                }
            }
        if (ok) return f;
    }
    fail("gradcheck", "could not build a kink-free loss fixture");
}

double check_loss(std::mt19937_64& rng, embed::LossWeights<double> w) {
    LossFixture f = build_loss_fixture(rng, w);
    f.field.ensure_grad();
    f.field.zero_grad();
    embed::connectivity_loss(f.field, f.query, f.pos, f.negs, f.pseudo, w, true);
    auto eval = [&] {
        return embed::connectivity_loss(f.field, f.query, f.pos, f.negs, f.pseudo, w, false).total;
    };
    return max_rel_err_fd(eval, {{&f.field, &f.field.grad}});
}

double case_loss_merge_split(std::mt19937_64& rng) {
    embed::LossWeights<double> w;
    w.lambda1 = 0.1;
    w.lambda2 = 1.0;
    w.lambda3 = 0.0;
    return check_loss(rng, w);
}

double case_loss_seg_cluster(std::mt19937_64& rng) {
    embed::LossWeights<double> w;
    w.lambda1 = 0;
    w.lambda2 = 0;
    w.lambda3 = 1.0;
    return check_loss(rng, w);
}

double case_loss_total(std::mt19937_64& rng) {
    embed::LossWeights<double> w;
    w.lambda1 = 0.1;
    w.lambda2 = 1.0;
    w.lambda3 = 0.7;
    return check_loss(rng, w);
}

}  // namespace

std::vector<GradCheckReport> run_gradchecks(int instances_per_case, uint64_t seed, double tolerance) {
    struct Case {
        const char* name;
        std::function<double(std::mt19937_64&)> fn;
    };
    std::vector<Case> cases{
        {"conv3d", [](std::mt19937_64& r) { return case_conv(r, 3); }},
        {"conv2d_inplane", [](std::mt19937_64& r) { return case_conv(r, 1); }},
        {"conv1x1x1", case_conv1x1},
        {"relu", case_relu},
        {"channel_norm", case_norm},
        {"squeeze_excite", case_se},
        {"linear", case_linear},
        {"sigmoid", case_sigmoid},
        {"maxpool_space", case_maxpool},
        {"maxpool_points", case_max_points},
        {"upsample_nearest", case_upsample},
        {"loss_merge_split", case_loss_merge_split},
        {"loss_seg_cluster", case_loss_seg_cluster},
        {"loss_total_graph", case_loss_total},
    };
    std::vector<GradCheckReport> reports;
    for (const Case& c : cases) {
        GradCheckReport rep;
        rep.name = c.name;
        rep.instances = instances_per_case;
        rep.tolerance = tolerance;
        for (int i = 0; i < instances_per_case; ++i) {
            std::mt19937_64 rng(hash_combine(seed, hash_combine(fnv1a64(c.name), uint64_t(i))));
            rep.max_rel_err = std::max(rep.max_rel_err, c.fn(rng));
        }
        rep.pass = rep.max_rel_err < tolerance;
        reports.push_back(rep);
    }
    return reports;
}

bool all_passed(const std::vector<GradCheckReport>& reports) {
    for (const auto& r : reports)
        if (!r.pass) return false;
    return true;
}

}  // namespace neutrace::nn
