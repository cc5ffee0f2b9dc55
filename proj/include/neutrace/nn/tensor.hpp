#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "neutrace/common.hpp"

namespace neutrace::nn {

/// Dense row-major tensor with an optional gradient buffer of the same shape.
/// Spatial tensors use [D][H][W][C] (channel-fastest); point sets use [N][C].
template <class T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)) { data.assign(numel(), T(0)); }

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }
    int dim(int i) const { return shape[i]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() { grad.assign(data.size(), T(0)); }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <class T>
void fill_uniform(TensorT<T>& t, std::mt19937_64& rng, T lo, T hi) {
    std::uniform_real_distribution<double> u{double(lo), double(hi)};
    for (auto& v : t.data) v = T(u(rng));
}

/// He-style init scaled by the receptive fan-in.
template <class T>
void fill_kaiming(TensorT<T>& t, std::mt19937_64& rng, int64_t fan_in) {
    std::normal_distribution<double> n(0.0, std::sqrt(2.0 / double(fan_in)));
    for (auto& v : t.data) v = T(n(rng));
}

template <class T>
struct ParamRef {
    std::string name;
    TensorT<T>* tensor = nullptr;
};

}  // namespace neutrace::nn
