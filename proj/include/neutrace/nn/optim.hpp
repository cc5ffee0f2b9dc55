#pragma once

#include <cmath>

#include "neutrace/nn/tensor.hpp"

namespace neutrace::nn {

/// Warmup followed by step decay at fixed fractions of the total budget.
struct LrSchedule {
    double base_lr = 0.002;
    int warmup_steps = 200;
    int total_steps = 20000;
    std::vector<double> decay_at{0.6, 0.85};  // fractions of total_steps
    double decay_factor = 0.3;

    double at(int64_t step) const {
        double lr = base_lr;
        if (warmup_steps > 0 && step < warmup_steps) lr *= double(step + 1) / double(warmup_steps);
        for (double f : decay_at)
            if (double(step) >= f * total_steps) lr *= decay_factor;
        return lr;
    }
};

/// Adaptive moments with decoupled weight decay: the decay is applied to the
/// parameters directly, not through the gradients.
template <class T>
struct AdamW {
    T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
    T weight_decay = T(0);
    int64_t step_count = 0;
    std::vector<std::vector<T>> m, v;

    void step(std::vector<ParamRef<T>>& params, T lr) {
        if (m.empty()) {
            m.resize(params.size());
            v.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                m[i].assign(params[i].tensor->data.size(), T(0));
                v[i].assign(params[i].tensor->data.size(), T(0));
            }
        }
        step_count++;
        T bc1 = T(1) - std::pow(beta1, T(step_count));
        T bc2 = T(1) - std::pow(beta2, T(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            TensorT<T>& t = *params[i].tensor;
            t.ensure_grad();
            for (size_t j = 0; j < t.data.size(); ++j) {
                T g = t.grad[j];
                if (!std::isfinite(double(g)))
                    fail("non-finite-grad", "non-finite gradient in parameter " + params[i].name);
                m[i][j] = beta1 * m[i][j] + (T(1) - beta1) * g;
                v[i][j] = beta2 * v[i][j] + (T(1) - beta2) * g * g;
                T mhat = m[i][j] / bc1;
                T vhat = v[i][j] / bc2;
                t.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
                t.data[j] -= lr * weight_decay * t.data[j];
            }
        }
    }
};

template <class T>
inline void zero_grads(std::vector<ParamRef<T>>& params) {
    for (auto& p : params) {
        p.tensor->ensure_grad();
        p.tensor->zero_grad();
    }
}

}  // namespace neutrace::nn
