#pragma once

#include <string>
#include <vector>

#include "neutrace/nn/optim.hpp"
#include "neutrace/nn/tensor.hpp"

namespace neutrace::nn {

/// Binary checkpoint: header with an architecture tag and per-tensor shapes,
/// then little-endian float32 data in declaration order, plus an optional
/// optimizer state section. See docs/formats.md.
void save_checkpoint(const std::string& path, const std::string& arch_tag, uint64_t config_hash,
                     const std::vector<ParamRef<float>>& params, const AdamW<float>* optimizer = nullptr);

struct Checkpoint {
    std::string arch_tag;
    uint64_t config_hash = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;
    bool has_optimizer = false;
    int64_t optimizer_step = 0;
    std::vector<std::vector<float>> opt_m, opt_v;

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint tensors into live parameters by name, checking shapes.
void restore_params(const Checkpoint& ck, std::vector<ParamRef<float>>& params);
void restore_optimizer(const Checkpoint& ck, AdamW<float>& opt);

}  // namespace neutrace::nn
