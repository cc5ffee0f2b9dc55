#include "neutrace/nn/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>

namespace neutrace::nn {

namespace {

constexpr char kMagic[8] = {'N', 'T', 'C', 'K', 'P', 'T', '1', 0};

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_bytes(std::FILE* f, const void* p, size_t n, const std::string& path) {
    if (std::fwrite(p, 1, n, f) != n) fail("io-error", "write failed: " + path);
}
void read_bytes(std::FILE* f, void* p, size_t n, const std::string& path) {
    if (std::fread(p, 1, n, f) != n) fail("io-error", "short read: " + path);
}
void write_u32(std::FILE* f, uint32_t v, const std::string& path) { write_bytes(f, &v, 4, path); }
uint32_t read_u32(std::FILE* f, const std::string& path) {
    uint32_t v;
    read_bytes(f, &v, 4, path);
    return v;
}
void write_string(std::FILE* f, const std::string& s, const std::string& path) {
    write_u32(f, uint32_t(s.size()), path);
    write_bytes(f, s.data(), s.size(), path);
}
std::string read_string(std::FILE* f, const std::string& path) {
    uint32_t n = read_u32(f, path);
    if (n > 4096) fail("bad-format", "oversized string in " + path);
    std::string s(n, 0);
    read_bytes(f, s.data(), n, path);
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& arch_tag, uint64_t config_hash,
                     const std::vector<ParamRef<float>>& params, const AdamW<float>* optimizer) {
    // atomic write-then-rename
    std::string tmp = path + ".tmp";
    {
        FilePtr f(std::fopen(tmp.c_str(), "wb"));
        if (!f) fail("io-error", "cannot open " + tmp);
        write_bytes(f.get(), kMagic, 8, tmp);
        write_u32(f.get(), 1, tmp);
        write_bytes(f.get(), &config_hash, 8, tmp);
        write_string(f.get(), arch_tag, tmp);
        write_u32(f.get(), uint32_t(params.size()), tmp);
        for (const auto& p : params) {
            write_string(f.get(), p.name, tmp);
            write_u32(f.get(), uint32_t(p.tensor->shape.size()), tmp);
            for (int d : p.tensor->shape) write_u32(f.get(), uint32_t(d), tmp);
            write_bytes(f.get(), p.tensor->data.data(), p.tensor->data.size() * 4, tmp);
        }
        write_u32(f.get(), optimizer ? 1u : 0u, tmp);
        if (optimizer) {
            uint64_t sc = uint64_t(optimizer->step_count);
            write_bytes(f.get(), &sc, 8, tmp);
            write_u32(f.get(), uint32_t(optimizer->m.size()), tmp);
            for (size_t i = 0; i < optimizer->m.size(); ++i) {
                write_u32(f.get(), uint32_t(optimizer->m[i].size()), tmp);
                write_bytes(f.get(), optimizer->m[i].data(), optimizer->m[i].size() * 4, tmp);
                write_bytes(f.get(), optimizer->v[i].data(), optimizer->v[i].size() * 4, tmp);
            }
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) fail("io-error", "cannot open " + path);
    char magic[8];
    read_bytes(f.get(), magic, 8, path);
    if (std::memcmp(magic, kMagic, 8) != 0) fail("bad-format", "not a checkpoint file: " + path);
    uint32_t version = read_u32(f.get(), path);
    if (version != 1) fail("bad-format", "unsupported checkpoint version in " + path);
    Checkpoint ck;
    read_bytes(f.get(), &ck.config_hash, 8, path);
    ck.arch_tag = read_string(f.get(), path);
    uint32_t n = read_u32(f.get(), path);
    ck.tensors.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = read_string(f.get(), path);
        uint32_t ndim = read_u32(f.get(), path);
        if (ndim > 8) fail("bad-format", "oversized tensor rank in " + path);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = int(read_u32(f.get(), path));
        Tensor t(shape);
        read_bytes(f.get(), t.data.data(), t.data.size() * 4, path);
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    uint32_t has_opt = read_u32(f.get(), path);
    if (has_opt) {
        ck.has_optimizer = true;
        uint64_t sc;
        read_bytes(f.get(), &sc, 8, path);
        ck.optimizer_step = int64_t(sc);
        uint32_t np = read_u32(f.get(), path);
        ck.opt_m.resize(np);
        ck.opt_v.resize(np);
        for (uint32_t i = 0; i < np; ++i) {
            uint32_t len = read_u32(f.get(), path);
            ck.opt_m[i].resize(len);
            ck.opt_v[i].resize(len);
            read_bytes(f.get(), ck.opt_m[i].data(), size_t(len) * 4, path);
            read_bytes(f.get(), ck.opt_v[i].data(), size_t(len) * 4, path);
        }
    }
    return ck;
}

void restore_params(const Checkpoint& ck, std::vector<ParamRef<float>>& params) {
    for (auto& p : params) {
        const Tensor* src = ck.find(p.name);
        if (!src) fail("bad-format", "checkpoint is missing tensor " + p.name);
        if (src->shape != p.tensor->shape) fail("shape-mismatch", "checkpoint shape mismatch for " + p.name);
        p.tensor->data = src->data;
    }
}

void restore_optimizer(const Checkpoint& ck, AdamW<float>& opt) {
    if (!ck.has_optimizer) fail("bad-format", "checkpoint has no optimizer state");
    opt.step_count = ck.optimizer_step;
    opt.m = ck.opt_m;
    opt.v = ck.opt_v;
}

}  // namespace neutrace::nn
