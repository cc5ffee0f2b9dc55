#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace neutrace {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm2() const { return dot(*this); }
    double norm() const { return std::sqrt(norm2()); }
    Vec3 normalized() const {
        double n = norm();
        return n > 0 ? *this / n : Vec3{1, 0, 0};
    }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

/// Error with a stable machine-readable tag alongside the human message.
struct Error : std::runtime_error {
    std::string tag;
    Error(std::string t, const std::string& msg) : std::runtime_error(msg), tag(std::move(t)) {}
};

[[noreturn]] inline void fail(std::string tag, const std::string& msg) { throw Error(std::move(tag), msg); }

// ---- deterministic seed derivation -----------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t hash_u64(uint64_t v) {
    uint64_t s = v;
    return splitmix64(s);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2));
    return splitmix64(s);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Per-stage seed from a master seed; stages can rerun independently.
inline uint64_t derive_seed(uint64_t master, std::string_view stage) {
    return hash_combine(master, fnv1a64(stage));
}

/// Hash a 64-bit value to [0,1).
inline double u01(uint64_t h) {
    return double(hash_u64(h) >> 11) * (1.0 / 9007199254740992.0);
}

// ---- parallelism ------------------------------------------------------------
//
// parallel_for splits [0,n) into contiguous chunks, one per worker. Every
// output element is produced by exactly one worker with a fixed accumulation
// order, so results are identical for any thread count.

int& thread_count();
void set_thread_count(int n);

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);

}  // namespace neutrace
