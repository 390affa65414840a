// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cmath>
#include <cstddef>
#include <string_view>
#include <vector>

#include "pcrt/vec3.hpp"

namespace pcrt {

// Counter-based generator (splitmix64 core). All randomness in the project
// flows from one root seed through named sub-streams, so results do not
// depend on the platform's distribution implementations or on thread
// scheduling.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    // Uniform in {0, ..., n-1} without modulo bias (n > 0).
    std::uint64_t uniform_index(std::uint64_t n) {
        std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Marsaglia polar method.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Cosine-weighted direction on the hemisphere around unit normal n
    // (Lambertian lobe, pdf = cos(theta)/pi).
    Vec3 lambertian(const Vec3& n);

  private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over a string, used to derive named sub-seeds and config hashes.
std::uint64_t hash64(std::string_view s);

// Derive a sub-seed: independent stream per (seed, tag) and per (seed, tag, index).
std::uint64_t sub_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t sub_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index);

}  // namespace pcrt
