// SPDX-License-Identifier: Apache-2.0
#include "pcrt/rng.hpp"

#include <ostream>

namespace pcrt {

std::ostream& operator<<(std::ostream& os, const Vec3& v) {
    return os << "(" << v.x << ", " << v.y << ", " << v.z << ")";
}

Vec3 Rng::lambertian(const Vec3& n) {
    // Sample a disc, project up; frame built from the normal.
    double u1 = uniform01(), u2 = uniform01();
    double r = std::sqrt(u1);
    double phi = 2.0 * M_PI * u2;
    double lx = r * std::cos(phi), ly = r * std::sin(phi);
    double lz = std::sqrt(std::max(0.0, 1.0 - u1));
    Vec3 t = std::fabs(n.z) < 0.9 ? cross(Vec3{0, 0, 1}, n) : cross(Vec3{1, 0, 0}, n);
    t = normalized(t);
    Vec3 b = cross(n, t);
    return normalized(t * lx + b * ly + n * lz);
}

std::uint64_t hash64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t sub_seed(std::uint64_t seed, std::string_view tag) {
    Rng r(seed ^ hash64(tag));
    return r.next_u64();
}

std::uint64_t sub_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    Rng r(sub_seed(seed, tag) ^ (0x9e3779b97f4a7c15ull * (index + 1)));
    return r.next_u64();
}

}  // namespace pcrt
