// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pcrt/em.hpp"
#include "pcrt/scene.hpp"

namespace pcrt {

struct TraceConfig {
    std::size_t n_rays = 100000;   // launch density (paper scale: 1e6)
    int max_bounces = 3;
    int max_diffuse = 1;
    int diffraction_order = 1;     // 0 disables edge diffraction
    int n_scatter = 8;             // Lambertian spawns per specular hit
    double power_floor_db = 40.0;  // keep paths within this of the strongest
    std::uint64_t seed = 1;
    int threads = 1;

    void validate() const {
        if (n_rays < 1) throw InputError("n_rays must be >= 1");
        if (max_bounces < 1) throw InputError("max_bounces must be >= 1");
        if (power_floor_db <= 0.0) throw InputError("power_floor_db must be positive");
    }
};

enum class HopKind : int { reflect = 0, scatter = 1, diffract = 2 };

const char* hop_kind_name(HopKind k);
HopKind hop_kind_from_name(const std::string& s);

struct PathHop {
    Vec3 position;
    Vec3 dir_in, dir_out;   // unit propagation directions
    HopKind kind = HopKind::reflect;
    PolAmp amp;             // interaction factor, canonical segment bases
    double seg_len_in = 0;  // length of the segment arriving at this hop
    std::size_t point_id = 0;  // disc id (edge index for diffraction hops)
    int material_id = 0;
    double gamma = 1.0;     // upstream power fraction seen by this hop
};

struct TracedPath {
    std::vector<PathHop> hops;   // empty for LOS
    double final_seg_len = 0.0;  // last vertex (or Tx) to Rx
    PathGain gain;
    Vec3 aod;  // departure direction at Tx
    Vec3 aoa;  // direction from Rx toward the last vertex
    int bounce_count() const { return static_cast<int>(hops.size()); }
    double power_db() const { return 20.0 * std::log10(gain.a); }
};

struct ChannelRealization {
    std::optional<TracedPath> los;
    std::vector<TracedPath> nlos;
    double f_hz = 0.0;
    std::size_t n_rays = 0;  // launch density used (reception radius context)

    std::vector<const TracedPath*> all_paths() const {
        std::vector<const TracedPath*> v;
        if (los) v.push_back(&*los);
        for (const auto& p : nlos) v.push_back(&p);
        return v;
    }
};

// Reception sphere radius at unfolded path length `unfolded`:
// unfolded * sqrt(4*pi/n_rays) / sqrt(3).
double reception_radius(double unfolded, std::size_t n_rays);

// Closest-approach reception test for the segment starting at `origin` in
// direction `dir` (unit), with `unfolded` path length already travelled.
// Returns the closest-approach parameter when the segment passes within the
// reception sphere of rx and no disc lies before the approach point;
// `t_block` is the distance to the next surface hit (+inf when none).
std::optional<double> reception_test(const Vec3& origin, const Vec3& dir, double unfolded,
                                     const Vec3& rx, std::size_t n_rays, double t_block);

// Full SBR trace: LOS by geometry, NLOS by ray launching, first-order edge
// diffraction by Fermat search, canonical duplicate merge, power filter.
// Deterministic for fixed (scene, cfg); thread count never changes output.
ChannelRealization trace(const Scene& scene, const TraceConfig& cfg);

// First-order diffraction paths for every scene edge.
std::vector<TracedPath> enumerate_diffraction(const Scene& scene, const TraceConfig& cfg);

// Keeps the strongest path and all paths within floor_db of it.
ChannelRealization power_filter(ChannelRealization real, double floor_db);

// JSON channel file, one per Tx-Rx link.
void save_channel(const ChannelRealization& real, const std::string& path);
ChannelRealization load_channel(const std::string& path);

}  // namespace pcrt
