// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "pcrt/cloud.hpp"
#include "pcrt/kdtree.hpp"
#include "pcrt/rng.hpp"
#include "pcrt/vec3.hpp"

namespace pcrt {

// PCA normals over k nearest neighbors. Normals are oriented toward
// orient_toward (default: cloud centroid, a stand-in for the room interior);
// rank-deficient neighborhoods get normal_ok = 0 and are skipped by
// intersection queries.
PointCloud estimate_normals(const PointCloud& cloud, std::size_t k,
                            std::optional<Vec3> orient_toward = std::nullopt);

struct CropResult {
    PointCloud cloud;                     // re-centered: center maps to origin
    std::vector<std::size_t> source_ids;  // indices into the parent cloud
};

// Points within radius of center, re-centered, uniformly subsampled to
// max_points under the given seed. Throws InputError("isolated interaction
// point") when the ball is empty.
CropResult crop(const PointCloud& cloud, const SpatialIndex& index, const Vec3& center,
                double radius, std::size_t max_points, std::uint64_t seed);

// Farthest point sampling; greedy max-min. Deterministic: starts from the
// point nearest the centroid of the set. Returns n_prime indices.
std::vector<std::size_t> fps(const std::vector<Vec3>& points, std::size_t n_prime);

struct GroupedSets {
    std::size_t n_centroids = 0;
    std::size_t group_size = 0;                // K
    std::vector<std::uint32_t> indices;        // n_centroids * K, into the point list
    std::vector<Vec3> rel_coords;              // n_centroids * K, point - centroid
    std::vector<std::uint32_t> unique_counts;  // members before padding, per centroid
    std::vector<std::uint8_t> empty_flag;      // 1 when a centroid had no neighbor in r
};

// Ball grouping around each centroid: up to K members with |x - c| <= r,
// nearest first; short groups are padded by repeating the nearest member.
// A centroid with no neighbors is padded with itself (rel coord 0) and
// flagged. unique_counts lets downstream kernels skip padded duplicates.
GroupedSets group(const std::vector<Vec3>& points, const std::vector<Vec3>& centroids,
                  double r, std::size_t K);

// Fibonacci sphere: l = 1..L, z_l = 1 - 2l/L, azimuth 2*pi*l*phi with
// phi = (sqrt(5)-1)/2. Unit vectors.
std::vector<Vec3> fibonacci_directions(std::size_t L);

}  // namespace pcrt
