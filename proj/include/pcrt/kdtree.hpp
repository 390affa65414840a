// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "pcrt/cloud.hpp"
#include "pcrt/vec3.hpp"

namespace pcrt {

// k-d tree over point discs. Immutable after build; concurrent read-only
// queries are safe. Query results match a brute-force linear scan.
class SpatialIndex {
  public:
    SpatialIndex() = default;

    // Throws InputError("empty scene") on an empty cloud.
    static SpatialIndex build(std::shared_ptr<const PointCloud> cloud);

    // Non-owning variant; the caller keeps the cloud alive and in place.
    static SpatialIndex build(const PointCloud& cloud);

    bool valid() const { return cloud_ != nullptr; }

    // Nearest disc pierced by the ray with t > t_min; nullopt if none.
    // When t_max is finite, hits beyond it are ignored (segment query).
    // The returned normal faces the ray (flipped if needed); points with
    // invalid normals never produce hits.
    std::optional<Hit> intersect(const Vec3& origin, const Vec3& dir,
                                 double t_min = 1e-4,
                                 double t_max = std::numeric_limits<double>::infinity()) const;

    // True if any disc blocks the segment strictly between t_min and t_max.
    bool occluded(const Vec3& origin, const Vec3& dir, double t_min, double t_max) const;

    // Indices of all points with |p - center| <= radius, ascending order.
    std::vector<std::size_t> radius_query(const Vec3& center, double radius) const;

    // k nearest neighbors of q (including q itself if it is a cloud point),
    // sorted by distance then index.
    std::vector<std::size_t> knn(const Vec3& q, std::size_t k) const;

    std::size_t nearest(const Vec3& q) const;
    double nearest_distance(const Vec3& q) const;

    const PointCloud& cloud() const { return *cloud_; }
    double point_radius() const { return cloud_->point_radius; }

  private:
    struct Node {
        // Tight AABB of contained points.
        Vec3 lo, hi;
        std::uint32_t left = 0, right = 0;  // children indices; 0 = leaf
        std::uint32_t begin = 0, end = 0;   // range in order_
    };

    std::shared_ptr<const PointCloud> cloud_;
    std::vector<Node> nodes_;
    std::vector<std::uint32_t> order_;

    std::uint32_t build_node(std::vector<std::uint32_t>::iterator begin,
                             std::vector<std::uint32_t>::iterator end,
                             std::uint32_t offset);
};

// Ray/disc test used by both the tree and the brute-force oracle in tests.
// Returns the ray parameter t when the ray pierces the disc, else nullopt.
std::optional<double> ray_disc_t(const Vec3& origin, const Vec3& dir, const Vec3& center,
                                 const Vec3& normal, double radius, double t_min, double t_max);

}  // namespace pcrt
