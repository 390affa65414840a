// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcrt/vec3.hpp"

namespace pcrt {

// Thrown on malformed inputs (bad files, violated preconditions).
class InputError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Point cloud with per-point oriented discs. Each point stands in for a small
// surface patch of radius point_radius; rays interact with these discs.
struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> normals;            // empty, or one per point
    std::vector<std::uint8_t> normal_ok;  // empty, or 1 where the normal is usable
    std::vector<int> material_id;
    double point_radius = 0.05;  // meters

    std::size_t size() const { return positions.size(); }
    bool empty() const { return positions.empty(); }
    bool has_normals() const { return !normals.empty(); }

    bool normal_valid(std::size_t i) const {
        return has_normals() && (normal_ok.empty() || normal_ok[i] != 0);
    }

    // Throws InputError when invariants are violated (non-finite positions,
    // non-unit normals, non-positive radius).
    void validate() const;
};

// Straight wedge edge; scene metadata for diffraction. Face normals point
// away from the solid; interior_angle is the angle filled by material.
struct EdgeSegment {
    Vec3 a, b;            // endpoints
    Vec3 face_normal[2];  // outward unit normals of the two wedge faces
    double interior_angle = 0.0;  // radians, in (0, 2*pi)
    int material[2] = {0, 0};     // material ids of the two faces

    Vec3 axis() const { return normalized(b - a); }
    double length() const { return distance(a, b); }
};

// Result of a ray/point-disc intersection query.
struct Hit {
    std::size_t point_id = 0;
    Vec3 position;  // origin + t * dir
    double t = 0.0;
    Vec3 normal;    // disc normal, flipped toward the incident side
    int material_id = 0;
};

// Text format, one record per point: "x y z [nx ny nz] material_id".
// Header line: "pointcloud 1 <count> <has_normals> <point_radius>".
PointCloud load_cloud(const std::string& path);
void save_cloud(const PointCloud& cloud, const std::string& path);

// Average nearest-neighbor spacing (brute force below 20k points, sampled
// above); used for the default point_radius = 0.75 * spacing.
double mean_nn_spacing(const PointCloud& cloud);

}  // namespace pcrt
