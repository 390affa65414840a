// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pcrt/cloud.hpp"
#include "pcrt/kdtree.hpp"
#include "pcrt/material.hpp"
#include "pcrt/vec3.hpp"

namespace pcrt {

struct Scene {
    std::shared_ptr<const PointCloud> cloud;  // may be empty (free space)
    SpatialIndex index;                       // valid iff cloud non-empty
    std::vector<EdgeSegment> edges;
    MaterialTable materials;
    Vec3 tx, rx;
    double f_hz = 28e9;

    double lambda() const;

    // Throws when tx == rx or a point references an unknown material.
    void validate() const;
};

// Builds the index and validates.
Scene make_scene(std::shared_ptr<const PointCloud> cloud, std::vector<EdgeSegment> edges,
                 MaterialTable materials, const Vec3& tx, const Vec3& rx, double f_hz);

// Text scene file bundling relative cloud/material paths, terminals,
// frequency and the edge list.
Scene load_scene(const std::string& path);
void save_scene(const Scene& scene, const std::string& path, const std::string& cloud_relpath,
                const std::string& materials_relpath);

}  // namespace pcrt
