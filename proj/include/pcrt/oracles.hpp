// SPDX-License-Identifier: Apache-2.0
//
// Independent verification oracles and simple scene builders used by the
// test and acceptance suites. Deliberately kept apart from the tracer's
// path construction so the two sides of each check stay independent.
#pragma once

#include <memory>
#include <vector>

#include "pcrt/em.hpp"
#include "pcrt/scene.hpp"

namespace pcrt::oracles {

// Axis-aligned box room sampled on a jittered grid, inward normals,
// single material id 0.
std::shared_ptr<PointCloud> box_cloud(const Vec3& lo, const Vec3& hi, double spacing,
                                      std::uint64_t seed);

// Jittered planar floor at z = 0 spanning [-half, half]^2.
std::shared_ptr<PointCloud> floor_cloud(double half, double spacing, std::uint64_t seed);

// One validated specular path from the image method with the exact model
// amplitude (reflection interaction factors and per-segment spreading).
struct ImagePath {
    double delay = 0.0;
    double a = 0.0;
    int bounces = 0;
    std::vector<Vec3> points;  // reflection points in tx -> rx order
};

// Exhaustive image-method enumeration for an empty axis-aligned box with a
// single wall material; reflection points validated to lie on the walls in
// the correct order.
std::vector<ImagePath> image_method_box(const Vec3& lo, const Vec3& hi, const Vec3& tx,
                                        const Vec3& rx, int max_bounces, const Material& mat,
                                        double f_hz);

}  // namespace pcrt::oracles
