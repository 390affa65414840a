// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pcrt/dataset.hpp"
#include "pcrt/scene.hpp"

namespace pcrt {

// Parametric rectangular room with square-section columns; surfaces are
// sampled on a jittered grid. Columns are axis-aligned pillars (half_width
// from center to face) so their vertical edges diffract.
struct RoomSpec {
    Vec3 extents{10.0, 6.0, 3.0};  // meters; room spans [0, extents]
    double spacing = 0.08;
    double jitter = 0.3;  // fraction of spacing
    int wall_material = 0;
    int floor_material = 0;
    int ceiling_material = 2;
    struct Column {
        double cx = 0.0, cy = 0.0;
        double half_width = 0.2;
        int material = 0;
    };
    std::vector<Column> columns;
    struct Opening {  // rectangular cutout in a wall
        int wall = 0;  // 0:+x 1:-x 2:+y 3:-y
        double center_u = 0.0, center_z = 1.0;
        double width = 1.0, height = 2.0;
    };
    std::vector<Opening> openings;
    double frequency_hz = 28e9;

    void validate() const;
    std::string to_json() const;
    static RoomSpec from_json(const std::string& s);
};

RoomSpec load_room_spec(const std::string& path);
void save_room_spec(const RoomSpec& spec, const std::string& path);

struct GeneratedRoom {
    std::shared_ptr<PointCloud> cloud;
    std::vector<EdgeSegment> edges;
    MaterialTable materials;
    RoomSpec spec;
};

// Jittered-grid sampling of walls, floor, ceiling and column sides, with
// analytic inward normals; wall-wall, wall-floor/ceiling and column edges.
GeneratedRoom gen_room(const RoomSpec& spec, std::uint64_t seed);

// Writes the room as a scene bundle (scene file + cloud + materials) with
// placeholder terminals; returns the scene file path.
std::string save_room(const GeneratedRoom& room, const std::string& dir,
                      const std::string& name);

// Uniform random terminals >= margin from every surface, heights in
// [z_lo, z_hi].
std::vector<LinkSpec> sample_links(const RoomSpec& spec, const std::string& scene_path,
                                   const std::string& id_prefix, std::size_t count,
                                   std::uint64_t seed, double margin = 0.5, double z_lo = 1.0,
                                   double z_hi = 2.0);

struct EvalSuite {
    std::string room_a_scene, room_b_scene, room_c_scene;
    std::vector<LinkSpec> links_a, links_b, links_c;
};

// Three-room generalization suite: Room-A (training), Room-B (same shell,
// relocated columns), Room-C (different layout), with link lists of
// 60/20/20. Everything is written under out_dir.
EvalSuite make_eval_suite(std::uint64_t seed, const std::string& out_dir);

// Link list file (JSON) IO.
void save_links(const std::vector<LinkSpec>& links, const std::string& path);
std::vector<LinkSpec> load_links(const std::string& path);

}  // namespace pcrt
