// SPDX-License-Identifier: Apache-2.0
#include "pcrt/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace pcrt {

using nlohmann::json;

void RoomSpec::validate() const {
    if (extents.x <= 0 || extents.y <= 0 || extents.z <= 0)
        throw InputError("room extents must be positive");
    if (spacing <= 0) throw InputError("room spacing must be positive");
    double min_dim = std::min({extents.x, extents.y, extents.z});
    if (spacing > min_dim) throw InputError("spacing larger than the smallest room dimension");
    for (const auto& c : columns) {
        if (c.half_width <= 0) throw InputError("column half_width must be positive");
        if (c.cx - c.half_width < 0 || c.cx + c.half_width > extents.x ||
            c.cy - c.half_width < 0 || c.cy + c.half_width > extents.y)
            throw InputError("column extends outside the room");
    }
}

std::string RoomSpec::to_json() const {
    json j;
    j["extents"] = {extents.x, extents.y, extents.z};
    j["spacing"] = spacing;
    j["jitter"] = jitter;
    j["wall_material"] = wall_material;
    j["floor_material"] = floor_material;
    j["ceiling_material"] = ceiling_material;
    j["frequency_hz"] = frequency_hz;
    json cols = json::array();
    for (const auto& c : columns)
        cols.push_back({{"cx", c.cx}, {"cy", c.cy}, {"half_width", c.half_width},
                        {"material", c.material}});
    j["columns"] = cols;
    json ops = json::array();
    for (const auto& o : openings)
        ops.push_back({{"wall", o.wall}, {"center_u", o.center_u}, {"center_z", o.center_z},
                       {"width", o.width}, {"height", o.height}});
    j["openings"] = ops;
    return j.dump(1);
}

RoomSpec RoomSpec::from_json(const std::string& s) {
    json j;
    try {
        j = json::parse(s);
    } catch (const json::exception& e) {
        throw InputError("bad room spec json: " + std::string(e.what()));
    }
    RoomSpec r;
    auto e = j.at("extents");
    r.extents = {e.at(0), e.at(1), e.at(2)};
    r.spacing = j.at("spacing");
    r.jitter = j.value("jitter", 0.3);
    r.wall_material = j.at("wall_material");
    r.floor_material = j.at("floor_material");
    r.ceiling_material = j.at("ceiling_material");
    r.frequency_hz = j.value("frequency_hz", 28e9);
    for (const auto& c : j.value("columns", json::array()))
        r.columns.push_back(
            {c.at("cx"), c.at("cy"), c.at("half_width"), c.at("material")});
    for (const auto& o : j.value("openings", json::array()))
        r.openings.push_back({o.at("wall"), o.at("center_u"), o.at("center_z"),
                              o.at("width"), o.at("height")});
    r.validate();
    return r;
}

RoomSpec load_room_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open room spec: " + path);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return RoomSpec::from_json(s);
}

void save_room_spec(const RoomSpec& spec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write room spec: " + path);
    out << spec.to_json() << "\n";
}

namespace {

bool inside_column(const RoomSpec& spec, double x, double y, double pad = 0.0) {
    for (const auto& c : spec.columns)
        if (x >= c.cx - c.half_width - pad && x <= c.cx + c.half_width + pad &&
            y >= c.cy - c.half_width - pad && y <= c.cy + c.half_width + pad)
            return true;
    return false;
}

bool inside_opening(const RoomSpec& spec, int wall, double u, double z) {
    for (const auto& o : spec.openings)
        if (o.wall == wall && std::fabs(u - o.center_u) <= o.width / 2 &&
            std::fabs(z - o.center_z) <= o.height / 2)
            return true;
    return false;
}

}  // namespace

GeneratedRoom gen_room(const RoomSpec& spec, std::uint64_t seed) {
    spec.validate();
    GeneratedRoom room;
    room.spec = spec;
    room.materials = default_material_table(spec.frequency_hz);
    for (int id : {spec.wall_material, spec.floor_material, spec.ceiling_material})
        room.materials.get(id);  // throws naming the id when missing
    for (const auto& c : spec.columns) room.materials.get(c.material);
    auto cloud = std::make_shared<PointCloud>();
    cloud->point_radius = 0.75 * spec.spacing;
    Rng rng(sub_seed(seed, "room"));
    double J = spec.jitter * spec.spacing;
    const Vec3& ext = spec.extents;

    auto push_point = [&](const Vec3& p, const Vec3& n, int mat) {
        cloud->positions.push_back(p);
        cloud->normals.push_back(n);
        cloud->material_id.push_back(mat);
    };

    // four walls; u runs along the wall, z vertical
    struct Wall {
        int id;
        Vec3 base, du;  // point at u=0 and the in-plane direction
        Vec3 normal;    // inward
        double len;
    };
    std::vector<Wall> walls = {
        {0, {ext.x, 0, 0}, {0, 1, 0}, {-1, 0, 0}, ext.y},   // +x wall
        {1, {0, 0, 0}, {0, 1, 0}, {1, 0, 0}, ext.y},        // -x wall
        {2, {0, ext.y, 0}, {1, 0, 0}, {0, -1, 0}, ext.x},   // +y wall
        {3, {0, 0, 0}, {1, 0, 0}, {0, 1, 0}, ext.x},        // -y wall
    };
    for (const auto& w : walls) {
        for (double u = spec.spacing / 2; u < w.len; u += spec.spacing)
            for (double z = spec.spacing / 2; z < ext.z; z += spec.spacing) {
                double ju = u + rng.uniform(-J, J), jz = z + rng.uniform(-J, J);
                if (inside_opening(spec, w.id, ju, jz)) continue;
                Vec3 p = w.base + w.du * ju + Vec3{0, 0, 1} * jz;
                push_point(p, w.normal, spec.wall_material);
            }
    }
    // floor and ceiling
    for (double x = spec.spacing / 2; x < ext.x; x += spec.spacing)
        for (double y = spec.spacing / 2; y < ext.y; y += spec.spacing) {
            double jx = x + rng.uniform(-J, J), jy = y + rng.uniform(-J, J);
            if (!inside_column(spec, jx, jy)) {
                push_point({jx, jy, 0.0}, {0, 0, 1}, spec.floor_material);
                push_point({jx + rng.uniform(-J, J), jy + rng.uniform(-J, J), ext.z},
                           {0, 0, -1}, spec.ceiling_material);
            }
        }
    // column sides
    for (const auto& c : spec.columns) {
        struct Face {
            Vec3 base, du, normal;
            double len;
        };
        double h = c.half_width;
        std::vector<Face> faces = {
            {{c.cx + h, c.cy - h, 0}, {0, 1, 0}, {1, 0, 0}, 2 * h},
            {{c.cx - h, c.cy - h, 0}, {0, 1, 0}, {-1, 0, 0}, 2 * h},
            {{c.cx - h, c.cy + h, 0}, {1, 0, 0}, {0, 1, 0}, 2 * h},
            {{c.cx - h, c.cy - h, 0}, {1, 0, 0}, {0, -1, 0}, 2 * h},
        };
        for (const auto& f : faces)
            for (double u = spec.spacing / 2; u < f.len; u += spec.spacing)
                for (double z = spec.spacing / 2; z < ext.z; z += spec.spacing) {
                    Vec3 p = f.base + f.du * (u + rng.uniform(-J, J)) +
                             Vec3{0, 0, 1} * (z + rng.uniform(-J, J));
                    push_point(p, f.normal, c.material);
                }
    }
    cloud->normal_ok.assign(cloud->size(), 1);
    room.cloud = cloud;

    // edges: room corners are concave (material behind fills 3*pi/2);
    // column edges are convex (material pi/2)
    auto add_edge = [&](const Vec3& a, const Vec3& b, const Vec3& n0, const Vec3& n1,
                        double interior, int m0, int m1) {
        EdgeSegment e;
        e.a = a;
        e.b = b;
        e.face_normal[0] = n0;
        e.face_normal[1] = n1;
        e.interior_angle = interior;
        e.material[0] = m0;
        e.material[1] = m1;
        room.edges.push_back(e);
    };
    double reflex = 1.5 * M_PI;
    int wm = spec.wall_material, fm = spec.floor_material, cm = spec.ceiling_material;
    // vertical wall-wall corners
    add_edge({0, 0, 0}, {0, 0, ext.z}, {1, 0, 0}, {0, 1, 0}, reflex, wm, wm);
    add_edge({ext.x, 0, 0}, {ext.x, 0, ext.z}, {-1, 0, 0}, {0, 1, 0}, reflex, wm, wm);
    add_edge({0, ext.y, 0}, {0, ext.y, ext.z}, {1, 0, 0}, {0, -1, 0}, reflex, wm, wm);
    add_edge({ext.x, ext.y, 0}, {ext.x, ext.y, ext.z}, {-1, 0, 0}, {0, -1, 0}, reflex, wm,
             wm);
    // floor-wall and ceiling-wall edges
    add_edge({0, 0, 0}, {ext.x, 0, 0}, {0, 1, 0}, {0, 0, 1}, reflex, wm, fm);
    add_edge({0, ext.y, 0}, {ext.x, ext.y, 0}, {0, -1, 0}, {0, 0, 1}, reflex, wm, fm);
    add_edge({0, 0, 0}, {0, ext.y, 0}, {1, 0, 0}, {0, 0, 1}, reflex, wm, fm);
    add_edge({ext.x, 0, 0}, {ext.x, ext.y, 0}, {-1, 0, 0}, {0, 0, 1}, reflex, wm, fm);
    add_edge({0, 0, ext.z}, {ext.x, 0, ext.z}, {0, 1, 0}, {0, 0, -1}, reflex, wm, cm);
    add_edge({0, ext.y, ext.z}, {ext.x, ext.y, ext.z}, {0, -1, 0}, {0, 0, -1}, reflex, wm,
             cm);
    add_edge({0, 0, ext.z}, {0, ext.y, ext.z}, {1, 0, 0}, {0, 0, -1}, reflex, wm, cm);
    add_edge({ext.x, 0, ext.z}, {ext.x, ext.y, ext.z}, {-1, 0, 0}, {0, 0, -1}, reflex, wm,
             cm);
    // column vertical edges (convex)
    for (const auto& c : spec.columns) {
        double h = c.half_width;
        add_edge({c.cx + h, c.cy + h, 0}, {c.cx + h, c.cy + h, ext.z}, {1, 0, 0}, {0, 1, 0},
                 M_PI / 2, c.material, c.material);
        add_edge({c.cx + h, c.cy - h, 0}, {c.cx + h, c.cy - h, ext.z}, {1, 0, 0}, {0, -1, 0},
                 M_PI / 2, c.material, c.material);
        add_edge({c.cx - h, c.cy + h, 0}, {c.cx - h, c.cy + h, ext.z}, {-1, 0, 0}, {0, 1, 0},
                 M_PI / 2, c.material, c.material);
        add_edge({c.cx - h, c.cy - h, 0}, {c.cx - h, c.cy - h, ext.z}, {-1, 0, 0}, {0, -1, 0},
                 M_PI / 2, c.material, c.material);
    }
    return room;
}

std::string save_room(const GeneratedRoom& room, const std::string& dir,
                      const std::string& name) {
    fs::create_directories(dir);
    Scene scene;
    scene.cloud = room.cloud;
    scene.edges = room.edges;
    scene.materials = room.materials;
    scene.tx = {0.5, 0.5, 1.5};
    scene.rx = {room.spec.extents.x - 0.5, room.spec.extents.y - 0.5, 1.5};
    scene.f_hz = room.spec.frequency_hz;
    std::string scene_path = (fs::path(dir) / (name + ".scene")).string();
    save_scene(scene, scene_path, name + ".pts", name + ".mat");
    save_room_spec(room.spec, (fs::path(dir) / (name + ".room.json")).string());
    return scene_path;
}

std::vector<LinkSpec> sample_links(const RoomSpec& spec, const std::string& scene_path,
                                   const std::string& id_prefix, std::size_t count,
                                   std::uint64_t seed, double margin, double z_lo,
                                   double z_hi) {
    Rng rng(sub_seed(seed, "links"));
    std::vector<LinkSpec> out;
    auto draw = [&]() {
        for (;;) {
            Vec3 p{rng.uniform(margin, spec.extents.x - margin),
                   rng.uniform(margin, spec.extents.y - margin),
                   rng.uniform(std::max(z_lo, margin),
                               std::min(z_hi, spec.extents.z - margin))};
            if (!inside_column(spec, p.x, p.y, margin)) return p;
        }
    };
    for (std::size_t i = 0; i < count; ++i) {
        LinkSpec l;
        l.id = id_prefix + std::to_string(i);
        l.scene_path = scene_path;
        l.tx = draw();
        do {
            l.rx = draw();
        } while (distance(l.tx, l.rx) < 1.0);
        out.push_back(l);
    }
    return out;
}

EvalSuite make_eval_suite(std::uint64_t seed, const std::string& out_dir) {
    EvalSuite suite;
    RoomSpec a;
    a.extents = {10.0, 6.0, 3.0};
    a.spacing = 0.08;
    a.wall_material = 0;   // concrete
    a.floor_material = 5;  // brick
    a.ceiling_material = 2;
    a.columns = {{2.5, 1.8, 0.25, 4}, {7.0, 4.0, 0.3, 1}};
    RoomSpec b = a;  // same shell, relocated columns
    b.columns = {{4.5, 4.4, 0.25, 4}, {8.2, 1.5, 0.3, 1}};
    RoomSpec c;
    c.extents = {7.0, 5.0, 2.8};
    c.spacing = 0.08;
    c.wall_material = 2;  // plasterboard walls: a different layout and mix
    c.floor_material = 0;
    c.ceiling_material = 2;
    c.columns = {{3.5, 2.5, 0.3, 4}};

    // rooms A and B share the sampling seed: walls and ceiling are sampled
    // before the columns, so the unchanged shell points coincide exactly
    suite.room_a_scene = save_room(gen_room(a, sub_seed(seed, "roomShell")), out_dir, "room_a");
    suite.room_b_scene = save_room(gen_room(b, sub_seed(seed, "roomShell")), out_dir, "room_b");
    suite.room_c_scene = save_room(gen_room(c, sub_seed(seed, "roomC")), out_dir, "room_c");
    suite.links_a = sample_links(a, suite.room_a_scene, "a", 60, sub_seed(seed, "linksA"));
    suite.links_b = sample_links(b, suite.room_b_scene, "b", 20, sub_seed(seed, "linksB"));
    suite.links_c = sample_links(c, suite.room_c_scene, "c", 20, sub_seed(seed, "linksC"));
    save_links(suite.links_a, (fs::path(out_dir) / "links_a.json").string());
    save_links(suite.links_b, (fs::path(out_dir) / "links_b.json").string());
    save_links(suite.links_c, (fs::path(out_dir) / "links_c.json").string());
    return suite;
}

void save_links(const std::vector<LinkSpec>& links, const std::string& path) {
    json arr = json::array();
    for (const auto& l : links) {
        json j;
        j["id"] = l.id;
        j["scene"] = l.scene_path;
        j["tx"] = {l.tx.x, l.tx.y, l.tx.z};
        j["rx"] = {l.rx.x, l.rx.y, l.rx.z};
        arr.push_back(j);
    }
    std::ofstream out(path);
    if (!out) throw InputError("cannot write links file: " + path);
    out << arr.dump(1) << "\n";
}

std::vector<LinkSpec> load_links(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open links file: " + path);
    json arr;
    try {
        in >> arr;
    } catch (const json::exception& e) {
        throw InputError("bad links file: " + std::string(e.what()));
    }
    std::vector<LinkSpec> out;
    for (const auto& j : arr) {
        LinkSpec l;
        l.id = j.at("id");
        l.scene_path = j.at("scene");
        l.tx = {j.at("tx").at(0), j.at("tx").at(1), j.at("tx").at(2)};
        l.rx = {j.at("rx").at(0), j.at("rx").at(1), j.at("rx").at(2)};
        out.push_back(l);
    }
    return out;
}

}  // namespace pcrt
