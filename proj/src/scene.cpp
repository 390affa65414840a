// SPDX-License-Identifier: Apache-2.0
#include "pcrt/scene.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pcrt/em.hpp"

namespace fs = std::filesystem;

namespace pcrt {

double Scene::lambda() const { return kSpeedOfLight / f_hz; }

void Scene::validate() const {
    if (f_hz <= 0.0) throw InputError("scene frequency must be positive");
    if (norm(tx - rx) == 0.0) throw InputError("tx and rx coincide");
    if (cloud) {
        cloud->validate();
        for (int id : cloud->material_id)
            if (!materials.has(id))
                throw InputError("cloud references unknown material id " + std::to_string(id));
    }
    for (const auto& e : edges) {
        if (norm(e.b - e.a) <= 0.0) throw InputError("degenerate edge");
        if (e.interior_angle <= 0.0 || e.interior_angle >= 2.0 * M_PI)
            throw InputError("edge interior angle out of range");
        if (!materials.has(e.material[0]) || !materials.has(e.material[1]))
            throw InputError("edge references unknown material id");
    }
}

Scene make_scene(std::shared_ptr<const PointCloud> cloud, std::vector<EdgeSegment> edges,
                 MaterialTable materials, const Vec3& tx, const Vec3& rx, double f_hz) {
    Scene s;
    s.cloud = std::move(cloud);
    if (s.cloud && !s.cloud->empty()) s.index = SpatialIndex::build(s.cloud);
    s.edges = std::move(edges);
    s.materials = std::move(materials);
    s.tx = tx;
    s.rx = rx;
    s.f_hz = f_hz;
    s.validate();
    return s;
}

Scene load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open scene file: " + path);
    fs::path dir = fs::path(path).parent_path();
    std::string line, cloud_path, mat_path;
    Vec3 tx, rx;
    double f_hz = 0.0;
    std::vector<EdgeSegment> edges;
    bool header_seen = false;
    std::size_t n_edges = 0, lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto h = line.find('#');
        if (h != std::string::npos) line.erase(h);
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key)) continue;
        if (!header_seen) {
            int version;
            if (key != "scene" || !(ss >> version) || version != 1)
                throw InputError("bad scene header at line " + std::to_string(lineno));
            header_seen = true;
        } else if (key == "cloud") {
            ss >> cloud_path;
        } else if (key == "materials") {
            ss >> mat_path;
        } else if (key == "tx") {
            ss >> tx.x >> tx.y >> tx.z;
        } else if (key == "rx") {
            ss >> rx.x >> rx.y >> rx.z;
        } else if (key == "freq") {
            ss >> f_hz;
        } else if (key == "edges") {
            ss >> n_edges;
        } else if (key == "e") {
            EdgeSegment e;
            if (!(ss >> e.a.x >> e.a.y >> e.a.z >> e.b.x >> e.b.y >> e.b.z >>
                  e.face_normal[0].x >> e.face_normal[0].y >> e.face_normal[0].z >>
                  e.face_normal[1].x >> e.face_normal[1].y >> e.face_normal[1].z >>
                  e.interior_angle >> e.material[0] >> e.material[1]))
                throw InputError("bad edge record at line " + std::to_string(lineno));
            edges.push_back(e);
        } else {
            throw InputError("unknown scene key '" + key + "' at line " + std::to_string(lineno));
        }
    }
    if (!header_seen) throw InputError("scene file has no header: " + path);
    if (edges.size() != n_edges) throw InputError("edge count mismatch in " + path);
    if (mat_path.empty()) throw InputError("scene file missing materials entry");
    MaterialTable mats = load_materials((dir / mat_path).string());
    std::shared_ptr<const PointCloud> cloud;
    if (!cloud_path.empty() && cloud_path != "none")
        cloud = std::make_shared<PointCloud>(load_cloud((dir / cloud_path).string()));
    return make_scene(std::move(cloud), std::move(edges), std::move(mats), tx, rx, f_hz);
}

void save_scene(const Scene& scene, const std::string& path, const std::string& cloud_relpath,
                const std::string& materials_relpath) {
    fs::path dir = fs::path(path).parent_path();
    if (!dir.empty()) fs::create_directories(dir);
    if (scene.cloud && !scene.cloud->empty())
        save_cloud(*scene.cloud, (dir / cloud_relpath).string());
    save_materials(scene.materials, (dir / materials_relpath).string());
    std::ofstream out(path);
    if (!out) throw InputError("cannot write scene file: " + path);
    out.precision(17);
    out << "scene 1\n";
    out << "cloud " << (scene.cloud && !scene.cloud->empty() ? cloud_relpath : "none") << "\n";
    out << "materials " << materials_relpath << "\n";
    out << "tx " << scene.tx.x << " " << scene.tx.y << " " << scene.tx.z << "\n";
    out << "rx " << scene.rx.x << " " << scene.rx.y << " " << scene.rx.z << "\n";
    out << "freq " << scene.f_hz << "\n";
    out << "edges " << scene.edges.size() << "\n";
    for (const auto& e : scene.edges) {
        out << "e " << e.a.x << " " << e.a.y << " " << e.a.z << " " << e.b.x << " " << e.b.y
            << " " << e.b.z;
        for (int f = 0; f < 2; ++f)
            out << " " << e.face_normal[f].x << " " << e.face_normal[f].y << " "
                << e.face_normal[f].z;
        out << " " << e.interior_angle << " " << e.material[0] << " " << e.material[1] << "\n";
    }
}

}  // namespace pcrt
