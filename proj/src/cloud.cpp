// SPDX-License-Identifier: Apache-2.0
#include "pcrt/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pcrt/kdtree.hpp"

namespace pcrt {

void PointCloud::validate() const {
    if (point_radius <= 0.0) throw InputError("point_radius must be positive");
    for (const auto& p : positions)
        if (!is_finite(p)) throw InputError("non-finite point position");
    if (has_normals()) {
        if (normals.size() != positions.size())
            throw InputError("normal count does not match point count");
        for (std::size_t i = 0; i < normals.size(); ++i) {
            if (!normal_ok.empty() && normal_ok[i] == 0) continue;
            if (std::fabs(norm(normals[i]) - 1.0) > 1e-9)
                throw InputError("normal is not unit length");
        }
    }
    if (!material_id.empty() && material_id.size() != positions.size())
        throw InputError("material_id count does not match point count");
}

PointCloud load_cloud(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open cloud file: " + path);
    std::string line;
    PointCloud c;
    std::size_t count = 0;
    bool has_normals = false;
    bool header_seen = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto h = line.find('#');
        if (h != std::string::npos) line.erase(h);
        std::istringstream ss(line);
        if (!header_seen) {
            std::string magic;
            if (!(ss >> magic)) continue;  // blank line
            int version;
            int hn;
            if (magic != "pointcloud" || !(ss >> version >> count >> hn >> c.point_radius) ||
                version != 1)
                throw InputError("bad cloud header at line " + std::to_string(lineno));
            has_normals = hn != 0;
            header_seen = true;
            c.positions.reserve(count);
            c.material_id.reserve(count);
            if (has_normals) c.normals.reserve(count);
            continue;
        }
        Vec3 p;
        if (!(ss >> p.x >> p.y >> p.z)) {
            std::string rest;
            if (ss >> rest)
                throw InputError("bad point record at line " + std::to_string(lineno));
            continue;  // blank
        }
        c.positions.push_back(p);
        if (has_normals) {
            Vec3 n;
            if (!(ss >> n.x >> n.y >> n.z))
                throw InputError("missing normal at line " + std::to_string(lineno));
            c.normals.push_back(n);
        }
        int mat;
        if (!(ss >> mat)) throw InputError("missing material id at line " + std::to_string(lineno));
        c.material_id.push_back(mat);
    }
    if (!header_seen) throw InputError("cloud file has no header: " + path);
    if (c.positions.size() != count)
        throw InputError("cloud file point count mismatch: header says " + std::to_string(count) +
                         ", got " + std::to_string(c.positions.size()));
    c.validate();
    return c;
}

void save_cloud(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write cloud file: " + path);
    out.precision(17);
    out << "pointcloud 1 " << cloud.size() << " " << (cloud.has_normals() ? 1 : 0) << " "
        << cloud.point_radius << "\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.positions[i];
        out << p.x << " " << p.y << " " << p.z;
        if (cloud.has_normals()) {
            const Vec3& n = cloud.normals[i];
            out << " " << n.x << " " << n.y << " " << n.z;
        }
        out << " " << (cloud.material_id.empty() ? 0 : cloud.material_id[i]) << "\n";
    }
}

double mean_nn_spacing(const PointCloud& cloud) {
    if (cloud.size() < 2) return cloud.point_radius;
    SpatialIndex index = SpatialIndex::build(cloud);
    std::size_t n = cloud.size();
    std::size_t stride = n > 20000 ? n / 10000 : 1;
    double sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; i += stride) {
        auto nb = index.knn(cloud.positions[i], 2);  // self + nearest
        if (nb.size() == 2) {
            sum += distance(cloud.positions[i], cloud.positions[nb[1]]);
            ++cnt;
        }
    }
    return cnt ? sum / static_cast<double>(cnt) : cloud.point_radius;
}

}  // namespace pcrt
