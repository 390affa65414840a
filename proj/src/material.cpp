// SPDX-License-Identifier: Apache-2.0
#include "pcrt/material.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace pcrt {

MaterialTable load_materials(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open material file: " + path);
    std::string line;
    MaterialTable t;
    bool header_seen = false;
    std::size_t count = 0, lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto h = line.find('#');
        if (h != std::string::npos) line.erase(h);
        std::istringstream ss(line);
        if (!header_seen) {
            std::string magic;
            if (!(ss >> magic)) continue;
            int version;
            if (magic != "materials" || !(ss >> version >> count) || version != 1)
                throw InputError("bad material header at line " + std::to_string(lineno));
            header_seen = true;
            continue;
        }
        int id;
        Material m;
        if (!(ss >> id)) continue;
        if (!(ss >> m.name >> m.sigma >> m.eps_r >> m.S >> m.K_x))
            throw InputError("bad material record at line " + std::to_string(lineno));
        t.add(id, m);
    }
    if (!header_seen) throw InputError("material file has no header: " + path);
    if (t.size() != count)
        throw InputError("material count mismatch in " + path);
    return t;
}

void save_materials(const MaterialTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write material file: " + path);
    out.precision(17);
    out << "materials 1 " << table.size() << "\n";
    out << "# id name sigma eps_r S K_x\n";
    for (const auto& [id, m] : table.entries())
        out << id << " " << m.name << " " << m.sigma << " " << m.eps_r << " " << m.S << " "
            << m.K_x << "\n";
}

MaterialTable default_material_table(double f_hz) {
    double f_ghz = f_hz / 1e9;
    auto sig = [&](double c, double d) { return c * std::pow(f_ghz, d); };
    MaterialTable t;
    t.add(0, {"itu_concrete", sig(0.0462, 0.7822), 5.24, 0.30, 0.10});
    t.add(1, {"itu_glass", sig(0.0036, 1.3394), 6.31, 0.05, 0.05});
    t.add(2, {"itu_plasterboard", sig(0.0085, 0.9395), 2.73, 0.25, 0.10});
    t.add(3, {"itu_wood", sig(0.0047, 1.0718), 1.99, 0.35, 0.15});
    t.add(4, {"itu_metal", 1.0e7, 1.0, 0.10, 0.05});
    t.add(5, {"itu_brick", 0.038, 3.91, 0.40, 0.15});
    return t;
}

}  // namespace pcrt
