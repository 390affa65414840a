// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "pcrt/cloud.hpp"

namespace pcrt {

// Electromagnetic surface parameters. R^2 (specular fraction) is stored as
// 1 - S^2 so the energy split is exact by construction.
struct Material {
    std::string name;
    double sigma = 0.0;   // conductivity, S/m
    double eps_r = 1.0;   // relative permittivity
    double S = 0.0;       // scattering coefficient, [0, 1]
    double K_x = 0.0;     // cross-polarization discrimination, [0, 1]

    double S_sq() const { return S * S; }
    double R_sq() const { return 1.0 - S * S; }
    double R() const { return std::sqrt(R_sq()); }

    void validate() const {
        if (sigma < 0.0) throw InputError("material sigma must be >= 0");
        if (eps_r < 1.0) throw InputError("material eps_r must be >= 1");
        if (S < 0.0 || S > 1.0) throw InputError("material S must be in [0, 1]");
        if (K_x < 0.0 || K_x > 1.0) throw InputError("material K_x must be in [0, 1]");
    }
};

class MaterialTable {
  public:
    void add(int id, Material m) {
        m.validate();
        table_[id] = std::move(m);
    }
    const Material& get(int id) const {
        auto it = table_.find(id);
        if (it == table_.end())
            throw InputError("unknown material id " + std::to_string(id));
        return it->second;
    }
    bool has(int id) const { return table_.count(id) != 0; }
    std::size_t size() const { return table_.size(); }
    const std::map<int, Material>& entries() const { return table_; }

  private:
    std::map<int, Material> table_;
};

// Text format: header "materials 1 <count>", then "<id> <name> <sigma>
// <eps_r> <S> <K_x>" per line, '#' comments.
MaterialTable load_materials(const std::string& path);
void save_materials(const MaterialTable& table, const std::string& path);

// Table of ITU-flavoured presets evaluated at the given carrier frequency
// (conductivity follows the sigma = c * f_GHz^d power laws). Used by the
// scene generator; consumers always read materials from files.
MaterialTable default_material_table(double f_hz);

}  // namespace pcrt
